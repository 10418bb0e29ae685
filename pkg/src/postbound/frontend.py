"""Parser, AST, pretty printer and lowering of the loop language to a WPTS.

Grammar (statements may be separated by ``;``)::

    S ::= skip | x := E | x := sample D | score(E) | score(pdf(D, x)) | observe(B)
        | if prob(E) then S [else S] fi | if B then S [else S] fi
        | while B do S od | return x
    D ::= uniform(c, c) | beta(c, c) | normal(c, c)
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable

from .distributions import Distribution, Normal, make_distribution
from .polynomial import Polynomial
from .regions import Atom
from .wpts import Fork, Guard, InitialDistribution, PdfFactor, Transition, Weight, Wpts


class FrontendError(Exception):
    def __init__(self, message: str, line: int = 0, col: int = 0, expected: Iterable[str] = ()):
        self.message = message
        self.line = line
        self.col = col
        self.expected = list(expected)
        super().__init__(str(self))

    def __str__(self):
        s = f"{self.line}:{self.col}: {self.message}"
        if self.expected:
            s += f" (expected {', '.join(self.expected)})"
        return s


class ParseError(FrontendError):
    pass


# ---------------------------------------------------------------------------
# AST

Pos = tuple[int, int]


def _pos():
    return field(default=(0, 0), compare=False, repr=False)


@dataclass
class Num:
    value: float
    pos: Pos = _pos()


@dataclass
class Var:
    name: str
    pos: Pos = _pos()


@dataclass
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"
    pos: Pos = _pos()


@dataclass
class Neg:
    arg: "Expr"
    pos: Pos = _pos()


@dataclass
class Pow:
    base: "Expr"
    exp: int
    pos: Pos = _pos()


Expr = Num | Var | BinOp | Neg | Pow


@dataclass
class BConst:
    value: bool
    pos: Pos = _pos()


@dataclass
class Cmp:
    op: str
    left: Expr
    right: Expr
    pos: Pos = _pos()


@dataclass
class Not:
    arg: "BExpr"
    pos: Pos = _pos()


@dataclass
class And:
    left: "BExpr"
    right: "BExpr"
    pos: Pos = _pos()


@dataclass
class Or:
    left: "BExpr"
    right: "BExpr"
    pos: Pos = _pos()


BExpr = BConst | Cmp | Not | And | Or


@dataclass
class DistExpr:
    name: str
    args: list[Expr]
    pos: Pos = _pos()


@dataclass
class Skip:
    pos: Pos = _pos()


@dataclass
class Assign:
    var: str
    expr: Expr
    pos: Pos = _pos()


@dataclass
class Sample:
    var: str
    dist: DistExpr
    pos: Pos = _pos()


@dataclass
class Score:
    expr: Expr
    pos: Pos = _pos()


@dataclass
class ScorePdf:
    dist: DistExpr
    var: str
    pos: Pos = _pos()


@dataclass
class Observe:
    cond: BExpr
    pos: Pos = _pos()


@dataclass
class Return:
    var: str
    pos: Pos = _pos()


@dataclass
class Seq:
    stmts: list["Stmt"]
    pos: Pos = _pos()


@dataclass
class While:
    cond: BExpr
    body: Seq
    pos: Pos = _pos()


@dataclass
class If:
    cond: BExpr
    then: Seq
    orelse: Seq
    pos: Pos = _pos()


@dataclass
class IfProb:
    prob: Expr
    then: Seq
    orelse: Seq
    pos: Pos = _pos()


Stmt = Skip | Assign | Sample | Score | ScorePdf | Observe | Return | Seq | While | If | IfProb

# ---------------------------------------------------------------------------
# lexer

KEYWORDS = {
    "skip", "sample", "score", "pdf", "observe", "if", "then", "else", "fi", "while", "do", "od",
    "return", "prob", "true", "false", "and", "or", "not",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>(\#|//)[^\n]*)
  | (?P<num>\d+\.\d*([eE][+-]?\d+)?|\.\d+([eE][+-]?\d+)?|\d+([eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>:=|<=|>=|==|!=|&&|\|\||[-+*/^()<>,;!]|·)
    """,
    re.VERBOSE,
)


@dataclass
class Token:
    kind: str  # num, ident, kw, op, eof
    text: str
    line: int
    col: int


def tokenize(src: str) -> list[Token]:
    toks: list[Token] = []
    i, line, col = 0, 1, 1
    while i < len(src):
        m = _TOKEN_RE.match(src, i)
        if not m:
            raise ParseError(f"unexpected character {src[i]!r}", line, col)
        text = m.group(0)
        kind = m.lastgroup
        if kind == "ident" and text in KEYWORDS:
            kind = "kw"
        if kind == "op":
            text = {"·": "*", "&&": "and", "||": "or", "!": "not"}.get(text, text)
            if text in ("and", "or", "not"):
                kind = "kw"
        if kind not in ("ws", "comment"):
            toks.append(Token(kind, text, line, col))
        nl = text.count("\n")
        if nl:
            line += nl
            col = len(text) - text.rfind("\n")
        else:
            col += len(text)
        i = m.end()
    toks.append(Token("eof", "", line, col))
    return toks


# ---------------------------------------------------------------------------
# parser

class Parser:
    def __init__(self, src: str):
        self.toks = tokenize(src)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def at(self, text: str) -> bool:
        t = self.tok
        return t.kind in ("kw", "op") and t.text == text

    def advance(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def expect(self, text: str) -> Token:
        if not self.at(text):
            t = self.tok
            found = t.text or "end of input"
            raise ParseError(f"unexpected '{found}'", t.line, t.col, [f"'{text}'"])
        return self.advance()

    def ident(self) -> Token:
        t = self.tok
        if t.kind != "ident":
            raise ParseError(f"unexpected '{t.text or 'end of input'}'", t.line, t.col, ["identifier"])
        return self.advance()

    def program(self) -> Seq:
        s = self.stmts()
        if self.tok.kind != "eof":
            t = self.tok
            raise ParseError(f"unexpected '{t.text}'", t.line, t.col, ["';'", "end of input"])
        return s

    def stmts(self) -> Seq:
        start = (self.tok.line, self.tok.col)
        out = [self.stmt()]
        while True:
            while self.at(";"):
                self.advance()
            t = self.tok
            if t.kind == "eof" or (t.kind == "kw" and t.text in ("od", "fi", "else")):
                break
            out.append(self.stmt())
        return Seq(out, start)

    def stmt(self) -> Stmt:
        t = self.tok
        pos = (t.line, t.col)
        if t.kind == "kw":
            if t.text == "skip":
                self.advance()
                return Skip(pos)
            if t.text == "score":
                self.advance()
                self.expect("(")
                if self.at("pdf"):
                    self.advance()
                    self.expect("(")
                    d = self.dist()
                    self.expect(",")
                    v = self.ident().text
                    self.expect(")")
                    self.expect(")")
                    return ScorePdf(d, v, pos)
                e = self.expr()
                self.expect(")")
                return Score(e, pos)
            if t.text == "observe":
                self.advance()
                self.expect("(")
                b = self.bexpr()
                self.expect(")")
                return Observe(b, pos)
            if t.text == "return":
                self.advance()
                return Return(self.ident().text, pos)
            if t.text == "while":
                self.advance()
                c = self.bexpr()
                self.expect("do")
                body = self.stmts()
                self.expect("od")
                return While(c, body, pos)
            if t.text == "if":
                self.advance()
                if self.at("prob"):
                    self.advance()
                    self.expect("(")
                    p = self.expr()
                    self.expect(")")
                    cond = None
                else:
                    cond = self.bexpr()
                self.expect("then")
                th = self.stmts()
                if self.at("else"):
                    self.advance()
                    el = self.stmts()
                else:
                    el = Seq([Skip(pos)], pos)
                self.expect("fi")
                return IfProb(p, th, el, pos) if cond is None else If(cond, th, el, pos)
            raise ParseError(f"unexpected '{t.text}'", t.line, t.col, ["statement"])
        if t.kind == "ident":
            name = self.advance().text
            self.expect(":=")
            if self.at("sample"):
                self.advance()
                return Sample(name, self.dist(), pos)
            return Assign(name, self.expr(), pos)
        raise ParseError(f"unexpected '{t.text or 'end of input'}'", t.line, t.col, ["statement"])

    def dist(self) -> DistExpr:
        t = self.ident()
        self.expect("(")
        args = [self.expr()]
        while self.at(","):
            self.advance()
            args.append(self.expr())
        self.expect(")")
        return DistExpr(t.text, args, (t.line, t.col))

    # boolean expressions
    def bexpr(self) -> BExpr:
        left = self.bterm()
        while self.at("or"):
            t = self.advance()
            left = Or(left, self.bterm(), (t.line, t.col))
        return left

    def bterm(self) -> BExpr:
        left = self.bfactor()
        while self.at("and"):
            t = self.advance()
            left = And(left, self.bfactor(), (t.line, t.col))
        return left

    def bfactor(self) -> BExpr:
        t = self.tok
        pos = (t.line, t.col)
        if self.at("not"):
            self.advance()
            return Not(self.bfactor(), pos)
        if self.at("true") or self.at("false"):
            self.advance()
            return BConst(t.text == "true", pos)
        if self.at("("):
            save = self.i
            try:
                return self.comparison()
            except ParseError:
                self.i = save
            self.advance()
            b = self.bexpr()
            self.expect(")")
            return b
        return self.comparison()

    def comparison(self) -> Cmp:
        t = self.tok
        left = self.expr()
        for op in ("<=", ">=", "<", ">", "==", "!="):
            if self.at(op):
                self.advance()
                return Cmp(op, left, self.expr(), (t.line, t.col))
        t2 = self.tok
        raise ParseError(f"unexpected '{t2.text or 'end of input'}'", t2.line, t2.col, ["comparison operator"])

    # arithmetic
    def expr(self) -> Expr:
        left = self.term()
        while self.at("+") or self.at("-"):
            t = self.advance()
            left = BinOp(t.text, left, self.term(), (t.line, t.col))
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.at("*") or self.at("/"):
            t = self.advance()
            left = BinOp(t.text, left, self.unary(), (t.line, t.col))
        return left

    def unary(self) -> Expr:
        if self.at("-"):
            t = self.advance()
            return Neg(self.unary(), (t.line, t.col))
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.at("^"):
            t = self.advance()
            e = self.tok
            if e.kind != "num" or not re.fullmatch(r"\d+", e.text):
                raise ParseError("exponent must be a nonnegative integer literal", e.line, e.col)
            self.advance()
            return Pow(base, int(e.text), (t.line, t.col))
        return base

    def atom(self) -> Expr:
        t = self.tok
        if t.kind == "num":
            self.advance()
            return Num(float(t.text), (t.line, t.col))
        if t.kind == "ident":
            self.advance()
            return Var(t.text, (t.line, t.col))
        if self.at("("):
            self.advance()
            e = self.expr()
            self.expect(")")
            return e
        raise ParseError(f"unexpected '{t.text or 'end of input'}'", t.line, t.col, ["expression"])


def parse(src: str) -> Seq:
    return Parser(src).program()


# ---------------------------------------------------------------------------
# pretty printer

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def pretty_expr(e: Expr, prec: int = 0) -> str:
    if isinstance(e, Num):
        v = e.value
        return repr(v) if v != int(v) else str(int(v))
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        s = "-" + pretty_expr(e.arg, 3)
        return f"({s})" if prec > 0 else s
    if isinstance(e, Pow):
        return f"{pretty_expr(e.base, 4)}^{e.exp}"
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        s = f"{pretty_expr(e.left, p)} {e.op} {pretty_expr(e.right, p + 1)}"
        return f"({s})" if p < prec else s
    raise TypeError(e)


def pretty_bexpr(b: BExpr, prec: int = 0) -> str:
    if isinstance(b, BConst):
        return "true" if b.value else "false"
    if isinstance(b, Cmp):
        return f"{pretty_expr(b.left)} {b.op} {pretty_expr(b.right)}"
    if isinstance(b, Not):
        return f"not {pretty_bexpr(b.arg, 3)}"
    if isinstance(b, And):
        s = f"{pretty_bexpr(b.left, 2)} and {pretty_bexpr(b.right, 3)}"
        return f"({s})" if prec > 2 else s
    if isinstance(b, Or):
        s = f"{pretty_bexpr(b.left, 1)} or {pretty_bexpr(b.right, 2)}"
        return f"({s})" if prec > 1 else s
    raise TypeError(b)


def _pretty_dist(d: DistExpr) -> str:
    return f"{d.name}({', '.join(pretty_expr(a) for a in d.args)})"


def pretty(s: Stmt, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(s, Seq):
        return ";\n".join(pretty(x, indent) for x in s.stmts)
    if isinstance(s, Skip):
        return pad + "skip"
    if isinstance(s, Assign):
        return f"{pad}{s.var} := {pretty_expr(s.expr)}"
    if isinstance(s, Sample):
        return f"{pad}{s.var} := sample {_pretty_dist(s.dist)}"
    if isinstance(s, Score):
        return f"{pad}score({pretty_expr(s.expr)})"
    if isinstance(s, ScorePdf):
        return f"{pad}score(pdf({_pretty_dist(s.dist)}, {s.var}))"
    if isinstance(s, Observe):
        return f"{pad}observe({pretty_bexpr(s.cond)})"
    if isinstance(s, Return):
        return f"{pad}return {s.var}"
    if isinstance(s, While):
        return f"{pad}while {pretty_bexpr(s.cond)} do\n{pretty(s.body, indent + 1)}\n{pad}od"
    if isinstance(s, (If, IfProb)):
        head = f"prob({pretty_expr(s.prob)})" if isinstance(s, IfProb) else pretty_bexpr(s.cond)
        return (f"{pad}if {head} then\n{pretty(s.then, indent + 1)}\n{pad}else\n"
                f"{pretty(s.orelse, indent + 1)}\n{pad}fi")
    raise TypeError(s)


# ---------------------------------------------------------------------------
# static checks

def _expr_vars(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Num):
        return set()
    if isinstance(e, (Neg,)):
        return _expr_vars(e.arg)
    if isinstance(e, Pow):
        return _expr_vars(e.base)
    return _expr_vars(e.left) | _expr_vars(e.right)


def _bexpr_vars(b: BExpr) -> set[str]:
    if isinstance(b, BConst):
        return set()
    if isinstance(b, Cmp):
        return _expr_vars(b.left) | _expr_vars(b.right)
    if isinstance(b, Not):
        return _bexpr_vars(b.arg)
    return _bexpr_vars(b.left) | _bexpr_vars(b.right)


def _first_var_pos(e, name: str, default: Pos) -> Pos:
    if isinstance(e, Var) and e.name == name:
        return e.pos
    for attr in ("left", "right", "arg", "base"):
        sub = getattr(e, attr, None)
        if sub is not None:
            p = _first_var_pos(sub, name, None)
            if p is not None:
                return p
    return default


def _check_defs(s: Stmt, defined: set[str]) -> set[str]:
    def need(vars_: set[str], node, at: Pos):
        for v in sorted(vars_ - defined):
            p = _first_var_pos(node, v, at) if node is not None else at
            raise FrontendError(f"variable '{v}' used before assignment", *p)

    if isinstance(s, Seq):
        d = defined
        for x in s.stmts:
            d = _check_defs(x, d)
        return d
    if isinstance(s, Skip):
        return defined
    if isinstance(s, Assign):
        need(_expr_vars(s.expr), s.expr, s.pos)
        return defined | {s.var}
    if isinstance(s, Sample):
        for a in s.dist.args:
            need(_expr_vars(a), a, s.pos)
        return defined | {s.var}
    if isinstance(s, Score):
        need(_expr_vars(s.expr), s.expr, s.pos)
        return defined
    if isinstance(s, ScorePdf):
        need({s.var}, None, s.pos)
        return defined
    if isinstance(s, Observe):
        need(_bexpr_vars(s.cond), s.cond, s.pos)
        return defined
    if isinstance(s, Return):
        need({s.var}, None, s.pos)
        return defined
    if isinstance(s, While):
        need(_bexpr_vars(s.cond), s.cond, s.pos)
        _check_defs(s.body, defined)
        return defined
    if isinstance(s, If):
        need(_bexpr_vars(s.cond), s.cond, s.pos)
        return _check_defs(s.then, defined) & _check_defs(s.orelse, defined)
    if isinstance(s, IfProb):
        need(_expr_vars(s.prob), s.prob, s.pos)
        return _check_defs(s.then, defined) & _check_defs(s.orelse, defined)
    raise TypeError(s)


def _loop_depth(s: Stmt) -> int:
    if isinstance(s, Seq):
        return max((_loop_depth(x) for x in s.stmts), default=0)
    if isinstance(s, While):
        return 1 + _loop_depth(s.body)
    if isinstance(s, (If, IfProb)):
        return max(_loop_depth(s.then), _loop_depth(s.orelse))
    return 0


def _returns(s: Stmt) -> list[Return]:
    if isinstance(s, Return):
        return [s]
    if isinstance(s, Seq):
        return [r for x in s.stmts for r in _returns(x)]
    if isinstance(s, While):
        return _returns(s.body)
    if isinstance(s, (If, IfProb)):
        return _returns(s.then) + _returns(s.orelse)
    return []


def _assigned(s: Stmt) -> list[str]:
    if isinstance(s, (Assign, Sample)):
        return [s.var]
    if isinstance(s, Seq):
        return [v for x in s.stmts for v in _assigned(x)]
    if isinstance(s, While):
        return _assigned(s.body)
    if isinstance(s, (If, IfProb)):
        return _assigned(s.then) + _assigned(s.orelse)
    return []


# ---------------------------------------------------------------------------
# lowering

def _const_value(e: Expr) -> float:
    p = _to_poly(e, {})
    if not p.is_constant():
        raise FrontendError("distribution parameters must be constants", *e.pos)
    return p.constant_term()


def _to_poly(e: Expr, state: dict[str, Polynomial]) -> Polynomial:
    if isinstance(e, Num):
        return Polynomial.const(e.value)
    if isinstance(e, Var):
        return state.get(e.name, Polynomial.var(e.name))
    if isinstance(e, Neg):
        return -_to_poly(e.arg, state)
    if isinstance(e, Pow):
        return _to_poly(e.base, state) ** e.exp
    l, r = _to_poly(e.left, state), _to_poly(e.right, state)
    if e.op == "+":
        return l + r
    if e.op == "-":
        return l - r
    if e.op == "*":
        return l * r
    if e.op == "/":
        if not r.is_constant() or r.constant_term() == 0:
            raise FrontendError("division only by nonzero constants", *e.pos)
        return l / r.constant_term()
    raise TypeError(e)


def _to_guard(b: BExpr, state: dict[str, Polynomial]) -> Guard:
    if isinstance(b, BConst):
        return Guard.true() if b.value else Guard.false()
    if isinstance(b, Cmp):
        d = _to_poly(b.left, state) - _to_poly(b.right, state)
        if b.op == ">=":
            return Guard.atom(Atom(d))
        if b.op == ">":
            return Guard.atom(Atom(d, True))
        if b.op == "<=":
            return Guard.atom(Atom(-d))
        if b.op == "<":
            return Guard.atom(Atom(-d, True))
        eq = Guard.of([[Atom(d), Atom(-d)]])
        return eq if b.op == "==" else eq.negate()
    if isinstance(b, Not):
        return _to_guard(b.arg, state).negate()
    l = _to_guard(b.left, state)
    r = _to_guard(b.right, state)
    if isinstance(b, And):
        return l.and_(r)
    return Guard(l.conjs + l.negate().and_(r).conjs)


def _make_dist(d: DistExpr) -> Distribution:
    args = [_const_value(a) for a in d.args]
    try:
        return make_distribution(d.name, args)
    except (ValueError, TypeError) as exc:
        raise FrontendError(str(exc), *d.pos) from None


@dataclass
class _Path:
    cond: Guard
    prob: Polynomial
    state: dict[str, Polynomial]
    weight: Weight
    key: tuple = ()
    dest: str | None = None


@dataclass
class LoweringMap:
    """Correspondence between program points and WPTS locations."""

    locations: dict[str, str]
    sample_sites: dict[str, tuple[str, Pos]]

    def to_json(self):
        return {"locations": self.locations, "sample_sites": {k: [v, list(p)] for k, (v, p) in self.sample_sites.items()}}


class _Lowerer:
    def __init__(self, program_vars: list[str]):
        self.pv = program_vars
        self.sampling: dict[str, Distribution] = {}
        self.sites: dict[str, tuple[str, Pos]] = {}
        self.counter = 0
        self.pending_cuts: list[tuple[str, list[Stmt], str]] = []
        self.cut_names: dict[int, str] = {}

    def fresh(self, var: str, dist: Distribution, pos: Pos) -> str:
        self.counter += 1
        name = f"{var}~{self.counter}"
        self.sampling[name] = dist
        self.sites[name] = (var, pos)
        return name

    def exec_list(self, stmts: list[Stmt], path: _Path, cont: str, top: bool, owner: str) -> list[_Path]:
        paths = [path]
        for i, s in enumerate(stmts):
            nxt = []
            for p in paths:
                if p.dest is not None:
                    nxt.append(p)
                    continue
                if isinstance(s, If):
                    g = _to_guard(s.cond, p.state)
                    if g.variables() & set(self.sampling):
                        if not top:
                            raise FrontendError(
                                "conditional on a freshly sampled value is only supported at the top level of a loop body",
                                *s.pos)
                        key = id(s)
                        if key not in self.cut_names:
                            name = f"{owner}.{s.pos[0]}"
                            self.cut_names[key] = name
                            self.pending_cuts.append((name, stmts[i:], cont))
                        p = _Path(p.cond, p.prob, p.state, p.weight, p.key, self.cut_names[key])
                        nxt.append(p)
                        continue
                nxt.extend(self.exec_stmt(s, p, cont, top, owner))
            paths = nxt
        return paths

    def exec_stmt(self, s: Stmt, p: _Path, cont: str, top: bool, owner: str) -> list[_Path]:
        if isinstance(s, Seq):
            return self.exec_list(s.stmts, p, cont, top, owner)
        if isinstance(s, Skip):
            return [p]
        if isinstance(s, Assign):
            st = dict(p.state)
            st[s.var] = _to_poly(s.expr, p.state)
            return [_Path(p.cond, p.prob, st, p.weight, p.key)]
        if isinstance(s, Sample):
            st = dict(p.state)
            st[s.var] = Polynomial.var(self.fresh(s.var, _make_dist(s.dist), s.pos))
            return [_Path(p.cond, p.prob, st, p.weight, p.key)]
        if isinstance(s, Score):
            w = Weight(_to_poly(s.expr, p.state))
            if w.kind == "const" and w.factor.constant_term() < 0:
                raise FrontendError("score of a negative constant", *s.pos)
            return [_Path(p.cond, p.prob, p.state, _times(p.weight, w, s.pos), p.key)]
        if isinstance(s, ScorePdf):
            arg = p.state.get(s.var, Polynomial.var(s.var))
            w = Weight(Polynomial.const(1.0), PdfFactor(_make_dist(s.dist), arg))
            return [_Path(p.cond, p.prob, p.state, _times(p.weight, w, s.pos), p.key)]
        if isinstance(s, Observe):
            return self.exec_stmt(If(s.cond, Seq([Skip()]), Seq([Score(Num(0.0))]), s.pos), p, cont, top, owner)
        if isinstance(s, IfProb):
            q = _to_poly(s.prob, p.state)
            if q.variables() & set(self.sampling):
                raise FrontendError("branch probability depends on a sampled value", *s.pos)
            if q.is_constant() and not 0.0 <= q.constant_term() <= 1.0:
                raise FrontendError("branch probability outside [0,1]", *s.pos)
            out = []
            for branch, bp in ((s.then, q), (s.orelse, 1 - q)):
                if bp.is_constant() and bp.constant_term() == 0.0:
                    continue
                out.extend(self.exec_stmt(branch, _Path(p.cond, p.prob * bp, p.state, p.weight, p.key), cont, False, owner))
            return out
        if isinstance(s, If):
            g = _to_guard(s.cond, p.state)
            out = []
            for tag, branch, gg in (("t", s.then, g), ("e", s.orelse, g.negate())):
                cond = p.cond.and_(gg)
                if cond.is_false():
                    continue
                out.extend(self.exec_stmt(branch, _Path(cond, p.prob, p.state, p.weight, p.key + ((id(s), tag),)), cont, False, owner))
            return out
        if isinstance(s, While):
            raise FrontendError("nested loops are not supported (loop nesting depth exceeds 1)", *s.pos)
        if isinstance(s, Return):
            return [p]
        raise TypeError(s)

    def transitions(self, source: str, guard: Guard, stmts: list[Stmt], cont: str, top: bool) -> list[Transition]:
        start = _Path(Guard.true(), Polynomial.const(1.0), {v: Polynomial.var(v) for v in self.pv}, Weight())
        paths = self.exec_list(stmts, start, cont, top, source)
        groups: dict[tuple, list[_Path]] = {}
        for p in paths:
            groups.setdefault(p.key, []).append(p)
        out = []
        for key, ps in groups.items():
            g = guard.and_(ps[0].cond)
            if g.is_false():
                continue
            forks = []
            for p in ps:
                upd = {v: e for v, e in p.state.items() if e != Polynomial.var(v)}
                forks.append(Fork(p.dest or cont, p.prob, upd, p.weight))
            out.append(Transition(source, g, forks))
        return out


def _times(w1: Weight, w2: Weight, pos: Pos) -> Weight:
    try:
        return w1.times(w2)
    except ValueError as exc:
        raise FrontendError(str(exc), *pos) from None


def lower(prog: Seq) -> tuple[Wpts, LoweringMap]:
    """Lower a parsed program to a WPTS and a location map."""
    stmts = list(prog.stmts)
    rets = _returns(prog)
    if not rets:
        raise FrontendError("program has no return statement", *prog.pos)
    if len(rets) > 1 or stmts[-1] is not rets[0]:
        r = rets[-1] if stmts[-1] is rets[0] else rets[0]
        raise FrontendError("exactly one return statement is allowed, as the last statement", *r.pos)
    if _loop_depth(prog) > 1:
        inner = _find_nested(prog)
        raise FrontendError("nested loops are not supported (loop nesting depth exceeds 1)", *inner)
    _check_defs(prog, set())
    ret_var = stmts[-1].var
    body = stmts[:-1]

    pv: list[str] = []
    for v in _assigned(prog):
        if v not in pv:
            pv.append(v)

    # prefix of plain assignments and samplings defines the initial distribution
    priors: dict[str, Distribution] = {}
    values: dict[str, Polynomial] = {}
    k = 0
    while k < len(body) and isinstance(body[k], (Assign, Sample)):
        s = body[k]
        if isinstance(s, Assign):
            values[s.var] = _to_poly(s.expr, values)
        else:
            d = _make_dist(s.dist)
            if isinstance(d, Normal):
                raise FrontendError("initial samplings must have bounded support", *s.pos)
            name = s.var if s.var not in priors else f"{s.var}#{k}"
            priors[name] = d
            values[s.var] = Polynomial.var(name)
        k += 1
    rest = body[k:]
    for v in pv:
        values.setdefault(v, Polynomial.const(0.0))

    low = _Lowerer(pv)
    # split remaining code into segments separated by top-level loops
    segments: list[list[Stmt]] = [[]]
    loops: list[While] = []
    for s in rest:
        if isinstance(s, While):
            loops.append(s)
            segments.append([])
        else:
            segments[-1].append(s)
    locmap: dict[str, str] = {}
    loop_names = [f"loop{i + 1}" for i in range(len(loops))]
    for name, lp in zip(loop_names, loops):
        locmap[name] = f"while at {lp.pos[0]}:{lp.pos[1]}"
    out = "out"
    locmap[out] = "program exit"
    transitions: list[Transition] = []
    locations: list[str] = []
    if segments[0] or not loops:
        init = "entry"
        locations.append(init)
        locmap[init] = "program entry"
        transitions += low.transitions(init, Guard.true(), segments[0], loop_names[0] if loops else out, False)
    else:
        init = loop_names[0]
    for i, (name, lp) in enumerate(zip(loop_names, loops)):
        locations.append(name)
        g = _to_guard(lp.cond, {})
        transitions += low.transitions(name, g, lp.body.stmts, name, True)
        nxt = loop_names[i + 1] if i + 1 < len(loops) else out
        transitions += low.transitions(name, g.negate(), segments[i + 1], nxt, False)
    while low.pending_cuts:
        name, code, cont = low.pending_cuts.pop(0)
        locations.append(name)
        locmap[name] = "conditional on sampled value"
        transitions += low.transitions(name, Guard.true(), code, cont, True)
    locations.append(out)
    initial = InitialDistribution(priors, values)
    w = Wpts(pv, dict(low.sampling), locations, init, out, initial, transitions, ret_var)
    return w, LoweringMap(locmap, low.sites)


def _find_nested(s: Stmt, depth: int = 0) -> Pos:
    if isinstance(s, While):
        if depth >= 1:
            return s.pos
        return _find_nested(s.body, depth + 1)
    if isinstance(s, Seq):
        for x in s.stmts:
            p = _find_nested(x, depth)
            if p is not None:
                return p
    if isinstance(s, (If, IfProb)):
        return _find_nested(s.then, depth) or _find_nested(s.orelse, depth)
    return None


def compile_program(src: str) -> Wpts:
    return lower(parse(src))[0]


def load_program(path: str) -> Wpts:
    with open(path) as f:
        return compile_program(f.read())

