"""Guaranteed bounds on posterior distributions of probabilistic programs with loops."""
from .conic import ConicProgram, export, solve, verify_posthoc
from .frontend import FrontendError, ParseError, compile_program, load_program
from .oracle import SimEstimate, simulate, simulate_points, tail_fit
from .pipeline import (AnalysisConfig, AnalysisError, BoundReport, OstRejected, Query, analyze,
                       check_ost_prereqs, npd_interval, restrict_query)
from .polynomial import Box, Polynomial
from .scoreapprox import PiecewisePoly, approximate_pdf
from .wpts import Wpts, classify, validate

__version__ = "0.1.0"
