"""Slant decompositions of submanifolds in flat Kähler space, with numerical identity checks."""

from .ambient import HermitianStructure, standard_structure
from .catalog import kslant_example, pointwise_example
from .expr_dsl import load_immersion, parse_immersion
from .tangent_geometry import analyze_point, detect_distributions
from .theorem_checks import SuiteConfig, run_suite

__version__ = "0.1.0"

__all__ = [
    "HermitianStructure",
    "SuiteConfig",
    "analyze_point",
    "detect_distributions",
    "kslant_example",
    "load_immersion",
    "parse_immersion",
    "pointwise_example",
    "run_suite",
    "standard_structure",
]
