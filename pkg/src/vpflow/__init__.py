"""Volume preserving curvature flows of spacelike graphs in Lorentzian tori."""

from .ambient import AmbientSpec, preset
from .curvfun import CurvatureFunctionSpec, SupplementarySpec, parse_curvature_function
from .errors import VPFlowError
from .flow import FlowConfig, ForceMode, run
from .grid import Grid, ScalarField

__version__ = "0.1.0"

__all__ = ["AmbientSpec", "CurvatureFunctionSpec", "FlowConfig", "ForceMode", "Grid",
           "ScalarField", "SupplementarySpec", "VPFlowError", "__version__",
           "parse_curvature_function", "preset", "run"]
