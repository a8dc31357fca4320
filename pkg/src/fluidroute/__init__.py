"""Size-aware fluid dispatching: value functions, optimal paths and a simulator."""
from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .jobsize import DISTRIBUTIONS, JobSizeDistribution, get_distribution  # noqa: E402
from .fluid import FluidState, PathSpec, path_cost, v_lwl, v_mwl, v_rnd, v_size_unaware, v_sto  # noqa: E402
from .optpath import OptimalPathTable, solve, trace, unit_cost_curve, value_lookup  # noqa: E402

__all__ = [
    "DISTRIBUTIONS",
    "JobSizeDistribution",
    "get_distribution",
    "FluidState",
    "PathSpec",
    "path_cost",
    "v_rnd",
    "v_sto",
    "v_mwl",
    "v_lwl",
    "v_size_unaware",
    "OptimalPathTable",
    "solve",
    "trace",
    "unit_cost_curve",
    "value_lookup",
]
