"""Primal-dual homotopy smoothing for linearly constrained convex programs."""

from .geomedian import (GeoMedianInstance, MixingMatrix, NetworkGraph, apply_A, build_graph,
                        dual_value, make_problem, metropolis_hastings, prox_block,
                        reduced_dual_G, sigma_max_AtA, smoothed_argmax_geo, weiszfeld)
from .solver import (ConstrainedProblem, HomotopyConfig, HomotopyTrace, OracleError,
                     PdsOutput, homotopy_run, pds_run, theta_next)

__version__ = "0.1.0"

__all__ = [
    "ConstrainedProblem", "GeoMedianInstance", "HomotopyConfig", "HomotopyTrace",
    "MixingMatrix", "NetworkGraph", "OracleError", "PdsOutput", "apply_A", "build_graph",
    "dual_value", "homotopy_run", "make_problem", "metropolis_hastings", "pds_run",
    "prox_block", "reduced_dual_G", "sigma_max_AtA", "smoothed_argmax_geo", "theta_next",
    "weiszfeld",
]
