import math
import warnings

import numpy as np
import pytest

from pdhomotopy.geomedian import (GeoMedianInstance, GeometryWarning, NetworkGraph,
                                  build_graph, metropolis_hastings)
from pdhomotopy.solver import ConstrainedProblem


def scalar_problem(initial=0.0):
    """min x s.t. x = 0 over X = [-1, 1]."""
    return ConstrainedProblem(
        dim_primal=1,
        dim_dual=1,
        apply_constraint=lambda x: np.asarray(x, dtype=float).copy(),
        smoothed_argmax=lambda lam, xa, mu: np.clip(xa - (lam + 1.0) / mu, -1.0, 1.0),
        objective=lambda x: float(np.asarray(x).sum()),
        diameter_D=2.0,
        objective_bound_M=1.0,
        initial_point=np.array([initial]),
        is_feasible=lambda x: bool(np.all(np.abs(x) <= 1.0)),
        sigma_max_AtA=1.0,
    )


def make_instance(n, d, ratio=0.5, seed=0, D=None, data_seed=None):
    ratio = max(ratio, 2.0 / (n + 1))
    graph = build_graph(n, ratio, seed)
    rng = np.random.default_rng(seed if data_seed is None else data_seed)
    points = rng.uniform(0, 10, (n, d))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GeometryWarning)
        return GeoMedianInstance(points, 10 * math.sqrt(d) if D is None else D,
                                 graph, metropolis_hastings(graph))


def path_graph():
    return NetworkGraph.from_edges(3, [(0, 1), (1, 2)])


@pytest.fixture
def small_instance():
    return make_instance(5, 3, ratio=0.5, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
