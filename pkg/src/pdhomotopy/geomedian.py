"""
Distributed geometric median as a linearly constrained program.

Every agent ``i`` of a connected network holds a point ``b_i`` in R^d and a
local copy ``x_i``. The program is

    min  sum_i ||x_i - b_i||   s.t.  A x = 0,  ||x_i - b_i|| <= D,

where ``A = (I - W) (x) I_d`` for a symmetric doubly stochastic mixing
matrix ``W`` conforming to the graph. Block vectors (x, lambda, nu in
R^{nd}) are stored as ``(n, d)`` arrays, one row per agent.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .solver import ConstrainedProblem

INSTANCE_FORMAT = "pdhomotopy-instance"
INSTANCE_VERSION = 1


class GeometryWarning(UserWarning):
    """Data points are duplicated or collinear, so the median may not be unique."""


class ConvergenceError(RuntimeError):
    """An iterative routine hit its iteration cap; ``last`` holds the last iterate."""

    def __init__(self, message, last):
        super().__init__(message)
        self.last = last


# -- network ---------------------------------------------------------------

@dataclass(frozen=True)
class NetworkGraph:
    """Undirected graph with self loops (``adjacency[i, i]`` is always True)."""

    n: int
    adjacency: np.ndarray
    connectivity_ratio: float
    seed: Optional[int] = None

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=bool)
        if adj.shape != (self.n, self.n):
            raise ValueError(f"adjacency must be {self.n}x{self.n}")
        if not np.array_equal(adj, adj.T):
            raise ValueError("adjacency must be symmetric")
        if not adj.diagonal().all():
            raise ValueError("every node must be its own neighbor")
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)

    def neighbors(self, i, include_self=True):
        """Neighbors of ``i`` in ascending order."""
        nb = np.flatnonzero(self.adjacency[i])
        return [int(j) for j in nb if include_self or j != i]

    def edges(self):
        """Non-self edges ``(i, j)`` with ``i < j``, lexicographically sorted."""
        ii, jj = np.nonzero(np.triu(self.adjacency, k=1))
        return [(int(i), int(j)) for i, j in zip(ii, jj)]

    @property
    def degrees(self):
        return self.adjacency.sum(axis=1) - 1

    def is_connected(self):
        seen = {0}
        frontier = [0]
        while frontier:
            i = frontier.pop()
            for j in self.neighbors(i):
                if j not in seen:
                    seen.add(j)
                    frontier.append(j)
        return len(seen) == self.n

    @classmethod
    def from_edges(cls, n, edges, connectivity_ratio=None, seed=None):
        adj = np.eye(n, dtype=bool)
        for i, j in edges:
            adj[i, j] = adj[j, i] = True
        if connectivity_ratio is None:
            connectivity_ratio = len(edges) / (n * (n + 1) / 2)
        return cls(n, adj, connectivity_ratio, seed)


def edge_target(n, connectivity_ratio):
    return math.floor(connectivity_ratio * n * (n + 1) / 2)


def build_graph(n, connectivity_ratio, seed):
    """Random connected graph on ``n`` nodes.

    A random spanning tree supplies ``n - 1`` edges; the rest are drawn
    uniformly without replacement from the remaining node pairs until the
    graph holds ``floor(ratio * n (n+1) / 2)`` non-self edges (capped at the
    complete graph). ``seed`` is anything :func:`numpy.random.default_rng`
    accepts.
    """
    if n < 3:
        raise ValueError(f"need n >= 3 nodes, got {n}")
    if not (0.0 < connectivity_ratio <= 1.0):
        raise ValueError(f"connectivity ratio must lie in (0, 1], got {connectivity_ratio}")
    target = edge_target(n, connectivity_ratio)
    if target < n - 1:
        raise ValueError(
            f"ratio {connectivity_ratio} gives {target} edges, fewer than the "
            f"{n - 1} needed to connect {n} nodes")
    target = min(target, n * (n - 1) // 2)

    rng = np.random.default_rng(seed)
    adj = np.eye(n, dtype=bool)
    order = rng.permutation(n)
    for k in range(1, n):
        i, j = order[k], order[rng.integers(k)]
        adj[i, j] = adj[j, i] = True

    free = [(i, j) for i in range(n) for j in range(i + 1, n) if not adj[i, j]]
    extra = target - (n - 1)
    if extra > 0:
        for idx in sorted(rng.choice(len(free), size=extra, replace=False)):
            i, j = free[idx]
            adj[i, j] = adj[j, i] = True
    graph_seed = int(seed) if isinstance(seed, (int, np.integer)) else None
    return NetworkGraph(n, adj, connectivity_ratio, graph_seed)


@dataclass(frozen=True)
class MixingMatrix:
    entries: np.ndarray

    def __post_init__(self):
        w = np.array(self.entries, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError("mixing matrix must be square")
        w.setflags(write=False)
        object.__setattr__(self, "entries", w)

    @property
    def n(self):
        return self.entries.shape[0]

    def second_largest_modulus(self):
        ev = np.sort(np.abs(np.linalg.eigvalsh(self.entries)))
        return float(ev[-2])


def metropolis_hastings(graph):
    """Metropolis-Hastings weights ``1 / (1 + max(deg_i, deg_j))`` on edges.

    Degrees exclude self loops; the diagonal takes the remainder of each row.
    """
    if not graph.is_connected():
        raise ValueError("graph must be connected")
    n = graph.n
    deg = graph.degrees
    w = np.zeros((n, n))
    for i, j in graph.edges():
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    for i in range(n):
        off = 0.0
        for j in graph.neighbors(i, include_self=False):
            off += w[i, j]
        w[i, i] = 1.0 - off
    return MixingMatrix(w)


def _weights(mixing):
    return mixing.entries if isinstance(mixing, MixingMatrix) else np.asarray(mixing)


def apply_A(mixing, x):
    """Block ``i`` of the result is ``x_i - sum_j w_ij x_j``.

    ``x`` is an ``(n, d)`` block vector. Only the n x n mixing matrix is used;
    ``A`` is symmetric so this also applies ``A^T``.
    """
    w = _weights(mixing)
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != w.shape[0]:
        raise ValueError(f"block vector of shape {x.shape} does not match n={w.shape[0]}")
    return x - w @ x


# -- proximal step -----------------------------------------------------------

def prox_blocks(a, b, mu, D):
    """Row-wise :func:`prox_block` for ``(n, d)`` arrays ``a`` and ``b``.

    ``D`` may be ``inf`` (no ball constraint).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    diff = b - a
    r = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    shrink = np.clip(r - 1.0 / mu, 0.0, D)
    scale = np.divide(shrink, r, out=np.zeros_like(r), where=r > 0)
    return b - diff * scale[:, None]


def prox_block(a_i, b_i, mu, D):
    """Maximizer of ``-(mu/2)||x - a_i||^2 - ||x - b_i||`` over ``||x - b_i|| <= D``.

    Closed form: stay at ``b_i`` while ``||b_i - a_i|| <= 1/mu``, then move
    toward ``a_i`` by ``||b_i - a_i|| - 1/mu``, never further than ``D``.
    """
    if not (mu > 0 and D > 0):
        raise ValueError("mu and D must be positive")
    a_i = np.atleast_1d(np.asarray(a_i, dtype=float))
    b_i = np.atleast_1d(np.asarray(b_i, dtype=float))
    return prox_blocks(a_i[None, :], b_i[None, :], mu, D)[0]


# -- instance ------------------------------------------------------------------

def _collinear(points, rtol=1e-10):
    centered = points[1:] - points[0]
    if centered.size == 0:
        return True
    s = np.linalg.svd(centered, compute_uv=False)
    return s.size < 2 or s[1] <= rtol * max(s[0], 1e-300)


@dataclass(frozen=True)
class GeoMedianInstance:
    """Points ``b_i`` (rows of ``points``), ball radius ``D``, graph and weights."""

    points: np.ndarray
    radius_D: float
    graph: NetworkGraph
    mixing: MixingMatrix

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2:
            raise ValueError("points must be an (n, d) array")
        if pts.shape[0] != self.graph.n or self.mixing.n != self.graph.n:
            raise ValueError("points, graph and mixing matrix disagree on n")
        if not self.radius_D > 0:
            raise ValueError("radius_D must be positive")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if len(np.unique(pts, axis=0)) < len(pts):
            warnings.warn("duplicate data points; the median may not be unique",
                          GeometryWarning, stacklevel=3)
        elif _collinear(pts):
            warnings.warn("data points are collinear; the median may not be unique",
                          GeometryWarning, stacklevel=3)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def d(self):
        return self.points.shape[1]

    @property
    def diameter(self):
        """Diameter of X, a product of ``n`` balls of radius ``D``."""
        return 2.0 * self.radius_D * math.sqrt(self.n)

    @property
    def objective_bound(self):
        return self.n * self.radius_D

    def theory_radius(self):
        """``2 n max ||b_i - b_j||``, the radius the dual error bound assumes."""
        diffs = self.points[:, None, :] - self.points[None, :, :]
        return 2.0 * self.n * float(np.sqrt((diffs ** 2).sum(-1)).max())

    def objective(self, x):
        diff = np.asarray(x) - self.points
        return float(np.sqrt(np.einsum("ij,ij->i", diff, diff)).sum())

    def is_feasible(self, x, rtol=1e-12):
        x = np.asarray(x)
        if x.shape != self.points.shape:
            return False
        return bool(np.all(np.linalg.norm(x - self.points, axis=1)
                           <= self.radius_D * (1 + rtol)))

    # serialization
    def to_dict(self, seed=None, data_range=None):
        out = {
            "format": INSTANCE_FORMAT,
            "version": INSTANCE_VERSION,
            "n": self.n,
            "d": self.d,
            "seed": seed if seed is not None else self.graph.seed,
            "connectivity_ratio": self.graph.connectivity_ratio,
            "D": self.radius_D,
            "points": self.points.tolist(),
            "edges": [list(e) for e in self.graph.edges()],
        }
        if data_range is not None:
            out["data_range"] = list(data_range)
        return out

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != INSTANCE_FORMAT:
            raise ValueError(f"not an instance document (format={doc.get('format')!r})")
        if doc.get("version") != INSTANCE_VERSION:
            raise ValueError(f"unsupported instance version {doc.get('version')!r}")
        n, d = int(doc["n"]), int(doc["d"])
        points = np.array(doc["points"], dtype=float).reshape(n, d)
        graph = NetworkGraph.from_edges(n, [tuple(e) for e in doc["edges"]],
                                        doc["connectivity_ratio"], doc.get("seed"))
        return cls(points, float(doc["D"]), graph, metropolis_hastings(graph))


def dumps_instance(instance, **kw):
    return json.dumps(instance.to_dict(**kw), indent=1) + "\n"


def save_instance(instance, path, **kw):
    with open(path, "w") as fh:
        fh.write(dumps_instance(instance, **kw))


def load_instance(path):
    with open(path) as fh:
        return GeoMedianInstance.from_dict(json.load(fh))


# -- oracles ---------------------------------------------------------------------

def _check_blocks(instance, v, name):
    v = np.asarray(v, dtype=float)
    if v.shape != instance.points.shape:
        raise ValueError(f"{name} has shape {v.shape}, expected {instance.points.shape}")
    return v


def smoothed_argmax_geo(instance, lambda_hat, x_anchor, mu):
    """Per-agent closed-form maximizer of the smoothed Lagrangian.

    ``a_i = x_anchor_i - (1/mu) * (A^T lambda_hat)_i``, then :func:`prox_blocks`.
    """
    lambda_hat = _check_blocks(instance, lambda_hat, "lambda_hat")
    x_anchor = _check_blocks(instance, x_anchor, "x_anchor")
    a = x_anchor - apply_A(instance.mixing, lambda_hat) / mu
    return prox_blocks(a, instance.points, mu, instance.radius_D)


def reduced_dual_G(instance, nu):
    """``G(nu) = -<nu, b> + D * sum_i max(||nu_i|| - 1, 0)``."""
    nu = _check_blocks(instance, nu, "nu")
    norms = np.sqrt(np.einsum("ij,ij->i", nu, nu))
    return float(-np.vdot(nu, instance.points)
                 + instance.radius_D * np.maximum(norms - 1.0, 0.0).sum())


def dual_value(instance, lam):
    """Closed-form Lagrange dual ``F(lambda) = G(A^T lambda)``."""
    lam = _check_blocks(instance, lam, "lambda")
    return reduced_dual_G(instance, apply_A(instance.mixing, lam))


def smoothed_dual_value(instance, lam, x_anchor, mu):
    """Smoothed dual evaluated at the closed-form maximizer."""
    x = smoothed_argmax_geo(instance, lam, x_anchor, mu)
    diff = x - x_anchor
    return float(-np.vdot(lam, apply_A(instance.mixing, x)) - instance.objective(x)
                 - 0.5 * mu * np.vdot(diff, diff))


def sigma_max_AtA(instance, tol=1e-10, max_iter=100_000):
    """Largest eigenvalue of ``A^T A`` by power iteration on ``v -> A(A v)``.

    ``A`` acts on each coordinate independently, so a single-column block
    vector suffices. Stops once ``||A A v - rho v|| <= tol * rho`` which bounds
    the relative eigenvalue error by ``tol``.
    """
    w = instance if isinstance(instance, MixingMatrix) else instance.mixing
    n = w.n
    v = np.random.default_rng(0).standard_normal((n, 1))
    v /= np.linalg.norm(v)
    rho = 0.0
    for _ in range(max_iter):
        av = apply_A(w, apply_A(w, v))
        rho = float(np.vdot(v, av))
        if rho <= 0.0:
            return 0.0
        if np.linalg.norm(av - rho * v) <= tol * rho:
            return rho
        v = av / np.linalg.norm(av)
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps", rho)


# -- reference solution ------------------------------------------------------------

def _vertex_optimal(points, k, weights):
    others = np.ones(len(points), dtype=bool)
    same = np.all(points == points[k], axis=1)
    others &= ~same
    if not others.any():
        return True
    diff = points[k] - points[others]
    pull = (diff / np.linalg.norm(diff, axis=1)[:, None]).sum(axis=0)
    return np.linalg.norm(pull) <= weights[same].sum()


def weiszfeld(points, tol=1e-10, max_iter=100_000):
    """Geometric median of the rows of ``points``.

    Data points are first tested for optimality (the pull of the others has
    norm at most one); otherwise Weiszfeld iterations with the Vardi-Zhang
    correction run from the centroid until the step norm drops below ``tol``.
    Two points return their midpoint.

    Returns ``(x_star, f_star)``; raises :class:`ConvergenceError` after
    ``max_iter`` iterations.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) < 1:
        raise ValueError("points must be a non-empty (n, d) array")

    def cost(y):
        return float(np.linalg.norm(pts - y, axis=1).sum())

    if len(pts) <= 2:
        y = pts.mean(axis=0)
        return y, cost(y)
    ones = np.ones(len(pts))
    for k in range(len(pts)):
        if _vertex_optimal(pts, k, ones):
            return pts[k].copy(), cost(pts[k])

    y = pts.mean(axis=0)
    for _ in range(max_iter):
        dist = np.linalg.norm(pts - y, axis=1)
        at = dist == 0.0
        inv = np.divide(1.0, dist, out=np.zeros_like(dist), where=~at)
        T = inv @ pts / inv.sum()
        eta = float(at.sum())
        if eta:
            R = inv @ (pts - y)
            r = float(np.linalg.norm(R))
            gamma = min(1.0, eta / r) if r > 0 else 1.0
            y_new = (1.0 - gamma) * T + gamma * y
        else:
            y_new = T
        step = float(np.linalg.norm(y_new - y))
        y = y_new
        if step <= tol:
            return y, cost(y)
    raise ConvergenceError(f"Weiszfeld did not converge in {max_iter} iterations", y)


def consensus_solution(instance, tol=1e-10, max_iter=1_000_000):
    """Stacked reference ``x*`` (every agent at the median) and ``f*``."""
    x_star, f_star = weiszfeld(instance.points, tol=tol, max_iter=max_iter)
    return np.tile(x_star, (instance.n, 1)), f_star


# -- problem bundle --------------------------------------------------------------

def make_problem(instance, sigma_max=None):
    """Wrap ``instance`` as a :class:`~pdhomotopy.solver.ConstrainedProblem`.

    The constraint is ``A x = 0`` (no offset); the diameter handed to the
    solver is that of X, ``2 D sqrt(n)``. The initial point is ``b``.
    """
    w = instance.mixing
    nd = instance.n * instance.d
    return ConstrainedProblem(
        dim_primal=nd,
        dim_dual=nd,
        apply_constraint=lambda x: apply_A(w, x),
        smoothed_argmax=lambda lam, xa, mu: smoothed_argmax_geo(instance, lam, xa, mu),
        objective=instance.objective,
        diameter_D=instance.diameter,
        objective_bound_M=instance.objective_bound,
        initial_point=np.array(instance.points),
        dual_shape=instance.points.shape,
        is_feasible=instance.is_feasible,
        sigma_max_AtA=sigma_max,
    )
