"""
Randomized self-checks behind ``pdhomotopy verify``.

Each check compares a closed form against an independent numerical route
(grid search, near-exact inner maximization, dense linear algebra) and
returns a :class:`CheckResult`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .geomedian import (GeoMedianInstance, GeometryWarning, apply_A, build_graph,
                        consensus_solution, dual_value, metropolis_hastings, prox_block,
                        reduced_dual_G, smoothed_dual_value)
from .solver import theta_next


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def grid_prox(a, b, mu, D, step=1e-5):
    """Maximize the prox objective on the line through ``b`` along ``a - b``.

    Grid search over the signed offset in ``[-D, D]``, refined by ternary
    search on the bracketing cell (the objective is concave on the line).
    """
    diff = a - b
    r = float(np.linalg.norm(diff))
    if r == 0.0:
        return b.copy()
    u = diff / r

    def obj(s):
        return -0.5 * mu * (r - s) ** 2 - np.abs(s)

    s = np.linspace(-D, D, int(round(2 * D / step)) + 1)
    k = int(np.argmax(obj(s)))
    lo, hi = s[max(k - 1, 0)], s[min(k + 1, len(s) - 1)]
    for _ in range(200):
        m1, m2 = lo + (hi - lo) / 3, hi - (hi - lo) / 3
        if obj(m1) < obj(m2):
            lo = m1
        else:
            hi = m2
    return b + u * (0.5 * (lo + hi))


def random_prox_case(rng, case):
    """Inputs ``(a, b, mu, D)`` whose distance ``||b - a||`` falls in ``case``.

    Cases: ``"inside"``, ``"shrink"``, ``"clip"``, ``"edge1"`` (exactly 1/mu),
    ``"edge2"`` (exactly 1/mu + D).
    """
    d = int(rng.integers(1, 5))
    mu = float(10 ** rng.uniform(-0.5, 1.0))
    D = float(rng.uniform(0.2, 3.0))
    b = rng.uniform(-2, 2, d)
    r = {"inside": rng.uniform(0, 1 / mu),
         "shrink": rng.uniform(1 / mu, 1 / mu + D),
         "clip": rng.uniform(1 / mu + D, 1 / mu + 2 * D),
         "edge1": 1 / mu,
         "edge2": 1 / mu + D}[case]
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    return b + r * u, b, mu, D


PROX_CASES = ("inside", "shrink", "clip", "edge1", "edge2")


def check_prox(samples=200, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(samples):
        a, b, mu, D = random_prox_case(rng, PROX_CASES[k % len(PROX_CASES)])
        worst = max(worst, float(np.linalg.norm(prox_block(a, b, mu, D) - grid_prox(a, b, mu, D))))
    return CheckResult("prox closed form vs grid search", worst <= 1e-6,
                       f"max deviation {worst:.2e} over {samples} cases (tol 1e-6)")


def random_instance(rng, n, d, ratio=0.5, D=None):
    ratio = max(ratio, 2.0 / (n + 1))
    graph = build_graph(n, ratio, int(rng.integers(2**32)))
    points = rng.uniform(0, 10, (n, d))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GeometryWarning)
        return GeoMedianInstance(points, 10 * math.sqrt(d) if D is None else D,
                                 graph, metropolis_hastings(graph))


def random_multiplier(rng, shape):
    return rng.standard_normal(shape) * 10 ** rng.uniform(-1, 1)


def check_dual(samples=100, seed=1, mu_probe=1e-8):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, 5, 2)
    tol = mu_probe * inst.diameter ** 2 / 2 + 1e-6
    worst = worst_G = 0.0
    for _ in range(samples):
        lam = random_multiplier(rng, inst.points.shape)
        F = dual_value(inst, lam)
        inner = smoothed_dual_value(inst, lam, inst.points, mu_probe)
        worst = max(worst, abs(F - inner))
        worst_G = max(worst_G, abs(F - reduced_dual_G(inst, apply_A(inst.mixing, lam))))
    ok = worst <= tol and worst_G <= 1e-12
    return CheckResult("dual closed form vs inner maximization", ok,
                       f"max |F - F_probe| {worst:.2e} (tol {tol:.2e}), "
                       f"max |F - G(A^T lam)| {worst_G:.1e}")


def check_sandwich(samples=100, seed=2):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, 5, 3)
    worst_low, worst_high = 0.0, -math.inf
    for mu in (1.0, 0.1, 0.01):
        bound = mu * inst.diameter ** 2 / 2
        for _ in range(samples):
            lam = random_multiplier(rng, inst.points.shape)
            gap = dual_value(inst, lam) - smoothed_dual_value(inst, lam, inst.points, mu)
            worst_low = min(worst_low, gap)
            worst_high = max(worst_high, gap - bound)
    ok = worst_low >= -1e-9 and worst_high <= 1e-9
    return CheckResult("smoothing sandwich 0 <= F - F_mu <= mu D^2/2", ok,
                       f"min gap {worst_low:.1e}, max excess over bound {worst_high:.1e}")


def check_theta(count=100_000):
    theta = 1.0
    worst_id = 0.0
    bound_ok = True
    for t in range(count):
        if theta > 2.0 / (t + 2):
            bound_ok = False
        nxt = theta_next(theta)
        worst_id = max(worst_id, abs((1 - nxt) / nxt**2 * theta**2 - 1.0))
        theta = nxt
    ok = bound_ok and worst_id <= 1e-12
    return CheckResult("theta recursion identity and 2/(t+2) bound", ok,
                       f"max relative identity error {worst_id:.1e}, bound held: {bound_ok}")


def check_mixing(graphs=20, seed=3):
    rng = np.random.default_rng(seed)
    sym = rows = slem = null = 0.0
    for _ in range(graphs):
        n = int(rng.integers(3, 21))
        ratio = float(rng.uniform(2.0 / (n + 1), 1.0))
        w = metropolis_hastings(build_graph(n, ratio, int(rng.integers(2**32))))
        sym = max(sym, float(np.abs(w.entries - w.entries.T).max()))
        rows = max(rows, float(np.abs(w.entries.sum(axis=1) - 1).max()))
        slem = max(slem, w.second_largest_modulus())
        v = np.tile(rng.standard_normal(int(rng.integers(1, 4))), (n, 1))
        null = max(null, float(np.abs(apply_A(w, v)).max()))
    ok = sym == 0.0 and rows <= 1e-12 and slem < 1.0 and null <= 1e-14
    return CheckResult("mixing matrix properties", ok,
                       f"asymmetry {sym:.1e}, row-sum error {rows:.1e}, "
                       f"max SLEM {slem:.4f}, consensus residual {null:.1e}")


def check_weak_duality(samples=1000, seed=4):
    rng = np.random.default_rng(seed)
    worst = math.inf
    per = max(1, samples // 5)
    done = 0
    while done < samples:
        inst = random_instance(rng, int(rng.integers(3, 8)), int(rng.integers(1, 4)))
        _, f_star = consensus_solution(inst)
        for _ in range(min(per, samples - done)):
            lam = random_multiplier(rng, inst.points.shape)
            worst = min(worst, dual_value(inst, lam) + f_star)
            done += 1
    return CheckResult("weak duality F(lam) >= -f*", worst >= -1e-9,
                       f"min F + f* = {worst:.2e} over {samples} multipliers")


def run_all(quick=False):
    scale = 10 if quick else 1
    return [
        check_prox(samples=max(10, 200 // scale)),
        check_dual(samples=max(10, 100 // scale)),
        check_sandwich(samples=max(10, 100 // scale)),
        check_theta(count=100_000 // scale),
        check_mixing(graphs=max(5, 20 // scale)),
        check_weak_duality(samples=1000 // scale),
    ]
