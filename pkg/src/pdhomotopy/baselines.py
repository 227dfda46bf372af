"""
Comparator algorithms for the distributed geometric median.

All of them start from ``x^0 = b`` and report the uniform running average of
their primal iterates, except ``fixed_smoothing`` which is a single PDS stage
and reports its own weighted average. Records go through the same
:class:`~pdhomotopy.solver.MetricRecorder` as the homotopy method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .geomedian import apply_A, make_problem, prox_blocks, sigma_max_AtA
from .metrics import Trace
from .solver import MetricRecorder, pds_run

Algorithm = Literal["dsm", "pg_extra", "jacobi_admm", "fixed_smoothing"]
ALGORITHMS = ("dsm", "pg_extra", "jacobi_admm", "fixed_smoothing")


def default_pg_extra_alpha(n):
    return 5.0 if n <= 20 else 20.0


@dataclass(frozen=True)
class BaselineConfig:
    """Parameters of one baseline run.

    ``admm_rho=None`` means ``2 sqrt(sigma_max(A^T A))``; ``step_size_alpha``
    of ``None`` for PG-EXTRA picks 5 for n <= 20 and 20 above.
    """

    algorithm: Algorithm
    max_iter: int = 1000
    step_size_alpha: Optional[float] = None
    admm_rho: Optional[float] = None
    admm_penalty: float = 1.0
    smoothing_mu: float = 1e-5

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown baseline {self.algorithm!r}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.algorithm == "dsm" and self.step_size_alpha is not None and self.step_size_alpha < 0:
            raise ValueError("DSM step size must be non-negative")
        if self.algorithm == "pg_extra" and self.step_size_alpha is not None and self.step_size_alpha <= 0:
            raise ValueError("PG-EXTRA step size must be positive")
        if self.algorithm == "jacobi_admm":
            if self.admm_rho is not None and self.admm_rho <= 0:
                raise ValueError("ADMM proximal weight must be positive")
            if self.admm_penalty <= 0:
                raise ValueError("ADMM penalty must be positive")
        if self.algorithm == "fixed_smoothing" and not self.smoothing_mu > 0:
            raise ValueError("smoothing_mu must be positive")


class _Averager:
    def __init__(self, x0):
        self.total = np.zeros_like(x0)
        self.count = 0

    def add(self, x):
        self.total = self.total + x
        self.count += 1
        return self.total / self.count


def _recorder(instance, algorithm, reference_x, observe_every, wall_clock, problem=None):
    problem = problem or make_problem(instance)
    return MetricRecorder(problem, reference_x, None, algorithm, observe_every, wall_clock)


def _unit_toward(x, b):
    """Subgradient of ``||x_i - b_i||`` per row, zero where ``x_i = b_i``."""
    diff = x - b
    r = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    scale = np.divide(1.0, r, out=np.zeros_like(r), where=r > 0)
    return diff * scale[:, None]


def dsm_run(instance, config, reference_x=None, observer=None,
            observe_every=1, wall_clock=True):
    """Decentralized subgradient method (Nedic and Ozdaglar, 2009).

    ``x_i <- sum_j w_ij x_j - alpha * g_i`` with ``g_i`` a subgradient of
    ``||x_i - b_i||`` at the current ``x_i``. Default ``alpha = 10``.
    """
    alpha = 10.0 if config.step_size_alpha is None else config.step_size_alpha
    w = instance.mixing.entries
    b = instance.points
    x = b.copy()
    avg = _Averager(x)
    rec = _recorder(instance, "dsm", reference_x, observe_every, wall_clock)
    for t in range(config.max_iter):
        x = w @ x - alpha * _unit_toward(x, b)
        x_bar = avg.add(x)
        if observer is not None:
            observer(t, x, x_bar)
        if rec.due():
            rec.record(1, t, None, x_bar)
    return Trace("dsm", rec.records, final_x=x_bar,
                 meta={"alpha": alpha, "last_iterate": x})


def shrink_prox(z, b, alpha):
    """Prox of ``alpha * ||. - b_i||`` per row: move ``z_i`` toward ``b_i`` by ``alpha``."""
    diff = z - b
    r = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    scale = np.divide(np.maximum(r - alpha, 0.0), r, out=np.zeros_like(r), where=r > 0)
    return b + diff * scale[:, None]


def pg_extra_run(instance, config, reference_x=None, observer=None,
                 observe_every=1, wall_clock=True):
    """PG-EXTRA (Shi, Ling, Wu and Yin, 2015) with no smooth part.

    With ``W2 = (I + W) / 2``::

        z^1     = W x^0                    x^1     = prox(z^1)
        z^{k+1} = W x^k + z^k - W2 x^{k-1}  x^{k+1} = prox(z^{k+1})

    where ``prox`` is that of ``alpha * ||x_i - b_i||``.
    """
    alpha = (default_pg_extra_alpha(instance.n) if config.step_size_alpha is None
             else config.step_size_alpha)
    w = instance.mixing.entries
    w2 = 0.5 * (np.eye(instance.n) + w)
    b = instance.points
    x_prev = b.copy()
    z = w @ x_prev
    x = shrink_prox(z, b, alpha)
    avg = _Averager(x)
    rec = _recorder(instance, "pg_extra", reference_x, observe_every, wall_clock)
    for t in range(config.max_iter):
        if t > 0:
            z = w @ x + z - w2 @ x_prev
            x_prev, x = x, shrink_prox(z, b, alpha)
        x_bar = avg.add(x)
        if observer is not None:
            observer(t, x, x_bar)
        if rec.due():
            rec.record(1, t, None, x_bar)
    return Trace("pg_extra", rec.records, final_x=x_bar,
                 meta={"alpha": alpha, "last_iterate": x})


def jacobi_admm_run(instance, config, reference_x=None, observer=None,
                    observe_every=1, wall_clock=True):
    """Jacobian proximal ADMM (Deng, Lai, Peng and Yin, 2017) on ``A x = 0``.

    Every block is updated in parallel from the previous iterate, with the
    augmented term linearized by the proximal weight ``rho``::

        g      = A^T (beta A x^k - lambda^k)
        x_i    = prox_block(x_i^k - g_i / rho, b_i, rho, D)
        lambda = lambda^k - beta A x^{k+1}

    ``beta`` is ``config.admm_penalty``; ``rho`` defaults to
    ``2 sigma_max(A) = 2 sqrt(sigma_max(A^T A))``.
    """
    rho = config.admm_rho
    sig = None
    if rho is None:
        sig = sigma_max_AtA(instance)
        rho = 2.0 * math.sqrt(sig)
    beta = config.admm_penalty
    w = instance.mixing
    b = instance.points
    x = b.copy()
    lam = np.zeros_like(x)
    avg = _Averager(x)
    rec = _recorder(instance, "jacobi_admm", reference_x, observe_every, wall_clock)
    for t in range(config.max_iter):
        g = apply_A(w, beta * apply_A(w, x) - lam)
        x = prox_blocks(x - g / rho, b, rho, instance.radius_D)
        lam = lam - beta * apply_A(w, x)
        x_bar = avg.add(x)
        if observer is not None:
            observer(t, x, x_bar)
        if rec.due():
            rec.record(1, t, None, x_bar)
    return Trace("jacobi_admm", rec.records, final_x=x_bar, final_lambda=lam,
                 meta={"rho": rho, "penalty": beta, "sigma_max_AtA": sig,
                       "last_iterate": x})


def fixed_smoothing_run(instance, config, reference_x=None, observer=None,
                        observe_every=1, wall_clock=True, dual_evaluator=None):
    """One PDS stage with constant ``mu``, ``lambda = 0`` and anchor ``b``."""
    problem = make_problem(instance)
    mu = config.smoothing_mu
    rec = MetricRecorder(problem, reference_x, dual_evaluator, "fixed_smoothing",
                         observe_every, wall_clock)

    def observe(step):
        if observer is not None:
            observer(step)
        if rec.due():
            rec.record(1, step.t, mu, step.state.x_bar, step.lambda_next)

    out = pds_run(problem, problem.zero_dual(), problem.initial_point, mu,
                  config.max_iter, observer=observe)
    return Trace("fixed_smoothing", rec.records, final_x=out.x_bar,
                 final_lambda=out.lambda_final, meta={"mu": mu})


RUNNERS = {
    "dsm": dsm_run,
    "pg_extra": pg_extra_run,
    "jacobi_admm": jacobi_admm_run,
    "fixed_smoothing": fixed_smoothing_run,
}


def run_baseline(instance, config, **kw):
    return RUNNERS[config.algorithm](instance, config, **kw)
