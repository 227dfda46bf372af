"""
Primal-dual smoothing and its homotopy (multi-stage) driver.

The solver is written against :class:`ConstrainedProblem`, a bundle of
oracles for

    min f(x)  s.t.  A x - b = 0,  x in X

with X convex and compact. Nothing in this module knows about a concrete
problem; see :mod:`pdhomotopy.geomedian` for the geometric-median instance.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Sequence, Union

import numpy as np

from .metrics import IterationRecord, Trace, relative_error

StepSizeMode = Literal["verbatim", "scaled"]
STEP_SIZE_MODES = ("verbatim", "scaled")


class OracleError(RuntimeError):
    """A problem oracle failed (raised, or returned non-finite values).

    ``iteration`` is the PDS iteration at which the failure happened and
    ``stage`` the homotopy stage (``None`` outside :func:`homotopy_run`).
    """

    def __init__(self, message, iteration, stage=None):
        self.iteration = iteration
        self.stage = stage
        super().__init__(message)

    def __str__(self):
        where = f"iteration {self.iteration}"
        if self.stage is not None:
            where = f"stage {self.stage}, " + where
        return f"{self.args[0]} ({where})"


@dataclass(frozen=True)
class ConstrainedProblem:
    """Oracle bundle for a linearly constrained convex program.

    Primal and dual vectors are numpy arrays of any fixed shape; the sizes
    ``dim_primal`` / ``dim_dual`` count their entries.

    ``smoothed_argmax(lam_hat, x_anchor, mu)`` must return the maximizer over
    X of ``-<lam_hat, A x - b> - f(x) - mu/2 ||x - x_anchor||^2``.
    """

    dim_primal: int
    dim_dual: int
    apply_constraint: Callable[[np.ndarray], np.ndarray]
    smoothed_argmax: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    objective: Callable[[np.ndarray], float]
    diameter_D: float
    objective_bound_M: float
    initial_point: np.ndarray
    dual_shape: tuple = ()
    is_feasible: Optional[Callable[[np.ndarray], bool]] = None
    sigma_max_AtA: Optional[float] = None

    def __post_init__(self):
        if self.dim_primal < 1 or self.dim_dual < 1:
            raise ValueError("problem dimensions must be positive")
        if not (self.diameter_D > 0 and self.objective_bound_M > 0):
            raise ValueError("diameter_D and objective_bound_M must be positive")
        if not self.dual_shape:
            object.__setattr__(self, "dual_shape", (self.dim_dual,))

    def zero_dual(self):
        return np.zeros(self.dual_shape)

    def constraint_norm(self, x):
        r = self.apply_constraint(x)
        return math.sqrt(float(np.vdot(r, r)))


def theta_next(theta):
    """Next momentum weight, ``(sqrt(theta^4 + 4 theta^2) - theta^2) / 2``.

    The result solves ``(1 - t) / t^2 = 1 / theta^2`` for ``t`` in (0, 1).
    """
    if not (0.0 < theta <= 1.0):
        raise ValueError(f"theta must lie in (0, 1], got {theta!r}")
    t2 = theta * theta
    return (math.sqrt(t2 * t2 + 4.0 * t2) - t2) / 2.0


def theta_sequence(count):
    """``[theta_0, ..., theta_{count-1}]`` starting from ``theta_0 = 1``."""
    out = np.empty(count)
    theta = 1.0
    for t in range(count):
        out[t] = theta
        if t + 1 < count:
            theta = theta_next(theta)
    return out


@dataclass
class PdsState:
    """Mutable state of one PDS stage. Observers receive it read-only."""

    lambda_curr: np.ndarray
    lambda_prev: np.ndarray
    anchor_x: np.ndarray
    mu: float
    theta_curr: float = 1.0
    theta_prev: float = 1.0
    avg_accum: Union[np.ndarray, float] = 0.0
    weight_accum: float = 0.0

    @property
    def x_bar(self):
        return self.avg_accum / self.weight_accum


@dataclass(frozen=True)
class PdsStep:
    """Snapshot handed to a PDS observer after iteration ``t``.

    ``theta`` is the weight used at ``t``; ``x`` is ``x(lambda_hat)``;
    ``lambda_next`` is the freshly updated multiplier; ``state`` already
    includes ``x`` in its averages.
    """

    t: int
    theta: float
    lambda_hat: np.ndarray
    x: np.ndarray
    lambda_next: np.ndarray
    state: PdsState


@dataclass(frozen=True)
class PdsOutput:
    x_bar: np.ndarray
    lambda_final: np.ndarray
    iterations_run: int


def dual_step_size(problem, mu, mode):
    if mode == "verbatim":
        return mu
    if mode == "scaled":
        if problem.sigma_max_AtA is None:
            raise ValueError("scaled step size needs problem.sigma_max_AtA")
        return mu / problem.sigma_max_AtA
    raise ValueError(f"unknown step size mode {mode!r}")


def pds_run(problem, lambda_init, x_anchor, mu, T, observer=None,
            step_size_mode="verbatim"):
    """Run ``T`` iterations of primal-dual smoothing.

    Parameters
    ----------
    problem : ConstrainedProblem
    lambda_init : ndarray
        Warm-start multiplier; ``lambda_0 = lambda_{-1} = lambda_init``.
    x_anchor : ndarray
        Proximal center of the smoothing term, a point of X.
    mu : float
        Smoothing parameter.
    T : int
        Number of iterations.
    observer : callable, optional
        Called as ``observer(PdsStep)`` once per iteration, in order.
    step_size_mode : {"verbatim", "scaled"}
        Dual step ``mu`` or ``mu / sigma_max(A^T A)``.

    Returns
    -------
    PdsOutput
        The ``1/theta_t``-weighted average of the primal iterates and the
        last multiplier.
    """
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu!r}")
    if T < 1 or int(T) != T:
        raise ValueError(f"T must be an integer >= 1, got {T!r}")
    step = dual_step_size(problem, mu, step_size_mode)

    lam0 = np.array(lambda_init, dtype=float)
    state = PdsState(lambda_curr=lam0, lambda_prev=lam0,
                     anchor_x=np.array(x_anchor, dtype=float), mu=mu)
    for t in range(int(T)):
        coef = state.theta_curr * (1.0 / state.theta_prev - 1.0)
        lam_hat = state.lambda_curr + coef * (state.lambda_curr - state.lambda_prev)
        try:
            x = np.asarray(problem.smoothed_argmax(lam_hat, state.anchor_x, mu), dtype=float)
            residual = problem.apply_constraint(x)
        except Exception as exc:
            raise OracleError(f"oracle raised {type(exc).__name__}: {exc}", t) from exc
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(residual))):
            raise OracleError("oracle returned non-finite values", t)

        lam_next = lam_hat + step * residual
        inv_theta = 1.0 / state.theta_curr
        state.avg_accum = state.avg_accum + inv_theta * x
        state.weight_accum += inv_theta
        theta_used = state.theta_curr
        state.lambda_prev, state.lambda_curr = state.lambda_curr, lam_next
        state.theta_prev, state.theta_curr = state.theta_curr, theta_next(state.theta_curr)
        if observer is not None:
            observer(PdsStep(t, theta_used, lam_hat, x, lam_next, state))

    return PdsOutput(x_bar=state.x_bar, lambda_final=state.lambda_curr,
                     iterations_run=int(T))


def ramp_horizons(scale, epsilon, num_stages):
    """Per-stage horizons ``ceil(scale / epsilon^0.8 * k / K)``, at least 1."""
    base = scale / epsilon ** 0.8
    return tuple(max(1, math.ceil(base * k / num_stages))
                 for k in range(1, num_stages + 1))


def min_stages(epsilon0, epsilon):
    return math.ceil(math.log2(epsilon0 / epsilon)) + 1


@dataclass(frozen=True)
class HomotopyConfig:
    """Schedule of the homotopy method.

    ``epsilon0=None`` means ``max(2 M, 1)``; ``num_stages=None`` means the
    smallest admissible count ``ceil(log2(epsilon0/epsilon)) + 1``.
    ``horizon`` is a constant per-stage T, an explicit per-stage sequence, or
    ``"ramp"`` (scaled by ``ramp_scale``, default the problem diameter).
    """

    epsilon: float
    epsilon0: Optional[float] = None
    num_stages: Optional[int] = None
    horizon: Union[int, Sequence[int], str] = 100
    ramp_scale: Optional[float] = None
    step_size_mode: StepSizeMode = "verbatim"
    observe_every: int = 1

    def resolve(self, problem):
        """Validate against ``problem`` and return a :class:`Schedule`."""
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        eps0 = self.epsilon0
        if eps0 is None:
            eps0 = max(2.0 * problem.objective_bound_M, 1.0)
        if not eps0 > self.epsilon:
            raise ValueError(f"need epsilon < epsilon0, got {self.epsilon} >= {eps0}")
        k_min = min_stages(eps0, self.epsilon)
        K = k_min if self.num_stages is None else int(self.num_stages)
        if K < k_min:
            raise ValueError(f"num_stages={K} is below the minimum {k_min}")
        if self.step_size_mode not in STEP_SIZE_MODES:
            raise ValueError(f"unknown step size mode {self.step_size_mode!r}")
        if self.observe_every < 1:
            raise ValueError("observe_every must be >= 1")

        if isinstance(self.horizon, str):
            if self.horizon != "ramp":
                raise ValueError(f"unknown horizon schedule {self.horizon!r}")
            scale = problem.diameter_D if self.ramp_scale is None else self.ramp_scale
            horizons = ramp_horizons(scale, self.epsilon, K)
        elif isinstance(self.horizon, (int, np.integer)):
            horizons = (int(self.horizon),) * K
        else:
            horizons = tuple(int(h) for h in self.horizon)
            if len(horizons) != K:
                raise ValueError(f"{len(horizons)} horizons given for {K} stages")
        if min(horizons) < 1:
            raise ValueError("every stage horizon must be >= 1")

        mu0 = eps0 / problem.diameter_D ** 2
        mus = [mu0]
        for _ in range(K):
            mus.append(mus[-1] / 2.0)
        return Schedule(epsilon0=eps0, epsilon=self.epsilon, mu0=mu0,
                        mus=tuple(mus[1:]), horizons=horizons,
                        step_size_mode=self.step_size_mode,
                        observe_every=self.observe_every)


@dataclass(frozen=True)
class Schedule:
    epsilon0: float
    epsilon: float
    mu0: float
    mus: tuple
    horizons: tuple
    step_size_mode: str
    observe_every: int

    @property
    def num_stages(self):
        return len(self.mus)

    @property
    def total_iterations(self):
        return sum(self.horizons)


@dataclass
class HomotopyTrace(Trace):
    """Trace of a homotopy run plus the per-stage outputs."""

    stage_x: list = field(default_factory=list)
    stage_lambda: list = field(default_factory=list)
    schedule: Optional[Schedule] = None


class MetricRecorder:
    """Builds :class:`IterationRecord` rows for a running algorithm.

    Shared by every algorithm so that metrics are computed identically.
    """

    def __init__(self, problem, reference_x=None, dual_evaluator=None,
                 algorithm="homotopy", observe_every=1, wall_clock=True):
        self.problem = problem
        self.reference_x = None if reference_x is None else np.asarray(reference_x, float)
        self.x0 = np.asarray(problem.initial_point, float)
        self.dual_evaluator = dual_evaluator
        self.algorithm = algorithm
        self.observe_every = observe_every
        self.wall_clock = wall_clock
        self.records = []
        self._t0 = time.perf_counter()
        self._count = 0
        if self.reference_x is not None:
            self._denom = float(np.linalg.norm(self.x0 - self.reference_x))

    def due(self):
        """Advance the global counter; True when this iteration is observed."""
        self._count += 1
        return (self._count - 1) % self.observe_every == 0

    def record(self, stage, iteration, mu, x_bar, lam=None):
        rel = None
        if self.reference_x is not None:
            rel = relative_error(x_bar, self.reference_x, denom=self._denom)
        dual = None
        if self.dual_evaluator is not None and lam is not None:
            dual = float(self.dual_evaluator(lam))
        wall = (time.perf_counter() - self._t0) * 1e3 if self.wall_clock else None
        self.records.append(IterationRecord(
            algorithm=self.algorithm, stage=stage, iteration=iteration, mu=mu,
            objective=float(self.problem.objective(x_bar)),
            constraint_norm=self.problem.constraint_norm(x_bar),
            relative_error=rel, dual_value=dual, wall_ms=wall))


def homotopy_run(problem, config, dual_evaluator=None, reference_x=None,
                 stage_observer=None, wall_clock=True, algorithm="homotopy"):
    """Multi-stage smoothing with halving ``mu`` and warm restarts.

    Stage ``k`` runs :func:`pds_run` with ``mu_k = mu_0 / 2^k``, the previous
    stage's multiplier as warm start and its averaged primal as prox anchor.
    Averages restart at every stage. Records carry the restarted average.

    ``stage_observer(k, PdsStep)`` sees every raw iterate; mostly for tests.
    """
    sched = config.resolve(problem)
    rec = MetricRecorder(problem, reference_x, dual_evaluator, algorithm,
                         sched.observe_every, wall_clock)
    lam = problem.zero_dual()
    x_bar = np.array(problem.initial_point, dtype=float)
    trace = HomotopyTrace(algorithm=algorithm, schedule=sched,
                          meta={"step_size_mode": sched.step_size_mode,
                                "epsilon0": sched.epsilon0,
                                "num_stages": sched.num_stages})
    offset = 0
    for k, (mu, T) in enumerate(zip(sched.mus, sched.horizons), start=1):
        def observe(step, k=k, mu=mu, offset=offset):
            if stage_observer is not None:
                stage_observer(k, step)
            if rec.due():
                rec.record(k, offset + step.t, mu, step.state.x_bar, step.lambda_next)

        try:
            out = pds_run(problem, lam, x_bar, mu, T, observer=observe,
                          step_size_mode=sched.step_size_mode)
        except OracleError as exc:
            exc.stage = k
            raise
        lam, x_bar = out.lambda_final, out.x_bar
        trace.stage_x.append(x_bar)
        trace.stage_lambda.append(lam)
        offset += T
    trace.records = rec.records
    trace.final_x = x_bar
    trace.final_lambda = lam
    return trace
