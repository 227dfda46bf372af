"""
Experiment harness: instance generation, algorithm runs, CSV/JSON output.

An experiment is described by a flat, versioned key-value document (JSON).
Unknown keys are rejected so that a config file always means one thing.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import baselines
from .geomedian import (GeoMedianInstance, build_graph, consensus_solution, dual_value,
                        dumps_instance, load_instance, make_problem, metropolis_hastings,
                        sigma_max_AtA)
from .metrics import CSV_COLUMNS, SchemaError, read_trace_csv, summarize, write_trace_csv
from .simnet import run_distributed
from .solver import HomotopyConfig, homotopy_run

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
GRAPH_STREAM, DATA_STREAM = 0, 1
ALGORITHMS = ("homotopy",) + baselines.ALGORITHMS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat experiment description. See README for the meaning of each key."""

    version: int = CONFIG_VERSION
    # instance
    n: int = 20
    d: int = 10
    connectivity_ratio: float = 0.15
    seed: int = 0
    data_low: float = 0.0
    data_high: float = 10.0
    D_mode: str = "ten_sqrt_d"
    D: Optional[float] = None
    instance_path: Optional[str] = None
    # algorithms
    algorithms: tuple = ("homotopy",)
    epsilon: float = 1e-3
    epsilon0_mode: str = "theory"
    epsilon0: Optional[float] = None
    num_stages: Optional[int] = None
    horizon: Union[str, int] = "ramp"
    step_size_mode: str = "verbatim"
    execution: str = "centralized"
    baseline_iterations: Optional[int] = None
    dsm_alpha: float = 10.0
    pg_extra_alpha: Optional[float] = None
    admm_rho: Optional[float] = None
    admm_penalty: float = 1.0
    smoothing_mu: float = 1e-5
    reference_tol: float = 1e-10
    # output
    output_dir: Optional[str] = None
    observe_every: int = 1
    wall_clock: bool = True
    record_dual: bool = False

    def __post_init__(self):
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        self.validate()

    def validate(self):
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version!r}")
        if self.n < 3 or self.d < 1:
            raise ConfigError("need n >= 3 and d >= 1")
        if not self.data_low < self.data_high:
            raise ConfigError("data_low must be below data_high")
        if self.D_mode not in ("ten_sqrt_d", "explicit"):
            raise ConfigError(f"D_mode must be 'ten_sqrt_d' or 'explicit', got {self.D_mode!r}")
        if self.D_mode == "explicit" and not (self.D and self.D > 0):
            raise ConfigError("D_mode 'explicit' needs a positive D")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad:
            raise ConfigError(f"unknown algorithms {bad}; choose from {list(ALGORITHMS)}")
        if self.epsilon0_mode not in ("theory", "explicit"):
            raise ConfigError("epsilon0_mode must be 'theory' or 'explicit'")
        if self.epsilon0_mode == "explicit" and not (self.epsilon0 and self.epsilon0 > 0):
            raise ConfigError("epsilon0_mode 'explicit' needs a positive epsilon0")
        if not (self.horizon == "ramp" or (isinstance(self.horizon, int) and self.horizon >= 1)):
            raise ConfigError("horizon must be 'ramp' or a positive integer")
        if self.step_size_mode not in ("verbatim", "scaled"):
            raise ConfigError("step_size_mode must be 'verbatim' or 'scaled'")
        if self.execution not in ("centralized", "distributed"):
            raise ConfigError("execution must be 'centralized' or 'distributed'")
        if self.observe_every < 1:
            raise ConfigError("observe_every must be >= 1")

    @property
    def radius(self):
        return 10.0 * math.sqrt(self.d) if self.D_mode == "ten_sqrt_d" else float(self.D)

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        if "version" not in doc:
            raise ConfigError("config must state its version")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(doc)

    def to_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["algorithms"] = list(self.algorithms)
        return out

    def homotopy_config(self, radius=None):
        """Solver schedule; the ramp is scaled by the ball radius."""
        return HomotopyConfig(
            epsilon=self.epsilon,
            epsilon0=self.epsilon0 if self.epsilon0_mode == "explicit" else None,
            num_stages=self.num_stages,
            horizon=self.horizon,
            ramp_scale=self.radius if radius is None else radius,
            step_size_mode=self.step_size_mode,
            observe_every=self.observe_every)


def generate_instance(config, path=None):
    """Random instance from ``config``; written to ``path`` when given.

    The graph and the data come from independent streams of ``config.seed``.
    """
    graph = build_graph(config.n, config.connectivity_ratio, [config.seed, GRAPH_STREAM])
    graph = type(graph)(graph.n, graph.adjacency, config.connectivity_ratio, config.seed)
    rng = np.random.default_rng([config.seed, DATA_STREAM])
    points = rng.uniform(config.data_low, config.data_high, size=(config.n, config.d))
    inst = GeoMedianInstance(points, config.radius, graph, metropolis_hastings(graph))
    if path is not None:
        try:
            Path(path).write_text(dumps_instance(
                inst, data_range=(config.data_low, config.data_high)))
        except OSError as exc:
            raise OSError(f"cannot write instance to {path}: {exc}") from exc
    return inst


@dataclass
class ExperimentResult:
    instance: GeoMedianInstance
    traces: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    @property
    def exit_code(self):
        return 1 if self.errors else 0


def _run_one(name, config, instance, reference_x, dual_eval, sigma, hom_iters):
    if name == "homotopy":
        hcfg = config.homotopy_config(instance.radius_D)
        if config.execution == "distributed":
            return run_distributed(instance, hcfg, reference_x=reference_x,
                                   dual_evaluator=dual_eval, wall_clock=config.wall_clock,
                                   sigma_max=sigma)
        return homotopy_run(make_problem(instance, sigma_max=sigma), hcfg,
                            dual_evaluator=dual_eval, reference_x=reference_x,
                            wall_clock=config.wall_clock)
    iters = config.baseline_iterations or hom_iters
    alpha = {"dsm": config.dsm_alpha, "pg_extra": config.pg_extra_alpha}.get(name)
    bcfg = baselines.BaselineConfig(
        algorithm=name, max_iter=iters, step_size_alpha=alpha, admm_rho=config.admm_rho,
        admm_penalty=config.admm_penalty, smoothing_mu=config.smoothing_mu)
    kw = dict(reference_x=reference_x, observe_every=config.observe_every,
              wall_clock=config.wall_clock)
    if name == "fixed_smoothing":
        kw["dual_evaluator"] = dual_eval
    return baselines.run_baseline(instance, bcfg, **kw)


def run_experiment(config, output_dir=None):
    """Run every requested algorithm on one instance from ``x0 = b``.

    Writes ``instance.json``, ``<algorithm>.csv`` and ``summary.json`` to the
    output directory when one is given (argument or config). A failing
    algorithm is recorded in ``errors`` and does not stop the others.
    """
    out = output_dir or config.output_dir
    if out is not None:
        os.makedirs(out, exist_ok=True)
    if config.instance_path:
        instance = load_instance(config.instance_path)
    else:
        instance = generate_instance(
            config, None if out is None else os.path.join(out, "instance.json"))
    if instance.radius_D < instance.theory_radius():
        log.warning("D=%g is below 2n max||b_i - b_j||=%g; the dual error bound "
                    "is not certified for this instance",
                    instance.radius_D, instance.theory_radius())

    result = ExperimentResult(instance)
    summary = {"config": config.to_dict(), "n": instance.n, "d": instance.d,
               "D": instance.radius_D, "algorithms": {}}
    if config.algorithms:
        reference_x, f_star = consensus_solution(instance, tol=config.reference_tol)
        summary["f_star"] = f_star
        needs_sigma = config.step_size_mode == "scaled"
        sigma = sigma_max_AtA(instance) if needs_sigma else None
        dual_eval = (lambda lam: dual_value(instance, lam)) if config.record_dual else None
        hom_iters = config.homotopy_config(instance.radius_D).resolve(make_problem(instance)).total_iterations

        for name in config.algorithms:
            try:
                trace = _run_one(name, config, instance, reference_x, dual_eval, sigma, hom_iters)
            except Exception as exc:  # isolate per-algorithm failures
                log.error("%s failed: %s", name, exc)
                result.errors[name] = f"{type(exc).__name__}: {exc}"
                summary["algorithms"][name] = {"algorithm": name, "error": result.errors[name]}
                continue
            result.traces[name] = trace
            summary["algorithms"][name] = summarize(trace, config.observe_every)
            if out is not None:
                write_trace_csv(trace, os.path.join(out, f"{name}.csv"))
    result.summary = summary
    if out is not None:
        with open(os.path.join(out, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=1, sort_keys=True)
            fh.write("\n")
    return result


PLOT_COLUMNS = ("algorithm", "iteration", "relative_error", "objective", "constraint_norm")


def log_grid(last, points):
    """Sorted unique iteration indices, log-spaced on ``[0, last]``, endpoints kept."""
    if last <= 0:
        return np.array([0])
    grid = np.unique(np.round(np.logspace(0, math.log10(last + 1), points)).astype(int) - 1)
    return np.unique(np.concatenate(([0], grid, [last])))


def emit_plot_data(csv_paths, points=200):
    """Merge trace CSVs and thin each algorithm's rows to a log-spaced grid.

    Returns a list of row dicts with :data:`PLOT_COLUMNS`. Every file is
    checked; schema problems of all files are reported together.
    """
    problems = []
    per_file = []
    for path in csv_paths:
        try:
            per_file.append(read_trace_csv(path))
        except (SchemaError, OSError, ValueError) as exc:
            problems.append(str(exc))
    if problems:
        raise SchemaError("; ".join(problems))

    by_alg = {}
    for rows in per_file:
        for row in rows:
            by_alg.setdefault(row["algorithm"], []).append(row)
    merged = []
    for alg in sorted(by_alg):
        rows = sorted(by_alg[alg], key=lambda r: r["iteration"])
        its = np.array([r["iteration"] for r in rows])
        keep = set(np.searchsorted(its, log_grid(int(its[-1]), points)).tolist())
        keep.update((0, len(rows) - 1))
        for idx in sorted(k for k in keep if k < len(rows)):
            merged.append({c: rows[idx][c] for c in PLOT_COLUMNS})
    return merged


def write_plot_data(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_COLUMNS)
        for r in rows:
            w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                        for c in PLOT_COLUMNS])


__all__ = ["ExperimentConfig", "ConfigError", "generate_instance", "run_experiment",
           "emit_plot_data", "write_plot_data", "CSV_COLUMNS"]
