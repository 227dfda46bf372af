"""Per-iteration metric records, the trace CSV schema and summary helpers."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

CSV_COLUMNS = ("algorithm", "iteration", "relative_error", "objective",
               "constraint_norm", "dual_value", "wall_ms")
THRESHOLDS = (1e-1, 1e-2, 1e-3)


@dataclass(frozen=True)
class IterationRecord:
    algorithm: str
    stage: int
    iteration: int
    mu: Optional[float]
    objective: float
    constraint_norm: float
    relative_error: Optional[float] = None
    dual_value: Optional[float] = None
    wall_ms: Optional[float] = None


@dataclass
class Trace:
    """Records of one algorithm run; all algorithms share this schema."""

    algorithm: str
    records: list = field(default_factory=list)
    final_x: Optional[np.ndarray] = None
    final_lambda: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def column(self, name):
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name)
                         for r in self.records], dtype=float)


def relative_error(x, x_ref, x0=None, denom=None):
    """``||x - x_ref|| / ||x0 - x_ref||``; pass ``denom`` to skip recomputing it."""
    if denom is None:
        denom = float(np.linalg.norm(np.asarray(x0) - x_ref))
    diff = np.asarray(x) - x_ref
    num = math.sqrt(float(np.vdot(diff, diff)))
    if denom == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / denom


def _fmt(value):
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def trace_rows(trace):
    for r in trace.records:
        yield (r.algorithm, r.iteration, r.relative_error, r.objective,
               r.constraint_norm, r.dual_value, r.wall_ms)


def write_trace_csv(trace, path_or_file):
    """Write ``trace`` in the trace CSV schema; floats use round-trip repr."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in trace_rows(trace):
            w.writerow([_fmt(v) for v in row])
    finally:
        if own:
            fh.close()


class SchemaError(ValueError):
    pass


def read_trace_csv(path):
    """Read a trace CSV into a list of dicts (numeric columns as floats/None)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if tuple(header) != CSV_COLUMNS:
            raise SchemaError(f"{path}: header {header} does not match {list(CSV_COLUMNS)}")
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if len(raw) != len(CSV_COLUMNS):
                raise SchemaError(f"{path}:{lineno}: expected {len(CSV_COLUMNS)} fields")
            row = {"algorithm": raw[0], "iteration": int(raw[1])}
            for key, val in zip(CSV_COLUMNS[2:], raw[2:]):
                row[key] = float(val) if val != "" else None
            rows.append(row)
    return rows


def iterations_to_threshold(trace, thresholds=THRESHOLDS, observe_every=1):
    """First observed iteration whose relative error is <= each threshold.

    With thinning (``observe_every > 1``) the crossing is only known to lie
    in ``(previous observed iteration, observed iteration]``; the value is
    then a ``[low, high]`` pair. ``None`` when never reached.
    """
    out = {}
    for thr in thresholds:
        hit = None
        prev_it = -1
        for r in trace.records:
            if r.relative_error is not None and r.relative_error <= thr:
                hit = r.iteration if observe_every == 1 else [prev_it + 1, r.iteration]
                break
            prev_it = r.iteration
        out[f"{thr:g}"] = hit
    return out


def summarize(trace, observe_every=1):
    last = trace.records[-1] if trace.records else None
    return {
        "algorithm": trace.algorithm,
        "iterations": (last.iteration + 1) if last else 0,
        "final_relative_error": last.relative_error if last else None,
        "final_objective": last.objective if last else None,
        "final_constraint_norm": last.constraint_norm if last else None,
        "iterations_to_threshold": iterations_to_threshold(trace, observe_every=observe_every),
    }


def csv_text(trace):
    buf = io.StringIO()
    write_trace_csv(trace, buf)
    return buf.getvalue()
