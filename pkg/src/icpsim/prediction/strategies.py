"""Turning workflow-level forecasts into per-function pre-warm counts."""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Iterable, Mapping, Protocol

import numpy as np

from ..errors import DimensionMismatch, EmptyHistory
from ..workflow import ValidatedApplication, WorkflowType
from .history import ConcurrencyHistory

PrewarmPlan = dict[str, int]

# forecasts within this margin above an integer round down instead of up
CEIL_TOLERANCE = 0.05


class Forecaster(Protocol):
    def forecast(self, series: np.ndarray) -> np.ndarray: ...


def ceil_count(x: float, tolerance: float = CEIL_TOLERANCE) -> int:
    if x <= 0:
        return 0
    return max(0, math.ceil(x - tolerance))


def predict_workflow_concurrency(
    hist: ConcurrencyHistory,
    model: Forecaster,
    series_length: int = 36,
    tolerance: float = CEIL_TOLERANCE,
) -> dict[int, int]:
    """Next-interval concurrency per workflow type, clamped at zero and rounded up."""
    if len(hist) == 0:
        raise EmptyHistory("no completed interval to predict from")
    raw = np.asarray(model.forecast(hist.series(series_length)), dtype=float).ravel()
    if raw.shape[0] != hist.S:
        raise DimensionMismatch(f"forecast has {raw.shape[0]} entries for {hist.S} types")
    return {s: ceil_count(float(v), tolerance) for s, v in zip(hist.type_ids, raw)}


def plan_fpcg(forecast: Mapping[int, int], app: ValidatedApplication) -> PrewarmPlan:
    """Every function of the application gets the summed workflow concurrency."""
    total = sum(forecast.values())
    return {fn: total for fn in app.topo_order}


def plan_bpcg(forecast: Mapping[int, int], types: Iterable[WorkflowType]) -> PrewarmPlan:
    """Each function gets the concurrency of the workflow types that invoke it."""
    types = list(types)
    if not types:
        return {}
    by_id = {t.id: t for t in types}
    unknown = set(forecast) - set(by_id)
    if unknown:
        raise DimensionMismatch(f"forecast for unknown workflow types {sorted(unknown)}")
    app = types[0].app
    plan = {fn: 0 for fn in app.topo_order}
    for s, con in forecast.items():
        for fn in by_id[s].members:
            plan[fn] += con
    return plan


def plan_chscg(hist: ConcurrencyHistory, window: int = 6) -> PrewarmPlan:
    """Split the last interval's creation total by recent invocation frequency.

    Counts are ``ceil(q_n * TN)`` computed in exact rational arithmetic.
    """
    if len(hist) == 0:
        raise EmptyHistory("no completed interval for frequency statistics")
    freq = hist.invocation_counts(window)
    seen = sum(freq.values())
    tn = hist.last_total_created()
    if seen == 0:
        return {}
    return {fn: math.ceil(Fraction(c * tn, seen)) for fn, c in sorted(freq.items())}


def chscg_counts(q: Mapping[str, float], tn: int) -> PrewarmPlan:
    """``ceil(q_n * TN)`` for explicit frequency estimates."""
    total = sum(q.values())
    if total and abs(total - 1.0) > 1e-9:
        raise ValueError(f"frequencies sum to {total}, expected 1")
    return {fn: math.ceil(Fraction(p).limit_denominator(10**9) * tn) for fn, p in q.items()}
