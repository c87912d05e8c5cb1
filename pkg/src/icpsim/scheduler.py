"""Policy bundles: the ICPS interval loop and the Keep-Alive and Pool baselines.

A policy object is what :class:`~icpsim.engine.Simulator` consults.  It is
the only holder of policy-side mutable state (pool sizes, predictors); all
decisions are computed from the frozen snapshots the engine hands over.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import asdict, dataclass

from .errors import ConfigError, EmptyHistory
from .placement import PLACEMENTS
from .prediction.history import ConcurrencyHistory
from .prediction.lstm import LstmHyper
from .prediction.predictors import HttpPredictor, LstmPredictor, NaivePredictor, training_series
from .prediction.strategies import (
    PrewarmPlan,
    plan_bpcg,
    plan_chscg,
    plan_fpcg,
    predict_workflow_concurrency,
)
from .routing import ROUTINGS
from .state import InstanceView, Invocation, RoutingDecision, SystemSnapshot

log = logging.getLogger(__name__)

MODES = ("icps", "keep_alive", "pool")
PREDICTIONS = ("fpcg", "bpcg", "chscg", "none")
PREDICTORS = ("naive", "lstm", "http")


@dataclass
class PolicyBundle:
    mode: str = "icps"
    prediction: str = "bpcg"
    placement: str = "ads"
    routing: str = "sfepas"
    pool_size: int = 1
    keep_alive: float | None = None  # overrides the simulation default when set
    predictor: str = "naive"
    predictor_url: str = ""
    series_length: int = 36
    chscg_window: int = 6
    lstm_hidden: int = 64
    lstm_epochs: int = 1000
    lstm_learning_rate: float = 0.001
    lstm_batch_size: int = 32
    lstm_train_fraction: float = 0.5

    def __post_init__(self):
        choices = {
            "mode": MODES,
            "prediction": PREDICTIONS,
            "placement": tuple(PLACEMENTS),
            "routing": tuple(ROUTINGS),
            "predictor": PREDICTORS,
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(key, f"{getattr(self, key)!r} is not one of {', '.join(allowed)}")
        if self.pool_size < 0:
            raise ConfigError("pool_size", "must be >= 0")
        if self.keep_alive is not None and self.keep_alive < 0:
            raise ConfigError("keep_alive_ms", "must be >= 0")
        if self.predictor == "http" and not self.predictor_url:
            raise ConfigError("predictor_url", "required when predictor = http")

    @property
    def label(self) -> str:
        if self.mode == "icps":
            return f"icps({self.prediction},{self.placement},{self.routing})"
        return self.mode


def alive_counts(snap: SystemSnapshot) -> Counter:
    return Counter(i.function for i in snap.instances if not i.released)


def icps_tick(
    hist: ConcurrencyHistory, snap: SystemSnapshot, bundle: PolicyBundle, predictor, types
) -> PrewarmPlan:
    """Pre-warm creations for the coming interval.

    The strategy plan is reconciled against live instances: only the
    shortfall ``max(0, plan - alive)`` is created, surplus is left to expire.
    """
    if bundle.prediction == "none":
        return {}
    try:
        if bundle.prediction == "chscg":
            plan = plan_chscg(hist, bundle.chscg_window)
        else:
            forecast = predict_workflow_concurrency(hist, predictor, bundle.series_length)
            if bundle.prediction == "fpcg":
                plan = plan_fpcg(forecast, snap.app)
            else:
                plan = plan_bpcg(forecast, types)
    except EmptyHistory:
        return {}
    alive = alive_counts(snap)
    out = {}
    for fn, want in plan.items():
        if snap.app.functions[fn].is_marker:
            continue
        need = want - alive[fn]
        if need > 0:
            out[fn] = need
    return out


class Policy:
    """Shared plumbing: placement/routing lookup and keep-alive expiry."""

    release_after_run = False

    def __init__(self, bundle: PolicyBundle, keep_alive: float = 10_000.0):
        self.bundle = bundle
        self.keep_alive = bundle.keep_alive if bundle.keep_alive is not None else keep_alive
        self._place = PLACEMENTS[bundle.placement]
        self.types = []

    def describe(self) -> dict:
        d = asdict(self.bundle)
        d["keep_alive"] = self.keep_alive
        d["label"] = self.bundle.label
        return d

    def setup(self, sim) -> None:
        self.types = sim.types

    def place(self, inst, snap: SystemSnapshot):
        return self._place(inst, snap)

    def route(self, inv: Invocation, snap: SystemSnapshot, retry: bool) -> RoutingDecision:
        raise NotImplementedError

    def on_tick(self, index: int, hist: ConcurrencyHistory, snap: SystemSnapshot) -> PrewarmPlan:
        return {}

    def after_assign(self, inv: Invocation, consumed_idle: bool, snapshot) -> list[str]:
        return []

    def may_expire(self, inst: InstanceView, snap: SystemSnapshot) -> bool:
        return True


class IcpsPolicy(Policy):
    def __init__(self, bundle: PolicyBundle, keep_alive: float = 10_000.0, predictor=None):
        super().__init__(bundle, keep_alive)
        self._route = ROUTINGS[bundle.routing]
        self.release_after_run = bundle.routing == "mncpas"
        self.predictor = predictor

    def setup(self, sim) -> None:
        super().setup(sim)
        if self.predictor is not None:
            return
        b = self.bundle
        if b.predictor == "naive":
            self.predictor = NaivePredictor()
        elif b.predictor == "http":
            self.predictor = HttpPredictor(b.predictor_url)
        else:
            hyper = LstmHyper(
                learning_rate=b.lstm_learning_rate,
                batch_size=b.lstm_batch_size,
                epochs=b.lstm_epochs,
                series_length=b.series_length,
                seed=sim.config.seed,
            )
            ids = [t.id for t in sim.types]
            series = training_series(sim.requests, ids, sim.config.interval, b.lstm_train_fraction)
            self.predictor = LstmPredictor(len(ids), b.lstm_hidden, hyper).fit(series)

    def route(self, inv, snap, retry):
        return self._route(inv, snap, retry)

    def on_tick(self, index, hist, snap):
        return icps_tick(hist, snap, self.bundle, self.predictor, self.types)


def route_warm_first(inv: Invocation, snap: SystemSnapshot, retry: bool = False) -> RoutingDecision:
    """Reuse any idle instance of the function, otherwise cold start a new one."""
    idle = [i.id for i in snap.instances_of(inv.function) if i.idle]
    if idle:
        return RoutingDecision.assign(min(idle))
    return RoutingDecision.new()


class KeepAlivePolicy(Policy):
    """No pre-warming; instances linger for the keep-alive window after use."""

    def route(self, inv, snap, retry):
        return route_warm_first(inv, snap, retry)


class PoolPolicy(Policy):
    """Warm pool per function, topped up on consumption and resized each interval.

    The size doubles after an interval with pool misses and halves (not
    below one) after an interval in which the pool went untouched.
    """

    def __init__(self, bundle: PolicyBundle, keep_alive: float = 10_000.0):
        super().__init__(bundle, keep_alive)
        self.sizes: dict[str, int] = {}
        self.misses: Counter = Counter()
        self.consumed: Counter = Counter()
        self.size_history: list[dict[str, int]] = []

    def setup(self, sim) -> None:
        super().setup(sim)
        self.sizes = {
            fn: self.bundle.pool_size for fn, spec in sim.app.functions.items() if not spec.is_marker
        }

    def adapt(self) -> None:
        for fn, size in self.sizes.items():
            if size == 0:
                continue
            if self.misses[fn] > 0:
                self.sizes[fn] = size * 2
            elif self.consumed[fn] == 0:
                self.sizes[fn] = max(1, size // 2)
        self.misses.clear()
        self.consumed.clear()

    @staticmethod
    def _members(snap: SystemSnapshot, fn: str) -> int:
        # idle instances plus creations nobody is waiting on
        return sum(
            1
            for i in snap.instances_of(fn)
            if i.idle or (i.queued == 0 and i.state.value in ("Undeployed", "Creating"))
        )

    def on_tick(self, index, hist, snap):
        if index > 0:
            self.adapt()
        self.size_history.append(dict(self.sizes))
        plan = {}
        for fn, size in self.sizes.items():
            need = size - self._members(snap, fn)
            if need > 0:
                plan[fn] = need
        return plan

    def route(self, inv, snap, retry):
        d = route_warm_first(inv, snap, retry)
        if d.action == "assign":
            self.consumed[inv.function] += 1
        else:
            self.misses[inv.function] += 1
        return d

    def after_assign(self, inv, consumed_idle, snapshot):
        if not consumed_idle:
            return []
        size = self.sizes.get(inv.function, 0)
        if self._members(snapshot(), inv.function) < size:
            return [inv.function]
        return []

    def may_expire(self, inst, snap):
        idle = sum(1 for i in snap.instances_of(inst.function) if i.idle)
        return idle > self.sizes.get(inst.function, 0)


def make_policy(bundle: PolicyBundle, keep_alive: float = 10_000.0, predictor=None) -> Policy:
    if bundle.mode == "icps":
        return IcpsPolicy(bundle, keep_alive, predictor)
    if bundle.mode == "keep_alive":
        return KeepAlivePolicy(bundle, keep_alive)
    if bundle.mode == "pool":
        return PoolPolicy(bundle, keep_alive)
    raise ConfigError("mode", f"unknown mode {bundle.mode!r}")
