"""Deterministic discrete-event core of the simulator.

One :class:`Simulator` owns all mutable cluster state.  Events are applied
in (time, kind priority, sequence) order; every state change is appended to
an :class:`EventLog` from which all metrics can be recomputed.
"""

from __future__ import annotations

import enum
import heapq
import json
import logging
from collections import Counter, deque
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, NamedTuple, Sequence

from .cluster import (
    InstanceRecord,
    InstanceState,
    NetworkModel,
    Trigger,
    WorkerNode,
    instance_costs,
    transfer_latency,
    transition,
)
from .errors import PastEvent, SimulationError
from .prediction.history import ConcurrencyHistory
from .state import (
    DEFER,
    NEW_NODE,
    InstanceView,
    Invocation,
    NodeView,
    SystemSnapshot,
)
from .workflow import ValidatedApplication, WorkflowRequest, WorkflowType, critical_path_exec_time

log = logging.getLogger(__name__)


class EventKind(enum.IntEnum):
    # value doubles as the priority among simultaneous events
    IntervalTick = 0
    KeepAliveExpire = 1
    CreationComplete = 2
    FunctionComplete = 3
    DataArrival = 4
    WorkflowArrival = 5


class Event(NamedTuple):
    time: float
    seq: int
    kind: EventKind
    payload: tuple = ()

    def key(self):
        return (self.time, int(self.kind), self.seq)


class EventQueue:
    """Priority queue ordered by (time, kind priority, insertion sequence)."""

    def __init__(self):
        self._heap: list = []
        self._seq = 0
        self.clock = 0.0

    def __len__(self) -> int:
        return len(self._heap)

    def push(self, time: float, kind: EventKind, payload: tuple = ()) -> Event:
        ev = Event(float(time), self._seq, kind, payload)
        self.schedule(ev)
        return ev

    def schedule(self, event: Event) -> None:
        if event.time < self.clock:
            raise PastEvent(f"{event.kind.name} at {event.time} < clock {self.clock}")
        self._seq = max(self._seq, event.seq) + 1
        heapq.heappush(self._heap, (event.key(), event))

    def pop(self) -> Event:
        _, ev = heapq.heappop(self._heap)
        self.clock = ev.time
        return ev


@dataclass
class SimConfig:
    duration: float = 800_000.0
    interval: float = 60_000.0
    keep_alive: float = 10_000.0
    network: NetworkModel = field(default_factory=NetworkModel)
    node_count: int = 10
    node_memory: float | Sequence[float] = 1000.0
    seed: int = 0
    allow_new_nodes: bool = True
    check_invariants: bool = True

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be > 0")
        if self.interval <= 0:
            raise ValueError("interval must be > 0")
        if self.node_count < 1:
            raise ValueError("node_count must be >= 1")
        if self.keep_alive < 0:
            raise ValueError("keep_alive must be >= 0")

    def capacity(self, index: int) -> float:
        """Memory of the node with 0-based ``index``; extra nodes reuse the last size."""
        if isinstance(self.node_memory, (int, float)):
            return float(self.node_memory)
        sizes = list(self.node_memory)
        return float(sizes[min(index, len(sizes) - 1)])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["network"] = {"delay": self.network.delay}
        if not isinstance(self.node_memory, (int, float)):
            d["node_memory"] = [float(x) for x in self.node_memory]
        return d


class EventLog:
    """Append-only record stream plus the engine's online summary.

    Each record is a flat dict with ``time``, ``seq`` (record ordinal) and
    ``kind``; the first record is a header describing the run.
    """

    def __init__(self, header: dict | None = None):
        self.records: list[dict] = []
        self.online: dict[str, Any] = {}
        if header is not None:
            self.append(0.0, "header", **header)

    def append(self, time: float, kind: str, **payload) -> None:
        rec = {"time": time, "seq": len(self.records), "kind": kind}
        rec.update(payload)
        self.records.append(rec)

    def __iter__(self):
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def header(self) -> dict:
        return self.records[0]

    def of_kind(self, *kinds: str) -> list[dict]:
        return [r for r in self.records if r["kind"] in kinds]

    def to_ndjson(self) -> str:
        lines = [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in self.records]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_ndjson())

    @classmethod
    def from_ndjson(cls, text: str) -> "EventLog":
        out = cls()
        out.records = [json.loads(line) for line in text.splitlines() if line.strip()]
        return out


@dataclass
class _InstanceRuntime:
    queue: deque = field(default_factory=deque)
    current: Invocation | None = None
    waiting_data: bool = False
    busy_until: float = 0.0
    reserved_for: int | None = None
    released: bool = False
    token: int = 0
    hint: int | None = None


@dataclass
class _RequestState:
    request: WorkflowRequest
    exec_time: float
    completed: set = field(default_factory=set)
    finish: dict = field(default_factory=dict)
    node: dict = field(default_factory=dict)
    end: float | None = None


class Simulator:
    """Runs one workload against one policy.

    ``policy`` supplies ``on_tick``, ``route``, ``place``, ``after_assign``,
    ``may_expire``, ``keep_alive`` and ``release_after_run``; see
    :mod:`icpsim.scheduler`.
    """

    def __init__(
        self,
        config: SimConfig,
        app: ValidatedApplication,
        types: Sequence[WorkflowType],
        requests: Sequence[WorkflowRequest],
        policy,
    ):
        self.config = config
        self.app = app
        self.types = list(types)
        self.requests = list(requests)
        if any(b.arrival < a.arrival for a, b in zip(self.requests, self.requests[1:])):
            raise SimulationError("requests must be sorted by arrival time")
        self.policy = policy
        self.queue = EventQueue()
        self.nodes: list[WorkerNode] = [
            WorkerNode(i + 1, config.capacity(i)) for i in range(config.node_count)
        ]
        self.instances: dict[int, InstanceRecord] = {}
        self._rt: dict[int, _InstanceRuntime] = {}
        self._views: dict[int, InstanceView] = {}
        self._req: dict[int, _RequestState] = {}
        self._critical = {t.id: critical_path_exec_time(t) for t in self.types}
        self.deferred: list[Invocation] = []
        self.pending_placement: list[int] = []
        self.bindings: dict[int, int] = {}
        self.history = ConcurrencyHistory(tuple(t.id for t in self.types))
        self._arrivals: Counter = Counter()
        self._invocations: Counter = Counter()
        self._creations: Counter = Counter()
        self._cold: set[tuple[int, str]] = set()
        self._outstanding = 0
        self._freed = False
        self._dirty: set[int] = set()
        self.online = Counter()
        self.log = EventLog(self._header())

    @property
    def clock(self) -> float:
        return self.queue.clock

    def _header(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "application": self.app.to_dict(),
            "types": [{"id": t.id, "members": sorted(t.members)} for t in self.types],
            "policy": self.policy.describe(),
            "requests": len(self.requests),
        }

    # ------------------------------------------------------------------ views

    def _touch(self, iid: int) -> None:
        inst = self.instances[iid]
        if inst.state is InstanceState.KILLED:
            self._views.pop(iid, None)
            return
        rt = self._rt[iid]
        queued_work = sum(inv.wtype.function(inv.function).exec_time for inv in rt.queue)
        queued = len(rt.queue)
        if rt.waiting_data:
            queued += 1
            queued_work += inst.function.exec_time
        self._views[iid] = InstanceView(
            iid,
            inst.function.id,
            inst.node,
            inst.state,
            inst.memory,
            queued,
            queued_work,
            rt.busy_until,
            rt.reserved_for,
            rt.released,
        )

    def snapshot(self) -> SystemSnapshot:
        return SystemSnapshot(
            clock=self.clock,
            nodes=tuple(NodeView(n.id, n.capacity, n.used) for n in self.nodes),
            instances=tuple(self._views.values()),
            app=self.app,
            pending=len(self.deferred),
            allow_new_nodes=self.config.allow_new_nodes,
            bindings=dict(self.bindings),
        )

    # ------------------------------------------------------------- lifecycle

    def _transition(self, iid: int, trigger: Trigger) -> None:
        inst = self.instances[iid]
        before = inst.state
        transition(inst, trigger, self.clock)
        self.log.append(
            self.clock,
            "state",
            instance=iid,
            function=inst.function.id,
            node=inst.node,
            memory=inst.memory,
            src=before.value,
            dst=inst.state.value,
            trigger=trigger.value,
        )

    def _node(self, node_id: int) -> WorkerNode:
        return self.nodes[node_id - 1]

    def _new_instance(
        self, fn: str, reason: str, node: int | None = None, reserved_for: int | None = None
    ) -> int:
        iid = len(self.instances) + 1
        spec = self.app.functions[fn]
        self.instances[iid] = InstanceRecord(iid, spec, last_state_change=self.clock)
        self._rt[iid] = _InstanceRuntime(reserved_for=reserved_for, hint=node)
        self._creations[fn] += 1
        self.log.append(self.clock, "instance", instance=iid, function=fn, reason=reason)
        self._touch(iid)
        if not self._place(iid):
            self.pending_placement.append(iid)
        return iid

    def _place(self, iid: int, retry: bool = False) -> bool:
        inst = self.instances[iid]
        rt = self._rt[iid]
        if not self.config.allow_new_nodes and all(n.free < inst.memory for n in self.nodes):
            # every strategy defers when nothing fits; skip building a snapshot
            target = DEFER
        elif rt.hint is not None:
            target = rt.hint if self._node(rt.hint).used + inst.memory <= self._node(rt.hint).capacity else DEFER
        else:
            target = self.policy.place(inst, self.snapshot()).target
        if target == NEW_NODE:
            cap = self.config.capacity(len(self.nodes))
            if inst.memory > cap:
                raise SimulationError(f"function {inst.function.id} needs more memory than a node offers")
            self.nodes.append(WorkerNode(len(self.nodes) + 1, cap))
            self.log.append(self.clock, "node_added", node=len(self.nodes), capacity=cap)
            target = len(self.nodes)
        if target == DEFER:
            if not retry:
                self.log.append(self.clock, "placement_deferred", instance=iid, function=inst.function.id)
            return False
        node = self._node(target)
        node.admit(inst)
        self._dirty.add(node.id)
        inst.node = node.id
        self._transition(iid, Trigger.DEPLOY)
        rt.busy_until = self.clock + inst.function.cold_start_time
        self.queue.push(rt.busy_until, EventKind.CreationComplete, (iid,))
        self._touch(iid)
        return True

    def _retry_placements(self) -> None:
        waiting, self.pending_placement = self.pending_placement, []
        for iid in waiting:
            if not self._place(iid, retry=True):
                self.pending_placement.append(iid)

    def _go_idle(self, iid: int, at: float | None = None) -> None:
        rt = self._rt[iid]
        rt.token += 1
        if at is None:
            at = self.clock + (0.0 if rt.released else self.policy.keep_alive)
        self.queue.push(at, EventKind.KeepAliveExpire, (iid, rt.token))

    # --------------------------------------------------------------- routing

    def _route(self, inv: Invocation, retry: bool) -> None:
        d = self.policy.route(inv, self.snapshot(), retry)
        if d.bind and d.node is not None:
            self.bindings[inv.request] = d.node
            self.log.append(self.clock, "bind", request=inv.request, node=d.node)
        if d.action == "assign":
            self._assign(inv, d.instance)
        elif d.action == "create":
            iid = self._new_instance(inv.function, "cold", node=d.node)
            self._mark_cold(inv, iid)
            self._assign(inv, iid)
        elif d.action == "defer":
            self.deferred.append(inv)
            if d.create:
                iid = self._new_instance(inv.function, "cold")
                self._mark_cold(inv, iid)
        else:
            raise SimulationError(f"unknown routing action {d.action!r}")
        for succ in d.prewarm:
            self._new_instance(succ, "affinity", node=d.node, reserved_for=inv.request)

    def _mark_cold(self, inv: Invocation, iid: int | None) -> None:
        key = (inv.request, inv.function)
        if key in self._cold:
            return
        self._cold.add(key)
        self.online["cold_starts"] += 1
        self.log.append(self.clock, "cold_start", request=inv.request, function=inv.function, instance=iid)

    def _assign(self, inv: Invocation, iid: int) -> None:
        inst = self.instances[iid]
        rt = self._rt[iid]
        if inst.function.id != inv.function or not inst.alive or rt.released:
            raise SimulationError(f"invalid assignment of {inv.function} to instance {iid}")
        was_idle = inst.state is InstanceState.PAUSED and rt.current is None and not rt.queue
        if inst.state in (InstanceState.UNDEPLOYED, InstanceState.CREATING):
            self._mark_cold(inv, iid)
        rt.queue.append(inv)
        rt.token += 1  # cancels a pending keep-alive expiry
        self.log.append(self.clock, "assign", request=inv.request, function=inv.function, instance=iid)
        if inst.state is InstanceState.PAUSED and rt.current is None:
            self._try_start(iid)
        else:
            self._touch(iid)
        for fn in self.policy.after_assign(inv, was_idle, self.snapshot):
            self._new_instance(fn, "replenish")

    def _try_start(self, iid: int) -> None:
        inst = self.instances[iid]
        rt = self._rt[iid]
        inv = rt.queue.popleft()
        rt.current = inv
        rs = self._req[inv.request]
        ready = self.clock
        for p in inv.wtype.preds[inv.function]:
            arrive = rs.finish[p] + transfer_latency(self.config.network, rs.node[p], inst.node)
            ready = max(ready, arrive)
        if ready > self.clock:
            rt.waiting_data = True
            rt.busy_until = ready
            self.queue.push(ready, EventKind.DataArrival, (inv.request, inv.function, iid))
            self._touch(iid)
        else:
            self._start(iid)

    def _start(self, iid: int) -> None:
        inst = self.instances[iid]
        rt = self._rt[iid]
        inv = rt.current
        rs = self._req[inv.request]
        rt.waiting_data = False
        self._transition(iid, Trigger.INVOKE)
        for p in inv.wtype.preds[inv.function]:
            lat = transfer_latency(self.config.network, rs.node[p], inst.node)
            if lat > 0:
                self.online["transfer_latency"] += lat
                self.log.append(self.clock, "transfer", request=inv.request, src=p, dst=inv.function, latency=lat)
        self.log.append(self.clock, "start", request=inv.request, function=inv.function, instance=iid, node=inst.node)
        rt.busy_until = self.clock + inst.function.exec_time
        self.queue.push(rt.busy_until, EventKind.FunctionComplete, (iid, inv.request, inv.function))
        self._touch(iid)

    def _reroute_deferred(self) -> None:
        if not self.deferred:
            return
        parked, self.deferred = self.deferred, []
        stale = True
        for inv in parked:
            if stale:
                idle = {v.function for v in self._views.values() if v.idle}
                live = {v.function for v in self._views.values() if not v.released and v.reserved_for is None}
                stale = False
            # a parked invocation can only move once an instance of its
            # function is idle or none is left at all
            if inv.function not in idle and inv.function in live:
                self.deferred.append(inv)
                continue
            self._route(inv, retry=True)
            stale = True

    # ------------------------------------------------------------- requests

    def _make_ready(self, rs: _RequestState, fn: str) -> None:
        spec = self.app.functions[fn]
        if spec.is_marker:
            self.log.append(self.clock, "start", request=rs.request.id, function=fn, instance=None, node=None)
            self.log.append(self.clock, "finish", request=rs.request.id, function=fn, instance=None, node=None)
            self._function_done(rs, fn, None)
            return
        self._invocations[fn] += 1
        self._route(Invocation(rs.request.id, fn, rs.request.type, self.clock), retry=False)

    def _function_done(self, rs: _RequestState, fn: str, node: int | None) -> None:
        rs.completed.add(fn)
        rs.finish[fn] = self.clock
        rs.node[fn] = node
        wtype = rs.request.type
        if fn == self.app.exit:
            rs.end = self.clock
            self._outstanding -= 1
            self.online["sum_exec"] += rs.exec_time
            self.online["sum_resp"] += rs.end - rs.request.arrival
            self.log.append(self.clock, "request_end", request=rs.request.id, arrival=rs.request.arrival)
            self.bindings.pop(rs.request.id, None)
            return
        for succ in wtype.succs[fn]:
            if all(p in rs.completed for p in wtype.preds[succ]):
                self._make_ready(rs, succ)

    # --------------------------------------------------------------- events

    def _on_tick(self, index: int) -> None:
        if index > 0:
            self.history.record(self._arrivals, self._invocations, self._creations)
            self._arrivals, self._invocations, self._creations = Counter(), Counter(), Counter()
        plan = self.policy.on_tick(index, self.history, self.snapshot())
        for fn, count in plan.items():
            if count > 0:
                self.log.append(self.clock, "prewarm", function=fn, count=count)
            for _ in range(count):
                self._new_instance(fn, "prewarm")
        nxt = (index + 1) * self.config.interval
        if nxt < self.config.duration:
            self.queue.push(nxt, EventKind.IntervalTick, (index + 1,))

    def _on_arrival(self, idx: int) -> None:
        req = self.requests[idx]
        self._arrivals[req.type_id] += 1
        rs = _RequestState(req, self._critical[req.type_id])
        self._req[req.id] = rs
        self._make_ready(rs, self.app.entry)

    def _on_creation_complete(self, iid: int) -> None:
        self._transition(iid, Trigger.CREATION_COMPLETE)
        rt = self._rt[iid]
        if rt.queue:
            self._try_start(iid)
        else:
            self._touch(iid)
            self._go_idle(iid)
        self._reroute_deferred()

    def _on_function_complete(self, iid: int, request: int, fn: str) -> None:
        self._transition(iid, Trigger.COMPLETE)
        inst = self.instances[iid]
        rt = self._rt[iid]
        rt.current = None
        rt.busy_until = self.clock
        self.log.append(self.clock, "finish", request=request, function=fn, instance=iid, node=inst.node)
        requeue = []
        if self.policy.release_after_run:
            rt.released = True
            requeue, rt.queue = list(rt.queue), deque()
            self._touch(iid)
            self._go_idle(iid)
        elif rt.queue:
            self._try_start(iid)
        else:
            self._touch(iid)
            self._go_idle(iid)
        for inv in requeue:
            self._route(inv, retry=False)
        self._reroute_deferred()
        self._function_done(self._req[request], fn, inst.node)

    def _on_data_arrival(self, request: int, fn: str, iid: int) -> None:
        self._start(iid)

    def _on_expire(self, iid: int, token: int) -> bool:
        inst = self.instances[iid]
        rt = self._rt[iid]
        if token != rt.token or inst.state is not InstanceState.PAUSED or rt.current or rt.queue:
            return False
        if not rt.released and self.clock < self.config.duration:
            if not self.policy.may_expire(self._views[iid], self.snapshot()):
                # the veto can only change once pool sizes are revised at a tick
                tick = (int(self.clock // self.config.interval) + 1) * self.config.interval
                self._go_idle(iid, max(tick, self.clock + self.policy.keep_alive))
                return False
        self.log.append(self.clock, EventKind.KeepAliveExpire.name, instance=iid)
        self._kill(iid)
        return True

    def _kill(self, iid: int) -> None:
        inst = self.instances[iid]
        self._transition(iid, Trigger.EXPIRE)
        self._node(inst.node).release(inst)
        self._dirty.add(inst.node)
        self._touch(iid)
        self._freed = True

    # ------------------------------------------------------------------ run

    def _check(self) -> None:
        """Memory invariant after an event; residents are re-summed only on
        nodes whose residency changed."""
        for node in self.nodes:
            if node.used > node.capacity + 1e-9 or node.used < -1e-9:
                raise SimulationError(
                    f"node {node.id} over capacity at t={self.clock}: used={node.used} capacity={node.capacity}"
                )
        for nid in self._dirty:
            node = self._node(nid)
            resident = sum(self.instances[i].memory for i in node.resident)
            if abs(resident - node.used) > 1e-6:
                raise SimulationError(
                    f"memory accounting violated on node {nid} at t={self.clock}: "
                    f"used={node.used} resident={resident}"
                )
        self._dirty.clear()

    def run(self) -> EventLog:
        self.policy.setup(self)
        for idx, req in enumerate(self.requests):
            self.queue.push(req.arrival, EventKind.WorkflowArrival, (idx,))
        self.queue.push(0.0, EventKind.IntervalTick, (0,))
        self._outstanding = len(self.requests)

        while self.queue:
            ev = self.queue.pop()
            if ev.kind is EventKind.IntervalTick:
                self.log.append(ev.time, ev.kind.name, index=ev.payload[0])
                self._on_tick(ev.payload[0])
            elif ev.kind is EventKind.WorkflowArrival:
                req = self.requests[ev.payload[0]]
                self.log.append(ev.time, ev.kind.name, request=req.id, type=req.type_id)
                self._on_arrival(ev.payload[0])
            elif ev.kind is EventKind.CreationComplete:
                self.log.append(ev.time, ev.kind.name, instance=ev.payload[0])
                self._on_creation_complete(*ev.payload)
            elif ev.kind is EventKind.FunctionComplete:
                iid, request, fn = ev.payload
                self.log.append(ev.time, ev.kind.name, instance=iid, request=request, function=fn)
                self._on_function_complete(iid, request, fn)
            elif ev.kind is EventKind.DataArrival:
                request, fn, iid = ev.payload
                self.log.append(ev.time, ev.kind.name, request=request, function=fn, instance=iid)
                self._on_data_arrival(request, fn, iid)
            elif ev.kind is EventKind.KeepAliveExpire:
                self._on_expire(*ev.payload)
            if self._freed and self.pending_placement:
                self._retry_placements()
            self._freed = False
            if self.config.check_invariants:
                self._check()

        if self._outstanding:
            raise SimulationError(f"{self._outstanding} requests never completed (stalled invocations)")
        self._drain()
        return self.log

    def _drain(self) -> None:
        for iid in self.pending_placement:
            self.log.append(self.clock, "creation_dropped", instance=iid)
        dropped = set(self.pending_placement)
        self.pending_placement = []
        for iid, inst in self.instances.items():
            if iid in dropped:
                continue
            if inst.state is InstanceState.PAUSED:
                self._kill(iid)
            elif inst.state is not InstanceState.KILLED:
                raise SimulationError(f"instance {iid} still {inst.state.value} at drain")
        total = exec_ = 0.0
        count = 0
        for iid, inst in self.instances.items():
            if iid in dropped:
                continue
            t, e = instance_costs(inst)
            total += t
            exec_ += e
            count += 1
        o = self.online
        phi_resp = o["sum_exec"] / o["sum_resp"] if o["sum_resp"] else 1.0
        phi_res = exec_ / total if total else 1.0
        self.log.online = {
            "phi_resp": phi_resp,
            "phi_resource": phi_res,
            "eta": phi_resp * phi_res,
            "sum_exec": o["sum_exec"],
            "sum_resp": o["sum_resp"],
            "cost_total": total,
            "cost_exec": exec_,
            "cold_starts": o["cold_starts"],
            "transfer_latency": o["transfer_latency"],
            "instances": count,
            "requests": len(self.requests),
            "nodes": len(self.nodes),
            "end_time": self.clock,
        }


def run(config: SimConfig, policy, app: ValidatedApplication, types: Iterable[WorkflowType],
        requests: Iterable[WorkflowRequest]) -> EventLog:
    return Simulator(config, app, list(types), list(requests), policy).run()
