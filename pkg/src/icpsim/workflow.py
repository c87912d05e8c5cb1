"""Workflow application DAGs, their invoked sub-graphs and timed requests."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import (
    CycleDetected,
    DisconnectedSubgraph,
    MultipleEntries,
    MultipleExits,
    UnreachableFunction,
    WorkflowError,
)

DEFAULT_COLD_START_MS = 500.0


@dataclass(frozen=True)
class FunctionSpec:
    """A serverless function with fixed execution time (ms) and memory (MB).

    Zero execution time together with zero memory marks a structural
    entry/exit function that never occupies an instance.
    """

    id: str
    exec_time: float
    memory: float
    cold_start_time: float = DEFAULT_COLD_START_MS

    def __post_init__(self):
        if self.exec_time < 0:
            raise WorkflowError(f"{self.id}: exec_time must be >= 0")
        if self.memory < 0:
            raise WorkflowError(f"{self.id}: memory must be >= 0")
        if self.cold_start_time < 0:
            raise WorkflowError(f"{self.id}: cold_start_time must be >= 0")

    @property
    def is_marker(self) -> bool:
        return self.exec_time == 0 and self.memory == 0


@dataclass
class WorkflowApplication:
    functions: list[FunctionSpec]
    edges: list[tuple[str, str]] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class ValidatedApplication:
    functions: Mapping[str, FunctionSpec]
    edges: frozenset[tuple[str, str]]
    preds: Mapping[str, tuple[str, ...]]
    succs: Mapping[str, tuple[str, ...]]
    topo_order: tuple[str, ...]
    entry: str
    exit: str

    def __len__(self) -> int:
        return len(self.functions)

    def to_dict(self) -> dict:
        return {
            "functions": [
                {
                    "name": f.id,
                    "exec_ms": f.exec_time,
                    "memory_mb": f.memory,
                    "cold_start_ms": f.cold_start_time,
                }
                for f in (self.functions[n] for n in self.topo_order)
            ],
            "edges": sorted([list(e) for e in self.edges]),
        }


def _adjacency(names: Iterable[str], edges: Iterable[tuple[str, str]]):
    preds: dict[str, list[str]] = {n: [] for n in names}
    succs: dict[str, list[str]] = {n: [] for n in names}
    for a, b in edges:
        succs[a].append(b)
        preds[b].append(a)
    return (
        {n: tuple(sorted(p)) for n, p in preds.items()},
        {n: tuple(sorted(s)) for n, s in succs.items()},
    )


def _topological_order(preds, succs) -> list[str] | None:
    indeg = {n: len(p) for n, p in preds.items()}
    ready = [n for n, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        n = heapq.heappop(ready)
        order.append(n)
        for s in succs[n]:
            indeg[s] -= 1
            if indeg[s] == 0:
                heapq.heappush(ready, s)
    return order if len(order) == len(preds) else None


def _reach(start: str, adj) -> set[str]:
    seen = {start}
    stack = [start]
    while stack:
        for nxt in adj[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


def validate_application(app: WorkflowApplication) -> ValidatedApplication:
    """Check the DAG structure and cache its topological order."""
    functions: dict[str, FunctionSpec] = {}
    for f in app.functions:
        if f.id in functions and functions[f.id] != f:
            raise WorkflowError(f"duplicate function {f.id!r}")
        functions[f.id] = f
    if not functions:
        raise WorkflowError("application has no functions")
    edges = frozenset((a, b) for a, b in app.edges)
    for a, b in edges:
        for n in (a, b):
            if n not in functions:
                raise WorkflowError(f"edge references unknown function {n!r}")
        if a == b:
            raise CycleDetected(f"self-loop on {a!r}")

    preds, succs = _adjacency(functions, edges)
    order = _topological_order(preds, succs)
    if order is None:
        raise CycleDetected("dependency graph contains a cycle")

    entries = [n for n in order if not preds[n]]
    exits = [n for n in order if not succs[n]]
    if len(entries) != 1:
        raise MultipleEntries(f"expected one entry function, found {entries}")
    if len(exits) != 1:
        raise MultipleExits(f"expected one exit function, found {exits}")
    entry, exit_ = entries[0], exits[0]

    on_path = _reach(entry, succs) & _reach(exit_, preds)
    missing = set(functions) - on_path
    if missing:
        raise UnreachableFunction(f"not on an entry->exit path: {sorted(missing)}")

    for n, f in functions.items():
        if n not in (entry, exit_) and (f.exec_time <= 0 or f.memory <= 0):
            raise WorkflowError(f"{n}: only entry/exit may have zero exec_time or memory")

    return ValidatedApplication(
        functions=functions,
        edges=edges,
        preds=preds,
        succs=succs,
        topo_order=tuple(order),
        entry=entry,
        exit=exit_,
    )


@dataclass(frozen=True, eq=False)
class WorkflowType:
    """One invoked sub-graph of an application (a request's executed path)."""

    id: int
    members: frozenset[str]
    edges: frozenset[tuple[str, str]]
    app: ValidatedApplication = field(repr=False)
    preds: Mapping[str, tuple[str, ...]] = field(repr=False)
    succs: Mapping[str, tuple[str, ...]] = field(repr=False)
    topo_order: tuple[str, ...] = field(repr=False)

    def invokes(self, fn: str) -> int:
        """Membership indicator: 1 when the type runs ``fn``, else 0."""
        return 1 if fn in self.members else 0

    def function(self, fn: str) -> FunctionSpec:
        return self.app.functions[fn]


def derive_workflow_type(
    app: ValidatedApplication, invoked: Iterable[str], type_id: int = 1
) -> WorkflowType:
    members = frozenset(invoked)
    unknown = members - set(app.functions)
    if unknown:
        raise WorkflowError(f"invoked functions not in application: {sorted(unknown)}")
    if app.entry not in members or app.exit not in members:
        raise WorkflowError("a workflow type must contain the entry and exit functions")
    edges = frozenset(e for e in app.edges if e[0] in members and e[1] in members)
    preds, succs = _adjacency(members, edges)
    if app.exit not in _reach(app.entry, succs):
        raise DisconnectedSubgraph("exit is unreachable from entry within the invoked set")
    stray = members - (_reach(app.entry, succs) & _reach(app.exit, preds))
    if stray:
        raise DisconnectedSubgraph(f"functions off every entry->exit path: {sorted(stray)}")
    order = tuple(n for n in app.topo_order if n in members)
    return WorkflowType(type_id, members, edges, app, preds, succs, order)


def critical_path_exec_time(wtype: WorkflowType) -> float:
    """Longest exec-time weighted entry->exit path of ``wtype``."""
    finish: dict[str, float] = {}
    for n in wtype.topo_order:
        start = max((finish[p] for p in wtype.preds[n]), default=0.0)
        finish[n] = start + wtype.function(n).exec_time
    return finish[wtype.app.exit]


@dataclass(frozen=True)
class WorkflowRequest:
    id: int
    type: WorkflowType
    arrival: float

    @property
    def type_id(self) -> int:
        return self.type.id


def ready_functions(request: WorkflowRequest, completed: Iterable[str]) -> set[str]:
    done = set(completed)
    wtype = request.type
    return {
        n
        for n in wtype.members
        if n not in done and all(p in done for p in wtype.preds[n])
    }


def sort_requests(requests: Iterable[WorkflowRequest]) -> list[WorkflowRequest]:
    """Order by arrival and renumber ids 0..M-1 in that order."""
    ordered = sorted(requests, key=lambda r: (r.arrival, r.id))
    return [WorkflowRequest(i, r.type, r.arrival) for i, r in enumerate(ordered)]
