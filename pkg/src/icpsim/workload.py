"""Workflow trace ingestion and deterministic synthetic workloads.

Trace files are UTF-8 newline-delimited JSON, one workflow request per line::

    {"workflow": "wf-3", "arrival_ms": 1250,
     "functions": [{"name": "a", "exec_ms": 40, "memory_mb": 128}, ...],
     "edges": [["a", "b"], ...]}

``cold_start_ms`` is optional per function; unknown keys are ignored.
"""

from __future__ import annotations

import io
import itertools
import json
import math
from dataclasses import dataclass
from typing import IO, Iterable

import numpy as np

from .errors import (
    InconsistentFunction,
    InvalidParams,
    MissingField,
    ParseError,
    WorkflowError,
)
from .workflow import (
    DEFAULT_COLD_START_MS,
    FunctionSpec,
    ValidatedApplication,
    WorkflowApplication,
    WorkflowRequest,
    WorkflowType,
    derive_workflow_type,
    sort_requests,
    validate_application,
)

Workload = tuple[ValidatedApplication, list[WorkflowType], list[WorkflowRequest]]


@dataclass(frozen=True)
class TraceRecord:
    workflow: str
    arrival_ms: float
    functions: tuple[FunctionSpec, ...]
    edges: tuple[tuple[str, str], ...]

    def to_json(self) -> dict:
        return {
            "workflow": self.workflow,
            "arrival_ms": self.arrival_ms,
            "functions": [
                {
                    "name": f.id,
                    "exec_ms": f.exec_time,
                    "memory_mb": f.memory,
                    "cold_start_ms": f.cold_start_time,
                }
                for f in self.functions
            ],
            "edges": [list(e) for e in self.edges],
        }


def _field(obj: dict, name: str, line: int):
    if name not in obj:
        raise MissingField(name, line)
    return obj[name]


def parse_record(obj: dict, line: int = 0) -> TraceRecord:
    if not isinstance(obj, dict):
        raise ParseError(line, "record is not a JSON object")
    workflow = str(_field(obj, "workflow", line))
    arrival = _field(obj, "arrival_ms", line)
    fns = _field(obj, "functions", line)
    edges = _field(obj, "edges", line)
    try:
        arrival = float(arrival)
        specs = []
        for f in fns:
            specs.append(
                FunctionSpec(
                    str(_field(f, "name", line)),
                    float(_field(f, "exec_ms", line)),
                    float(_field(f, "memory_mb", line)),
                    float(f.get("cold_start_ms", DEFAULT_COLD_START_MS)),
                )
            )
        pairs = tuple((str(a), str(b)) for a, b in edges)
    except (TypeError, ValueError, WorkflowError) as exc:
        raise ParseError(line, str(exc)) from None
    if arrival < 0:
        raise ParseError(line, "arrival_ms must be >= 0")
    for s in specs:
        if s.exec_time <= 0 or s.memory <= 0:
            raise ParseError(line, f"function {s.id}: exec_ms and memory_mb must be > 0")
    return TraceRecord(workflow, arrival, tuple(specs), pairs)


def read_trace(source: IO[str] | IO[bytes] | str) -> list[TraceRecord]:
    if isinstance(source, str):
        source = io.StringIO(source)
    out = []
    for n, raw in enumerate(source, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(n, exc.msg) from None
        out.append(parse_record(obj, n))
    return out


def build_workload(records: Iterable[TraceRecord]) -> Workload:
    """Union the recorded sub-graphs into one application; each distinct
    function set becomes a workflow type (ids in order of first appearance)."""
    records = list(records)
    functions: dict[str, FunctionSpec] = {}
    edges: set[tuple[str, str]] = set()
    type_keys: dict[frozenset, int] = {}
    for rec in records:
        for f in rec.functions:
            seen = functions.get(f.id)
            if seen is not None and (seen.exec_time, seen.memory) != (f.exec_time, f.memory):
                raise InconsistentFunction(
                    f"{f.id}: ({seen.exec_time} ms, {seen.memory} MB) vs ({f.exec_time} ms, {f.memory} MB)"
                )
            functions.setdefault(f.id, f)
        edges.update(rec.edges)
        key = frozenset(f.id for f in rec.functions)
        type_keys.setdefault(key, len(type_keys) + 1)
    if not records:
        return None, [], []
    app = validate_application(WorkflowApplication(list(functions.values()), sorted(edges)))
    types = {tid: derive_workflow_type(app, key, tid) for key, tid in type_keys.items()}
    requests = [
        WorkflowRequest(i, types[type_keys[frozenset(f.id for f in rec.functions)]], rec.arrival_ms)
        for i, rec in enumerate(records)
    ]
    return app, [types[t] for t in sorted(types)], sort_requests(requests)


def load_trace(source) -> Workload:
    return build_workload(read_trace(source))


def workload_records(types: Iterable[WorkflowType], requests: Iterable[WorkflowRequest]) -> list[TraceRecord]:
    out = []
    for req in requests:
        t = req.type
        out.append(
            TraceRecord(
                workflow=f"type-{t.id}",
                arrival_ms=req.arrival,
                functions=tuple(t.function(n) for n in t.topo_order),
                edges=tuple(sorted(t.edges)),
            )
        )
    return out


def dump_trace(requests: Iterable[WorkflowRequest], fh: IO[str] | None = None) -> str:
    requests = list(requests)
    types = {r.type.id: r.type for r in requests}.values()
    text = "".join(
        json.dumps(rec.to_json(), sort_keys=True) + "\n" for rec in workload_records(types, requests)
    )
    if fh is not None:
        fh.write(text)
    return text


@dataclass(frozen=True)
class SyntheticParams:
    """Knobs of the layered synthetic workload.

    ``depth`` counts function layers on every path (entry and exit
    included); interior layers hold ``branch_factor`` alternatives each.
    ``arrival_pattern`` is ``uniform`` (independent uniform arrival times,
    type drawn from a seeded mix) or ``burst`` (equal bursts every
    ``burst_period_ms`` at ``burst_offset_ms``, types cycling inside each
    burst so per-type concurrency is constant).
    """

    concurrency: int = 500
    depth: int = 5
    branch_factor: int = 2
    type_count: int = 4
    window_ms: float = 800_000.0
    seed: int = 0
    exec_range: tuple[float, float] = (10.0, 200.0)
    memory_range: tuple[float, float] = (50.0, 200.0)
    cold_start_ms: float = DEFAULT_COLD_START_MS
    arrival_pattern: str = "uniform"
    burst_period_ms: float = 60_000.0
    burst_offset_ms: float = 1_000.0

    def validate(self) -> None:
        if self.concurrency < 1 or self.depth < 1 or self.branch_factor < 1 or self.type_count < 1:
            raise InvalidParams("concurrency, depth, branch_factor and type_count must be positive")
        if self.window_ms <= 0:
            raise InvalidParams("window_ms must be positive")
        lo, hi = self.exec_range
        if not 0 < lo <= hi:
            raise InvalidParams("exec_range must satisfy 0 < low <= high")
        lo, hi = self.memory_range
        if not 0 < lo <= hi:
            raise InvalidParams("memory_range must satisfy 0 < low <= high")
        if self.arrival_pattern not in ("uniform", "burst"):
            raise InvalidParams(f"unknown arrival_pattern {self.arrival_pattern!r}")
        if self.arrival_pattern == "burst":
            if self.burst_period_ms <= 0 or not 0 <= self.burst_offset_ms < self.burst_period_ms:
                raise InvalidParams("burst offset must lie inside a positive burst period")
            if self.burst_offset_ms >= self.window_ms:
                raise InvalidParams("first burst falls outside the arrival window")


def _layers(depth: int, branch: int) -> list[list[str]]:
    if depth == 1:
        return [["f1"]]
    inner = [[f"f{d}_{b}" for b in range(1, branch + 1)] for d in range(2, depth)]
    return [["f1"]] + inner + [[f"f{depth}"]]


def generate_synthetic(params: SyntheticParams) -> Workload:
    params.validate()
    rng = np.random.default_rng(params.seed)
    layers = _layers(params.depth, params.branch_factor)
    names = [n for layer in layers for n in layer]
    lo, hi = params.exec_range
    execs = rng.integers(int(lo), int(hi) + 1, len(names)) if hi > lo else np.full(len(names), lo)
    lo, hi = params.memory_range
    mems = rng.integers(int(lo), int(hi) + 1, len(names)) if hi > lo else np.full(len(names), lo)
    specs = [
        FunctionSpec(n, float(e), float(m), params.cold_start_ms) for n, e, m in zip(names, execs, mems)
    ]
    edges = [(a, b) for l1, l2 in zip(layers, layers[1:]) for a in l1 for b in l2]
    app = validate_application(WorkflowApplication(specs, edges))

    # distinct entry->exit paths, one alternative per interior layer
    n_paths = math.prod(len(layer) for layer in layers)
    S = min(params.type_count, n_paths)
    if S == n_paths:
        picks = list(itertools.product(*[range(len(layer)) for layer in layers]))
    else:
        picks = []
        seen: set[tuple[int, ...]] = set()
        while len(picks) < S:
            p = tuple(int(rng.integers(len(layer))) for layer in layers)
            if p not in seen:
                seen.add(p)
                picks.append(p)
    types = [
        derive_workflow_type(app, [layer[i] for layer, i in zip(layers, p)], tid)
        for tid, p in enumerate(picks, start=1)
    ]

    M = params.concurrency
    if params.arrival_pattern == "uniform":
        mix = rng.dirichlet(np.ones(S))
        arrivals = np.sort(rng.uniform(0.0, params.window_ms, M))
        arrivals = np.minimum(np.floor(arrivals), params.window_ms - 1)
        kinds = rng.choice(S, size=M, p=mix)
        pairs = list(zip(arrivals.tolist(), kinds.tolist()))
    else:
        starts = np.arange(params.burst_offset_ms, params.window_ms, params.burst_period_ms)
        per, extra = divmod(M, len(starts))
        pairs = []
        for b, t in enumerate(starts):
            size = per + (1 if b < extra else 0)
            pairs.extend((float(t), k % S) for k in range(size))
    requests = [WorkflowRequest(i, types[k], float(t)) for i, (t, k) in enumerate(pairs)]
    return app, types, sort_requests(requests)
