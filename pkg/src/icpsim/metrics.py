"""Evaluation quantities recomputed from an event log."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from .cluster import InstanceRecord, InstanceState, Trigger, instance_costs, transition
from .errors import IncompleteLog, UnterminatedInstance
from .workflow import (
    FunctionSpec,
    WorkflowApplication,
    critical_path_exec_time,
    derive_workflow_type,
    validate_application,
)

CSV_FIELDS = (
    "phi_resp",
    "phi_resource",
    "eta",
    "cold_starts",
    "transfer_latency_ms",
    "instances",
    "requests",
    "nodes",
    "mean_response_ms",
)


@dataclass
class MetricsReport:
    phi_resp: float
    phi_resource: float
    eta: float
    cold_starts: int
    transfer_latency_ms: float
    instances: int
    requests: int
    nodes: int
    mean_response_ms: float
    response_times: list[float] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return asdict(self)

    def row(self) -> dict:
        return {k: getattr(self, k) for k in CSV_FIELDS}


def _records(log):
    return log.records if hasattr(log, "records") else list(log)


def _type_exec_times(header: dict) -> dict[int, float]:
    app_d = header["application"]
    app = validate_application(
        WorkflowApplication(
            [
                FunctionSpec(f["name"], f["exec_ms"], f["memory_mb"], f["cold_start_ms"])
                for f in app_d["functions"]
            ],
            [tuple(e) for e in app_d["edges"]],
        )
    )
    return {
        t["id"]: critical_path_exec_time(derive_workflow_type(app, t["members"], t["id"]))
        for t in header["types"]
    }


def response_times(log) -> list[tuple[float, float]]:
    """(critical-path exec, response) per request, in request order."""
    recs = _records(log)
    exec_by_type = _type_exec_times(recs[0])
    arrivals: dict[int, tuple[float, int]] = {}
    ends: dict[int, float] = {}
    for r in recs:
        if r["kind"] == "WorkflowArrival":
            arrivals[r["request"]] = (r["time"], r["type"])
        elif r["kind"] == "request_end":
            ends[r["request"]] = r["time"]
    missing = sorted(set(arrivals) - set(ends))
    if missing:
        raise IncompleteLog(f"{len(missing)} requests never completed, first {missing[0]}")
    return [(exec_by_type[t], ends[i] - arr) for i, (arr, t) in sorted(arrivals.items())]


def response_efficiency(log) -> float:
    pairs = response_times(log)
    resp = sum(r for _, r in pairs)
    if resp == 0:
        return 1.0
    return sum(e for e, _ in pairs) / resp


def replay_instances(log) -> dict[int, InstanceRecord]:
    """Rebuild every deployed instance by replaying its logged transitions."""
    recs = _records(log)
    header = recs[0]
    specs = {
        f["name"]: FunctionSpec(f["name"], f["exec_ms"], f["memory_mb"], f["cold_start_ms"])
        for f in header["application"]["functions"]
    }
    out: dict[int, InstanceRecord] = {}
    for r in recs:
        if r["kind"] != "state":
            continue
        iid = r["instance"]
        inst = out.get(iid)
        if inst is None:
            inst = out[iid] = InstanceRecord(iid, specs[r["function"]], r["node"], last_state_change=r["time"])
        if inst.state.value != r["src"]:
            raise IncompleteLog(f"instance {iid}: log says {r['src']} but replay has {inst.state.value}")
        transition(inst, Trigger(r["trigger"]), r["time"])
    return out


def resource_utilization(log) -> float:
    total = exec_ = 0.0
    for inst in replay_instances(log).values():
        if inst.state is not InstanceState.KILLED:
            raise UnterminatedInstance(f"instance {inst.id} ended {inst.state.value}")
        t, e = instance_costs(inst)
        total += t
        exec_ += e
    return exec_ / total if total else 1.0


def objective(phi_resp: float, phi_resource: float) -> float:
    return phi_resp * phi_resource


def rpd(eta_best: float, eta_current: float, convention: str = "literal") -> float:
    """Relative percentage deviation of ``eta_current`` from ``eta_best``.

    ``literal`` divides by the current value, ``positive`` flips the sign
    and divides by the best value.
    """
    if convention == "literal":
        if eta_current == 0:
            raise ZeroDivisionError("eta_current is zero")
        return 100.0 * (eta_best - eta_current) / eta_current
    if convention == "positive":
        if eta_best == 0:
            raise ZeroDivisionError("eta_best is zero")
        return 100.0 * (eta_current - eta_best) / eta_best
    raise ValueError(f"unknown rpd convention {convention!r}")


def compute_report(log) -> MetricsReport:
    recs = _records(log)
    pairs = response_times(recs)
    phi_resp = response_efficiency(recs)
    phi_res = resource_utilization(recs)
    header = recs[0]
    deployed = {r["instance"] for r in recs if r["kind"] == "state"}
    resp = [r for _, r in pairs]
    return MetricsReport(
        phi_resp=phi_resp,
        phi_resource=phi_res,
        eta=objective(phi_resp, phi_res),
        cold_starts=sum(1 for r in recs if r["kind"] == "cold_start"),
        transfer_latency_ms=sum(r["latency"] for r in recs if r["kind"] == "transfer"),
        instances=len(deployed),
        requests=len(pairs),
        nodes=header["config"]["node_count"] + sum(1 for r in recs if r["kind"] == "node_added"),
        mean_response_ms=sum(resp) / len(resp) if resp else 0.0,
        response_times=resp,
    )
