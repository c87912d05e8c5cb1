import random

import pytest

from icpsim.cluster import InstanceState, NetworkModel
from icpsim.engine import EventKind, EventLog, EventQueue, SimConfig, Simulator, run
from icpsim.errors import PastEvent, SimulationError
from icpsim.metrics import compute_report
from icpsim.scheduler import PolicyBundle, PoolPolicy, make_policy
from icpsim.workflow import WorkflowRequest

from builders import chain, diamond, full_type, random_experiment
from oracles import memory_trace_ok, replay_metrics


def requests_at(wtype, times):
    return [WorkflowRequest(i, wtype, float(t)) for i, t in enumerate(times)]


def keep_alive(ms=10_000.0, placement="dlbds"):
    return make_policy(PolicyBundle(mode="keep_alive", placement=placement), ms)


# -- queue -------------------------------------------------------------------


def test_same_time_same_kind_is_fifo():
    q = EventQueue()
    a = q.push(100, EventKind.FunctionComplete, ("a",))
    b = q.push(100, EventKind.FunctionComplete, ("b",))
    assert [q.pop(), q.pop()] == [a, b]


def test_tick_precedes_arrival_at_same_time():
    q = EventQueue()
    q.push(600_000, EventKind.WorkflowArrival)
    q.push(600_000, EventKind.IntervalTick)
    assert q.pop().kind is EventKind.IntervalTick


def test_full_kind_priority_order():
    q = EventQueue()
    for kind in reversed(EventKind):
        q.push(5.0, kind)
    assert [q.pop().kind for _ in EventKind] == sorted(EventKind)


def test_past_event_rejected():
    q = EventQueue()
    q.push(50, EventKind.IntervalTick)
    q.pop()
    with pytest.raises(PastEvent):
        q.push(49.9, EventKind.IntervalTick)


def test_config_validation():
    for bad in (dict(duration=0), dict(interval=-1), dict(node_count=0), dict(keep_alive=-5)):
        with pytest.raises(ValueError):
            SimConfig(**bad)


# -- runs --------------------------------------------------------------------


def test_empty_workload_only_ticks():
    app = chain([("a", 10, 100)])
    evlog = run(SimConfig(duration=1000, interval=500), keep_alive(), app, [full_type(app)], [])
    ticks = evlog.of_kind("IntervalTick")
    assert [t["time"] for t in ticks] == [0.0, 500.0]
    assert not evlog.of_kind("instance", "state")


def test_single_request_cold_start():
    app = chain([("a", 100, 100)])
    evlog = run(SimConfig(duration=1000), keep_alive(), app, [full_type(app)], requests_at(full_type(app), [0]))
    report = compute_report(evlog)
    assert report.cold_starts == 1
    assert report.response_times == [600.0]
    assert evlog.online["phi_resp"] == pytest.approx(100 / 600)


def test_prewarmed_instance_gives_exec_time_response():
    app = chain([("a", 100, 100)])
    t = full_type(app)
    policy = make_policy(PolicyBundle(mode="pool", pool_size=1, placement="dlbds"), 10_000.0)
    cfg = SimConfig(duration=2000, interval=60_000)
    report = compute_report(run(cfg, policy, app, [t], requests_at(t, [1000])))
    assert report.response_times == [100.0]
    assert report.cold_starts == 0


def test_data_arrival_charges_delay_across_nodes():
    # each node fits one function; pool pre-warms a and b on different nodes
    app = chain([("a", 50, 600), ("b", 50, 600)])
    t = full_type(app)
    cfg = SimConfig(duration=10_000, node_count=2, node_memory=1000, network=NetworkModel(10), allow_new_nodes=False)
    policy = make_policy(PolicyBundle(mode="pool", pool_size=1, placement="dlbds"), 10_000.0)
    evlog = run(cfg, policy, app, [t], requests_at(t, [1000]))
    assert [r["latency"] for r in evlog.of_kind("transfer")] == [10.0]
    (arrival,) = evlog.of_kind("DataArrival")
    assert arrival["time"] == 1060.0 and arrival["function"] == "b"
    assert compute_report(evlog).response_times == [110.0]


def test_cold_start_hides_transfer_delay():
    app = chain([("a", 50, 600), ("b", 50, 600)])
    t = full_type(app)
    cfg = SimConfig(duration=10_000, node_count=2, node_memory=1000, network=NetworkModel(10), allow_new_nodes=False)
    evlog = run(cfg, keep_alive(), app, [t], requests_at(t, [0]))
    assert [r["latency"] for r in evlog.of_kind("transfer")] == [10.0]
    assert not evlog.of_kind("DataArrival")
    # b is created when a finishes; its 500 ms cold start covers the transfer
    assert compute_report(evlog).response_times == [1100.0]


def test_colocated_functions_pay_no_latency():
    app = chain([("a", 50, 100), ("b", 50, 100)])
    t = full_type(app)
    cfg = SimConfig(duration=10_000, node_count=1, network=NetworkModel(10))
    evlog = run(cfg, keep_alive(placement="ads"), app, [t], requests_at(t, [0]))
    assert not evlog.of_kind("transfer")


def test_markers_never_create_instances():
    app = diamond()
    t = full_type(app)
    evlog = run(SimConfig(duration=5000), keep_alive(), app, [t], requests_at(t, [0, 10]))
    created = {r["function"] for r in evlog.of_kind("instance")}
    assert created == {"B", "C"}
    # critical path is C (30 ms)
    assert compute_report(evlog).response_times[0] == 530.0


def test_all_requests_complete_and_instances_end_killed():
    cfg, bundle, app, types, reqs = random_experiment(7)
    sim = Simulator(cfg, app, types, reqs, make_policy(bundle, cfg.keep_alive))
    evlog = sim.run()
    assert len(evlog.of_kind("request_end")) == len(reqs)
    dropped = {r["instance"] for r in evlog.of_kind("creation_dropped")}
    for iid, inst in sim.instances.items():
        assert inst.state is InstanceState.KILLED or iid in dropped


def test_clock_monotone():
    cfg, bundle, app, types, reqs = random_experiment(3)
    evlog = run(cfg, make_policy(bundle, cfg.keep_alive), app, types, reqs)
    times = [r["time"] for r in evlog]
    assert times == sorted(times)


def test_unsorted_requests_rejected():
    app = chain([("a", 10, 100)])
    t = full_type(app)
    reqs = [WorkflowRequest(0, t, 50.0), WorkflowRequest(1, t, 10.0)]
    with pytest.raises(SimulationError):
        Simulator(SimConfig(), app, [t], reqs, keep_alive())


def test_oversized_function_cannot_be_placed():
    app = chain([("a", 10, 2000)])
    t = full_type(app)
    with pytest.raises(SimulationError):
        run(SimConfig(duration=1000), keep_alive(), app, [t], requests_at(t, [0]))


def test_no_new_nodes_waits_for_memory():
    # one 1000 MB node, two requests needing 600 MB each at once
    app = chain([("a", 100, 600)])
    t = full_type(app)
    cfg = SimConfig(duration=10_000, node_count=1, allow_new_nodes=False, keep_alive=0)
    evlog = run(cfg, keep_alive(0.0), app, [t], requests_at(t, [0, 0]))
    assert evlog.of_kind("placement_deferred")
    resp = compute_report(evlog).response_times
    assert resp[0] == 600.0 and resp[1] == 1200.0


def test_snapshot_is_frozen():
    app = chain([("a", 100, 100)])
    t = full_type(app)
    seen = []

    class Recording(PoolPolicy):
        def on_tick(self, index, hist, snap):
            seen.append(snap)
            return super().on_tick(index, hist, snap)

    policy = Recording(PolicyBundle(mode="pool", pool_size=1), 0.0)
    sim = Simulator(SimConfig(duration=2000, interval=1000), app, [t], [], policy)
    sim.run()
    at_one = seen[1]
    assert [(i.function, i.state) for i in at_one.instances] == [("a", InstanceState.PAUSED)]
    assert at_one.nodes[0].used == 100
    # the instance was killed at drain; the old view does not change
    assert sim.instances[1].state is InstanceState.KILLED
    assert at_one.instances[0].state is InstanceState.PAUSED


def test_empty_snapshot():
    app = chain([("a", 100, 100)])
    sim = Simulator(SimConfig(node_count=3), app, [full_type(app)], [], keep_alive())
    snap = sim.snapshot()
    assert snap.instances == () and [n.used for n in snap.nodes] == [0, 0, 0]


def test_deployed_instance_listed_under_node():
    app = chain([("a", 100, 100)])
    sim = Simulator(SimConfig(node_count=2), app, [full_type(app)], [], keep_alive())
    sim.policy.setup(sim)
    iid = sim._new_instance("a", "prewarm")
    snap = sim.snapshot()
    (v,) = snap.instances
    assert v.id == iid and v.state is InstanceState.CREATING and v.node == 1
    assert snap.node(1).used == 100


def _ndjson(seed):
    cfg, bundle, app, types, reqs = random_experiment(seed)
    return run(cfg, make_policy(bundle, cfg.keep_alive), app, types, reqs).to_ndjson()


@pytest.mark.parametrize("seed", [0, 11, 42])
def test_byte_identical_logs(seed):
    assert _ndjson(seed) == _ndjson(seed)


def test_ndjson_round_trip():
    text = _ndjson(5)
    assert EventLog.from_ndjson(text).to_ndjson() == text


@pytest.mark.parametrize("seed", range(10))
def test_replay_oracle_and_memory_trace(seed):
    cfg, bundle, app, types, reqs = random_experiment(seed)
    evlog = run(cfg, make_policy(bundle, cfg.keep_alive), app, types, reqs)
    text = evlog.to_ndjson()
    ref = replay_metrics(text)
    for k in ("phi_resp", "phi_resource", "eta"):
        assert ref[k] == pytest.approx(evlog.online[k], rel=1e-12)
    caps = {n + 1: cfg.capacity(n) for n in range(cfg.node_count)}
    caps["default"] = cfg.capacity(cfg.node_count)
    assert memory_trace_ok(text, caps)


def test_keep_alive_zero_creates_per_invocation():
    # sequential requests spaced apart: every invocation needs a fresh instance
    app = chain([("a", 10, 100), ("b", 10, 100)])
    t = full_type(app)
    reqs = requests_at(t, [0, 5000, 10_000, 15_000])
    evlog = run(SimConfig(duration=20_000, keep_alive=0), keep_alive(0.0), app, [t], reqs)
    assert len(evlog.of_kind("instance")) == 8
    assert compute_report(evlog).cold_starts == 8


def test_random_bundles_smoke():
    rng = random.Random(1)
    for _ in range(20):
        cfg, bundle, app, types, reqs = random_experiment(rng.randrange(10**6))
        evlog = run(cfg, make_policy(bundle, cfg.keep_alive), app, types, reqs)
        assert 0 < evlog.online["phi_resp"] <= 1
        assert 0 <= evlog.online["phi_resource"] <= 1
