import pytest
from hypothesis import given, settings, strategies as st

from icpsim.cluster import InstanceRecord
from icpsim.placement import place_ads, place_dlbds, place_fdds
from icpsim.state import DEFER, NEW_NODE

from builders import chain, fn, snapshot, view


def pending(app, name, iid=99):
    return InstanceRecord(iid, app.functions[name])


APP = chain([("g", 10, 100), ("f", 10, 100)])


def test_dlbds_least_usage():
    snap = snapshot(APP, [(1, 1000, 500), (2, 1000, 200), (3, 1000, 800)])
    assert place_dlbds(pending(APP, "f"), snap).target == 2


def test_dlbds_feasibility_dominates():
    snap = snapshot(APP, [(1, 1000, 950), (2, 1000, 920), (3, 1000, 800)])
    assert place_dlbds(pending(APP, "f"), snap).target == 3


def test_dlbds_uses_ratio_not_megabytes():
    snap = snapshot(APP, [(1, 3000, 600), (2, 1000, 300)])
    assert place_dlbds(pending(APP, "f"), snap).target == 1


@pytest.mark.parametrize("place", [place_dlbds, place_ads, place_fdds])
def test_full_cluster_new_node_or_defer(place):
    nodes = [(1, 1000, 950), (2, 1000, 990)]
    assert place(pending(APP, "f"), snapshot(APP, nodes)).target == NEW_NODE
    assert place(pending(APP, "f"), snapshot(APP, nodes, allow_new_nodes=False)).target == DEFER


def test_ads_follows_predecessor():
    snap = snapshot(APP, [(1, 1000, 100), (2, 1000, 100)], [view(1, "g", 2)])
    assert place_ads(pending(APP, "f"), snap).target == 2


def test_ads_source_goes_to_least_used():
    snap = snapshot(APP, [(1, 1000, 500), (2, 1000, 200)])
    assert place_ads(pending(APP, "g"), snap).target == 2


def test_ads_falls_back_to_first_feasible():
    snap = snapshot(APP, [(1, 1000, 100), (2, 1000, 950), (3, 1000, 0)], [view(1, "g", 2)])
    assert place_ads(pending(APP, "f"), snap).target == 1


def test_ads_affinity_nodes_scanned_in_id_order():
    snap = snapshot(APP, [(1, 1000, 0), (2, 1000, 500), (3, 1000, 100)], [view(1, "g", 3), view(2, "g", 2)])
    assert place_ads(pending(APP, "f"), snap).target == 2


def test_fdds_first_fit_ignores_load():
    snap = snapshot(APP, [(1, 1000, 800), (2, 1000, 0)])
    assert place_fdds(pending(APP, "f"), snap).target == 1
    snap = snapshot(APP, [(1, 1000, 950), (2, 1000, 0)])
    assert place_fdds(pending(APP, "f"), snap).target == 2


def test_fdds_deterministic():
    snap = snapshot(APP, [(2, 1000, 0), (1, 1000, 300)])
    assert {place_fdds(pending(APP, "f"), snap).target for _ in range(5)} == {1}


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(1, 60))
def test_dlbds_balances_equal_instances(k, m):
    app = chain([("x", 1, 10)])
    nodes = {i: 0.0 for i in range(1, k + 1)}
    counts = {i: 0 for i in nodes}
    for j in range(m):
        snap = snapshot(app, [(i, 1000.0, u) for i, u in nodes.items()])
        target = place_dlbds(InstanceRecord(j, app.functions["x"]), snap).target
        nodes[target] += 10
        counts[target] += 1
    assert max(counts.values()) - min(counts.values()) <= 1
