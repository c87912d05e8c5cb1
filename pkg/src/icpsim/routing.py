"""Invocation-to-instance routing strategies."""

from __future__ import annotations

from .state import Invocation, InstanceView, RoutingDecision, SystemSnapshot


def _candidates(inv: Invocation, snap: SystemSnapshot) -> list[InstanceView]:
    return [
        i
        for i in snap.instances_of(inv.function)
        if not i.released and i.reserved_for in (None, inv.request)
    ]


def route_swpas(inv: Invocation, snap: SystemSnapshot, retry: bool = False) -> RoutingDecision:
    """Shortest waiting time first; a fresh instance once waiting beats a cold start."""
    cands = _candidates(inv, snap)
    idle = [i for i in cands if i.idle]
    if idle:
        return RoutingDecision.assign(min(i.id for i in idle))
    if not cands:
        return RoutingDecision.new()
    cold = inv.wtype.function(inv.function).cold_start_time
    wait, iid = min((i.waiting_time(snap.clock, cold), i.id) for i in cands)
    if wait > cold:
        return RoutingDecision.new()
    return RoutingDecision.assign(iid)


def route_sfepas(inv: Invocation, snap: SystemSnapshot, retry: bool = False) -> RoutingDecision:
    """Run only on idle instances, preferring the node with the most free memory.

    Without an idle instance a creation is triggered and the invocation waits;
    whichever instance turns idle first serves it. ``retry`` marks a parked
    invocation whose creation was already triggered.
    """
    cands = _candidates(inv, snap)
    idle = [i for i in cands if i.idle]
    if not idle:
        return RoutingDecision.defer(create=not retry or not cands)
    free = {n.id: n.free for n in snap.nodes}
    best = min(idle, key=lambda i: (-free[i.node], i.node, i.id))
    return RoutingDecision.assign(best.id)


def route_mncpas(inv: Invocation, snap: SystemSnapshot, retry: bool = False) -> RoutingDecision:
    """Keep a whole workflow on one node.

    Unbound requests go to the node with the most free memory, pre-warming
    successor functions there for this request. When that node cannot hold
    every remaining function of the workflow, the request is bound to it.
    """
    fn = inv.function
    mine = [
        i
        for i in snap.instances_of(fn)
        if i.reserved_for == inv.request and not i.released
    ]
    if mine:
        return RoutingDecision.assign(min(i.id for i in mine))

    bound = snap.bindings.get(inv.request)
    if bound is not None:
        node = snap.node(bound)
    else:
        node = min(snap.nodes, key=lambda n: (-n.free, n.id))

    wtype = inv.wtype
    idle_here = [i for i in _candidates(inv, snap) if i.idle and i.node == node.id]
    free = node.free
    if idle_here:
        decision_instance = min(i.id for i in idle_here)
    else:
        decision_instance = None
        free -= wtype.function(fn).memory

    after = wtype.topo_order[wtype.topo_order.index(fn) + 1 :]
    remaining = sum(wtype.function(n).memory for n in after)
    bind = bound is None and free < remaining

    reserved = {i.function for i in snap.instances if i.reserved_for == inv.request}
    prewarm = []
    for succ in wtype.succs[fn]:
        spec = wtype.function(succ)
        if spec.is_marker or succ in reserved:
            continue
        if any(i.idle and i.node == node.id for i in snap.instances_of(succ)):
            continue
        if spec.memory <= free:
            prewarm.append(succ)
            free -= spec.memory

    return RoutingDecision(
        "assign" if decision_instance is not None else "create",
        instance=decision_instance,
        node=node.id,
        prewarm=tuple(prewarm),
        bind=bind,
    )


ROUTINGS = {
    "swpas": route_swpas,
    "sfepas": route_sfepas,
    "mncpas": route_mncpas,
}
