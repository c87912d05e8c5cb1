"""Node selection for newly created instances (pre-warm or cold start)."""

from __future__ import annotations

from typing import Callable

from .cluster import InstanceRecord
from .state import DEFER, NEW_NODE, PlacementDecision, SystemSnapshot


def _no_room(inst: InstanceRecord, snap: SystemSnapshot) -> PlacementDecision:
    return PlacementDecision(inst.id, NEW_NODE if snap.allow_new_nodes else DEFER)


def _least_used(nodes):
    return min(nodes, key=lambda n: (n.usage, n.id))


def place_dlbds(inst: InstanceRecord, snap: SystemSnapshot) -> PlacementDecision:
    """Dynamic load balancing: the feasible node with the lowest usage ratio."""
    feasible = [n for n in snap.nodes if n.fits(inst.memory)]
    if not feasible:
        return _no_room(inst, snap)
    return PlacementDecision(inst.id, _least_used(feasible).id)


def place_ads(inst: InstanceRecord, snap: SystemSnapshot) -> PlacementDecision:
    """Affinity deployment.

    Source functions go to the least used node; functions with predecessors go
    to the first feasible node already hosting a predecessor instance, falling
    back to the first feasible node overall.
    """
    feasible = sorted((n for n in snap.nodes if n.fits(inst.memory)), key=lambda n: n.id)
    if not feasible:
        return _no_room(inst, snap)
    preds = set(snap.app.preds[inst.function.id])
    if not preds:
        return PlacementDecision(inst.id, _least_used(feasible).id)
    affine = {i.node for i in snap.instances if i.function in preds and i.node is not None}
    for n in feasible:
        if n.id in affine:
            return PlacementDecision(inst.id, n.id)
    return PlacementDecision(inst.id, feasible[0].id)


def place_fdds(inst: InstanceRecord, snap: SystemSnapshot) -> PlacementDecision:
    """Free distribution: first feasible node in ascending id order."""
    for n in sorted(snap.nodes, key=lambda n: n.id):
        if n.fits(inst.memory):
            return PlacementDecision(inst.id, n.id)
    return _no_room(inst, snap)


PLACEMENTS: dict[str, Callable[[InstanceRecord, SystemSnapshot], PlacementDecision]] = {
    "dlbds": place_dlbds,
    "ads": place_ads,
    "fdds": place_fdds,
}
