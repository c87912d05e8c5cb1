"""Frozen views of the cluster handed to placement and routing strategies,
and the decision values those strategies return."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

from .cluster import InstanceState
from .workflow import ValidatedApplication, WorkflowType


class NodeView(NamedTuple):
    id: int
    capacity: float
    used: float

    @property
    def free(self) -> float:
        return self.capacity - self.used

    @property
    def usage(self) -> float:
        return self.used / self.capacity

    def fits(self, memory: float) -> bool:
        return self.used + memory <= self.capacity


class InstanceView(NamedTuple):
    id: int
    function: str
    node: int | None
    state: InstanceState
    memory: float
    queued: int  # invocations bound to the instance and not yet started
    queued_work: float  # summed exec time of those invocations
    busy_until: float  # end of current creation/execution/data wait
    reserved_for: int | None = None
    released: bool = False

    @property
    def idle(self) -> bool:
        return (
            self.state is InstanceState.PAUSED
            and self.queued == 0
            and self.reserved_for is None
            and not self.released
        )

    def waiting_time(self, now: float, cold_start: float) -> float:
        """Delay before a newly queued invocation could start here."""
        if self.state is InstanceState.UNDEPLOYED:
            return cold_start + self.queued_work
        return max(0.0, self.busy_until - now) + self.queued_work


class Invocation(NamedTuple):
    request: int
    function: str
    wtype: WorkflowType
    ready_at: float


@dataclass(frozen=True)
class SystemSnapshot:
    clock: float
    nodes: tuple[NodeView, ...]
    instances: tuple[InstanceView, ...]
    app: ValidatedApplication = field(repr=False)
    pending: int = 0
    allow_new_nodes: bool = True
    bindings: Mapping[int, int] = field(default_factory=dict)

    def node(self, node_id: int) -> NodeView:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def instances_of(self, fn: str) -> list[InstanceView]:
        return [i for i in self.instances if i.function == fn]

    def instance(self, iid: int) -> InstanceView:
        for i in self.instances:
            if i.id == iid:
                return i
        raise KeyError(iid)


NEW_NODE = "new"
DEFER = "defer"


class PlacementDecision(NamedTuple):
    instance: int
    target: int | str  # node id, NEW_NODE or DEFER


class RoutingDecision(NamedTuple):
    """What to do with one ready invocation.

    ``assign`` binds it to ``instance``; ``create`` binds it to a new
    instance (placed on ``node`` when given); ``defer`` parks it until the
    next creation/completion, triggering a creation when ``create`` is set.
    """

    action: str
    instance: int | None = None
    node: int | None = None
    create: bool = False
    prewarm: tuple[str, ...] = ()
    bind: bool = False

    @classmethod
    def assign(cls, iid: int) -> "RoutingDecision":
        return cls("assign", instance=iid)

    @classmethod
    def new(cls, node: int | None = None) -> "RoutingDecision":
        return cls("create", node=node)

    @classmethod
    def defer(cls, create: bool) -> "RoutingDecision":
        return cls("defer", create=create)
