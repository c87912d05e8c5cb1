"""Worker nodes, the function-instance lifecycle and per-instance cost accounting."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .errors import IllegalTransition, NotTerminated
from .workflow import FunctionSpec


class InstanceState(enum.Enum):
    UNDEPLOYED = "Undeployed"
    CREATING = "Creating"
    PAUSED = "Paused"
    RUNNING = "Running"
    KILLED = "Killed"


class Trigger(enum.Enum):
    DEPLOY = "deploy"
    CREATION_COMPLETE = "creation_complete"
    INVOKE = "invoke"
    COMPLETE = "complete"
    EXPIRE = "expire"


S, T = InstanceState, Trigger

TRANSITIONS: dict[tuple[InstanceState, Trigger], InstanceState] = {
    (S.UNDEPLOYED, T.DEPLOY): S.CREATING,
    (S.CREATING, T.CREATION_COMPLETE): S.PAUSED,
    (S.PAUSED, T.INVOKE): S.RUNNING,
    (S.RUNNING, T.COMPLETE): S.PAUSED,
    (S.PAUSED, T.EXPIRE): S.KILLED,
}

# an instance that is not created yet may already be handed invocations;
# they wait in its queue and the state does not move
QUEUEING = frozenset({(S.UNDEPLOYED, T.INVOKE), (S.CREATING, T.INVOKE)})


@dataclass
class InstanceRecord:
    id: int
    function: FunctionSpec
    node: int | None = None
    state: InstanceState = InstanceState.UNDEPLOYED
    created_at: float | None = None
    killed_at: float | None = None
    idle_accum: float = 0.0
    last_state_change: float = 0.0

    @property
    def memory(self) -> float:
        return self.function.memory

    @property
    def alive(self) -> bool:
        return self.state is not InstanceState.KILLED


def transition(inst: InstanceRecord, trigger: Trigger, now: float) -> InstanceRecord:
    """Apply ``trigger`` to ``inst`` in place and return it.

    Idle time accrues for every interval spent Paused.
    """
    key = (inst.state, trigger)
    if key in QUEUEING:
        return inst
    new_state = TRANSITIONS.get(key)
    if new_state is None:
        raise IllegalTransition(f"instance {inst.id}: {inst.state.value} + {trigger.value}")
    if now < inst.last_state_change:
        raise IllegalTransition(f"instance {inst.id}: time runs backwards ({now} < {inst.last_state_change})")
    if inst.state is S.PAUSED:
        inst.idle_accum += now - inst.last_state_change
    if trigger is T.DEPLOY:
        inst.created_at = now
    elif trigger is T.EXPIRE:
        inst.killed_at = now
    inst.state = new_state
    inst.last_state_change = now
    return inst


@dataclass
class WorkerNode:
    id: int
    capacity: float
    used: float = 0.0
    resident: set[int] = field(default_factory=set)

    @property
    def free(self) -> float:
        return self.capacity - self.used

    @property
    def usage(self) -> float:
        return self.used / self.capacity

    def admit(self, inst: InstanceRecord) -> None:
        if not can_host(self, inst.memory):
            raise IllegalTransition(
                f"node {self.id} cannot host instance {inst.id} "
                f"({self.used}+{inst.memory} > {self.capacity})"
            )
        self.used += inst.memory
        self.resident.add(inst.id)

    def release(self, inst: InstanceRecord) -> None:
        self.resident.discard(inst.id)
        self.used -= inst.memory
        if not self.resident:
            self.used = 0.0


def can_host(node: WorkerNode, memory: float) -> bool:
    return node.used + memory <= node.capacity


@dataclass(frozen=True)
class NetworkModel:
    delay: float = 10.0

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError("network delay must be >= 0")


def transfer_latency(net: NetworkModel, src: int | None, dst: int | None) -> float:
    # structural entry/exit functions have no node and move no data
    if src is None or dst is None or src == dst:
        return 0.0
    return net.delay


def instance_costs(inst: InstanceRecord) -> tuple[float, float]:
    """Return (total, exec) memory-time consumption in MB*ms."""
    if inst.state is not InstanceState.KILLED:
        raise NotTerminated(f"instance {inst.id} is {inst.state.value}")
    lifetime = inst.killed_at - inst.created_at
    return lifetime * inst.memory, (lifetime - inst.idle_accum) * inst.memory
