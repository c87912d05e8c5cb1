"""Exception hierarchy shared by every icpsim module."""


class IcpsError(Exception):
    """Base class for all simulator errors."""


# workflow model
class WorkflowError(IcpsError):
    pass


class CycleDetected(WorkflowError):
    pass


class MultipleEntries(WorkflowError):
    pass


class MultipleExits(WorkflowError):
    pass


class UnreachableFunction(WorkflowError):
    pass


class DisconnectedSubgraph(WorkflowError):
    pass


# cluster model
class IllegalTransition(IcpsError):
    pass


class NotTerminated(IcpsError):
    pass


# engine
class PastEvent(IcpsError):
    pass


class SimulationError(IcpsError):
    pass


# prediction
class DimensionMismatch(IcpsError):
    pass


class NonFiniteLoss(IcpsError):
    pass


class EmptyHistory(IcpsError):
    pass


# metrics
class IncompleteLog(IcpsError):
    pass


class UnterminatedInstance(IcpsError):
    pass


# workload io
class ParseError(IcpsError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class MissingField(IcpsError):
    def __init__(self, name: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"missing field {name!r}{where}")
        self.name = name


class InconsistentFunction(IcpsError):
    pass


class InvalidParams(IcpsError):
    pass


# cli
class ConfigError(IcpsError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


class SchemaMismatch(IcpsError):
    pass
