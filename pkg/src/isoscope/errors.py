"""Exception hierarchy shared by every isoscope module."""


class IsoscopeError(Exception):
    """Base class for all isoscope errors."""


class PastTime(IsoscopeError):
    pass


class UnknownCore(IsoscopeError):
    pass


class EmptyMask(IsoscopeError):
    pass


class NotIsolated(IsoscopeError):
    pass


class CrossCoreFree(IsoscopeError):
    pass


class DoubleFree(IsoscopeError):
    pass


class UnknownAllocation(IsoscopeError):
    pass


class NotWatched(IsoscopeError):
    pass


class SelfIpi(IsoscopeError):
    pass


class BadCapacity(IsoscopeError):
    pass


class WrongEndpoint(IsoscopeError):
    pass


class PinningUnavailable(IsoscopeError):
    pass


class BadPeriod(IsoscopeError):
    pass


class BadInterval(IsoscopeError):
    pass


class EmptySamples(IsoscopeError):
    pass


class MissingRun(IsoscopeError):
    pass


class ParseError(IsoscopeError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ValidationError(IsoscopeError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class ScenarioError(IsoscopeError):
    """A runtime condition that invalidates the scenario being simulated."""


class DeferredQueueOverflow(ScenarioError):
    pass


class IsolationViolation(ScenarioError):
    """An unsuppressible interrupt was aimed at an isolated core."""


class UnwatchedRcuRead(ScenarioError):
    pass


class RcuStall(ScenarioError):
    pass
