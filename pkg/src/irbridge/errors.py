"""Exception hierarchy for the transition machinery."""


class IRBridgeError(Exception):
    """Base class for all library errors."""


class OutOfRange(IRBridgeError, ValueError):
    """A time or step index lies outside the path's domain."""


class DimensionMismatch(IRBridgeError, ValueError):
    pass


class SourceDegenerate(IRBridgeError):
    """The source state carries no noise, so the transition equation is invalid."""


class ZeroF(IRBridgeError):
    """The source state carries no signal (f = 0)."""


class NoValidSigma(IRBridgeError):
    """The admissible noise interval is empty."""


class SigmaOutOfRange(IRBridgeError, ValueError):
    pass


class BelowCritical(IRBridgeError):
    """Forward transition requested below the critical timestep."""


class AboveCritical(IRBridgeError):
    """Reverse transition target lies above the critical timestep."""


class NoSolution(IRBridgeError):
    """The critical timestep lies outside the search grid.

    ``side`` is ``"above"`` when every grid point is below the crossing and
    ``"below"`` when every grid point is already past it.
    """

    def __init__(self, message, side):
        super().__init__(message)
        self.side = side


class InfeasibleSchedule(IRBridgeError, ValueError):
    pass
