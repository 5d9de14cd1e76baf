"""Exception types raised across the package."""


class MotorwayFlowError(Exception):
    """Base class for every error raised by motorway_flow."""


# graph
class DuplicateStation(MotorwayFlowError):
    pass


class DanglingEdge(MotorwayFlowError):
    pass


class InvariantViolation(MotorwayFlowError):
    pass


class NoPath(MotorwayFlowError):
    pass


class Infeasible(MotorwayFlowError):
    """No upstream mainline station lies far enough from the target."""


# flow data
class MalformedRow(MotorwayFlowError):
    pass


class IntervalOutOfRange(MotorwayFlowError):
    pass


class DuplicateObservation(MotorwayFlowError):
    pass


class InsufficientData(MotorwayFlowError):
    pass


class PreconditionViolated(MotorwayFlowError, ValueError):
    pass


class MissingData(MotorwayFlowError):
    pass


class MissingProfile(MotorwayFlowError):
    pass


class GridMismatch(MotorwayFlowError):
    pass


# simulator
class InvalidScenario(MotorwayFlowError):
    pass


class OutOfRangeSpec(MotorwayFlowError):
    pass


# evaluation
class LengthMismatch(MotorwayFlowError, ValueError):
    pass


class EmptyInput(MotorwayFlowError, ValueError):
    pass


class ConstantActual(MotorwayFlowError, ValueError):
    pass


class InvalidPlan(MotorwayFlowError, ValueError):
    pass


class EmptyTestRange(MotorwayFlowError):
    pass


class NoFeasibleStations(MotorwayFlowError):
    pass
