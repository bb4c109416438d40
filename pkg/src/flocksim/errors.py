"""Exception types raised across flocksim."""


class FlockError(Exception):
    """Base class for all flocksim errors."""


class InvalidInstance(FlockError, ValueError):
    pass


class InvalidOutcome(FlockError, ValueError):
    pass


class OverloadedCloud(FlockError):
    """A cloud's load reached or exceeded its capacity, so its delay is undefined."""

    def __init__(self, cloud, load, capacity):
        super().__init__(f"cloud {cloud} overloaded: load {load:g} >= capacity {capacity:g}")
        self.cloud = cloud
        self.load = load
        self.capacity = capacity


class NegativeWeight(FlockError, ValueError):
    pass


class InvalidBound(FlockError, ValueError):
    pass


class DegenerateBracket(FlockError, ValueError):
    pass


class BudgetExceeded(FlockError):
    pass


class NoFeasibleAssignment(FlockError):
    pass


class InsufficientSamples(FlockError, ValueError):
    pass
