"""Typed errors raised across the simulator, networks and run tooling"""


class InvalidStateError(ValueError):
    """Physics input is non-finite or violates a precondition"""


class ShapeMismatchError(ValueError):
    """Tensor or network spec shapes disagree"""


class CheckpointMismatchError(ValueError):
    """Checkpoint format or layout hash does not match the running code"""


class NonFiniteError(ValueError):
    """Network produced NaN/inf during a rollout"""


class InvariantViolationError(ValueError):
    """A diagnostic invariant did not hold"""
