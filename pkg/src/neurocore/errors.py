"""Exception types shared across the simulator."""


class NeurocoreError(Exception):
    pass


class NonBinaryValue(NeurocoreError, ValueError):
    """A spike tensor contained something other than 0.0 or 1.0."""


class DimMismatch(NeurocoreError, ValueError):
    pass


class ShapeMismatch(NeurocoreError, ValueError):
    pass


class ZeroVariance(NeurocoreError, ValueError):
    pass


class InvalidOpcode(NeurocoreError, ValueError):
    pass


class FieldOverflow(NeurocoreError, ValueError):
    pass


class AddressFault(NeurocoreError, RuntimeError):
    pass


class DeadlockDetected(NeurocoreError, RuntimeError):
    pass


class UnsupportedOp(NeurocoreError, ValueError):
    pass


class CapacityError(NeurocoreError, ValueError):
    pass


class DegenerateBaseline(NeurocoreError, ValueError):
    pass
