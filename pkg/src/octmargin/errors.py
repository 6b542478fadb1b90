"""Exception types shared across the package."""


class OctMarginError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(OctMarginError):
    """A tensor does not match the shape the architecture declares.

    ``layer`` names the offending layer.
    """

    def __init__(self, layer, message):
        self.layer = layer
        super().__init__(f"{layer}: {message}")


class StaleCacheError(OctMarginError):
    """A forward cache was paired with parameters it was not built from."""


class TrainingDivergedError(OctMarginError):
    """Loss or gradients became non-finite during training."""

    def __init__(self, epoch, step, message):
        self.epoch = epoch
        self.step = step
        self.message = message
        where = f"epoch {epoch}, step {step}: " if epoch is not None else ""
        super().__init__(where + message)


class SliceShrinkError(OctMarginError):
    """Slice-sampling shrinkage exhausted its contraction budget."""

    def __init__(self, coordinate, message):
        self.coordinate = coordinate
        super().__init__(f"coordinate {coordinate}: {message}")


class UsageError(OctMarginError):
    """Invalid command-line or configuration input."""

    def __init__(self, code, message):
        self.code = code
        super().__init__(message)
