class EgoPoseError(Exception):
    """Base class for all package errors."""


class DegenerateInput(EgoPoseError, ValueError):
    pass


class FormatError(EgoPoseError):
    """A file is truncated, has the wrong magic, or an unsupported version."""


class ConfigMismatch(EgoPoseError):
    """Weights, windows, or layouts do not agree with the model config."""


class InvalidProfile(EgoPoseError, ValueError):
    pass


class TooShort(EgoPoseError, ValueError):
    pass


class TooFewSequences(EgoPoseError, ValueError):
    pass


class WindowLengthMismatch(EgoPoseError, ValueError):
    pass


class OddWindow(EgoPoseError, ValueError):
    pass


class ShapeMismatch(EgoPoseError, ValueError):
    pass


class EmptyDataset(EgoPoseError, ValueError):
    pass


class NonPositiveMeasurement(EgoPoseError, ValueError):
    pass


class MissingWeights(EgoPoseError):
    pass
