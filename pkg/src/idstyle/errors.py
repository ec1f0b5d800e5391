"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands or files have incompatible dimensions."""


class ParameterError(ValueError):
    """A parameter is outside its documented range."""


class FormatError(ValueError):
    """A file's bytes do not form a valid image, tensor, or manifest."""


class NumericalDivergenceError(ArithmeticError):
    """A latent became non-finite during sampling or inversion."""


class DetectorError(RuntimeError):
    """A face detector failed or returned invalid boxes."""


class DegenerateInputError(ValueError):
    """An input carries no usable signal (e.g. a constant face crop)."""


class PredictorError(RuntimeError):
    """An external noise predictor misbehaved."""
