"""Exception hierarchy shared by every package in the project"""


class BeamError(Exception):
    """Base for all errors raised by the beam surrogate pipeline"""


class ParameterError(BeamError, ValueError):
    """Invalid configuration or argument value"""


class DegenerateGeometryError(BeamError, ValueError):
    """Polygon too small or malformed to carry section properties"""


class OutOfFrameError(BeamError, ValueError):
    """Polygon does not fit inside the raster world window"""


class FormatError(BeamError, ValueError):
    """Malformed file, manifest, checkpoint or external label table"""


class LabelMismatchError(FormatError):
    """Checkpoint label names differ from the data they are applied to"""


class ShapeError(BeamError, ValueError):
    """Tensor shape does not match what a layer declares"""


class StateError(BeamError, RuntimeError):
    """Operation called in the wrong lifecycle state"""


class NumericFault(BeamError, ArithmeticError):
    """NaN or Inf produced during computation"""
