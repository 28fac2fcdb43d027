"""Exception types raised across the package."""


class PlateauError(Exception):
    """Base class for library errors."""


class RadiusNotGeneric(PlateauError):
    """A vertex lies too close to the sphere used for slicing."""


class GridTooCoarse(PlateauError):
    """The grid has no core region Q1."""


class ProjectionCenterNotFound(PlateauError):
    """No admissible radial-projection center off the set was found."""


class HoleNotFound(PlateauError):
    """A partially covered face has no empty ball at scan resolution."""


class RatioOutOfRange(PlateauError):
    """Rectangle side ratio outside the supported range."""


class DegeneratePair(PlateauError):
    """Two simplices are coplanar within tolerance."""


class CurvesTooClose(PlateauError):
    """Curves passed to the linking number are (nearly) touching."""


class RetractionUnavailable(PlateauError):
    """Sliding mode without a usable retraction onto the boundary."""


class SpanningLost(PlateauError):
    """An accepted iterate stopped spanning. Indicates a bug."""


class StageExhausted(PlateauError):
    """A minimization stage ran out of iterations before converging."""


class BoundaryMassNotGeneric(PlateauError):
    """The audit cube boundary carries positive mass."""


class MeshFormatError(PlateauError):
    """Malformed mesh or descriptor file."""


class NotSpanning(PlateauError):
    """The initial complex of a problem fails the spanning test."""
