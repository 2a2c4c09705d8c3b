"""Exception types raised across the refinement pipeline."""


class LodRefineError(Exception):
    """Base class for all errors raised by this package."""


# -- planar geometry ---------------------------------------------------------

class DegeneratePolygon(LodRefineError):
    """Polygon area below threshold or vertices collinear."""


class HoleOutsideWall(LodRefineError):
    """Requested hole rectangle is not strictly inside the wall exterior."""


class HoleOverlap(LodRefineError):
    """Requested hole rectangle intersects an existing interior ring."""


# -- model I/O ---------------------------------------------------------------

class SchemaError(LodRefineError):
    """Structurally invalid model document."""


class GeometryError(LodRefineError):
    """Ring geometry violates polygon invariants."""


class DuplicateId(LodRefineError):
    """Two model objects carry the same identifier."""


class UnresolvedParent(LodRefineError):
    """An opening references a wall surface that does not exist."""


# -- point cloud I/O ---------------------------------------------------------

class FormatError(LodRefineError):
    """Malformed point-cloud file; carries the offending line number."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class UnknownOriginIndex(FormatError):
    """Point references a sensor origin index that was never declared."""


# -- visibility / maps -------------------------------------------------------

class EmptyInput(LodRefineError):
    """No points, origins, or model vertices to build a grid from."""


class EmptyWall(LodRefineError):
    """Wall has no classified voxels (scanner never covered it)."""


class SizeMismatch(LodRefineError):
    """External raster aspect ratio deviates too far from the wall's."""


class FrameMismatch(LodRefineError):
    """Probability maps do not share wall frame and resolution."""


# -- reconstruction / embedding ----------------------------------------------

class ClassMismatch(LodRefineError):
    """Library object class does not match the detected instance class."""


class UnmappedClass(LodRefineError):
    """Facade class has no standard CityGML mapping (catch-all class)."""


class UnresolvedWall(LodRefineError):
    """Embedding target wall id does not resolve in the model."""
