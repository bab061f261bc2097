"""Exception types shared across the toolkit."""


class PhysloopError(Exception):
    """Base class for all toolkit errors."""


class NonWatertightSource(PhysloopError):
    """Signed-distance or volume query on a mesh that is not watertight."""


class EmptyMesh(PhysloopError):
    """Operation requires a mesh with at least one face."""


class EmptySelection(PhysloopError):
    """A loss was asked to reduce over an empty keypoint or sample set."""


class DimensionMismatch(PhysloopError):
    """Array shapes do not agree with the companion structure."""


class DisconnectedGraph(PhysloopError):
    """Pair graph is not connected; alignment is ill-posed per component."""


class BlowUp(PhysloopError):
    """A simulated body exceeded the speed ceiling; names the offender."""

    def __init__(self, body_id: str, speed: float):
        super().__init__(f"body {body_id!r} exceeded speed ceiling ({speed:.3g} m/s)")
        self.body_id = body_id
        self.speed = speed


class DegenerateFrame(PhysloopError):
    """Keypoints of a frame are collinear; Procrustes alignment is undefined."""


class ParseError(PhysloopError):
    """JSON container violates the schema; message carries the field path."""


class SchemaVersionMismatch(ParseError):
    """JSON container declares a schema version this toolkit cannot read."""


class MissingAsset(PhysloopError):
    """A file referenced by a scenario does not exist on disk."""
