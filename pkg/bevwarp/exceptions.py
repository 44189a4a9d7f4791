class BevWarpError(Exception):
    """Base class for every failure raised by the toolkit."""


class GridFormatError(BevWarpError, ValueError):
    pass


class ScenarioFormatError(BevWarpError, ValueError):
    pass


class SimulationError(BevWarpError, ValueError):
    pass


class LabelError(BevWarpError, ValueError):
    pass


class AssociationError(BevWarpError, ValueError):
    pass


class MetricsError(BevWarpError, ValueError):
    pass


class LossError(BevWarpError, ValueError):
    pass


class OutOfBoundsError(BevWarpError, ValueError):
    pass


class ArtifactError(BevWarpError, OSError):
    """A required artifact directory or file is missing or unreadable."""
