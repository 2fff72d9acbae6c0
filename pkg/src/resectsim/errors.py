"""Exception types shared across the package."""


class ResectSimError(Exception):
    """Base class for all resectsim errors."""


class ContractViolation(ResectSimError):
    """An operation was called with arguments violating its preconditions."""


class ConfigError(ResectSimError):
    """Invalid phantom or run configuration."""


class FitError(ResectSimError):
    """Surface fit failed (rank deficiency / underdetermined system)."""

    def __init__(self, message, basis_size=None, point_count=None):
        super().__init__(message)
        self.basis_size = basis_size
        self.point_count = point_count


class SelectionError(ResectSimError):
    """No fitted model satisfies the selection constraints."""


class EstimationError(ResectSimError):
    """Pitch estimation failed on a degenerate point set."""


class PlanningError(ResectSimError):
    """Cut planning failed (degenerate tumor extent or invalid config)."""


class ComparisonError(ResectSimError):
    """Two cut plans cannot be compared (no overlapping support)."""


class SegmentationFailed(ResectSimError):
    """No usable trachea segmentation and no human override available."""


class ProtocolError(ResectSimError):
    """Illegal finite-state-machine transition."""


class EmptySnapshot(ResectSimError):
    """Camera pose sees no geometry at all."""


class MetricUndefined(ResectSimError):
    """A metric's inputs are missing (e.g. no char voxels for post-cut RMSE)."""
