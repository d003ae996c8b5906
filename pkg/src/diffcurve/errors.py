"""Exception types shared across the package."""


class DiffCurveError(Exception):
    """Base class for all package errors."""


class SceneParseError(DiffCurveError):
    """Scene document does not match the schema; `path` names the offending field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class SceneValidationError(DiffCurveError):
    """Scene parsed but violates a semantic invariant."""


class KernelDomainError(DiffCurveError):
    """Kernel evaluated at an inadmissible point (e.g. p == q)."""


class SingularSystemError(DiffCurveError):
    """Linear system is singular or numerically rank deficient."""

    def __init__(self, message, cond=None, panels=None):
        self.cond = cond
        self.panels = panels or []
        super().__init__(message)


class GmresError(DiffCurveError):
    """GMRES produced NaNs or was fed inconsistent operands."""


class StaleCacheError(DiffCurveError):
    """Precomputed FMM data does not match the current curves/targets/tree."""


class ContractViolationError(DiffCurveError):
    """An operator was invoked outside its validity region."""


class RenderError(DiffCurveError):
    """Render request cannot be satisfied (e.g. AA at a non power-of-two size)."""
