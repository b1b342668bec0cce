class BgadjError(Exception):
    """Base class for library errors."""


class SingularMatrixError(BgadjError, ValueError):
    pass


class DegenerateParametersError(BgadjError, ValueError):
    """Two-class parameters lie in the degenerate set (one effective component)."""


class DegenerateClusterError(BgadjError, RuntimeError):
    pass


class DegenerateTemplateError(BgadjError, ValueError):
    pass


class NonFiniteLikelihoodError(BgadjError, RuntimeError):
    pass


class DataFormatError(BgadjError, ValueError):
    """A raster or parameter file does not follow its format."""
