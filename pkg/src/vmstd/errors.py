"""Exception types raised across the package."""

from __future__ import annotations


class VmstdError(Exception):
    """Base class for all package errors."""


class NonIntegerCoarseningRatio(VmstdError):
    """Mesh sizes of adjacent levels do not divide evenly."""


class WindowLargerThanParent(VmstdError):
    """A refinement window does not fit inside its parent domain."""


class IndexOutOfRange(VmstdError):
    """Node or mode index outside the valid range."""


class OutOfDomain(VmstdError):
    """Physical coordinate outside the grid's box."""


class ShapeMismatch(VmstdError):
    """Operands live on different index boxes or dimensions."""


class BoxNotRectangular(VmstdError):
    """Mask region is not an axis-aligned contiguous index box."""


class MisalignedInterval(VmstdError):
    """Integration interval endpoints are not nodes of both grids."""


class RankOverflow(VmstdError):
    """Separated expansion needs more modes than the configured cap."""


class SingularSystem(VmstdError):
    """Direction system unsolvable even after regularization."""


class ZeroField(VmstdError):
    """Operation undefined for the zero field."""


class MisalignedWindow(VmstdError):
    """Child window nodes do not lie on the parent window's grid."""


class SizeGuard(VmstdError):
    """Requested dense reference exceeds the configured size limit."""


class MissingExactSolution(VmstdError):
    """Error measurement requested for a problem with no closed form."""


class ConfigInvalid(VmstdError):
    """Run configuration fails validation."""
