"""Exception hierarchy shared by all hexquant modules."""


class HexQuantError(ValueError):
    """Base class for every error raised by the package."""


class DomainError(HexQuantError):
    """Input outside the domain of an operation (bad lengths, duplicates, point outside a cell)."""


class GeometryError(HexQuantError):
    """Degenerate or out-of-regime geometry (collinear triangles, negative radicands)."""


class SingularMatrixError(HexQuantError):
    """A matrix that must be invertible has (numerically) zero determinant."""


class RegimeError(HexQuantError):
    """A configuration left the near-identity regime in which a formula is valid.

    ``nodes`` optionally carries the offending grid indices or site indices.
    """

    def __init__(self, message, nodes=None):
        super().__init__(message)
        self.nodes = nodes


class ModeViolationError(HexQuantError):
    """Hexagon-mode Voronoi construction met a cell that is not a lattice hexagon."""

    def __init__(self, message, sites=None):
        super().__init__(message)
        self.sites = sites


class StagnationError(HexQuantError):
    """Backtracking time stepping drove the step size below its floor."""
