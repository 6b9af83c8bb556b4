"""Exact planar primitives: lattice vectors, 2x2 matrices, convex polygons.

Vectors are numpy arrays of shape ``(2,)`` and matrices arrays of shape
``(2, 2)``; most helpers broadcast over leading axes.  Everything is in
lattice units, the scale ``eps`` of a scaled lattice is carried separately.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

SQRT3 = np.sqrt(3.0)

E1 = np.array([1.0, 0.0])
E2 = np.array([0.5, SQRT3 / 2])
E12 = E1 - E2

#: columns are e1, e2: maps lattice coordinates u to Cartesian x = B @ u
BASIS = np.column_stack([E1, E2])
BASIS_INV = np.linalg.inv(BASIS)

IDENTITY = np.eye(2)
S_REFLECT = np.diag([1.0, -1.0])

#: points closer than this to a clipping line are treated as lying on it
CLIP_TOL = 1e-12


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotation_pi_3() -> np.ndarray:
    """Rotation by +pi/3; maps e1 to e2."""
    return np.array([[0.5, -SQRT3 / 2], [SQRT3 / 2, 0.5]])


R60 = rotation_pi_3()


def cross(a, b):
    """Scalar 2-D wedge product ``a x b``, broadcasting over leading axes."""
    a = np.asarray(a)
    b = np.asarray(b)
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def det2(m):
    m = np.asarray(m)
    return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]


def inv2(m):
    """Inverse of (stacks of) 2x2 matrices by the adjugate formula."""
    m = np.asarray(m, dtype=float)
    d = det2(m)
    adj = np.empty_like(m)
    adj[..., 0, 0] = m[..., 1, 1]
    adj[..., 1, 1] = m[..., 0, 0]
    adj[..., 0, 1] = -m[..., 0, 1]
    adj[..., 1, 0] = -m[..., 1, 0]
    return adj / d[..., None, None]


def frobenius(a, b):
    """Frobenius inner product trace(a^T b)."""
    return np.sum(np.asarray(a) * np.asarray(b), axis=(-2, -1))


def frobenius_norm(a):
    return np.sqrt(frobenius(a, a))


def right_triangle_moment(h: float, l: float) -> float:
    """Polar moment of a right triangle about its vertex at the end of leg ``h``.

    The triangle has vertices ``(0, 0)``, ``(h, 0)`` and ``(h, l)``: the leg
    of length ``h`` starts at the moment origin and ends at the right angle,
    the leg of length ``l`` is the one opposite the origin.  The value is
    ``l*h*(h**2 + l**2/3) / 4``.
    """
    if not (h > 0 and l > 0):
        raise DomainError(f"right triangle legs must be positive, got h={h!r}, l={l!r}")
    return 0.25 * l * h * (h * h + l * l / 3.0)


@dataclass(frozen=True)
class ConvexPolygon:
    """Convex polygon with counterclockwise vertices, shape ``(k, 2)``.

    An empty polygon (zero vertices) marks an empty intersection.
    """

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "vertices", v)

    @classmethod
    def empty(cls) -> "ConvexPolygon":
        return cls(np.zeros((0, 2)))

    @classmethod
    def regular(cls, k: int, circumradius: float, center=(0.0, 0.0), phase: float = 0.0):
        t = phase + 2 * np.pi * np.arange(k) / k
        c = np.asarray(center, dtype=float)
        return cls(c + circumradius * np.column_stack([np.cos(t), np.sin(t)]))

    @property
    def is_empty(self) -> bool:
        return len(self.vertices) < 3

    def __len__(self):
        return len(self.vertices)

    def edges(self):
        v = self.vertices
        return v, np.roll(v, -1, axis=0)

    def validate(self, tol: float = 1e-12) -> None:
        """Raise DomainError unless the polygon is convex, simple and CCW."""
        if len(self.vertices) < 3:
            raise DomainError("polygon needs at least 3 vertices")
        if not np.all(np.isfinite(self.vertices)):
            raise DomainError("polygon has non-finite vertices")
        a, b = self.edges()
        c = np.roll(b, -1, axis=0)
        turns = cross(b - a, c - b)
        scale = max(1.0, float(np.max(np.abs(self.vertices)))) ** 2
        if np.any(turns < -tol * scale):
            raise DomainError("polygon is not convex and counterclockwise")
        # a convex CCW polygon winds exactly once
        ang = np.arctan2(cross(b - a, c - b), np.sum((b - a) * (c - b), axis=-1))
        if not np.isclose(ang.sum(), 2 * np.pi, atol=1e-9):
            raise DomainError("polygon is self-intersecting")

    def area(self) -> float:
        if self.is_empty:
            return 0.0
        a, b = self.edges()
        return 0.5 * float(np.sum(cross(a, b)))

    def centroid(self) -> np.ndarray:
        a, b = self.edges()
        w = cross(a, b)
        return np.sum((a + b) * w[:, None], axis=0) / (3.0 * np.sum(w))

    def contains(self, point, strict: bool = True, tol: float = 0.0) -> bool:
        if self.is_empty:
            return False
        a, b = self.edges()
        s = cross(b - a, np.asarray(point, dtype=float) - a)
        return bool(np.all(s > tol)) if strict else bool(np.all(s >= -tol))

    def translate(self, shift) -> "ConvexPolygon":
        return ConvexPolygon(self.vertices + np.asarray(shift, dtype=float))

    def second_moment(self, center, method: str = "triangles") -> float:
        return polygon_second_moment(self, center, method=method)


def polygon_second_moment(poly: ConvexPolygon, center, method: str = "triangles") -> float:
    """Exact ``int_poly |y - center|^2 dy`` for a convex polygon.

    ``method="triangles"`` fans the polygon from ``center`` and splits each
    fan triangle into two right triangles at the foot of the perpendicular
    from ``center`` to the edge; each right triangle is integrated in closed
    form by :func:`right_triangle_moment`.  ``method="shoelace"`` evaluates
    the equivalent vertex polynomial and is used as a cross-check.
    """
    c = np.asarray(center, dtype=float)
    if not poly.contains(c, strict=True):
        raise DomainError("moment center must lie strictly inside the polygon")
    p, q = poly.edges()
    p = p - c
    q = q - c
    if method == "shoelace":
        w = cross(p, q)
        s = p[:, 0] ** 2 + p[:, 0] * q[:, 0] + q[:, 0] ** 2 + p[:, 1] ** 2 + p[:, 1] * q[:, 1] + q[:, 1] ** 2
        return float(np.sum(w * s) / 12.0)
    if method != "triangles":
        raise ValueError(f"unknown method {method!r}")
    return float(sum(sign * right_triangle_moment(h, l)
                     for h, l, sign in right_triangle_decomposition(poly, c)))


def right_triangle_decomposition(poly: ConvexPolygon, center):
    """The right triangles (h, l, sign) whose signed moments sum to the polygon moment.

    Each fan triangle ``(center, p, q)`` contributes the triangles cut by the
    foot of the perpendicular from ``center``; ``sign`` is -1 when the foot
    falls outside the edge and that piece has to be subtracted.
    """
    c = np.asarray(center, dtype=float)
    out = []
    for a, b in zip(*poly.edges()):
        a = a - c
        b = b - c
        u = (b - a) / np.hypot(*(b - a))
        foot = a - np.dot(a, u) * u
        h = float(np.hypot(*foot))
        sa = float(np.dot(a - foot, u))
        sb = float(np.dot(b - foot, u))
        for s, orient in ((sb, 1.0), (sa, -1.0)):
            if s != 0.0:
                out.append((h, abs(s), orient * np.sign(s)))
    return out


def clip_halfplane(poly: ConvexPolygon, point, normal, offset: float = 0.0,
                   tol: float = CLIP_TOL) -> ConvexPolygon:
    """Intersect ``poly`` with ``{y : (y - point) . normal <= offset}``.

    Vertices within ``tol`` of the cut line count as on the line and are kept
    once.  Returns :meth:`ConvexPolygon.empty` when nothing is left.
    """
    if poly.is_empty:
        return poly
    v = poly.vertices
    n = np.asarray(normal, dtype=float)
    s = (v - np.asarray(point, dtype=float)) @ n - offset
    s = np.where(np.abs(s) <= tol * np.hypot(*n), 0.0, s)
    if np.all(s <= 0):
        return poly
    if np.all(s >= 0):
        return ConvexPolygon.empty()
    out = []
    k = len(v)
    for i in range(k):
        j = (i + 1) % k
        if s[i] <= 0:
            out.append(v[i])
        if (s[i] < 0 < s[j]) or (s[j] < 0 < s[i]):
            t = s[i] / (s[i] - s[j])
            out.append(v[i] + t * (v[j] - v[i]))
    res = [out[0]]
    for w in out[1:]:
        if np.hypot(*(w - res[-1])) > tol:
            res.append(w)
    if len(res) > 1 and np.hypot(*(res[0] - res[-1])) <= tol:
        res.pop()
    if len(res) < 3:
        return ConvexPolygon.empty()
    return ConvexPolygon(np.array(res))


def bisector_clip(poly: ConvexPolygon, site, other) -> ConvexPolygon:
    """Keep the part of ``poly`` closer to ``site`` than to ``other``."""
    site = np.asarray(site, dtype=float)
    other = np.asarray(other, dtype=float)
    return clip_halfplane(poly, 0.5 * (site + other), other - site, 0.0)


def circumcenter(a, b, c):
    """Circumcenters of triangles, broadcasting over leading axes."""
    a = np.asarray(a, dtype=float)
    ba = np.asarray(b, dtype=float) - a
    ca = np.asarray(c, dtype=float) - a
    d = 2.0 * cross(ba, ca)
    nb = np.sum(ba * ba, axis=-1)
    nc = np.sum(ca * ca, axis=-1)
    ux = (ca[..., 1] * nb - ba[..., 1] * nc) / d
    uy = (ba[..., 0] * nc - ca[..., 0] * nb) / d
    return a + np.stack([ux, uy], axis=-1)
