"""Periodic Voronoi diagrams of deformed lattices and their quantization energies.

Two constructions are provided.  Hexagon mode takes the six lattice
neighbours from index arithmetic and places the cell vertices at the
circumcenters of the six lattice triangles around a site; it is exact as
long as every lattice triangle stays acute (the triangulation is then
Delaunay).  General mode clips a box around each site against every
periodic image nearby and serves as the oracle.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DomainError, GeometryError, ModeViolationError
from .geometry import BASIS, ConvexPolygon, bisector_clip, circumcenter, cross, polygon_second_moment
from .lattice import AREA_PI, DeformationField, HexLattice, sample_points, to_cartesian, wrap, to_lattice

#: index offsets of the six lattice neighbours, counterclockwise from e1
NEIGHBOR_OFFSETS = np.array([(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)])

#: hexagon mode is guaranteed when every lattice edge is perturbed by less
#: than sin(pi/12) of its length: angles of 60 deg then stay below 90 deg
HEXAGON_ETA_THRESHOLD = float(np.sin(np.pi / 12))

#: F(I): energy of a regular cell in units of eps^4
CELL_ENERGY_IDENTITY = 5.0 / (24.0 * np.sqrt(3.0))


def cell_energy_triangles(A, B, C):
    """Moment about ``A`` of the part of the Voronoi cell of ``A`` inside triangle ABC.

    That part is the kite ``A, mid(AB), O, mid(AC)`` with ``O`` the
    circumcenter; each half is a right triangle with legs ``|AB|/2`` and
    ``|AB|/2 * cot(C)`` (resp. ``|AC|/2 * cot(B)``).  With ``q = 1/sin^2``
    of the opposite angle this gives the two terms
    ``|AB|^4 sqrt(q-1)(q+2)/192 + |AC|^4 sqrt(q'-1)(q'+2)/192``.
    Broadcasts over leading axes.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    C = np.asarray(C, dtype=float)
    ab, ac, cb, ca, ba, bc = B - A, C - A, B - C, A - C, A - B, C - B
    w = cross(ab, ac)
    if np.any(w == 0):
        raise GeometryError("collinear triangle")
    nsq = lambda v: np.sum(v * v, axis=-1)  # noqa: E731
    # every angle acute <=> circumcenter strictly inside
    if np.any(np.sum(ab * ac, axis=-1) <= 0) or np.any(np.sum(ba * bc, axis=-1) <= 0) \
            or np.any(np.sum(ca * cb, axis=-1) <= 0):
        raise GeometryError("triangle is not acute: circumcenter outside")
    q = nsq(cb) * nsq(ca) / cross(ca, cb) ** 2
    qp = nsq(bc) * nsq(ba) / cross(ba, bc) ** 2
    if np.any(q <= 1) or np.any(qp <= 1):
        raise GeometryError("degenerate angle (q <= 1)")
    return (nsq(ab) ** 2 * np.sqrt(q - 1) * (q + 2) + nsq(ac) ** 2 * np.sqrt(qp - 1) * (qp + 2)) / 192.0


@dataclass
class VoronoiDiagram:
    """Periodic Voronoi tessellation of ``n*n`` sites on the torus ``R^2 / L``.

    ``sites`` are torus representatives in Pi, ``cells[i]`` is the cell of
    site ``i`` in the plane (not wrapped, it surrounds ``sites[i]``) and
    ``adjacency[i]`` lists neighbouring site indices.  In hexagon mode
    ``rel`` holds the six neighbour images relative to each site.
    """

    sites: np.ndarray
    cells: list
    adjacency: list
    mode: str
    lattice: HexLattice | None = None
    rel: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.sites)

    def areas(self) -> np.ndarray:
        if self.rel is not None:
            v = self.vertex_array()
            return 0.5 * np.sum(cross(v, np.roll(v, -1, axis=1)), axis=1)
        return np.array([c.area() for c in self.cells])

    def vertex_array(self) -> np.ndarray:
        """Hexagon mode only: cell vertices ``(N, 6, 2)`` relative to the site."""
        if self.rel is None:
            raise DomainError("vertex_array is only available in hexagon mode")
        return circumcenter(np.zeros(2), self.rel, np.roll(self.rel, -1, axis=1))

    def centroids(self) -> np.ndarray:
        return np.array([c.centroid() for c in self.cells])

    def energies(self, path: str = "auto") -> np.ndarray:
        """Per-cell ``int_cell |y - site|^2 dy``."""
        if path == "auto":
            path = "triangles" if self.rel is not None else "polygon"
        if path == "triangles":
            if self.rel is None:
                raise DomainError("triangle path needs a hexagon-mode diagram")
            z = np.zeros_like(self.rel)
            return np.sum(cell_energy_triangles(z, self.rel, np.roll(self.rel, -1, axis=1)), axis=1)
        if path == "polygon":
            return np.array([polygon_second_moment(c, s) for c, s in zip(self.cells, self.sites)])
        raise ValueError(f"unknown path {path!r}")


def _check_distinct(points, tol=1e-12):
    tiles = _tile_shifts(1)
    images = (points[None, :, :] + tiles[:, None, :]).reshape(-1, 2)
    tree = cKDTree(images)
    base = tree.query_ball_point(points, r=tol)
    n = len(points)
    for i, hits in enumerate(base):
        if len(hits) > 1:
            others = sorted({h % n for h in hits} - {i})
            raise DomainError(f"duplicate points on the torus: site {i} coincides with {others}")


def _tile_shifts(T: int) -> np.ndarray:
    a = np.arange(-T, T + 1)
    ab = np.stack(np.meshgrid(a, a, indexing="ij"), axis=-1).reshape(-1, 2)
    return to_cartesian(ab.astype(float))


def voronoi_periodic(points, lattice: HexLattice | None = None, mode: str = "hexagon",
                     radius: float | None = None) -> VoronoiDiagram:
    """Periodic Voronoi diagram of ``points`` on ``R^2 / L``.

    In hexagon mode ``points`` must be the ``n*n`` deformed lattice sites
    ordered by lattice index, as returned by :func:`hexquant.lattice.sample_points`.
    General mode accepts any set of distinct points; its clipping radius
    starts at ``radius`` (default ``3 eps``) and grows until the cell is
    certified (every vertex within half the radius).
    """
    pts = wrap(np.asarray(points, dtype=float).reshape(-1, 2))
    if mode == "hexagon":
        if lattice is None:
            raise DomainError("hexagon mode needs the lattice")
        return _voronoi_hexagon(pts, lattice)
    if mode == "general":
        return _voronoi_general(pts, lattice, radius)
    raise ValueError(f"unknown mode {mode!r}")


def lattice_displacements(points, lattice: HexLattice) -> np.ndarray:
    """``points - eps k`` reduced to the shortest representative, shape ``(n, n, 2)``."""
    n = lattice.n
    ref = lattice.reference_points()
    return wrap(np.asarray(points, dtype=float).reshape(n, n, 2) - ref)


def discrete_eta(points, lattice: HexLattice) -> float:
    """``max |d(k + o) - d(k)| / eps`` over lattice edges; below the hexagon threshold the mode is safe."""
    d = lattice_displacements(points, lattice)
    eta = 0.0
    for o in NEIGHBOR_OFFSETS[:3]:
        dd = np.roll(d, shift=(-o[0], -o[1]), axis=(0, 1)) - d
        eta = max(eta, float(np.max(np.hypot(dd[..., 0], dd[..., 1]))))
    return eta * lattice.n


def _hex_relative(pts, lattice):
    n = lattice.n
    if n < 3:
        raise DomainError("hexagon mode needs n >= 3")
    eps = lattice.epsilon
    d = lattice_displacements(pts, lattice)
    rel = np.empty((n, n, 6, 2))
    for j, o in enumerate(NEIGHBOR_OFFSETS):
        dn = np.roll(d, shift=(-o[0], -o[1]), axis=(0, 1))
        rel[:, :, j] = eps * (BASIS @ o) + (dn - d)
    return rel.reshape(n * n, 6, 2)


def _voronoi_hexagon(pts, lattice):
    n = lattice.n
    if len(pts) != n * n:
        raise DomainError(f"expected {n * n} points for n={n}, got {len(pts)}")
    rel = _hex_relative(pts, lattice)
    a, b = rel, np.roll(rel, -1, axis=1)
    # triangles (0, r_j, r_j+1) must be positively oriented and acute
    bad = (cross(a, b) <= 0) | (np.sum(a * b, axis=-1) <= 0) \
        | (np.sum(-a * (b - a), axis=-1) <= 0) | (np.sum(-b * (a - b), axis=-1) <= 0)
    if np.any(bad):
        sites = np.unique(np.nonzero(bad)[0])
        raise ModeViolationError(
            f"{len(sites)} cell(s) are not lattice hexagons (discrete eta "
            f"{discrete_eta(pts, lattice):.3f}, guaranteed below {HEXAGON_ETA_THRESHOLD:.4f})", sites=sites)
    verts = circumcenter(np.zeros(2), a, b)
    cells = [ConvexPolygon(v + s) for v, s in zip(verts, pts)]
    idx = np.arange(n * n).reshape(n, n)
    adjacency = [np.array([idx[(i + o[0]) % n, (j + o[1]) % n] for o in NEIGHBOR_OFFSETS])
                 for i in range(n) for j in range(n)]
    return VoronoiDiagram(pts, cells, adjacency, "hexagon", lattice, rel)


def _voronoi_general(pts, lattice, radius):
    npts = len(pts)
    if npts < 1:
        raise DomainError("no points")
    _check_distinct(pts)
    eps = lattice.epsilon if lattice is not None else 1.0 / np.sqrt(npts)
    R = 3 * eps if radius is None else float(radius)
    cells, adjacency = [None] * npts, [None] * npts
    todo = np.arange(npts)
    while len(todo):
        T = int(np.ceil(2 * R / (np.sqrt(3) / 2))) + 1
        shifts = _tile_shifts(T)
        images = (pts[None, :, :] + shifts[:, None, :]).reshape(-1, 2)
        owner = np.tile(np.arange(npts), len(shifts))
        tree = cKDTree(images)
        retry = []
        for i in todo:
            s = pts[i]
            near = tree.query_ball_point(s, r=R)
            near = [j for j in near if not np.allclose(images[j], s, atol=0, rtol=0)
                    and np.hypot(*(images[j] - s)) > 0]
            poly = ConvexPolygon(s + R * np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float))
            # nearest first keeps intermediate polygons small
            near.sort(key=lambda j: np.hypot(*(images[j] - s)))
            for j in near:
                poly = bisector_clip(poly, s, images[j])
            vmax = float(np.max(np.hypot(*(poly.vertices - s).T))) if not poly.is_empty else np.inf
            if 2 * vmax > R:
                retry.append(i)
                continue
            cells[i] = poly
            adjacency[i] = _active_neighbors(poly, s, images[near], owner[near])
        todo = np.array(retry, dtype=int)
        R *= 2
    return VoronoiDiagram(pts, cells, adjacency, "general", lattice)


def _active_neighbors(poly, s, imgs, owners, tol=1e-10):
    out = []
    v = poly.vertices
    for p, o in zip(imgs, owners):
        nrm = p - s
        on = np.abs((v - 0.5 * (s + p)) @ nrm) <= tol * max(1.0, float(nrm @ nrm))
        if np.count_nonzero(on) >= 2:
            out.append(int(o))
    return np.array(out, dtype=int)


def cell_energy(diagram: VoronoiDiagram, site_index: int, path: str = "auto") -> float:
    """``int_cell |y - site|^2 dy`` for one site."""
    if path == "auto":
        path = "triangles" if diagram.rel is not None else "polygon"
    if path == "triangles":
        if diagram.rel is None:
            raise DomainError("triangle path needs a hexagon-mode diagram")
        r = diagram.rel[site_index]
        return float(np.sum(cell_energy_triangles(np.zeros_like(r), r, np.roll(r, -1, axis=0))))
    if path == "polygon":
        return polygon_second_moment(diagram.cells[site_index], diagram.sites[site_index])
    raise ValueError(f"unknown path {path!r}")


def quantization_energy(X: DeformationField, lattice: HexLattice, mode: str = "hexagon") -> float:
    """``int_{X(Pi)} dist(y, X(eps L))^2 dy`` as the sum of cell energies."""
    diag = voronoi_periodic(sample_points(X, lattice), lattice, mode)
    return float(np.sum(diag.energies()))


def quantization_energy_points(points, lattice: HexLattice, mode: str = "hexagon") -> float:
    return float(np.sum(voronoi_periodic(points, lattice, mode).energies()))


def optimal_masses(diagram: VoronoiDiagram) -> np.ndarray:
    """``m_i = |V_i| / |Pi|`` for the uniform density on the torus."""
    return diagram.areas() / AREA_PI


# --------------------------------------------------------------------------
# ball average


@dataclass
class BallAverage:
    """Estimate of ``(1/(pi L^2)) int_{B(0,L)} dist(y, X_eps)^2 dy``.

    Two candidate limits are reported: the per-period integral ``Q`` read
    literally, and ``Q / |Pi|``, the per-unit-area density.
    """

    L: float
    value: float
    stderr: float
    per_period: float
    per_area: float
    interior_cells: int
    boundary_cells: int
    samples: int

    @property
    def gap(self) -> float:
        """Relative gap to the per-area reference."""
        return abs(self.value - self.per_area) / self.per_area

    @property
    def gap_literal(self) -> float:
        return abs(self.value - self.per_period) / self.per_period

    @property
    def matching_normalization(self) -> str:
        return "per_area" if self.gap <= self.gap_literal else "per_period"

    def as_dict(self) -> dict:
        return {"L": self.L, "value": self.value, "stderr": self.stderr, "per_period": self.per_period,
                "per_area": self.per_area, "gap": self.gap, "gap_literal": self.gap_literal,
                "matching_normalization": self.matching_normalization,
                "interior_cells": self.interior_cells, "boundary_cells": self.boundary_cells,
                "samples": self.samples}


def deformed_diameter(X: DeformationField, m: int = 64) -> float:
    """Upper bound ``diam(Pi) + 2 sup|Y|`` for ``diam X(Pi)``."""
    y, _ = X.on_grid(m)
    return float(np.hypot(*(BASIS[:, 0] + BASIS[:, 1])) + 2 * np.max(np.hypot(y[..., 0], y[..., 1])))


def _sample_polygon(rng, verts, k):
    """``k`` uniform points in a convex polygon by area-weighted fan triangles."""
    a = verts[0]
    b, c = verts[1:-1], verts[2:]
    w = np.abs(cross(b - a, c - a))
    tri = rng.choice(len(w), size=k, p=w / w.sum())
    r1, r2 = rng.random(k), rng.random(k)
    flip = r1 + r2 > 1
    r1[flip], r2[flip] = 1 - r1[flip], 1 - r2[flip]
    return a + r1[:, None] * (b[tri] - a) + r2[:, None] * (c[tri] - a)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)


def _green_segment(p, q):
    """``int (x^3/3 + x y^2) dy`` along the segment p -> q (exact, cubic integrand)."""
    t = 0.5 * (_GL_X + 1)
    x = p[0] + t * (q[0] - p[0])
    y = p[1] + t * (q[1] - p[1])
    return 0.5 * np.sum(_GL_W * (x**3 / 3 + x * y * y)) * (q[1] - p[1])


def _green_arc(c, L, t0, t1):
    """Same line integral along the circle ``c + L(cos t, sin t)`` for t in [t0, t1]."""
    t = t0 + 0.5 * (_GL_X + 1) * (t1 - t0)
    x = c[0] + L * np.cos(t)
    y = c[1] + L * np.sin(t)
    return 0.5 * (t1 - t0) * np.sum(_GL_W * (x**3 / 3 + x * y * y) * L * np.cos(t))


def polygon_disk_moment(verts, site, L: float) -> float:
    """Exact ``int_{poly cap B(0,L)} |y - site|^2 dy`` by Green's theorem.

    ``x^2 + y^2 = d/dx (x^3/3 + x y^2)`` (coordinates relative to ``site``),
    so the area integral is a line integral over the boundary of the
    intersection: straight pieces of the polygon plus arcs of the circle.
    The arcs of a cell are short, where 12-point Gauss-Legendre is exact to
    rounding.
    """
    v = np.asarray(verts, dtype=float) - site
    c = -np.asarray(site, dtype=float)
    r2 = L * L
    inside = np.sum((v - c) ** 2, axis=1) < r2
    if np.all(inside):
        return _polygon_green(v)
    total = 0.0
    exit_pt = first_entry = None
    k = len(v)
    for i in range(k):
        p, q = v[i], v[(i + 1) % k]
        d = q - p
        f = p - c
        a, b, cc = d @ d, 2 * f @ d, f @ f - r2
        disc = b * b - 4 * a * cc
        ts = []
        if disc > 0:
            r = np.sqrt(disc)
            ts = [t for t in ((-b - r) / (2 * a), (-b + r) / (2 * a)) if 0 < t < 1]
        pts = [p] + [p + t * d for t in ts] + [q]
        for j in range(len(pts) - 1):
            start, end = pts[j], pts[j + 1]
            if np.sum((0.5 * (start + end) - c) ** 2) >= r2:
                continue
            if j > 0 or not inside[i]:
                # entering the disk through the circle
                if exit_pt is None:
                    first_entry = start
                else:
                    total += _arc_between(c, L, exit_pt, start)
            total += _green_segment(start, end)
            if j + 1 < len(pts) - 1 or not inside[(i + 1) % k]:
                exit_pt = end
    if exit_pt is not None and first_entry is not None:
        total += _arc_between(c, L, exit_pt, first_entry)
    return float(total)


def _arc_between(c, L, p, q):
    t0 = np.arctan2(p[1] - c[1], p[0] - c[0])
    t1 = np.arctan2(q[1] - c[1], q[0] - c[0])
    dt = (t1 - t0) % (2 * np.pi)
    return _green_arc(c, L, t0, t0 + dt)


def _polygon_green(v):
    k = len(v)
    return float(sum(_green_segment(v[i], v[(i + 1) % k]) for i in range(k)))


def ball_average(X: DeformationField, lattice: HexLattice, L: float, samples: int = 1_000_000,
                 seed: int = 0, mode: str = "hexagon", verify_nearest: bool = False,
                 method: str = "montecarlo") -> BallAverage:
    """Stratified estimate of the disk average of ``dist(y, X(eps L))^2``.

    The strata are the Voronoi cells of the tiled sites: cells inside the
    disk are integrated exactly, cells cut by the circle get Monte-Carlo
    points in proportion to their area.  ``verify_nearest`` re-derives the
    nearest site of every sample with a k-d tree over the tiled sites.
    ``method="exact"`` integrates the cut cells with
    :func:`polygon_disk_moment` instead, which has no statistical error.
    """
    if method not in ("montecarlo", "exact"):
        raise ValueError(f"unknown method {method!r}")
    diam = deformed_diameter(X)
    if not L > diam:
        raise DomainError(f"L={L} must exceed diam X(Pi) ~ {diam:.4f}")
    diag = voronoi_periodic(sample_points(X, lattice), lattice, mode)
    energies = diag.energies()
    Q = float(np.sum(energies))
    rel_verts = [c.vertices - s for c, s in zip(diag.cells, diag.sites)]
    reach = np.array([np.max(np.hypot(*v.T)) for v in rel_verts])
    T = int(np.ceil((L + 2) / (np.sqrt(3) / 2))) + 1
    a = np.arange(-T, T + 1)
    ab = np.stack(np.meshgrid(a, a, indexing="ij"), axis=-1).reshape(-1, 2).astype(float)
    shifts = to_cartesian(ab)
    img = diag.sites[None, :, :] + shifts[:, None, :]
    dist = np.hypot(img[..., 0], img[..., 1])
    inside = dist + reach[None, :] < L
    cut = (~inside) & (dist - reach[None, :] < L)
    total = float(np.sum(inside * energies[None, :]))
    t_idx, s_idx = np.nonzero(cut)
    areas = diag.areas()
    rng = np.random.default_rng(seed)
    cut_area = areas[s_idx]
    if method == "exact":
        for t, si in zip(t_idx, s_idx):
            total += polygon_disk_moment(diag.cells[si].vertices - diag.sites[si] + img[t, si], img[t, si], L)
        area_disk = np.pi * L * L
        return BallAverage(L=float(L), value=total / area_disk, stderr=0.0, per_period=Q, per_area=Q / AREA_PI,
                           interior_cells=int(inside.sum()), boundary_cells=int(cut.sum()), samples=0)
    counts = np.maximum(2, np.round(samples * cut_area / cut_area.sum()).astype(int)) if len(s_idx) else []
    var = 0.0
    all_pts, all_sites = [], []
    for t, s, k in zip(t_idx, s_idx, counts):
        site = img[t, s]
        p = _sample_polygon(rng, rel_verts[s], k) + site
        f = np.sum((p - site) ** 2, axis=1) * (np.hypot(p[:, 0], p[:, 1]) < L)
        total += areas[s] * f.mean()
        var += areas[s] ** 2 * f.var(ddof=1) / k
        if verify_nearest:
            all_pts.append(p)
            all_sites.append(np.broadcast_to(site, p.shape))
    if verify_nearest and all_pts:
        tree = cKDTree(img.reshape(-1, 2))
        p = np.concatenate(all_pts)
        dd, _ = tree.query(p)
        own = np.hypot(*(p - np.concatenate(all_sites)).T)
        if np.max(own - dd) > 1e-12:
            raise GeometryError("stratum site is not the nearest site")
    area_disk = np.pi * L * L
    return BallAverage(L=float(L), value=total / area_disk, stderr=float(np.sqrt(var)) / area_disk,
                       per_period=Q, per_area=Q / AREA_PI, interior_cells=int(inside.sum()),
                       boundary_cells=int(cut.sum()), samples=int(np.sum(counts)))


# --------------------------------------------------------------------------
# export


CELL_CSV_HEADER = ["site", "k1", "k2", "x1 [lattice units]", "x2 [lattice units]", "area [lattice units^2]",
                   "centroid_x1 [lattice units]", "centroid_x2 [lattice units]", "energy [lattice units^4]"]


def cells_to_csv(diagram: VoronoiDiagram, out=None) -> str:
    """Per-cell records as RFC-4180 CSV; written to ``out`` (path or file) if given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(CELL_CSV_HEADER)
    en = diagram.energies()
    ar = diagram.areas()
    cen = diagram.centroids()
    if diagram.lattice is not None and len(diagram) == diagram.lattice.num_sites:
        ks = diagram.lattice.indices().reshape(-1, 2)
    else:
        ks = np.full((len(diagram), 2), -1)
    for i, (s, k) in enumerate(zip(diagram.sites, ks)):
        w.writerow([i, int(k[0]), int(k[1])] + [repr(float(v)) for v in (s[0], s[1], ar[i], cen[i, 0], cen[i, 1], en[i])])
    text = buf.getvalue()
    _write(out, text)
    return text


def _write(out, text):
    if out is None:
        return
    if hasattr(out, "write"):
        out.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


def lattice_fit(points, lattice: HexLattice):
    """Best-fit translation of the undeformed lattice: returns (shift, per-site deviations)."""
    d = lattice_displacements(points, lattice).reshape(-1, 2)
    # average on the torus via the circular mean of lattice coordinates
    u = to_lattice(d)
    ang = 2 * np.pi * u
    t = np.arctan2(np.sin(ang).mean(axis=0), np.cos(ang).mean(axis=0)) / (2 * np.pi)
    shift = to_cartesian(t)
    shift = shift + wrap(d - shift).mean(axis=0)
    dev = wrap(d - shift)
    return shift, np.hypot(dev[:, 0], dev[:, 1])


__all__ = [
    "NEIGHBOR_OFFSETS", "HEXAGON_ETA_THRESHOLD", "CELL_ENERGY_IDENTITY", "VoronoiDiagram", "BallAverage",
    "cell_energy_triangles", "voronoi_periodic", "cell_energy", "quantization_energy",
    "quantization_energy_points", "optimal_masses", "ball_average", "cells_to_csv", "discrete_eta",
    "lattice_displacements", "lattice_fit", "deformed_diameter"
]
