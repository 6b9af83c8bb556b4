"""Hexagonal lattice, its fundamental domain and periodic deformations.

Points of the plane are handled in two charts: Cartesian ``x`` and lattice
coordinates ``u`` with ``x = u[0]*e1 + u[1]*e2``.  The fundamental domain is
``u in [-1/2, 1/2)^2`` and periodicity is integer arithmetic in ``u``.

A deformation is ``X = id + Y`` with ``Y`` periodic under the lattice.  The
concrete field types all expose the displacement ``Y`` and its Cartesian
Jacobian ``grad Y`` at arbitrary points and on the tensor trapezoid grid.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .geometry import BASIS, BASIS_INV, IDENTITY, SQRT3, det2, frobenius_norm

AREA_PI = SQRT3 / 2

#: default bound on ||X - id||_{W^{1,inf}}
ETA_DEFAULT = 0.05

#: trigonometric interpolation up to this grid size, periodic cubic splines above
TRIG_MAX_M = 64


def to_lattice(x):
    return np.asarray(x, dtype=float) @ BASIS_INV.T


def to_cartesian(u):
    return np.asarray(u, dtype=float) @ BASIS.T


def wrap_lattice(u):
    """Reduce lattice coordinates to ``[-1/2, 1/2)``."""
    u = np.asarray(u, dtype=float)
    return u - np.floor(u + 0.5)


def wrap(x):
    """Reduce Cartesian points to their representative in the fundamental domain."""
    return to_cartesian(wrap_lattice(to_lattice(x)))


def torus_delta(a, b):
    """Shortest-representative-in-Pi difference ``a - b`` on the torus."""
    return wrap(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))


def grid_nodes(m: int) -> np.ndarray:
    """1-D trapezoid nodes ``-1/2 + j/m`` of the periodic grid."""
    return -0.5 + np.arange(m) / m


def grid_points(m: int) -> np.ndarray:
    """Cartesian coordinates of the ``m x m`` grid, shape ``(m, m, 2)``, index ``[i1, i2]``."""
    t = grid_nodes(m)
    u = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1)
    return to_cartesian(u)


def quadrature_weight(m: int) -> float:
    return AREA_PI / (m * m)


@dataclass(frozen=True)
class HexLattice:
    """The lattice ``Z e1 + Z e2`` scaled by ``eps = 1/n``."""

    n: int
    basis: np.ndarray = field(default_factory=lambda: BASIS.copy(), repr=False, compare=False)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"n must be a positive integer, got {self.n!r}")

    @property
    def epsilon(self) -> float:
        return 1.0 / self.n

    @property
    def area(self) -> float:
        """Area of the fundamental domain, ``sqrt(3)/2``."""
        return AREA_PI

    @property
    def num_sites(self) -> int:
        return self.n * self.n

    def indices(self) -> np.ndarray:
        """Integer lattice indices ``k``, shape ``(n, n, 2)``, with ``|eps k_i| <= 1/2``."""
        k = np.arange(self.n) - self.n // 2
        return np.stack(np.meshgrid(k, k, indexing="ij"), axis=-1)

    def reference_points(self) -> np.ndarray:
        """Undeformed sites ``eps * (k1 e1 + k2 e2)``, shape ``(n, n, 2)``."""
        return to_cartesian(self.indices() * self.epsilon)


# --------------------------------------------------------------------------
# deformation fields


class DeformationField:
    """Periodic displacement ``Y`` of the deformation ``X = id + Y``.

    Subclasses implement ``_eval_u`` returning ``(Y, dY/du)`` at lattice
    coordinates.  Instances are immutable.
    """

    kind = "abstract"
    periodic = True

    def _eval_u(self, u):
        raise NotImplementedError

    def _at(self, x):
        u = to_lattice(x)
        y, du = self._eval_u(u)
        return y, du @ BASIS_INV

    def displacement(self, x) -> np.ndarray:
        return self._at(x)[0]

    def jacobian(self, x) -> np.ndarray:
        """Cartesian Jacobian of the displacement, ``[..., i, j] = dY_i/dx_j``."""
        return self._at(x)[1]

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x + self.displacement(x)

    def on_grid(self, m: int):
        """``(Y, grad Y)`` at the ``m x m`` trapezoid nodes."""
        return self._at(grid_points(m))

    def shifted(self, c) -> "DeformationField":
        raise NotImplementedError

    def scaled(self, s: float) -> "DeformationField":
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class FourierField(DeformationField):
    """``Y(u) = shift + sum_k a_k cos(2 pi k.u) + b_k sin(2 pi k.u)``.

    ``modes`` holds integer wave vectors ``k`` in lattice coordinates,
    ``cos`` and ``sin`` the matching vector coefficients, shape ``(K, 2)``.
    """

    modes: np.ndarray
    cos: np.ndarray
    sin: np.ndarray
    shift: np.ndarray = field(default_factory=lambda: np.zeros(2))

    kind = "fourier"

    def __post_init__(self):
        for name, shape in (("modes", (-1, 2)), ("cos", (-1, 2)), ("sin", (-1, 2)), ("shift", (2,))):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(shape))
        if np.any(self.modes != np.round(self.modes)):
            raise DomainError("Fourier modes must be integer vectors")
        if not (len(self.modes) == len(self.cos) == len(self.sin)):
            raise DomainError("modes, cos and sin must have equal length")

    def _eval_u(self, u):
        u = np.asarray(u, dtype=float)
        phase = 2 * np.pi * (u @ self.modes.T)  # (..., K)
        c, s = np.cos(phase), np.sin(phase)
        y = self.shift + c @ self.cos + s @ self.sin
        # dY_i/du_j = sum_k 2 pi k_j (-a_ki sin + b_ki cos)
        w = 2 * np.pi * (c[..., None] * self.sin - s[..., None] * self.cos)  # (..., K, 2)
        du = np.einsum("...ki,kj->...ij", w, self.modes)
        return y, du

    def shifted(self, c):
        return FourierField(self.modes, self.cos, self.sin, self.shift + np.asarray(c, dtype=float))

    def scaled(self, s):
        return FourierField(self.modes, s * self.cos, s * self.sin, s * self.shift)

    def to_dict(self) -> dict:
        return {
            "kind": "fourier",
            "modes": self.modes.astype(int).tolist(),
            "cos": self.cos.tolist(),
            "sin": self.sin.tolist(),
            "shift": self.shift.tolist(),
        }


def _spectral_axes(m):
    k = np.fft.fftfreq(m, d=1.0 / m)
    if m % 2 == 0:
        k[m // 2] = 0.0  # derivative of the symmetric Nyquist mode vanishes on the nodes
    return k


def spectral_derivative(values, axis):
    """d/du along ``axis`` of periodic nodal values on the unit period."""
    m = values.shape[axis]
    k = _spectral_axes(m)
    shape = [1] * values.ndim
    shape[axis] = m
    vh = np.fft.fft(values, axis=axis)
    return np.real(np.fft.ifft(vh * (2j * np.pi * k).reshape(shape), axis=axis))


def _trig_basis(t, m):
    """Values and derivatives of the 1-D interpolation basis, shape ``(..., m)``."""
    k = np.fft.fftfreq(m, d=1.0 / m)
    s = t - grid_nodes(m)[0]
    arg = 2 * np.pi * s[..., None] * k
    val = np.exp(1j * arg)
    der = 2j * np.pi * k * val
    if m % 2 == 0:
        ny = m // 2
        val[..., ny] = np.cos(np.pi * m * s)
        der[..., ny] = -np.pi * m * np.sin(np.pi * m * s)
    return val, der


def _bspline_weights(t, m):
    """Indices and cubic B-spline weights (and t-derivatives) around ``t``."""
    x = (t - grid_nodes(m)[0]) * m
    i = np.floor(x).astype(int)
    f = x - i
    w = np.stack([(1 - f) ** 3, 3 * f**3 - 6 * f**2 + 4, -3 * f**3 + 3 * f**2 + 3 * f + 1, f**3], axis=-1) / 6
    dw = np.stack([-3 * (1 - f) ** 2, 9 * f**2 - 12 * f, -9 * f**2 + 6 * f + 3, 3 * f**2], axis=-1) / 6 * m
    idx = (i[..., None] + np.arange(-1, 3)) % m
    return idx, w, dw


@dataclass(frozen=True, eq=False)
class GridField(DeformationField):
    """Displacement sampled on the ``m x m`` trapezoid grid, shape ``(m, m, 2)``.

    Off-grid values come from trigonometric interpolation for
    ``m <= TRIG_MAX_M`` and periodic cubic B-splines above; derivatives are
    those of the interpolant.
    """

    values: np.ndarray

    kind = "grid"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[0] != v.shape[1] or v.shape[2] != 2:
            raise DomainError(f"grid values must have shape (m, m, 2), got {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def interpolation(self) -> str:
        return "trig" if self.m <= TRIG_MAX_M else "spline"

    def _eval_u(self, u):
        u = wrap_lattice(u)
        if self.interpolation == "trig":
            return self._eval_trig(u)
        return self._eval_spline(u)

    def _eval_trig(self, u):
        m = self.m
        coef = np.fft.fft2(self.values, axes=(0, 1)) / (m * m)
        v1, d1 = _trig_basis(u[..., 0], m)
        v2, d2 = _trig_basis(u[..., 1], m)
        y = np.real(np.einsum("...a,abc,...b->...c", v1, coef, v2))
        g1 = np.real(np.einsum("...a,abc,...b->...c", d1, coef, v2))
        g2 = np.real(np.einsum("...a,abc,...b->...c", v1, coef, d2))
        return y, np.stack([g1, g2], axis=-1)

    def _spline_coefficients(self):
        m = self.m
        k = np.arange(m)
        sym = (4 + 2 * np.cos(2 * np.pi * k / m)) / 6
        vh = np.fft.fft2(self.values, axes=(0, 1))
        return np.real(np.fft.ifft2(vh / (sym[:, None, None] * sym[None, :, None]), axes=(0, 1)))

    def _eval_spline(self, u):
        c = self._spline_coefficients()
        i1, w1, dw1 = _bspline_weights(u[..., 0], self.m)
        i2, w2, dw2 = _bspline_weights(u[..., 1], self.m)
        block = c[i1[..., :, None], i2[..., None, :]]  # (..., 4, 4, 2)
        y = np.einsum("...a,...b,...abc->...c", w1, w2, block)
        g1 = np.einsum("...a,...b,...abc->...c", dw1, w2, block)
        g2 = np.einsum("...a,...b,...abc->...c", w1, dw2, block)
        return y, np.stack([g1, g2], axis=-1)

    def on_grid(self, m: int | None = None):
        if m is None or m == self.m:
            du = np.stack([spectral_derivative(self.values, 0), spectral_derivative(self.values, 1)], axis=-1)
            return self.values.copy(), du @ BASIS_INV
        return super().on_grid(m)

    def shifted(self, c):
        return GridField(self.values + np.asarray(c, dtype=float))

    def scaled(self, s):
        return GridField(s * self.values)

    def to_dict(self) -> dict:
        return {"kind": "grid", "values": self.values.tolist()}


class CallableField(DeformationField):
    """Displacement given by user functions of the Cartesian point.

    ``func(x) -> Y`` and ``jac(x) -> dY/dx`` must broadcast over leading
    axes.  Periodicity is not assumed; :func:`validate_properties` checks it.
    """

    kind = "callable"

    def __init__(self, func, jac, shift=(0.0, 0.0)):
        self._func = func
        self._jac = jac
        self._shift = np.asarray(shift, dtype=float)

    @property
    def periodic(self):
        return None

    def _at(self, x):
        x = np.asarray(x, dtype=float)
        return np.asarray(self._func(x), dtype=float) + self._shift, np.asarray(self._jac(x), dtype=float)

    def shifted(self, c):
        return CallableField(self._func, self._jac, self._shift + np.asarray(c, dtype=float))

    def scaled(self, s):
        return CallableField(lambda x: s * self._func(x), lambda x: s * self._jac(x), s * self._shift)


def identity_field() -> FourierField:
    return FourierField(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, 2)))


def field_from_dict(d: dict) -> DeformationField:
    """Build a field from its JSON descriptor (see README for the schema)."""
    kind = d.get("kind")
    if kind == "fourier":
        f = FourierField(d.get("modes", []), d.get("cos", []), d.get("sin", []), d.get("shift", [0.0, 0.0]))
    elif kind == "grid":
        f = GridField(d["values"])
    elif kind == "identity":
        f = identity_field()
    else:
        raise DomainError(f"unknown field kind {kind!r}")
    if d.get("eta") is not None and d.get("normalize", False):
        f = f.scaled(d["eta"] / w1inf_norm(f))
    return f


def field_to_json(f, **extra) -> str:
    d = f.to_dict()
    d.update(extra)
    return json.dumps(d, sort_keys=True)


def trig_field(delta: float) -> FourierField:
    """``Y(u) = delta * (sin 2 pi u1, sin 2 pi u2)`` in lattice coordinates."""
    return FourierField([[1, 0], [0, 1]], [[0, 0], [0, 0]], [[delta, 0.0], [0.0, delta]])


def random_fourier_field(seed: int, eta: float, max_mode: int = 3, m_check: int = 64) -> FourierField:
    """Seeded band-limited field with ``||Y||_{W^{1,inf}} = eta`` and zero mean.

    Coefficients are Gaussian with a ``1/(1+|k|^2)`` envelope over the modes
    ``0 < max(|k1|,|k2|) <= max_mode`` (one representative of each +-k pair).
    """
    rng = np.random.default_rng(seed)
    modes = [(a, b) for a in range(0, max_mode + 1) for b in range(-max_mode, max_mode + 1)
             if (a > 0 or b > 0)]
    modes = np.array(modes, dtype=float)
    env = 1.0 / (1.0 + np.sum(modes**2, axis=1))
    cos = rng.standard_normal((len(modes), 2)) * env[:, None]
    sin = rng.standard_normal((len(modes), 2)) * env[:, None]
    f = FourierField(modes, cos, sin)
    if eta == 0:
        return f.scaled(0.0)
    return f.scaled(eta / w1inf_norm(f, m_check))


# --------------------------------------------------------------------------
# operations


def mean_displacement(Y: DeformationField, m: int = 64) -> np.ndarray:
    """``int_Pi Y dx`` by the periodic trapezoid rule."""
    y, _ = Y.on_grid(m)
    return quadrature_weight(m) * y.reshape(-1, 2).sum(axis=0)


def recenter(Y: DeformationField, m: int = 64) -> DeformationField:
    """Subtract the mean so that ``int_Pi Y = 0``."""
    return Y.shifted(-mean_displacement(Y, m) / AREA_PI)


def w1inf_norm(Y: DeformationField, m: int = 64) -> float:
    """``max(sup |Y|, sup ||grad Y||_2)`` over the quadrature nodes."""
    y, g = Y.on_grid(m)
    return float(max(np.max(np.hypot(y[..., 0], y[..., 1])), np.max(frobenius_norm(g))))


def sample_points(X: DeformationField, lattice: HexLattice, reduce: bool = True) -> np.ndarray:
    """The deformed sites ``X(eps k)``, shape ``(n*n, 2)``, ordered by ``(k1, k2)``.

    With ``reduce`` the points are wrapped to the fundamental domain.
    """
    ref = lattice.reference_points().reshape(-1, 2)
    pts = X(ref)
    return wrap(pts) if reduce else pts


def gradient(X: DeformationField, x) -> np.ndarray:
    """``grad X(x) = I + grad Y(x)``."""
    return IDENTITY + X.jacobian(x)


def det_jacobian_integral(Y: DeformationField, m: int = 64) -> float:
    """``int_Pi det(grad Y) dx``; zero for periodic fields."""
    _, g = Y.on_grid(m)
    return float(quadrature_weight(m) * np.sum(det2(g)))


def deformed_area(X: DeformationField, m: int = 64) -> float:
    """``|X(Pi)| = int_Pi det(grad X) dx``."""
    _, g = X.on_grid(m)
    return float(quadrature_weight(m) * np.sum(det2(IDENTITY + g)))


@dataclass
class PropertyReport:
    periodic: bool
    w1inf: float
    eta_max: float
    mean: np.ndarray
    min_det: float
    deformed_area: float
    mean_tol: float = 1e-10

    @property
    def small(self) -> bool:
        return self.w1inf < self.eta_max

    @property
    def centered(self) -> bool:
        return float(np.hypot(*self.mean)) <= self.mean_tol

    @property
    def orientation_preserving(self) -> bool:
        return self.min_det > 0

    @property
    def ok(self) -> bool:
        return self.periodic and self.small and self.centered and self.orientation_preserving

    def as_dict(self) -> dict:
        return {
            "a_periodic": self.periodic,
            "b_small": self.small,
            "w1inf": self.w1inf,
            "eta_max": self.eta_max,
            "c_centered": self.centered,
            "mean": list(map(float, self.mean)),
            "det_positive": self.orientation_preserving,
            "min_det": self.min_det,
            "area_X_Pi": self.deformed_area,
            "area_Pi": AREA_PI,
            "ok": self.ok,
        }


def _check_periodic(Y, m, tol=1e-10):
    if Y.periodic is not None:
        return bool(Y.periodic)
    x = grid_points(m).reshape(-1, 2)
    y0 = Y.displacement(x)
    for shift in (BASIS[:, 0], BASIS[:, 1]):
        if np.max(np.abs(Y.displacement(x + shift) - y0)) > tol:
            return False
    return True


def validate_properties(X: DeformationField, eta_max: float = ETA_DEFAULT, m: int = 64) -> PropertyReport:
    """Check periodicity, smallness, centering and det grad X > 0 on the grid."""
    _, g = X.on_grid(m)
    return PropertyReport(
        periodic=_check_periodic(X, m),
        w1inf=w1inf_norm(X, m),
        eta_max=eta_max,
        mean=mean_displacement(X, m),
        min_det=float(np.min(det2(IDENTITY + g))),
        deformed_area=float(quadrature_weight(m) * np.sum(det2(IDENTITY + g))),
    )
