"""Limit energy density F(M), its gradient and the functional int_Pi F(grad X).

All matrix functions broadcast over leading axes: ``M`` may be a single
``(2, 2)`` matrix or a stack ``(..., 2, 2)``.  The definitional path
(``phi`` and ``energy_density``) is the ground truth; the closed forms near
the identity (``phi_closed_form_e1``, ``polynomial_P``, ``q_plus_minus``,
``trace_form_P``, ``taylor_F``) are independent validators.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, RegimeError, SingularMatrixError
from .geometry import (BASIS_INV, E1, E2, E12, IDENTITY, R60, S_REFLECT, SQRT3,
                       det2, frobenius, frobenius_norm, inv2)
from .lattice import AREA_PI, DeformationField, GridField, quadrature_weight, spectral_derivative

DIRECTIONS = (E1, E2, E12)
DIRECTION_NAMES = ("e1", "e2", "e12")

#: F(I) = 5 / (24 sqrt 3), the per-cell energy of the regular lattice in units eps^4
F_IDENTITY = 5.0 / (24.0 * SQRT3)
PHI_IDENTITY = 1.0 / SQRT3

#: Phi must stay above this for dPhi and grad F (both divide by Phi)
PHI_MIN = 0.25

#: coefficients of the null Lagrangian removed in F0
TRACE_COEF = 5.0 / (12.0 * SQRT3)
DET_COEF = 7.0 / (24.0 * SQRT3)

#: quadratic part of F0 at I: F0(I+N) ~ F(I) + QUAD_TR tr(N)^2 + QUAD_FRO tr(N^T N)
QUAD_TR = 5.0 / (24.0 * SQRT3)
QUAD_FRO = 1.0 / (16.0 * SQRT3)
#: smallest Hessian eigenvalue of F0 at I, 1/(8 sqrt 3)
LAMBDA_IDENTITY = 2 * QUAD_FRO


def _mv(M, v):
    return np.einsum("...ij,j->...i", M, v)


def _sq(v):
    return np.sum(v * v, axis=-1)


def _outer(u, v):
    """``u (x) v = u v^T``; ``u`` is a fixed vector, ``v`` a stack."""
    return u[:, None] * v[..., None, :]


def _shape_ratio(e, M):
    """``|MRe|^2 |MR^T e|^2 / (3/4 det(M)^2)``, i.e. ``Phi^2 + 1``."""
    M = np.asarray(M, dtype=float)
    d = det2(M)
    if np.any(d == 0):
        raise SingularMatrixError("det(M) = 0")
    a = _mv(M, R60 @ e)
    b = _mv(M, R60.T @ e)
    return _sq(a) * _sq(b) / (0.75 * d * d)


def phi(e, M):
    """Shape factor ``sqrt(|MRe|^2 |MR^T e|^2 / (3/4 det M^2) - 1)``."""
    q = _shape_ratio(np.asarray(e, dtype=float), M)
    if np.any(q < 1):
        raise GeometryError("negative radicand in Phi: configuration outside the regime")
    return np.sqrt(q - 1)


def phi_closed_form_e1(M):
    """``Phi(e1, M)`` as the rational function of the entries valid near I."""
    a, b, c, d = _entries(M)
    num = -a * a + 3 * b * b - c * c + 3 * d * d
    if np.any(num <= 0):
        raise RegimeError("sign condition alpha^2 - 3 beta^2 + gamma^2 - 3 delta^2 < 0 violated")
    return num / (2 * SQRT3 * (a * d - b * c))


def phi_closed_form(name: str, M):
    """Closed forms of ``Phi`` for the three lattice directions near I."""
    if name == "e1":
        return phi_closed_form_e1(M)
    a, b, c, d = _entries(M)
    det = a * d - b * c
    if name == "e2":
        return (SQRT3 * a * a - 3 * a * b + SQRT3 * c * c - 3 * c * d) / (3 * det)
    if name == "e12":
        return (SQRT3 * a * a + 3 * a * b + SQRT3 * c * c + 3 * c * d) / (3 * det)
    raise ValueError(f"unknown direction {name!r}")


def rotated_for(name: str, M):
    """``M2 = R^T M R`` for e2 and ``M12 = R M R^T`` for e12, so Phi(e, M) = Phi(e1, M_e)."""
    M = np.asarray(M, dtype=float)
    if name == "e1":
        return M
    if name == "e2":
        return R60.T @ M @ R60
    if name == "e12":
        return R60 @ M @ R60.T
    raise ValueError(f"unknown direction {name!r}")


def _entries(M):
    M = np.asarray(M, dtype=float)
    return M[..., 0, 0], M[..., 0, 1], M[..., 1, 0], M[..., 1, 1]


def energy_density(M):
    """``F(M) = 1/48 sum_w |Mw|^4 Phi(w, M) (3 + Phi(w, M)^2)`` over w in {e1, e2, e1-e2}."""
    M = np.asarray(M, dtype=float)
    total = 0.0
    for w in DIRECTIONS:
        p = phi(w, M)
        total = total + _sq(_mv(M, w)) ** 2 * p * (3 + p * p)
    return total / 48.0


def A_tensor(e, M):
    """``(Re (x) MRe)/|MRe|^2 + (R^T e (x) MR^T e)/|MR^T e|^2 - M^{-1}``."""
    e = np.asarray(e, dtype=float)
    M = np.asarray(M, dtype=float)
    if np.any(det2(M) == 0):
        raise SingularMatrixError("det(M) = 0")
    re, rte = R60 @ e, R60.T @ e
    a, b = _mv(M, re), _mv(M, rte)
    na, nb = _sq(a), _sq(b)
    if np.any(na == 0) or np.any(nb == 0):
        raise SingularMatrixError("M R e or M R^T e vanishes")
    return _outer(re, a) / na[..., None, None] + _outer(rte, b) / nb[..., None, None] - inv2(M)


def _guarded_phi(e, M):
    p = phi(e, M)
    if np.any(p <= PHI_MIN):
        raise RegimeError(f"Phi below the singularity guard {PHI_MIN}",
                          nodes=np.argwhere(np.atleast_1d(p) <= PHI_MIN))
    return p


def dphi(e, M, N):
    """Directional derivative ``(Phi^2 + 1)/Phi * trace(A(e, M) N)``."""
    p = _guarded_phi(e, M)
    return (p * p + 1) / p * np.trace(A_tensor(e, M) @ np.asarray(N, dtype=float), axis1=-2, axis2=-1)


def grad_phi(e, M):
    """Frobenius gradient of ``M -> Phi(e, M)``."""
    p = _guarded_phi(e, M)
    return ((p * p + 1) / p)[..., None, None] * np.swapaxes(A_tensor(e, M), -1, -2)


def grad_F(M):
    """Frobenius gradient of :func:`energy_density`, so that ``<grad F(M), N> = dF(M)[N]``."""
    M = np.asarray(M, dtype=float)
    g = np.zeros_like(M)
    for w in DIRECTIONS:
        p = _guarded_phi(w, M)
        mw = _mv(M, w)
        n2 = _sq(mw)
        g = g + (4 * n2 * p * (3 + p * p))[..., None, None] * _outer(w, mw).swapaxes(-1, -2)
        g = g + (3 * n2 * n2 * (1 + p * p) ** 2 / p)[..., None, None] * np.swapaxes(A_tensor(w, M), -1, -2)
    return g / 48.0


def cofactor(M):
    """Gradient of det: ``det(M) M^{-T}``."""
    M = np.asarray(M, dtype=float)
    c = np.empty_like(M)
    c[..., 0, 0] = M[..., 1, 1]
    c[..., 1, 1] = M[..., 0, 0]
    c[..., 0, 1] = -M[..., 1, 0]
    c[..., 1, 0] = -M[..., 0, 1]
    return c


def F0(M):
    """``F(M) - 5/(12 sqrt3) tr(M - I) - 7/(24 sqrt3) det(M - I)``."""
    M = np.asarray(M, dtype=float)
    N = M - IDENTITY
    return energy_density(M) - TRACE_COEF * np.trace(N, axis1=-2, axis2=-1) - DET_COEF * det2(N)


def grad_F0(M):
    M = np.asarray(M, dtype=float)
    return grad_F(M) - TRACE_COEF * IDENTITY - DET_COEF * cofactor(M - IDENTITY)


# --------------------------------------------------------------------------
# closed forms near the identity


def polynomial_P(alpha, beta, gamma, delta):
    """The sextic with ``F(M) = P / (96 sqrt3 det M)`` for ``M = [[alpha, beta], [gamma, delta]]``."""
    a, b, c, d = alpha, beta, gamma, delta
    return (-a**6 + 6 * a**4 * b**2 - 9 * a**2 * b**4 - 3 * a**4 * c**2
            + 18 * a**2 * b**2 * c**2 + 9 * b**4 * c**2 - 3 * a**2 * c**4 + 12 * b**2 * c**4 - c**6
            - 12 * a**3 * b * c * d - 36 * a * b**3 * c * d - 12 * a * b * c**3 * d + 12 * a**4 * d**2
            + 18 * a**2 * c**2 * d**2 + 6 * c**4 * d**2 - 36 * a * b * c * d**3 + 9 * a**2 * d**4
            - 9 * c**2 * d**4)


def q_plus_minus(alpha, beta, gamma, delta):
    """``(Q+, Q-)`` with ``P = (Q+ + Q-) / 2``."""
    a, b, c, d = alpha, beta, gamma, delta
    tr = a * a + b * b + c * c + d * d
    s = a * a - b * b + c * c - d * d
    det = a * d - b * c
    q_plus = tr * (24 * det * det - tr * tr)
    q_minus = s * (12 * (a * b + c * d) ** 2 - s * s)
    return q_plus, q_minus


def trace_form_P(M, corrected: bool = True):
    """P written with traces of ``M^T M``.

    ``corrected=False`` uses the weight ``2S - I`` on the determinant term as
    printed in the source; that version is off by ``36 (beta^2+delta^2) det^2``
    (it gives -16 instead of 20 at M = I).  ``corrected=True`` uses ``2I - S``,
    which reproduces P identically.
    """
    M = np.asarray(M, dtype=float)
    mtm = np.swapaxes(M, -1, -2) @ M
    weight = 2 * IDENTITY - S_REFLECT if corrected else 2 * S_REFLECT - IDENTITY
    tr = np.trace(mtm, axis1=-2, axis2=-1)
    trs = np.trace(mtm @ S_REFLECT, axis1=-2, axis2=-1)
    d = det2(M)
    return (6 * d * d * np.trace(mtm @ weight, axis1=-2, axis2=-1)
            + 1.5 * tr * tr * trs - 0.5 * tr**3 - 2 * trs**3)


def trace_form_F(M, corrected: bool = True):
    """F near I from :func:`trace_form_P`, ``P / (96 sqrt3 det M)``."""
    return trace_form_P(M, corrected) / (96 * SQRT3 * det2(np.asarray(M, dtype=float)))


def taylor_F(N, eps: float, order: int = 3):
    """Truncated expansion of ``F(I + eps N)`` through ``eps**order``."""
    if order not in (0, 1, 2, 3):
        raise ValueError("order must be 0, 1, 2 or 3")
    a, b, c, d = _entries(N)
    terms = [
        10.0 + 0 * a,
        20 * (a + d),
        13 * a**2 + 3 * b**2 - 14 * b * c + 3 * c**2 + 34 * a * d + 13 * d**2,
        (a**3 + 9 * a * b**2 - 2 * a * b * c + 9 * a * c**2 + 23 * a**2 * d - 3 * b**2 * d
         - 26 * b * c * d - 3 * c**2 * d + 11 * a * d**2 + 5 * d**3),
    ]
    series = sum(t * eps**k for k, t in enumerate(terms[: order + 1]))
    return series / (48 * SQRT3)


def taylor_F_intrinsic(N, eps: float):
    """Second-order expansion in invariants: 10 + 20 eps tr N + eps^2 (14 det N + 10 tr^2 N + 3 |N|^2), over 48 sqrt3."""
    N = np.asarray(N, dtype=float)
    tr = np.trace(N, axis1=-2, axis2=-1)
    return (10 + 20 * eps * tr + eps**2 * (14 * det2(N) + 10 * tr * tr + 3 * frobenius(N, N))) / (48 * SQRT3)


# --------------------------------------------------------------------------
# grid discretization


def grid_jacobian(Y, diff: str = "spectral"):
    """Cartesian ``grad Y`` of nodal values ``(m, m, 2)``, shape ``(m, m, 2, 2)``."""
    du = np.stack([_derivative(Y, 0, diff), _derivative(Y, 1, diff)], axis=-1)
    return du @ BASIS_INV


def grid_divergence_adjoint(P, diff: str = "spectral"):
    """Adjoint of :func:`grid_jacobian` under the nodal inner products.

    Returns ``g`` with ``sum g . dY = sum P : grid_jacobian(dY)``; for both
    difference schemes this is ``-div_x P`` discretized consistently.
    """
    q = P @ BASIS_INV.T
    return -(_derivative(q[..., 0], 0, diff) + _derivative(q[..., 1], 1, diff))


def _derivative(v, axis, diff):
    if diff == "spectral":
        return spectral_derivative(v, axis)
    if diff == "centered":
        m = v.shape[axis]
        return (np.roll(v, -1, axis=axis) - np.roll(v, 1, axis=axis)) * (m / 2.0)
    raise ValueError(f"unknown differentiation scheme {diff!r}")


DENSITIES = {
    "F": (energy_density, grad_F),
    "F0": (F0, grad_F0),
}


def _density(variant, convex=None):
    if variant == "G":
        g = convex or ConvexifiedEnergy.default()
        return g.G, g.grad_G
    try:
        return DENSITIES[variant]
    except KeyError:
        raise ValueError(f"unknown density variant {variant!r}") from None


def regime_violations(M):
    """Indices of matrices where F or its gradient is not safely defined."""
    M = np.asarray(M, dtype=float)
    bad = det2(M) <= 0
    good = ~bad
    for w in DIRECTIONS:
        q = np.where(good, _shape_ratio_safe(w, M), 2.0)
        bad |= (q - 1) <= PHI_MIN**2
    return np.argwhere(bad)


def _shape_ratio_safe(e, M):
    d = det2(M)
    d = np.where(d == 0, np.nan, d)
    a = _mv(M, R60 @ e)
    b = _mv(M, R60.T @ e)
    return np.nan_to_num(_sq(a) * _sq(b) / (0.75 * d * d), nan=0.0)


def check_regime(M):
    bad = regime_violations(M)
    if len(bad):
        raise RegimeError(f"{len(bad)} node(s) outside the near-identity regime, first {bad[0].tolist()}",
                          nodes=bad)


def discrete_energy(Y, variant: str = "F", diff: str = "spectral", convex=None, excess: bool = False):
    """Trapezoid value of ``int_Pi density(I + grad Y)`` for nodal values ``Y``.

    With ``excess`` the constant ``density(I) |Pi|`` is subtracted node by
    node, which keeps the result accurate when Y is tiny.
    """
    dens, _ = _density(variant, convex)
    M = IDENTITY + grid_jacobian(Y, diff)
    if variant != "G":
        check_regime(M)
    vals = dens(M)
    if excess:
        vals = vals - dens(IDENTITY)
    return float(quadrature_weight(Y.shape[0]) * np.sum(vals))


def discrete_gradient(Y, variant: str = "F", diff: str = "spectral", convex=None):
    """L2 gradient of :func:`discrete_energy`: its exact derivative divided by the node weight."""
    _, grad = _density(variant, convex)
    M = IDENTITY + grid_jacobian(Y, diff)
    if variant != "G":
        check_regime(M)
    return grid_divergence_adjoint(grad(M), diff)


def _grid_values(X, m):
    if isinstance(X, GridField) and (m is None or m == X.m):
        return X.values
    y, _ = X.on_grid(m or 64)
    return y


def energy_functional(X: DeformationField, m: int | None = None, variant: str = "F") -> float:
    """``int_Pi F(grad X(x)) dx`` by the periodic trapezoid rule on ``m x m`` nodes.

    Uses the field's own derivative: analytic for Fourier fields, that of the
    trigonometric interpolant for grid fields.
    """
    if isinstance(X, GridField) and m is None:
        m = X.m
    m = m or 64
    _, g = X.on_grid(m)
    M = IDENTITY + g
    dens, _ = _density(variant)
    if variant != "G":
        check_regime(M)
    return float(quadrature_weight(m) * np.sum(dens(M)))


def variational_gradient(X: DeformationField, m: int | None = None, diff: str = "spectral",
                         variant: str = "F") -> np.ndarray:
    """``delta F / delta X`` on the ``m x m`` grid, shape ``(m, m, 2)``.

    Computed as the exact gradient of the discretized functional, which for
    the spectral scheme equals the spectral ``-div_x grad F(grad X)``.
    """
    return discrete_gradient(_grid_values(X, m), variant, diff)


def flux_divergence(X: DeformationField, m: int = 64) -> np.ndarray:
    """``-div_x grad F(grad X)`` from the field's own derivatives then spectral divergence.

    Differs from :func:`variational_gradient` only by discretization error.
    """
    _, g = X.on_grid(m)
    return grid_divergence_adjoint(grad_F(IDENTITY + g), "spectral")


# --------------------------------------------------------------------------
# convexification


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return 10 * s**3 - 15 * s**4 + 6 * s**5, 30 * s**2 * (1 - s) ** 2


def quadratic_F0(M):
    """Second-order model of F0 at I."""
    N = np.asarray(M, dtype=float) - IDENTITY
    tr = np.trace(N, axis1=-2, axis2=-1)
    return F_IDENTITY + QUAD_TR * tr * tr + QUAD_FRO * frobenius(N, N)


def grad_quadratic_F0(M):
    N = np.asarray(M, dtype=float) - IDENTITY
    tr = np.trace(N, axis1=-2, axis2=-1)
    return 2 * QUAD_TR * tr[..., None, None] * IDENTITY + 2 * QUAD_FRO * N


def numeric_hessian(grad, M, h: float = 1e-5):
    """Symmetrized 4x4 Hessian of a matrix function from central differences of its gradient."""
    M = np.asarray(M, dtype=float)
    H = np.empty(M.shape[:-2] + (4, 4))
    for k in range(4):
        E = np.zeros((2, 2))
        E.flat[k] = h
        H[..., k, :] = ((grad(M + E) - grad(M - E)) / (2 * h)).reshape(M.shape[:-2] + (4,))
    return 0.5 * (H + np.swapaxes(H, -1, -2))


@dataclass(frozen=True)
class ConvexifiedEnergy:
    """Globally convex density G equal to F0 on ``||M - I||_2 < rho0 / 2``.

    Between ``rho0/2`` and ``rho0`` a quintic smoothstep blends F0 into its
    quadratic model at I; outside ``rho0`` G is that quadratic.
    """

    rho0: float
    lam: float
    Lam: float

    _cache = {}

    @classmethod
    def default(cls) -> "ConvexifiedEnergy":
        if "default" not in cls._cache:
            cls._cache["default"] = cls.estimate()
        return cls._cache["default"]

    @classmethod
    def estimate(cls, lam: float | None = None, radii=None, directions: int = 64, seed: int = 0,
                 fallback: float = 0.2) -> "ConvexifiedEnergy":
        """Pick ``rho0`` as the largest sampled radius keeping ``min eig hess F0 >= lam``.

        The radius is then halved until the blended G meets its global
        Hessian bounds on the same sample.  ``Lam`` is the largest Hessian
        eigenvalue of F0 seen on the accepted ball.
        """
        lam = 0.5 * LAMBDA_IDENTITY if lam is None else lam
        radii = np.linspace(0.01, 0.4, 40) if radii is None else np.asarray(radii)
        rng = np.random.default_rng(seed)
        dirs = rng.standard_normal((directions, 2, 2))
        dirs /= frobenius_norm(dirs)[:, None, None]
        rho0 = None
        Lam = np.max(np.linalg.eigvalsh(numeric_hessian(grad_F0, IDENTITY)))
        for r in radii:
            try:
                ev = np.linalg.eigvalsh(numeric_hessian(grad_F0, IDENTITY + r * dirs))
            except (RegimeError, GeometryError, SingularMatrixError):
                break
            if ev.min() < lam:
                break
            rho0 = r
            Lam = max(Lam, ev.max())
        if rho0 is None:
            rho0 = fallback
        g = cls(float(rho0), float(lam), float(Lam))
        for _ in range(20):
            rep = g.hessian_bounds(samples=200, seed=seed)
            if rep["ok"]:
                break
            g = cls(g.rho0 / 2, g.lam, g.Lam)
        return g

    def _blend(self, M):
        N = np.asarray(M, dtype=float) - IDENTITY
        r = frobenius_norm(N)
        lo = 0.5 * self.rho0
        chi_s, dchi_s = _smoothstep((r - lo) / (self.rho0 - lo))
        return N, r, 1.0 - chi_s, -dchi_s / (self.rho0 - lo)

    def G(self, M):
        M = np.asarray(M, dtype=float)
        N, r, chi, _ = self._blend(M)
        q = quadratic_F0(M)
        inside = r < self.rho0
        if not np.any(inside):
            return q
        f0 = np.where(inside, F0(np.where(inside[..., None, None], M, IDENTITY)), q)
        return chi * f0 + (1 - chi) * q

    def grad_G(self, M):
        M = np.asarray(M, dtype=float)
        N, r, chi, dchi = self._blend(M)
        gq = grad_quadratic_F0(M)
        inside = r < self.rho0
        if not np.any(inside):
            return gq
        Ms = np.where(inside[..., None, None], M, IDENTITY)
        f0 = F0(Ms)
        g0 = grad_F0(Ms)
        q = quadratic_F0(Ms)
        rs = np.where(r > 0, r, 1.0)
        g = (chi[..., None, None] * g0 + (1 - chi)[..., None, None] * gq
             + ((f0 - q) * dchi / rs)[..., None, None] * N)
        return np.where(inside[..., None, None], g, gq)

    def hessian_bounds(self, samples: int = 200, seed: int = 0, far: float = 10.0) -> dict:
        """Sampled extreme Hessian eigenvalues of G against ``[lam/2, 2 Lam]``."""
        rng = np.random.default_rng(seed)
        dirs = rng.standard_normal((samples, 2, 2))
        dirs /= frobenius_norm(dirs)[:, None, None]
        radii = np.concatenate([np.linspace(0, 1.2 * self.rho0, samples // 2),
                                rng.uniform(self.rho0, far, samples - samples // 2)])
        ev = np.linalg.eigvalsh(numeric_hessian(self.grad_G, IDENTITY + radii[:, None, None] * dirs))
        lo, hi = float(ev.min()), float(ev.max())
        return {"min_eig": lo, "max_eig": hi, "lower": 0.5 * self.lam, "upper": 2 * self.Lam,
                "ok": lo >= 0.5 * self.lam and hi <= 2 * self.Lam}


def poincare_constant() -> float:
    """Best C with ``int_Pi |Y|^2 <= C int_Pi |grad Y|^2`` for mean-zero periodic Y.

    The shortest nonzero dual-lattice wave vector has length ``4 pi / sqrt3``.
    """
    return 3.0 / (16.0 * np.pi**2)


def linearized_symbol(m: int, diff: str = "centered", quad_tr: float = QUAD_TR, quad_fro: float = QUAD_FRO):
    """Eigenvalues of the discrete linearized gradient-flow operator on an ``m x m`` grid.

    The operator is the L2 gradient of ``int_Pi quad_tr tr(grad Y)^2 +
    quad_fro |grad Y|^2`` discretized with the same scheme as the flow; it is
    diagonal in Fourier space with 2x2 blocks.  Returns ``(m, m, 2)``
    eigenvalues indexed by grid wave numbers.
    """
    k = np.fft.fftfreq(m, d=1.0 / m)
    if diff == "centered":
        sym = np.sin(2 * np.pi * k / m) * m
    elif diff == "spectral":
        sym = 2 * np.pi * k.copy()
        if m % 2 == 0:
            sym[m // 2] = 0.0
    else:
        raise ValueError(diff)
    s = np.stack(np.meshgrid(sym, sym, indexing="ij"), axis=-1)  # u-derivative symbols
    xi = s @ BASIS_INV  # Cartesian wave vector (gradient acts as i xi)
    n2 = np.sum(xi * xi, axis=-1)
    # 2 quad_fro |xi|^2 I + 2 quad_tr xi xi^T
    blocks = 2 * quad_fro * n2[..., None, None] * IDENTITY + 2 * quad_tr * xi[..., :, None] * xi[..., None, :]
    return np.linalg.eigvalsh(blocks)


def continuum_slowest_rate() -> float:
    """``2 * QUAD_FRO * (4 pi / sqrt3)^2``: decay rate of the slowest shear mode."""
    return 2 * QUAD_FRO * (4 * np.pi / SQRT3) ** 2
