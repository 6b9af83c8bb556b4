"""Property battery behind ``hexquant validate``.

Each check compares a closed form against an independent oracle and
reports ``(name, passed, value, tolerance)``.  Tolerances can be overridden
by name and mutations can be injected to prove that a check bites.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import continuum as C
from . import discrete as D
from . import geometry as G
from . import lattice as Lt
from .errors import HexQuantError, ModeViolationError, RegimeError


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tol: float
    detail: str = ""
    seconds: float = 0.0

    def as_dict(self):
        return {"name": self.name, "passed": self.passed, "value": self.value, "tol": self.tol,
                "detail": self.detail, "seconds": round(self.seconds, 4)}


DEFAULT_TOLS = {
    "rotation": 1e-15,
    "right-triangle-quadrature": 1e-10,
    "hexagon-moment": 1e-12,
    "twelve-triangles": 1e-14,
    "shoelace-vs-triangles": 1e-13,
    "clip-own-edge": 1e-12,
    "bisector-hexagon": 1e-12,
    "polygon-montecarlo": 3.0,
    "lemma-det-integral": 1e-10,
    "recenter-mean": 1e-12,
    "deformed-area": 1e-10,
    "identity-chain": 1e-12,
    "mode-equivalence": 1e-10,
    "kite-oracle": 1e-10,
    "partition": 1e-10,
    "masses": 1e-12,
    "two-point-torus": 1e-12,
    "minimality": 0.0,
    "phi-identity": 1e-15,
    "phi-closed-forms": 1e-12,
    "homogeneity": 1e-12,
    "rotation-covariance": 1e-12,
    "P-values": 1e-12,
    "P-vs-F identity": 1e-10,
    "P-vs-Q split": 1e-10,
    "trace-form-discrepancy": 1e-12,
    "taylor-slope": 3.8,
    "grad-F-finite-difference": 1e-6,
    "euler-relation": 1e-10,
    "dphi-finite-difference": 1e-8,
    "A-tensor": 1e-12,
    "variational-gateaux": 1e-6,
    "F0-equals-F": 1e-9,
    "D2F0-rayleigh": 1e-6,
    "G-hessian-bounds": 0.0,
    "regime-flag": 0.0,
    "hexagon-guard": 1e-10,
}

MUTATIONS = {
    # one sign flipped in the sextic P
    "flip-P": lambda a, b, c, d: C.polynomial_P(a, b, c, d) - 2 * 12 * a**4 * d**2,
}

_CHECKS = []


def check(name):
    def deco(fn):
        _CHECKS.append((name, fn))
        return fn
    return deco


def _rel(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


def _near_identity(rng, k, r=0.1):
    N = rng.standard_normal((k, 2, 2))
    N *= (r * rng.random(k) / G.frobenius_norm(N))[:, None, None]
    return G.IDENTITY + N


# ---------------------------------------------------------------- geometry


@check("rotation")
def _rotation(ctx):
    R = G.rotation_pi_3()
    return max(np.max(np.abs(R @ G.E1 - G.E2)), np.max(np.abs(R.T @ G.E1 - G.E12)),
               np.max(np.abs(R.T @ R - G.IDENTITY)))


def triangle_quadrature(h, l, order=20):
    """Gauss-Legendre (Duffy-collapsed) value of int |x|^2 over the right triangle (0,0),(h,0),(h,l)."""
    x, w = np.polynomial.legendre.leggauss(order)
    s = 0.5 * (x + 1)
    ws = 0.5 * w
    S, T = np.meshgrid(s, s, indexing="ij")
    W = np.outer(ws, ws)
    X = h * S
    Yc = l * S * T
    jac = h * l * S
    return float(np.sum(W * jac * (X**2 + Yc**2)))


@check("right-triangle-quadrature")
def _rt(ctx):
    vals = [(1, 1), (2, 1), (0.3, 1.7)]
    return max(abs(G.right_triangle_moment(h, l) - triangle_quadrature(h, l)) for h, l in vals)


@check("hexagon-moment")
def _hexmom(ctx):
    a = 0.7
    hexa = G.ConvexPolygon.regular(6, a)
    # oracle: six equilateral fan triangles integrated by quadrature of the two right halves
    h = a * np.sqrt(3) / 2
    oracle = 12 * triangle_quadrature(h, a / 2)
    return _rel(G.polygon_second_moment(hexa, (0, 0)), 5 * np.sqrt(3) / 8 * a**4) + \
        _rel(oracle, 5 * np.sqrt(3) / 8 * a**4)


@check("twelve-triangles")
def _twelve(ctx):
    hexa = G.ConvexPolygon.regular(6, 1.0, phase=0.3)
    pieces = G.right_triangle_decomposition(hexa, (0, 0))
    total = sum(s * G.right_triangle_moment(h, l) for h, l, s in pieces)
    return _rel(total, hexa.second_moment((0, 0), method="shoelace")) + (0.0 if len(pieces) == 12 else 1.0)


@check("shoelace-vs-triangles")
def _shoelace(ctx):
    rng = np.random.default_rng(ctx["seed"])
    worst = 0.0
    for _ in range(20):
        poly = random_convex_polygon(rng)
        c = poly.centroid()
        worst = max(worst, _rel(poly.second_moment(c, "triangles"), poly.second_moment(c, "shoelace")))
    return worst


def random_convex_polygon(rng, k=None):
    k = k or int(rng.integers(3, 9))
    t = np.sort(rng.uniform(0, 2 * np.pi, k))
    r = rng.uniform(0.5, 1.5)
    pts = np.column_stack([r * np.cos(t), r * np.sin(t)]) * rng.uniform(0.5, 1.5, 2) + rng.normal(size=2)
    return G.ConvexPolygon(pts)


@check("clip-own-edge")
def _clip_own(ctx):
    hexa = G.ConvexPolygon.regular(6, 1.0)
    a, b = hexa.vertices[0], hexa.vertices[1]
    normal = np.array([b[1] - a[1], a[0] - b[0]])
    out = G.clip_halfplane(hexa, a, normal)
    return float(np.max(np.abs(out.vertices - hexa.vertices))) if len(out) == 6 else np.inf


@check("bisector-hexagon")
def _bisector(ctx):
    poly = G.ConvexPolygon(3 * np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float))
    for o in D.NEIGHBOR_OFFSETS:
        poly = G.bisector_clip(poly, np.zeros(2), G.BASIS @ o)
    ref = G.ConvexPolygon.regular(6, 1 / np.sqrt(3), phase=np.pi / 6)
    if len(poly) != 6:
        return np.inf
    return max(float(np.min(np.hypot(*(ref.vertices - v).T))) for v in poly.vertices)


@check("polygon-montecarlo")
def _mc(ctx):
    """Largest |moment - MC| in standard errors over random polygons (tolerance is in SE)."""
    rng = np.random.default_rng(ctx["seed"])
    worst = 0.0
    for _ in range(ctx.get("mc_polygons", 20)):
        poly = random_convex_polygon(rng)
        c = poly.centroid()
        p = D._sample_polygon(rng, poly.vertices, 20000)
        f = np.sum((p - c) ** 2, axis=1) * poly.area()
        se = f.std(ddof=1) / np.sqrt(len(f))
        worst = max(worst, abs(f.mean() - poly.second_moment(c)) / se)
    return worst


# ---------------------------------------------------------------- lattice


def random_fields(k, seed, eta=0.02):
    return [Lt.random_fourier_field(seed + i, eta) for i in range(k)]


@check("lemma-det-integral")
def _lemma(ctx):
    return max(abs(Lt.det_jacobian_integral(Y)) for Y in random_fields(20, ctx["seed"], 0.3))


@check("recenter-mean")
def _recenter(ctx):
    Y = Lt.random_fourier_field(ctx["seed"], 0.02).shifted([0.01, -0.02])
    return float(np.max(np.abs(Lt.mean_displacement(Lt.recenter(Y)))))


@check("deformed-area")
def _area(ctx):
    return max(abs(Lt.deformed_area(Y) - Lt.AREA_PI) for Y in random_fields(5, ctx["seed"]))


# ---------------------------------------------------------------- discrete


@check("identity-chain")
def _chain(ctx):
    lat = Lt.HexLattice(8)
    eps4 = lat.epsilon**4
    diag = D.voronoi_periodic(Lt.sample_points(Lt.identity_field(), lat), lat)
    ref = 10 / (48 * np.sqrt(3))
    vals = [C.energy_density(G.IDENTITY), C.taylor_F(np.zeros((2, 2)), 0.1, 0),
            ctx["P"](1, 0, 0, 1) / (96 * np.sqrt(3)), D.cell_energy(diag, 0) / eps4,
            D.cell_energy(diag, 0, "polygon") / eps4,
            G.polygon_second_moment(G.ConvexPolygon.regular(6, lat.epsilon / np.sqrt(3)), (0, 0)) / eps4]
    return max(_rel(v, ref) for v in vals)


@check("mode-equivalence")
def _modes(ctx):
    lat = Lt.HexLattice(8)
    worst = 0.0
    for Y in random_fields(3, ctx["seed"], 0.05):
        p = Lt.sample_points(Y, lat)
        a = D.voronoi_periodic(p, lat, "hexagon")
        b = D.voronoi_periodic(p, lat, "general")
        worst = max(worst, _rel(a.energies(), b.energies("polygon")),
                    max(_vertex_set_distance(ca, cb) for ca, cb in zip(a.cells, b.cells)))
    return worst


def _vertex_set_distance(a, b):
    if len(a) != len(b):
        return np.inf
    return float(max(np.min(np.hypot(*(b.vertices - v).T)) for v in a.vertices))


@check("kite-oracle")
def _kite(ctx):
    """Triangle pair of an acute triangle against the polygon moment of its kite."""
    worst = 0.0
    for tri in ([(0, 0), (1, 0), (0.5, np.sqrt(3) / 2)], [(0, 0), (1, 0), (0.4, 0.8)],
                [(0, 0), (1.0, 0.1), (0.2, 0.9)]):
        A, B, Cc = (np.array(v, dtype=float) for v in tri)
        O = G.circumcenter(A, B, Cc)
        kite = G.ConvexPolygon(np.array([A, (A + B) / 2, O, (A + Cc) / 2]))
        centre = A + 0.01 * (O - A)  # moment about A itself, A is a vertex
        m = kite.second_moment(centre, "shoelace")
        # shift back: int |y-A|^2 = int |y-c|^2 + 2 (c-A).int(y-c) + |c-A|^2 area
        cm = kite.centroid()
        m_a = m + 2 * (centre - A) @ ((cm - centre) * kite.area()) + (centre - A) @ (centre - A) * kite.area()
        worst = max(worst, _rel(D.cell_energy_triangles(A, B, Cc), m_a))
    return worst


@check("partition")
def _partition(ctx):
    lat = Lt.HexLattice(8)
    worst = 0.0
    for Y in random_fields(5, ctx["seed"], 0.05):
        for mode in ("hexagon", "general"):
            worst = max(worst, abs(D.voronoi_periodic(Lt.sample_points(Y, lat), lat, mode).areas().sum()
                                   - Lt.AREA_PI))
    return worst


@check("masses")
def _masses(ctx):
    lat = Lt.HexLattice(6)
    diag = D.voronoi_periodic(Lt.sample_points(Lt.random_fourier_field(ctx["seed"], 0.03), lat), lat)
    m = D.optimal_masses(diag)
    shoelace = np.array([c.area() for c in diag.cells]) / Lt.AREA_PI
    ident = D.optimal_masses(D.voronoi_periodic(Lt.sample_points(Lt.identity_field(), lat), lat))
    return max(abs(m.sum() - 1), float(np.max(np.abs(m - shoelace))), float(np.max(np.abs(ident - 1 / 36))))


@check("two-point-torus")
def _two_point(ctx):
    pts = np.array([[0.0, 0.0], 0.5 * G.E1])
    diag = D.voronoi_periodic(pts, None, "general")
    a = diag.areas()
    e = diag.energies("polygon")
    return max(abs(a.sum() - Lt.AREA_PI), abs(a[0] - a[1]), abs(e[0] - e[1]))


@check("minimality")
def _minimal(ctx):
    """Largest (identity - perturbed) energy gap; must not be positive."""
    lat = Lt.HexLattice(8)
    q_id = D.quantization_energy(Lt.identity_field(), lat)
    worst = -np.inf
    for Y in random_fields(ctx.get("minimality_fields", 40), ctx["seed"] + 1000, 0.02):
        worst = max(worst, q_id - D.quantization_energy(Y, lat))
    return worst


@check("hexagon-guard")
def _guard(ctx):
    """Above the threshold hexagon mode must refuse; general mode must still tile."""
    lat = Lt.HexLattice(8)
    from .flows import jittered_lattice
    p = jittered_lattice(lat, 0.45, seed=ctx["seed"])
    if D.discrete_eta(p, lat) <= D.HEXAGON_ETA_THRESHOLD:
        return np.inf
    try:
        D.voronoi_periodic(p, lat, "hexagon")
        return np.inf
    except ModeViolationError:
        pass
    return abs(D.voronoi_periodic(p, lat, "general").areas().sum() - Lt.AREA_PI)


# ---------------------------------------------------------------- continuum


@check("phi-identity")
def _phi_id(ctx):
    return max(abs(C.phi(e, G.IDENTITY) - 1 / np.sqrt(3)) for e in C.DIRECTIONS)


@check("phi-closed-forms")
def _phi_cf(ctx):
    rng = np.random.default_rng(ctx["seed"])
    M = _near_identity(rng, 100)
    worst = _rel(C.phi_closed_form_e1(np.diag([1, 1.1])), C.phi(G.E1, np.diag([1, 1.1])))
    for name, e in zip(C.DIRECTION_NAMES, C.DIRECTIONS):
        worst = max(worst, _rel(C.phi_closed_form(name, M), C.phi(e, M)),
                    _rel(C.phi_closed_form_e1(C.rotated_for(name, M)), C.phi(e, M)))
    return worst


@check("homogeneity")
def _homog(ctx):
    rng = np.random.default_rng(ctx["seed"])
    M = _near_identity(rng, 100)
    worst = 0.0
    for s in (0.5, 2.0):
        worst = max(worst, _rel(C.energy_density(s * M), s**4 * C.energy_density(M)))
        for e in C.DIRECTIONS:
            worst = max(worst, _rel(C.phi(e, s * M), C.phi(e, M)),
                        _rel(C.A_tensor(e, s * M), C.A_tensor(e, M) / s))
    return worst


@check("rotation-covariance")
def _rotcov(ctx):
    rng = np.random.default_rng(ctx["seed"])
    M = _near_identity(rng, 100)
    R = G.R60
    return max(_rel(C.phi(R @ e, M), C.phi(e, R.T @ M @ R)) for e in C.DIRECTIONS)


@check("P-values")
def _pvals(ctx):
    P = ctx["P"]
    qp, qm = C.q_plus_minus(1, 0, 0, 1)
    qp2, qm2 = C.q_plus_minus(1, 1, 0, 1)
    return max(abs(P(1, 0, 0, 1) - 20), abs(P(1, 1, 0, 1) - 17), abs(qp - 40), abs(qm),
               abs(qp2 - 45), abs(qm2 + 11))


@check("P-vs-F identity")
def _pf(ctx):
    rng = np.random.default_rng(ctx["seed"])
    M = _near_identity(rng, 1000)
    a, b, c, d = M[:, 0, 0], M[:, 0, 1], M[:, 1, 0], M[:, 1, 1]
    return _rel(ctx["P"](a, b, c, d), 96 * np.sqrt(3) * G.det2(M) * C.energy_density(M))


@check("P-vs-Q split")
def _pq(ctx):
    rng = np.random.default_rng(ctx["seed"])
    M = _near_identity(rng, 1000)
    a, b, c, d = M[:, 0, 0], M[:, 0, 1], M[:, 1, 0], M[:, 1, 1]
    qp, qm = C.q_plus_minus(a, b, c, d)
    return _rel(ctx["P"](a, b, c, d), 0.5 * (qp + qm))


@check("trace-form-discrepancy")
def _traceform(ctx):
    """As printed the trace form gives -16 at I (P gives 20); the corrected form must match P."""
    printed = C.trace_form_P(G.IDENTITY, corrected=False)
    rng = np.random.default_rng(ctx["seed"])
    M = _near_identity(rng, 200)
    a, b, c, d = M[:, 0, 0], M[:, 0, 1], M[:, 1, 0], M[:, 1, 1]
    err = _rel(C.trace_form_P(M, corrected=True), C.polynomial_P(a, b, c, d))
    return err + (0.0 if abs(printed + 16) < 1e-12 else 1.0)


def taylor_slopes(k=20, seed=0):
    rng = np.random.default_rng(seed)
    eps = 10.0 ** -np.arange(1, 3.01, 0.5)
    slopes = []
    for _ in range(k):
        N = rng.standard_normal((2, 2))
        N /= G.frobenius_norm(N)
        err = [abs(48 * C.energy_density(G.IDENTITY + e * N) - 48 * C.taylor_F(N, e, 3)) for e in eps]
        slopes.append(np.polyfit(np.log(eps), np.log(err), 1)[0])
    return np.array(slopes)


@check("taylor-slope")
def _taylor(ctx):
    return float(taylor_slopes(20, ctx["seed"]).min())


def grad_fd_error(M, h=1e-5):
    g = C.grad_F(M)
    fd = np.empty_like(M)
    for k in range(4):
        E = np.zeros((2, 2))
        E.flat[k] = h
        fd[:, k // 2, k % 2] = (C.energy_density(M + E) - C.energy_density(M - E)) / (2 * h)
    return np.max(G.frobenius_norm(g - fd) / G.frobenius_norm(g))


@check("grad-F-finite-difference")
def _gradfd(ctx):
    rng = np.random.default_rng(ctx["seed"])
    M = _near_identity(rng, 100)
    return float(grad_fd_error(M)) + _rel(C.grad_F(G.IDENTITY), C.TRACE_COEF * G.IDENTITY)


@check("euler-relation")
def _euler(ctx):
    rng = np.random.default_rng(ctx["seed"])
    M = _near_identity(rng, 100)
    return _rel(G.frobenius(C.grad_F(M), M), 4 * C.energy_density(M))


@check("dphi-finite-difference")
def _dphi(ctx):
    rng = np.random.default_rng(ctx["seed"])
    M = _near_identity(rng, 100)
    N = rng.standard_normal((100, 2, 2))
    h = 1e-6
    worst = 0.0
    for e in C.DIRECTIONS:
        fd = (C.phi(e, M + h * N) - C.phi(e, M - h * N)) / (2 * h)
        an = C.dphi(e, M, N)
        # relative to |grad Phi| |N|, the size of a generic directional derivative
        scale = G.frobenius_norm(C.grad_phi(e, M)) * G.frobenius_norm(N)
        worst = max(worst, float(np.max(np.abs(an - fd) / scale)))
        worst = max(worst, float(np.max(np.abs(C.dphi(e, M, M)))))
    # e1 at I along diag(1,-1) from the closed form: d/dt of (-(1+t)^2+3(1-t)^2)/(2 sqrt3 (1-t^2)) at 0 = -4/sqrt3
    worst = max(worst, abs(C.dphi(G.E1, G.IDENTITY, G.S_REFLECT) + 4 / np.sqrt(3)))
    return worst


@check("A-tensor")
def _A(ctx):
    Re, Rte = G.R60 @ G.E1, G.R60.T @ G.E1
    expect = np.outer(Re, Re) + np.outer(Rte, Rte) - G.IDENTITY
    return max(float(np.max(np.abs(C.A_tensor(G.E1, G.IDENTITY) - expect))),
               max(abs(np.trace(C.A_tensor(e, G.IDENTITY))) for e in C.DIRECTIONS))


def gateaux_error(X, Yd, m=32, tau=1e-6, diff="spectral"):
    y0, _ = X.on_grid(m)
    dy, _ = Yd.on_grid(m)
    g = C.discrete_gradient(y0, "F", diff)
    w = Lt.quadrature_weight(m)
    analytic = w * np.sum(g * dy)
    # the constant F(I)|Pi| is dropped to keep the difference quotient clear of rounding
    fd = (C.discrete_energy(y0 + tau * dy, "F", diff, excess=True)
          - C.discrete_energy(y0 - tau * dy, "F", diff, excess=True)) / (2 * tau)
    return abs(analytic - fd) / abs(analytic)


@check("variational-gateaux")
def _gateaux(ctx):
    k = ctx.get("gateaux_pairs", 20)
    return max(gateaux_error(Lt.random_fourier_field(ctx["seed"] + i, 0.02),
                             Lt.random_fourier_field(ctx["seed"] + 500 + i, 1.0)) for i in range(k))


@check("F0-equals-F")
def _f0(ctx):
    worst = 0.0
    for Y in random_fields(20, ctx["seed"], 0.05):
        worst = max(worst, _rel(C.energy_functional(Y, 32, "F0"), C.energy_functional(Y, 32, "F")))
    return worst


@check("D2F0-rayleigh")
def _rayleigh(ctx):
    """Smallest Hessian eigenvalue of F0 at I relative to 1/(8 sqrt3) (must be >= 1 - tol)."""
    H = C.numeric_hessian(C.grad_F0, G.IDENTITY)
    return abs(min(0.0, np.linalg.eigvalsh(H).min() - C.LAMBDA_IDENTITY)) / C.LAMBDA_IDENTITY


@check("G-hessian-bounds")
def _gbounds(ctx):
    g = C.ConvexifiedEnergy.default()
    rep = g.hessian_bounds(seed=ctx["seed"])
    rng = np.random.default_rng(ctx["seed"])
    M = _near_identity(rng, 50, 0.49 * g.rho0)
    same = np.all(g.G(M) == C.F0(M)) and np.all(g.grad_G(M) == C.grad_F0(M))
    return 0.0 if rep["ok"] and same else 1.0


@check("regime-flag")
def _regime(ctx):
    """Out-of-regime input must raise instead of extrapolating."""
    bad = 0
    try:
        C.phi_closed_form_e1(np.diag([2.0, 0.5]))
        bad += 1
    except RegimeError:
        pass
    try:
        # Phi(e1, M) ~ 0.0017, far below the guard
        C.grad_F(np.diag([1.0, 1 / np.sqrt(3) + 1e-3]))
        bad += 1
    except HexQuantError:
        pass
    return float(bad)


# ---------------------------------------------------------------- driver

#: checks whose value is a lower bound (pass iff value >= tol)
_LOWER = {"taylor-slope"}


def run_battery(tols: dict | None = None, inject: str | None = None, seed: int = 0, only=None,
                options: dict | None = None) -> list:
    tol = dict(DEFAULT_TOLS)
    tol.update(tols or {})
    unknown = set(tols or {}) - set(DEFAULT_TOLS)
    if unknown:
        raise KeyError(f"unknown check name(s): {sorted(unknown)}")
    if inject is not None and inject not in MUTATIONS:
        raise KeyError(f"unknown mutation {inject!r}; known: {sorted(MUTATIONS)}")
    ctx = {"seed": seed, "P": MUTATIONS[inject] if inject else C.polynomial_P}
    ctx.update(options or {})
    results = []
    for name, fn in _CHECKS:
        if only and not any(name.startswith(o) for o in only):
            continue
        t0 = time.perf_counter()
        try:
            v = float(fn(ctx))
            detail = ""
        except Exception as exc:  # a crash is a failure of that check
            v, detail = float("nan"), f"{type(exc).__name__}: {exc}"
        t = tol[name]
        ok = np.isfinite(v) and (v >= t if name in _LOWER else v <= t)
        results.append(CheckResult(name, bool(ok), v, t, detail, time.perf_counter() - t0))
    return results


def check_names():
    return [n for n, _ in _CHECKS]
