"""Gradient flows: the particle ODE for Q and the periodic PDE for the limit energy.

Both integrators are explicit Euler with energy backtracking: a step is
accepted only if the (discrete) energy strictly decreases, otherwise the
step size is halved.  States are immutable snapshots and traces append-only.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .continuum import (F_IDENTITY, ConvexifiedEnergy, continuum_slowest_rate, discrete_energy, discrete_gradient,
                        linearized_symbol, poincare_constant)
from .discrete import VoronoiDiagram, lattice_fit, voronoi_periodic
from .errors import DomainError, ModeViolationError, RegimeError, StagnationError
from .geometry import cross
from .lattice import AREA_PI, DeformationField, HexLattice, quadrature_weight, sample_points, wrap

DT_MIN = 1e-12


# --------------------------------------------------------------------------
# traces


@dataclass
class FlowTrace:
    """Append-only per-step records of a flow run.

    ``l2`` and ``linf`` measure the distance to the identity (PDE) or to the
    best-fit translated lattice (particles, in units of eps).
    """

    kind: str
    time: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    l2: list = field(default_factory=list)
    linf: list = field(default_factory=list)
    dt: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    stop_reason: str = ""
    meta: dict = field(default_factory=dict)

    def record(self, t, e, l2, linf, dt, accepted=True):
        self.time.append(float(t))
        self.energy.append(float(e))
        self.l2.append(float(l2))
        self.linf.append(float(linf))
        self.dt.append(float(dt))
        self.accepted.append(bool(accepted))

    def __len__(self):
        return len(self.time)

    def accepted_view(self):
        idx = [i for i, a in enumerate(self.accepted) if a]
        pick = lambda xs: np.array([xs[i] for i in idx])  # noqa: E731
        return pick(self.time), pick(self.energy), pick(self.l2), pick(self.linf)

    def is_monotone(self) -> bool:
        _, e, _, _ = self.accepted_view()
        return bool(np.all(np.diff(e) < 0)) if len(e) > 1 else True

    def csv_header(self):
        if self.kind == "particle":
            return ["step", "time [flow time]", "energy Q [lattice units^4]",
                    "l2 deviation [eps]", "max deviation [eps]", "dt [flow time]", "accepted"]
        return ["step", "time [flow time]", "energy [lattice units^2]",
                "l2 distance [lattice units]", "linf distance [lattice units]", "dt [flow time]", "accepted"]

    def to_csv(self, out=None, start: int = 0) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        if start == 0:
            w.writerow(self.csv_header())
        for i in range(start, len(self)):
            w.writerow([i, repr(self.time[i]), repr(self.energy[i]), repr(self.l2[i]), repr(self.linf[i]),
                        repr(self.dt[i]), int(self.accepted[i])])
        text = buf.getvalue()
        if out is not None:
            if hasattr(out, "write"):
                out.write(text)
            else:
                with open(out, "w", newline="") as fh:
                    fh.write(text)
        return text


# --------------------------------------------------------------------------
# particle flow


@dataclass(frozen=True)
class ParticleState:
    points: np.ndarray
    lattice: HexLattice
    time: float = 0.0
    dt: float | None = None
    step: int = 0

    def __post_init__(self):
        # stored as given: re-wrapping is not bit-idempotent and would break exact resumes
        p = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if len(p) != self.lattice.num_sites:
            raise DomainError(f"expected {self.lattice.num_sites} points, got {len(p)}")
        object.__setattr__(self, "points", p)


def lloyd_dt(lattice: HexLattice) -> float:
    """Step for which explicit Euler coincides with one Lloyd iteration on the regular lattice."""
    return 1.0 / (2 * AREA_PI * lattice.epsilon**2)


def _hex_moments(diag: VoronoiDiagram):
    """Areas and centroids relative to the sites, vectorized over hexagon cells."""
    v = diag.vertex_array()
    w = np.roll(v, -1, axis=1)
    c = cross(v, w)
    area = 0.5 * c.sum(axis=1)
    cen = np.sum((v + w) * c[..., None], axis=1) / (6 * area[:, None])
    return area, cen


def particle_forces(points, lattice: HexLattice, mode: str = "hexagon"):
    """``(Q, -grad Q)`` with ``-grad_i Q = -2 |V_i| (x_i - centroid(V_i))``."""
    diag = voronoi_periodic(points, lattice, mode)
    if mode == "hexagon":
        area, cen = _hex_moments(diag)
    else:
        area = diag.areas()
        cen = diag.centroids() - diag.sites
    return float(np.sum(diag.energies())), 2 * area[:, None] * cen


def particle_rhs(state: ParticleState, mode: str = "hexagon") -> np.ndarray:
    return particle_forces(state.points, state.lattice, mode)[1]


def particle_energy(points, lattice: HexLattice, mode: str = "hexagon") -> float:
    return float(np.sum(voronoi_periodic(points, lattice, mode).energies()))


def particle_step(state: ParticleState, dt: float, mode: str = "hexagon"):
    """One backtracking Euler step; returns ``(new_state, dt_used, Q_new, rejections)``."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    q0, f = particle_forces(state.points, state.lattice, mode)
    rejections = 0
    while True:
        if dt < DT_MIN:
            raise StagnationError(f"particle step size fell below {DT_MIN}")
        trial = state.points + dt * f
        try:
            q1 = particle_energy(trial, state.lattice, mode)
        except ModeViolationError:
            q1 = np.inf
        if q1 < q0:
            new = replace(state, points=trial, time=state.time + dt, step=state.step + 1)
            return new, dt, q1, rejections
        dt *= 0.5
        rejections += 1


def _particle_deviation(points, lattice):
    _, dev = lattice_fit(points, lattice)
    return float(np.sqrt(np.mean(dev**2))) / lattice.epsilon, float(dev.max()) / lattice.epsilon


def run_particle_flow(state: ParticleState, max_steps: int = 2000, dev_tol: float = 1e-4,
                      mode: str = "hexagon", check_every: int = 50, growth: float = 1.1,
                      dt_cap: float = 1.9, callback=None, trace: FlowTrace | None = None):
    """Run the particle flow until the maximal deviation drops below ``dev_tol * eps``.

    The step starts at the Lloyd value and grows by ``growth`` after every
    accepted step, capped at ``dt_cap`` Lloyd steps.  Every ``check_every``
    steps the hexagon-mode energy is compared against a general-mode
    diagram.  Returns ``(final_state, trace)``.
    """
    lat = state.lattice
    base = lloyd_dt(lat)
    dt = state.dt or base
    trace = trace or FlowTrace("particle", meta={"n": lat.n, "mode": mode})
    if not len(trace):
        q = particle_energy(state.points, lat, mode)
        l2, linf = _particle_deviation(state.points, lat)
        trace.record(state.time, q, l2, linf, 0.0)
        if callback:
            callback(state, trace)
    while state.step < max_steps:
        _, linf = _particle_deviation(state.points, lat)
        if linf <= dev_tol:
            trace.stop_reason = "converged"
            break
        q_prev = trace.energy[-1]
        try:
            new, used, q, rej = particle_step(state, dt, mode)
        except StagnationError:
            if _at_roundoff(state.points, lat, mode, q_prev):
                trace.stop_reason = "roundoff"
                break
            raise
        for _ in range(rej):
            trace.record(state.time, q_prev, trace.l2[-1], trace.linf[-1], dt, accepted=False)
            dt *= 0.5
        state = new
        dt = min(used * growth, dt_cap * base)
        state = replace(state, dt=dt)
        l2, linf = _particle_deviation(state.points, lat)
        trace.record(state.time, q, l2, linf, used)
        if check_every and state.step % check_every == 0:
            check_general(state.points, lat)
        if callback:
            callback(state, trace)
    else:
        trace.stop_reason = "max_steps"
    return state, trace


def _at_roundoff(points, lattice, mode, q):
    _, f = particle_forces(points, lattice, mode)
    predicted = lloyd_dt(lattice) * float(np.sum(f * f))
    return predicted < 1e3 * np.finfo(float).eps * abs(q)


def check_general(points, lattice: HexLattice, rtol: float = 1e-10):
    """Safety net: the hexagon-mode cells must coincide with the general-mode oracle."""
    h = voronoi_periodic(points, lattice, "hexagon").energies()
    g = voronoi_periodic(points, lattice, "general").energies("polygon")
    if np.max(np.abs(h - g)) > rtol * np.max(np.abs(g)):
        raise ModeViolationError("hexagon and general mode disagree: Voronoi topology changed")


def jittered_lattice(lattice: HexLattice, amplitude: float, seed: int = 0) -> np.ndarray:
    """Lattice sites moved by independent uniform offsets of length ``< amplitude * eps``."""
    rng = np.random.default_rng(seed)
    n = lattice.num_sites
    r = amplitude * lattice.epsilon * np.sqrt(rng.random(n))
    t = 2 * np.pi * rng.random(n)
    return wrap(lattice.reference_points().reshape(-1, 2) + np.column_stack([r * np.cos(t), r * np.sin(t)]))


# --------------------------------------------------------------------------
# PDE flow


@dataclass(frozen=True)
class PdeState:
    """Nodal displacement ``Y = X - id`` on the ``m x m`` lattice-coordinate grid."""

    values: np.ndarray
    time: float = 0.0
    dt: float | None = None
    step: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[0] != v.shape[1] or v.shape[2] != 2:
            raise DomainError("PDE state values must have shape (m, m, 2)")
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_field(cls, X: DeformationField, m: int) -> "PdeState":
        y, _ = X.on_grid(m)
        return cls(y - y.reshape(-1, 2).mean(axis=0))


def pde_rhs(state: PdeState, variant: str = "F", diff: str = "centered", convex=None) -> np.ndarray:
    """``div grad W(grad X)`` as minus the exact gradient of the discrete energy."""
    return -discrete_gradient(state.values, variant, diff, convex)


def pde_energy(values, variant: str = "F", diff: str = "centered", convex=None) -> float:
    """Discrete energy minus its value at the identity."""
    return discrete_energy(values, variant, diff, convex, excess=True)


def l2_distance(values) -> float:
    return float(np.sqrt(quadrature_weight(values.shape[0]) * np.sum(values * values)))


def linf_distance(values) -> float:
    return float(np.max(np.hypot(values[..., 0], values[..., 1])))


def pde_step(state: PdeState, dt: float, variant: str = "F", diff: str = "centered", convex=None,
             energy: float | None = None):
    """One backtracking Euler step; returns ``(new_state, dt_used, energy_new, rejections)``."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    e0 = pde_energy(state.values, variant, diff, convex) if energy is None else energy
    g = pde_rhs(state, variant, diff, convex)
    rejections = 0
    while True:
        if dt < DT_MIN:
            raise StagnationError(f"PDE step size fell below {DT_MIN}")
        trial = state.values + dt * g
        try:
            e1 = pde_energy(trial, variant, diff, convex)
        except RegimeError:
            if variant != "G" and rejections == 0 and not _in_regime(state.values, diff):
                raise
            e1 = np.inf
        if e1 < e0:
            return replace(state, values=trial, time=state.time + dt, step=state.step + 1), dt, e1, rejections
        dt *= 0.5
        rejections += 1


def _in_regime(values, diff):
    try:
        pde_energy(values, "F", diff)
        return True
    except RegimeError:
        return False


def max_stable_dt(m: int, diff: str = "centered") -> float:
    """``2 / lambda_max`` of the linearized discrete operator."""
    return 2.0 / float(np.max(linearized_symbol(m, diff)))


def smallest_linear_rate(m: int, diff: str = "centered") -> float:
    """Smallest nonzero eigenvalue of the discrete linearized operator (mean and null modes excluded)."""
    ev = linearized_symbol(m, diff)
    ev = ev[ev > 1e-9]
    return float(ev.min())


def run_pde_flow(state: PdeState, T: float, variant: str = "F", diff: str = "centered",
                 atol: float = 0.0, growth: float = 1.25, safety: float = 0.9, convex=None,
                 max_steps: int = 1_000_000, callback=None, trace: FlowTrace | None = None):
    """Integrate the PDE flow to time ``T``.

    Stops early when ``||X - id||_inf <= atol`` or when the predicted energy
    decrease is lost in rounding.  The first step is ``h^2 / (8 Lambda)``;
    afterwards the step grows by ``growth`` per accepted step, never beyond
    ``safety * 2 / lambda_max`` of the linearized operator.
    """
    m = state.m
    if variant == "G" and convex is None:
        convex = ConvexifiedEnergy.default()
    lam = convex or ConvexifiedEnergy.default()
    dt_cap = safety * max_stable_dt(m, diff)
    dt = state.dt or min(1.0 / (m * m * 8 * lam.Lam), dt_cap)
    e = pde_energy(state.values, variant, diff, convex)
    trace = trace or FlowTrace("pde", meta={"m": m, "variant": variant, "diff": diff})
    if not len(trace):
        trace.record(state.time, e, l2_distance(state.values), linf_distance(state.values), 0.0)
        if callback:
            callback(state, trace)
    noise = 16 * np.finfo(float).eps * AREA_PI * F_IDENTITY
    while True:
        if state.time >= T * (1 - 1e-12):
            trace.stop_reason = "T"
            break
        if atol and linf_distance(state.values) <= atol:
            trace.stop_reason = "atol"
            break
        if state.step >= max_steps:
            trace.stop_reason = "max_steps"
            break
        g = pde_rhs(state, variant, diff, convex)
        gn = quadrature_weight(m) * float(np.sum(g * g))
        if gn == 0.0:
            trace.stop_reason = "stationary"
            break
        dt = min(dt, T - state.time)
        if dt * gn < noise:
            trace.stop_reason = "roundoff"
            break
        new, used, e_new, rej = pde_step(state, dt, variant, diff, convex, energy=e)
        for _ in range(rej):
            trace.record(state.time, e, trace.l2[-1], trace.linf[-1], dt, accepted=False)
            dt *= 0.5
        state, e = new, e_new
        dt = min(used * growth, dt_cap)
        state = replace(state, dt=dt)
        trace.record(state.time, e, l2_distance(state.values), linf_distance(state.values), used)
        if callback:
            callback(state, trace)
    return state, trace


# --------------------------------------------------------------------------
# diagnostics


@dataclass
class DecayReport:
    status: str
    rate: float | None
    r2: float | None
    monotone: bool
    bound_half: float
    bound_quarter: float
    predicted_rate: float | None
    ratio_to_predicted: float | None
    points: int

    @property
    def passed(self) -> bool:
        return self.status == "decaying" and self.monotone and self.rate is not None and self.rate > 0

    def as_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def decay_report(trace: FlowTrace, fraction: float = 0.5, m: int | None = None, diff: str | None = None,
                 lam: float | None = None) -> DecayReport:
    """Least-squares fit of ``log ||X - id||_2`` over the final ``fraction`` of the run.

    Reports both candidate lower bounds for the rate, ``C_P lam / 2`` and
    ``lam / (4 C_P)`` with ``C_P`` the Poincare constant of the torus, and
    compares the fit to the slowest mode of the discrete linearized operator.
    """
    t, e, l2, _ = trace.accepted_view()
    if len(t) < 10:
        raise DomainError(f"decay report needs at least 10 accepted steps, got {len(t)}")
    lam = ConvexifiedEnergy.default().lam if lam is None else lam
    cp = poincare_constant()
    monotone = bool(np.all(np.diff(e) < 0))
    m = m or trace.meta.get("m")
    diff = diff or trace.meta.get("diff", "centered")
    predicted = smallest_linear_rate(m, diff) if m else continuum_slowest_rate()
    common = dict(monotone=monotone, bound_half=cp * lam / 2, bound_quarter=lam / (4 * cp),
                  predicted_rate=predicted)
    if l2[0] == 0 or np.all(l2 == 0):
        return DecayReport("equilibrium", None, None, ratio_to_predicted=None, points=len(t), **common)
    sel = t >= t[-1] - fraction * (t[-1] - t[0])
    sel &= l2 > 0
    x, y = t[sel], np.log(l2[sel])
    if len(x) < 3:
        raise DomainError("too few points in the fit window")
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    rate = -float(slope)
    status = "decaying" if monotone else "non-monotone"
    return DecayReport(status, rate, r2, ratio_to_predicted=rate / predicted, points=int(sel.sum()), **common)


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path_prefix: str, state, trace: FlowTrace, config: dict):
    """Write ``<prefix>.npz`` (state arrays) and ``<prefix>.json`` (manifest)."""
    if isinstance(state, PdeState):
        np.savez(path_prefix + ".npz", values=state.values)
        kind = "pde"
    else:
        np.savez(path_prefix + ".npz", points=state.points)
        kind = "particle"
    manifest = {"kind": kind, "time": state.time, "dt": state.dt, "step": state.step, "config": config,
                "trace": {k: getattr(trace, k) for k in ("time", "energy", "l2", "linf", "dt", "accepted")},
                "trace_meta": trace.meta}
    if kind == "particle":
        manifest["n"] = state.lattice.n
    with open(path_prefix + ".json", "w") as fh:
        json.dump(manifest, fh, indent=1)


def load_checkpoint(path_prefix: str):
    """Inverse of :func:`save_checkpoint`: ``(state, trace, config)``."""
    with open(path_prefix + ".json") as fh:
        man = json.load(fh)
    arr = np.load(path_prefix + ".npz")
    trace = FlowTrace(man["kind"], meta=man.get("trace_meta", {}), **man["trace"])
    if man["kind"] == "pde":
        state = PdeState(arr["values"], man["time"], man["dt"], man["step"])
    else:
        state = ParticleState(arr["points"], HexLattice(man["n"]), man["time"], man["dt"], man["step"])
    return state, trace, man["config"]


__all__ = [
    "FlowTrace", "ParticleState", "PdeState", "DecayReport", "particle_rhs", "particle_forces",
    "particle_energy", "particle_step", "run_particle_flow", "pde_rhs", "pde_energy", "pde_step",
    "run_pde_flow", "decay_report", "smallest_linear_rate", "max_stable_dt", "lloyd_dt",
    "jittered_lattice", "check_general", "save_checkpoint", "load_checkpoint", "l2_distance",
    "linf_distance", "sample_points",
]
