import numpy as np
import pytest

from hexquant.continuum import ConvexifiedEnergy, continuum_slowest_rate
from hexquant.discrete import voronoi_periodic
from hexquant.errors import DomainError, RegimeError
from hexquant.flows import (FlowTrace, ParticleState, PdeState, decay_report, jittered_lattice, l2_distance,
                            linf_distance, lloyd_dt, load_checkpoint, max_stable_dt, particle_energy,
                            particle_forces, particle_rhs, particle_step, pde_energy, pde_rhs, pde_step,
                            run_particle_flow, run_pde_flow, save_checkpoint, smallest_linear_rate)
from hexquant.geometry import BASIS_INV
from hexquant.lattice import (AREA_PI, FourierField, HexLattice, identity_field, quadrature_weight,
                              random_fourier_field, sample_points, trig_field, wrap)


def slowest_shear_mode(amplitude):
    xi = np.array([1.0, 0.0]) @ BASIS_INV
    pol = np.array([-xi[1], xi[0]]) / np.linalg.norm(xi)
    return FourierField([[1, 0]], [[0, 0]], [amplitude * pol])


# ----------------------------------------------------------------- particles


def test_particle_rhs_zero_at_lattice():
    lat = HexLattice(8)
    st = ParticleState(sample_points(identity_field(), lat), lat)
    assert np.max(np.abs(particle_rhs(st))) < 1e-14


def test_particle_rhs_matches_finite_difference():
    lat = HexLattice(6)
    pts = jittered_lattice(lat, 0.1, seed=3)
    q, f = particle_forces(pts, lat)
    rng = np.random.default_rng(1)
    h = 1e-6
    for _ in range(5):
        v = rng.normal(size=pts.shape)
        v /= np.linalg.norm(v)
        fd = (particle_energy(pts + h * v, lat) - particle_energy(pts - h * v, lat)) / (2 * h)
        assert fd == pytest.approx(-np.sum(f * v), rel=1e-6)


def test_particle_rhs_general_mode_agrees():
    lat = HexLattice(5)
    pts = jittered_lattice(lat, 0.1, seed=2)
    st = ParticleState(pts, lat)
    assert np.allclose(particle_rhs(st, "hexagon"), particle_rhs(st, "general"), atol=1e-15)


def test_single_displaced_site_is_pulled_back():
    lat = HexLattice(6)
    pts = sample_points(identity_field(), lat).copy()
    d = np.array([0.3, 0.1]) * lat.epsilon * 0.2
    pts[14] += d
    f = particle_rhs(ParticleState(pts, lat))
    assert np.dot(f[14], d) < 0


def test_particle_step_fixed_point_and_decrease():
    lat = HexLattice(8)
    ref = ParticleState(sample_points(identity_field(), lat), lat)
    with pytest.raises(Exception):
        # no descent is possible at the exact minimizer
        particle_step(ref, lloyd_dt(lat))
    st = ParticleState(jittered_lattice(lat, 0.1, seed=0), lat)
    q0 = particle_energy(st.points, lat)
    new, dt, q1, rej = particle_step(st, lloyd_dt(lat))
    assert q1 < q0
    assert new.step == 1 and new.time == dt


def test_particle_step_backtracks_large_dt():
    lat = HexLattice(8)
    st = ParticleState(jittered_lattice(lat, 0.1, seed=0), lat)
    q0 = particle_energy(st.points, lat)
    new, dt, q1, rej = particle_step(st, 50 * lloyd_dt(lat))
    assert rej > 0
    assert dt < 50 * lloyd_dt(lat)
    assert q1 < q0


def test_particle_step_rejects_bad_dt():
    lat = HexLattice(4)
    with pytest.raises(DomainError):
        particle_step(ParticleState(jittered_lattice(lat, 0.1), lat), 0.0)


def test_particle_state_count_checked():
    with pytest.raises(DomainError):
        ParticleState(np.zeros((5, 2)), HexLattice(3))


def test_particle_flow_converges():
    lat = HexLattice(8)
    st = ParticleState(jittered_lattice(lat, 0.1, seed=1), lat)
    final, tr = run_particle_flow(st, max_steps=1000, dev_tol=1e-3)
    assert tr.stop_reason == "converged"
    assert tr.is_monotone()
    assert tr.energy[-1] == pytest.approx(5 / (24 * np.sqrt(3)) / 64, rel=1e-6)


def test_jittered_lattice_amplitude():
    lat = HexLattice(8)
    p = jittered_lattice(lat, 0.1, seed=5)
    d = wrap(p - sample_points(identity_field(), lat))
    assert np.max(np.hypot(*d.T)) < 0.1 * lat.epsilon


# ----------------------------------------------------------------- PDE


def test_pde_rhs_zero_at_identity():
    st = PdeState(np.zeros((16, 16, 2)))
    for variant in ("F", "F0", "G"):
        assert np.max(np.abs(pde_rhs(st, variant))) < 1e-14


def test_pde_rhs_F_equals_F0_spectral():
    st = PdeState.from_field(random_fourier_field(2, 0.05), 32)
    a = pde_rhs(st, "F", "spectral")
    b = pde_rhs(st, "F0", "spectral")
    assert np.max(np.abs(a - b)) <= 1e-9 * np.max(np.abs(a))


def test_pde_rhs_G_equals_F0_inside():
    g = ConvexifiedEnergy.default()
    st = PdeState.from_field(random_fourier_field(2, 0.2 * g.rho0), 16)
    assert np.array_equal(pde_rhs(st, "G", convex=g), pde_rhs(st, "F0"))


def test_pde_regime_error_names_nodes():
    Y = FourierField([[1, 0]], [[0, 0]], [[-0.3, 0.0]])
    st = PdeState.from_field(Y, 16)
    with pytest.raises(RegimeError) as info:
        pde_rhs(st, "F")
    assert len(info.value.nodes) > 0
    # the convexified variant is defined everywhere
    assert np.all(np.isfinite(pde_rhs(st, "G")))


def test_pde_step_decreases_energy_and_keeps_mean():
    st = PdeState.from_field(random_fourier_field(1, 0.02), 16)
    e0 = pde_energy(st.values)
    new, dt, e1, rej = pde_step(st, 0.5 * max_stable_dt(16))
    assert e1 < e0
    assert np.max(np.abs(new.values.mean(axis=(0, 1)))) < 1e-15


def test_pde_step_backtracks():
    st = PdeState.from_field(random_fourier_field(1, 0.02), 16)
    new, dt, e1, rej = pde_step(st, 20 * max_stable_dt(16))
    assert rej > 0 and e1 < pde_energy(st.values)


def test_pde_flow_monotone_mean_zero_and_decay():
    st = PdeState.from_field(random_fourier_field(1, 0.02), 16)
    means = []
    final, tr = run_pde_flow(st, T=1.0, callback=lambda s, t: means.append(
        np.abs(quadrature_weight(16) * s.values.sum(axis=(0, 1))).max()))
    assert tr.stop_reason == "T"
    assert tr.is_monotone()
    assert max(means) <= 1e-12
    rep = decay_report(tr)
    assert rep.passed and rep.r2 >= 0.99
    assert 0.25 <= rep.rate / smallest_linear_rate(16) <= 4


def test_pde_flow_identity_is_stationary():
    final, tr = run_pde_flow(PdeState(np.zeros((8, 8, 2))), T=1.0)
    assert tr.stop_reason == "stationary"
    assert np.all(final.values == 0)


def test_pde_flow_grid_refinement():
    rates = []
    for m in (32, 64):
        _, tr = run_pde_flow(PdeState.from_field(slowest_shear_mode(0.003), m), T=0.25)
        rates.append(decay_report(tr).rate)
    assert abs(rates[1] - rates[0]) / rates[1] < 0.05


def test_linear_rates():
    assert smallest_linear_rate(32) == pytest.approx(3.7502, abs=1e-4)
    assert smallest_linear_rate(32, "spectral") == pytest.approx(continuum_slowest_rate(), rel=1e-12)
    assert max_stable_dt(32) == pytest.approx(0.001561, rel=1e-3)


def test_distances():
    v = np.zeros((4, 4, 2))
    v[0, 0] = [3.0, 4.0]
    assert linf_distance(v) == 5.0
    assert l2_distance(v) == pytest.approx(np.sqrt(AREA_PI / 16 * 25))


# ----------------------------------------------------------------- reports and traces


def _synthetic(rate, n=40, noise=None):
    tr = FlowTrace("pde", meta={"m": 32, "diff": "centered"})
    t = np.linspace(0, 2, n)
    e = np.exp(-2 * rate * t)
    if noise is not None:
        e = e + noise
    for ti, ei in zip(t, e):
        tr.record(ti, ei, np.exp(-rate * ti), np.exp(-rate * ti), 0.05)
    return tr


def test_decay_report_synthetic_rate():
    rep = decay_report(_synthetic(1.7))
    assert rep.rate == pytest.approx(1.7, rel=1e-12)
    assert rep.r2 == pytest.approx(1.0)
    assert rep.passed
    assert rep.bound_half == pytest.approx(3 / (16 * np.pi**2) * ConvexifiedEnergy.default().lam / 2)


def test_decay_report_flags_non_monotone():
    noise = np.zeros(40)
    noise[20] = 0.5
    rep = decay_report(_synthetic(1.0, noise=noise))
    assert rep.status == "non-monotone"
    assert not rep.passed


def test_decay_report_equilibrium_and_too_short():
    tr = FlowTrace("pde", meta={"m": 8})
    for i in range(12):
        tr.record(i, 0.0, 0.0, 0.0, 1.0)
    rep = decay_report(tr)
    assert rep.status == "equilibrium" and rep.rate is None
    with pytest.raises(DomainError):
        decay_report(_synthetic(1.0, n=5))


def test_trace_csv_format():
    tr = _synthetic(1.0, n=3)
    text = tr.to_csv()
    lines = text.split("\r\n")
    assert lines[0].startswith("step,time [flow time],energy")
    assert len([ln for ln in lines if ln]) == 4


def test_checkpoint_roundtrip(tmp_path):
    lat = HexLattice(4)
    st = ParticleState(jittered_lattice(lat, 0.1, seed=2), lat, time=0.5, dt=0.1, step=3)
    tr = _synthetic(1.0, n=4)
    save_checkpoint(str(tmp_path / "ck"), st, tr, {"a": 1})
    st2, tr2, cfg = load_checkpoint(str(tmp_path / "ck"))
    assert np.array_equal(st2.points, st.points) and st2.step == 3 and st2.dt == 0.1
    assert tr2.energy == tr.energy and cfg == {"a": 1}
    ps = PdeState(np.ones((4, 4, 2)), 1.0, 0.01, 7)
    save_checkpoint(str(tmp_path / "pk"), ps, tr, {})
    ps2, _, _ = load_checkpoint(str(tmp_path / "pk"))
    assert np.array_equal(ps2.values, ps.values) and ps2.step == 7


def test_resume_matches_uninterrupted_run():
    st = PdeState.from_field(trig_field(0.002), 16)
    full_state, full = run_pde_flow(st, T=0.2)
    # stopping on a step count leaves the step-size sequence untouched
    half_state, half = run_pde_flow(st, T=0.2, max_steps=20)
    assert half.stop_reason == "max_steps"
    resumed_state, resumed = run_pde_flow(half_state, T=0.2, trace=half)
    assert np.array_equal(resumed_state.values, full_state.values)
    assert resumed.energy == full.energy


def test_voronoi_of_flow_result_is_hexagonal():
    lat = HexLattice(6)
    final, _ = run_particle_flow(ParticleState(jittered_lattice(lat, 0.1, seed=4), lat), dev_tol=1e-3)
    a = voronoi_periodic(final.points, lat).areas()
    assert np.allclose(a, AREA_PI / 36, rtol=1e-4)
