import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse

from bubblesim.continuity import (
    continuity_step,
    entropy,
    face_divergence,
    face_velocities,
    log_entropy_balance,
    max_principle_bounds,
    neumann_laplacian,
    outflow_rate,
    solve_implicit_diffusion,
    step_envelope_factors,
    upwind_envelope,
    upwind_flux_divergence,
    upwind_operator,
)
from bubblesim.errors import DomainError
from bubblesim.galerkin import build_basis
from bubblesim.grid import BoxDomain, ScalarField, VectorField

from oracles import backward_euler_mode_amplitude, heat_mode_amplitude


def _cos_profile(dom, amp=0.1):
    return ScalarField(dom, 1.0 + amp * np.cos(np.pi * dom.coords[0]))


def _amplitude(rho, dom):
    # projection onto cos(pi x) by midpoint quadrature (exact for the discrete mode)
    c = np.cos(np.pi * dom.coords[0])
    return float(np.sum((rho.values - rho.values.mean()) * c) / np.sum(c * c))


def test_constant_is_steady():
    dom = BoxDomain.unit(8)
    rho, rep = continuity_step(ScalarField.constant(dom, 1.3), VectorField.constant(dom, 0.0), 0.1, 0.01)
    assert np.allclose(rho.values, 1.3, rtol=0, atol=1e-14)
    assert rep.mass_error <= 1e-15 and rep.advective_number == 0


def test_argument_checks():
    dom = BoxDomain.unit(8)
    r = ScalarField.constant(dom, 1.0)
    u = VectorField.constant(dom, 0.0)
    with pytest.raises(DomainError):
        continuity_step(r, u, 0.1, 0.0)
    with pytest.raises(DomainError):
        continuity_step(r, u, -0.1, 0.1)
    with pytest.raises(DomainError):
        continuity_step(r, None, 0.1, 0.1)
    with pytest.raises(DomainError):
        continuity_step(r, None, 0.1, 0.1, faces=[np.zeros((8, 8, 8))] * 3)


def test_implicit_solve_matches_operator():
    dom = BoxDomain((0, 0, 0), (1, 2, 1.5), (8, 12, 10))
    rhs = np.random.default_rng(0).random(dom.shape)
    x = solve_implicit_diffusion(rhs, dom, 0.3)
    assert np.abs(x - 0.3 * neumann_laplacian(x, dom) - rhs).max() <= 1e-12


def test_heat_eigenmode_decay():
    # the 64-cell version runs in the acceptance suite
    dom = BoxDomain.unit(32)
    rho = _cos_profile(dom)
    u = VectorField.constant(dom, 0.0)
    for _ in range(1000):
        rho, _ = continuity_step(rho, u, 0.01, 1e-3)
    amp = _amplitude(rho, dom)
    assert amp == pytest.approx(heat_mode_amplitude(0.1, 0.01, 1.0), abs=2e-3)
    assert amp == pytest.approx(0.090618, abs=2e-3)
    # the discrete scheme reproduces its own eigenvalue to round-off
    assert amp == pytest.approx(backward_euler_mode_amplitude(0.1, 0.01, 1e-3, 1000, 32), rel=1e-10)


def test_heat_eigenmode_convergence_orders():
    eps, T = 0.5, 0.2
    # time: fine grid so the dt error dominates
    errs_t = []
    dom = BoxDomain.unit(64)
    for dt in (0.02, 0.01, 0.005):
        amp = backward_euler_mode_amplitude(0.1, eps, dt, round(T / dt), 64)
        rho = _cos_profile(dom)
        u = VectorField.constant(dom, 0.0)
        for _ in range(round(T / dt)):
            rho, _ = continuity_step(rho, u, eps, dt)
        assert _amplitude(rho, dom) == pytest.approx(amp, rel=1e-10)
        errs_t.append(abs(_amplitude(rho, dom) - heat_mode_amplitude(0.1, eps, T)))
    slopes_t = [math.log2(errs_t[i] / errs_t[i + 1]) for i in range(2)]
    assert all(0.8 <= s <= 1.2 for s in slopes_t), slopes_t
    # space: the spatial part of the error is the eigenvalue defect
    errs_h = []
    for n in (8, 16, 32):
        lam_h = (2 - 2 * math.cos(math.pi / n)) * n**2
        errs_h.append(abs(lam_h - math.pi**2))
    slopes_h = [math.log2(errs_h[i] / errs_h[i + 1]) for i in range(2)]
    assert all(1.7 <= s <= 2.3 for s in slopes_h), slopes_h


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), eps=st.floats(0.0, 0.1), scale=st.floats(0.01, 2.0),
       scheme=st.sampled_from(["exponential", "explicit"]))
def test_mass_conserved_for_wall_vanishing_velocity(seed, eps, scale, scheme):
    dom = BoxDomain.unit(10)
    basis = build_basis(dom, 12)
    rng = np.random.default_rng(seed)
    alpha = scale * rng.standard_normal(basis.N)
    rho = ScalarField(dom, rng.uniform(0.5, 2.0, dom.shape))
    faces = basis.face_velocities(alpha)
    new, rep = continuity_step(rho, None, eps, 1e-2, faces=faces, max_advective_number=0.5, scheme=scheme)
    assert rep.mass_error <= 1e-10
    assert rep.scheme == scheme
    if scheme == "explicit":
        assert rep.advective_number <= 0.5 + 1e-12
    else:
        assert rep.substeps == 1


def test_upwind_operator_matches_flux_form():
    dom = BoxDomain((0, 0, 0), (1, 1.5, 2), (6, 8, 10))
    faces = build_basis(dom, 12).face_velocities(np.random.default_rng(3).standard_normal(12))
    rho = np.random.default_rng(4).random(dom.shape)
    U = upwind_operator(dom, faces)
    assert np.abs(U @ rho.ravel() - upwind_flux_divergence(rho, dom, faces).ravel()).max() <= 1e-12
    assert np.abs(np.asarray(U.sum(axis=0))).max() <= 1e-12
    off = U - sparse.diags(U.diagonal())
    assert off.max() <= 0


def test_cell_velocity_faces_vanish_on_walls():
    dom = BoxDomain.unit(8)
    u = VectorField(dom, np.random.default_rng(0).random((3,) + dom.shape))
    f = face_velocities(u)
    assert np.all(f[0][0] == 0) and np.all(f[0][-1] == 0)
    assert np.all(f[2][:, :, 0] == 0) and np.all(f[2][:, :, -1] == 0)


def test_outflow_rate_of_uniform_expansion():
    dom = BoxDomain.unit(8)
    h = dom.spacing[0]
    faces = []
    for a in range(3):
        shape = [8, 8, 8]
        shape[a] = 9
        coord = dom.axis_faces(a) - 0.5
        s = [1, 1, 1]
        s[a] = 9
        faces.append(np.broadcast_to(coord.reshape(s), shape).copy())
    div = face_divergence(dom, faces)
    assert np.allclose(div, 3.0)
    rate = outflow_rate(dom, faces)
    # corner cell: inflow through the inner faces, outflow only through the outer ones
    assert rate.max() == pytest.approx(3 * 0.5 / h)


def test_max_principle_bounds_examples():
    lo, hi = max_principle_bounds(1.0, 2.0, [0.0, 0.0, 0.0], dt=0.5)
    assert np.all(lo == 1.0) and np.all(hi == 2.0)
    lo, hi = max_principle_bounds(1.0, 2.0, [1.0, 1.0], times=[0.0, 1.0])
    assert lo[-1] == pytest.approx(0.36788, abs=1e-5)
    assert hi[-1] == pytest.approx(5.43656, abs=1e-5)
    with pytest.raises(DomainError):
        max_principle_bounds(0.0, 1.0, [1.0], dt=0.1)
    with pytest.raises(DomainError):
        max_principle_bounds(1.0, 2.0, [1.0])


def test_envelope_factors_of_both_schemes():
    lo_f, hi_f = step_envelope_factors(2.0, 0.1, substeps=2, scheme="explicit")
    assert lo_f == pytest.approx(0.9**2) and hi_f == pytest.approx(math.exp(0.2))
    lo, hi = upwind_envelope(1.0, 2.0, [2.0, 2.0], 0.1, scheme="explicit")
    assert lo[-1] == pytest.approx(0.8**2) and hi[-1] == pytest.approx(2 * math.exp(0.4))
    # the exponential step attains the continuous envelope
    lo, hi = upwind_envelope(1.0, 2.0, [2.0, 2.0], 0.1)
    ref_lo, ref_hi = max_principle_bounds(1.0, 2.0, [2.0, 2.0, 2.0], dt=0.1)
    assert lo == pytest.approx(ref_lo, rel=1e-14) and hi == pytest.approx(ref_hi, rel=1e-14)
    with pytest.raises(DomainError):
        step_envelope_factors(1.0, 0.1, scheme="implicit")


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), eps=st.floats(0.0, 0.05), scheme=st.sampled_from(["exponential", "explicit"]))
def test_density_stays_in_scheme_envelope(seed, eps, scheme):
    dom = BoxDomain.unit(10)
    basis = build_basis(dom, 12)
    rng = np.random.default_rng(seed)
    alpha = rng.standard_normal(basis.N)
    rho = ScalarField(dom, rng.uniform(0.8, 1.5, dom.shape))
    lo, hi = rho.values.min(), rho.values.max()
    dt = 5e-3
    for _ in range(10):
        faces = basis.face_velocities(alpha)
        rho, rep = continuity_step(rho, None, eps, dt, faces=faces, max_advective_number=0.5, scheme=scheme)
        f_lo, f_hi = step_envelope_factors(rep.divu_max, dt, rep.substeps, scheme)
        lo, hi = lo * f_lo, hi * f_hi
        assert rep.rho_min >= lo * (1 - 1e-12) and rep.rho_max <= hi * (1 + 1e-12)


def test_exponential_step_is_unconditionally_positive():
    # far beyond the explicit advective limit the exponential step stays inside the continuous envelope
    dom = BoxDomain.unit(10)
    basis = build_basis(dom, 12)
    faces = basis.face_velocities(5 * np.random.default_rng(1).standard_normal(basis.N))
    rho = ScalarField(dom, np.random.default_rng(2).uniform(0.5, 1.5, dom.shape))
    new, rep = continuity_step(rho, None, 0.0, 0.1, faces=faces)
    assert rep.advective_number > 5
    f_lo, f_hi = step_envelope_factors(rep.divu_max, 0.1)
    assert new.values.min() >= rho.values.min() * f_lo * (1 - 1e-12)
    assert new.values.max() <= rho.values.max() * f_hi * (1 + 1e-12)
    assert rep.mass_error <= 1e-12
    with pytest.raises(DomainError):
        continuity_step(rho, None, 0.0, 0.1, faces=faces, scheme="implicit")


def test_negative_density_is_flagged_not_clamped():
    dom = BoxDomain.unit(8)
    vals = np.full(dom.shape, 1.0)
    vals[4, 4, 4] = -0.5
    rho, rep = continuity_step(ScalarField(dom, vals), VectorField.constant(dom, 0.0), 0.0, 0.1)
    assert rep.negative and rho.values.min() == -0.5


def test_entropy_balance_static_is_zero():
    dom = BoxDomain.unit(8)
    rho = ScalarField(dom, 1.0 + 0.2 * np.random.default_rng(0).random(dom.shape))
    u = VectorField.constant(dom, 0.0)
    series, vels = [rho], []
    for _ in range(5):
        rho, _ = continuity_step(rho, u, 0.0, 0.1)
        series.append(rho)
        vels.append(u)
    assert np.abs(log_entropy_balance(series, vels, dt=0.1)).max() <= 1e-10


def test_entropy_balance_heat_flow_dissipates():
    dom = BoxDomain.unit(16)
    rho = _cos_profile(dom, 0.3)
    u = VectorField.constant(dom, 0.0)
    series, vels = [rho], []
    for _ in range(20):
        rho, _ = continuity_step(rho, u, 0.05, 0.01)
        series.append(rho)
        vels.append(u)
    r = log_entropy_balance(series, vels, dt=0.01)
    assert r[0] == 0 and np.all(r[1:] < 0) and np.all(np.diff(r) <= 0)
    with pytest.raises(DomainError):
        log_entropy_balance(series, vels, dt=0.01, rule="midpoint")


def test_entropy_balance_flow_without_diffusion_splits_into_time_and_space_errors():
    # eps = 0 with a compressive flow: r(dt, h) = C dt + L(h), both parts first order
    alpha = np.array([0.3, -0.2, 0.1, 0.05, 0.0, 0.1])
    limits = []
    for n in (16, 32):
        dom = BoxDomain.unit(n)
        faces = build_basis(dom, 6).face_velocities(alpha)
        finals = []
        for dt in (1e-2, 5e-3, 2.5e-3):
            rho = ScalarField.constant(dom, 1.0)
            series, vels = [rho], []
            for _ in range(round(0.2 / dt)):
                rho, _ = continuity_step(rho, None, 0.0, dt, faces=faces)
                series.append(rho)
                vels.append(faces)
            finals.append(log_entropy_balance(series, vels, dt=dt)[-1])
        ratio = (finals[0] - finals[1]) / (finals[1] - finals[2])
        assert 1.8 <= ratio <= 2.2, ratio
        # Richardson limit dt -> 0 leaves the upwind numerical dissipation
        limits.append(2 * finals[2] - finals[1])
    assert limits[0] < limits[1] < 0
    assert 0.7 <= math.log2(limits[0] / limits[1]) <= 1.3, limits


def test_entropy_needs_positive_density():
    dom = BoxDomain.unit(4)
    with pytest.raises(DomainError):
        entropy(np.zeros(dom.shape), dom)
