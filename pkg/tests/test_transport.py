import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bubblesim.errors import CollapseError, DomainError, RadiusGuardError
from bubblesim.grid import BoxDomain, VectorField, ball_indicator
from bubblesim.modes import ModeVector, mode_field, project_no_rotation
from bubblesim.transport import integrate_bubble, ode_rhs, safe_time, unit_ball_lattice

from oracles import exponential_radius

X0 = np.array([0.5, 0.5, 0.5])


def test_lattice_moments():
    pts = unit_ball_lattice(20)
    assert np.all(np.sum(pts**2, axis=0) < 1.0 + 1e-12)
    assert np.abs(pts.mean(axis=1)).max() <= 1e-14
    assert np.mean(np.sum(pts**2, axis=0)) == pytest.approx(0.6, rel=1e-13)
    raw = unit_ball_lattice(20, match_second_moment=False)
    assert raw.shape == pts.shape
    with pytest.raises(DomainError):
        unit_ball_lattice(1)


def test_rhs_zero_and_constant_fields():
    fx, fr = ode_rhs(0.0, (X0, 0.2), lambda p: np.zeros_like(p), 0.2, X0)
    assert np.all(fx == 0) and fr == 0
    c = np.array([0.3, -0.1, 0.2])
    fx, fr = ode_rhs(0.0, (X0, 0.2), lambda p: np.broadcast_to(c[:, None], p.shape), 0.2, X0)
    assert np.allclose(fx, c, atol=1e-3) and abs(fr) <= 1e-3


def test_rhs_on_grid_field_interpolates():
    dom = BoxDomain.unit(16)
    c = np.array([0.3, -0.1, 0.2])
    fx, fr = ode_rhs(0.0, (X0, 0.2), VectorField.constant(dom, c), 0.2, X0)
    assert np.allclose(fx, c, atol=1e-12) and abs(fr) <= 1e-12


def test_rhs_dilation_rate():
    Lam, R = 1.3, 0.22
    xb = np.array([0.45, 0.5, 0.55])
    u = lambda p: Lam / 3.0 * (p - xb.reshape((3,) + (1,) * (p.ndim - 1)))  # noqa: E731
    fx, fr = ode_rhs(0.0, (xb, R), u, 0.2, X0)
    assert fr == pytest.approx(Lam * R / 3.0, rel=1e-2)
    assert np.abs(fx).max() <= 1e-10


def test_rhs_clips_points_outside_domain():
    dom = BoxDomain.unit(16)
    c = np.array([1.0, 0.0, 0.0])
    u = lambda p: np.broadcast_to(c.reshape((3,) + (1,) * (p.ndim - 1)), p.shape)  # noqa: E731
    inside, _ = ode_rhs(0.0, (X0, 0.2), u, 0.2, X0, domain=dom)
    cut, _ = ode_rhs(0.0, (np.array([0.05, 0.5, 0.5]), 0.2), u, 0.2, X0, domain=dom)
    assert inside[0] == pytest.approx(1.0)
    assert 0.3 < cut[0] < 0.9


def test_rhs_rejects_collapsed_radius():
    with pytest.raises(CollapseError):
        ode_rhs(0.0, (X0, 0.0), lambda p: p, 0.2, X0)


def test_transport_matches_rotation_free_projection_moments():
    # for an exact ball the ODE drive equals the moments of the rotation-free projector
    dom = BoxDomain.unit(64)
    mv = ModeVector([0.2, -0.1, 0.05], [1.0, 2.0, -1.0], 0.9)
    u = mode_field(mv, X0, dom)
    R = 0.25
    fx, fr = ode_rhs(0.0, (X0, R), u, R, X0)
    proj = project_no_rotation(ball_indicator(dom, X0, R), u, R, X0)
    assert np.allclose(fx, proj.V, atol=2e-3)
    assert 3 * fr / R == pytest.approx(proj.Lambda, rel=2e-2)


def test_safe_time_examples():
    assert safe_time(1.0, 1.0) == pytest.approx(math.sqrt(math.pi / 5), rel=1e-14)
    assert safe_time(1.0, 1.0) == pytest.approx(0.79267, abs=1e-5)
    assert safe_time(4.0, 1.0) == pytest.approx(6.3413, abs=1e-4)
    assert safe_time(0.3, 0.0) == math.inf
    with pytest.raises(DomainError):
        safe_time(1.0, -1.0)


def test_integrate_zero_field_is_stationary():
    traj = integrate_bubble((X0, 0.2), lambda t: (lambda p: np.zeros_like(p)), 0.0, 0.5, 0.1)
    assert np.all(traj.centers == X0) and np.all(traj.radii == 0.2)
    assert len(traj.times) == 6


def test_integrate_constant_translation():
    c = np.array([0.1, -0.2, 0.15])
    dom = BoxDomain.unit(16)
    traj = integrate_bubble((np.array([0.4, 0.6, 0.4]), 0.1), VectorField.constant(dom, c), 0.0, 1.0, 0.05)
    assert np.allclose(traj.centers[-1], [0.4, 0.6, 0.4] + c, atol=1e-6)
    assert traj.radii[-1] == pytest.approx(0.1, abs=1e-6)


def _comoving(Lam):
    # u(t, x) = (Lam/3)(x - x_b) with the centre fixed at X0
    return lambda t: (lambda p: Lam / 3.0 * (p - X0.reshape((3,) + (1,) * (p.ndim - 1))))


def test_integrate_exponential_dilation():
    Lam, R0 = 0.9, 0.2
    traj = integrate_bubble((X0, R0), _comoving(Lam), 0.0, 1.0, 1e-3)
    assert traj.radii[-1] == pytest.approx(exponential_radius(R0, Lam, 1.0), rel=1e-3)


def test_rk4_fourth_order_on_dilation():
    Lam, R0 = 3.0, 0.2
    errs = []
    dts = [0.2, 0.1, 0.05]
    for dt in dts:
        traj = integrate_bubble((X0, R0), _comoving(Lam), 0.0, 1.0, dt)
        errs.append(abs(traj.radii[-1] - exponential_radius(R0, Lam, 1.0)))
    slopes = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert all(3.5 <= s <= 4.5 for s in slopes), slopes


def test_guard_raises_with_trajectory():
    with pytest.raises(RadiusGuardError) as info:
        integrate_bubble((X0, 0.2), _comoving(-6.0), 0.0, 1.0, 1e-2)
    traj = info.value.trajectory
    assert traj.radii[-1] < 0.1 and np.all(traj.radii[:-1] >= 0.1)


def test_integrate_argument_checks():
    f = _comoving(1.0)
    with pytest.raises(DomainError):
        integrate_bubble((X0, 0.2), f, 1.0, 0.5, 0.1)
    with pytest.raises(DomainError):
        integrate_bubble((X0, 0.2), f, 0.0, 1.0, 0.0)


def _random_field(seed, dom):
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal((3, 3, 3))
    x = dom.coords
    vals = np.zeros((3,) + dom.shape)
    for c in range(3):
        for k in range(3):
            for m in range(3):
                vals[c] += coef[c, k, m] * np.sin((k + 1) * np.pi * x[0]) * np.sin((m + 1) * np.pi * x[1]) \
                    * np.cos((k + m) * np.pi * x[2])
    return VectorField(dom, vals)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), R0=st.floats(0.1, 0.25))
def test_safe_time_keeps_radius_above_half(seed, R0):
    dom = BoxDomain.unit(12)
    u = _random_field(seed, dom)
    T = safe_time(R0, u.l2_norm())
    traj = integrate_bubble((X0, R0), u, 0.0, T, T / 40, domain=dom)
    assert traj.radii.min() >= R0 / 2


def test_rhs_locally_lipschitz():
    dom = BoxDomain.unit(16)
    u = _random_field(11, dom)

    def drive(x, R):
        fx, fr = ode_rhs(0.0, (x, R), u, 0.15, X0, domain=dom)
        return np.append(fx, fr)

    rng = np.random.default_rng(0)
    # crude sup bound on the velocity gradient of the trigonometric field
    grad_sup = 9 * np.pi * np.abs(u.values).max()
    bound = grad_sup + u.sup_norm() / 0.1**3
    ratios = []
    for _ in range(30):
        x1 = rng.uniform(0.35, 0.65, 3)
        x2 = x1 + rng.normal(0, 0.02, 3)
        R1, R2 = rng.uniform(0.1, 0.2, 2)
        dist = np.linalg.norm(np.append(x1 - x2, R1 - R2))
        ratios.append(np.linalg.norm(drive(x1, R1) - drive(x2, R2)) / dist / bound)
    assert max(ratios) <= 1.0
