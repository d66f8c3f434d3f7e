"""Bubble centre and radius ODE driven by the ambient velocity.

The right-hand side averages the velocity over the current ball, pulled back
to the reference ball through the dilation map, with a fixed interior lattice
as quadrature.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Union

import numpy as np

from .errors import CollapseError, DomainError, RadiusGuardError
from .geometry import BubbleState
from .grid import BoxDomain, VectorField, interpolate

log = logging.getLogger(__name__)

Velocity = Union[VectorField, Callable[[np.ndarray], np.ndarray]]


@lru_cache(maxsize=8)
def unit_ball_lattice(n: int = 20, match_second_moment: bool = True) -> np.ndarray:
    """Midpoints of an n^3 lattice on [-1, 1]^3 that fall inside the unit ball.

    With equal weights the lattice integrates constants exactly once the
    weights are normalised to the ball volume.  Optionally the points are
    rescaled radially so that the mean of |y|^2 equals the exact value 3/5,
    which makes linear dilation fields integrate exactly as well.
    """
    if n < 2:
        raise DomainError("lattice needs at least two points per axis")
    s = (np.arange(n) + 0.5) * (2.0 / n) - 1.0
    pts = np.stack(np.meshgrid(s, s, s, indexing="ij")).reshape(3, -1)
    pts = pts[:, np.sum(pts**2, axis=0) < 1.0]
    if match_second_moment:
        pts = pts * math.sqrt(0.6 / np.mean(np.sum(pts**2, axis=0)))
    pts.setflags(write=False)
    return pts


def _sample(u: Velocity, points: np.ndarray) -> np.ndarray:
    if isinstance(u, VectorField):
        return interpolate(u, points)
    return np.asarray(u(points), dtype=float)


def ode_rhs(t: float, X, u: Velocity, R0: float, x0, *, domain: BoxDomain | None = None,
            lattice: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Return (dx/dt, dR/dt) for state ``X = (x, R)``.

    Points of the moving ball outside ``domain`` contribute nothing.  When
    ``u`` is a grid field its own domain is used unless one is given.
    """
    x, R = np.asarray(X[0], dtype=float), float(X[1])
    if not R > 0:
        raise CollapseError(f"bubble radius {R} is not positive")
    if lattice is None:
        lattice = unit_ball_lattice()
    if domain is None and isinstance(u, VectorField):
        domain = u.domain
    offsets = R0 * lattice
    pts = x[:, None] + (R / R0) * offsets
    vel = _sample(u, pts)
    if domain is not None:
        vel = vel * domain.contains(pts)
    count = lattice.shape[1]
    # equal weights |B0| / count
    f_x = vel.sum(axis=1) / count
    f_R = 5.0 / (4.0 * math.pi * R0**4) * (4.0 * math.pi * R0**3 / 3.0) * np.sum(offsets * vel) / count
    return f_x, float(f_R)


def safe_time(R0: float, u_norm: float) -> float:
    """Longest horizon on which the radius provably stays above R0/2."""
    if u_norm < 0:
        raise DomainError("velocity norm must be nonnegative")
    if u_norm == 0:
        return math.inf
    return R0 * math.sqrt(math.pi * R0 / 5.0) / u_norm


@dataclass
class BubbleTrajectory:
    times: list[float] = field(default_factory=list)
    states: list[BubbleState] = field(default_factory=list)
    drives: list[tuple[np.ndarray, float]] = field(default_factory=list)

    def append(self, t: float, state: BubbleState, V, Lam: float) -> None:
        self.times.append(float(t))
        self.states.append(state)
        self.drives.append((np.asarray(V, dtype=float), float(Lam)))

    @property
    def radii(self) -> np.ndarray:
        return np.array([s.R_b for s in self.states])

    @property
    def centers(self) -> np.ndarray:
        return np.array([s.x_b for s in self.states])


def rk4_step(t: float, x, R: float, u_of_t: Callable[[float], Velocity], dt: float, R0: float, x0,
             **kw) -> tuple[np.ndarray, float]:
    """One classical Runge-Kutta step of the bubble ODE."""

    def rhs(tt, xx, RR):
        if not RR > 0:
            raise CollapseError(f"bubble radius {RR} is not positive at t = {tt}")
        return ode_rhs(tt, (xx, RR), u_of_t(tt), R0, x0, **kw)

    x = np.asarray(x, dtype=float)
    k1x, k1r = rhs(t, x, R)
    k2x, k2r = rhs(t + dt / 2, x + dt / 2 * k1x, R + dt / 2 * k1r)
    k3x, k3r = rhs(t + dt / 2, x + dt / 2 * k2x, R + dt / 2 * k2r)
    k4x, k4r = rhs(t + dt, x + dt * k3x, R + dt * k3r)
    x_new = x + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
    R_new = R + dt / 6 * (k1r + 2 * k2r + 2 * k3r + k4r)
    if not R_new > 0:
        raise CollapseError(f"bubble radius {R_new} is not positive at t = {t + dt}")
    return x_new, float(R_new)


def integrate_bubble(X0, u, t0: float, t1: float, dt: float, *, R0: float | None = None, x0=None,
                     domain: BoxDomain | None = None, lattice: np.ndarray | None = None) -> BubbleTrajectory:
    """Integrate the bubble ODE with RK4 from t0 to t1.

    ``u`` is either a fixed grid field or a callable ``t -> velocity`` whose
    value is a grid field or a callable on points.  The
    step count is ``ceil((t1 - t0)/dt)`` with the step shrunk to land on t1.
    Raises `RadiusGuardError` (trajectory attached) once R < R0/2.
    """
    if not t1 > t0:
        raise DomainError("t1 must exceed t0")
    if not dt > 0:
        raise DomainError("dt must be positive")
    x = np.asarray(X0[0], dtype=float)
    R = float(X0[1])
    R0 = R if R0 is None else float(R0)
    x0 = x.copy() if x0 is None else np.asarray(x0, dtype=float)
    if isinstance(u, VectorField):
        fixed = u
        u_of_t = lambda _t: fixed  # noqa: E731
    else:
        u_of_t = u
    kw = {"domain": domain, "lattice": lattice}
    nsteps = max(1, int(math.ceil((t1 - t0) / dt - 1e-9)))
    h = (t1 - t0) / nsteps
    traj = BubbleTrajectory()
    fx, fr = ode_rhs(t0, (x, R), u_of_t(t0), R0, x0, **kw)
    traj.append(t0, BubbleState(x, R), fx, 3 * fr / R)
    for m in range(nsteps):
        t = t0 + m * h
        x, R = rk4_step(t, x, R, u_of_t, h, R0, x0, **kw)
        t_new = t0 + (m + 1) * h
        fx, fr = ode_rhs(t_new, (x, R), u_of_t(t_new), R0, x0, **kw)
        traj.append(t_new, BubbleState(x, R), fx, 3 * fr / R)
        if R < R0 / 2:
            log.error("bubble radius %.6g fell below R0/2 = %.6g at t = %.6g", R, R0 / 2, t_new)
            raise RadiusGuardError(f"radius {R:.6g} below R0/2 at t = {t_new:.6g}", traj)
    return traj

