"""Energy bookkeeping, inequality residuals and bubble compatibility monitors.

All quantities are midpoint-rule integrals on the same grid samples the
Galerkin assembly uses, so a report evaluated on the Galerkin velocity (with
its analytic gradient) reproduces the quadratic forms of the assembled
matrices exactly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .geometry import BubbleState, moments_from_indicator
from .grid import ScalarField, VectorField, jacobian
from .modes import penalization_integral
from .params import SimulationParams, artificial_potential, potential_energy_density


@dataclass(frozen=True)
class EnergyReport:
    kinetic: float
    potential: float
    potential_artificial: float
    surface: float
    viscous: float
    penalization: float
    diffusion: float
    work_gravity: float
    work_pressure_fluid: float
    work_pressure_bubble: float
    work_pressure_artificial: float
    work_surface: float

    @property
    def energy(self) -> float:
        """Kinetic plus artificial potential: the energy that the Galerkin balance conserves."""
        return self.kinetic + self.potential_artificial

    @property
    def dissipation(self) -> float:
        return self.viscous + self.penalization + self.diffusion

    @property
    def work(self) -> float:
        """External and pressure work kept on the right-hand side of the balance."""
        return self.work_gravity + self.work_pressure_fluid + self.work_pressure_bubble + self.work_surface

    @property
    def total_energy(self) -> float:
        """Kinetic plus full pressure potential plus surface energy."""
        return self.kinetic + self.potential + self.surface

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def energy_report(rho: ScalarField, u: VectorField, chi: ScalarField, bubble: BubbleState, p: SimulationParams, *,
                  jac: np.ndarray | None = None, anchor: tuple[float, np.ndarray] | None = None) -> EnergyReport:
    """Evaluate every energy, dissipation and work term.

    ``jac`` is the velocity gradient ``d u_a/d x_b``; finite differences are
    used when it is omitted.  ``anchor`` is the projector's (radius, centre),
    by default the moments of ``chi``.
    """
    dom = rho.domain
    h3 = dom.cell_volume
    r, c, v = rho.values, chi.values, u.values
    if jac is None:
        jac = jacobian(u)
    div = np.trace(jac)
    sym = 0.5 * (jac + jac.transpose(1, 0, 2, 3, 4))
    dev = sym - (div / 3.0) * np.eye(3)[:, :, None, None, None]
    mu = (1 - c) * p.mu_f + p.n_pen * c
    nu = (1 - c) * p.nu_f + c * p.nu_b
    speed2 = np.sum(v**2, axis=0)

    kinetic = 0.5 * float(np.sum(r * speed2)) * h3
    potential = float(np.sum(potential_energy_density(r, c, p))) * h3
    pot_art = float(np.sum(artificial_potential(r, p))) * h3
    surface = 2.0 * math.pi / 3.0 * p.kappa_b * bubble.R_b**2
    viscous = float(np.sum(2 * mu * np.sum(dev**2, axis=(0, 1)) + nu * div**2)) * h3

    if p.n_pen != 0 and np.any(c > 0):
        if anchor is None:
            anchor = moments_from_indicator(chi)
        pen = p.n_pen * penalization_integral(chi, u, anchor[0], anchor[1])
    else:
        pen = 0.0

    diffusion = diffusion_dissipation(rho, p)

    g = p.gravity.reshape(3, 1, 1, 1)
    work_g = -float(np.sum(r * np.sum(g * v, axis=0))) * h3
    work_f = float(np.sum((1 - c) * p.a_f * r**p.gamma_f * div)) * h3
    work_b = float(np.sum(c * p.a_b * r**p.gamma_b * div)) * h3
    work_a = float(np.sum(p.delta * r**p.beta * div)) * h3 if p.delta != 0 else 0.0
    work_s = float(np.sum(c * div)) * h3 * p.kappa_b / bubble.R_b

    return EnergyReport(kinetic, potential, pot_art, surface, viscous, pen, diffusion,
                        work_g, work_f, work_b, work_a, work_s)


def diffusion_dissipation(rho: ScalarField, p: SimulationParams) -> float:
    """delta eps beta int rho^(beta-2) |grad rho|^2 on cell faces.

    Each face contributes (rho_i^(beta-1) - rho_j^(beta-1)) (rho_i - rho_j) / h^2
    scaled by delta eps beta / (beta - 1), the mean-value form of the integrand.
    This is the rate at which the zero-flux Laplacian of the continuity solver
    dissipates the artificial potential, so the balance closes up to the
    time-stepping error.
    """
    if p.delta == 0 or p.epsilon == 0:
        return 0.0
    dom = rho.domain
    r = rho.values
    q = r ** (p.beta - 1)
    total = 0.0
    for a in range(3):
        total += float(np.sum(np.diff(q, axis=a) * np.diff(r, axis=a))) / dom.spacing[a] ** 2
    return p.delta * p.epsilon * p.beta / (p.beta - 1) * total * dom.cell_volume


def _accumulate(values: np.ndarray, dt: float, rule: str) -> np.ndarray:
    out = np.zeros_like(values)
    if values.size < 2:
        return out
    if rule == "right":
        inc = dt * values[1:]
    elif rule == "trapezoid":
        inc = 0.5 * dt * (values[1:] + values[:-1])
    elif rule == "left":
        inc = dt * values[:-1]
    else:
        raise ValueError(f"unknown quadrature rule {rule!r}")
    out[1:] = np.cumsum(inc)
    return out


def energy_inequality_residual(series, dt: float, rule: str = "right") -> np.ndarray:
    """r(t) = E(t) + int (dissipation) - int (work) - E(0) for a uniform step.

    ``rule`` picks the time quadrature; ``'right'`` matches the implicit
    evaluation of dissipation and work in the semi-implicit momentum step.
    Negative values mean the inequality holds.
    """
    E = np.array([s.energy for s in series])
    D = np.array([s.dissipation for s in series])
    W = np.array([s.work for s in series])
    return E - E[0] + _accumulate(D, dt, rule) - _accumulate(W, dt, rule)


def total_energy_residual(series, dt: float, rule: str = "right") -> np.ndarray:
    """Balance with pressure work absorbed into the potential and the closed-form surface energy."""
    E = np.array([s.total_energy for s in series])
    D = np.array([s.dissipation for s in series])
    W = np.array([s.work_gravity for s in series])
    return E - E[0] + _accumulate(D, dt, rule) - _accumulate(W, dt, rule)


@dataclass(frozen=True)
class CompatibilityReport:
    density_deviation: float
    velocity_deviation: float
    penalization_integral: float
    bubble_speed_integral: float
    distance_margin: float
    sigma: float

    @property
    def margin_ok(self) -> bool:
        return self.distance_margin >= self.sigma

    def as_dict(self) -> dict:
        d = asdict(self)
        d["margin_ok"] = self.margin_ok
        return d


def compatibility_checks(rho: ScalarField, u: VectorField, chi: ScalarField, bubble: BubbleState,
                         p: SimulationParams, *, R0: float, sigma: float = 0.0,
                         anchor: tuple[float, np.ndarray] | None = None) -> CompatibilityReport:
    """Deviation of the state from the bubble constraints.

    Density: relative L2(chi) distance to (R0/R_b)^3 rho_b0.  Velocity:
    relative L2(chi) distance of u from its mode projection.  Margin: distance
    of the ball to the nearest wall.
    """
    dom = rho.domain
    h3 = dom.cell_volume
    c = chi.values
    target = (R0 / bubble.R_b) ** 3 * p.rho_b0
    mass = float(np.sum(c)) * h3
    if mass > 0:
        dens = math.sqrt(float(np.sum(c * (rho.values - target) ** 2)) * h3 / (mass * target**2))
        if anchor is None:
            anchor = moments_from_indicator(chi)
        pen = penalization_integral(chi, u, anchor[0], anchor[1])
        speed = float(np.sum(c * np.sum(u.values**2, axis=0))) * h3
        vel = math.sqrt(pen / speed) if speed > 0 else 0.0
    else:
        dens = vel = pen = speed = 0.0
    margin = dom.distance_to_boundary(bubble.x_b) - bubble.R_b
    return CompatibilityReport(dens, vel, pen, speed, margin, sigma)
