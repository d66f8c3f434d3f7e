"""Physical constants, barotropic pressure laws and parameter validation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class SimulationParams:
    mu_f: float = 0.1
    nu_f: float = 0.0
    nu_b: float = 0.0
    a_f: float = 1.0
    gamma_f: float = 1.6
    a_b: float = 1.0
    gamma_b: float = 1.6
    delta: float = 1e-3
    beta: float = 8.0
    epsilon: float = 1e-2
    n_pen: float = 1e2
    kappa_b: float = 0.0
    g: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rho_b0: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "g", tuple(float(c) for c in self.g))
        if len(self.g) != 3:
            raise DomainError("gravity must have three components")

    @property
    def gravity(self) -> np.ndarray:
        return np.asarray(self.g, dtype=float)

    @property
    def max_exponent(self) -> float:
        """Largest pressure exponent in play (the artificial one only counts when active)."""
        exps = [self.gamma_f, self.gamma_b]
        if self.delta > 0:
            exps.append(self.beta)
        return max(exps)

    def replace(self, **changes) -> "SimulationParams":
        data = asdict(self)
        data.update(changes)
        return SimulationParams(**data)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["g"] = list(self.g)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "SimulationParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise DomainError(f"unknown parameter keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    message: str = ""


@dataclass
class ValidationReport:
    checks: list[Check] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def add(self, name: str, passed: bool, message: str = "") -> None:
        self.checks.append(Check(name, bool(passed), message))

    def summary(self) -> str:
        if self.ok:
            return "all parameter checks passed"
        return "; ".join(f"{c.name}: {c.message}" for c in self.failures)


def validate_params(p: SimulationParams) -> ValidationReport:
    """Check every constraint on the parameters and report each outcome."""
    rep = ValidationReport()

    def positive(name, value):
        ok = math.isfinite(value) and value > 0
        rep.add(name, ok, "" if ok else f"{name} = {value} must be > 0")

    def nonneg(name, value):
        ok = math.isfinite(value) and value >= 0
        rep.add(name, ok, "" if ok else f"{name} = {value} must be >= 0")

    positive("mu_f", p.mu_f)
    nonneg("nu_f", p.nu_f)
    nonneg("nu_b", p.nu_b)
    positive("a_f", p.a_f)
    positive("a_b", p.a_b)
    for name in ("gamma_f", "gamma_b"):
        value = getattr(p, name)
        ok = math.isfinite(value) and value > 1.5
        rep.add(name, ok, "" if ok else f"{name} <= 3/2 (got {value})")
    nonneg("delta", p.delta)
    if p.delta > 0:
        bound = max(8.0, 2 * p.gamma_f, 2 * p.gamma_b)
        ok = math.isfinite(p.beta) and p.beta >= bound
        rep.add("beta", ok, "" if ok else f"beta < max(8, 2 gamma_f, 2 gamma_b) = {bound} (got {p.beta})")
    else:
        rep.add("beta", True, "inactive while delta = 0")
    nonneg("epsilon", p.epsilon)
    nonneg("n_pen", p.n_pen)
    nonneg("kappa_b", p.kappa_b)
    positive("rho_b0", p.rho_b0)
    ok = all(math.isfinite(c) for c in p.g)
    rep.add("g", ok, "" if ok else "gravity must be finite")
    return rep


def _check_inputs(rho, chi):
    rho = np.asarray(rho, dtype=float)
    chi = np.asarray(chi, dtype=float)
    if np.any(rho < 0):
        raise DomainError("density must be nonnegative")
    if np.any(chi < 0) or np.any(chi > 1):
        raise DomainError("bubble fraction must lie in [0, 1]")
    return rho, chi


def pressure(rho, chi, p: SimulationParams):
    """Barotropic pressure blended between fluid and bubble laws, plus the artificial term."""
    rho, chi = _check_inputs(rho, chi)
    out = (1 - chi) * p.a_f * rho**p.gamma_f + chi * p.a_b * rho**p.gamma_b
    if p.delta != 0:
        out = out + p.delta * rho**p.beta
    return out[()] if out.ndim == 0 else out


def potential_energy_density(rho, chi, p: SimulationParams):
    """Pressure potential whose Legendre-type identity reproduces `pressure` in each pure phase."""
    rho, chi = _check_inputs(rho, chi)
    if p.gamma_f == 1 or p.gamma_b == 1 or (p.delta != 0 and p.beta == 1):
        raise DomainError("pressure exponents must differ from 1")
    out = (1 - chi) * p.a_f * rho**p.gamma_f / (p.gamma_f - 1) + chi * p.a_b * rho**p.gamma_b / (p.gamma_b - 1)
    if p.delta != 0:
        out = out + p.delta * rho**p.beta / (p.beta - 1)
    return out[()] if out.ndim == 0 else out


def artificial_potential(rho, p: SimulationParams):
    """Only the artificial-pressure part of the potential."""
    rho = np.asarray(rho, dtype=float)
    if p.delta == 0:
        return np.zeros_like(rho)
    return p.delta * rho**p.beta / (p.beta - 1)
