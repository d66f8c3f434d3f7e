"""Coupled time stepping, run persistence and parameter sweeps."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import optimize

from .continuity import ADVECTION_SCHEMES, continuity_step, entropy, face_divergence, step_envelope_factors
from .energy import compatibility_checks, energy_report
from .errors import BubbleSimError, CollapseError, DomainError, SolverError
from .galerkin import (
    GalerkinState,
    assemble_forcing,
    assemble_mass,
    assemble_stiffness,
    build_basis,
    continuation_constants,
    momentum_step,
    projector_anchor,
)
from .geometry import BubbleState, bubble_inertia
from .grid import BoxDomain, ScalarField, VectorField, ball_indicator, gradient, write_field
from .modes import ModeVector, eval_mode
from .params import SimulationParams, pressure, validate_params
from .transport import rk4_step, safe_time, unit_ball_lattice

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ENVELOPE_RTOL = 1e-12


class AbortCause(Enum):
    VALIDATION = ("validation", 2)
    HORIZON = ("unsafe_horizon", 2)
    COLLAPSE = ("collapse", 3)
    COLLISION = ("collision", 3)
    NEGATIVE_DENSITY = ("negative_density", 3)
    SOLVER = ("solver_failure", 4)
    NONFINITE = ("non_finite_state", 4)

    @property
    def label(self) -> str:
        return self.value[0]

    @property
    def exit_code(self) -> int:
        return self.value[1]


class RunAbort(BubbleSimError):
    def __init__(self, cause: AbortCause, message: str):
        super().__init__(message)
        self.cause = cause


@dataclass
class RunConfig:
    params: SimulationParams
    domain: BoxDomain
    N: int
    x0: tuple[float, float, float]
    R0: float
    dt: float
    horizon: float
    rho_profile: dict = field(default_factory=lambda: {"type": "uniform", "value": 1.0})
    velocity: dict = field(default_factory=lambda: {"type": "zero"})
    sigma: float = 0.05
    picard_iterations: int = 1
    picard_tol: float = 1e-10
    output_every: int = 1
    field_every: int = 0
    seed: int = 0
    subsamples: int = 4
    lattice: int = 20
    max_advective_number: float = 0.5
    advection: str = "exponential"
    allow_unsafe_horizon: bool = False

    @property
    def steps(self) -> int:
        return max(1, int(round(self.horizon / self.dt)))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "params": self.params.to_dict(),
            "domain": self.domain.to_dict(),
            "N": self.N,
            "x0": list(self.x0),
            "R0": self.R0,
            "dt": self.dt,
            "horizon": self.horizon,
            "rho_profile": self.rho_profile,
            "velocity": self.velocity,
            "sigma": self.sigma,
            "picard_iterations": self.picard_iterations,
            "picard_tol": self.picard_tol,
            "output_every": self.output_every,
            "field_every": self.field_every,
            "seed": self.seed,
            "subsamples": self.subsamples,
            "lattice": self.lattice,
            "max_advective_number": self.max_advective_number,
            "advection": self.advection,
            "allow_unsafe_horizon": self.allow_unsafe_horizon,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = copy.deepcopy(data)
        version = data.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise DomainError(f"unsupported config schema version {version}")
        params = SimulationParams.from_dict(data.pop("params", {}))
        domain = BoxDomain.from_dict(data.pop("domain"))
        data["x0"] = tuple(float(v) for v in data["x0"])
        known = set(cls.__dataclass_fields__) - {"params", "domain"}
        unknown = set(data) - known
        if unknown:
            raise DomainError(f"unknown config keys: {sorted(unknown)}")
        return cls(params=params, domain=domain, **data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_changes(self, **changes) -> "RunConfig":
        data = self.to_dict()
        params = data["params"]
        for key, value in changes.items():
            if key in params:
                params[key] = value
            elif key == "h":
                # grid spacing on a uniform axis set: resolution from the box length
                data["domain"]["shape"] = [max(4, int(round(L / value))) for L in self.domain.lengths]
            else:
                data[key] = value
        return RunConfig.from_dict(data)


# ---------------------------------------------------------------- initial data


def _blend_pressure(rho, chi, p: SimulationParams, R0: float) -> float:
    return float(pressure(rho, chi, p)) + chi * p.kappa_b / R0


def initial_density(cfg: RunConfig, chi0: ScalarField) -> ScalarField:
    """Initial density equal to rho_b0 inside the bubble.

    ``uniform``: the fluid carries ``value`` and partial cells blend linearly.
    ``pressure_balanced``: the fluid density is chosen so that pressure plus the
    interior surface-tension load is the same constant everywhere, cell by cell.
    """
    p = cfg.params
    prof = cfg.rho_profile
    kind = prof.get("type", "uniform")
    c = chi0.values
    if kind == "uniform":
        rho_f = float(prof.get("value", 1.0))
        return ScalarField(chi0.domain, (1 - c) * rho_f + c * p.rho_b0)
    if kind == "gaussian":
        # smooth fluid perturbation: value + amplitude exp(-|x - center|^2 / width^2)
        centre = np.asarray(prof["center"], dtype=float).reshape(3, 1, 1, 1)
        r2 = np.sum((chi0.domain.coords - centre) ** 2, axis=0)
        fluid = float(prof.get("value", 1.0)) + float(prof["amplitude"]) * np.exp(-r2 / float(prof["width"]) ** 2)
        if np.min(fluid) <= 0:
            raise DomainError("gaussian density profile is not positive")
        return ScalarField(chi0.domain, (1 - c) * fluid + c * p.rho_b0)
    if kind == "pressure_balanced":
        target = _blend_pressure(p.rho_b0, 1.0, p, cfg.R0)
        out = np.empty_like(c)
        cache: dict[float, float] = {}
        for idx, frac in np.ndenumerate(c):
            frac = float(frac)
            if frac not in cache:
                if frac == 1.0:
                    cache[frac] = p.rho_b0
                else:
                    fun = lambda r, fr=frac: _blend_pressure(r, fr, p, cfg.R0) - target  # noqa: E731
                    hi = max(1.0, p.rho_b0)
                    while fun(hi) < 0:
                        hi *= 2
                    cache[frac] = optimize.brentq(fun, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
            out[idx] = cache[frac]
        return ScalarField(chi0.domain, out)
    raise DomainError(f"unknown density profile {kind!r}")


def _taper(r: np.ndarray, inner: float, width: float) -> np.ndarray:
    s = np.clip((r - inner) / width, 0.0, 1.0)
    return np.cos(0.5 * np.pi * s) ** 2


def initial_coefficients(cfg: RunConfig, basis) -> np.ndarray:
    """Galerkin coefficients of the initial velocity (L2 projection onto the span)."""
    spec = cfg.velocity
    kind = spec.get("type", "zero")
    dom = cfg.domain
    if kind == "zero":
        return np.zeros(basis.N)
    if kind == "coefficients":
        alpha = np.asarray(spec["alpha"], dtype=float)
        if alpha.size != basis.N:
            raise DomainError(f"expected {basis.N} coefficients, got {alpha.size}")
        return alpha
    if kind == "random":
        rng = np.random.default_rng(cfg.seed)
        alpha = rng.standard_normal(basis.N)
        decay = np.sum(basis.wavenumbers[basis.scalar_index] ** 2, axis=1) ** (-float(spec.get("decay", 1.0)))
        alpha *= decay
        u = basis.velocity(alpha)
        rms = u.l2_norm() / math.sqrt(dom.volume)
        return alpha * float(spec.get("amplitude", 0.1)) / rms
    if kind == "mode":
        mv = ModeVector(spec.get("V", [0, 0, 0]), spec.get("omega", [0, 0, 0]), spec.get("Lambda", 0.0))
        x0 = np.asarray(cfg.x0)
        width = float(spec.get("width", cfg.R0))
        pts = dom.coords
        r = np.sqrt(np.sum((pts - x0.reshape(3, 1, 1, 1)) ** 2, axis=0))
        u = eval_mode(mv, x0, pts) * _taper(r, cfg.R0, width)
        w = u.reshape(3, -1) * dom.cell_volume
        return np.array([basis.phi[s] @ w[d] for s, d in zip(basis.scalar_index, basis.component)])
    raise DomainError(f"unknown velocity spec {kind!r}")


# ---------------------------------------------------------------- validation


def validate_config(cfg: RunConfig) -> list[str]:
    problems = [f"{c.name}: {c.message}" for c in validate_params(cfg.params).failures]
    if not cfg.R0 > 0:
        problems.append("R0 must be positive")
    if not cfg.dt > 0 or not cfg.horizon > 0:
        problems.append("dt and horizon must be positive")
    if cfg.N < 1:
        problems.append("basis size must be at least 1")
    if cfg.sigma < 0:
        problems.append("sigma must be nonnegative")
    if cfg.picard_iterations < 1:
        problems.append("picard_iterations must be at least 1")
    if cfg.advection not in ADVECTION_SCHEMES:
        problems.append(f"advection must be one of {ADVECTION_SCHEMES}")
    if cfg.R0 > 0:
        margin = cfg.domain.distance_to_boundary(cfg.x0) - cfg.R0
        if margin <= 2 * cfg.sigma:
            problems.append(f"initial wall distance {margin:.4g} does not exceed 2 sigma = {2 * cfg.sigma:.4g}")
    return problems


# ---------------------------------------------------------------- output helpers


class _CsvSink:
    def __init__(self, path: Path, header: list[str]):
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(header)

    def row(self, values) -> None:
        self._w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in values])

    def close(self) -> None:
        self._fh.close()


TRAJECTORY_HEADER = ["t", "x_b", "y_b", "z_b", "R_b", "rho_b", "m_b", "J", "K"]
ENERGY_EXTRA = ["energy", "dissipation", "work", "residual", "residual_total"]
COMPAT_HEADER = ["step", "t", "density_deviation", "velocity_deviation", "penalization_integral",
                 "bubble_speed_integral", "distance_margin", "sigma"]
CONTINUITY_HEADER = ["step", "t", "mass", "rho_min", "rho_max", "lower_bound", "upper_bound",
                     "lower_bound_continuous", "within_bounds",
                     "advective_number", "substeps", "divu_max", "entropy_residual", "solve_residual", "skew_defect"]


@dataclass
class RunResult:
    out_dir: Path
    exit_code: int
    cause: str | None
    summary: dict


def _abort_file(out_dir: Path, cause: AbortCause, message: str, step: int, t: float) -> None:
    (out_dir / "abort.json").write_text(json.dumps({
        "cause": cause.label, "exit_code": cause.exit_code, "step": step, "t": t, "message": message,
    }, indent=2))


# ---------------------------------------------------------------- the run


def run(cfg: RunConfig, out_dir) -> RunResult:
    """Run the coupled simulation and write its outputs into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    for stale in ("abort.json", "summary.json"):
        (out_dir / stale).unlink(missing_ok=True)
    sim = _Simulation(cfg, out_dir)
    try:
        sim.setup()
        sim.advance()
        summary = sim.finish(None, "")
        return RunResult(out_dir, 0, None, summary)
    except RunAbort as exc:
        log.error("run aborted (%s): %s", exc.cause.label, exc)
        _abort_file(out_dir, exc.cause, str(exc), sim.step, sim.t)
        summary = sim.finish(exc.cause, str(exc))
        return RunResult(out_dir, exc.cause.exit_code, exc.cause.label, summary)
    except (BubbleSimError, np.linalg.LinAlgError, FloatingPointError) as exc:
        # anything the step guards did not classify is a numerical failure
        cause = AbortCause.SOLVER
        log.error("run failed (%s): %s", cause.label, exc)
        _abort_file(out_dir, cause, str(exc), sim.step, sim.t)
        summary = sim.finish(cause, str(exc))
        return RunResult(out_dir, cause.exit_code, cause.label, summary)
    finally:
        sim.close()


class _Simulation:
    def __init__(self, cfg: RunConfig, out_dir: Path):
        self.cfg = cfg
        self.out = out_dir
        self.step = 0
        self.t = 0.0
        self.sinks: dict[str, _CsvSink] = {}
        self.metrics: dict = {}
        self.constants = None

    # -- setup
    def setup(self) -> None:
        cfg = self.cfg
        problems = validate_config(cfg)
        if problems:
            raise RunAbort(AbortCause.VALIDATION, "; ".join(problems))
        p, dom = cfg.params, cfg.domain
        try:
            self.basis = build_basis(dom, cfg.N)
        except DomainError as exc:
            raise RunAbort(AbortCause.VALIDATION, str(exc)) from exc
        self.lattice = unit_ball_lattice(cfg.lattice)
        self.x = np.asarray(cfg.x0, dtype=float)
        self.R = float(cfg.R0)
        self.chi = ball_indicator(dom, self.x, self.R, cfg.subsamples)
        try:
            self.rho = initial_density(cfg, self.chi)
            alpha = initial_coefficients(cfg, self.basis)
        except DomainError as exc:
            raise RunAbort(AbortCause.VALIDATION, str(exc)) from exc
        self.state = GalerkinState(alpha, 0.0)
        u0 = self.basis.velocity(alpha)
        dist0 = dom.distance_to_boundary(self.x) - self.R
        self.constants = continuation_constants(p, self.rho, u0, self.basis, cfg.R0, dist0, cfg.sigma,
                                                horizon=cfg.horizon)
        self.safe_time0 = safe_time(cfg.R0, u0.l2_norm())
        if cfg.horizon > self.constants.safe_horizon and not cfg.allow_unsafe_horizon:
            raise RunAbort(AbortCause.HORIZON,
                           f"horizon {cfg.horizon:.4g} exceeds min(T1, T2) = {self.constants.safe_horizon:.4g}; "
                           "set allow_unsafe_horizon to override")
        if cfg.horizon > self.constants.safe_horizon:
            log.warning("horizon %.4g exceeds the continuation bound %.4g (override active)",
                        cfg.horizon, self.constants.safe_horizon)
        self.sinks["trajectory"] = _CsvSink(self.out / "trajectory.csv", TRAJECTORY_HEADER)
        from .energy import EnergyReport

        self.sinks["energy"] = _CsvSink(self.out / "energy.csv", ["step", "t"] + EnergyReport.field_names() + ENERGY_EXTRA)
        self.sinks["compatibility"] = _CsvSink(self.out / "compatibility.csv", COMPAT_HEADER)
        self.sinks["continuity"] = _CsvSink(self.out / "continuity.csv", CONTINUITY_HEADER)
        self.sinks["coefficients"] = _CsvSink(self.out / "coefficients.csv",
                                              ["t"] + [f"alpha_{i + 1}" for i in range(self.basis.N)])
        if cfg.field_every:
            (self.out / "fields").mkdir(exist_ok=True)

        rvals = self.rho.values
        self.rho_lo0, self.rho_hi0 = float(rvals.min()), float(rvals.max())
        self.mass0 = float(np.sum(rvals)) * dom.cell_volume
        self.div_int = 0.0
        self.env_lo, self.env_hi = self.rho_lo0, self.rho_hi0
        self.entropy0 = entropy(rvals, dom) if rvals.min() > 0 else math.nan
        self.entropy_work = 0.0
        self.res_acc = 0.0
        self.res_total_acc = 0.0
        self.pen_time = 0.0
        self.speed_time = 0.0
        m = self.metrics
        m.update(max_positive_residual=0.0, min_residual=0.0, max_mass_error=0.0, max_principle_ok=True,
                 max_principle_violation=0.0, min_radius=self.R, min_margin=dist0, max_density_deviation=0.0,
                 max_advective_number=0.0, max_skew_defect=0.0, max_entropy_residual=0.0, min_entropy_residual=0.0)
        self._observe(first=True, divu=None, crep=None, skew=0.0)

    # -- one coupled step
    def _coupled_step(self):
        cfg, p, dom, basis = self.cfg, self.cfg.params, self.cfg.domain, self.basis
        dt = cfg.dt
        alpha_drive = self.state.alpha
        result = None
        for k in range(cfg.picard_iterations):
            drive = alpha_drive
            velocity = lambda pts, a=drive: basis.evaluate(a, pts)  # noqa: E731
            try:
                x_new, R_new = rk4_step(self.t, self.x, self.R, lambda _t: velocity, dt, cfg.R0, cfg.x0,
                                        domain=dom, lattice=self.lattice)
            except CollapseError as exc:
                raise RunAbort(AbortCause.COLLAPSE, str(exc)) from exc
            if not np.all(np.isfinite(x_new)) or not math.isfinite(R_new):
                raise RunAbort(AbortCause.NONFINITE, "bubble state became non-finite")
            if R_new < cfg.R0 / 2:
                raise RunAbort(AbortCause.COLLAPSE, f"radius {R_new:.6g} fell below R0/2 = {cfg.R0 / 2:.6g}")
            margin = dom.distance_to_boundary(x_new) - R_new
            if margin < cfg.sigma:
                raise RunAbort(AbortCause.COLLISION, f"wall distance {margin:.6g} fell below sigma = {cfg.sigma:.6g}")
            bubble = BubbleState(x_new, R_new)
            chi = ball_indicator(dom, x_new, R_new, cfg.subsamples)
            faces = basis.face_velocities(drive)
            try:
                rho, crep = continuity_step(self.rho, None, p.epsilon, dt, faces=faces,
                                            max_advective_number=cfg.max_advective_number,
                                            scheme=cfg.advection)
            except SolverError as exc:
                raise RunAbort(AbortCause.SOLVER, str(exc)) from exc
            if crep.negative:
                raise RunAbort(AbortCause.NEGATIVE_DENSITY, f"density minimum {crep.rho_min:.3e} is negative")
            u_drive = basis.velocity(drive)
            grad_rho = gradient(rho)
            anchor = projector_anchor(chi)
            parts = assemble_stiffness(rho, u_drive, chi, grad_rho, bubble, p, basis, anchor=anchor, parts=True)
            A = assemble_mass(rho, basis)
            F = assemble_forcing(rho, chi, R_new, p, basis)
            try:
                new_state = momentum_step(self.state, A, parts.total, F, dt)
            except SolverError as exc:
                raise RunAbort(AbortCause.SOLVER, str(exc)) from exc
            result = (x_new, R_new, bubble, chi, rho, crep, new_state, faces, grad_rho, anchor, parts)
            change = np.linalg.norm(new_state.alpha - alpha_drive)
            if change <= cfg.picard_tol * max(np.linalg.norm(new_state.alpha), 1e-300):
                break
            alpha_drive = new_state.alpha
        return result

    def advance(self) -> None:
        cfg = self.cfg
        for m in range(cfg.steps):
            old_rho = self.rho.values
            x, R, bubble, chi, rho, crep, state, faces, grad_rho, anchor, parts = self._coupled_step()
            self.entropy_work += cfg.dt * float(np.sum(old_rho * face_divergence(cfg.domain, faces))) * cfg.domain.cell_volume
            self.x, self.R, self.chi, self.rho, self.state = x, R, chi, rho, state
            self.grad_rho, self.anchor = grad_rho, anchor
            self.step = m + 1
            self.t = (m + 1) * cfg.dt
            state.t = self.t
            skew = float(np.linalg.norm(parts.skew_defect, 2)) if parts.skew_defect is not None else 0.0
            self._observe(first=False, divu=crep.divu_max, crep=crep, skew=skew)

    # -- diagnostics and output
    def _observe(self, first: bool, divu, crep, skew: float) -> None:
        cfg, p, dom = self.cfg, self.cfg.params, self.cfg.domain
        bubble = BubbleState(self.x, self.R)
        u = self.basis.velocity(self.state.alpha)
        jac = self.basis.jacobian(self.state.alpha)
        if first:
            self.grad_rho = gradient(self.rho)
            self.anchor = projector_anchor(self.chi)
        rep = energy_report(self.rho, u, self.chi, bubble, p, jac=jac, anchor=self.anchor)
        comp = compatibility_checks(self.rho, u, self.chi, bubble, p, R0=cfg.R0, sigma=cfg.sigma, anchor=self.anchor)
        if not all(math.isfinite(v) for v in rep.as_dict().values()):
            raise RunAbort(AbortCause.NONFINITE, "energy diagnostics became non-finite")
        dt = cfg.dt
        m = self.metrics
        if first:
            self.E0 = rep.energy
            self.Etot0 = rep.total_energy
            self.speed0 = comp.bubble_speed_integral
            residual = residual_total = 0.0
        else:
            self.res_acc += dt * (rep.dissipation - rep.work)
            self.res_total_acc += dt * (rep.dissipation - rep.work_gravity)
            residual = rep.energy - self.E0 + self.res_acc
            residual_total = rep.total_energy - self.Etot0 + self.res_total_acc
            self.pen_time += dt * comp.penalization_integral
            self.speed_time += dt * comp.bubble_speed_integral
            m["max_positive_residual"] = max(m["max_positive_residual"], residual)
            m["min_residual"] = min(m["min_residual"], residual)
        self.residual = residual
        m["min_radius"] = min(m["min_radius"], self.R)
        m["min_margin"] = min(m["min_margin"], comp.distance_margin)
        m["max_density_deviation"] = max(m["max_density_deviation"], comp.density_deviation)
        m["max_skew_defect"] = max(m["max_skew_defect"], skew)

        # density envelope and entropy balance
        # divu is the sup of the face divergence that advanced the last step
        if divu is not None:
            self.div_int += dt * divu
            f_lo, f_hi = step_envelope_factors(divu, dt, crep.substeps, crep.scheme)
            self.env_lo *= f_lo
            self.env_hi *= f_hi
        lower, upper = self.env_lo, self.env_hi
        lower_cont = self.rho_lo0 * math.exp(-self.div_int)
        rvals = self.rho.values
        rmin, rmax = float(rvals.min()), float(rvals.max())
        violation = max(lower - rmin, rmax - upper, 0.0) / upper
        within = violation <= ENVELOPE_RTOL
        if not within:
            m["max_principle_ok"] = False
        m["max_principle_violation"] = max(m["max_principle_violation"], violation)
        m["max_continuous_lower_gap"] = max(m.get("max_continuous_lower_gap", 0.0), (lower_cont - rmin) / upper)
        mass = float(np.sum(rvals)) * dom.cell_volume
        m["max_mass_error"] = max(m["max_mass_error"], abs(mass - self.mass0) / self.mass0)
        if rmin > 0 and math.isfinite(self.entropy0):
            ent_res = entropy(rvals, dom) - self.entropy0 + self.entropy_work
        else:
            ent_res = math.nan
        self.entropy_residual = ent_res
        if math.isfinite(ent_res):
            m["max_entropy_residual"] = max(m["max_entropy_residual"], ent_res)
            m["min_entropy_residual"] = min(m["min_entropy_residual"], ent_res)
        if crep is not None:
            m["max_advective_number"] = max(m["max_advective_number"], crep.advective_number)

        self.last_compat = comp
        self.last_report = rep
        if self.step % cfg.output_every and self.step != cfg.steps:
            return
        t = self.t
        inert = bubble_inertia(bubble, p.rho_b0, cfg.R0)
        self.sinks["trajectory"].row([t, *self.x, self.R, inert.rho_b, inert.m_b, inert.J, inert.K])
        vals = rep.as_dict()
        self.sinks["energy"].row([self.step, t, *vals.values(), rep.energy, rep.dissipation, rep.work,
                                  residual, residual_total])
        self.sinks["compatibility"].row([self.step, t, comp.density_deviation, comp.velocity_deviation,
                                         comp.penalization_integral, comp.bubble_speed_integral,
                                         comp.distance_margin, comp.sigma])
        self.sinks["continuity"].row([
            self.step, t, mass, rmin, rmax, lower, upper, lower_cont, int(within),
            crep.advective_number if crep else 0.0, crep.substeps if crep else 0,
            divu if divu is not None else 0.0, ent_res, crep.solve_residual if crep else 0.0, skew,
        ])
        self.sinks["coefficients"].row([t, *self.state.alpha])
        if cfg.field_every and self.step % cfg.field_every == 0:
            write_field(self.out / "fields" / f"rho_{self.step:06d}", self.rho, "rho", t)

    def finish(self, cause: AbortCause | None, message: str) -> dict:
        cfg = self.cfg
        m = dict(self.metrics)
        if hasattr(self, "E0"):
            m["E0"] = self.E0
            m["relative_max_positive_residual"] = m["max_positive_residual"] / self.E0 if self.E0 > 0 else math.nan
            m["penalization_time_integral"] = self.pen_time
            norm = self.speed0 * self.t if self.speed0 > 0 else self.speed_time
            m["velocity_deviation_rms"] = math.sqrt(self.pen_time / norm) if norm > 0 else 0.0
            m["final_density_deviation"] = self.last_compat.density_deviation
            m["final_velocity_deviation"] = self.last_compat.velocity_deviation
            m["final_entropy_residual"] = self.entropy_residual
            m["max_abs_entropy_residual"] = max(abs(m["max_entropy_residual"]), abs(m["min_entropy_residual"]))
            m["final_residual"] = self.residual
            m["final_kinetic"] = self.last_report.kinetic
            m["drift"] = float(np.linalg.norm(self.x - np.asarray(cfg.x0)))
            m["final_radius"] = self.R
            m["final_center"] = list(map(float, self.x))
        summary = {
            "status": "ok" if cause is None else "aborted",
            "exit_code": 0 if cause is None else cause.exit_code,
            "cause": None if cause is None else cause.label,
            "message": message,
            "steps_completed": self.step,
            "t_final": self.t,
            "metrics": m,
        }
        if self.constants is not None:
            c = self.constants
            summary["constants"] = {"Q": c.Q, "T_seed": c.T_seed, "T1": c.T1, "T2": c.T2, "K": c.K,
                                    "c_p": c.c_p, "c_N": c.c_N, "safe_time": self.safe_time0}
        (self.out / "summary.json").write_text(json.dumps(summary, indent=2, default=_json_default))
        return summary

    def close(self) -> None:
        for sink in self.sinks.values():
            sink.close()


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj)}")


# ---------------------------------------------------------------- constants


def compute_constants(cfg: RunConfig) -> dict:
    """Continuation constants and the transport safe time for a configuration."""
    problems = validate_config(cfg)
    if problems:
        raise DomainError("; ".join(problems))
    basis = build_basis(cfg.domain, cfg.N)
    chi = ball_indicator(cfg.domain, cfg.x0, cfg.R0, cfg.subsamples)
    rho = initial_density(cfg, chi)
    u0 = basis.velocity(initial_coefficients(cfg, basis))
    dist0 = cfg.domain.distance_to_boundary(cfg.x0) - cfg.R0
    c = continuation_constants(cfg.params, rho, u0, basis, cfg.R0, dist0, cfg.sigma)
    at_h = continuation_constants(cfg.params, rho, u0, basis, cfg.R0, dist0, cfg.sigma, horizon=cfg.horizon)
    return {
        "Q": c.Q, "T_seed": c.T_seed, "T1": c.T1, "T2": c.T2, "K": c.K, "c_p": c.c_p, "c_N": c.c_N,
        "self_consistent_horizon": c.horizon,
        "T1_at_horizon": at_h.T1, "T2_at_horizon": at_h.T2,
        "safe_time": safe_time(cfg.R0, u0.l2_norm()),
    }


# ---------------------------------------------------------------- sweeps

SWEEP_AXES = ("n_pen", "epsilon", "delta", "N", "dt", "h")


@dataclass
class SweepSpec:
    axis: str
    values: list[float]
    metrics: list[str] = field(default_factory=lambda: ["penalization_time_integral", "velocity_deviation_rms",
                                                        "max_density_deviation", "max_positive_residual"])
    workers: int = 1

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise DomainError(f"sweep axis must be one of {SWEEP_AXES}")
        if len(self.values) < 2:
            raise DomainError("a sweep needs at least two values")
        diffs = np.diff(np.asarray(self.values, dtype=float))
        if not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise DomainError("sweep values must be strictly monotone")


def _sweep_member(args):
    cfg_dict, out = args
    try:
        cfg = RunConfig.from_dict(cfg_dict)
        res = run(cfg, out)
    except Exception as exc:  # a crashed member must not stop the sweep
        log.error("sweep member %s crashed: %s", out, exc)
        return AbortCause.SOLVER.exit_code, "crashed", {"message": str(exc), "metrics": {}}
    return res.exit_code, res.cause, res.summary


def fit_loglog_slope(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0) & np.isfinite(y)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def sweep(spec: SweepSpec, base: RunConfig, out_dir) -> dict:
    """One run per axis value; failed members are recorded and the sweep carries on."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for i, value in enumerate(spec.values):
        v = int(value) if spec.axis == "N" else float(value)
        cfg = base.with_changes(**{spec.axis: v})
        jobs.append((cfg.to_dict(), out_dir / f"run_{i:02d}"))
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_sweep_member, jobs))
    else:
        results = [_sweep_member(j) for j in jobs]
    rows = []
    for value, (code, cause, summary) in zip(spec.values, results):
        metrics = summary.get("metrics", {})
        rows.append({"value": value, "exit_code": code, "cause": cause,
                     **{k: metrics.get(k, math.nan) for k in spec.metrics}})
    slopes = {}
    for k in spec.metrics:
        good = [r for r in rows if r["exit_code"] == 0]
        slopes[k] = fit_loglog_slope([r["value"] for r in good], [r[k] for r in good])
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["value", "exit_code", "cause"] + spec.metrics)
        for r in rows:
            w.writerow([r["value"], r["exit_code"], r["cause"] or ""] + [repr(float(r[k])) for k in spec.metrics])
    result = {"axis": spec.axis, "rows": rows, "slopes": slopes}
    (out_dir / "sweep.json").write_text(json.dumps(result, indent=2, default=_json_default))
    return result
