"""Sine-mode Galerkin space and the assembled momentum system.

Each basis function is ``e_d * phi_k`` where ``phi_k`` is a normalised
product of sines vanishing on the box walls.  Scalar factors (and their
analytic gradients) are sampled once at cell centres; all matrices are built
from small weighted Gram products of those samples.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg

from .errors import CollapseError, DomainError, SolverError
from .geometry import BubbleState, moments_from_indicator
from .grid import BoxDomain, ScalarField, VectorField, divergence
from .modes import mode_basis_values, mode_coefficients
from .params import SimulationParams, pressure


@dataclass
class GalerkinBasis:
    domain: BoxDomain
    wavenumbers: np.ndarray  # (K, 3) distinct scalar factors
    scalar_index: np.ndarray  # (N,) which scalar factor each basis vector uses
    component: np.ndarray  # (N,) direction of each basis vector

    @property
    def N(self) -> int:
        return int(self.scalar_index.size)

    @property
    def amplitude(self) -> float:
        return math.sqrt(8.0 / self.domain.volume)

    @property
    def modes(self) -> list[tuple[tuple[int, int, int], int]]:
        return [(tuple(int(v) for v in self.wavenumbers[s]), int(d)) for s, d in zip(self.scalar_index, self.component)]

    def _factors(self, points) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
        pts = np.asarray(points, dtype=float).reshape(3, -1)
        sines, cosines = [], []
        for a in range(3):
            L = self.domain.lengths[a]
            arg = np.pi * self.wavenumbers[:, a:a + 1] / L * (pts[a][None, :] - self.domain.lower[a])
            sines.append(np.sin(arg))
            cosines.append(np.cos(arg))
        return pts, sines, cosines

    def scalar_values(self, points) -> np.ndarray:
        """phi_k at points (3, ...), shape (K, P)."""
        _, s, _ = self._factors(points)
        return self.amplitude * s[0] * s[1] * s[2]

    def scalar_gradients(self, points) -> np.ndarray:
        """grad phi_k at points, shape (3, K, P)."""
        _, s, c = self._factors(points)
        out = []
        for a in range(3):
            fac = np.pi * self.wavenumbers[:, a:a + 1] / self.domain.lengths[a]
            parts = [s[b] if b != a else fac * c[a] for b in range(3)]
            out.append(self.amplitude * parts[0] * parts[1] * parts[2])
        return np.stack(out)

    @cached_property
    def phi(self) -> np.ndarray:
        """Scalar factors at cell centres, (K, M) with M in C order of the grid."""
        return self.scalar_values(self.domain.coords)

    @cached_property
    def dphi(self) -> np.ndarray:
        return self.scalar_gradients(self.domain.coords)

    def face_phi(self, axis: int) -> np.ndarray:
        """Scalar factors on the faces normal to ``axis``."""
        cache = self.__dict__.setdefault("_face_cache", {})
        if axis not in cache:
            axes = [self.domain.axis_centers(a) for a in range(3)]
            axes[axis] = self.domain.axis_faces(axis)
            pts = np.stack(np.meshgrid(*axes, indexing="ij"))
            cache[axis] = (self.scalar_values(pts), pts.shape[1:])
        return cache[axis]

    def _combine(self, alpha, samples: np.ndarray) -> np.ndarray:
        """Sum alpha_i * samples[s_i] per component; samples (..., K, P) -> (..., 3, P)."""
        alpha = np.asarray(alpha, dtype=float)
        out = np.zeros(samples.shape[:-2] + (3, samples.shape[-1]))
        for d in range(3):
            sel = self.component == d
            if np.any(sel):
                out[..., d, :] = np.tensordot(alpha[sel], samples[..., self.scalar_index[sel], :], axes=(0, -2))
        return out

    def evaluate(self, alpha, points) -> np.ndarray:
        """Velocity at points (3, ...)."""
        pts = np.asarray(points, dtype=float)
        return self._combine(alpha, self.scalar_values(pts)).reshape(pts.shape)

    def velocity(self, alpha) -> VectorField:
        vals = self._combine(alpha, self.phi)
        return VectorField(self.domain, vals.reshape((3,) + self.domain.shape))

    def jacobian(self, alpha) -> np.ndarray:
        """Analytic ``d u_a / d x_b`` at cell centres, shape (3, 3, nx, ny, nz)."""
        jac = self._combine(alpha, self.dphi)  # (3 [b], 3 [a], M)
        return jac.transpose(1, 0, 2).reshape((3, 3) + self.domain.shape)

    def face_velocities(self, alpha) -> list[np.ndarray]:
        alpha = np.asarray(alpha, dtype=float)
        faces = []
        for a in range(3):
            vals, shape = self.face_phi(a)
            sel = self.component == a
            faces.append((alpha[sel] @ vals[self.scalar_index[sel]]).reshape(shape))
        return faces

    def sup_norms(self) -> tuple[np.ndarray, np.ndarray]:
        """Bounds on sup |psi_i| and sup |grad psi_i| for each basis vector."""
        k = self.wavenumbers[self.scalar_index] / self.domain.lengths
        grad = self.amplitude * np.pi * np.sqrt(np.sum(k**2, axis=1))
        return np.full(self.N, self.amplitude), grad


def build_basis(dom: BoxDomain, N: int, kmax: int | None = None) -> GalerkinBasis:
    """First N sine modes ordered by |k|^2, then component, then k.

    ``kmax`` caps each wavenumber; the default is the grid limit n - 1 below
    which sampled sines stay exactly orthonormal under midpoint quadrature.
    """
    if N < 1:
        raise DomainError("basis size must be at least 1")
    limit = min(dom.shape) - 1
    kmax = limit if kmax is None else int(kmax)
    if kmax < 1 or kmax > limit:
        raise DomainError(f"wavenumber cap must lie in [1, {limit}]")
    if N > 3 * kmax**3:
        raise DomainError(f"basis size {N} exceeds the {3 * kmax**3} modes available with kmax = {kmax}")
    m = 1
    while 3 * m**3 < N:
        m += 1
    reach = min(kmax, int(math.ceil(math.sqrt(3.0) * m)))
    ks = np.arange(1, reach + 1)
    grid = np.stack(np.meshgrid(ks, ks, ks, indexing="ij")).reshape(3, -1).T
    entries = sorted(
        ((int(np.sum(k * k)), d, tuple(int(v) for v in k)) for k in grid for d in range(3))
    )[:N]
    uniq: dict[tuple[int, int, int], int] = {}
    sidx, comp = [], []
    for _, d, k in entries:
        sidx.append(uniq.setdefault(k, len(uniq)))
        comp.append(d)
    waves = np.array(list(uniq.keys()), dtype=float).reshape(-1, 3)
    return GalerkinBasis(dom, waves, np.array(sidx, dtype=int), np.array(comp, dtype=int))


@dataclass
class GalerkinState:
    alpha: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).copy()
        if not np.all(np.isfinite(self.alpha)):
            raise SolverError("non-finite Galerkin coefficients")


def _expand(basis: GalerkinBasis, scalar_block: np.ndarray) -> np.ndarray:
    """Lift a (K, K) scalar Gram block to (N, N) with the same-component mask."""
    s, d = basis.scalar_index, basis.component
    return scalar_block[np.ix_(s, s)] * (d[:, None] == d[None, :])


def _weights(field_values, dom: BoxDomain) -> np.ndarray:
    return np.asarray(field_values, dtype=float).reshape(-1) * dom.cell_volume


def assemble_mass(rho: ScalarField, basis: GalerkinBasis) -> np.ndarray:
    """a_ij = int rho psi_i . psi_j."""
    w = _weights(rho.values, basis.domain)
    phi = basis.phi
    G = (phi * w) @ phi.T
    A = _expand(basis, G)
    return 0.5 * (A + A.T)


@dataclass
class StiffnessParts:
    convection: np.ndarray
    viscous: np.ndarray
    diffusion: np.ndarray
    penalization: np.ndarray
    skew_defect: np.ndarray | None = None

    @property
    def total(self) -> np.ndarray:
        return self.convection + self.viscous + self.diffusion + self.penalization


def projector_anchor(chi: ScalarField) -> tuple[float, np.ndarray]:
    """Radius and centre used by the projector: the moments of the color function."""
    return moments_from_indicator(chi)


def viscous_block(mu2: np.ndarray, nu: np.ndarray, basis: GalerkinBasis) -> np.ndarray:
    """int 2mu (D psi_i - div psi_i I/3):(D psi_j - div psi_j I/3) + nu div psi_i div psi_j.

    ``mu2`` holds 2 mu per cell, ``nu`` the bulk viscosity per cell.
    """
    dom = basis.domain
    dphi = basis.dphi
    wm = _weights(mu2, dom)
    wn = _weights(nu, dom)
    P = [[None] * 3 for _ in range(3)]
    Q = [[None] * 3 for _ in range(3)]
    for p in range(3):
        for q in range(p, 3):
            P[p][q] = (dphi[p] * wm) @ dphi[q].T
            Q[p][q] = (dphi[p] * wn) @ dphi[q].T
            if q != p:
                P[q][p] = P[p][q].T
                Q[q][p] = Q[p][q].T
    lap = P[0][0] + P[1][1] + P[2][2]
    s, d = basis.scalar_index, basis.component
    B = np.empty((basis.N, basis.N))
    for a in range(3):
        rows = np.flatnonzero(d == a)
        for b in range(3):
            cols = np.flatnonzero(d == b)
            ks, ls = np.ix_(s[rows], s[cols])
            block = 0.5 * P[b][a][ks, ls] - P[a][b][ks, ls] / 3.0 + Q[a][b][ks, ls]
            if a == b:
                block = block + 0.5 * lap[ks, ls]
            B[np.ix_(rows, cols)] = block
    return 0.5 * (B + B.T)


def penalization_block(chi: ScalarField, basis: GalerkinBasis, n_pen: float,
                       anchor: tuple[float, np.ndarray] | None = None) -> np.ndarray:
    """n int chi (psi_i - Pi psi_i).(psi_j - Pi psi_j)."""
    if n_pen == 0:
        return np.zeros((basis.N, basis.N))
    dom = basis.domain
    R, xc = projector_anchor(chi) if anchor is None else anchor
    flat_chi = chi.values.reshape(-1)
    mask = flat_chi > 0
    w = flat_chi[mask] * dom.cell_volume
    rel = dom.coords.reshape(3, -1)[:, mask] - np.asarray(xc)[:, None]
    psi = np.zeros((basis.N, 3, w.size))
    psi[np.arange(basis.N), basis.component, :] = basis.phi[basis.scalar_index][:, mask]
    coeffs = mode_coefficients(w, rel, psi, R)
    resid = psi - np.tensordot(coeffs, mode_basis_values(rel), axes=(1, 0))
    flat = resid.reshape(basis.N, -1)
    B = n_pen * (flat * np.tile(w, 3)) @ flat.T
    return 0.5 * (B + B.T)


def assemble_stiffness(rho: ScalarField, u: VectorField, chi: ScalarField, grad_rho: VectorField,
                       bubble: BubbleState | None, p: SimulationParams, basis: GalerkinBasis, *,
                       anchor: tuple[float, np.ndarray] | None = None, diffusion_form: str = "energy",
                       parts: bool = False):
    """Assemble B = convection + viscous + diffusion coupling + penalization.

    Viscosities are blended with the color function: shear
    ``(1 - chi) mu_f + n_pen chi`` and bulk ``(1 - chi) nu_f + chi nu_b``.
    The projector is anchored at the color-function moments unless ``anchor``
    is given.

    The diffusion coupling comes from the momentum term eps (grad rho . grad) u
    written against the rho-weighted time derivative.  ``diffusion_form``
    selects ``"energy"``: -eps int (grad rho . grad psi_i) . psi_j, which keeps
    the kinetic-energy balance free of eps terms, or ``"literal"``:
    +eps int (grad rho . grad psi_j) . psi_i.
    """
    if bubble is not None and not bubble.R_b > 0:
        raise CollapseError("bubble radius is not positive")
    dom = basis.domain
    phi, dphi = basis.phi, basis.dphi
    w_rho = _weights(rho.values, dom)
    uflat = u.values.reshape(3, -1)
    adv = np.einsum("bm,bkm->km", uflat, dphi)
    conv = _expand(basis, (phi * w_rho) @ adv.T)

    chi_v = chi.values
    mu2 = 2.0 * ((1.0 - chi_v) * p.mu_f + p.n_pen * chi_v)
    nu = (1.0 - chi_v) * p.nu_f + chi_v * p.nu_b
    visc = viscous_block(mu2, nu, basis)

    if p.epsilon != 0:
        gflat = grad_rho.values.reshape(3, -1) * dom.cell_volume
        dgr = np.einsum("bm,bkm->km", gflat, dphi)
        E = dgr @ phi.T  # E[k, l] = int (grad rho . grad phi_k) phi_l
        if diffusion_form == "energy":
            diff = -p.epsilon * _expand(basis, E)
        elif diffusion_form == "literal":
            diff = p.epsilon * _expand(basis, E.T)
        else:
            raise DomainError(f"unknown diffusion coupling form {diffusion_form!r}")
    else:
        diff = np.zeros((basis.N, basis.N))

    pen = penalization_block(chi, basis, p.n_pen, anchor) if np.any(chi_v > 0) else np.zeros((basis.N, basis.N))
    if not parts:
        return conv + visc + diff + pen
    flux_div = divergence(VectorField(dom, rho.values * u.values)).values.reshape(-1)
    defect = _expand(basis, (phi * (flux_div * dom.cell_volume)) @ phi.T)
    return StiffnessParts(conv, visc, diff, pen, defect)


@dataclass
class ForcingParts:
    gravity: np.ndarray
    pressure_fluid: np.ndarray
    pressure_bubble: np.ndarray
    pressure_artificial: np.ndarray
    surface: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.gravity + self.pressure_fluid + self.pressure_bubble + self.pressure_artificial + self.surface


def _divergence_moments(q: np.ndarray, basis: GalerkinBasis) -> np.ndarray:
    """int q div psi_j for a cell field q."""
    w = _weights(q, basis.domain)
    per_axis = basis.dphi @ w  # (3, K)
    return per_axis[basis.component, basis.scalar_index]


def assemble_forcing(rho: ScalarField, chi: ScalarField, R_b: float, p: SimulationParams, basis: GalerkinBasis, *,
                     parts: bool = False):
    """f_j = -int rho g . psi_j + int (chi kappa_b / R_b + p(rho, chi)) div psi_j."""
    if not R_b > 0:
        raise CollapseError("bubble radius is not positive")
    r, c = rho.values, chi.values
    pressure(r, c, p)  # domain checks
    g = p.gravity
    mass_moment = basis.phi @ _weights(r, basis.domain)
    grav = -mass_moment[basis.scalar_index] * g[basis.component]
    fluid = _divergence_moments((1 - c) * p.a_f * r**p.gamma_f, basis)
    bub = _divergence_moments(c * p.a_b * r**p.gamma_b, basis)
    art = _divergence_moments(p.delta * r**p.beta, basis) if p.delta != 0 else np.zeros(basis.N)
    surf = _divergence_moments(c * p.kappa_b / R_b, basis) if p.kappa_b != 0 else np.zeros(basis.N)
    fp = ForcingParts(grav, fluid, bub, art, surf)
    return fp if parts else fp.total


def momentum_step(state: GalerkinState, A: np.ndarray, B: np.ndarray, F: np.ndarray, dt: float) -> GalerkinState:
    """Semi-implicit Euler: (A + dt B) alpha' = A alpha + dt F."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    M = A + dt * B
    rhs = A @ state.alpha + dt * F
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", linalg.LinAlgWarning)
            lu = linalg.lu_factor(M, check_finite=True)
            sol = linalg.lu_solve(lu, rhs)
            resid = M @ sol - rhs
            # one sweep of iterative refinement
            sol = sol - linalg.lu_solve(lu, resid)
    except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError) as exc:
        raise SolverError(f"momentum system could not be solved: {exc}") from exc
    resid = np.linalg.norm(M @ sol - rhs)
    scale = max(np.linalg.norm(rhs), np.linalg.norm(dt * F), np.finfo(float).tiny)
    if not np.all(np.isfinite(sol)) or resid > 1e-10 * scale:
        raise SolverError(f"momentum solve residual {resid:.3e} exceeds tolerance")
    return GalerkinState(sol, state.t + dt)


def poincare_constant(dom: BoxDomain) -> float:
    """1/sqrt(first Dirichlet eigenvalue of -Laplacian) on the box."""
    return 1.0 / (math.pi * math.sqrt(float(np.sum(1.0 / dom.lengths**2))))


def norm_equivalence_constant(basis: GalerkinBasis) -> float:
    """A constant c with ||v||_{W1,inf} <= c ||v||_2 and ||v||_2 <= c ||v||_{W1,inf} on the span."""
    sup, grad = basis.sup_norms()
    upper = math.sqrt(float(np.sum((sup + grad) ** 2)))
    return max(upper, math.sqrt(basis.domain.volume))


def t1_bound(R0: float, c_p: float, K: float) -> float:
    return math.pi * R0**5 / (5.0 * c_p**2 * K) if K > 0 else math.inf


def t2_bound(R0: float, c_p: float, K: float, dist0: float, sigma: float) -> float:
    margin = dist0 - 2.0 * sigma
    if margin <= 0:
        return 0.0
    c0 = (math.sqrt(3.0) + math.sqrt(5.0)) / (R0 * math.sqrt(4.0 * math.pi * R0))
    return margin**2 / (c0**2 * c_p**2 * K) if K > 0 else math.inf


@dataclass
class ContinuationConstants:
    Q: float
    T_seed: float
    T1: float
    T2: float
    K: float
    c_p: float
    c_N: float
    horizon: float
    details: dict = field(default_factory=dict)

    @property
    def safe_horizon(self) -> float:
        return min(self.T1, self.T2)


def _gronwall_K(p: SimulationParams, E0: float, g_norm: float, volume: float, R0: float, T: float) -> float:
    theta = (p.nu_f + p.mu_f / 3.0) / 6.0
    beta, delta = p.beta, p.delta
    if delta <= 0 or theta <= 0:
        return math.inf
    # Young constants from absorbing the pressure and gravity work into the artificial potential
    c_grav = (beta - 1) / (2 * beta) * (3 * (beta - 1) / (2 * delta * beta)) ** (1 / (beta - 1))
    c_press = 0.0
    for a, gam in ((p.a_f, p.gamma_f), (p.a_b, p.gamma_b)):
        if beta <= 2 * gam:
            return math.inf
        c_press += (a ** (2 * beta / (beta - 2 * gam)) * (beta - 2 * gam) / (4 * theta * beta)
                    * (6 * gam * (beta - 1) / (4 * theta * delta * beta)) ** (2 * gam / (beta - 2 * gam)))
    c_surf = p.kappa_b**2 / theta
    q = 2 * beta / (beta - 1)
    grav_term = c_grav * g_norm**q * T * volume
    return math.exp(T) * (E0 + grav_term + c_press * T * volume + c_surf * T * volume / R0**2)


def continuation_constants(p: SimulationParams, rho0: ScalarField, u0: VectorField, basis: GalerkinBasis,
                           R0: float, dist0: float, sigma: float, horizon: float | None = None) -> ContinuationConstants:
    """Continuation and horizon constants of the Galerkin fixed-point construction.

    Without an explicit ``horizon`` the Gronwall constant K is evaluated at
    the largest T with T <= min(T1(K(T)), T2(K(T))), found by bisection.
    """
    dom = basis.domain
    r = rho0.values
    rho_lo, rho_hi = float(np.min(r)), float(np.max(r))
    if not rho_lo > 0:
        raise DomainError("initial density must be strictly positive")
    h3 = dom.cell_volume
    mom2 = float(np.sum(r * np.sum(u0.values**2, axis=0))) * h3
    Q = max(1.0, 4.0 / rho_lo * mom2)
    c_N = norm_equivalence_constant(basis)
    vol = dom.volume
    g_abs = float(np.linalg.norm(p.gravity))
    g_norm = g_abs * math.sqrt(vol)
    gbar = p.max_exponent
    candidates = [math.log(2.0) / (2 * Q), math.log(2.0) / (gbar * c_N * Q)]
    if g_norm > 0:
        candidates.append(rho_lo * Q / (16 * rho_hi * g_norm))
    load = p.kappa_b / R0 + p.a_f * rho_hi**p.gamma_f + p.a_b * rho_hi**p.gamma_b + p.delta * rho_hi**p.beta
    if load > 0:
        candidates.append(rho_lo * Q / (32 * c_N * vol * load))
    T_seed = min(candidates)
    c_p = poincare_constant(dom)
    E0 = 0.5 * mom2 + (float(np.sum(p.delta * r**p.beta / (p.beta - 1))) * h3 if p.delta > 0 else 0.0)

    def bounds(T):
        K = _gronwall_K(p, E0, g_abs, vol, R0, T)
        return K, t1_bound(R0, c_p, K), t2_bound(R0, c_p, K, dist0, sigma)

    if horizon is None:
        lo, hi = 0.0, 1.0
        while True:
            _, t1, t2 = bounds(hi)
            if hi > min(t1, t2) or hi > 1e6:
                break
            lo, hi = hi, 2 * hi
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            _, t1, t2 = bounds(mid)
            if mid <= min(t1, t2):
                lo = mid
            else:
                hi = mid
        horizon = lo
    K, T1, T2 = bounds(horizon)
    return ContinuationConstants(Q=Q, T_seed=T_seed, T1=T1, T2=T2, K=K, c_p=c_p, c_N=c_N, horizon=horizon,
                                 details={"rho_min": rho_lo, "rho_max": rho_hi, "E0": E0, "load": load})
