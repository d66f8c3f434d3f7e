"""Rigid-plus-dilation velocity modes and their ball-moment projectors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .grid import ScalarField, VectorField


@dataclass(frozen=True)
class ModeVector:
    """Translation ``V``, angular velocity ``omega`` and dilation rate ``Lambda``."""

    V: np.ndarray
    omega: np.ndarray
    Lambda: float

    def __post_init__(self):
        object.__setattr__(self, "V", np.asarray(self.V, dtype=float).reshape(3))
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float).reshape(3))
        object.__setattr__(self, "Lambda", float(self.Lambda))

    @classmethod
    def zero(cls) -> "ModeVector":
        return cls(np.zeros(3), np.zeros(3), 0.0)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.V, self.omega, [self.Lambda]])

    @classmethod
    def from_array(cls, arr) -> "ModeVector":
        arr = np.asarray(arr, dtype=float)
        return cls(arr[:3], arr[3:6], arr[6])

    def norm(self, R: float) -> float:
        """RMS speed of the mode field over a ball of radius R centred at the anchor."""
        return math.sqrt(self.V @ self.V + 0.4 * R**2 * (self.omega @ self.omega) + R**2 * self.Lambda**2 / 15.0)

    def __sub__(self, other: "ModeVector") -> "ModeVector":
        return ModeVector.from_array(self.as_array() - other.as_array())


def eval_mode(mv: ModeVector, x_c, x) -> np.ndarray:
    """Velocity of the mode at points ``x`` shaped (3, ...)."""
    x = np.asarray(x, dtype=float)
    shape = (3,) + (1,) * (x.ndim - 1)
    r = x - np.asarray(x_c, dtype=float).reshape(shape)
    w = mv.omega.reshape(shape)
    rot = np.stack([w[1] * r[2] - w[2] * r[1], w[2] * r[0] - w[0] * r[2], w[0] * r[1] - w[1] * r[0]])
    return mv.V.reshape(shape) + rot + (mv.Lambda / 3.0) * r


def mode_field(mv: ModeVector, x_c, domain) -> VectorField:
    return VectorField(domain, eval_mode(mv, x_c, domain.coords))


def mode_coefficients(weights, rel, vals, R: float) -> np.ndarray:
    """Projector coefficients from weighted samples.

    ``weights``: (M,) quadrature weights times color function;
    ``rel``: (3, M) offsets from the centre; ``vals``: (..., 3, M) velocities.
    Returns (..., 7) arrays ordered as (V, omega, Lambda).
    """
    if not R > 0:
        raise DomainError("projection radius must be positive")
    wv = vals * weights
    V = 3.0 / (4.0 * math.pi * R**3) * wv.sum(axis=-1)
    cross = np.stack([
        rel[1] * wv[..., 2, :] - rel[2] * wv[..., 1, :],
        rel[2] * wv[..., 0, :] - rel[0] * wv[..., 2, :],
        rel[0] * wv[..., 1, :] - rel[1] * wv[..., 0, :],
    ], axis=-2).sum(axis=-1)
    omega = 15.0 / (8.0 * math.pi * R**5) * cross
    dil = np.einsum("...cm,cm->...", wv, rel)
    Lam = 15.0 / (4.0 * math.pi * R**5) * dil
    return np.concatenate([V, omega, Lam[..., None]], axis=-1)


def mode_basis_values(rel) -> np.ndarray:
    """The seven mode fields at offsets ``rel`` (3, M), shape (7, 3, M)."""
    M = rel.shape[1]
    out = np.zeros((7, 3, M))
    for a in range(3):
        out[a, a] = 1.0
    # omega_a e_a x r
    out[3, 1], out[3, 2] = -rel[2], rel[1]
    out[4, 0], out[4, 2] = rel[2], -rel[0]
    out[5, 0], out[5, 1] = -rel[1], rel[0]
    out[6] = rel / 3.0
    return out


def _support(chi: ScalarField, x_c):
    dom = chi.domain
    mask = chi.values > 0
    weights = chi.values[mask] * dom.cell_volume
    rel = dom.coords[:, mask] - np.asarray(x_c, dtype=float)[:, None]
    return mask, weights, rel


def project(chi: ScalarField, u: VectorField, R: float, x_c) -> ModeVector:
    """L2(chi) projection of ``u`` onto the mode space anchored at ``x_c``."""
    if not R > 0:
        raise DomainError("projection radius must be positive")
    mask, weights, rel = _support(chi, x_c)
    coeffs = mode_coefficients(weights, rel, u.values[:, mask], R)
    return ModeVector.from_array(coeffs)


def project_no_rotation(chi: ScalarField, u: VectorField, R: float, x_c) -> ModeVector:
    """As `project` but with the rotational part dropped."""
    mv = project(chi, u, R, x_c)
    return ModeVector(mv.V, np.zeros(3), mv.Lambda)


def penalization_integral(chi: ScalarField, u: VectorField, R: float, x_c) -> float:
    """Integral of chi |u - Pi u|^2."""
    mask, weights, rel = _support(chi, x_c)
    vals = u.values[:, mask]
    coeffs = mode_coefficients(weights, rel, vals, R)
    resid = vals - np.tensordot(coeffs, mode_basis_values(rel), axes=(0, 0))
    return float(np.sum(weights * np.sum(resid**2, axis=0)))
