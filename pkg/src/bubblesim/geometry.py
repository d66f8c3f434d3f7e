"""Bubble state, affine bubble maps, color-function moments and inertia."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CollapseError, DegenerateIndicatorError, DomainError
from .grid import ScalarField


@dataclass(frozen=True)
class BubbleState:
    x_b: np.ndarray
    R_b: float

    def __post_init__(self):
        x = np.asarray(self.x_b, dtype=float).reshape(3)
        object.__setattr__(self, "x_b", x)
        object.__setattr__(self, "R_b", float(self.R_b))
        if not self.R_b > 0:
            raise CollapseError(f"bubble radius {self.R_b} is not positive")

    def volume(self) -> float:
        return 4.0 * math.pi * self.R_b**3 / 3.0


@dataclass(frozen=True)
class BubbleInertia:
    m_b: float
    J: float
    K: float
    rho_b: float


@dataclass(frozen=True)
class AffineBubbleMap:
    """x -> a + scale * O (x - x0), with scale = R / R0."""

    a: np.ndarray
    scale: float
    O: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).reshape(3))
        O = np.asarray(self.O, dtype=float).reshape(3, 3)
        object.__setattr__(self, "O", O)
        if not self.scale > 0:
            raise DomainError("map scale must be positive")
        if np.max(np.abs(O.T @ O - np.eye(3))) > 1e-10 or np.linalg.det(O) < 0:
            raise DomainError("rotation must be orthogonal with determinant +1")

    @classmethod
    def identity(cls, x0) -> "AffineBubbleMap":
        return cls(np.asarray(x0, dtype=float), 1.0, np.eye(3))

    @classmethod
    def from_state(cls, state: BubbleState, R0: float) -> "AffineBubbleMap":
        return cls(state.x_b, state.R_b / R0, np.eye(3))


def apply_map(m: AffineBubbleMap, x, x0) -> np.ndarray:
    """Image of point(s) ``x`` (shape (3, ...)) under the bubble map anchored at ``x0``."""
    x = np.asarray(x, dtype=float)
    shape = (3,) + (1,) * (x.ndim - 1)
    rel = x - np.asarray(x0, dtype=float).reshape(shape)
    moved = np.tensordot(m.O, rel, axes=(1, 0))
    return m.a.reshape(shape) + m.scale * moved


def moments_from_indicator(chi: ScalarField) -> tuple[float, np.ndarray]:
    """Equivalent radius and centroid of a color function."""
    dom = chi.domain
    mass = float(np.sum(chi.values)) * dom.cell_volume
    if not mass > 0:
        raise DegenerateIndicatorError("color function has no mass")
    R = (3.0 * mass / (4.0 * math.pi)) ** (1.0 / 3.0)
    first = np.tensordot(dom.coords, chi.values, axes=([1, 2, 3], [0, 1, 2])) * dom.cell_volume
    return R, first / mass


def bubble_inertia(state: BubbleState, rho_b0: float, R0: float) -> BubbleInertia:
    if not state.R_b > 0:
        raise CollapseError("bubble radius is not positive")
    m_b = 4.0 * math.pi * R0**3 * rho_b0 / 3.0
    rho_b = (R0 / state.R_b) ** 3 * rho_b0
    R2 = state.R_b**2
    return BubbleInertia(m_b=m_b, J=0.4 * m_b * R2, K=m_b * R2 / 15.0, rho_b=rho_b)
