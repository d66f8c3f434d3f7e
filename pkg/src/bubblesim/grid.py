"""Box domain, cell-centred grid fields, quadrature and finite differences.

Grid values live at cell centres ``lower + (i + 1/2) h``.  Array layout is
``values[i, j, k]`` for scalars and ``values[c, i, j, k]`` for vectors, so the
first spatial index is x.  Point arrays throughout the package are
component-first, shape ``(3, ...)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DomainError


@dataclass(frozen=True)
class BoxDomain:
    lower: tuple[float, float, float]
    upper: tuple[float, float, float]
    shape: tuple[int, int, int]

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        shape = tuple(int(v) for v in self.shape)
        if not (len(lower) == len(upper) == len(shape) == 3):
            raise DomainError("box corners and resolution need three entries")
        if any(u <= l for l, u in zip(lower, upper)):
            raise DomainError("upper corner must exceed lower corner on every axis")
        if any(n < 4 for n in shape):
            raise DomainError("resolution must be at least 4 per axis")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "shape", shape)

    @classmethod
    def unit(cls, n: int) -> "BoxDomain":
        return cls((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (n, n, n))

    @property
    def lengths(self) -> np.ndarray:
        return np.subtract(self.upper, self.lower)

    @property
    def spacing(self) -> np.ndarray:
        return self.lengths / np.asarray(self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lower) + np.asarray(self.upper))

    def axis_centers(self, axis: int) -> np.ndarray:
        h = self.spacing[axis]
        return self.lower[axis] + (np.arange(self.shape[axis]) + 0.5) * h

    def axis_faces(self, axis: int) -> np.ndarray:
        h = self.spacing[axis]
        return self.lower[axis] + np.arange(self.shape[axis] + 1) * h

    @cached_property
    def coords(self) -> np.ndarray:
        """Cell-centre coordinates, shape (3, nx, ny, nz)."""
        axes = [self.axis_centers(a) for a in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    def distance_to_boundary(self, x) -> float:
        """Distance from a point inside the box to the nearest face."""
        x = np.asarray(x, dtype=float)
        return float(min(np.min(x - np.asarray(self.lower)), np.min(np.asarray(self.upper) - x)))

    def contains(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        lo = np.asarray(self.lower).reshape((3,) + (1,) * (pts.ndim - 1))
        hi = np.asarray(self.upper).reshape((3,) + (1,) * (pts.ndim - 1))
        return np.all((pts >= lo) & (pts <= hi), axis=0)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "shape": list(self.shape)}

    @classmethod
    def from_dict(cls, data: dict) -> "BoxDomain":
        return cls(tuple(data["lower"]), tuple(data["upper"]), tuple(data["shape"]))


@dataclass(frozen=True)
class ScalarField:
    domain: BoxDomain
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.domain.shape:
            raise DomainError(f"scalar field shape {vals.shape} does not match grid {self.domain.shape}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, domain: BoxDomain, value: float) -> "ScalarField":
        return cls(domain, np.full(domain.shape, float(value)))


@dataclass(frozen=True)
class VectorField:
    domain: BoxDomain
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (3,) + self.domain.shape:
            raise DomainError(f"vector field shape {vals.shape} does not match grid {self.domain.shape}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, domain: BoxDomain, value) -> "VectorField":
        v = np.broadcast_to(np.asarray(value, dtype=float), (3,)).reshape(3, 1, 1, 1)
        return cls(domain, np.broadcast_to(v, (3,) + domain.shape).copy())

    @classmethod
    def from_function(cls, domain: BoxDomain, func) -> "VectorField":
        """Sample ``func(points)`` with points shaped (3, nx, ny, nz)."""
        return cls(domain, func(domain.coords))

    def sup_norm(self) -> float:
        return float(np.max(np.sqrt(np.sum(self.values**2, axis=0))))

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.values**2) * self.domain.cell_volume))


def integrate(f) -> float:
    """Midpoint-rule integral over the box."""
    if isinstance(f, ScalarField):
        return float(np.sum(f.values) * f.domain.cell_volume)
    raise TypeError("integrate expects a ScalarField")


def ball_indicator(dom: BoxDomain, center, radius: float, samples: int = 4) -> ScalarField:
    """Volume fraction of each cell covered by a ball, by ``samples**3`` subcell points."""
    if radius <= 0:
        raise DomainError("ball radius must be positive")
    if samples < 1:
        raise DomainError("need at least one sample per cell and axis")
    c = np.asarray(center, dtype=float)
    h = dom.spacing
    out = np.zeros(dom.shape)
    # only cells meeting the ball's bounding box can be nonzero
    lo_idx, hi_idx = [], []
    for a in range(3):
        lo = int(np.floor((c[a] - radius - dom.lower[a]) / h[a]))
        hi = int(np.ceil((c[a] + radius - dom.lower[a]) / h[a]))
        lo_idx.append(max(lo, 0))
        hi_idx.append(min(hi, dom.shape[a]))
        if hi_idx[a] <= lo_idx[a]:
            return ScalarField(dom, out)
    sub = (np.arange(samples) + 0.5) / samples
    axes = [dom.lower[a] + (np.arange(lo_idx[a], hi_idx[a])[:, None] + sub[None, :]) * h[a] - c[a] for a in range(3)]
    # squared offsets per axis, shape (cells, samples)
    sq = [ax**2 for ax in axes]
    r2 = radius * radius
    yz = sq[1][:, None, :, None] + sq[2][None, :, None, :]
    # slabs along x keep the (cells x samples) work array small
    chunk = max(1, 2_000_000 // (yz.size * samples))
    for start in range(0, sq[0].shape[0], chunk):
        xs = sq[0][start:start + chunk]
        d2 = xs[:, None, None, :, None, None] + yz[None, :, :, None, :, :]
        frac = np.count_nonzero(d2 <= r2, axis=(3, 4, 5)) / samples**3
        i0 = lo_idx[0] + start
        out[i0:i0 + xs.shape[0], lo_idx[1]:hi_idx[1], lo_idx[2]:hi_idx[2]] = frac
    return ScalarField(dom, out)


def _partials(values: np.ndarray, h) -> list[np.ndarray]:
    return np.gradient(values, *h, edge_order=2)


def gradient(f: ScalarField) -> VectorField:
    """Second-order central differences, one-sided second order at the walls."""
    return VectorField(f.domain, np.stack(_partials(f.values, f.domain.spacing)))


def jacobian(u: VectorField) -> np.ndarray:
    """Velocity gradient ``J[a, b] = d u_a / d x_b``, shape (3, 3, nx, ny, nz)."""
    h = u.domain.spacing
    return np.stack([np.stack(_partials(u.values[a], h)) for a in range(3)])


def divergence(u: VectorField) -> ScalarField:
    h = u.domain.spacing
    div = sum(np.gradient(u.values[a], h[a], axis=a, edge_order=2) for a in range(3))
    return ScalarField(u.domain, div)


def sym_gradient(u: VectorField) -> np.ndarray:
    """Symmetric part of the velocity gradient, shape (3, 3, nx, ny, nz)."""
    jac = jacobian(u)
    return 0.5 * (jac + jac.transpose(1, 0, 2, 3, 4))


def interpolate(u: VectorField, points) -> np.ndarray:
    """Trilinear interpolation of a vector field at points shaped (3, ...).

    Points beyond the outermost cell centres take the value of the nearest
    centre along that axis.
    """
    pts = np.asarray(points, dtype=float)
    dom = u.domain
    flat = pts.reshape(3, -1)
    idx = (flat - np.asarray(dom.lower)[:, None]) / dom.spacing[:, None] - 0.5
    out = np.stack([ndimage.map_coordinates(u.values[a], idx, order=1, mode="nearest") for a in range(3)])
    return out.reshape(pts.shape)


def write_field(path, field, name: str, time: float = 0.0) -> tuple[Path, Path]:
    """Dump a scalar or vector field as raw little-endian float64 plus a JSON sidecar.

    Data are written x-fastest; vector components are stored one after the other.
    """
    path = Path(path)
    dom = field.domain
    if isinstance(field, ScalarField):
        comps = [field.values]
    else:
        comps = list(field.values)
    bin_path = path.with_suffix(".bin")
    with open(bin_path, "wb") as fh:
        for comp in comps:
            fh.write(np.asarray(comp, dtype="<f8").ravel(order="F").tobytes())
    meta = {
        "name": name,
        "time": float(time),
        "components": len(comps),
        "dtype": "float64",
        "byte_order": "little",
        "order": "x-fastest",
        **dom.to_dict(),
    }
    json_path = path.with_suffix(".json")
    json_path.write_text(json.dumps(meta, indent=2))
    return bin_path, json_path


def read_field(path):
    """Inverse of `write_field`; returns (field, metadata)."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    dom = BoxDomain.from_dict(meta)
    raw = np.fromfile(path.with_suffix(".bin"), dtype="<f8")
    ncomp = meta["components"]
    comps = raw.reshape(ncomp, -1)
    arrays = [c.reshape(dom.shape, order="F") for c in comps]
    if ncomp == 1:
        return ScalarField(dom, arrays[0]), meta
    return VectorField(dom, np.stack(arrays)), meta
