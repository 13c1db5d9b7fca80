"""Finite-dimensional real and complexified vector spaces.

Complex arrays are treated as real Hilbert spaces of twice the dimension:
the inner product is the real part of the Hermitian inner product, so
norms, adjoints and orthogonality agree with the usual complex notions
while every downstream formula can assume a real inner product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

REAL = "real"
COMPLEX = "complex"


@dataclass(frozen=True)
class Space:
    """Space of ``shape``-arrays over the given scalar field."""

    shape: tuple[int, ...]
    field: str = REAL

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if len(self.shape) == 0 or math.prod(self.shape) <= 0:
            raise ValueError(f"space must have positive dimension, got shape {self.shape}")
        if self.field not in (REAL, COMPLEX):
            raise ValueError(f"field must be {REAL!r} or {COMPLEX!r}, got {self.field!r}")

    @property
    def dtype(self):
        return np.complex128 if self.field == COMPLEX else np.float64

    @property
    def size(self) -> int:
        """Number of scalar (possibly complex) entries."""
        return math.prod(self.shape)

    @property
    def real_dim(self) -> int:
        """Dimension as a real vector space."""
        return self.size * (2 if self.field == COMPLEX else 1)

    def zero(self) -> np.ndarray:
        return np.zeros(self.shape, dtype=self.dtype)

    def random(self, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
        """Standard Gaussian element (circularly symmetric if complex)."""
        if self.field == COMPLEX:
            re = rng.standard_normal(self.shape)
            im = rng.standard_normal(self.shape)
            return scale / np.sqrt(2.0) * (re + 1j * im)
        return scale * rng.standard_normal(self.shape)

    def conforms(self, x) -> bool:
        if not isinstance(x, np.ndarray) or x.shape != self.shape:
            return False
        if self.field == REAL and np.iscomplexobj(x):
            return False
        return True

    def inner(self, x, y) -> float:
        return float(np.real(np.vdot(x, y)))

    def norm(self, x) -> float:
        return float(np.linalg.norm(x))

    def flatten(self, x) -> np.ndarray:
        return np.ravel(np.asarray(x, dtype=self.dtype))

    def unflatten(self, v) -> np.ndarray:
        return np.asarray(v, dtype=self.dtype).reshape(self.shape)

    def basis(self):
        """Yield the canonical unit vectors (complex dimension if complex)."""
        for k in range(self.size):
            e = self.zero()
            e.reshape(-1)[k] = 1.0
            yield e


@dataclass(frozen=True)
class ProductSpace:
    """Cartesian product of spaces; elements are lists of arrays."""

    parts: tuple[Space, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ValueError("product space needs at least one factor")

    def __len__(self) -> int:
        return len(self.parts)

    def __getitem__(self, i) -> Space:
        return self.parts[i]

    @property
    def size(self) -> int:
        return sum(p.size for p in self.parts)

    @property
    def real_dim(self) -> int:
        return sum(p.real_dim for p in self.parts)

    def zero(self) -> list[np.ndarray]:
        return [p.zero() for p in self.parts]

    def random(self, rng: np.random.Generator, scale: float = 1.0) -> list[np.ndarray]:
        return [p.random(rng, scale) for p in self.parts]

    def conforms(self, y) -> bool:
        if not isinstance(y, (list, tuple)) or len(y) != len(self.parts):
            return False
        return all(p.conforms(yi) for p, yi in zip(self.parts, y))

    def inner(self, y, w) -> float:
        return sum(p.inner(yi, wi) for p, yi, wi in zip(self.parts, y, w))

    def norm(self, y) -> float:
        return math.sqrt(sum(p.norm(yi) ** 2 for p, yi in zip(self.parts, y)))

    def flatten(self, y) -> np.ndarray:
        return np.concatenate([p.flatten(yi) for p, yi in zip(self.parts, y)])

    def unflatten(self, v) -> list[np.ndarray]:
        out, k = [], 0
        for p in self.parts:
            out.append(p.unflatten(v[k:k + p.size]))
            k += p.size
        return out

    def basis(self):
        for i, p in enumerate(self.parts):
            for e in p.basis():
                vec = self.zero()
                vec[i] = e
                yield vec


def copy_vec(x):
    """Deep copy of a space element (array or list of arrays)."""
    if isinstance(x, list):
        return [xi.copy() for xi in x]
    return x.copy()
