"""Matrix-free linear operators with adjoints and spectral-norm estimation.

Every operator maps between :class:`~spdhg.spaces.Space` (or
:class:`~spdhg.spaces.ProductSpace`) instances and provides an exact
adjoint with respect to the real inner product.  All shipped operators
are additionally linear over the complex scalars, which makes dense
assembly over the complex canonical basis valid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spaces import COMPLEX, ProductSpace, Space


class DimensionError(ValueError):
    """Input does not conform to an operator's domain or codomain."""


class UnsupportedShapeError(ValueError):
    """Operator construction requested on a shape it does not support."""


class LinOp:
    """Base class: immutable linear map with an adjoint.

    Parameters
    ----------
    domain, codomain : Space or ProductSpace
    cached_norm : float, optional
        Upper bound on the operator norm.  Consumers may rely on
        ``norm(L x) <= cached_norm * norm(x)``; it need not be tight.
    """

    def __init__(self, domain, codomain, cached_norm=None):
        self.domain = domain
        self.codomain = codomain
        self.cached_norm = cached_norm

    def _apply(self, x):
        raise NotImplementedError

    def _adjoint(self, y):
        raise NotImplementedError

    def __call__(self, x):
        if not self.domain.conforms(x):
            raise DimensionError(f"{type(self).__name__}: input does not conform to domain {self.domain}")
        return self._apply(x)

    def adjoint_apply(self, y):
        if not self.codomain.conforms(y):
            raise DimensionError(f"{type(self).__name__}: input does not conform to codomain {self.codomain}")
        return self._adjoint(y)

    @property
    def H(self) -> "LinOp":
        """The adjoint as an operator."""
        return _Adjoint(self)

    def __matmul__(self, other: "LinOp") -> "LinOp":
        return Compose(self, other)

    def __mul__(self, alpha) -> "LinOp":
        return Scaled(alpha, self)

    __rmul__ = __mul__

    def __add__(self, other: "LinOp") -> "LinOp":
        return SumOp(self, other)


class _Adjoint(LinOp):
    def __init__(self, op):
        super().__init__(op.codomain, op.domain, cached_norm=op.cached_norm)
        self.op = op

    def _apply(self, y):
        return self.op._adjoint(y)

    def _adjoint(self, x):
        return self.op._apply(x)

    @property
    def H(self):
        return self.op


class Identity(LinOp):
    def __init__(self, space):
        super().__init__(space, space, cached_norm=1.0)

    def _apply(self, x):
        return x.copy()

    _adjoint = _apply


class Zero(LinOp):
    def __init__(self, domain, codomain=None):
        super().__init__(domain, codomain if codomain is not None else domain, cached_norm=0.0)

    def _apply(self, x):
        return self.codomain.zero()

    def _adjoint(self, y):
        return self.domain.zero()


class Dense(LinOp):
    """Operator given by an explicit matrix acting on 1-D vector spaces."""

    def __init__(self, matrix, domain=None, codomain=None):
        matrix = np.asarray(matrix)
        if matrix.ndim != 2:
            raise UnsupportedShapeError("dense operator needs a 2-D matrix")
        fld = COMPLEX if np.iscomplexobj(matrix) else "real"
        if domain is None:
            domain = Space((matrix.shape[1],), fld)
        if codomain is None:
            codomain = Space((matrix.shape[0],), fld)
        super().__init__(domain, codomain)
        self.matrix = matrix.astype(domain.dtype)

    def _apply(self, x):
        return (self.matrix @ x.ravel()).reshape(self.codomain.shape)

    def _adjoint(self, y):
        return (self.matrix.conj().T @ y.ravel()).reshape(self.domain.shape)


class Diagonal(LinOp):
    """Pointwise multiplication by a fixed array."""

    def __init__(self, weights, space=None):
        weights = np.asarray(weights)
        if space is None:
            space = Space(weights.shape, COMPLEX if np.iscomplexobj(weights) else "real")
        super().__init__(space, space, cached_norm=float(np.max(np.abs(weights))))
        self.weights = weights.astype(space.dtype)

    def _apply(self, x):
        return self.weights * x

    def _adjoint(self, y):
        return np.conj(self.weights) * y


class Dft2(LinOp):
    """Unitary 2-D discrete Fourier transform, so ``norm == 1``."""

    def __init__(self, space):
        if space.field != COMPLEX or len(space.shape) != 2:
            raise UnsupportedShapeError("Dft2 needs a complex 2-D space")
        super().__init__(space, space, cached_norm=1.0)
        self._scale = 1.0 / math.sqrt(space.size)

    def _apply(self, x):
        return np.fft.fft2(x) * self._scale

    def _adjoint(self, y):
        return np.fft.ifft2(y) / self._scale


class Subsample(LinOp):
    """Restriction of an image to the True entries of a boolean mask.

    The adjoint zero-fills, hence ``S S* = I`` on the kept coordinates.
    """

    def __init__(self, mask, field=COMPLEX):
        mask = np.asarray(mask, dtype=bool)
        self.mask = mask
        self.kept = np.flatnonzero(mask.ravel())
        if self.kept.size == 0:
            raise UnsupportedShapeError("subsampling mask keeps no entries")
        domain = Space(mask.shape, field)
        codomain = Space((self.kept.size,), field)
        super().__init__(domain, codomain, cached_norm=1.0)

    def _apply(self, x):
        return x.ravel()[self.kept].copy()

    def _adjoint(self, y):
        out = self.domain.zero()
        out.reshape(-1)[self.kept] = y
        return out


class Gradient2(LinOp):
    """Forward differences on a 2-D grid, stacked into two channels.

    The difference at the last row/column is zero (the grid is extended
    by zero), so the adjoint is the standard negative divergence and the
    norm is bounded by sqrt(8).
    """

    def __init__(self, space):
        if len(space.shape) != 2:
            raise UnsupportedShapeError(f"gradient needs a 2-D grid, got shape {space.shape}")
        if space.shape[0] < 2 or space.shape[1] < 2:
            raise UnsupportedShapeError("both grid sides must be at least 2")
        codomain = Space((2,) + space.shape, space.field)
        super().__init__(space, codomain, cached_norm=math.sqrt(8.0))

    def _apply(self, x):
        out = np.zeros(self.codomain.shape, dtype=self.codomain.dtype)
        out[0, :-1, :] = x[1:, :] - x[:-1, :]
        out[1, :, :-1] = x[:, 1:] - x[:, :-1]
        return out

    def _adjoint(self, y):
        out = self.domain.zero()
        v = y[0][:-1, :]
        h = y[1][:, :-1]
        out[:-1, :] -= v
        out[1:, :] += v
        out[:, :-1] -= h
        out[:, 1:] += h
        return out


class Scaled(LinOp):
    def __init__(self, alpha, op):
        alpha = complex(alpha) if np.iscomplexobj(np.asarray(alpha)) else float(alpha)
        cached = None if op.cached_norm is None else abs(alpha) * op.cached_norm
        super().__init__(op.domain, op.codomain, cached_norm=cached)
        self.alpha = alpha
        self.op = op

    def _apply(self, x):
        return self.alpha * self.op._apply(x)

    def _adjoint(self, y):
        return np.conj(self.alpha) * self.op._adjoint(y)


class SumOp(LinOp):
    def __init__(self, a, b):
        if a.domain != b.domain or a.codomain != b.codomain:
            raise DimensionError("operator sum needs matching domains and codomains")
        cached = None
        if a.cached_norm is not None and b.cached_norm is not None:
            cached = a.cached_norm + b.cached_norm
        super().__init__(a.domain, a.codomain, cached_norm=cached)
        self.a, self.b = a, b

    def _apply(self, x):
        return self.a._apply(x) + self.b._apply(x)

    def _adjoint(self, y):
        return self.a._adjoint(y) + self.b._adjoint(y)


class Compose(LinOp):
    """Composition ``outer @ inner`` applying ``inner`` first."""

    def __init__(self, outer, inner):
        if inner.codomain != outer.domain:
            raise DimensionError("composition: inner codomain must equal outer domain")
        cached = None
        if outer.cached_norm is not None and inner.cached_norm is not None:
            cached = outer.cached_norm * inner.cached_norm
        super().__init__(inner.domain, outer.codomain, cached_norm=cached)
        self.outer, self.inner = outer, inner

    def _apply(self, x):
        return self.outer._apply(self.inner._apply(x))

    def _adjoint(self, y):
        return self.inner._adjoint(self.outer._adjoint(y))


class BlockRow(LinOp):
    """Stack of operators sharing one domain: ``(A x)_i = A_i x``.

    The adjoint sums the row adjoints, ``A* y = sum_i A_i* y_i``.
    """

    def __init__(self, rows):
        rows = list(rows)
        if not rows:
            raise DimensionError("block row operator needs at least one row")
        dom = rows[0].domain
        if any(r.domain != dom for r in rows):
            raise DimensionError("all rows must share the same domain")
        cached = None
        if all(r.cached_norm is not None for r in rows):
            cached = math.sqrt(sum(r.cached_norm ** 2 for r in rows))
        super().__init__(dom, ProductSpace(tuple(r.codomain for r in rows)), cached_norm=cached)
        self.rows = rows

    def __len__(self):
        return len(self.rows)

    def _apply(self, x):
        return [r._apply(x) for r in self.rows]

    def _adjoint(self, y):
        out = self.rows[0]._adjoint(y[0])
        for r, yi in zip(self.rows[1:], y[1:]):
            out += r._adjoint(yi)
        return out


@dataclass(frozen=True)
class NormEstimate:
    """Result of power-method norm estimation.

    ``converged`` is False when the iteration hit ``max_iter`` before the
    Rayleigh quotients settled; the value is then a best effort, not an
    error.
    """

    value: float
    converged: bool
    iterations: int

    def __float__(self):
        return self.value


def operator_norm(op: LinOp, tol: float = 1e-10, max_iter: int = 20000, seed: int = 0) -> NormEstimate:
    """Estimate ``norm(op)`` by power iteration on ``op* op``.

    Starts from a seeded random vector (redrawn once if the start is
    degenerate) and stops when successive singular-value estimates agree
    to relative ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    rng = np.random.default_rng(seed)
    dom, cod = op.domain, op.codomain
    v = dom.random(rng)
    nv = dom.norm(v)
    if nv == 0:
        v = dom.random(rng)
        nv = dom.norm(v)
    v = _scale_vec(v, 1.0 / nv)

    prev = None
    sigma = 0.0
    redrawn = False
    for k in range(1, max_iter + 1):
        u = op(v)
        s2 = cod.norm(u) ** 2
        if k == 1 and s2 < 1e-14 and not redrawn:
            # degenerate start: retry once from a fresh vector
            redrawn = True
            v = dom.random(rng)
            v = _scale_vec(v, 1.0 / dom.norm(v))
            u = op(v)
            s2 = cod.norm(u) ** 2
        sigma = math.sqrt(s2)
        if sigma == 0.0:
            return NormEstimate(0.0, True, k)
        w = op.adjoint_apply(u)
        nw = dom.norm(w)
        if nw == 0.0:
            return NormEstimate(sigma, True, k)
        v = _scale_vec(w, 1.0 / nw)
        if prev is not None and abs(sigma - prev) <= tol * max(sigma, 1e-300):
            return NormEstimate(sigma, True, k)
        prev = sigma
    return NormEstimate(sigma, False, max_iter)


def _scale_vec(x, alpha):
    if isinstance(x, list):
        return [alpha * xi for xi in x]
    return alpha * x


def dense_matrix(op: LinOp, max_size: int = 4096) -> np.ndarray:
    """Assemble the matrix of a complex-linear operator column by column.

    Valid because every shipped operator commutes with complex scalars;
    for real spaces the result is the real matrix.
    """
    nc, nd = op.codomain.size, op.domain.size
    if nc * nd > max_size * max_size:
        raise ValueError(f"dense assembly of a {nc}x{nd} operator refused (max_size={max_size})")
    dtype = np.result_type(
        np.complex128 if _is_complex(op.domain) or _is_complex(op.codomain) else np.float64)
    mat = np.zeros((nc, nd), dtype=dtype)
    for j, e in enumerate(op.domain.basis()):
        mat[:, j] = op.codomain.flatten(op(e))
    return mat


def dense_norm(op: LinOp, max_size: int = 4096) -> float:
    """Largest singular value of the assembled matrix (oracle path)."""
    mat = dense_matrix(op, max_size=max_size)
    return float(np.linalg.svd(mat, compute_uv=False)[0])


def _is_complex(space) -> bool:
    if isinstance(space, ProductSpace):
        return any(p.field == COMPLEX for p in space.parts)
    return space.field == COMPLEX
