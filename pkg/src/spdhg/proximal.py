"""Proximity operators for the primal regularizer and the dual data terms.

Closed forms are used wherever they exist; the total-variation-plus-L2
composite is solved approximately by FISTA on its dual with a persistent
warm-start buffer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .operators import DimensionError, Gradient2
from .spaces import COMPLEX, REAL, Space


class ProxFn:
    """Convex functional with a proximity operator.

    ``mu`` is the strong-convexity constant used by the step-size
    planners (0 for merely convex functionals).
    """

    mu: float = 0.0

    def __call__(self, x) -> float:
        raise NotImplementedError

    def prox(self, step: float, v):
        if step <= 0:
            raise ValueError(f"prox step must be positive, got {step}")
        return self._prox(step, v)

    def _prox(self, step, v):
        raise NotImplementedError

    def fresh(self) -> "ProxFn":
        """A copy safe to confine to one solver run (default: self)."""
        return self


class ZeroFn(ProxFn):
    """The zero functional; its prox is the identity."""

    def __call__(self, x):
        return 0.0

    def _prox(self, step, v):
        return v.copy()


class ShiftedL2(ProxFn):
    """``weight/2 * ||x - shift||^2`` with strong convexity ``weight``."""

    def __init__(self, weight: float, shift=0.0):
        if weight < 0:
            raise ValueError("weight must be nonnegative")
        self.weight = float(weight)
        self.shift = shift
        self.mu = self.weight

    def __call__(self, x):
        return 0.5 * self.weight * float(np.linalg.norm(x - self.shift) ** 2)

    def _prox(self, step, v):
        tw = step * self.weight
        return (v + tw * self.shift) / (1.0 + tw)


class L1Norm(ProxFn):
    """``weight * ||x||_1``; the prox is soft thresholding (complex moduli)."""

    def __init__(self, weight: float = 1.0):
        if weight < 0:
            raise ValueError("weight must be nonnegative")
        self.weight = float(weight)

    def __call__(self, x):
        return self.weight * float(np.sum(np.abs(x)))

    def _prox(self, step, v):
        return soft_threshold(v, step * self.weight)


class DataFitConjugate(ProxFn):
    """Convex conjugate of ``y -> 1/2 ||y - b||^2``.

    The conjugate is ``1/2 ||y||^2 + <b, y>``, which is 1-strongly convex,
    and its prox has the closed form ``(v - sigma b) / (1 + sigma)``.
    """

    mu = 1.0

    def __init__(self, b):
        self.b = np.asarray(b)

    def __call__(self, y):
        return 0.5 * float(np.linalg.norm(y) ** 2) + float(np.real(np.vdot(self.b, y)))

    def _prox(self, step, v):
        return prox_l2conj_datafit(step, self.b, v)


def prox_l2conj_datafit(sigma: float, b, v):
    """Closed-form prox of the data-term conjugate: ``(v - sigma b)/(1 + sigma)``."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    b = np.asarray(b)
    v = np.asarray(v)
    if b.shape != v.shape:
        raise DimensionError(f"shape mismatch: data {b.shape} vs input {v.shape}")
    return (v - sigma * b) / (1.0 + sigma)


def soft_threshold(x, t: float):
    """Shrink complex (or real) entries toward zero by ``t`` in modulus."""
    mag = np.abs(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(mag > t, 1.0 - t / np.where(mag > 0, mag, 1.0), 0.0)
    return x * scale


@dataclass
class FistaConfig:
    """Inner-solver budget and warm-start state for the TV+L2 prox.

    The buffer holds the dual variable of the inner problem between
    prox calls; it is owned by a single solver run.
    """

    inner_iters: int = 20
    warm_start_buffer: np.ndarray | None = None
    isotropic: bool = False

    def __post_init__(self):
        if self.inner_iters < 1:
            raise ValueError("inner_iters must be at least 1")


def prox_tv_l2(cfg: FistaConfig, tau: float, lambda1: float, lambda2: float, v):
    """Approximate prox of ``tau*(lambda1 ||grad u||_1 + lambda2/2 ||u||^2)``.

    Runs ``cfg.inner_iters`` FISTA steps on the dual of the TV term: the
    dual variable lives on the two gradient channels and is projected
    entrywise onto the disc of radius ``tau*lambda1`` (per pixel across
    channels in the isotropic variant).  ``cfg.warm_start_buffer`` is
    read as the starting dual point and updated in place.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("regularization weights must be nonnegative")
    v = np.asarray(v)
    if v.ndim != 2:
        raise DimensionError("TV+L2 prox expects a 2-D image")

    s = tau * lambda1
    q = tau * lambda2
    if s == 0.0 and q == 0.0:
        if cfg.warm_start_buffer is not None:
            cfg.warm_start_buffer[...] = 0
        return v.copy()

    space = Space(v.shape, COMPLEX if np.iscomplexobj(v) else REAL)
    grad = Gradient2(space)
    shape = grad.codomain.shape
    if cfg.warm_start_buffer is None:
        cfg.warm_start_buffer = np.zeros(shape, dtype=grad.codomain.dtype)
    elif cfg.warm_start_buffer.shape != shape:
        raise DimensionError(
            f"warm-start buffer shape {cfg.warm_start_buffer.shape} does not match gradient shape {shape}")

    w = cfg.warm_start_buffer.astype(grad.codomain.dtype, copy=True)
    w = _project_dual(w, s, cfg.isotropic)
    y = w.copy()
    w_prev = w
    t = 1.0
    # minimizing ||v - grad* w||^2 / (2 (1+q)); the 1/8 step absorbs the
    # Lipschitz bound ||grad||^2 <= 8 of the forward differences
    for _ in range(cfg.inner_iters):
        residual = v - grad.adjoint_apply(y)
        w_new = _project_dual(y + 0.125 * grad(residual), s, cfg.isotropic)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = w_new + ((t - 1.0) / t_new) * (w_new - w_prev)
        w_prev = w_new
        t = t_new

    cfg.warm_start_buffer[...] = w_prev
    return (v - grad.adjoint_apply(w_prev)) / (1.0 + q)


def _project_dual(w, radius: float, isotropic: bool):
    if radius == 0.0:
        return np.zeros_like(w)
    if isotropic:
        mag = np.sqrt(np.sum(np.abs(w) ** 2, axis=0, keepdims=True))
    else:
        mag = np.abs(w)
    scale = np.minimum(1.0, radius / np.where(mag > 0, mag, 1.0))
    return w * scale


class TvPlusL2(ProxFn):
    """``lambda1 ||grad x||_1 + lambda2/2 ||x||^2`` on a fixed image shape.

    Strong convexity comes from the quadratic part alone (``mu = lambda2``).
    The default norm is anisotropic (plain l1 of all difference entries);
    pass ``isotropic=True`` to couple the two gradient channels per pixel.
    """

    def __init__(self, shape, lambda1: float, lambda2: float,
                 inner_iters: int = 20, isotropic: bool = False):
        if lambda1 < 0 or lambda2 < 0:
            raise ValueError("regularization weights must be nonnegative")
        self.shape = tuple(shape)
        self.lambda1 = float(lambda1)
        self.lambda2 = float(lambda2)
        self.mu = self.lambda2
        self.config = FistaConfig(inner_iters=inner_iters, isotropic=isotropic)

    def __call__(self, x):
        space = Space(self.shape, COMPLEX if np.iscomplexobj(x) else REAL)
        g = Gradient2(space)(x)
        if self.config.isotropic:
            tv = float(np.sum(np.sqrt(np.sum(np.abs(g) ** 2, axis=0))))
        else:
            tv = float(np.sum(np.abs(g)))
        return self.lambda1 * tv + 0.5 * self.lambda2 * float(np.linalg.norm(x) ** 2)

    def _prox(self, step, v):
        if v.shape != self.shape:
            raise DimensionError(f"expected image of shape {self.shape}, got {v.shape}")
        return prox_tv_l2(self.config, step, self.lambda1, self.lambda2, v)

    def fresh(self) -> "TvPlusL2":
        return TvPlusL2(self.shape, self.lambda1, self.lambda2,
                        inner_iters=self.config.inner_iters,
                        isotropic=self.config.isotropic)

    def with_inner_iters(self, inner_iters: int) -> "TvPlusL2":
        return TvPlusL2(self.shape, self.lambda1, self.lambda2,
                        inner_iters=inner_iters, isotropic=self.config.isotropic)


def prox(fn: ProxFn, step: float, v):
    """Evaluate ``argmin_u 1/2 ||v-u||^2 + step * fn(u)``."""
    return fn.prox(step, v)
