"""Step-size planning and spectral certification.

The convergence hypothesis of the stochastic solver is a spectral bound
on the step-size operator

    D = Q E(C_S C_S*) Q,   C_i = sqrt(tau * sigma_i) A_i,   (Q y)_i = y_i / p_i,

namely ``norm(D) < 1`` for plain convergence and ``norm(D) < 1/theta``
for the linear-rate regime.  This module assembles D matrix-free from
the pairwise inclusion probabilities, certifies plans against it, and
provides the closed-form planners: feasibility-targeting ones for merely
convex problems and the optimal linear-rate ones for strongly convex
problems (uniform/optimized serial, block-serial, b-nice, full).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .operators import LinOp, dense_matrix, operator_norm
from .problem import SaddleProblem
from .sampling import Partition, SamplingScheme
from .spaces import ProductSpace

# planners inflate estimated norms by this factor so that certificates
# hold by analytic margin rather than numerical luck
NORM_SLACK = 1e-6

DENSE_CERT_DIM = 512


class StepSizeError(ValueError):
    """Invalid planner input (zero strong convexity, degenerate corner)."""


class PropernessError(ValueError):
    """A scheme assigned zero inclusion probability to some coordinate."""


@dataclass(frozen=True)
class Certificate:
    """Outcome of a spectral check of ``norm(D) < 1/theta``.

    ``inconclusive`` marks a power method that did not converge; such a
    certificate never passes.
    """

    norm_d: float
    method: str
    margin: float
    passed: bool
    inconclusive: bool = False

    def to_text(self) -> str:
        return (f"norm_d={self.norm_d!r} method={self.method} margin={self.margin!r} "
                f"passed={self.passed} inconclusive={self.inconclusive}")


@dataclass(frozen=True)
class StepPlan:
    """Primal/dual step sizes with rate parameter and probabilities.

    When a certificate is attached it is a passing one, so the invariant
    ``norm_d < 1/theta`` holds strictly.
    """

    tau: float
    sigmas: tuple[float, ...]
    theta: float
    probabilities: tuple[float, ...]
    certificate: Certificate | None = None
    degenerate_blocks: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        object.__setattr__(self, "probabilities", tuple(float(p) for p in self.probabilities))
        if self.tau <= 0:
            raise StepSizeError(f"tau must be positive, got {self.tau}")
        if any(s <= 0 for s in self.sigmas):
            raise StepSizeError("all sigmas must be positive")
        if not 0 < self.theta <= 1:
            raise StepSizeError(f"theta must lie in (0, 1], got {self.theta}")
        if any(p <= 0 for p in self.probabilities):
            raise PropernessError("all inclusion probabilities must be positive")
        if self.certificate is not None and not (self.certificate.norm_d < 1.0 / self.theta):
            raise StepSizeError("attached certificate violates norm_d < 1/theta")

    @property
    def n(self) -> int:
        return len(self.sigmas)

    def with_certificate(self, cert: Certificate) -> "StepPlan":
        if not cert.passed:
            raise StepSizeError("only passing certificates may be attached to a plan")
        return replace(self, certificate=cert)

    def is_certified(self) -> bool:
        return self.certificate is not None and self.certificate.passed

    def to_text(self, scheme_id: str = "") -> str:
        lines = [
            f"scheme={scheme_id}",
            f"tau={self.tau!r}",
            "sigmas=" + ",".join(repr(s) for s in self.sigmas),
            f"theta={self.theta!r}",
            "probabilities=" + ",".join(repr(p) for p in self.probabilities),
        ]
        if self.certificate is not None:
            lines.append("certificate " + self.certificate.to_text())
        return "\n".join(lines) + "\n"


class StepSizeOperator(LinOp):
    """Matrix-free D on the dual product space.

    Blocks are ``D_ij = (p_ij / (p_i p_j)) C_i C_j*``; the pairwise
    probabilities come from the sampling scheme, so serial and block
    samplings are block-diagonal automatically.
    """

    def __init__(self, ops, scheme: SamplingScheme, tau: float, sigmas):
        n = len(ops)
        if scheme.n != n or len(sigmas) != n:
            raise StepSizeError("operator count, scheme size and sigma count must agree")
        dual = ProductSpace(tuple(op.codomain for op in ops))
        super().__init__(dual, dual)
        probs = scheme.probabilities()
        if np.any(probs <= 0):
            raise PropernessError("scheme has a zero inclusion probability")
        self.ops = list(ops)
        self.roots = [math.sqrt(tau * s) for s in sigmas]
        coeff = np.empty((n, n))
        for i in range(n):
            for j in range(n):
                coeff[i, j] = scheme.pair_prob(i, j) / (probs[i] * probs[j])
        self.coeff = coeff

    def _apply(self, z):
        w = [r * op.adjoint_apply(zi) for r, op, zi in zip(self.roots, self.ops, z)]
        out = []
        for i, (ri, op) in enumerate(zip(self.roots, self.ops)):
            # the diagonal coefficient p_ii/p_i^2 is always positive
            s = None
            for j, wj in enumerate(w):
                c = self.coeff[i, j]
                if c == 0.0:
                    continue
                s = c * wj if s is None else s + c * wj
            out.append(ri * op(s))
        return out

    _adjoint = _apply  # D is symmetric positive semidefinite


def assemble_D(problem: SaddleProblem, scheme: SamplingScheme, plan: StepPlan) -> StepSizeOperator:
    """Build the step-size operator for a problem/scheme/plan triple."""
    _check_plan_scheme(plan, scheme)
    return StepSizeOperator(problem.ops(), scheme, plan.tau, plan.sigmas)


def _check_plan_scheme(plan: StepPlan, scheme: SamplingScheme, tol: float = 1e-9):
    probs = scheme.probabilities()
    if len(plan.probabilities) != scheme.n:
        raise StepSizeError("plan and scheme disagree on the number of blocks")
    if np.max(np.abs(np.asarray(plan.probabilities) - probs)) > tol:
        raise StepSizeError("plan probabilities are inconsistent with the scheme")


def certify(problem: SaddleProblem, scheme: SamplingScheme, plan: StepPlan,
            theta: float | None = None, tol: float = 1e-10, max_iter: int = 50000,
            seed: int = 0) -> Certificate:
    """Estimate ``norm(D)`` and check it against ``1/theta`` with slack.

    Uses a dense eigenvalue oracle when the total dual dimension is at
    most ``DENSE_CERT_DIM`` and the power method otherwise.  A
    non-converged power method yields an inconclusive (failing)
    certificate rather than a silent pass.
    """
    theta = plan.theta if theta is None else float(theta)
    d_op = assemble_D(problem, scheme, plan)
    if d_op.domain.real_dim <= DENSE_CERT_DIM:
        mat = dense_matrix(d_op)
        norm_d = float(np.max(np.linalg.eigvalsh(mat)))
        method = "dense"
        inconclusive = False
    else:
        est = operator_norm(d_op, tol=tol, max_iter=max_iter, seed=seed)
        norm_d = est.value
        method = "power"
        inconclusive = not est.converged
    margin = 1.0 / theta - norm_d
    passed = (not inconclusive) and (norm_d * (1.0 + NORM_SLACK) < 1.0 / theta)
    return Certificate(norm_d=norm_d, method=method, margin=margin,
                       passed=passed, inconclusive=inconclusive)


def eso_from_D(norm_d: float, probabilities) -> tuple[float, ...]:
    """Expected-separable-overapproximation constants ``v_i = norm_d * p_i``.

    These witness ``E ||C_S* z||^2 <= sum_i p_i v_i ||z_i||^2`` and satisfy
    ``v_i < p_i`` exactly when ``norm_d < 1``.
    """
    if norm_d < 0:
        raise StepSizeError("norm_d must be nonnegative")
    return tuple(norm_d * float(p) for p in probabilities)


# ---------------------------------------------------------------------------
# feasibility planners for merely convex problems (theta = 1)
# ---------------------------------------------------------------------------

def plan_serial_convex(norms, probabilities, gamma: float = 0.99) -> StepPlan:
    """Serial-sampling steps hitting ``tau sigma_i ||A_i||^2 = gamma p_i``.

    ``tau`` is split symmetrically as ``sqrt(gamma * min_i p_i/||A_i||^2)``;
    blocks with zero norm get a free sigma and are flagged degenerate.
    """
    norms = np.asarray(norms, dtype=float)
    probs = np.asarray(probabilities, dtype=float)
    if not 0 < gamma < 1:
        raise StepSizeError(f"gamma must lie in (0, 1), got {gamma}")
    if np.any(probs <= 0):
        raise PropernessError("probabilities must be positive")
    live = norms > 0
    if not np.any(live):
        raise StepSizeError("all blocks have zero norm; nothing to plan")
    tau = math.sqrt(gamma * float(np.min(probs[live] / norms[live] ** 2)))
    sigmas = np.ones_like(norms)
    sigmas[live] = gamma * probs[live] / (tau * norms[live] ** 2)
    return StepPlan(tau=tau, sigmas=tuple(sigmas), theta=1.0,
                    probabilities=tuple(probs),
                    degenerate_blocks=tuple(int(i) for i in np.flatnonzero(~live)))


def plan_bserial_convex(partition: Partition, block_norms, block_probs=None,
                        gamma: float = 0.99) -> StepPlan:
    """Block-sampling steps with ``tau sigma_j ||A~_j||^2 = gamma p~_j``.

    The per-block sigma is broadcast to the block's members, matching the
    convention that every index inside a block shares one dual step.
    """
    m = partition.m
    block_norms = np.asarray(block_norms, dtype=float)
    if block_norms.size != m:
        raise StepSizeError("one norm per block required")
    if block_probs is None:
        block_probs = np.full(m, 1.0 / m)
    block_plan = plan_serial_convex(block_norms, block_probs, gamma=gamma)
    sigmas = np.empty(partition.n)
    probs = np.empty(partition.n)
    degenerate = []
    for j, blk in enumerate(partition.blocks):
        for i in blk:
            sigmas[i] = block_plan.sigmas[j]
            probs[i] = block_plan.probabilities[j]
            if j in block_plan.degenerate_blocks:
                degenerate.append(i)
    return StepPlan(tau=block_plan.tau, sigmas=tuple(sigmas), theta=1.0,
                    probabilities=tuple(probs), degenerate_blocks=tuple(sorted(degenerate)))


class ExpectedGramOperator(LinOp):
    """Matrix-free ``E(A_S A_S*)`` with blocks ``p_ij A_i A_j*``."""

    def __init__(self, ops, scheme: SamplingScheme):
        dual = ProductSpace(tuple(op.codomain for op in ops))
        super().__init__(dual, dual)
        n = len(ops)
        self.ops = list(ops)
        self.pair = np.array([[scheme.pair_prob(i, j) for j in range(n)] for i in range(n)])

    def _apply(self, z):
        w = [op.adjoint_apply(zi) for op, zi in zip(self.ops, z)]
        out = []
        for i, op in enumerate(self.ops):
            s = None
            for j, wj in enumerate(w):
                c = self.pair[i, j]
                if c == 0.0:
                    continue
                s = c * wj if s is None else s + c * wj
            out.append(op(s))
        return out

    _adjoint = _apply


def expected_gram_norm(problem: SaddleProblem, scheme: SamplingScheme,
                       tol: float = 1e-10, max_iter: int = 50000, seed: int = 0) -> float:
    """Norm of ``E(A_S A_S*)`` (dense oracle for small duals, else power)."""
    gram = ExpectedGramOperator(problem.ops(), scheme)
    if gram.domain.real_dim <= DENSE_CERT_DIM:
        return float(np.max(np.linalg.eigvalsh(dense_matrix(gram))))
    est = operator_norm(gram, tol=tol, max_iter=max_iter, seed=seed)
    if not est.converged:
        raise StepSizeError("norm estimate for E(A_S A_S*) did not converge; plan unconfirmed")
    return est.value


def weighted_gram_norm(problem: SaddleProblem, scheme: SamplingScheme, **kwargs) -> float:
    """Norm of ``B = Q E(A_S A_S*) Q``, the uniform-step coupling constant."""
    q = 1.0 / scheme.probabilities()
    dual = ProductSpace(tuple(op.codomain for op in problem.ops()))
    gram = ExpectedGramOperator(problem.ops(), scheme)

    class _Weighted(LinOp):
        def __init__(self):
            super().__init__(dual, dual)

        def _apply(self, z):
            qz = [qi * zi for qi, zi in zip(q, z)]
            gz = gram(qz)
            return [qi * gi for qi, gi in zip(q, gz)]

        _adjoint = _apply

    w = _Weighted()
    if w.domain.real_dim <= DENSE_CERT_DIM:
        return float(np.max(np.linalg.eigvalsh(dense_matrix(w))))
    est = operator_norm(w, **{"tol": 1e-10, "max_iter": 50000, "seed": 0, **kwargs})
    if not est.converged:
        raise StepSizeError("norm estimate for Q E(A_S A_S*) Q did not converge")
    return est.value


def plan_bnice_convex(problem: SaddleProblem, scheme: SamplingScheme, gamma: float = 0.99,
                      tol: float = 1e-10, max_iter: int = 50000, seed: int = 0) -> StepPlan:
    """Uniform steps for b-nice sampling from the expected-Gram norm.

    Sets ``tau = sigma = sqrt(gamma b^2 / (n^2 norm(E(A_S A_S*))))`` so the
    uniform-step feasibility condition holds with factor gamma.
    """
    if not 0 < gamma < 1:
        raise StepSizeError(f"gamma must lie in (0, 1), got {gamma}")
    if scheme.variant != "b_nice":
        raise StepSizeError("plan_bnice_convex expects a b-nice scheme")
    norm_gram = expected_gram_norm(problem, scheme, tol=tol, max_iter=max_iter, seed=seed)
    norm_gram *= 1.0 + NORM_SLACK
    n, b = scheme.n, scheme.b
    product = gamma * b * b / (n * n * norm_gram)
    step = math.sqrt(product)
    return StepPlan(tau=step, sigmas=(step,) * n, theta=1.0,
                    probabilities=tuple(scheme.probabilities()))


# ---------------------------------------------------------------------------
# linear-rate planners for strongly convex problems
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateInputs:
    """Strong-convexity constants and block norms driving the rate formulas.

    ``rho`` in (0,1) trades step size for certificate margin; the default
    0.99 keeps the margin analytic while staying close to the boundary.
    """

    mu_g: float
    mus: tuple[float, ...]
    norms: tuple[float, ...]
    rho: float = 0.99

    def __post_init__(self):
        object.__setattr__(self, "mus", tuple(float(m) for m in self.mus))
        object.__setattr__(self, "norms", tuple(float(v) for v in self.norms))
        if not 0 < self.rho < 1:
            raise StepSizeError(f"rho must lie in (0, 1), got {self.rho}")
        if len(self.mus) != len(self.norms):
            raise StepSizeError("one norm per strong-convexity constant required")

    @property
    def n(self) -> int:
        return len(self.mus)

    def require_strongly_convex(self):
        if self.mu_g <= 0 or any(m <= 0 for m in self.mus):
            raise StepSizeError(
                "linear-rate planning needs strictly positive strong convexity; "
                "use the convex planners (plan_*_convex) otherwise")


def rate_general_sc(inputs: RateInputs, scheme: SamplingScheme, norm_B: float) -> tuple[float, StepPlan]:
    """Optimal uniform-step rate for an arbitrary proper sampling.

    ``norm_B`` is the norm of ``Q E(A_S A_S*) Q``.  With
    ``beta_i = 1 + norm_B p_i / (mu_g mu_i rho^2)`` the rate is
    ``theta = max_i (1 - 2 p_i / (1 + sqrt(beta_i)))`` with the matching
    uniform sigma and tau.
    """
    inputs.require_strongly_convex()
    probs = scheme.probabilities()
    if len(probs) != inputs.n:
        raise StepSizeError("scheme size does not match inputs")
    rho2 = inputs.rho ** 2
    mus = np.asarray(inputs.mus)
    betas = 1.0 + norm_B * probs / (inputs.mu_g * mus * rho2)
    roots = np.sqrt(betas)
    theta = float(np.max(1.0 - 2.0 * probs / (1.0 + roots)))
    if np.any(roots - 1.0 <= 0):
        raise StepSizeError("beta_i = 1 corner (zero coupling); sigma formula degenerates")
    tau_dens = 1.0 - 2.0 * probs + roots
    if np.any(tau_dens <= 0):
        raise StepSizeError("tau denominator 1 - 2 p_i + sqrt(beta_i) is nonpositive")
    sigma = float(np.min(1.0 / (mus * (roots - 1.0))))
    tau = float(np.min(probs / (inputs.mu_g * tau_dens)))
    plan = StepPlan(tau=tau, sigmas=(sigma,) * inputs.n, theta=theta,
                    probabilities=tuple(probs))
    return theta, plan


def rate_serial_uniform_sc(inputs: RateInputs) -> tuple[float, StepPlan]:
    """Linear rate for uniform serial sampling (p_i = 1/n).

    ``alpha_i = 1 + ||A_i||^2 / (mu_g mu_i rho^2)``;
    ``theta = 1 - 2/(n + n max_i sqrt(alpha_i))`` with per-block sigmas.
    """
    inputs.require_strongly_convex()
    n = inputs.n
    roots = _alpha_roots(inputs)
    top = float(np.max(roots))
    if top <= 1.0:
        raise StepSizeError("all blocks decouple (alpha_i = 1); rate formulas degenerate")
    theta = 1.0 - 2.0 / (n + n * top)
    sigmas = tuple(1.0 / (mu * (top - 1.0)) for mu in inputs.mus)
    tau = 1.0 / (inputs.mu_g * (n - 2.0 + n * top))
    plan = StepPlan(tau=tau, sigmas=sigmas, theta=theta, probabilities=(1.0 / n,) * n)
    return theta, plan


def rate_serial_optimized_sc(inputs: RateInputs) -> tuple[float, tuple[float, ...], StepPlan]:
    """Linear rate for serial sampling with optimized probabilities.

    ``p_i = (1 + sqrt(alpha_i)) / (n + sum_j sqrt(alpha_j))`` and
    ``theta = 1 - 2/(n + sum_i sqrt(alpha_i))``; never slower than the
    uniform-probability rate.
    """
    inputs.require_strongly_convex()
    n = inputs.n
    roots = _alpha_roots(inputs)
    total = float(np.sum(roots))
    if np.any(roots <= 1.0):
        raise StepSizeError("a block with alpha_i = 1 makes the optimized sigma degenerate")
    theta = 1.0 - 2.0 / (n + total)
    probs = tuple(float((1.0 + r) / (n + total)) for r in roots)
    sigmas = tuple(1.0 / (mu * (r - 1.0)) for mu, r in zip(inputs.mus, roots))
    tau = 1.0 / (inputs.mu_g * (n - 2.0 + total))
    plan = StepPlan(tau=tau, sigmas=sigmas, theta=theta, probabilities=probs)
    return theta, probs, plan


def _alpha_roots(inputs: RateInputs) -> np.ndarray:
    rho2 = inputs.rho ** 2
    alphas = 1.0 + np.asarray(inputs.norms) ** 2 / (inputs.mu_g * np.asarray(inputs.mus) * rho2)
    return np.sqrt(alphas)


def block_rate_inputs(inputs: RateInputs, partition: Partition, block_norms) -> RateInputs:
    """Reduce per-index inputs to per-block ones: ``mu~_j = min over the block``."""
    block_norms = tuple(float(v) for v in block_norms)
    if len(block_norms) != partition.m:
        raise StepSizeError("one norm per block required")
    mus = tuple(min(inputs.mus[i] for i in blk) for blk in partition.blocks)
    return RateInputs(mu_g=inputs.mu_g, mus=mus, norms=block_norms, rho=inputs.rho)


def rate_bserial_sc(inputs: RateInputs, partition: Partition, block_norms,
                    mode: str = "optimized") -> tuple[float, tuple[float, ...], StepPlan]:
    """Linear rate for block-serial sampling over a given partition.

    Delegates to the serial formulas at block level (with the block
    strong convexity ``mu~_j = min_{i in block} mu_i``) and broadcasts the
    block sigma and probability to member indices.  A single block
    reproduces the full-sampling (deterministic) rate.
    """
    binputs = block_rate_inputs(inputs, partition, block_norms)
    if mode == "uniform":
        theta, bplan = rate_serial_uniform_sc(binputs)
        block_probs = bplan.probabilities
    elif mode == "optimized":
        theta, block_probs, bplan = rate_serial_optimized_sc(binputs)
    else:
        raise StepSizeError(f"mode must be 'uniform' or 'optimized', got {mode!r}")
    sigmas = np.empty(partition.n)
    probs = np.empty(partition.n)
    for j, blk in enumerate(partition.blocks):
        for i in blk:
            sigmas[i] = bplan.sigmas[j]
            probs[i] = block_probs[j]
    plan = StepPlan(tau=bplan.tau, sigmas=tuple(sigmas), theta=theta,
                    probabilities=tuple(probs))
    return theta, tuple(block_probs), plan


def rate_full_sc(inputs: RateInputs, norm_A: float) -> tuple[float, StepPlan]:
    """Deterministic full-sampling rate: one block holding everything."""
    partition = Partition((tuple(range(inputs.n)),), inputs.n)
    theta, _, plan = rate_bserial_sc(inputs, partition, (norm_A,), mode="uniform")
    return theta, plan


def rate_bnice_sc(inputs: RateInputs, b: int, norm_B: float) -> tuple[float, StepPlan]:
    """Linear rate for uniform b-nice sampling (p_i = b/n).

    ``theta = 1 - 2 b / (n + n max_i sqrt(beta_i))`` with the general
    uniform-step sigma/tau formulas evaluated at p_i = b/n.
    """
    inputs.require_strongly_convex()
    n = inputs.n
    if not 1 <= b <= n:
        raise StepSizeError(f"need 1 <= b <= n, got b={b}")
    p = b / n
    rho2 = inputs.rho ** 2
    mus = np.asarray(inputs.mus)
    roots = np.sqrt(1.0 + norm_B * p / (inputs.mu_g * mus * rho2))
    if np.any(roots <= 1.0):
        raise StepSizeError("beta_i = 1 corner (zero coupling); sigma formula degenerates")
    theta = 1.0 - 2.0 * b / (n + n * float(np.max(roots)))
    sigma = float(np.min(1.0 / (mus * (roots - 1.0))))
    tau_dens = 1.0 - 2.0 * p + roots
    if np.any(tau_dens <= 0):
        raise StepSizeError("tau denominator 1 - 2 p + sqrt(beta_i) is nonpositive")
    tau = float(np.min(p / (inputs.mu_g * tau_dens)))
    plan = StepPlan(tau=tau, sigmas=(sigma,) * n, theta=theta, probabilities=(p,) * n)
    return theta, plan


def rate_per_epoch(theta: float, m: int) -> float:
    """Per-epoch rate ``theta^m`` for m iterations per epoch."""
    if not 0 < theta <= 1:
        raise StepSizeError(f"theta must lie in (0, 1], got {theta}")
    if m < 1:
        raise StepSizeError(f"iterations per epoch must be at least 1, got {m}")
    return float(theta) ** int(m)
