"""Stochastic and deterministic primal-dual iterations with metric logging.

The stochastic loop updates a random subset of dual coordinates per
iteration and maintains ``z = A* y`` incrementally so that only the
selected block operators are evaluated.  The deterministic loop is the
classical primal-dual hybrid gradient method with dual extrapolation;
with full sampling the two coincide iterate for iterate.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np

from .problem import SaddleProblem
from .sampling import SamplingScheme
from .spaces import copy_vec
from .stepsize import StepPlan, rate_full_sc, RateInputs
from .operators import operator_norm


class DivergenceError(RuntimeError):
    """Iterates left the finite range; carries the last finite state."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class UncertifiedPlanError(RuntimeError):
    """Run refused because the plan carries no passing certificate."""


class ConsistencyError(RuntimeError):
    """The incremental ``z = A* y`` bookkeeping drifted beyond tolerance."""


@dataclass
class SolverState:
    """Iterate bundle: primal x, dual blocks y, and the z/zbar bookkeeping."""

    x: np.ndarray
    y: list[np.ndarray]
    z: np.ndarray
    zbar: np.ndarray
    k: int = 0

    def copy(self) -> "SolverState":
        return SolverState(self.x.copy(), copy_vec(self.y), self.z.copy(), self.zbar.copy(), self.k)


@dataclass
class EpochRow:
    epoch: int
    error: float
    seconds: float
    checksum: str


@dataclass
class RunRecord:
    """Per-epoch metrics plus run metadata.

    Wall-clock seconds are informational only and excluded from
    reproducibility comparisons; use :meth:`same_metrics` for those.
    """

    rows: list[EpochRow] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=dict)

    def errors(self) -> np.ndarray:
        return np.array([r.error for r in self.rows])

    def epochs(self) -> np.ndarray:
        return np.array([r.epoch for r in self.rows])

    def same_metrics(self, other: "RunRecord") -> bool:
        if len(self.rows) != len(other.rows):
            return False
        return all(a.epoch == b.epoch and a.checksum == b.checksum
                   and (a.error == b.error or (np.isnan(a.error) and np.isnan(b.error)))
                   for a, b in zip(self.rows, other.rows))

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("epoch,error,seconds,checksum\n")
            for r in self.rows:
                err = "" if np.isnan(r.error) else repr(r.error)
                fh.write(f"{r.epoch},{err},{r.seconds!r},{r.checksum}\n")
        with open(str(path) + ".meta.txt", "w") as fh:
            for key in sorted(self.metadata):
                fh.write(f"{key}={self.metadata[key]}\n")


def checksum_state(state: SolverState) -> str:
    h = hashlib.blake2b(digest_size=8)
    h.update(np.ascontiguousarray(state.x).tobytes())
    for yi in state.y:
        h.update(np.ascontiguousarray(yi).tobytes())
    return h.hexdigest()


def relative_primal_error(x, x_ref) -> float:
    """``||x - x_ref|| / ||x_ref||`` against a reference solution."""
    denom = float(np.linalg.norm(x_ref))
    if denom == 0.0:
        raise ValueError("reference norm is zero; relative error undefined")
    return float(np.linalg.norm(x - x_ref)) / denom


def _init_state(problem: SaddleProblem, init: SolverState | None) -> SolverState:
    if init is not None:
        state = init.copy()
        state.z = problem.adjoint_sum(state.y)
        state.zbar = state.z.copy()
        return state
    x = problem.primal.zero()
    y = problem.dual.zero()
    z = problem.primal.zero()
    return SolverState(x, y, z, z.copy(), 0)


def _base_metadata(problem, scheme, plan, m, epochs) -> dict[str, str]:
    return {
        "scheme": scheme.describe(),
        "variant": scheme.variant,
        "n": str(problem.n),
        "m": str(m),
        "epochs": str(epochs),
        "tau": repr(plan.tau),
        "theta": repr(plan.theta),
        "sigmas": ",".join(repr(s) for s in plan.sigmas),
        "certified": str(plan.is_certified()).lower(),
    }


def spdhg_run(problem: SaddleProblem, scheme: SamplingScheme, plan: StepPlan, *,
              epochs: int, rng: np.random.Generator, init: SolverState | None = None,
              reference: np.ndarray | None = None, allow_uncertified: bool = False,
              check_consistency: bool = False, serial_fast: bool = True,
              seed_label: str = "", callback=None) -> tuple[RunRecord, SolverState]:
    """Run the stochastic primal-dual iteration for a number of epochs.

    One epoch is ``m`` iterations, where ``m`` is the scheme's
    iteration-per-epoch count (n for serial, n/b for block samplings, 1
    for full), so different samplings do comparable linear-operator work
    per epoch.  The relative primal error against ``reference`` is logged
    at epoch boundaries only; ``callback(epoch, state)`` fires at the
    same points.

    The plan must carry a passing certificate unless
    ``allow_uncertified=True``, in which case the record is flagged.
    """
    if not plan.is_certified() and not allow_uncertified:
        raise UncertifiedPlanError(
            "plan has no passing certificate; certify it or pass allow_uncertified=True")
    if len(plan.sigmas) != problem.n or scheme.n != problem.n:
        raise ValueError("problem, scheme and plan disagree on the number of blocks")
    probs = scheme.probabilities()
    if np.max(np.abs(np.asarray(plan.probabilities) - probs)) > 1e-9:
        raise ValueError("plan probabilities are inconsistent with the sampling scheme")

    g = problem.g.fresh()
    fstar = [blk.prox for blk in problem.blocks]
    ops = problem.ops()
    sigmas = plan.sigmas
    tau, theta = plan.tau, plan.theta

    m = scheme.iterations_per_epoch()
    state = _init_state(problem, init)
    record = RunRecord(metadata=_base_metadata(problem, scheme, plan, m, epochs))
    if seed_label:
        record.metadata["seed"] = seed_label

    t0 = time.perf_counter()
    _log_epoch(record, 0, state, reference, t0)
    if callback is not None:
        callback(0, state)
    last_finite = state.copy()

    for epoch in range(1, epochs + 1):
        for _ in range(m):
            chosen = scheme.draw(rng)
            x = g.prox(tau, state.x - tau * state.zbar)
            if serial_fast and len(chosen) == 1:
                j = chosen[0]
                y_new = fstar[j].prox(sigmas[j], state.y[j] + sigmas[j] * ops[j](x))
                delta = ops[j].adjoint_apply(y_new - state.y[j])
                state.y[j] = y_new
                state.z = state.z + delta
                state.zbar = state.z + theta * (delta / probs[j])
            else:
                zq = None
                for j in chosen:
                    y_new = fstar[j].prox(sigmas[j], state.y[j] + sigmas[j] * ops[j](x))
                    delta = ops[j].adjoint_apply(y_new - state.y[j])
                    state.y[j] = y_new
                    state.z = state.z + delta
                    contrib = delta / probs[j]
                    zq = contrib if zq is None else zq + contrib
                state.zbar = state.z + theta * zq if zq is not None else state.z.copy()
            state.x = x
            state.k += 1

        if not np.all(np.isfinite(state.x)):
            raise DivergenceError(f"non-finite primal iterate at iteration {state.k}", last_finite)
        if check_consistency:
            _check_z(problem, state)
        _log_epoch(record, epoch, state, reference, t0)
        if callback is not None:
            callback(epoch, state)
        last_finite = state.copy()

    return record, state


def _check_z(problem, state, tol=1e-8):
    zt = problem.adjoint_sum(state.y)
    drift = float(np.linalg.norm(state.z - zt))
    bound = tol * (1.0 + float(np.linalg.norm(zt)))
    if drift > bound:
        raise ConsistencyError(f"z drifted from A*y by {drift} (allowed {bound})")


def _log_epoch(record, epoch, state, reference, t0):
    err = float("nan") if reference is None else relative_primal_error(state.x, reference)
    record.rows.append(EpochRow(epoch, err, time.perf_counter() - t0, checksum_state(state)))


def pdhg_run(problem: SaddleProblem, plan: StepPlan, *, iters: int,
             init: SolverState | None = None, reference: np.ndarray | None = None,
             allow_uncertified: bool = False, record_every: int = 1) -> tuple[RunRecord, SolverState]:
    """Deterministic primal-dual iteration with dual extrapolation.

    Equivalent to the stochastic loop under full sampling with the same
    plan; repeated runs are bitwise identical.  The final relative step
    ``||x_k - x_{k-1}|| / ||x_{k-1}||`` is stored in the record metadata
    as ``final_residual``.
    """
    if not plan.is_certified() and not allow_uncertified:
        raise UncertifiedPlanError(
            "plan has no passing certificate; certify it or pass allow_uncertified=True")
    if len(plan.sigmas) != problem.n:
        raise ValueError("plan and problem disagree on the number of blocks")

    g = problem.g.fresh()
    fstar = [blk.prox for blk in problem.blocks]
    ops = problem.ops()
    tau, theta, sigmas = plan.tau, plan.theta, plan.sigmas

    state = _init_state(problem, init)
    ybar = copy_vec(state.y)
    record = RunRecord(metadata=_base_metadata(problem, _FullDescriber(problem.n), plan, 1, iters))
    t0 = time.perf_counter()
    _log_epoch(record, 0, state, reference, t0)
    last_finite = state.copy()
    residual = float("nan")

    for k in range(1, iters + 1):
        zbar = problem.adjoint_sum(ybar)
        x = g.prox(tau, state.x - tau * zbar)
        y_new = [fstar[i].prox(sigmas[i], state.y[i] + sigmas[i] * ops[i](x))
                 for i in range(problem.n)]
        ybar = [yn + theta * (yn - yo) for yn, yo in zip(y_new, state.y)]
        if k == iters:
            prev_norm = float(np.linalg.norm(state.x))
            residual = float(np.linalg.norm(x - state.x)) / max(prev_norm, 1e-300)
        state.y = y_new
        state.x = x
        state.k += 1
        if k % record_every == 0 or k == iters:
            if not np.all(np.isfinite(state.x)):
                raise DivergenceError(f"non-finite primal iterate at iteration {k}", last_finite)
            _log_epoch(record, k, state, reference, t0)
            last_finite = state.copy()

    state.z = problem.adjoint_sum(state.y)
    state.zbar = problem.adjoint_sum(ybar)
    record.metadata["final_residual"] = repr(residual)
    return record, state


class _FullDescriber:
    """Minimal stand-in so PDHG records carry full-sampling metadata."""

    variant = "full"

    def __init__(self, n):
        self.n = n

    def describe(self):
        return f"full(n={self.n})"


@dataclass(frozen=True)
class Reference:
    """Converged primal iterate with its terminal step-size diagnostic."""

    x: np.ndarray
    residual: float
    iters: int


def compute_reference(problem: SaddleProblem, iters: int, *, gamma: float = 0.99,
                      rho: float = 0.99, norm_A: float | None = None) -> Reference:
    """Long deterministic run used as the ground-truth solution.

    Strongly convex problems use the optimal full-sampling linear-rate
    plan (much faster to converge); otherwise the feasibility plan
    ``tau = sigma = sqrt(gamma)/norm(A)`` with theta = 1 is used.
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    if norm_A is None:
        est = operator_norm(problem.block_row(), tol=1e-12, max_iter=100000, seed=1)
        norm_A = est.value * (1.0 + 1e-6)
    strongly_convex = problem.mu_g > 0 and all(mu > 0 for mu in problem.mus)
    if strongly_convex:
        inputs = RateInputs(mu_g=problem.mu_g, mus=problem.mus,
                            norms=(1.0,) * problem.n, rho=rho)
        _, plan = rate_full_sc(inputs, norm_A)
    else:
        step = (gamma ** 0.5) / norm_A
        plan = StepPlan(tau=step, sigmas=(step,) * problem.n, theta=1.0,
                        probabilities=(1.0,) * problem.n)
    record, state = pdhg_run(problem, plan, iters=iters, allow_uncertified=True,
                             record_every=iters)
    residual = float(record.metadata.get("final_residual", "nan"))
    return Reference(x=state.x, residual=residual, iters=iters)
