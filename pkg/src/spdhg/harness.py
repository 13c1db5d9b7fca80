"""Experiment driver: planning, averaged runs, partition sweeps, CSV output.

All commands consume one JSON config (see README for the schema), derive
every random seed from the config seed, and write plain CSV files with
sidecar key-value metadata so the plotting tool can stay dumb.  The
curves CSV carries the empirical relative primal error (columns mean,
min, max) and a precomputed dashed-line column ``theory`` that lives on
the squared-error scale, where the linear rate per epoch applies.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as sla

from .mri import InstanceSpec, MriInstance, build_instance, read_complex_array, \
    saddle_problem, save_instance, load_instance, write_complex_array
from .problem import SaddleProblem
from .sampling import BNiceSampling, FullSampling, Partition, PartitionSampling, \
    SamplingScheme, SerialSampling, consecutive_partition, count_partitions, \
    enumerate_partitions, equidistant_partition, serial_uniform
from .solver import compute_reference, pdhg_run, spdhg_run
from .stepsize import NORM_SLACK, RateInputs, StepPlan, certify, plan_bserial_convex, \
    plan_bnice_convex, plan_serial_convex, rate_bnice_sc, rate_bserial_sc, rate_full_sc, \
    rate_per_epoch, rate_serial_optimized_sc, rate_serial_uniform_sc, weighted_gram_norm


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


class SchemeFailure(RuntimeError):
    """A single scheme could not be planned or certified."""


class BudgetError(RuntimeError):
    """Partition enumeration would exceed the configured budget."""


@dataclass(frozen=True)
class SchemeSpec:
    variant: str
    b: int = 1
    probabilities: str = "uniform"
    partition: str | None = None
    label: str | None = None

    def __post_init__(self):
        if self.variant not in ("serial", "b_serial", "b_nice", "full"):
            raise ConfigError(f"unknown scheme variant {self.variant!r}")
        if self.probabilities not in ("uniform", "optimized"):
            raise ConfigError(f"probabilities must be 'uniform' or 'optimized', got {self.probabilities!r}")

    def resolved_label(self) -> str:
        if self.label:
            return self.label
        if self.variant == "serial":
            return f"serial_{self.probabilities}"
        if self.variant == "full":
            return "pdhg"
        if self.variant == "b_nice":
            return f"bnice{self.b}"
        part = self.partition or "consecutive"
        tag = part if part in ("consecutive", "equidistant") else "custom"
        return f"bserial{self.b}_{self.probabilities}_{tag}"


@dataclass(frozen=True)
class ExperimentConfig:
    instance: InstanceSpec = field(default_factory=InstanceSpec)
    schemes: tuple[SchemeSpec, ...] = ()
    plan_mode: str = "strongly_convex"
    gamma: float = 0.99
    rho: float = 0.99
    runs: int = 10
    epochs: int = 100
    reference_iters: int = 10000
    fista_inner_per_epoch: int | None = 100
    partition_b: int = 4
    partition_rate: str = "os"
    partition_budget: int = 100000
    cert_tol: float = 1e-9
    cert_max_iter: int = 50000
    seed: int = 1234

    def __post_init__(self):
        if self.plan_mode not in ("convex", "strongly_convex"):
            raise ConfigError(f"plan_mode must be 'convex' or 'strongly_convex', got {self.plan_mode!r}")
        if self.partition_rate not in ("os", "us"):
            raise ConfigError(f"partition_rate must be 'os' or 'us', got {self.partition_rate!r}")
        if self.runs < 1:
            raise ConfigError("runs must be at least 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "instance" in d:
            d["instance"] = InstanceSpec.from_dict(d["instance"])
        if "schemes" in d:
            d["schemes"] = tuple(SchemeSpec(**s) for s in d["schemes"])
        return cls(**d)

    @classmethod
    def from_json(cls, path: str) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def load_config(path: str, seed: int | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(path)
    if seed is not None:
        cfg = ExperimentConfig.from_dict({**_config_dict(cfg), "seed": int(seed)})
    return cfg


def _config_dict(cfg: ExperimentConfig) -> dict:
    return {
        "instance": cfg.instance.to_dict(),
        "schemes": [vars(s) for s in cfg.schemes],
        "plan_mode": cfg.plan_mode, "gamma": cfg.gamma, "rho": cfg.rho,
        "runs": cfg.runs, "epochs": cfg.epochs, "reference_iters": cfg.reference_iters,
        "fista_inner_per_epoch": cfg.fista_inner_per_epoch,
        "partition_b": cfg.partition_b, "partition_rate": cfg.partition_rate,
        "partition_budget": cfg.partition_budget, "cert_tol": cfg.cert_tol,
        "cert_max_iter": cfg.cert_max_iter, "seed": cfg.seed,
    }


class Workbench:
    """Shared lazily-computed state for one config: instance, norms, reference."""

    def __init__(self, config: ExperimentConfig, out_dir: str):
        self.config = config
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self._inst: MriInstance | None = None
        self._ops = None
        self._coil_norms: np.ndarray | None = None
        self._block_norms: dict[tuple[int, ...], float] = {}
        self._full_norm: float | None = None
        self._reference: np.ndarray | None = None

    @property
    def inst(self) -> MriInstance:
        if self._inst is None:
            inst_dir = os.path.join(self.out_dir, "instance")
            if os.path.isdir(inst_dir):
                inst = load_instance(inst_dir)
                if inst.spec != self.config.instance:
                    raise ConfigError(f"{inst_dir} holds a different instance than the config")
                self._inst = inst
            else:
                self._inst = build_instance(self.config.instance)
                save_instance(self._inst, inst_dir)
        return self._inst

    def problem(self, inner_iters: int) -> SaddleProblem:
        return saddle_problem(self.inst, inner_iters=inner_iters)

    @property
    def n(self) -> int:
        return self.inst.n

    def coil_norms(self) -> np.ndarray:
        if self._coil_norms is None:
            self._coil_norms = np.array([self.block_norm((i,)) for i in range(self.n)])
        return self._coil_norms

    def block_norm(self, block: tuple[int, ...]) -> float:
        """Norm of the stacked coil operator for one block, cached by index set.

        Lanczos on the Hermitian normal operator is used instead of plain
        power iteration: the masked-DFT spectra are clustered at the top,
        which stalls the power method but not a Krylov solver.  Values are
        inflated by the standard slack so they remain upper-bound safe.
        """
        key = tuple(sorted(block))
        if key not in self._block_norms:
            if self._ops is None:
                self._ops = self.inst.forward_ops()
            ops = [self._ops[i] for i in key]
            shape = self.inst.x_true.shape
            size = self.inst.x_true.size

            def matvec(v):
                x = v.reshape(shape)
                out = np.zeros(shape, dtype=np.complex128)
                for op in ops:
                    out += op.adjoint_apply(op(x))
                return out.ravel()

            gram = sla.LinearOperator((size, size), matvec=matvec, dtype=np.complex128)
            v0 = np.sum(np.abs(self.inst.coils.maps[list(key)]) ** 2, axis=0).ravel()
            v0 = v0.astype(np.complex128)
            lam = sla.eigsh(gram, k=1, which="LA", tol=1e-9, v0=v0,
                            return_eigenvectors=False)[0]
            self._block_norms[key] = math.sqrt(float(lam)) * (1.0 + NORM_SLACK)
        return self._block_norms[key]

    def full_norm(self) -> float:
        if self._full_norm is None:
            self._full_norm = self.block_norm(tuple(range(self.n)))
        return self._full_norm

    def rate_inputs(self) -> RateInputs:
        problem_mu_g = self.inst.lambda2
        return RateInputs(mu_g=problem_mu_g, mus=(1.0,) * self.n,
                          norms=tuple(self.coil_norms()), rho=self.config.rho)

    # -- reference --------------------------------------------------------

    def reference(self) -> np.ndarray:
        if self._reference is None:
            ref_dir = os.path.join(self.out_dir, "reference")
            prefix = os.path.join(ref_dir, "reference")
            if os.path.isfile(prefix + ".bin"):
                self._reference = read_complex_array(prefix)
            else:
                self._reference = self._compute_and_save_reference(ref_dir, prefix)
        return self._reference

    def _compute_and_save_reference(self, ref_dir, prefix) -> np.ndarray:
        inner = self.config.fista_inner_per_epoch or 20
        problem = self.problem(inner_iters=inner)
        ref = compute_reference(problem, self.config.reference_iters,
                                gamma=self.config.gamma, rho=self.config.rho,
                                norm_A=self.full_norm())
        os.makedirs(ref_dir, exist_ok=True)
        write_complex_array(prefix, ref.x)
        with open(os.path.join(ref_dir, "reference_meta.txt"), "w") as fh:
            fh.write(f"iters={ref.iters}\n")
            fh.write(f"residual={ref.residual!r}\n")
            fh.write(f"fista_inner={inner}\n")
        return ref.x

    # -- planning ----------------------------------------------------------

    def resolve_partition(self, spec: SchemeSpec) -> Partition:
        n, b = self.n, spec.b
        name = spec.partition or "consecutive"
        if name == "consecutive":
            return consecutive_partition(n, b)
        if name == "equidistant":
            return equidistant_partition(n, b)
        part = Partition.from_text(name, n)
        return part

    def plan_scheme(self, spec: SchemeSpec, inner_iters: int
                    ) -> tuple[SamplingScheme, StepPlan, float, SaddleProblem]:
        """Build scheme + certified plan; returns (scheme, plan, theta, problem)."""
        problem = self.problem(inner_iters)
        mode = self.config.plan_mode
        if mode == "strongly_convex":
            scheme, plan, theta = self._plan_sc(spec, problem)
        else:
            scheme, plan, theta = self._plan_convex(spec, problem)
        cert = certify(problem, scheme, plan, tol=self.config.cert_tol,
                       max_iter=self.config.cert_max_iter)
        if not cert.passed:
            raise SchemeFailure(
                f"scheme {spec.resolved_label()}: certificate failed ({cert.to_text().strip()})")
        return scheme, plan.with_certificate(cert), theta, problem

    def _plan_sc(self, spec, problem):
        inputs = self.rate_inputs()
        n = self.n
        if spec.variant == "serial":
            if spec.probabilities == "optimized":
                theta, probs, plan = rate_serial_optimized_sc(inputs)
                return SerialSampling(np.array(probs)), plan, theta
            theta, plan = rate_serial_uniform_sc(inputs)
            return serial_uniform(n), plan, theta
        if spec.variant == "full":
            theta, plan = rate_full_sc(inputs, self.full_norm())
            return FullSampling(n), plan, theta
        if spec.variant == "b_serial":
            partition = self.resolve_partition(spec)
            block_norms = [self.block_norm(blk) for blk in partition.blocks]
            mode = "optimized" if spec.probabilities == "optimized" else "uniform"
            theta, block_probs, plan = rate_bserial_sc(inputs, partition, block_norms, mode=mode)
            return PartitionSampling(partition, np.array(block_probs)), plan, theta
        if spec.variant == "b_nice":
            if spec.probabilities == "optimized":
                raise ConfigError("b-nice sampling is uniform by construction")
            scheme = BNiceSampling(n, spec.b)
            norm_b = weighted_gram_norm(problem, scheme) * (1.0 + NORM_SLACK)
            theta, plan = rate_bnice_sc(inputs, spec.b, norm_b)
            return scheme, plan, theta
        raise ConfigError(f"unhandled variant {spec.variant!r}")

    def _plan_convex(self, spec, problem):
        n = self.n
        if spec.probabilities == "optimized":
            raise ConfigError("optimized probabilities need strongly convex planning")
        if spec.variant == "serial":
            plan = plan_serial_convex(self.coil_norms(), np.full(n, 1.0 / n), self.config.gamma)
            return serial_uniform(n), plan, 1.0
        if spec.variant == "full":
            partition = Partition((tuple(range(n)),), n)
            plan = plan_bserial_convex(partition, [self.full_norm()], gamma=self.config.gamma)
            return FullSampling(n), plan, 1.0
        if spec.variant == "b_serial":
            partition = self.resolve_partition(spec)
            block_norms = [self.block_norm(blk) for blk in partition.blocks]
            plan = plan_bserial_convex(partition, block_norms, gamma=self.config.gamma)
            return PartitionSampling(partition), plan, 1.0
        if spec.variant == "b_nice":
            scheme = BNiceSampling(n, spec.b)
            plan = plan_bnice_convex(problem, scheme, gamma=self.config.gamma)
            return scheme, plan, 1.0
        raise ConfigError(f"unhandled variant {spec.variant!r}")


# ---------------------------------------------------------------------------
# run command
# ---------------------------------------------------------------------------

def _one_run(args):
    problem, scheme, plan, epochs, seed, reference = args
    rng = np.random.default_rng(seed)
    record, _ = spdhg_run(problem, scheme, plan, epochs=epochs, rng=rng,
                          reference=reference, seed_label=str(seed))
    return record


def cmd_run(config: ExperimentConfig, out_dir: str, jobs: int = 1) -> int:
    """Averaged convergence curves per scheme; returns the exit code."""
    bench = Workbench(config, out_dir)
    reference = bench.reference()
    failures = []
    for idx, spec in enumerate(config.schemes):
        label = spec.resolved_label()
        try:
            _run_scheme(bench, spec, idx, reference, jobs)
        except (SchemeFailure, ConfigError) as exc:
            failures.append(f"{label}: {exc}")
    if failures:
        with open(os.path.join(out_dir, "failures.txt"), "w") as fh:
            fh.write("\n".join(failures) + "\n")
        return 2
    return 0


def _run_scheme(bench: Workbench, spec: SchemeSpec, idx: int, reference, jobs: int):
    config = bench.config
    label = spec.resolved_label()
    m_probe = _iterations_per_epoch(spec, bench.n)
    inner = _inner_per_call(config.fista_inner_per_epoch, m_probe)
    scheme, plan, theta, problem = bench.plan_scheme(spec, inner)
    m = scheme.iterations_per_epoch()

    if spec.variant == "full":
        record, _ = pdhg_run(problem, plan, iters=config.epochs, reference=reference)
        records = [record]
    else:
        base = config.seed + 10000 * idx
        tasks = [(problem, scheme, plan, config.epochs, base + r, reference)
                 for r in range(config.runs)]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                records = list(pool.map(_one_run, tasks))
        else:
            records = [_one_run(t) for t in tasks]

    errors = np.stack([rec.errors() for rec in records])
    epochs_axis = records[0].epochs()
    mean = errors.mean(axis=0)
    lo = errors.min(axis=0)
    hi = errors.max(axis=0)
    theory = None
    if plan.theta < 1.0:
        per_epoch = rate_per_epoch(plan.theta, m)
        theory = (mean[0] ** 2) * per_epoch ** epochs_axis

    path = os.path.join(bench.out_dir, f"curves_{label}.csv")
    with open(path, "w") as fh:
        fh.write("epoch,mean,min,max,theory\n")
        for i, ep in enumerate(epochs_axis):
            th = "" if theory is None else repr(float(theory[i]))
            fh.write(f"{int(ep)},{float(mean[i])!r},{float(lo[i])!r},{float(hi[i])!r},{th}\n")
    meta = dict(records[0].metadata)
    meta.update({
        "label": label, "runs": str(len(records)), "epochs": str(config.epochs),
        "fista_inner_per_call": str(_inner_per_call(config.fista_inner_per_epoch, m)),
        "theta_per_epoch": repr(rate_per_epoch(plan.theta, m)),
        "plan": plan.to_text(scheme.describe()).replace("\n", "; "),
        "seed_base": str(config.seed + 10000 * idx),
    })
    with open(path + ".meta.txt", "w") as fh:
        for key in sorted(meta):
            fh.write(f"{key}={meta[key]}\n")


def _iterations_per_epoch(spec: SchemeSpec, n: int) -> int:
    if spec.variant == "serial":
        return n
    if spec.variant == "full":
        return 1
    if n % spec.b != 0:
        raise ConfigError(f"epoch accounting needs b | n; got b={spec.b}, n={n}")
    return n // spec.b


def _inner_per_call(per_epoch: int | None, m: int) -> int:
    if per_epoch is None:
        return 20
    return max(1, round(per_epoch / m))


# ---------------------------------------------------------------------------
# partition sweep commands
# ---------------------------------------------------------------------------

def sweep_partitions(bench: Workbench, b: int, mode: str):
    """Yield (partition, theta_iter, theta_epoch) over every partition."""
    n = bench.n
    count = count_partitions(n, b)
    if count > bench.config.partition_budget:
        raise BudgetError(
            f"(n={n}, b={b}) has {count} partitions, over the budget {bench.config.partition_budget}")
    inputs = bench.rate_inputs()
    m = n // b
    for part in enumerate_partitions(n, b):
        block_norms = [bench.block_norm(blk) for blk in part.blocks]
        theta, _, _ = rate_bserial_sc(inputs, part, block_norms, mode=mode)
        yield part, theta, rate_per_epoch(theta, m)


def cmd_partitions(config: ExperimentConfig, out_dir: str) -> int:
    """Rate histogram over all partitions at one batch size, plus extremals."""
    bench = Workbench(config, out_dir)
    b = config.partition_b
    mode = "optimized" if config.partition_rate == "os" else "uniform"
    rows = list(sweep_partitions(bench, b, mode))

    path = os.path.join(out_dir, f"partitions_b{b}_{config.partition_rate}.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["partition", "theta_iter", "theta_epoch"])
        for part, th_it, th_ep in rows:
            writer.writerow([part.to_text(), repr(th_it), repr(th_ep)])

    by_rate = sorted(rows, key=lambda r: (r[2], r[0].to_text()))
    best, worst = by_rate[0], by_rate[-1]
    named = {
        "consecutive": consecutive_partition(bench.n, b),
        "equidistant": equidistant_partition(bench.n, b),
    }
    lines = [
        f"count={len(rows)}",
        f"best_partition={best[0].to_text()}", f"best_theta_epoch={best[2]!r}",
        f"worst_partition={worst[0].to_text()}", f"worst_theta_epoch={worst[2]!r}",
    ]
    lookup = {r[0].to_text(): r[2] for r in rows}
    for name, part in named.items():
        lines.append(f"{name}_partition={part.to_text()}")
        lines.append(f"{name}_theta_epoch={lookup[part.to_text()]!r}")
    with open(os.path.join(out_dir, f"partitions_b{b}_{config.partition_rate}_extremal.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


def cmd_rates(config: ExperimentConfig, out_dir: str) -> int:
    """Per-batch-size rate distributions: block-serial sweep plus b-nice.

    At b = 1 and b = n the two samplings are the same process, so the
    b-nice value is emitted as the (single-partition) block-serial one.
    """
    bench = Workbench(config, out_dir)
    n = bench.n
    inputs = bench.rate_inputs()
    skipped = []
    path = os.path.join(out_dir, "rates_per_b.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["b", "kind", "partition", "theta_iter", "theta_epoch"])
        for b in [d for d in range(1, n + 1) if n % d == 0]:
            m = n // b
            try:
                us_rows = list(sweep_partitions(bench, b, "uniform"))
            except BudgetError as exc:
                skipped.append(str(exc))
                continue
            for part, th_it, th_ep in us_rows:
                writer.writerow([b, "b_serial", part.to_text(), repr(th_it), repr(th_ep)])
            if b == 1 or b == n:
                # identical sampling processes at the edges, so identical rates
                th_it, th_ep = us_rows[0][1], us_rows[0][2]
            else:
                scheme = BNiceSampling(n, b)
                problem = bench.problem(inner_iters=20)
                norm_b = weighted_gram_norm(problem, scheme) * (1.0 + NORM_SLACK)
                th_it, _ = rate_bnice_sc(inputs, b, norm_b)
                th_ep = rate_per_epoch(th_it, m)
            writer.writerow([b, "b_nice", "", repr(th_it), repr(th_ep)])
    if skipped:
        with open(os.path.join(out_dir, "rates_skipped.txt"), "w") as fh:
            fh.write("\n".join(skipped) + "\n")
        return 2
    return 0


def cmd_reference(config: ExperimentConfig, out_dir: str) -> int:
    """Persist the instance directory and its converged reference (idempotent)."""
    bench = Workbench(config, out_dir)
    bench.reference()
    return 0
