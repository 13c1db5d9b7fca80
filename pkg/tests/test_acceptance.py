"""Acceptance gate: one test per criterion, with stated tolerances and budgets.

The synthetic 32x32, 12-coil instance is shared session-wide; its
long-run reference is computed once through the harness and reused by
the qualitative reproductions.
"""

import csv
import math
import time
from itertools import combinations

import numpy as np
import pytest

from spdhg import (BNiceSampling, BlockRow, DataFitConjugate, Dense, DualBlock,
                   FistaConfig, FullSampling, Gradient2, InstanceSpec, Partition,
                   PartitionSampling, RateInputs, SaddleProblem, SerialSampling,
                   ShiftedL2, Space, StepPlan, assemble_D, b_serial_uniform, certify,
                   consecutive_partition, count_partitions, dense_matrix, dense_norm,
                   enumerate_partitions, operator_norm, pdhg_run, plan_bnice_convex,
                   plan_bserial_convex, plan_serial_convex, prox_l2conj_datafit,
                   prox_tv_l2, rate_bnice_sc, rate_bserial_sc, rate_full_sc,
                   rate_general_sc, rate_serial_optimized_sc, rate_serial_uniform_sc,
                   serial_uniform, spdhg_run, weighted_gram_norm)
from spdhg.harness import (ExperimentConfig, SchemeSpec, Workbench, cmd_partitions,
                           cmd_rates, cmd_reference, cmd_run)

from conftest import random_saddle_problem, scalar_quadratic_problem


ACC_INSTANCE = InstanceSpec()   # the shipped 32x32, 12-coil default


@pytest.fixture(scope="session")
def acceptance_out(tmp_path_factory):
    """Instance + 1e4-iteration reference persisted once for all criteria."""
    out = tmp_path_factory.mktemp("acceptance")
    config = ExperimentConfig(
        instance=ACC_INSTANCE,
        schemes=(SchemeSpec("serial", probabilities="optimized", label="serial_opt"),
                 SchemeSpec("full", label="pdhg")),
        runs=10, epochs=250, reference_iters=10000, fista_inner_per_epoch=100,
        partition_b=4, partition_rate="os", cert_tol=1e-8, seed=2024)
    assert cmd_reference(config, str(out)) == 0
    return out, config


def dense_norm_of_D(problem, scheme, plan):
    return float(np.max(np.linalg.eigvalsh(dense_matrix(assemble_D(problem, scheme, plan)))))


# ---------------------------------------------------------------------------
# combinatorics
# ---------------------------------------------------------------------------

def test_partition_counting():
    t0 = time.monotonic()
    assert count_partitions(12, 4) == 5775
    assert count_partitions(12, 6) == 462
    assert count_partitions(12, 3) == 15400
    assert time.monotonic() - t0 < 1.0
    for n in range(1, 10):
        for b in range(1, n + 1):
            if n % b == 0:
                assert sum(1 for _ in enumerate_partitions(n, b)) == count_partitions(n, b)


# ---------------------------------------------------------------------------
# step-size operator oracle equivalence
# ---------------------------------------------------------------------------

def oracle_form(problem, scheme, plan, z):
    probs = scheme.probabilities()
    qz = [zi / p for zi, p in zip(z, probs)]
    total = 0.0
    for subset, p in scheme.atoms():
        acc = None
        for i in subset:
            term = math.sqrt(plan.tau * plan.sigmas[i]) * problem.blocks[i].op.adjoint_apply(qz[i])
            acc = term if acc is None else acc + term
        total += p * float(np.linalg.norm(acc) ** 2)
    return total


def test_step_operator_oracle_equivalence():
    t0 = time.monotonic()
    rng = np.random.default_rng(77)
    for seed in range(10):
        for scheme_maker in (
                lambda n: serial_uniform(n),
                lambda n: BNiceSampling(n, 2),
                lambda n: PartitionSampling(Partition(((0, 1), (2,)), 3)),
                lambda n: b_serial_uniform(4, 2)):
            scheme = scheme_maker(3)
            n = scheme.n
            dims = tuple(int(d) for d in
                         np.random.default_rng(seed).integers(2, 5, size=n))
            problem = random_saddle_problem(300 + seed, n=n, dims=dims)
            sigmas = tuple(0.05 + 0.04 * i for i in range(n))
            plan = StepPlan(tau=0.2, sigmas=sigmas, theta=1.0,
                            probabilities=tuple(scheme.probabilities()))
            d_op = assemble_D(problem, scheme, plan)
            for _ in range(100):
                z = d_op.domain.random(rng)
                lhs = d_op.domain.inner(d_op(z), z)
                rhs = oracle_form(problem, scheme, plan, z)
                assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(rhs))
            est = operator_norm(d_op, tol=1e-13, max_iter=100000, seed=seed)
            oracle = float(np.max(np.linalg.eigvalsh(dense_matrix(d_op))))
            assert abs(est.value - oracle) / oracle < 1e-6
    assert time.monotonic() - t0 < 30.0


# ---------------------------------------------------------------------------
# planner certification
# ---------------------------------------------------------------------------

def test_planner_certification_no_false_passes():
    for seed in range(20):
        r = np.random.default_rng(seed)
        dims = tuple(int(d) for d in r.integers(2, 5, size=3))
        problem = random_saddle_problem(400 + seed, n=3, dims=dims,
                                        mu_g=float(r.uniform(0.2, 2.0)))
        norms = [dense_norm(b.op) for b in problem.blocks]
        partition = Partition(((0, 1), (2,)), 3)
        block_norms = [dense_norm(BlockRow([problem.blocks[i].op for i in blk]))
                       for blk in partition.blocks]
        inputs = RateInputs(mu_g=problem.mu_g, mus=problem.mus,
                            norms=tuple(norms), rho=0.99)
        bnice = BNiceSampling(3, 2)

        cases = []
        cases.append((serial_uniform(3),
                      plan_serial_convex(norms, np.full(3, 1 / 3), gamma=0.99)))
        cases.append((PartitionSampling(partition),
                      plan_bserial_convex(partition, block_norms, gamma=0.99)))
        cases.append((bnice, plan_bnice_convex(problem, bnice, gamma=0.99)))

        theta, plan = rate_serial_uniform_sc(inputs)
        cases.append((serial_uniform(3), plan))
        theta, probs, plan = rate_serial_optimized_sc(inputs)
        cases.append((SerialSampling(np.array(probs)), plan))
        for mode in ("uniform", "optimized"):
            theta, bp, plan = rate_bserial_sc(inputs, partition, block_norms, mode=mode)
            cases.append((PartitionSampling(partition, np.array(bp)), plan))
        norm_b = weighted_gram_norm(problem, bnice)
        theta, plan = rate_bnice_sc(inputs, 2, norm_b * (1 + 1e-6))
        cases.append((bnice, plan))
        theta, plan = rate_general_sc(inputs, serial_uniform(3),
                                      weighted_gram_norm(problem, serial_uniform(3)) * (1 + 1e-6))
        cases.append((serial_uniform(3), plan))
        theta, plan = rate_full_sc(inputs, dense_norm(problem.block_row()))
        cases.append((FullSampling(3), plan))

        for scheme, plan in cases:
            cert = certify(problem, scheme, plan)
            assert cert.passed and cert.margin > 0
            oracle = dense_norm_of_D(problem, scheme, plan)
            oracle_pass = oracle * (1 + 1e-6) < 1.0 / plan.theta
            assert cert.passed == oracle_pass
            assert abs(cert.norm_d - oracle) <= 1e-6 * max(oracle, 1e-12)


# ---------------------------------------------------------------------------
# rate formula properties
# ---------------------------------------------------------------------------

def test_rate_formula_properties():
    r = np.random.default_rng(51)
    for _ in range(50):
        n = int(r.integers(1, 8))
        inputs = RateInputs(mu_g=float(r.uniform(0.05, 2.0)),
                            mus=tuple(r.uniform(0.1, 3.0, n)),
                            norms=tuple(r.uniform(0.1, 5.0, n)),
                            rho=float(r.uniform(0.5, 0.999)))
        theta_us, _ = rate_serial_uniform_sc(inputs)
        theta_os, probs, _ = rate_serial_optimized_sc(inputs)
        assert theta_os <= theta_us + 1e-15

    # b = n reproduces the closed-form full-sampling rate from both paths
    for seed in range(10):
        rr = np.random.default_rng(seed)
        n = int(rr.integers(2, 6))
        inputs = RateInputs(mu_g=float(rr.uniform(0.1, 1.5)),
                            mus=tuple(rr.uniform(0.2, 2.0, n)),
                            norms=tuple(rr.uniform(0.2, 3.0, n)),
                            rho=0.99)
        norm_a = float(rr.uniform(0.5, 4.0))
        mu_min = min(inputs.mus)
        expected = 1.0 - 2.0 / (1.0 + math.sqrt(
            1.0 + norm_a ** 2 / (inputs.mu_g * mu_min * inputs.rho ** 2)))
        whole = Partition((tuple(range(n)),), n)
        for mode in ("uniform", "optimized"):
            theta_bs, _, _ = rate_bserial_sc(inputs, whole, (norm_a,), mode=mode)
            assert abs(theta_bs - expected) < 1e-12
        theta_bn, _ = rate_bnice_sc(inputs, n, norm_a ** 2)
        assert abs(theta_bn - expected) < 1e-12

    # symmetric instances give uniform optimized probabilities
    for n in (2, 5, 8):
        inputs = RateInputs(mu_g=0.7, mus=(1.3,) * n, norms=(2.1,) * n, rho=0.9)
        _, probs, _ = rate_serial_optimized_sc(inputs)
        assert max(abs(p - 1.0 / n) for p in probs) < 1e-12


# ---------------------------------------------------------------------------
# algorithm correctness
# ---------------------------------------------------------------------------

def test_algorithm_correctness():
    problem, xhat, _ = scalar_quadratic_problem([1.0, 1.8, 0.6, 1.2], [0.4, -0.9, 0.3, 1.1])
    inputs = RateInputs(mu_g=problem.mu_g, mus=problem.mus,
                        norms=tuple(dense_norm(b.op) for b in problem.blocks), rho=0.99)
    theta, plan = rate_full_sc(inputs, dense_norm(problem.block_row()))
    plan = plan.with_certificate(certify(problem, FullSampling(4), plan))
    rec_s, st_s = spdhg_run(problem, FullSampling(4), plan, epochs=80,
                            rng=np.random.default_rng(0), reference=xhat)
    rec_p, st_p = pdhg_run(problem, plan, iters=80, reference=xhat)
    assert np.linalg.norm(st_s.x - st_p.x) < 1e-12
    assert all(np.linalg.norm(a - b) < 1e-12 for a, b in zip(st_s.y, st_p.y))

    # z-consistency at every epoch checkpoint of a stochastic run
    scheme = serial_uniform(4)
    theta_us, plan_us = rate_serial_uniform_sc(inputs)
    plan_us = plan_us.with_certificate(certify(problem, scheme, plan_us))
    drifts = []

    def check(_, state):
        zt = problem.adjoint_sum(state.y)
        drifts.append(float(np.linalg.norm(state.z - zt)) /
                      (1.0 + float(np.linalg.norm(zt))))

    spdhg_run(problem, scheme, plan_us, epochs=100, rng=np.random.default_rng(1),
              callback=check, check_consistency=True)
    assert max(drifts) <= 1e-8

    # saddle point is a fixed point to 1e-14 over 100 iterations
    from spdhg import Identity
    primal = Space((1,), "real")
    fp_problem = SaddleProblem(primal, [DualBlock(Identity(primal),
                                                  DataFitConjugate(np.zeros(1)), 1.0)],
                               ShiftedL2(1.0), 1.0)
    fp_plan = StepPlan(tau=0.7, sigmas=(0.7,), theta=1.0, probabilities=(1.0,))
    fp_plan = fp_plan.with_certificate(certify(fp_problem, FullSampling(1), fp_plan))
    _, st = spdhg_run(fp_problem, FullSampling(1), fp_plan, epochs=100,
                      rng=np.random.default_rng(2))
    assert abs(st.x[0]) <= 1e-14 and abs(st.y[0][0]) <= 1e-14


# ---------------------------------------------------------------------------
# linear rate reproduction
# ---------------------------------------------------------------------------

def test_linear_rate_reproduction():
    t0 = time.monotonic()
    problem, xhat, yhat = scalar_quadratic_problem([1.0, 2.0, 0.7, 1.5], [0.3, -1.0, 0.5, 2.0])
    inputs = RateInputs(mu_g=problem.mu_g, mus=problem.mus,
                        norms=tuple(dense_norm(b.op) for b in problem.blocks), rho=0.99)

    theta_us, plan_us = rate_serial_uniform_sc(inputs)
    theta_os, probs, plan_os = rate_serial_optimized_sc(inputs)
    cases = [(serial_uniform(4), plan_us, theta_us),
             (SerialSampling(np.array(probs)), plan_os, theta_os)]

    for scheme, plan, theta in cases:
        plan = plan.with_certificate(certify(problem, scheme, plan))
        norm_d = dense_norm_of_D(problem, scheme, plan)
        c = 1.0 - theta * norm_d
        assert c > 0

        def weighted(state, cval):
            xs = (1.0 / plan.tau + 2.0 * problem.mu_g) * float(
                np.linalg.norm(state.x - xhat) ** 2)
            ys = sum((1.0 / s + 2.0 * mu) / p * float(np.linalg.norm(yi - yh) ** 2)
                     for s, p, mu, yi, yh in zip(plan.sigmas, plan.probabilities,
                                                 problem.mus, state.y, yhat))
            return cval * xs + ys

        finals = []
        for run in range(100):
            _, st = spdhg_run(problem, scheme, plan, epochs=50,
                              rng=np.random.default_rng(7000 + run))
            finals.append(weighted(st, c))

        class Zero:
            x = np.zeros(1)
            y = [np.zeros(1)] * 4

        init = weighted(Zero(), 1.0)
        bound = theta ** 200 * init
        assert np.mean(finals) <= 1.1 * bound
    assert time.monotonic() - t0 < 120.0


# ---------------------------------------------------------------------------
# qualitative reproductions on the shipped synthetic instance
# ---------------------------------------------------------------------------

def first_crossing(rows, level):
    for row in rows:
        if float(row["mean"]) < level:
            return int(row["epoch"])
    return None


def test_fig4_style_serial_beats_full(acceptance_out):
    t0 = time.monotonic()
    out, config = acceptance_out
    meta = dict(line.split("=", 1) for line in
                (out / "reference" / "reference_meta.txt").read_text().splitlines())
    assert int(meta["iters"]) == 10000
    assert float(meta["residual"]) < 1e-8

    assert cmd_run(config, str(out)) == 0
    with open(out / "curves_serial_opt.csv") as fh:
        serial_rows = list(csv.DictReader(fh))
    with open(out / "curves_pdhg.csv") as fh:
        pdhg_rows = list(csv.DictReader(fh))

    cross_serial = first_crossing(serial_rows, 1e-2)
    cross_pdhg = first_crossing(pdhg_rows, 1e-2)
    assert cross_serial is not None and cross_pdhg is not None
    assert cross_serial < cross_pdhg

    assert float(serial_rows[-1]["mean"]) < 1e-2
    assert float(pdhg_rows[-1]["mean"]) < 1e-2
    assert time.monotonic() - t0 < 600.0


def test_fig6_7_style_partition_sweep(acceptance_out):
    t0 = time.monotonic()
    out, config = acceptance_out
    assert cmd_partitions(config, str(out)) == 0
    with open(out / "partitions_b4_os.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5775
    rates = {r["partition"]: float(r["theta_epoch"]) for r in rows}
    values = np.array(list(rates.values()))
    assert values.max() - values.min() > 0
    best = values.min()
    consecutive = rates[consecutive_partition(12, 4).to_text()]
    assert best < consecutive
    assert time.monotonic() - t0 < 300.0


def test_fig8_style_bnice_vs_bserial(acceptance_out):
    t0 = time.monotonic()
    out, config = acceptance_out
    assert cmd_rates(config, str(out)) == 0
    per_b = {}
    with open(out / "rates_per_b.csv") as fh:
        for row in csv.DictReader(fh):
            b = int(row["b"])
            per_b.setdefault(b, {"us": [], "un": None})
            if row["kind"] == "b_serial":
                per_b[b]["us"].append(row["theta_epoch"])
            else:
                per_b[b]["un"] = row["theta_epoch"]
    assert sorted(per_b) == [1, 2, 3, 4, 6, 12]
    for b in (2, 3, 4, 6):
        us = np.array([float(v) for v in per_b[b]["us"]])
        assert float(per_b[b]["un"]) <= np.median(us)
    for b in (1, 12):
        assert per_b[b]["un"] == per_b[b]["us"][0]   # exact, same sampling
    assert time.monotonic() - t0 < 600.0


# ---------------------------------------------------------------------------
# proximal oracles
# ---------------------------------------------------------------------------

def test_proximal_oracles():
    # closed forms against coordinatewise grid search at 1e-4 resolution
    grid = np.arange(-4.0, 4.0 + 1e-4, 1e-4)
    rng = np.random.default_rng(15)
    b = rng.uniform(-1, 1, 3)
    v = rng.uniform(-2, 2, 3)
    sigma = 0.8
    out = prox_l2conj_datafit(sigma, b, v)
    for k in range(3):
        vals = 0.5 * (v[k] - grid) ** 2 + sigma * (0.5 * grid ** 2 + b[k] * grid)
        assert abs(out[k] - grid[np.argmin(vals)]) <= 1e-4

    from spdhg import L1Norm, ShiftedL2
    lam, step = 0.6, 0.9
    soft = L1Norm(lam).prox(step, v)
    for k in range(3):
        vals = 0.5 * (v[k] - grid) ** 2 + step * lam * np.abs(grid)
        assert abs(soft[k] - grid[np.argmin(vals)]) <= 1e-4
    sq = ShiftedL2(0.7, shift=0.2).prox(step, v)
    for k in range(3):
        vals = 0.5 * (v[k] - grid) ** 2 + step * 0.35 * (grid - 0.2) ** 2
        assert abs(sq[k] - grid[np.argmin(vals)]) <= 1e-4

    # TV+L2 prox at 500 inner iterations against the slow dual oracle
    img = np.random.default_rng(4).standard_normal((4, 4))
    tau, lam1, lam2 = 1.0, 0.1, 0.01
    s, q = tau * lam1, tau * lam2
    grad = Gradient2(Space((4, 4), "real"))
    lip = dense_norm(grad) ** 2 / (1.0 + q)
    w = np.zeros(grad.codomain.shape)
    for _ in range(10 ** 5):
        res = img - grad.adjoint_apply(w)
        w = np.clip(w + grad(res) / (lip * (1.0 + q)), -s, s)
    oracle = (img - grad.adjoint_apply(w)) / (1.0 + q)
    fast = prox_tv_l2(FistaConfig(inner_iters=500), tau, lam1, lam2, img)
    assert np.linalg.norm(fast - oracle) / np.linalg.norm(oracle) < 1e-5
