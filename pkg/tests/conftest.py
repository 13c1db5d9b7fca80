import numpy as np
import pytest

from spdhg import DataFitConjugate, Dense, DualBlock, SaddleProblem, ShiftedL2, Space


def random_saddle_problem(seed, n=3, dims=(2, 3, 4), primal_dim=3, mu_g=0.5,
                          mus=None, complex_blocks=False):
    """Small dense instance: n data-fit blocks over a shared primal space."""
    rng = np.random.default_rng(seed)
    primal = Space((primal_dim,), "complex" if complex_blocks else "real")
    blocks = []
    mus = mus or (1.0,) * n
    for d, mu in zip(dims, mus):
        mat = rng.standard_normal((d, primal_dim))
        if complex_blocks:
            mat = mat + 1j * rng.standard_normal((d, primal_dim))
        b = rng.standard_normal(d)
        if complex_blocks:
            b = b + 1j * rng.standard_normal(d)
        blocks.append(DualBlock(Dense(mat, domain=primal), DataFitConjugate(b), mu))
    return SaddleProblem(primal, blocks, ShiftedL2(mu_g), mu_g)


def scalar_quadratic_problem(a, b, mu_g=1.0):
    """n scalar blocks: min_x sum_i 1/2 (a_i x - b_i)^2 + mu_g/2 x^2.

    Returns (problem, xhat, yhat) with the analytic saddle point.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    primal = Space((1,), "real")
    blocks = [DualBlock(Dense([[ai]], domain=primal), DataFitConjugate(np.array([bi])), 1.0)
              for ai, bi in zip(a, b)]
    problem = SaddleProblem(primal, blocks, ShiftedL2(mu_g), mu_g)
    xhat = np.array([np.sum(a * b) / (np.sum(a * a) + mu_g)])
    yhat = [np.array([ai * xhat[0] - bi]) for ai, bi in zip(a, b)]
    return problem, xhat, yhat


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def pytest_runtest_logreport(report):
    # one visible pass/fail line per acceptance criterion
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        outcome = "PASS" if report.passed else "FAIL"
        print(f"\nACCEPTANCE {name}: {outcome}", flush=True)
