import math

import numpy as np
import pytest

from spdhg import (BlockRow, InstanceSpec, build_instance, build_problem, coil_value,
                   compute_reference, dense_norm, load_instance, make_coil_maps,
                   make_mask, make_phantom, operator_norm, read_complex_array,
                   save_instance, write_complex_array)
from spdhg.mri import InstanceError


SMALL = InstanceSpec(shape=(16, 16), coils=4, mask_fraction=0.5, seed=7)


# ---------------------------------------------------------------------------
# phantom
# ---------------------------------------------------------------------------

def test_phantom_deterministic_and_bounded():
    a = make_phantom((16, 16), "blobs", seed=3)
    b = make_phantom((16, 16), "blobs", seed=3)
    assert np.array_equal(a, b)
    assert np.all(np.abs(a) <= 1.0 + 1e-12)
    assert make_phantom((16, 16), "blobs", seed=4)[3, 3] != a[3, 3]


def test_phantom_has_nonzero_tv():
    for kind in ("blobs", "rings"):
        x = make_phantom((16, 16), kind, seed=1)
        tv = np.abs(np.diff(x, axis=0)).sum() + np.abs(np.diff(x, axis=1)).sum()
        assert tv > 0


def test_phantom_rejects_small_shape():
    with pytest.raises(InstanceError):
        make_phantom((4, 16), "blobs", seed=0)


# ---------------------------------------------------------------------------
# coil maps
# ---------------------------------------------------------------------------

def test_single_coil_no_decay_is_uniform():
    coils = make_coil_maps((8, 8), 1, decay=0.0, phase_coeff=0.0)
    assert np.allclose(coils.maps[0], 1.0)


def test_coil_rotational_symmetry_on_polar_probe():
    shape, n, decay = (32, 32), 12, 1.0
    cr, cc = (shape[0] - 1) / 2, (shape[1] - 1) / 2
    step = 2 * math.pi / n
    psis = np.linspace(0, 2 * math.pi, 37)
    for r in (3.0, 7.5, 12.0):
        rows = cr + r * np.sin(psis)
        cols = cc + r * np.cos(psis)
        rows_rot = cr + r * np.sin(psis + step)
        cols_rot = cc + r * np.cos(psis + step)
        for j in range(n - 1):
            a = coil_value(shape, n, decay, j, rows, cols)
            b = coil_value(shape, n, decay, j + 1, rows_rot, cols_rot)
            assert np.max(np.abs(a - b)) < 1e-6


def test_coil_sos_floor_for_default_geometry():
    coils = make_coil_maps((32, 32), 12, decay=1.0)
    assert coils.min_sos() > 0.05


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------

def test_full_fraction_keeps_everything():
    assert np.all(make_mask((16, 16), "uniform_rows", 1.0, 0))
    assert np.all(make_mask((16, 16), "full", 0.3, 0))


def test_mask_kept_count_exact():
    for frac in (0.25, 0.5, 0.75):
        mask = make_mask((32, 16), "uniform_rows", frac, 0)
        kept_rows = int(mask.any(axis=1).sum())
        assert kept_rows == round(frac * 32)
        assert np.all(mask.sum(axis=1) % 16 == 0)   # whole rows only


def test_mask_center_band_always_present():
    mask = make_mask((32, 8), "uniform_rows", 0.25, 0)
    shifted = np.fft.fftshift(mask, axes=0)
    assert shifted[15].all() and shifted[16].all()


def test_mask_fraction_too_small_rejected():
    with pytest.raises(InstanceError):
        make_mask((32, 32), "uniform_rows", 0.01, 0)


def test_mask_random_kind_seeded():
    a = make_mask((32, 8), "random", 0.5, seed=5)
    b = make_mask((32, 8), "random", 0.5, seed=5)
    c = make_mask((32, 8), "random", 0.5, seed=6)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_subsampling_identity_on_kept_coordinates(rng):
    from spdhg import Subsample
    mask = make_mask((16, 16), "uniform_rows", 0.5, 0)
    op = Subsample(mask)
    y = op.codomain.random(rng)
    assert np.linalg.norm(op(op.adjoint_apply(y)) - y) < 1e-14


# ---------------------------------------------------------------------------
# assembled problems
# ---------------------------------------------------------------------------

def test_instance_deterministic_from_spec():
    a = build_instance(SMALL)
    b = build_instance(SMALL)
    assert np.array_equal(a.x_true, b.x_true)
    assert all(np.array_equal(x, y) for x, y in zip(a.data, b.data))
    assert a.lambda1 == b.lambda1 and a.lambda2 == b.lambda2


def test_forward_ops_pass_adjoint_test(rng):
    inst = build_instance(SMALL)
    for op in inst.forward_ops():
        worst = 0.0
        for _ in range(25):
            x = op.domain.random(rng)
            y = op.codomain.random(rng)
            lhs = op.codomain.inner(op(x), y)
            rhs = op.domain.inner(x, op.adjoint_apply(y))
            worst = max(worst, abs(lhs - rhs) / (op.domain.norm(x) * op.codomain.norm(y)))
        assert worst < 1e-10


def test_coil_norm_bounded_by_peak_sensitivity():
    inst = build_instance(SMALL)
    for i, op in enumerate(inst.forward_ops()):
        est = operator_norm(op, tol=1e-10, max_iter=40000, seed=2)
        peak = float(np.max(np.abs(inst.coils.maps[i])))
        assert est.value <= peak + 1e-8
        assert op.cached_norm == pytest.approx(peak)


def test_block_norm_sandwich():
    inst = build_instance(SMALL)
    ops = inst.forward_ops()
    singles = [dense_norm(op, max_size=8192) if op.domain.size <= 64 else
               operator_norm(op, tol=1e-11, max_iter=60000, seed=3).value for op in ops]
    block = (0, 2)
    est = operator_norm(BlockRow([ops[i] for i in block]), tol=1e-11, max_iter=60000, seed=3)
    lower = max(singles[i] for i in block)
    upper = math.sqrt(sum(singles[i] ** 2 for i in block))
    assert lower - 1e-8 <= est.value <= upper + 1e-8


def test_strong_convexity_bookkeeping():
    inst, problem = build_problem(SMALL)
    assert problem.mu_g == inst.lambda2
    assert all(mu == 1.0 for mu in problem.mus)


def test_auto_lambdas_hit_target_fractions():
    inst = build_instance(SMALL)
    clean_problem_data_term = 0.5 * sum(
        float(np.linalg.norm(op(inst.x_true) - b) ** 2)
        for op, b in zip(inst.forward_ops(), inst.data))
    tv = float(np.abs(np.diff(inst.x_true, axis=0)).sum() +
               np.abs(np.diff(inst.x_true, axis=1)).sum())
    frac1 = inst.lambda1 * tv / clean_problem_data_term
    frac2 = 0.5 * inst.lambda2 * float(np.linalg.norm(inst.x_true) ** 2) / clean_problem_data_term
    assert 0.01 <= frac1 <= 0.05
    assert 0.01 <= frac2 <= 0.06


def test_unitary_noiseless_instance_recovers_truth():
    spec = InstanceSpec(shape=(16, 16), coils=1, mask_kind="full", mask_fraction=1.0,
                        coil_decay=0.0, noise_snr_db=None, lambda1=0.0, lambda2=0.0,
                        seed=11)
    inst, problem = build_problem(spec)
    assert inst.noise_sigma == 0.0
    ref = compute_reference(problem, 3000)
    rel = np.linalg.norm(ref.x - inst.x_true) / np.linalg.norm(inst.x_true)
    assert rel < 1e-8


# ---------------------------------------------------------------------------
# instance directory format
# ---------------------------------------------------------------------------

def test_complex_array_roundtrip(tmp_path, rng):
    arr = rng.standard_normal((3, 5)) + 1j * rng.standard_normal((3, 5))
    write_complex_array(str(tmp_path / "arr"), arr)
    back = read_complex_array(str(tmp_path / "arr"))
    assert np.array_equal(arr, back)
    hdr = (tmp_path / "arr.hdr").read_text().splitlines()
    assert hdr[0] == "3 5"
    assert "little-endian" in hdr[1]


def test_instance_roundtrip(tmp_path):
    inst = build_instance(SMALL)
    save_instance(inst, str(tmp_path / "inst"))
    back = load_instance(str(tmp_path / "inst"))
    assert back.spec == inst.spec
    assert np.array_equal(back.x_true, inst.x_true)
    assert np.array_equal(back.mask, inst.mask)
    assert np.array_equal(back.coils.maps, inst.coils.maps)
    assert all(np.array_equal(a, b) for a, b in zip(back.data, inst.data))
    assert back.lambda1 == inst.lambda1 and back.noise_sigma == inst.noise_sigma
