import csv
import json
import os

import numpy as np
import pytest

from spdhg import InstanceSpec, count_partitions
from spdhg.cli import main as cli_main
from spdhg.harness import (BudgetError, ConfigError, ExperimentConfig, SchemeSpec,
                           Workbench, cmd_partitions, cmd_rates, cmd_reference,
                           cmd_run, load_config)

SMALL = InstanceSpec(shape=(16, 16), coils=4, mask_fraction=0.5, seed=7)


def small_config(**overrides):
    base = dict(instance=SMALL,
                schemes=(SchemeSpec("serial", probabilities="optimized", label="serial_opt"),
                         SchemeSpec("full", label="pdhg")),
                runs=3, epochs=8, reference_iters=400, fista_inner_per_epoch=40,
                partition_b=2, partition_budget=1000, cert_tol=1e-8, seed=99)
    base.update(overrides)
    return ExperimentConfig(**base)


def read_curves(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    config = small_config()
    assert cmd_run(config, str(out)) == 0
    return out, config


# ---------------------------------------------------------------------------
# cmd_run
# ---------------------------------------------------------------------------

def test_run_writes_expected_artifacts(run_dir):
    out, config = run_dir
    assert (out / "instance" / "meta.txt").exists()
    assert (out / "reference" / "reference.bin").exists()
    assert (out / "curves_serial_opt.csv").exists()
    assert (out / "curves_pdhg.csv").exists()
    assert not (out / "failures.txt").exists()


def test_curves_schema_and_rows(run_dir):
    out, config = run_dir
    rows = read_curves(out / "curves_serial_opt.csv")
    assert list(rows[0].keys()) == ["epoch", "mean", "min", "max", "theory"]
    assert len(rows) == config.epochs + 1
    assert [int(r["epoch"]) for r in rows] == list(range(config.epochs + 1))
    for r in rows:
        assert float(r["min"]) <= float(r["mean"]) <= float(r["max"])
        assert r["theory"] != ""      # strongly convex planning populates theory


def test_deterministic_full_scheme_collapses_envelope(run_dir):
    out, _ = run_dir
    for r in read_curves(out / "curves_pdhg.csv"):
        assert r["mean"] == r["min"] == r["max"]


def test_meta_sidecar_carries_plan_and_certificate(run_dir):
    out, _ = run_dir
    meta = (out / "curves_serial_opt.csv.meta.txt").read_text()
    assert "certified=true" in meta
    assert "theta_per_epoch=" in meta
    assert "norm_d=" in meta
    assert "seed_base=" in meta


def test_same_config_gives_identical_csv_bytes(tmp_path):
    config = small_config(runs=2, epochs=5)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cmd_run(config, str(out1)) == 0
    assert cmd_run(config, str(out2)) == 0
    for name in ("curves_serial_opt.csv", "curves_pdhg.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_jobs_do_not_change_results(tmp_path):
    config = small_config(runs=2, epochs=4,
                          schemes=(SchemeSpec("serial", probabilities="optimized",
                                              label="serial_opt"),))
    out1, out2 = tmp_path / "j1", tmp_path / "j2"
    assert cmd_run(config, str(out1), jobs=1) == 0
    assert cmd_run(config, str(out2), jobs=2) == 0
    assert (out1 / "curves_serial_opt.csv").read_bytes() == (out2 / "curves_serial_opt.csv").read_bytes()


def test_scheme_failure_isolated(tmp_path):
    config = small_config(schemes=(SchemeSpec("b_serial", b=3, label="broken"),
                                   SchemeSpec("full", label="pdhg")),
                          runs=1, epochs=3)
    code = cmd_run(config, str(tmp_path))
    assert code == 2
    assert (tmp_path / "failures.txt").exists()
    assert "broken" in (tmp_path / "failures.txt").read_text()
    assert (tmp_path / "curves_pdhg.csv").exists()


# ---------------------------------------------------------------------------
# cmd_reference
# ---------------------------------------------------------------------------

def test_reference_idempotent(tmp_path):
    config = small_config()
    out = str(tmp_path)
    assert cmd_reference(config, out) == 0
    ref_path = tmp_path / "reference" / "reference.bin"
    first = ref_path.read_bytes()
    stamp = ref_path.stat().st_mtime_ns
    assert cmd_reference(config, out) == 0
    assert ref_path.read_bytes() == first
    assert ref_path.stat().st_mtime_ns == stamp
    meta = (tmp_path / "reference" / "reference_meta.txt").read_text()
    assert "residual=" in meta


def test_reference_rejects_foreign_instance_dir(tmp_path):
    config = small_config()
    assert cmd_reference(config, str(tmp_path)) == 0
    other = small_config(instance=InstanceSpec(shape=(16, 16), coils=4, seed=8))
    with pytest.raises(ConfigError):
        Workbench(other, str(tmp_path)).inst


# ---------------------------------------------------------------------------
# cmd_partitions / cmd_rates
# ---------------------------------------------------------------------------

def test_partitions_sweep_small(tmp_path):
    config = small_config(partition_b=2, partition_rate="os")
    assert cmd_partitions(config, str(tmp_path)) == 0
    with open(tmp_path / "partitions_b2_os.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == count_partitions(4, 2) == 3
    parts = {r["partition"] for r in rows}
    assert "1,2|3,4" in parts and "1,3|2,4" in parts
    extremal = (tmp_path / "partitions_b2_os_extremal.txt").read_text()
    assert "best_partition=" in extremal and "consecutive_theta_epoch=" in extremal
    best = float(dict(l.split("=") for l in extremal.splitlines())["best_theta_epoch"])
    assert all(best <= float(r["theta_epoch"]) + 1e-15 for r in rows)


def test_partitions_budget_refused(tmp_path):
    config = small_config(partition_budget=2)
    with pytest.raises(BudgetError) as err:
        cmd_partitions(config, str(tmp_path))
    assert "3 partitions" in str(err.value)


def test_rates_per_b_edges_exact(tmp_path):
    config = small_config()
    assert cmd_rates(config, str(tmp_path)) == 0
    with open(tmp_path / "rates_per_b.csv") as fh:
        rows = list(csv.DictReader(fh))
    by_b = {}
    for r in rows:
        by_b.setdefault(int(r["b"]), {"us": [], "un": None})
        if r["kind"] == "b_serial":
            by_b[int(r["b"])]["us"].append(r["theta_epoch"])
        else:
            by_b[int(r["b"])]["un"] = r["theta_epoch"]
    assert sorted(by_b) == [1, 2, 4]
    assert len(by_b[2]["us"]) == 3
    # identical sampling processes at the edges give identical rates
    assert by_b[1]["un"] == by_b[1]["us"][0]
    assert by_b[4]["un"] == by_b[4]["us"][0]


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def config_json(tmp_path, **overrides):
    cfg = {
        "instance": {"shape": [16, 16], "coils": 4, "mask_fraction": 0.5, "seed": 7},
        "schemes": [{"variant": "full", "label": "pdhg"}],
        "runs": 1, "epochs": 3, "reference_iters": 200,
        "fista_inner_per_epoch": 20, "partition_b": 2, "cert_tol": 1e-8, "seed": 5,
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_cli_run_and_exit_codes(tmp_path):
    cfg = config_json(tmp_path)
    out = str(tmp_path / "out")
    assert cli_main(["run", "--config", cfg, "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "curves_pdhg.csv"))


def test_cli_seed_override_changes_outputs(tmp_path):
    cfg = config_json(tmp_path, schemes=[{"variant": "serial", "label": "s"}], runs=2)
    out1, out2 = str(tmp_path / "o1"), str(tmp_path / "o2")
    assert cli_main(["run", "--config", cfg, "--out", out1]) == 0
    assert cli_main(["run", "--config", cfg, "--out", out2, "--seed", "77"]) == 0
    a = (tmp_path / "o1" / "curves_s.csv").read_bytes()
    b = (tmp_path / "o2" / "curves_s.csv").read_bytes()
    assert a != b


def test_cli_hard_error_is_exit_1(tmp_path):
    missing = str(tmp_path / "nope.json")
    assert cli_main(["run", "--config", missing, "--out", str(tmp_path / "o")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"plan_mode": "bogus"}))
    assert cli_main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1


def test_cli_partition_budget_exit_1(tmp_path):
    cfg = config_json(tmp_path, partition_budget=1)
    assert cli_main(["partitions", "--config", cfg, "--out", str(tmp_path / "o")]) == 1


def test_load_config_roundtrip(tmp_path):
    cfg_path = config_json(tmp_path)
    cfg = load_config(cfg_path)
    assert cfg.instance.coils == 4
    assert cfg.schemes[0].variant == "full"
    assert load_config(cfg_path, seed=123).seed == 123
