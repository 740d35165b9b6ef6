"""Experiment pipeline tests: config resolution, artifact layout and shape,
density export properties, report recomputation, and byte-level determinism."""

import csv
import json
import os

import numpy as np
import pytest

from centrosim.genome import builtin_genome
from centrosim.hic_io import load_map
from centrosim.metrics import posterior_metrics
from centrosim.pipeline import (
    ConfigError,
    StageError,
    _read_samples,
    density_grids,
    evaluate_run,
    export_density,
    load_config,
    resolve_genome,
    round_report,
    run_experiment,
)
from centrosim.rng import make_rng

THETA3 = [100000.0, 200000.0, 150000.0]


def small_config(out, **kw):
    cfg = {
        "genome": "s_cerevisiae_3",
        "mode": "joint",
        "method": "abc-pearson",
        "seed": 5,
        "rounds": 3,
        "n_per_round": 100,
        "n_train": 100,
        "n_posterior_samples": 120,
        "train": {"epochs": 3, "patience": 2},
        "snpe_train": {"epochs": 3, "patience": 2},
        "reference": {"theta": THETA3},
        "out": str(out),
    }
    cfg.update(kw)
    return cfg


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


# --- config handling ---------------------------------------------------------


def test_load_config_defaults_and_overrides(tmp_path):
    cfg = load_config({"out": "x"}, overrides={"rounds": 4, "seed": None})
    assert cfg["rounds"] == 4
    assert cfg["seed"] == 0  # None override is ignored
    assert cfg["method"] == "abc-pearson"
    assert cfg["reference"]["kind"] == "synthetic"

    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"out": "y", "method": "snpe"}))
    assert load_config(path)["method"] == "snpe"


@pytest.mark.parametrize("bad", [
    {"bogus_key": 1},
    {"method": "rejection"},
    {"mode": "global"},
    {"rounds": 0},
    {"rounds": 2.5},
    {"accept_frac": 0.0},
    {"noise_frac": -0.1},
    {"correction": "full"},
    {"reference": {"kind": "db"}},
    {"reference": {"kind": "file"}},
    {"reference": {"theta": 12}},
    {"out": None},
])
def test_load_config_rejects(bad):
    with pytest.raises(ConfigError):
        load_config({**{"out": "x"}, **bad})


def test_resolve_genome():
    assert resolve_genome("s_cerevisiae_3").n_chrom == 3
    with pytest.raises(ConfigError):
        resolve_genome("no_such_genome")


# --- shared small runs -------------------------------------------------------


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    """A handful of tiny experiments reused by the assertions below."""
    root = tmp_path_factory.mktemp("runs")
    done = {}

    def go(tag, **kw):
        out = root / tag
        result = run_experiment(small_config(out, **kw))
        done[tag] = (str(out), result)
        return done[tag]

    go("pearson_joint")
    go("pearson_joint_again")  # same config + seed, fresh directory
    go("cnn_joint", method="abc-cnn", rounds=2, n_per_round=80)
    go("snpe_chrom", method="snpe", mode="per-chromosome", seed=3,
       rounds=2, n_per_round=80)
    go("snpe_chrom_again", method="snpe", mode="per-chromosome", seed=3,
       rounds=2, n_per_round=80)
    go("pearson_chrom", mode="per-chromosome", rounds=2, n_per_round=80)
    go("pearson_chrom_jobs2", mode="per-chromosome", rounds=2, n_per_round=80,
       jobs=2)
    return done


def test_artifact_layout(runs):
    out, _ = runs["pearson_joint"]
    for rel in ["config.json", "result.json", "report.csv",
                "reference/map.json", "task_joint/metrics.json",
                "task_joint/density.csv"]:
        assert os.path.exists(os.path.join(out, rel)), rel
    files = sorted(os.listdir(os.path.join(out, "task_joint")))
    assert [f for f in files if f.startswith("samples_")] == [
        "samples_round_01.csv", "samples_round_02.csv", "samples_round_03.csv"]


def test_population_sizes_and_weights(runs):
    out, _ = runs["pearson_joint"]
    for t in (1, 2, 3):
        samples, weights = _read_samples(
            os.path.join(out, "task_joint", f"samples_round_{t:02d}.csv"))
        assert samples.shape == (5, 3)  # ceil(0.05 * 100) particles
        assert weights.shape == (5,)
        assert abs(weights.sum() - 1.0) < 1e-12
        if t == 1:
            assert np.allclose(weights, 0.2)


def test_metrics_payload_shape(runs):
    out, result = runs["pearson_joint"]
    with open(os.path.join(out, "task_joint", "metrics.json")) as fh:
        payload = json.load(fh)
    assert payload["chromosomes"] == ["chrI", "chrII", "chrIII"]
    assert payload["resolution_bp"] == 32000
    assert payload["theta_ref"] == THETA3
    assert [e["round"] for e in payload["rounds"]] == [1, 2, 3]
    for entry in payload["rounds"]:
        assert entry["epsilon"] > 0
        assert entry["n_samples"] == 5
        assert len(entry["per_dim_abs_error"]) == 3
        for key in ("euclidean_mean", "w2", "mmd"):
            assert np.isfinite(entry[key])
    assert result["tasks"]["joint"]["final"] == payload["rounds"][-1]


def test_per_chromosome_fanout(runs):
    out, result = runs["snpe_chrom"]
    assert sorted(result["tasks"]) == ["chrI", "chrII", "chrIII"]
    spec = builtin_genome("s_cerevisiae_3")
    for i, name in enumerate(spec.names):
        tdir = os.path.join(out, f"task_{name}")
        with open(os.path.join(tdir, "metrics.json")) as fh:
            payload = json.load(fh)
        assert payload["chromosomes"] == [name]
        assert payload["theta_ref"] == [THETA3[i]]
        samples, weights = _read_samples(os.path.join(tdir, "samples_round_02.csv"))
        assert samples.shape == (120, 1)
        assert np.allclose(weights, 1.0 / 120)
        lo, hi = 1.0, spec.lengths[i] - 1.0
        assert np.all((samples >= lo) & (samples <= hi))


def test_snpe_round_files_have_no_distance_column(runs):
    out, _ = runs["snpe_chrom"]
    with open(os.path.join(out, "task_chrI", "samples_round_01.csv")) as fh:
        header = fh.readline().strip().split(",")
    assert header == ["theta_chrI", "weight"]


def test_abc_round_files_carry_distances(runs):
    out, _ = runs["pearson_joint"]
    path = os.path.join(out, "task_joint", "samples_round_02.csv")
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    assert header[-1] == "distance"
    table = np.loadtxt(path, delimiter=",", skiprows=1)
    with open(os.path.join(out, "task_joint", "metrics.json")) as fh:
        eps = json.load(fh)["rounds"][1]["epsilon"]
    assert np.all(table[:, -1] <= eps + 1e-12)


def test_rerun_is_byte_identical(runs):
    for a_tag, b_tag in [("pearson_joint", "pearson_joint_again"),
                         ("snpe_chrom", "snpe_chrom_again")]:
        a, b = runs[a_tag][0], runs[b_tag][0]
        for root, _, files in os.walk(a):
            for f in files:
                if f == "config.json":
                    continue  # holds the differing output path
                pa = os.path.join(root, f)
                pb = os.path.join(b, os.path.relpath(pa, a))
                assert read_bytes(pa) == read_bytes(pb), os.path.relpath(pa, a)


def test_jobs_do_not_change_artifacts(runs):
    a, b = runs["pearson_chrom"][0], runs["pearson_chrom_jobs2"][0]
    for rel in ["report.csv", "task_chrI/metrics.json",
                "task_chrII/samples_round_01.csv", "task_chrIII/density.csv"]:
        assert read_bytes(os.path.join(a, rel)) == read_bytes(os.path.join(b, rel))


def test_reference_is_reproducible_from_seed(runs):
    out, _ = runs["pearson_joint"]
    loaded = load_map(os.path.join(out, "reference"))
    assert loaded.meta["theta_ref"] == THETA3
    from centrosim.hic_io import make_reference
    cmap, _ = make_reference(loaded.spec, THETA3, loaded.meta["seed"])
    for key, block in cmap.blocks.items():
        assert np.array_equal(block, loaded.cmap.blocks[key])


# --- report + recomputation --------------------------------------------------


def test_report_rows_and_recomputation(runs):
    out, _ = runs["pearson_joint"]
    with open(os.path.join(out, "report.csv")) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3  # T rounds -> T rows for the single joint task
    assert [r["round"] for r in rows] == ["1", "2", "3"]
    assert all(r["resolution_bp"] == "32000" for r in rows)
    for t, row in enumerate(rows, start=1):
        samples, weights = _read_samples(
            os.path.join(out, "task_joint", f"samples_round_{t:02d}.csv"))
        fresh = posterior_metrics(samples, np.asarray(THETA3), weights)
        assert abs(float(row["euclidean_mean"]) - fresh["euclidean_mean"]) < 1e-9
        assert abs(float(row["mmd"]) - fresh["mmd"]) < 1e-9
        assert abs(float(row["w2"]) - fresh["w2"]) < 1e-9
        for k, name in enumerate(("chrI", "chrII", "chrIII")):
            assert abs(float(row[f"err_{name}"])
                       - fresh["per_dim_abs_error"][k]) < 1e-9


def test_report_blank_columns_off_task(runs):
    out, _ = runs["pearson_chrom"]
    with open(os.path.join(out, "report.csv")) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6  # 3 tasks x 2 rounds
    chrI_rows = [r for r in rows if r["task"] == "chrI"]
    assert all(r["err_chrI"] != "" and r["err_chrII"] == "" for r in chrI_rows)


def test_evaluate_run_matches_exactly(runs):
    for tag in ("pearson_joint", "cnn_joint", "snpe_chrom"):
        report = evaluate_run(runs[tag][0])
        assert report["max_abs_diff"] == 0.0, tag


def test_evaluate_run_detects_tampering(runs, tmp_path):
    import shutil
    out = tmp_path / "tampered"
    shutil.copytree(runs["pearson_joint"][0], out)
    path = out / "task_joint" / "samples_round_01.csv"
    lines = path.read_text().splitlines()
    cells = lines[1].split(",")
    cells[0] = repr(float(cells[0]) + 5000.0)
    lines[1] = ",".join(cells)
    path.write_text("\n".join(lines) + "\n")
    assert evaluate_run(out)["max_abs_diff"] > 1.0


def test_round_report_header_order():
    payload = {
        "task": "joint", "method": "abc-pearson", "mode": "joint",
        "chromosomes": ["a", "b"], "resolution_bp": 32000, "theta_ref": [1.0, 2.0],
        "rounds": [{"round": 1, "epsilon": 0.5, "n_samples": 4,
                    "euclidean_mean": 1.0, "w2": 2.0, "mmd": 0.1,
                    "per_dim_abs_error": [3.0, 4.0]}],
    }
    header, rows = round_report([payload], ["a", "b"])
    assert header[:3] == ["round", "method", "task"]
    assert header[-2:] == ["err_a", "err_b"]
    assert rows[0][-2:] == [3.0, 4.0]


# --- density export ----------------------------------------------------------


def test_density_identical_samples_concentrate():
    grid = np.linspace(1.0, 229999.0, 512)
    dens, = export_density(np.full((200, 1), 77777.0), None, [grid])
    h = 2.0 * (grid[1] - grid[0])  # bandwidth floor for degenerate samples
    total = np.trapezoid(dens, grid)
    assert abs(total - 1.0) < 0.01
    near = np.abs(grid - 77777.0) <= 3.0 * h
    assert np.trapezoid(dens[near], grid[near]) / total > 0.99


def test_density_uniform_samples_flat():
    rng = make_rng(0)
    samples = rng.uniform(1.0, 229999.0, size=(10_000, 1))
    grid = np.linspace(1.0, 229999.0, 512)
    dens, = export_density(samples, None, [grid])
    assert dens.max() / dens.min() < 2.0
    assert abs(np.trapezoid(dens, grid) - 1.0) < 0.01


def test_density_integrates_to_one_weighted():
    rng = make_rng(3)
    # second column hugs the lower boundary, stressing the reflection
    samples = np.column_stack([
        rng.uniform(1.0, 229999.0, 400),
        np.clip(rng.normal(2000.0, 3000.0, 400), 1.0, 229999.0),
    ])
    weights = rng.uniform(0.1, 1.0, 400)
    spec = builtin_genome("s_cerevisiae_3")
    grids = density_grids(spec, [0, 0])
    for dens, grid in zip(export_density(samples, weights, grids), grids):
        assert abs(np.trapezoid(dens, grid) - 1.0) < 0.01


def test_density_csv_format(runs):
    out, _ = runs["pearson_joint"]
    with open(os.path.join(out, "task_joint", "density.csv")) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3 * 512
    by_chrom = {}
    for row in rows:
        by_chrom.setdefault(row["chromosome"], []).append(
            (float(row["position_bp"]), float(row["density"])))
    spec = builtin_genome("s_cerevisiae_3")
    for i, name in enumerate(spec.names):
        pts = by_chrom[name]
        assert len(pts) == 512
        xs = np.array([p[0] for p in pts])
        ys = np.array([p[1] for p in pts])
        assert xs[0] == 1.0 and xs[-1] == spec.lengths[i] - 1.0
        assert abs(np.trapezoid(ys, xs) - 1.0) < 0.01


# --- noise plumbing and failure modes ----------------------------------------


def test_noise_frac_zero_matches_noiseless(tmp_path):
    a = run_experiment(small_config(tmp_path / "a", rounds=1, noise_frac=0.0))
    b = run_experiment(small_config(tmp_path / "b", rounds=1,
                                    reference={"theta": THETA3, "noise": False}))
    pa = tmp_path / "a" / "reference" / "block__chrI__chrII.tsv"
    pb = tmp_path / "b" / "reference" / "block__chrI__chrII.tsv"
    assert read_bytes(pa) == read_bytes(pb)
    assert a["tasks"]["joint"]["final"] != b["tasks"]["joint"]["final"]


def test_stage_error_names_the_stage(tmp_path):
    with pytest.raises(StageError) as exc:
        run_experiment(small_config(tmp_path / "r", n_per_round=10))
    assert exc.value.stage == "inference"
    # artifacts from the stages that did run are preserved
    assert (tmp_path / "r" / "reference" / "map.json").exists()


def test_config_error_from_run_experiment(tmp_path):
    with pytest.raises(ConfigError):
        run_experiment(small_config(tmp_path / "r", method="bogus"))
    with pytest.raises(ConfigError):
        run_experiment(small_config(tmp_path / "r",
                                    reference={"theta": [1.0, 2.0]}))


def test_file_reference_roundtrip(tmp_path, runs):
    src = os.path.join(runs["pearson_joint"][0], "reference")
    out = tmp_path / "filerun"
    result = run_experiment(small_config(
        out, rounds=1, reference={"kind": "file", "path": src}))
    with open(out / "task_joint" / "metrics.json") as fh:
        assert json.load(fh)["theta_ref"] == THETA3
    assert result["tasks"]["joint"]["final"]["euclidean_mean"] is not None


def test_file_reference_genome_mismatch(tmp_path, runs):
    src = os.path.join(runs["pearson_joint"][0], "reference")
    cfg = small_config(tmp_path / "bad", genome="s_cerevisiae_16",
                       reference={"kind": "file", "path": src})
    with pytest.raises(ConfigError, match="genome"):
        run_experiment(cfg)


def test_flagship_budget_population_shape(tmp_path):
    """11 rounds at n=1000 give 11 exported populations of 50 particles."""
    out = tmp_path / "flagship"
    run_experiment(small_config(out, rounds=11, n_per_round=1000))
    files = sorted(f for f in os.listdir(out / "task_joint")
                   if f.startswith("samples_"))
    assert len(files) == 11
    for f in files:
        samples, _ = _read_samples(os.path.join(out, "task_joint", f))
        assert samples.shape == (50, 3)
