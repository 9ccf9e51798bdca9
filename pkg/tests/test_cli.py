import csv
import math

import numpy as np
import pytest

from m3dbfs.braindata import load_dataset, write_matrix
from m3dbfs.cli import main
from m3dbfs.moe import KINDS
from m3dbfs.numcore import no_grad
from m3dbfs.pipeline import collate, load_checkpoint, load_stage3

SMALL = ["n_regions=12", "n_samples=40", "timepoints=60", "gcn_hidden=8", "embed_dim=8",
         "token_dim=8", "max_epochs=4", "patience=4", "batch_size=8"]


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def small(run_dir, *extra):
    args = ["--run-dir", str(run_dir)]
    for item in SMALL + list(extra):
        args += ["--set", item]
    return args


def read_tsv(path):
    with open(path) as fh:
        return list(csv.reader(fh, delimiter="\t"))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", *small(root / "gen"), "--out", str(root / "data")]) == 0
    assert main(["train", "--stage", "all", "--data", str(root / "data"), *small(root / "run")]) == 0
    return root


# --- gen-data ------------------------------------------------------------

def test_gen_data_layout_and_determinism(tmp_path, capsys):
    code, out, _ = run(["gen-data", *small(tmp_path / "r1"), "--out", str(tmp_path / "a")], capsys)
    assert code == 0
    assert "n=40 N=12 class balance 20/20" in out
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert len(files) == 2 * 40 + 1 and "manifest.tsv" in files
    run(["gen-data", *small(tmp_path / "r2"), "--out", str(tmp_path / "b")], capsys)
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_config_is_echoed(tmp_path, capsys):
    code, out, _ = run(["gen-data", *small(tmp_path / "r"), "--set", "seed=7"], capsys)
    assert code == 0
    assert "#   seed = 7" in out and "#   alpha = 0.6" in out
    text = (tmp_path / "r" / "config.txt").read_text()
    assert "seed = 7\n" in text and "n_regions = 12\n" in text


def test_default_run_directory_is_timestamped(tmp_path, capsys):
    code, out, _ = run(["gen-data", "--set", f"out_root={tmp_path}", "--set", "seed=3",
                        "--set", "n_samples=8", "--set", "n_regions=8", "--set", "timepoints=10"], capsys)
    assert code == 0
    (run_dir,) = list(tmp_path.iterdir())
    assert run_dir.name.endswith("-seed3") and (run_dir / "data" / "manifest.tsv").is_file()


def test_config_file_errors_exit_nonzero(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("seed = 1\nalpha = 1.5\n")
    code, _, err = run(["gen-data", "--config", str(cfg), "--run-dir", str(tmp_path / "r")], capsys)
    assert code == 1
    assert "bad.cfg:2" in err and "(0,1)" in err


# --- preprocess ----------------------------------------------------------

def write_raw(directory, n=8, t=30, negative=False):
    rng = np.random.default_rng(0)
    rows = ["id\tlabel\tsc_file\tts_file"]
    for k in range(2):
        raw = rng.poisson(3.0, size=(n, n)).astype(float)
        raw = raw + raw.T
        if negative:
            raw[0, 1] = raw[1, 0] = -1.0
        write_matrix(directory / f"sc{k}.csv", raw)
        write_matrix(directory / f"ts{k}.csv", rng.normal(size=(n, t)))
        rows.append(f"s{k}\t{k}\tsc{k}.csv\tts{k}.csv")
    (directory / "manifest.tsv").write_text("\n".join(rows) + "\n")


def test_preprocess_writes_loadable_dataset(tmp_path, capsys):
    raw = tmp_path / "raw"
    raw.mkdir()
    write_raw(raw)
    code, out, _ = run(["preprocess", str(raw), "--out", str(tmp_path / "ds"),
                        "--run-dir", str(tmp_path / "r"), "--set", "fc_density=1.0"], capsys)
    assert code == 0
    data = load_dataset(tmp_path / "ds", fc_density=1.0)
    assert len(data) == 2
    for s in data:
        np.testing.assert_array_equal(s.fc.adjacency, 1 - np.eye(8))


def test_preprocess_rejects_negative_fibers(tmp_path, capsys):
    raw = tmp_path / "raw"
    raw.mkdir()
    write_raw(raw, negative=True)
    code, _, err = run(["preprocess", str(raw), "--run-dir", str(tmp_path / "r")], capsys)
    assert code == 1
    assert "sc0.csv" in err and "negative" in err


# --- train ---------------------------------------------------------------

def test_train_all_writes_checkpoints_logs_and_metrics(trained):
    run_dir = trained / "run"
    for s in (1, 2, 3):
        assert load_checkpoint(run_dir / f"stage{s}.ckpt", expected_stage=s)
    assert read_tsv(run_dir / "stage1_sc_log.tsv")[0] == ["epoch", "loss", "val_acc", "ce"]
    assert read_tsv(run_dir / "stage2_log.tsv")[0] == ["epoch", "loss", "val_acc", "ce", "distill", "contrast"]
    header = read_tsv(run_dir / "stage3_log.tsv")[0]
    assert header[:3] == ["epoch", "loss", "val_acc"] and {"ce", "moe", "disen"} <= set(header)
    metrics = read_tsv(run_dir / "test_metrics.tsv")
    assert [r[0] for r in metrics] == ["metric", "ACC", "SEN", "SPE", "F1", "AUC"]


def test_train_stage3_without_stage2_names_prerequisite(tmp_path, capsys):
    code, _, err = run(["train", "--stage", "3", *small(tmp_path / "r")], capsys)
    assert code == 1
    assert "stage-2 checkpoint" in err and "train --stage 2" in err


def test_train_stages_one_at_a_time_match_all(trained, tmp_path, capsys):
    data = str(trained / "data")
    for stage in ("1", "2", "3"):
        code, _, _ = run(["train", "--stage", stage, "--data", data, *small(tmp_path / "r")], capsys)
        assert code == 0
    for s in (1, 2, 3):
        assert (tmp_path / "r" / f"stage{s}.ckpt").read_bytes() == (trained / "run" / f"stage{s}.ckpt").read_bytes()


def test_train_uses_explicit_prerequisite_path(trained, tmp_path, capsys):
    code, _, _ = run(["train", "--stage", "3", "--data", str(trained / "data"), *small(tmp_path / "r"),
                      "--set", f"stage2_ckpt={trained / 'run' / 'stage2.ckpt'}"], capsys)
    assert code == 0
    assert (tmp_path / "r" / "stage3.ckpt").read_bytes() == (trained / "run" / "stage3.ckpt").read_bytes()


# --- eval ----------------------------------------------------------------

def test_eval_stage3_checkpoint(trained, tmp_path, capsys):
    code, out, _ = run(["eval", "--ckpt", str(trained / "run" / "stage3.ckpt"),
                        "--data", str(trained / "data"), "--run-dir", str(tmp_path / "r")], capsys)
    assert code == 0
    rows = read_tsv(tmp_path / "r" / "metrics.tsv")
    assert len(rows) == 6 and all(0.0 <= float(r[1]) <= 1.0 for r in rows[1:])


def test_eval_stage1_checkpoint_reports_each_branch(trained, tmp_path, capsys):
    code, _, _ = run(["eval", "--ckpt", str(trained / "run" / "stage1.ckpt"),
                      "--data", str(trained / "data"), "--run-dir", str(tmp_path / "r")], capsys)
    assert code == 0
    assert (tmp_path / "r" / "metrics_sc.tsv").is_file() and (tmp_path / "r" / "metrics_fc.tsv").is_file()


def test_eval_region_mismatch_and_empty_data(trained, tmp_path, capsys):
    code, _, err = run(["eval", "--ckpt", str(trained / "run" / "stage3.ckpt"), "--run-dir",
                        str(tmp_path / "r"), "--set", "n_regions=10", "--set", "n_samples=8",
                        "--set", "timepoints=10"], capsys)
    assert code == 1 and "12 regions" in err
    empty = tmp_path / "empty"
    empty.mkdir()
    (empty / "manifest.tsv").write_text("id\tlabel\tsc_file\tfc_file\n")
    code, _, err = run(["eval", "--ckpt", str(trained / "run" / "stage3.ckpt"), "--data", str(empty),
                        "--run-dir", str(tmp_path / "r")], capsys)
    assert code == 1 and "no samples" in err


def test_eval_needs_checkpoint_or_cv(tmp_path, capsys):
    code, _, err = run(["eval", *small(tmp_path / "r")], capsys)
    assert code == 1 and "--ckpt" in err
    code, _, err = run(["eval", "--cv", "1", *small(tmp_path / "r")], capsys)
    assert code == 1 and "2 folds" in err


def test_eval_cv_emits_table_row(tmp_path, capsys):
    args = ["eval", "--cv", "2", "--repeats", "1", *small(tmp_path / "r", "n_samples=16", "max_epochs=2")]
    code, out, _ = run(args, capsys)
    assert code == 0
    row = (tmp_path / "r" / "cv_table.tsv").read_text().rstrip("\n").split("\t")
    assert len(row) == 6 and all(" ± " in cell for cell in row[1:])
    assert [r[0] for r in read_tsv(tmp_path / "r" / "cv_metrics.tsv")][1:] == ["ACC", "SEN", "SPE", "F1", "AUC"]


# --- inspect-experts -----------------------------------------------------

def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_inspect_reports_are_normalized(trained, tmp_path, capsys):
    code, _, _ = run(["inspect-experts", "--ckpt", str(trained / "run" / "stage3.ckpt"),
                      "--data", str(trained / "data"), "--run-dir", str(tmp_path / "r")], capsys)
    assert code == 0
    rows_a = read_csv(tmp_path / "r" / "report_a_expert_share.csv")
    blocks = {}
    for r in rows_a:
        blocks.setdefault((r["kind"], r["layer"]), []).append(float(r["fraction"]))
    assert len(blocks) == 3 * 2
    for fractions in blocks.values():
        assert len(fractions) == 4 and abs(sum(fractions) - 1.0) <= 1e-9
    for r in read_csv(tmp_path / "r" / "report_b_fusion_origin.csv"):
        if int(r["tokens"]):
            assert abs(float(r["sc_fraction"]) + float(r["fc_fraction"]) - 1.0) <= 1e-9
        else:
            assert math.isnan(float(r["sc_fraction"]))


def test_inspect_matches_independent_per_sample_pass(trained, tmp_path, capsys):
    ckpt_path = trained / "run" / "stage3.ckpt"
    run(["inspect-experts", "--ckpt", str(ckpt_path), "--data", str(trained / "data"),
         "--run-dir", str(tmp_path / "r")], capsys)
    model = load_stage3(load_checkpoint(ckpt_path))
    data = load_dataset(trained / "data")
    counts = {kind: np.zeros((2, 4)) for kind in KINDS}
    origin = np.zeros((2, 4, 2))
    with no_grad():
        for sample in data:
            records = model(collate([sample]), train=False).records
            for kind in KINDS:
                for layer, rec in enumerate(records[kind]):
                    chosen = rec.gates.data != 0
                    counts[kind][layer] += chosen.sum(axis=0)
                    if kind == "Fusion":
                        origin[layer, :, 0] += chosen[rec.tags == "SC"].sum(axis=0)
                        origin[layer, :, 1] += chosen[rec.tags == "FC"].sum(axis=0)
    for r in read_csv(tmp_path / "r" / "report_a_expert_share.csv"):
        c = counts[r["kind"]][int(r["layer"])]
        assert int(r["tokens"]) == c[int(r["expert"])]
        assert abs(float(r["fraction"]) - c[int(r["expert"])] / c.sum()) <= 1e-12
    for r in read_csv(tmp_path / "r" / "report_b_fusion_origin.csv"):
        sc, fc = origin[int(r["layer"]), int(r["expert"])]
        assert int(r["tokens"]) == sc + fc
        if sc + fc:
            assert abs(float(r["sc_fraction"]) - sc / (sc + fc)) <= 1e-12


def test_inspect_single_expert_block(trained, tmp_path, capsys):
    data = str(trained / "data")
    for stage in ("1", "2", "3"):
        assert main(["train", "--stage", stage, "--data", data,
                     *small(tmp_path / "r", "n_experts=1")]) == 0
    capsys.readouterr()
    code, _, _ = run(["inspect-experts", "--ckpt", str(tmp_path / "r" / "stage3.ckpt"), "--data", data,
                      "--run-dir", str(tmp_path / "r")], capsys)
    assert code == 0
    assert {float(r["fraction"]) for r in read_csv(tmp_path / "r" / "report_a_expert_share.csv")} == {1.0}


def test_inspect_rejects_non_stage3_checkpoint(trained, tmp_path, capsys):
    code, _, err = run(["inspect-experts", "--ckpt", str(trained / "run" / "stage2.ckpt"),
                        "--data", str(trained / "data"), "--run-dir", str(tmp_path / "r")], capsys)
    assert code == 1 and "stage-3" in err
