"""
Command-line frontend.

Subcommands::

    gen-data         synthesize a paired SC/FC cohort and save it
    preprocess       raw fiber counts + time series -> dataset directory
    train            run stage 1, 2, 3 or all of them on a holdout split
    eval             metrics of a checkpoint, or repeated k-fold CV
    inspect-experts  expert-routing CSV reports of a stage-3 checkpoint

Every subcommand accepts ``--config FILE`` and repeated ``--set key=value``;
the effective configuration is echoed to stdout and into ``config.txt`` of
the run directory (``<out_root>/<timestamp>-seed<seed>`` unless ``run_dir``
is set). Any reported error exits with status 1.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .braindata import Dataset, load_dataset, preprocess_raw, save_dataset, stratified_holdout, synth_generate
from .config import RunConfig, apply_overrides, parse_config
from .errors import M3DError, StageError
from .pipeline import (
    REPORT_A_HEADER,
    REPORT_B_HEADER,
    STAGE_COLUMNS,
    Checkpoint,
    aggregate,
    evaluate,
    load_checkpoint,
    load_model,
    metrics_tsv,
    report_a,
    report_b,
    routing_counts,
    rows_csv,
    run_cv,
    save_checkpoint,
    table_row,
    train_stage1,
    train_stage2,
    train_stage3,
)
from .pipeline.training import config_from_checkpoint, load_stage3, split_validation

log = logging.getLogger("m3dbfs")


# -- shared plumbing ----------------------------------------------------------

def _out(msg: str = "") -> None:
    print(msg, flush=True)


def load_config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig()
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    if args.run_dir:
        cfg = cfg.replace(run_dir=args.run_dir)
    return cfg


def run_directory(cfg: RunConfig) -> Path:
    if cfg.run_dir:
        path = Path(cfg.run_dir)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = Path(cfg.out_root) / f"{stamp}-seed{cfg.seed}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def echo_config(cfg: RunConfig, run_dir: Path) -> None:
    text = cfg.echo()
    (run_dir / "config.txt").write_text(text)
    _out("# effective configuration")
    for line in text.splitlines():
        _out(f"#   {line}")
    _out(f"# run directory: {run_dir}")


def obtain_dataset(cfg: RunConfig, data_dir: str | None) -> Dataset:
    """Load ``data_dir`` (or ``cfg.data_dir``); synthesize from ``cfg`` when neither is set."""
    source = data_dir or cfg.data_dir
    if source:
        return load_dataset(source, cfg.fc_density, cfg.sc_threshold, cfg.sc_log1p)
    _out("# no dataset given; synthesizing one from the configuration")
    return synth_generate(cfg.synth_config())


def holdout(data: Dataset, cfg: RunConfig):
    """Deterministic stratified train/test split holding out 1/holdout_folds."""
    train_idx, test_idx = stratified_holdout(data.labels, 1.0 / cfg.holdout_folds, cfg.seed)
    return data.subset(train_idx), data.subset(test_idx)


def write_log(path: Path, history: list, columns) -> None:
    header = ("epoch", "loss", "val_acc") + tuple(columns)
    lines = ["\t".join(header)]
    for row in history:
        lines.append("\t".join(_fmt(row.get(c, float("nan"))) for c in header))
    path.write_text("\n".join(lines) + "\n")


def _fmt(v) -> str:
    return str(v) if isinstance(v, (int, np.integer)) else f"{float(v):.10g}"


def _summary(data: Dataset) -> str:
    ones = int(data.labels.sum())
    return f"n={len(data)} N={data.region_count} class balance {len(data) - ones}/{ones}"


def _single_run_summary(metrics) -> dict:
    return aggregate([metrics])


# -- subcommands --------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig, run_dir: Path, out: str | None) -> Path:
    data = synth_generate(cfg.synth_config())
    target = Path(out or cfg.data_dir or run_dir / "data")
    save_dataset(data, target)
    _out(f"wrote {target}: {_summary(data)}")
    return target


def cmd_preprocess(cfg: RunConfig, run_dir: Path, raw_dir: str, out: str | None) -> Path:
    data = preprocess_raw(raw_dir, cfg.fc_density, cfg.sc_threshold, cfg.sc_log1p)
    target = Path(out or cfg.data_dir or run_dir / "data")
    save_dataset(data, target)
    _out(f"wrote {target}: {_summary(data)}")
    return target


def _prerequisite(cfg: RunConfig, run_dir: Path, stage: int) -> Checkpoint:
    key = f"stage{stage}_ckpt"
    explicit = getattr(cfg, key)
    path = Path(explicit) if explicit else run_dir / f"stage{stage}.ckpt"
    if not path.is_file():
        raise StageError(
            f"stage {stage + 1} needs a stage-{stage} checkpoint, none found at {path}; "
            f"run `train --stage {stage}` first or set {key}"
        )
    return load_checkpoint(path, expected_stage=stage)


def cmd_train(cfg: RunConfig, run_dir: Path, stage: str, data_dir: str | None) -> dict:
    stages = [1, 2, 3] if stage == "all" else [int(stage)]
    # fail fast on a missing prerequisite before any data work
    previous = _prerequisite(cfg, run_dir, stages[0] - 1) if stages[0] > 1 else None
    data = obtain_dataset(cfg, data_dir)
    train, test = holdout(data, cfg)
    fit, val = split_validation(train, cfg, cfg.seed)
    _out(f"# data {_summary(data)}; train {len(fit)}, validation {len(val)}, test {len(test)}")
    trainers = {1: train_stage1, 2: train_stage2, 3: train_stage3}
    ckpts = {}
    for s in stages:
        t0 = time.perf_counter()
        if s == 1:
            ckpt = train_stage1(fit, cfg, cfg.seed, val)
        else:
            ckpt = trainers[s](fit, previous, cfg, cfg.seed, val)
        path = save_checkpoint(ckpt, run_dir / f"stage{s}.ckpt")
        if s == 1:
            for modality in ("SC", "FC"):
                rows = [r for r in ckpt.history if r["modality"] == modality]
                write_log(run_dir / f"stage1_{modality.lower()}_log.tsv", rows, STAGE_COLUMNS[1])
        else:
            write_log(run_dir / f"stage{s}_log.tsv", ckpt.history, STAGE_COLUMNS[s])
        _out(f"stage {s}: {len(ckpt.history)} epochs in {time.perf_counter() - t0:.1f}s -> {path}")
        ckpts[s] = previous = ckpt
    if 3 in ckpts:
        metrics = evaluate(load_stage3(ckpts[3], cfg), test)
        summary = _single_run_summary(metrics)
        (run_dir / "test_metrics.tsv").write_text(metrics_tsv(summary))
        _out("test metrics:")
        _out(metrics_tsv(summary).rstrip())
        if metrics.undefined:
            _out(f"# undefined on this test set: {', '.join(metrics.undefined)}")
    return ckpts


def cmd_eval(cfg: RunConfig, run_dir: Path, ckpt_path: str | None, data_dir: str | None,
             cv: int | None, repeats: int | None) -> dict:
    data = obtain_dataset(cfg, data_dir)
    if len(data) == 0:
        raise StageError("evaluation dataset is empty")
    if cv:
        repeats = repeats or 1
        _out(f"# {repeats} x {cv}-fold cross-validation on {_summary(data)}")
        summary, runs = run_cv(data, cfg, cv, repeats, cfg.seed)
        (run_dir / "cv_metrics.tsv").write_text(metrics_tsv(summary))
        (run_dir / "cv_table.tsv").write_text(table_row(summary) + "\n")
        _out(metrics_tsv(summary).rstrip())
        _out(table_row(summary))
        return summary
    if not ckpt_path:
        raise StageError("eval needs --ckpt, or --cv for cross-validation")
    ckpt = load_checkpoint(ckpt_path)
    ckpt_cfg = config_from_checkpoint(ckpt, cfg)
    if ckpt_cfg.n_regions != data.region_count:
        raise StageError(
            f"checkpoint expects {ckpt_cfg.n_regions} regions, dataset has {data.region_count}"
        )
    model = load_model(ckpt, ckpt_cfg)
    if ckpt.stage == 1:
        results = {}
        for modality in ("SC", "FC"):
            summary = _single_run_summary(evaluate(model, data, modality))
            (run_dir / f"metrics_{modality.lower()}.tsv").write_text(metrics_tsv(summary))
            _out(f"# stage-1 {modality} branch")
            _out(metrics_tsv(summary).rstrip())
            results[modality] = summary
        return results
    summary = _single_run_summary(evaluate(model, data))
    (run_dir / "metrics.tsv").write_text(metrics_tsv(summary))
    _out(metrics_tsv(summary).rstrip())
    return summary


def cmd_inspect_experts(cfg: RunConfig, run_dir: Path, ckpt_path: str, data_dir: str | None):
    ckpt = load_checkpoint(ckpt_path, expected_stage=3)
    ckpt_cfg = config_from_checkpoint(ckpt, cfg)
    data = obtain_dataset(cfg, data_dir)
    if ckpt_cfg.n_regions != data.region_count:
        raise StageError(
            f"checkpoint expects {ckpt_cfg.n_regions} regions, dataset has {data.region_count}"
        )
    counts = routing_counts(load_stage3(ckpt, ckpt_cfg), data)
    rows_a, rows_b = report_a(counts), report_b(counts)
    (run_dir / "report_a_expert_share.csv").write_text(rows_csv(REPORT_A_HEADER, rows_a))
    (run_dir / "report_b_fusion_origin.csv").write_text(rows_csv(REPORT_B_HEADER, rows_b))
    _out(f"wrote {run_dir / 'report_a_expert_share.csv'} and {run_dir / 'report_b_fusion_origin.csv'}")
    return rows_a, rows_b


# -- argument parsing -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one setting (repeatable)")
    common.add_argument("--run-dir", help="output directory (default: <out_root>/<timestamp>-seed<seed>)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="m3dbfs", description=__doc__.split("\n\n")[0].strip())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="synthesize a dataset")
    p.add_argument("--out", help="dataset directory (default: data_dir or <run_dir>/data)")

    p = sub.add_parser("preprocess", parents=[common], help="build a dataset from raw inputs")
    p.add_argument("raw_dir", help="directory with manifest.tsv (id, label, sc_file, ts_file)")
    p.add_argument("--out", help="dataset directory (default: data_dir or <run_dir>/data)")

    p = sub.add_parser("train", parents=[common], help="train one or all stages")
    p.add_argument("--stage", choices=["1", "2", "3", "all"], default="all")
    p.add_argument("--data", help="dataset directory (default: data_dir, else synthetic)")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint or run CV")
    p.add_argument("--ckpt", help="checkpoint to evaluate")
    p.add_argument("--data", help="dataset directory (default: data_dir, else synthetic)")
    p.add_argument("--cv", type=int, metavar="K", help="run K-fold cross-validation instead")
    p.add_argument("--repeats", type=int, metavar="R", help="CV repetitions (default 1)")

    p = sub.add_parser("inspect-experts", parents=[common], help="routing reports of a stage-3 model")
    p.add_argument("--ckpt", required=True, help="stage-3 checkpoint")
    p.add_argument("--data", help="dataset directory (default: data_dir, else synthetic)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        run_dir = run_directory(cfg)
        echo_config(cfg, run_dir)
        if args.command == "gen-data":
            cmd_gen_data(cfg, run_dir, args.out)
        elif args.command == "preprocess":
            cmd_preprocess(cfg, run_dir, args.raw_dir, args.out)
        elif args.command == "train":
            cmd_train(cfg, run_dir, args.stage, args.data)
        elif args.command == "eval":
            if args.cv is not None and args.cv < 2:
                raise StageError("--cv needs at least 2 folds")
            cmd_eval(cfg, run_dir, args.ckpt, args.data, args.cv, args.repeats)
        else:
            cmd_inspect_experts(cfg, run_dir, args.ckpt, args.data)
    except (M3DError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
