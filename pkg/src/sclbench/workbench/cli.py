"""Command-line interface binding the workbench together.

Exit codes: 0 success, 1 usage error, 2 runtime failure.  All randomness is
controlled by --seed; the output directory comes from --out or the
SCLBENCH_OUT environment variable.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from ..encoder import load_checkpoint, save_checkpoint
from ..objectives import METHODS
from ..trainer import (DEFAULT_BATCH_SIZES, DEFAULT_FRACTIONS, Bundle, RunRecord,
                       TrainConfig, batch_size_sweep, data_efficiency_sweep, predict, train)
from . import reports
from .data import export_tsv, ingest, load_splits, synth_corpus
from .metrics import macro_f1
from .projection import project_2d, write_projection_csv


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("SCLBENCH_OUT") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=METHODS, default="ce")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=5e-5)
    p.add_argument("--max-epochs", type=int, default=25)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--max-seq-len", type=int, default=128)
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--tau", type=float, default=0.3)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-fraction", type=float, default=1.0)
    p.add_argument("--d-h", type=int, default=64)
    p.add_argument("--num-layers", type=int, default=2)
    p.add_argument("--num-heads", type=int, default=4)
    p.add_argument("--d-p", type=int, default=64)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--no-figures", action="store_true", help="skip matplotlib rendering")


def _config_from_args(args, **overrides) -> TrainConfig:
    kwargs = dict(
        method=args.method, batch_size=args.batch_size, learning_rate=args.lr,
        max_epochs=args.max_epochs, patience=args.patience, max_seq_len=args.max_seq_len,
        lam=args.lam, tau=args.tau, epsilon=args.epsilon, seed=args.seed,
        data_fraction=args.data_fraction, d_h=args.d_h, num_layers=args.num_layers,
        num_heads=args.num_heads, d_p=args.d_p, dropout=args.dropout,
    )
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sclbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--size", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--difficulty", type=float, default=0.5)
    p.add_argument("--out", default=None)

    p = sub.add_parser("train", help="train one method on a corpus directory")
    p.add_argument("--data", required=True, help="directory with train/dev/test.tsv")
    p.add_argument("--task-name", default=None)
    p.add_argument("--out", default=None)
    _add_train_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a TSV corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="TSV file to evaluate on")
    p.add_argument("--out", default=None)

    p = sub.add_parser("sweep-data", help="data-efficiency grid over train fractions")
    p.add_argument("--data", required=True)
    p.add_argument("--task-name", default=None)
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--fractions", default=",".join(str(f) for f in DEFAULT_FRACTIONS))
    p.add_argument("--out", default=None)
    _add_train_flags(p)

    p = sub.add_parser("sweep-batch", help="batch-size ablation")
    p.add_argument("--data", required=True)
    p.add_argument("--task-name", default=None)
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--sizes", default=",".join(str(s) for s in DEFAULT_BATCH_SIZES))
    p.add_argument("--out", default=None)
    _add_train_flags(p)

    p = sub.add_parser("project", help="2-D PCA of pooled representations")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="TSV file to encode (e.g. dev split)")
    p.add_argument("--out", default=None)
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("compare", help="method x task grid from run records")
    p.add_argument("runs", nargs="+", help="run JSONL files (or directories of them)")
    p.add_argument("--out", default=None)
    p.add_argument("--no-figures", action="store_true")
    return parser


def _load_bundle(path) -> Bundle:
    vocab, encoders, extra = load_checkpoint(path)
    bundle = Bundle(vocab=vocab, encoder=encoders["enc"], weighting=encoders.get("wnet"))
    bundle.class_names = extra.get("class_names", [])
    return bundle


def _save_run(record: RunRecord, bundle: Bundle, class_names: List[str], out: Path, stem: str) -> None:
    (out / f"{stem}.jsonl").write_text(record.to_jsonl(), encoding="utf-8")
    encoders = {"enc": bundle.encoder}
    if bundle.weighting is not None:
        encoders["wnet"] = bundle.weighting
    save_checkpoint(out / f"{stem}.npz", bundle.vocab, encoders,
                    extra={"class_names": class_names, "method": record.config["method"]})


def _cmd_synth(args) -> int:
    out = _out_dir(args)
    splits = synth_corpus(args.classes, args.size, args.seed, args.difficulty)
    for name in ("train", "dev", "test"):
        export_tsv(getattr(splits, name), out / f"{name}.tsv")
    print(f"wrote {args.size} examples over {args.classes} classes to {out}")
    return 0


def _cmd_train(args) -> int:
    out = _out_dir(args)
    splits = load_splits(args.data)
    config = _config_from_args(args)
    record = train(config, splits)
    record.config["task"] = args.task_name or Path(args.data).resolve().name
    _save_run(record, record.bundle, splits.train.class_names, out, f"run_{config.method}")
    print(f"{config.method}: best dev macro-F1 {record.best_dev_f1:.4f} "
          f"(epoch {record.best_epoch}), test macro-F1 {record.test_f1:.4f}")
    return 0


def _cmd_eval(args) -> int:
    out = _out_dir(args)
    bundle = _load_bundle(args.checkpoint)
    corpus = ingest(args.data, class_names=bundle.class_names or None).corpus
    ids = bundle.vocab.tokenize_batch(corpus.texts, bundle.encoder.config.max_len)
    preds = predict(bundle, ids)
    report = macro_f1(corpus.labels, preds, len(corpus.class_names))
    lines = ["class\tprecision\trecall\tf1\tsupport"]
    for name, m in zip(corpus.class_names, report.per_class):
        lines.append(f"{name}\t{m.precision:.4f}\t{m.recall:.4f}\t{m.f1:.4f}\t{m.support}")
    lines.append(f"macro\t\t\t{report.macro_f1:.4f}\t{len(corpus)}")
    (out / "eval.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"macro-F1 {report.macro_f1:.4f} accuracy {report.accuracy:.4f} on {len(corpus)} examples")
    return 0


def _cmd_sweep_data(args) -> int:
    out = _out_dir(args)
    splits = load_splits(args.data)
    methods = _parse_methods(args.methods)
    fractions = [float(f) for f in args.fractions.split(",")]
    config = _config_from_args(args)
    grid = data_efficiency_sweep(config, splits, fractions=fractions, methods=methods)
    task = args.task_name or Path(args.data).resolve().name
    runs_dir = out / "runs"
    runs_dir.mkdir(exist_ok=True)
    for method, by_frac in grid.items():
        for fraction, rec in by_frac.items():
            rec.config["task"] = task
            (runs_dir / f"{method}_{int(fraction * 100)}pct.jsonl").write_text(
                rec.to_jsonl(), encoding="utf-8")
    reports.write_data_efficiency_grid(grid, out / "data_efficiency.tsv")
    if not args.no_figures:
        reports.plot_data_efficiency(grid, out / "data_efficiency.png")
    print((out / "data_efficiency.tsv").read_text(), end="")
    return 0


def _cmd_sweep_batch(args) -> int:
    out = _out_dir(args)
    splits = load_splits(args.data)
    methods = _parse_methods(args.methods)
    sizes = [int(s) for s in args.sizes.split(",")]
    config = _config_from_args(args)
    results = batch_size_sweep(config, splits, sizes=sizes, methods=methods)
    task = args.task_name or Path(args.data).resolve().name
    runs_dir = out / "runs"
    runs_dir.mkdir(exist_ok=True)
    for method, by_size in results.items():
        for size, rec in by_size.items():
            rec.config["task"] = task
            (runs_dir / f"{method}_bs{size}.jsonl").write_text(rec.to_jsonl(), encoding="utf-8")
    reports.write_batch_size_table(results, out / "batch_size.tsv")
    if not args.no_figures:
        reports.plot_batch_size(results, out / "batch_size.png")
    print((out / "batch_size.tsv").read_text(), end="")
    return 0


def _cmd_project(args) -> int:
    out = _out_dir(args)
    bundle = _load_bundle(args.checkpoint)
    corpus = ingest(args.data, class_names=bundle.class_names or None).corpus
    ids = bundle.vocab.tokenize_batch(corpus.texts, bundle.encoder.config.max_len)
    reps = []
    for lo in range(0, len(ids), 64):
        reps.append(bundle.encoder.encode(ids[lo: lo + 64], dropout_on=False).h_cls.values)
    coords = project_2d(np.concatenate(reps))
    names = [corpus.class_names[y] for y in corpus.labels]
    write_projection_csv(coords, names, out / "projection.csv")
    if not args.no_figures:
        reports.plot_projection(coords, names, out / "projection.png")
    print(f"wrote {len(coords)} projected points to {out / 'projection.csv'}")
    return 0


def _cmd_compare(args) -> int:
    out = _out_dir(args)
    paths: List[Path] = []
    for entry in args.runs:
        p = Path(entry)
        paths.extend(sorted(p.glob("*.jsonl")) if p.is_dir() else [p])
    records = [RunRecord.from_jsonl(p.read_text(encoding="utf-8")) for p in paths]
    if not records:
        raise ValueError("compare: no run records found")
    reports.write_compare_grid(records, out / "compare.tsv")
    if not args.no_figures:
        reports.plot_compare(records, out / "compare.png")
    print((out / "compare.tsv").read_text(), end="")
    return 0


def _parse_methods(csv: str) -> List[str]:
    methods = [m.strip().lower() for m in csv.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise SystemExit(f"unknown method(s) {', '.join(bad)}; valid: {', '.join(METHODS)}")
    return methods


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sweep-data": _cmd_sweep_data,
    "sweep-batch": _cmd_sweep_batch,
    "project": _cmd_project,
    "compare": _cmd_compare,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return _COMMANDS[args.command](args)
    except SystemExit as exc:
        print(exc, file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
