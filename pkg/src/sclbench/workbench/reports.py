"""Delimited report emitters plus matplotlib figure rendering.

Every report path writes the canonical TSV/CSV artifact; the corresponding
figure is rendered next to it with the same stem.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Sequence

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ..objectives import METHODS  # noqa: E402
from ..trainer import RunRecord  # noqa: E402

METHOD_ORDER = [m.upper() for m in METHODS]  # fixed column order


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def write_data_efficiency_grid(grid: Dict[str, Dict[float, RunRecord]], path) -> Path:
    """TSV: one row per method, one column per fraction (ascending)."""
    path = Path(path)
    fractions = sorted({f for runs in grid.values() for f in runs})
    header = "method\t" + "\t".join(f"{int(f * 100)}%" for f in fractions)
    lines = [header]
    for method in METHODS:
        if method not in grid:
            continue
        cells = [_fmt(grid[method][f].test_f1) if f in grid[method] else "" for f in fractions]
        lines.append(method.upper() + "\t" + "\t".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def plot_data_efficiency(grid: Dict[str, Dict[float, RunRecord]], path) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for method in METHODS:
        if method not in grid:
            continue
        fractions = sorted(grid[method])
        ax.plot([f * 100 for f in fractions],
                [grid[method][f].test_f1 for f in fractions],
                marker="o", label=method.upper())
    ax.set_xlabel("train fraction (%)")
    ax.set_ylabel("test macro-F1")
    ax.set_title("Data efficiency")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def write_batch_size_table(results: Dict[str, Dict[int, RunRecord]], path) -> Path:
    """Plot-ready long-format TSV: method, batch size, dev and test macro-F1."""
    path = Path(path)
    lines = ["method\tbatch_size\tdev_macro_f1\ttest_macro_f1"]
    for method in METHODS:
        if method not in results:
            continue
        for size in sorted(results[method]):
            rec = results[method][size]
            lines.append(f"{method.upper()}\t{size}\t{_fmt(rec.best_dev_f1)}\t{_fmt(rec.test_f1)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def plot_batch_size(results: Dict[str, Dict[int, RunRecord]], path) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for method in METHODS:
        if method not in results:
            continue
        sizes = sorted(results[method])
        ax.plot(sizes, [results[method][s].best_dev_f1 for s in sizes],
                marker="s", label=method.upper())
    ax.set_xscale("log", base=2)
    ax.set_xticks(sorted({s for r in results.values() for s in r}))
    ax.get_xaxis().set_major_formatter(plt.ScalarFormatter())
    ax.set_xlabel("batch size")
    ax.set_ylabel("dev macro-F1")
    ax.set_title("Batch-size ablation")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def write_compare_grid(records: Sequence[RunRecord], path) -> Path:
    """Task x method TSV with methods in the fixed CE..TLCL order and a
    trailing per-method average row."""
    path = Path(path)
    by_task: Dict[str, Dict[str, float]] = {}
    for rec in records:
        task = rec.config.get("task", "task")
        method = rec.config["method"].upper()
        by_task.setdefault(task, {})[method] = rec.test_f1
    methods = [m for m in METHOD_ORDER if any(m in row for row in by_task.values())]
    lines = ["task\t" + "\t".join(methods)]
    for task in sorted(by_task):
        row = by_task[task]
        lines.append(task + "\t" + "\t".join(_fmt(row[m]) if m in row else "" for m in methods))
    avgs = []
    for m in methods:
        vals = [row[m] for row in by_task.values() if m in row]
        avgs.append(_fmt(float(np.mean(vals))) if vals else "")
    lines.append("Avg.\t" + "\t".join(avgs))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def plot_compare(records: Sequence[RunRecord], path) -> Path:
    path = Path(path)
    by_task: Dict[str, Dict[str, float]] = {}
    for rec in records:
        task = rec.config.get("task", "task")
        by_task.setdefault(task, {})[rec.config["method"].upper()] = rec.test_f1
    tasks = sorted(by_task)
    methods = [m for m in METHOD_ORDER if any(m in row for row in by_task.values())]
    fig, ax = plt.subplots(figsize=(max(5, 1.2 * len(tasks)), 3.5))
    width = 0.8 / max(len(methods), 1)
    xs = np.arange(len(tasks))
    for i, m in enumerate(methods):
        vals = [by_task[t].get(m, 0.0) for t in tasks]
        ax.bar(xs + i * width, vals, width=width, label=m)
    ax.set_xticks(xs + 0.4 - width / 2)
    ax.set_xticklabels(tasks, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("test macro-F1")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_projection(coords: np.ndarray, label_names: Sequence[str], path, title: str = "") -> Path:
    path = Path(path)
    names = list(label_names)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    for name in sorted(set(names)):
        mask = np.array([n == name for n in names])
        ax.scatter(coords[mask, 0], coords[mask, 1], s=12, alpha=0.7, label=name)
    ax.set_xlabel("PC1")
    ax.set_ylabel("PC2")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
