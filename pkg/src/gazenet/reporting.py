"""Machine-readable run reports and their rendered figures.

Reports serialize to JSON; the canonical form strips wall-clock timings so
that two runs with the same seed produce byte-identical canonical documents.
Figure rendering is optional sugar written next to the JSON/CSV outputs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__


@dataclass
class FoldReport:
    """Evaluation of one held-out person under one resolution condition."""

    held_out: str
    count: int
    mean_angular_error_deg: float
    mean_euclidean_error_deg: float
    condition: str
    wall_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "held_out": self.held_out,
            "count": self.count,
            "mean_angular_error_deg": self.mean_angular_error_deg,
            "mean_euclidean_error_deg": self.mean_euclidean_error_deg,
            "condition": self.condition,
            "wall_seconds": self.wall_seconds,
        }


@dataclass
class RunReport:
    config: dict
    seed: int
    folds: list = field(default_factory=list)
    version: str = __version__

    @classmethod
    def build(cls, config: dict, seed: int, folds) -> "RunReport":
        return cls(config=config, seed=seed, folds=list(folds))

    @property
    def total_count(self) -> int:
        return sum(f.count for f in self.folds)

    def overall(self) -> dict:
        """Sample-weighted means across folds."""
        n = self.total_count
        ang = sum(f.mean_angular_error_deg * f.count for f in self.folds) / n
        euc = sum(f.mean_euclidean_error_deg * f.count for f in self.folds) / n
        return {
            "samples": n,
            "mean_angular_error_deg": ang,
            "mean_euclidean_error_deg": euc,
        }

    def to_dict(self, canonical: bool = False) -> dict:
        folds = []
        for f in self.folds:
            d = f.to_dict()
            if canonical:
                d.pop("wall_seconds")
            folds.append(d)
        return {
            "toolkit_version": self.version,
            "seed": self.seed,
            "config": self.config,
            "folds": folds,
            "overall": self.overall(),
        }

    def canonical_json(self) -> str:
        """Timing-free serialization; byte-identical for same-seed runs."""
        return json.dumps(self.to_dict(canonical=True), sort_keys=True,
                          separators=(",", ":"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n",
                              encoding="utf-8")


def write_train_log(path, rows) -> None:
    """Per-epoch CSV: epoch,loss,train_error_deg."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "train_error_deg"])
        for epoch, loss, err in rows:
            writer.writerow([epoch, repr(float(loss)), repr(float(err))])


def read_train_log(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        return [(int(r[0]), float(r[1]), float(r[2])) for r in reader]


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------


def _axes():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def render_train_curves(log_rows, out_path) -> Path:
    """Loss and train-error curves next to the CSV log."""
    plt = _axes()
    epochs = [r[0] for r in log_rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.plot(epochs, [r[1] for r in log_rows], color="tab:blue")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.set_yscale("log")
    ax2.plot(epochs, [r[2] for r in log_rows], color="tab:orange")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("train angular error (deg)")
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def render_fold_errors(report: RunReport, out_path) -> Path:
    """Per-fold error bars with the overall mean marked."""
    plt = _axes()
    folds = report.folds
    labels = [f.held_out for f in folds]
    ang = [f.mean_angular_error_deg for f in folds]
    euc = [f.mean_euclidean_error_deg for f in folds]
    xs = range(len(folds))
    fig, ax = plt.subplots(figsize=(max(5.0, 0.9 * len(folds) + 2), 3.4))
    width = 0.38
    ax.bar([x - width / 2 for x in xs], ang, width, label="angular", color="tab:blue")
    ax.bar([x + width / 2 for x in xs], euc, width, label="euclidean", color="tab:orange")
    overall = report.overall()["mean_angular_error_deg"]
    ax.axhline(overall, color="tab:blue", linestyle="--", linewidth=1,
               label=f"overall {overall:.2f} deg")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_ylabel("held-out error (deg)")
    ax.set_title(f"{report.config.get('architecture', '?')} - {folds[0].condition}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def render_latency_hist(samples_ms, stats: dict, out_path) -> Path:
    """Latency distribution for the benchmark command."""
    plt = _axes()
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    ax.hist(samples_ms, bins=40, color="tab:blue", alpha=0.8)
    for key, color in (("median_ms", "tab:green"), ("p95_ms", "tab:red")):
        ax.axvline(stats[key], color=color, linestyle="--", linewidth=1,
                   label=f"{key.replace('_ms', '')} {stats[key]:.2f} ms")
    ax.set_xlabel("single-sample forward latency (ms)")
    ax.set_ylabel("count")
    ax.legend(fontsize=8)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
