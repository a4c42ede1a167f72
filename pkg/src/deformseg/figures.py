"""Figure rendering for the CLI report paths (PNG next to each CSV)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .bench import BenchRow  # noqa: E402
from .metrics import MetricsSummary  # noqa: E402
from .training import TrainLog  # noqa: E402


def save_training_curves(log: TrainLog, path) -> None:
    steps = [r.step for r in log.rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, [r.loss for r in log.rows], color="tab:red", label="loss")
    ax.set_xlabel("step")
    ax.set_ylabel("loss", color="tab:red")
    twin = ax.twinx()
    twin.plot(steps, [r.dsc for r in log.rows], color="tab:blue", alpha=0.7, label="batch DSC")
    twin.set_ylabel("batch DSC", color="tab:blue")
    twin.set_ylim(0, 1.02)
    ax.set_title("training")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_metrics_bars(summary: MetricsSummary, path) -> None:
    classes = sorted(summary.dsc_per_class)
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.5))
    axes[0].bar([str(c) for c in classes], [summary.dsc_per_class[c] for c in classes],
                color="tab:blue")
    axes[0].axhline(summary.dsc_mean, color="k", linestyle="--", linewidth=1,
                    label=f"mean {summary.dsc_mean:.3f}")
    axes[0].set_ylim(0, 1.05)
    axes[0].set_title("DSC per class")
    axes[0].set_xlabel("class")
    axes[0].legend()
    hd = [summary.hd95_per_class[c] for c in classes]
    axes[1].bar([str(c) for c in classes], hd, color="tab:orange")
    axes[1].set_title("HD95 per class (px)")
    axes[1].set_xlabel("class")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_bench_scaling(rows: list[BenchRow], path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for variant in sorted({r.variant for r in rows}):
        mine = sorted((r for r in rows if r.variant == variant), key=lambda r: r.tokens)
        ax.plot([r.tokens for r in mine], [r.micros for r in mine],
                marker="o", label=variant)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("tokens L")
    ax.set_ylabel("forward time (us)")
    ax.set_title("attention scaling")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_ablation_bars(rows: list[tuple[str, float]], path) -> None:
    names = [name for name, _ in rows]
    values = [value for _, value in rows]
    fig, ax = plt.subplots(figsize=(max(4, 1.6 * len(rows)), 4))
    ax.bar(names, values, color="tab:green")
    ax.set_ylabel("mean test DSC")
    ax.set_ylim(0, 1.05)
    for i, v in enumerate(values):
        ax.text(i, v + 0.01, f"{v:.3f}", ha="center", fontsize=9)
    ax.set_title("ablation")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
