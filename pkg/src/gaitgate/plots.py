"""Report rendering: error-rate figures and the curves CSV.

All functions consume the evaluation report dict and write files; nothing
here computes metrics. The Agg backend is forced so rendering works
headless.
"""

from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

log = logging.getLogger(__name__)


def write_curves_csv(report: dict, path: Path) -> None:
    """theta,far,frr rows over the sweep grid, lossless float formatting."""
    lines = ["theta,far,frr"]
    for theta, far, frr in zip(report["thetas"], report["far_curve"], report["frr_curve"]):
        lines.append(f"{theta!r},{far!r},{frr!r}")
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def save_error_rate_figure(report: dict, path: Path) -> None:
    """FAR and FRR against the threshold, with the EER operating point."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(report["thetas"], report["far_curve"], label="FAR", color="tab:red")
    ax.plot(report["thetas"], report["frr_curve"], label="FRR", color="tab:blue")
    marker = "o" if report.get("eer_crossed", True) else "x"
    ax.plot(
        [report["eer_theta"]],
        [report["eer"]],
        marker,
        color="black",
        label=f"EER {report['eer']:.3f} @ {report['eer_theta']:.3f}",
    )
    ax.axvline(report["best_theta"], color="gray", linestyle=":", linewidth=1,
               label=f"best F1 threshold {report['best_theta']:.3f}")
    ax.set_xlabel("cosine distance threshold")
    ax.set_ylabel("rate")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_f1_figure(report: dict, path: Path) -> None:
    """Per-user F1 at the best threshold, with the cross-user mean."""
    users = [row["user_id"] for row in report["per_user"]]
    f1s = [row["f1"] for row in report["per_user"]]
    fig, ax = plt.subplots(figsize=(max(5, 0.6 * len(users) + 2), 4))
    ax.bar(range(len(users)), f1s, color="tab:green")
    ax.axhline(report["mean_f1"], color="black", linestyle="--", linewidth=1,
               label=f"mean F1 {report['mean_f1']:.3f}")
    ax.set_xticks(range(len(users)))
    ax.set_xticklabels(users, rotation=45, ha="right")
    ax.set_ylabel("F1 at best threshold")
    ax.set_ylim(0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_report_artifacts(report: dict, report_path: Path) -> list[Path]:
    """Write the curves CSV and both figures next to the JSON report."""
    report_path = Path(report_path)
    stem = report_path.with_suffix("")
    outputs = {
        Path(f"{stem}_curves.csv"): write_curves_csv,
        Path(f"{stem}_rates.png"): save_error_rate_figure,
        Path(f"{stem}_f1.png"): save_f1_figure,
    }
    for out_path, writer in outputs.items():
        writer(report, out_path)
        log.info("wrote %s", out_path)
    return list(outputs)
