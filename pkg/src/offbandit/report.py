"""Benchmark artifact writers: delimited tables, JSON summary, and figures.

All .csv and .json outputs are deterministic functions of the benchmark
result (floats are written in shortest round-trip form), so reruns with the
same config produce byte-identical files.  Wall-clock numbers go to
timing.txt only.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_figures", "write_report"]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_timing(path: Path, timings: dict, stage_seconds: dict) -> None:
    lines = [
        "# wall-clock measurements in seconds; kept out of the .csv/.json",
        "# outputs so those stay byte-identical across reruns",
        "section\tname\tseconds",
    ]
    for name, value in timings.items():
        lines.append(f"per_context_median\t{name}\t{value:.6g}")
    for name, value in stage_seconds.items():
        lines.append(f"stage\t{name}\t{value:.6g}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_report(result, out_dir: str | Path) -> list[Path]:
    """Write every benchmark artifact into ``out_dir``; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def emit_csv(name, header, rows):
        path = out / name
        _write_csv(path, header, rows)
        written.append(path)

    emit_csv(
        "methods.csv",
        ["method", "predicted_mean_tp", "predicted_std_tp", "true_mean_tp",
         "true_se", "mean_sigma", "iterations_total"],
        [[r.method, r.predicted_mean_tp, r.predicted_std_tp, r.true_mean_tp,
          r.true_se, r.mean_sigma, r.iterations_total] for r in result.reports],
    )
    emit_csv(
        "restarts.csv",
        ["restarts", "predicted_mean_tp", "predicted_std_tp", "true_mean_tp",
         "true_se", "mean_sigma", "iterations_total"],
        [[row["restarts"], row["predicted_mean_tp"], row["predicted_std_tp"],
          row["true_mean_tp"], row["true_se"], row["mean_sigma"],
          row["iterations_total"]] for row in result.restart_rows],
    )
    emit_csv(
        "beta.csv",
        ["beta", "mean_mu", "mean_sigma", "true_mean_tp", "true_se"],
        [[row["beta"], row["mean_mu"], row["mean_sigma"], row["true_mean_tp"],
          row["true_se"]] for row in result.beta_rows],
    )
    emit_csv(
        "m_sweep.csv",
        ["m", "estimate", "standard_error"],
        [[row["m"], row["estimate"], row["standard_error"]] for row in result.m_rows],
    )
    emit_csv(
        "box_samples.csv",
        ["method", "context_index", "predicted_value", "true_value"],
        (
            [rep.method, i, p, t]
            for rep in result.reports
            for i, (p, t) in enumerate(zip(rep.predicted_values, rep.true_values))
        ),
    )

    summary_path = out / "summary.json"
    summary_path.write_text(
        json.dumps(result.summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    written.append(summary_path)

    timing_path = out / "timing.txt"
    _write_timing(timing_path, result.timings, result.stage_seconds)
    written.append(timing_path)

    written.extend(render_figures(result, out))
    return written


# ---------------------------------------------------------------------------
# figures


def _save(fig, path: Path) -> Path:
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def _fig_restarts(result, out: Path) -> Path:
    ks = [row["restarts"] for row in result.restart_rows]
    pred = [row["predicted_mean_tp"] for row in result.restart_rows]
    true = [row["true_mean_tp"] for row in result.restart_rows]
    err = [2.0 * row["true_se"] for row in result.restart_rows]
    logging_true = result.report("logging").true_mean_tp

    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.plot(ks, pred, "o-", label="predicted")
    ax.errorbar(ks, true, yerr=err, fmt="s-", capsize=3, label="true")
    ax.axhline(logging_true, color="gray", ls="--", lw=1, label="logging (true)")
    ax.set_xlabel("restarts")
    ax.set_ylabel("mean throughput")
    ax.set_xticks(ks)
    ax.legend()
    ax.set_title("Restart sweep: predicted vs true")
    return _save(fig, out / "fig_restarts.png")


def _fig_beta(result, out: Path) -> Path:
    betas = [row["beta"] for row in result.beta_rows]
    mu = [row["mean_mu"] for row in result.beta_rows]
    sigma = [row["mean_sigma"] for row in result.beta_rows]
    true = [row["true_mean_tp"] for row in result.beta_rows]

    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.plot(betas, mu, "o-", label="mean predicted reward")
    ax.plot(betas, true, "s-", label="mean true reward")
    ax.set_xlabel("uncertainty penalty")
    ax.set_ylabel("reward")
    ax2 = ax.twinx()
    ax2.plot(betas, sigma, "d--", color="tab:red", label="mean ensemble std")
    ax2.set_ylabel("ensemble std", color="tab:red")
    ax2.tick_params(axis="y", labelcolor="tab:red")
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, fontsize=8)
    ax.set_title("Pessimism sweep")
    return _save(fig, out / "fig_beta.png")


def _fig_methods(result, out: Path) -> Path:
    r_max = result.config.restart_grid[-1]
    order = ["logging", "logged-actions-DM", f"DM-{r_max}-restarts", "OPPG", "hybrid"]
    reps = [result.report(m) for m in order]

    fig, ax = plt.subplots(figsize=(5.6, 3.4))
    ax.boxplot(
        [rep.true_values for rep in reps],
        tick_labels=[rep.method for rep in reps],
        showmeans=True,
    )
    ax.set_ylabel("true reward at chosen action")
    ax.tick_params(axis="x", labelrotation=20)
    ax.set_title("Per-context true reward by method")
    return _save(fig, out / "fig_methods.png")


def _fig_m_sweep(result, out: Path) -> Path:
    labels = [_fmt(row["m"]) for row in result.m_rows]
    est = [row["estimate"] for row in result.m_rows]
    err = [2.0 * row["standard_error"] for row in result.m_rows]
    xs = np.arange(len(labels))

    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.errorbar(xs, est, yerr=err, fmt="o-", capsize=3)
    ax.set_xticks(xs, labels)
    ax.set_xlabel("importance weight cap")
    ax.set_ylabel("IPS estimate of trained policy")
    ax.set_title("Clipping sweep")
    return _save(fig, out / "fig_m_sweep.png")


def render_figures(result, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    return [
        _fig_restarts(result, out),
        _fig_beta(result, out),
        _fig_methods(result, out),
        _fig_m_sweep(result, out),
    ]
