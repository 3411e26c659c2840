"""Figure rendering for trial outputs.

Everything draws through the Agg backend so reports render headlessly.
Each render function writes one PNG and returns its path; the data helpers
are pure so the same aggregates feed both the figures and the delimited
exports next to them.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .errors import DomainError
from .evaluation import clarke_zone

TREND_FIELDS = ("steps", "intake_calories", "net_carb", "fat", "weight", "glucose")
TREND_LABELS = {
    "steps": "steps / day",
    "intake_calories": "intake (kcal)",
    "net_carb": "net carbs (g)",
    "fat": "fat (g)",
    "weight": "weight (lbs)",
    "glucose": "glucose (mg/dL)",
}
ARM_COLORS = {"ai": "tab:blue", "non_ai": "tab:orange"}
ARM_LABELS = {"ai": "AI", "non_ai": "non-AI"}


def monthly_trends(trajectories: dict, arms: dict, month_days: int) -> dict:
    """Average each variable per calendar month of the trial, per arm.

    A patient contributes their own monthly mean (absent values skipped);
    the arm value is the mean over its patients. Shape:
    {arm: {field: [month 1 mean, month 2 mean, ...]}}.
    """
    if month_days < 1:
        raise DomainError("month_days must be positive")
    n_months = max(
        (len(records) + month_days - 1) // month_days
        for records in trajectories.values()
    )
    out: dict = {}
    for arm in sorted(set(arms.values())):
        out[arm] = {field: [] for field in TREND_FIELDS}
    for month in range(n_months):
        lo, hi = month * month_days, (month + 1) * month_days
        for field in TREND_FIELDS:
            per_arm: dict = {arm: [] for arm in out}
            for pid, records in trajectories.items():
                values = [
                    r.value(field) for r in records[lo:hi]
                    if r.value(field) is not None
                ]
                if values:
                    per_arm[arms[pid]].append(sum(values) / len(values))
            for arm, means in per_arm.items():
                out[arm][field].append(
                    sum(means) / len(means) if means else float("nan"))
    return out


def trends_csv(trends: dict) -> str:
    lines = ["arm,field,month,value"]
    for arm in sorted(trends):
        for field in TREND_FIELDS:
            for month, value in enumerate(trends[arm][field], start=1):
                lines.append(f"{arm},{field},{month},{value!r}")
    return "\n".join(lines) + "\n"


def render_trend_panels(trends: dict, observation_months: int, out_path) -> Path:
    """Six monthly panels, one line per arm, with a dashed red rule where
    the intervention starts (after the observation months)."""
    out_path = Path(out_path)
    fig, axes = plt.subplots(2, 3, figsize=(13, 7), sharex=True)
    for ax, field in zip(axes.flat, TREND_FIELDS):
        for arm in sorted(trends):
            series = trends[arm][field]
            months = range(1, len(series) + 1)
            ax.plot(months, series, marker="o",
                    color=ARM_COLORS.get(arm), label=ARM_LABELS.get(arm, arm))
        if observation_months > 0:
            ax.axvline(observation_months + 0.5, color="red", linestyle="--",
                       linewidth=1.2)
        ax.set_title(TREND_LABELS[field])
        ax.set_xlabel("month")
        ax.grid(True, alpha=0.3)
    axes.flat[0].legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def render_weight_lines(trajectories: dict, arms: dict, out_path) -> Path:
    """One weight line per patient across the whole trial, colored by arm."""
    out_path = Path(out_path)
    fig, ax = plt.subplots(figsize=(9, 5))
    seen = set()
    for pid in sorted(trajectories):
        arm = arms[pid]
        days = range(1, len(trajectories[pid]) + 1)
        weights = [r.weight for r in trajectories[pid]]
        ax.plot(days, weights, color=ARM_COLORS.get(arm), alpha=0.6,
                label=ARM_LABELS.get(arm, arm) if arm not in seen else None)
        seen.add(arm)
    ax.set_xlabel("trial day")
    ax.set_ylabel("weight (lbs)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def render_clarke_scatter(pairs, out_path) -> Path:
    """Reference vs predicted glucose, colored by error-grid zone, with the
    identity and the +/-20% agreement guides."""
    out_path = Path(out_path)
    zones = {}
    for reference, predicted in pairs:
        zones.setdefault(clarke_zone(reference, predicted), []).append(
            (reference, predicted))
    fig, ax = plt.subplots(figsize=(6.5, 6.5))
    palette = {"A": "tab:green", "B": "tab:olive", "C": "tab:orange",
               "D": "tab:red", "E": "tab:purple"}
    for zone in "ABCDE":
        if zone not in zones:
            continue
        xs, ys = zip(*zones[zone])
        ax.scatter(xs, ys, s=14, color=palette[zone], label=f"zone {zone}")
    top = 400.0
    ax.plot([0, top], [0, top], color="gray", linewidth=1)
    ax.plot([0, top], [0, 1.2 * top], color="gray", linewidth=0.8, linestyle=":")
    ax.plot([0, top], [0, 0.8 * top], color="gray", linewidth=0.8, linestyle=":")
    ax.set_xlim(0, top)
    ax.set_ylim(0, top)
    ax.set_xlabel("reference glucose (mg/dL)")
    ax.set_ylabel("predicted glucose (mg/dL)")
    ax.legend(loc="upper left")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
