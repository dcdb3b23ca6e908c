"""Figure rendering for study reports.

Every study writes delimited data files; these helpers render the matching
matplotlib figures next to them.  The Agg backend keeps everything headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _finish(fig, path) -> str:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)
    return str(path)


def regret_curve_figure(series: dict, path) -> str:
    """Cumulative regret per round, one line per horizon."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for label in sorted(series, key=lambda s: int(s)):
        curve = series[label]
        ax.plot(range(1, len(curve) + 1), curve, label=f"T={label}")
    ax.set_xlabel("round")
    ax.set_ylabel("cumulative scaled regret")
    ax.legend(frameon=False)
    return _finish(fig, path)


def loglog_scaling_figure(horizons, totals, slope: float, path) -> str:
    fig, ax = plt.subplots(figsize=(5.2, 4.2))
    ax.loglog(horizons, totals, "o-", label="measured")
    anchor = totals[0]
    ref = [anchor * (t / horizons[0]) ** 0.5 for t in horizons]
    ax.loglog(horizons, ref, "--", color="gray", label="slope 1/2 reference")
    ax.set_xlabel("horizon T")
    ax.set_ylabel("cumulative regret at T")
    ax.set_title(f"fitted slope {slope:.3f}")
    ax.legend(frameon=False)
    return _finish(fig, path)


def coverage_figure(contained: list, target: float, path) -> str:
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    freq = sum(contained) / len(contained)
    ax.bar(["covered", "missed"], [freq, 1.0 - freq], color=["tab:blue", "tab:red"])
    ax.axhline(target, color="black", linestyle="--", label=f"target {target:.2f}")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("frequency")
    ax.legend(frameon=False)
    return _finish(fig, path)


def rho_histogram_figure(samples, floor: float, path) -> str:
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    ax.hist(samples, bins=30, color="tab:blue", alpha=0.8)
    ax.axvline(floor, color="tab:red", linestyle="--", label=f"floor {floor:.3f}")
    ax.set_xlabel("rho*")
    ax.set_ylabel("count")
    ax.legend(frameon=False)
    return _finish(fig, path)


def censoring_profile_figure(offsets, loglik, edge_probs, combined, path) -> str:
    """Flat profile likelihood along the censored direction, with the
    per-edge probability split sliding underneath the fixed combined value."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.4, 3.6))
    ax1.plot(offsets, loglik, color="tab:blue")
    ax1.set_xlabel("offset along censored direction")
    ax1.set_ylabel("log-likelihood")
    ax1.ticklabel_format(useOffset=False)
    ax2.plot(offsets, edge_probs, color="tab:orange", label="one edge's probability")
    ax2.axhline(combined, color="tab:green", linestyle="--",
                label=f"combined estimate {combined:.3f}")
    ax2.set_xlabel("offset along censored direction")
    ax2.set_ylabel("probability")
    ax2.legend(frameon=False)
    return _finish(fig, path)
