"""Figure rendering for the report paths.

Every CLI report writes a PNG next to its CSV.  Rendering is headless
(Agg backend) and deterministic in content, though PNG bytes are not part
of the reproducibility contract (the CSV is).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams.update(
    {
        "figure.figsize": (6.4, 4.2),
        "figure.dpi": 110,
        "axes.grid": True,
        "grid.linestyle": "--",
        "grid.alpha": 0.5,
        "lines.linewidth": 1.6,
        "lines.markersize": 5,
    }
)


def convergence_figure(path, reports, title="convergence"):
    """Log-log error vs coarse mesh size; one line per labelled report,
    plus a reference slope through the last line's final point."""
    fig, ax = plt.subplots()
    slope_h = slope_e = order = None
    for label, report in reports.items():
        hs = [r.h for r in report.rows]
        errs = [r.error for r in report.rows]
        ax.loglog(hs, errs, marker="o", label=label)
        rates = [r.rate for r in report.rows[1:] if r.rate is not None]
        if rates:
            order = round(np.median(rates))
            slope_h, slope_e = hs[-2:], errs[-1]
    if order and slope_h:
        h0, h1 = slope_h
        ref = [slope_e * (h0 / h1) ** order, slope_e]
        ax.loglog([h0, h1], ref, "k:", label=f"slope {order:g}")
    ax.set_xlabel("coarse mesh size h")
    ax.set_ylabel("L2 error at final time")
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.invert_xaxis()
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)


def energy_figure(path, series, title="discrete energy"):
    fig, ax = plt.subplots()
    ts = [t for t, _ in series]
    es = [e for _, e in series]
    ax.plot(ts, es)
    e0 = es[0] if es else 1.0
    if e0 > 0:
        drift = (max(es) - min(es)) / e0
        ax.set_title(f"{title} (relative spread {drift:.2e})")
    else:
        ax.set_title(title)
    ax.set_xlabel("time")
    ax.set_ylabel("energy")
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)


def stability_figure(path, rows, title="stability scan"):
    """Bar chart of the largest stable ratio per (scheme, p, overlap) row."""
    fig, ax = plt.subplots()
    labels = [f"{r['scheme']} p={r['p']} e={r['overlap']}" for r in rows]
    values = [r["nu_max"] for r in rows]
    pos = np.arange(len(rows))
    ax.bar(pos, values, width=0.6)
    ax.axhline(1.0, color="k", linestyle=":", linewidth=1)
    ax.set_xticks(pos)
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("largest stable step ratio")
    ax.set_title(title)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)


def snapshot_figure(path, x, fields, t, title="solution"):
    """Final-time traces; ``fields`` maps labels to (values, exact or None)."""
    fig, ax = plt.subplots()
    for label, (values, exact) in fields.items():
        order = np.argsort(x)
        ax.plot(np.asarray(x)[order], np.asarray(values)[order], label=label)
        if exact is not None:
            ax.plot(np.asarray(x)[order], np.asarray(exact)[order], "k--",
                    linewidth=1, label=f"{label} exact")
    ax.set_xlabel("x")
    ax.set_title(f"{title} at t = {t:g}")
    ax.legend(fontsize=8)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
