"""Report figures: sample scatters with transport-map arrows.

Figures render to SVG via matplotlib (Agg backend); the same data always
lands next to the figure as CSV so results stay diffable and scriptable.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .problems import ProblemSpec

MU_COLOR = "#7b4fa6"      # source samples
NU_COLOR = "#e69138"      # target samples
PUSH_COLOR = "#2a7f62"    # mapped samples
MAP_ARROW = "#cc2222"     # estimated transport map
REF_ARROW = "#222222"     # analytic optimal map


def transport_map_figure(problem: ProblemSpec, map_fn, out_dir,
                         stem: str = "transport_map", num_samples: int = 2000,
                         num_arrows: int = 60, seed: int = 0):
    """Scatter mu, nu, and the pushforward, with x -> G(x) arrows for a
    subsample; writes ``<stem>.svg`` plus ``<stem>_samples.csv`` and
    ``<stem>_arrows.csv``.  Returns the figure path."""
    if problem.dim != 2:
        raise ValueError("transport-map figures are 2D")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(seed))
    X = problem.sample_mu(num_samples, rng)
    R = problem.sample_nu(num_samples, rng)
    Y = map_fn(X)
    Xa = X[:num_arrows]
    Ya = Y[:num_arrows]

    samples_csv = out / f"{stem}_samples.csv"
    with open(samples_csv, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["kind", "x1", "x2"])
        for kind, pts in (("mu", X), ("nu", R), ("pushforward", Y)):
            for p in pts:
                w.writerow([kind, repr(float(p[0])), repr(float(p[1]))])
    arrows_csv = out / f"{stem}_arrows.csv"
    with open(arrows_csv, "w", newline="") as f:
        w = csv.writer(f)
        header = ["x1", "x2", "y1", "y2"]
        ref = problem.analytic_map(Xa) if problem.analytic_map is not None else None
        if ref is not None:
            header += ["ref_y1", "ref_y2"]
        w.writerow(header)
        for i in range(len(Xa)):
            row = [repr(float(v)) for v in (*Xa[i], *Ya[i])]
            if ref is not None:
                row += [repr(float(v)) for v in ref[i]]
            w.writerow(row)

    fig, ax = plt.subplots(figsize=(6, 6))
    ax.scatter(X[:, 0], X[:, 1], s=4, c=MU_COLOR, alpha=0.4, label="source")
    ax.scatter(R[:, 0], R[:, 1], s=4, c=NU_COLOR, alpha=0.4, label="target")
    ax.scatter(Y[:, 0], Y[:, 1], s=4, c=PUSH_COLOR, alpha=0.4, label="mapped")
    if problem.analytic_map is not None:
        ref = problem.analytic_map(Xa)
        ax.quiver(Xa[:, 0], Xa[:, 1], ref[:, 0] - Xa[:, 0], ref[:, 1] - Xa[:, 1],
                  angles="xy", scale_units="xy", scale=1.0, color=REF_ARROW,
                  width=0.0035, label="optimal map", alpha=0.8)
    ax.quiver(Xa[:, 0], Xa[:, 1], Ya[:, 0] - Xa[:, 0], Ya[:, 1] - Xa[:, 1],
              angles="xy", scale_units="xy", scale=1.0, color=MAP_ARROW,
              width=0.0035, label="estimated map", alpha=0.8)
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=8)
    title = problem.name + (" (substitute pair)" if problem.substitute else "")
    ax.set_title(title)
    fig.tight_layout()
    svg = out / f"{stem}.svg"
    fig.savefig(svg, format="svg")
    plt.close(fig)
    return svg


def training_curves_figure(log_csv, out_dir, stem: str = "training"):
    """Loss and evaluation-metric curves from a training log."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    steps, total, hj, sw, me = [], [], [], [], []
    with open(log_csv) as f:
        for row in csv.DictReader(f):
            steps.append(int(row["step"]))
            total.append(float(row["loss_total"]))
            hj.append(float(row["loss_hj"]))
            sw.append(float(row["sw_distance"]) if row["sw_distance"] else np.nan)
            me.append(float(row["map_error"]) if row["map_error"] else np.nan)
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    axes[0].plot(steps, total, label="total loss")
    if np.any(np.asarray(hj) > 0):
        axes[0].plot(steps, hj, label="HJ residual")
    axes[0].set_yscale("log")
    axes[0].set_xlabel("step")
    axes[0].legend(fontsize=8)
    sw_arr, me_arr = np.asarray(sw), np.asarray(me)
    if np.any(np.isfinite(sw_arr)):
        axes[1].plot(steps, sw_arr, ".-", label="sliced W2")
    if np.any(np.isfinite(me_arr)):
        axes[1].plot(steps, me_arr, ".-", label="map error")
    axes[1].set_yscale("log")
    axes[1].set_xlabel("step")
    axes[1].legend(fontsize=8)
    fig.tight_layout()
    svg = out / f"{stem}.svg"
    fig.savefig(svg, format="svg")
    plt.close(fig)
    return svg
