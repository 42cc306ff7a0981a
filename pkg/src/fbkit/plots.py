"""Figure rendering for the CLI report paths (file output only).

Every figure is written next to its CSV companion so the delimited data
stays the canonical record; the PNGs are a convenience view of the same
series.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "convergence_figure",
    "solve_profile_figure",
    "rate_curve_figure",
    "region_figure",
]


def _save(fig, path):
    fig.savefig(path, dpi=130, bbox_inches="tight", metadata={"Software": "fbkit"})
    plt.close(fig)


def convergence_figure(series, predictions, path, title="distance to reference"):
    """Observed error profiles with predicted post-identification lines.

    ``series``: list of (label, ks, errs); ``predictions``: list of
    (label, K, err_K, rho) anchors, drawn dashed from iteration K onward.
    """
    fig, ax = plt.subplots(figsize=(7.0, 4.4))
    colors = {}
    for i, (label, ks, errs) in enumerate(series):
        line, = ax.semilogy(ks, errs, lw=1.2, label=f"{label} (observed)")
        colors[label] = line.get_color()
    for label, big_k, err_k, rho in predictions:
        if rho <= 0 or err_k <= 0:
            continue
        ks = np.asarray([k for _, kk, _ in series for k in kk])
        k_end = ks.max() if ks.size else big_k + 100
        kk = np.arange(big_k, k_end + 1)
        ax.semilogy(kk, err_k * rho ** (kk - big_k), "--", lw=1.0,
                    color=colors.get(label), label=f"{label} (predicted)")
        ax.plot([big_k], [err_k], "o", ms=4, color=colors.get(label))
    ax.set_xlabel("iteration k")
    ax.set_ylabel(r"$\|x_k - x^{ref}\|$")
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    _save(fig, path)


def solve_profile_figure(trace, path, title="solver run"):
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6))
    ks = trace.k
    obj = np.asarray(trace.obj)
    best = np.min(obj)
    axes[0].semilogy(ks, np.maximum(obj - best, 1e-300), lw=1.2)
    axes[0].set_xlabel("iteration k")
    axes[0].set_ylabel("objective - best")
    axes[1].semilogy(ks[1:], trace.step_norm[1:], lw=1.2)
    axes[1].set_xlabel("iteration k")
    axes[1].set_ylabel(r"$\|x_k - x_{k-1}\|$")
    fig.suptitle(title)
    _save(fig, path)


def rate_curve_figure(pairs, a_opt, rho_opt, path, title="local rate vs inertia"):
    a = [p[0] for p in pairs]
    rho = [p[1] for p in pairs]
    fig, ax = plt.subplots(figsize=(5.6, 4.0))
    ax.plot(a, rho, lw=1.4)
    ax.plot([a_opt], [rho_opt], "ro", ms=5, label=f"optimum a={a_opt:.3f}")
    ax.set_xlabel("inertia a (= b)")
    ax.set_ylabel(r"$\rho(M)$")
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    _save(fig, path)


def region_figure(cells, a_values, b_values, path, title="convergence region"):
    na, nb = len(a_values), len(b_values)
    img = np.zeros((nb, na))
    for a, b, branch, feasible in cells:
        i = int(np.argmin(np.abs(np.asarray(b_values) - b)))
        j = int(np.argmin(np.abs(np.asarray(a_values) - a)))
        img[i, j] = branch if feasible else 0
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    mesh = ax.pcolormesh(a_values, b_values, img, shading="nearest",
                         cmap="viridis", vmin=0, vmax=2)
    fig.colorbar(mesh, ax=ax, label="0 infeasible / branch 1 / branch 2")
    ax.set_xlabel("a")
    ax.set_ylabel("b")
    ax.set_title(title)
    _save(fig, path)
