"""Figure rendering for the CLI's --plot flag.

Kept separate so matplotlib only loads when a plot was asked for; the
Agg backend keeps everything headless.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .model import bulk_energies  # noqa: E402


def save_band_projection(path, ks, kappas, bulk) -> None:
    """Edge-projected band structure: every (kappa, k) energy as a dot
    over the edge momentum axis."""
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    n_bands = bulk.n_orb * bulk.period
    pts_k = []
    pts_e = []
    for k in ks:
        for kappa in kappas:
            ev = bulk_energies(bulk, kappa, k)
            pts_k.extend([k] * n_bands)
            pts_e.extend(ev.tolist())
    ax.plot(pts_k, pts_e, ".", ms=1.0, color="0.55", rasterized=True)
    ax.set_xlabel("k")
    ax.set_ylabel("energy")
    ax.set_xlim(0.0, 2 * np.pi)
    ax.set_title(bulk.label)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_edge_spectrum_plot(path, spec, loc_threshold: float) -> None:
    """Ribbon branches inside the window, wall-localized ones in color."""
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for branch in spec.branches:
        kv = branch.k_values(spec.k_grid)
        localized = float(np.max(branch.weights)) >= loc_threshold
        if localized:
            sc = ax.scatter(kv, branch.energies, c=branch.weights, s=6,
                            cmap="viridis", vmin=0.0, vmax=1.0)
        else:
            ax.plot(kv, branch.energies, ".", ms=2.0, color="0.7")
    if any(float(np.max(b.weights)) >= loc_threshold for b in spec.branches):
        fig.colorbar(sc, ax=ax, label="wall weight")
    ax.set_xlabel("k")
    ax.set_ylabel("energy")
    ax.set_ylim(*spec.window)
    ax.set_xlim(float(spec.k_grid[0]), float(spec.k_grid[-1]))
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_scatter_phase_plot(path, trace) -> None:
    """Accumulated reflection phase along the traced momenta."""
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7.0, 5.5), sharex=True)
    ax1.plot(trace.k_values, trace.arg_values, "-", lw=1.2)
    ax1.set_ylabel("arg S (accumulated)")
    ax2.plot(trace.k_values, trace.s_values.real, "-", lw=1.0, label="Re S")
    ax2.plot(trace.k_values, trace.s_values.imag, "-", lw=1.0, label="Im S")
    ax2.set_xlabel("k")
    ax2.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
