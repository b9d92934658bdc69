"""Figures written to files next to the text tables."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_field_comparison(x, t, truth, estimate, path, label="eta [m]", title=None):
    """Truth and estimate as x-t images, with their difference."""
    x, t = np.asarray(x), np.asarray(t)
    extent = [x[0], x[-1], t[0], t[-1]]
    vmax = float(max(np.max(np.abs(truth)), np.max(np.abs(estimate)), 1e-12))
    fig, axes = plt.subplots(1, 3, figsize=(12, 4), sharey=True)
    panels = [(truth, "reference"), (estimate, "estimate"), (estimate - truth, "difference")]
    for ax, (v, name) in zip(axes, panels):
        im = ax.imshow(v, origin="lower", aspect="auto", extent=extent, cmap="RdBu_r",
                       vmin=-vmax, vmax=vmax)
        ax.set_title(name)
        ax.set_xlabel("x [m]")
    axes[0].set_ylabel("t [s]")
    fig.colorbar(im, ax=axes, label=label, shrink=0.9)
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def plot_cross_section(coord, truth, estimate, path, xlabel="x [m]", ylabel="eta [m]", title=None):
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(coord, truth, "k-", lw=1.5, label="reference")
    ax.plot(coord, estimate, "r--", lw=1.2, label="estimate")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(loc="upper right")
    ax.grid(alpha=0.3)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_training_log(cols: dict, path):
    """Loss components and adaptive weights per epoch from a parsed training log."""
    epoch = cols["epoch"]
    names = [k[2:] for k in cols if k.startswith("L_")]
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    for n in names:
        a1.semilogy(epoch, cols[f"L_{n}"], lw=1, label=n)
        a2.plot(epoch, cols[f"w_{n}"], lw=1, label=n)
    if "mse_data" in cols and np.any(np.isfinite(cols["mse_data"])):
        a1.semilogy(epoch, cols["mse_data"], "k:", lw=1, label="mse_data")
    a1.set_ylabel("loss")
    a1.legend(fontsize=8, ncol=3)
    a2.set_ylabel("weight")
    a2.set_xlabel("epoch")
    for ax in (a1, a2):
        ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_spectrum(omega, density, path, cutoffs=None):
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(omega, density, "k-")
    for w in cutoffs or ():
        ax.axvline(w, color="r", ls="--", lw=1)
    ax.set_xlabel("omega [rad/s]")
    ax.set_ylabel("S [m^2 s]")
    ax.grid(alpha=0.3)
    return _save(fig, path)
