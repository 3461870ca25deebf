"""PNG figures written next to the CSV outputs.

Figures are a convenience view of the tables; nothing is computed here.
The Agg backend is selected so rendering works without a display.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no timestamps or version strings, so reruns give identical files
_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return path


def plot_moments(columns: dict, path, window=None) -> Path:
    """Mean population, coherence and energy against time."""
    t = columns["t"]
    fig, axes = plt.subplots(3, 1, figsize=(7, 7), sharex=True)
    for ax, key, label in zip(
        axes,
        ("mean_z", "mean_cos_phi", "mean_E"),
        (r"$\langle z\rangle$", r"$\langle\cos\Phi\rangle$", r"$\langle E\rangle$"),
    ):
        ax.plot(t, columns[key], lw=0.8)
        se = columns.get("se_" + key.removeprefix("mean_"))
        if se is not None:
            ax.fill_between(t, columns[key] - se, columns[key] + se, alpha=0.3, lw=0)
        if window is not None:
            ax.axvspan(*window, color="0.9", zorder=0)
        ax.set_ylabel(label)
    axes[-1].set_xlabel("t")
    return _save(fig, path)


def plot_scan(columns: dict, x: str, ys, path, *, refs=None, peaks=None, logy=False) -> Path:
    """Observables against a control column, with optional reference curves."""
    ys = [ys] if isinstance(ys, str) else list(ys)
    fig, axes = plt.subplots(len(ys), 1, figsize=(7, 2.6 * len(ys)), sharex=True, squeeze=False)
    xv = columns[x]
    for ax, y in zip(axes[:, 0], ys):
        err = columns.get("se_" + y.split("_")[0]) if y != "eta1" else columns.get("se_eta1")
        if err is not None and len(err) == len(xv):
            ax.errorbar(xv, columns[y], yerr=err, fmt="o-", ms=3, lw=0.8)
        else:
            ax.plot(xv, columns[y], "o-", ms=3, lw=0.8)
        for ref in (refs or {}).get(y, []):
            if ref in columns:
                ax.plot(xv, columns[ref], "--", lw=0.8, label=ref)
        if (refs or {}).get(y):
            ax.legend(fontsize="small")
        for pk in (peaks or {}).get(y, []):
            ax.axvline(pk["x"], color="r", lw=0.6, ls=":")
        if logy and np.all(np.asarray(columns[y])[np.isfinite(columns[y])] > 0):
            ax.set_yscale("log")
        ax.set_ylabel(y)
    axes[-1, 0].set_xlabel(x)
    return _save(fig, path)


def plot_lines(m, weights, path, ylabel: str = r"$|P_m|^2$") -> Path:
    """Line spectrum as a stem plot over harmonic index."""
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.stem(m, weights)
    ax.set_xlabel("m")
    ax.set_ylabel(ylabel)
    return _save(fig, path)
