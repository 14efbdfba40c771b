"""Optional SVG figures. Requires matplotlib (``pip install .[plot]``)."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise RuntimeError("plotting needs matplotlib; install the 'plot' extra") from exc
    matplotlib.use("Agg")
    # Fixed hash salt keeps SVG output byte-stable across runs.
    matplotlib.rcParams["svg.hashsalt"] = "dustscope"
    import matplotlib.pyplot as plt

    return plt


def landscape_svg(omega_d: np.ndarray, stark_norm: np.ndarray, values: np.ndarray, path: str | Path,
                  label: str = "Theta") -> None:
    """Heatmap with x = drive frequency (GHz) and y = Delta/alpha."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    mesh = ax.pcolormesh(omega_d, stark_norm, values, shading="nearest", vmin=0, vmax=1, cmap="magma")
    fig.colorbar(mesh, ax=ax, label=label)
    ax.set_xlabel("drive frequency (GHz)")
    ax.set_ylabel("Stark shift / anharmonicity")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def branches_svg(xi2: np.ndarray, mean_quanta: np.ndarray, path: str | Path, highlight=(0, 1)) -> None:
    """Mean transmon quanta of every branch against xi^2."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for i in range(mean_quanta.shape[1]):
        strong = i in highlight
        ax.plot(xi2, mean_quanta[:, i], lw=1.6 if strong else 0.6,
                color=None if strong else "0.6", label=f"branch {i}" if strong else None)
    ax.set_xlabel("xi^2")
    ax.set_ylabel("mean transmon quanta")
    ax.legend(loc="upper left")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def populations_svg(times: np.ndarray, populations: np.ndarray, path: str | Path, levels=None) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    levels = range(populations.shape[1]) if levels is None else levels
    for j in levels:
        ax.plot(times, populations[:, j], label=f"P({j})")
    ax.set_xlabel("time (ns)")
    ax.set_ylabel("population")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
