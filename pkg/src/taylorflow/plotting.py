"""SVG scatter plot of an update: particles, pathways and the grid posterior."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import numpy as np  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from taylorflow.oracles import GridPosterior  # noqa: E402
from taylorflow.scenarios import GridSpec  # noqa: E402

# Fixed salt and no date keep the SVG bytes stable across runs.
SVG_SETTINGS = {"svg.hashsalt": "taylorflow", "svg.fonttype": "path"}
MAX_PATHWAYS = 200


def plot_update(
    path: str | Path,
    initial: np.ndarray,
    final: np.ndarray,
    *,
    title: str = "",
    pathways: list[np.ndarray] | None = None,
    posterior: GridPosterior | None = None,
    axes: GridSpec | None = None,
) -> Path:
    """Write the first two state axes of an update as an SVG file.

    ``pathways`` is the list of per-step snapshots; ``axes`` fixes the plot
    limits so plots of different flows line up.
    """
    path = Path(path)
    initial, final = _planar(initial), _planar(final)
    if pathways:
        pathways = [_planar(p) for p in pathways]
    fig = Figure(figsize=(6.0, 5.0))
    ax = fig.add_subplot(1, 1, 1)

    if posterior is not None and posterior.grid.dim == 2:
        xs, ys = posterior.grid.axes()
        ax.contour(xs, ys, posterior.density.T, levels=8, colors="0.5", linewidths=0.7)

    if pathways:
        stacked = np.stack(pathways, axis=0)  # (K+1, N, n)
        for i in range(min(stacked.shape[1], MAX_PATHWAYS)):
            ax.plot(stacked[:, i, 0], stacked[:, i, 1], color="tab:green", lw=0.4, alpha=0.5)

    ax.scatter(initial[:, 0], initial[:, 1], s=6, color="tab:blue", label="initial")
    ax.scatter(final[:, 0], final[:, 1], s=6, color="tab:red", label="final")

    if axes is not None and axes.dim >= 2:
        ax.set_xlim(*axes.bounds[0])
        ax.set_ylim(*axes.bounds[1])
    ax.set_xlabel("x0")
    ax.set_ylabel("x1")
    ax.set_aspect("equal", adjustable="box")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right", fontsize="small")

    with matplotlib.rc_context(SVG_SETTINGS):
        fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def _planar(states: np.ndarray) -> np.ndarray:
    """First two columns, padding 1-D states with a zero axis."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[1] >= 2:
        return states[:, :2]
    return np.column_stack([states[:, 0], np.zeros(len(states))])
