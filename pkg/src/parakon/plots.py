"""Static SVG figure helpers (headless matplotlib, files only)."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "parakon"

_SAVE_OPTS = {"format": "svg", "metadata": {"Date": None}}


def line_plot(path, xs, series, xlabel="x", ylabel="u", title="", logy=False):
    """series: {label: values} plotted against xs."""
    fig, ax = plt.subplots(figsize=(5.6, 3.6))
    for label, ys in series.items():
        ax.plot(xs, ys, label=label, linewidth=1.4)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if logy:
        ax.set_yscale("log")
    if len(series) > 1:
        ax.legend(frameon=False, fontsize=8)
    ax.grid(alpha=0.25)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def heatmap(path, array, extent, xlabel="x", ylabel="y", title=""):
    """array indexed [ix, iy]; extent = (x0, x1, y0, y1)."""
    fig, ax = plt.subplots(figsize=(4.8, 4.0))
    masked = np.ma.masked_invalid(array)
    im = ax.imshow(masked.T, origin="lower", extent=extent, aspect="equal",
                   cmap="viridis")
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def histogram(path, values, xlabel="margin", title="", bins=60):
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.hist(np.asarray(values), bins=bins, color="#356a9b")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.25)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)
