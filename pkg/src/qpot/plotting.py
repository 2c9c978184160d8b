"""SVG figures of field dumps.

A single time slice is drawn as a line; several slices as an x-t heatmap
with the ``viridis`` color ramp (dark blue = minimum, yellow = maximum).
Masked nodes are left blank.  Output is a self-contained SVG: text is
converted to paths and raster heatmaps are embedded inline.
"""

from __future__ import annotations

import os
import tempfile

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from qpot.fieldgrid import Field  # noqa: E402

COLOR_RAMP = "viridis"

_RC = {
    "svg.fonttype": "path",
    "svg.hashsalt": "qpot",
    "font.size": 10,
    "axes.labelsize": 10,
    "figure.figsize": (6.0, 3.8),
}


def _save_svg(fig, path: str):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(suffix=".svg", dir=directory)
    os.close(fd)
    try:
        fig.savefig(tmp, format="svg", metadata={"Date": None}, bbox_inches="tight")
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def plot_field(field: Field, path: str, title: str | None = None, label: str = "value"):
    values = field.masked_values()
    x, t = field.grid.x, field.grid.t
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        try:
            if field.grid.nt == 1:
                ax.plot(x, values[0], lw=1.2, color="#1f4e79")
                ax.set_xlabel("x")
                ax.set_ylabel(label)
                ax.grid(alpha=0.3, lw=0.5)
            else:
                img = ax.imshow(
                    np.ma.masked_invalid(values), origin="lower", aspect="auto",
                    extent=(x[0], x[-1], t[0], t[-1]), cmap=COLOR_RAMP,
                    interpolation="nearest",
                )
                ax.set_xlabel("x")
                ax.set_ylabel("t")
                fig.colorbar(img, ax=ax, label=label)
            if title:
                ax.set_title(title)
            _save_svg(fig, path)
        finally:
            plt.close(fig)


def plot_pipeline(result, out_dir: str, names=("R", "p", "S", "V")) -> list[str]:
    """One figure per pipeline field; returns the written paths."""
    written = []
    for name in names:
        path = os.path.join(out_dir, f"{name}.svg")
        plot_field(getattr(result, name), path, title=name, label=name)
        written.append(path)
    return written
