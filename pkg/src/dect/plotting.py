"""Raster output: windowed 8-bit grayscale PNGs and parameter-cloud figures."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from .arrayfile import atomic_write_bytes

COMPTON_WINDOW = (0.0, 0.7)  # cm^-1
PE_WINDOW = (0.0, 8e4)  # keV cm^-1


def to_uint8(img, window) -> np.ndarray:
    """Linear map of ``window`` onto 0..255 with clipping; row 0 is the bottom of the grid."""
    lo, hi = window
    if not hi > lo:
        raise ValueError("display window must have hi > lo")
    img = np.asarray(img, dtype=float)
    scaled = np.clip((img - lo) / (hi - lo), 0.0, 1.0)
    # Round half up so that exact window fractions land on stable gray levels.
    return np.floor(scaled * 255.0 + 0.5).astype(np.uint8)[::-1]


def write_png(path, img, window) -> None:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(to_uint8(img, window), mode="L").save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def render_pair(pair, out_dir, stem: str) -> list[Path]:
    """Compton and photoelectric PNGs with the fixed display windows."""
    out_dir = Path(out_dir)
    paths = [out_dir / f"{stem}_compton.png", out_dir / f"{stem}_pe.png"]
    write_png(paths[0], pair.c, COMPTON_WINDOW)
    write_png(paths[1], pair.p, PE_WINDOW)
    return paths


def plot_clouds(groups: dict, path, truth: dict | None = None) -> None:
    """Mean +/- 1 std ellipses in the (c, p) plane, one colour per method.

    ``groups`` maps a method label to a list of CloudStat; ``truth`` maps
    object names to (c, p) reference points.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.patches import Ellipse

    fig, ax = plt.subplots(figsize=(6, 4.5))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i, (label, stats) in enumerate(groups.items()):
        col = colors[i % len(colors)]
        for st in stats:
            ax.add_patch(Ellipse((st.mean_c, st.mean_p), 2 * st.std_c, 2 * st.std_p,
                                 facecolor=col, alpha=0.25, edgecolor=col))
            ax.plot(st.mean_c, st.mean_p, "o", color=col, ms=3)
        ax.plot([], [], "s", color=col, alpha=0.5, label=label)
    if truth:
        for name, (c, p) in truth.items():
            ax.plot(c, p, "k+", ms=8)
            ax.annotate(name, (c, p), textcoords="offset points", xytext=(4, 4), fontsize=8)
    ax.set_xlim(*COMPTON_WINDOW)
    ax.set_ylim(*PE_WINDOW)
    ax.set_xlabel("Compton coefficient (1/cm)")
    ax.set_ylabel("photoelectric coefficient (keV/cm)")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=100)
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())
