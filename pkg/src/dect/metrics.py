"""Image-quality metrics and per-object parameter clouds."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, astuple, fields

import numpy as np

COMPTON_PEAK = 0.7
PE_PEAK = 1.2e5


def _pair(img, ref):
    img = np.asarray(img, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if img.shape != ref.shape:
        raise ValueError(f"size mismatch: {img.shape} vs {ref.shape}")
    return img, ref


def psnr(img, ref, L: float) -> float:
    """``10 log10(L^2 / MSE)`` in dB; ``inf`` when the images are identical."""
    img, ref = _pair(img, ref)
    if not L > 0:
        raise ValueError("L must be positive")
    mse = float(np.mean((img - ref) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(L * L / mse)


def ssim(img, ref, L: float, window: int = 8, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over non-overlapping ``window`` x ``window`` tiles.

    Tiles that would run past the image edge are dropped. Window statistics
    use population (1/n) moments.
    """
    img, ref = _pair(img, ref)
    if img.ndim != 2:
        raise ValueError("ssim expects 2-D images")
    ny, nx = img.shape
    ty, tx = ny // window, nx // window
    if ty == 0 or tx == 0:
        raise ValueError(f"image smaller than the {window}x{window} window")

    def tiles(a):
        a = a[: ty * window, : tx * window]
        return a.reshape(ty, window, tx, window).transpose(0, 2, 1, 3).reshape(ty, tx, -1)

    x, y = tiles(img), tiles(ref)
    mx, my = x.mean(-1), y.mean(-1)
    vx = ((x - mx[..., None]) ** 2).mean(-1)
    vy = ((y - my[..., None]) ** 2).mean(-1)
    cxy = ((x - mx[..., None]) * (y - my[..., None])).mean(-1)
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2))
    return float(s.mean())


@dataclass(frozen=True)
class CloudStat:
    object: str
    material: str
    mean_c: float
    std_c: float
    mean_p: float
    std_p: float
    n: int


def _mean_std(x: np.ndarray) -> tuple[float, float]:
    # Constant samples return their value and exactly 0 (np.mean can round).
    if x.min() == x.max():
        return float(x[0]), 0.0
    return float(x.mean()), float(x.std())


def material_clouds(pair, masks: dict, materials: dict | None = None) -> list[CloudStat]:
    """Mean and population std of (c, p) inside each object mask."""
    out = []
    for name, mask in masks.items():
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != pair.c.shape:
            raise ValueError(f"mask {name!r} has shape {mask.shape}, image is {pair.c.shape}")
        n = int(mask.sum())
        if n == 0:
            raise ValueError(f"mask {name!r} is empty")
        c, p = pair.c[mask], pair.p[mask]
        label = (materials or {}).get(name, name)
        out.append(CloudStat(name, label, *_mean_std(c), *_mean_std(p), n))
    return out


def clouds_to_tsv(stats) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow([f.name for f in fields(CloudStat)])
    for s in stats:
        w.writerow([repr(v) if isinstance(v, float) else v for v in astuple(s)])
    return buf.getvalue()


def clouds_from_tsv(text: str) -> list[CloudStat]:
    rows = list(csv.DictReader(io.StringIO(text), delimiter="\t"))
    return [CloudStat(r["object"], r["material"], float(r["mean_c"]), float(r["std_c"]),
                      float(r["mean_p"]), float(r["std_p"]), int(r["n"])) for r in rows]


def image_quality(recon, truth) -> dict:
    """PSNR/SSIM of both images with the default peak values."""
    return {
        "psnr_c": psnr(recon.c, truth.c, COMPTON_PEAK),
        "psnr_p": psnr(recon.p, truth.p, PE_PEAK),
        "ssim_c": ssim(recon.c, truth.c, COMPTON_PEAK),
        "ssim_p": ssim(recon.p, truth.p, PE_PEAK),
    }
