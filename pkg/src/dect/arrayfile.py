"""DECT1 array files: one ASCII header line followed by raw float64 data.

Header: ``DECT1 <kind> <dim> <dim> ... [key=value ...]\\n``. The payload is
little-endian float64 in row-major order, one block of ``prod(dims)``
values per component (two for ``image_pair`` and ``sinogram_dual``).
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import ImageGrid
from .physics import DualSinogram, ImagePair

MAGIC = "DECT1"
BLOCKS = {"image": 1, "image_pair": 2, "sinogram_dual": 2, "mask": 1}
_DTYPE = np.dtype("<f8")


class ArrayFileError(ValueError):
    """Malformed or mismatched array file."""


@dataclass
class ArrayFile:
    kind: str
    dims: tuple[int, ...]
    blocks: list[np.ndarray]
    meta: dict[str, str] = field(default_factory=dict)


def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_array_file(path, kind: str, blocks, meta: dict | None = None) -> None:
    if kind not in BLOCKS:
        raise ArrayFileError(f"unknown kind {kind!r}")
    blocks = [np.asarray(b, dtype=float) for b in blocks]
    if len(blocks) != BLOCKS[kind]:
        raise ArrayFileError(f"{kind} needs {BLOCKS[kind]} blocks, got {len(blocks)}")
    dims = blocks[0].shape
    if any(b.shape != dims for b in blocks):
        raise ArrayFileError("all blocks must share one shape")
    parts = [MAGIC, kind] + [str(d) for d in dims]
    for k, v in (meta or {}).items():
        text = f"{k}={v}"
        if any(ch.isspace() for ch in text) or "=" in str(k):
            raise ArrayFileError(f"metadata entry {text!r} must not contain whitespace")
        parts.append(text)
    header = (" ".join(parts) + "\n").encode("ascii")
    payload = b"".join(np.ascontiguousarray(b, dtype=_DTYPE).tobytes() for b in blocks)
    atomic_write_bytes(path, header + payload)


def read_array_file(path) -> ArrayFile:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ArrayFileError(f"{path}: missing header line")
    try:
        tokens = raw[:nl].decode("ascii").split()
    except UnicodeDecodeError:
        raise ArrayFileError(f"{path}: header is not ASCII") from None
    if len(tokens) < 2 or tokens[0] != MAGIC:
        raise ArrayFileError(f"{path}: not a {MAGIC} file")
    kind = tokens[1]
    if kind not in BLOCKS:
        raise ArrayFileError(f"{path}: unknown kind {kind!r}")
    dims, meta = [], {}
    for tok in tokens[2:]:
        if "=" in tok:
            k, v = tok.split("=", 1)
            meta[k] = v
        elif meta:
            raise ArrayFileError(f"{path}: dimension {tok!r} after metadata")
        else:
            try:
                dims.append(int(tok))
            except ValueError:
                raise ArrayFileError(f"{path}: bad dimension {tok!r}") from None
    if not dims or any(d < 1 for d in dims):
        raise ArrayFileError(f"{path}: dimensions must be positive")
    n = int(np.prod(dims))
    payload = raw[nl + 1:]
    expected = n * BLOCKS[kind] * _DTYPE.itemsize
    if len(payload) != expected:
        raise ArrayFileError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    flat = np.frombuffer(payload, dtype=_DTYPE).astype(float)
    blocks = [flat[i * n:(i + 1) * n].reshape(dims) for i in range(BLOCKS[kind])]
    return ArrayFile(kind, tuple(dims), blocks, meta)


def _expect(af: ArrayFile, kind: str, path) -> ArrayFile:
    if af.kind != kind:
        raise ArrayFileError(f"{path}: expected {kind}, found {af.kind}")
    return af


def _grid_meta(grid: ImageGrid) -> dict:
    ox, oy = grid.origin
    return {"pixel_size": repr(float(grid.pixel_size)), "origin_x": repr(float(ox)), "origin_y": repr(float(oy))}


def _grid_from(af: ArrayFile, path) -> ImageGrid:
    if len(af.dims) != 2:
        raise ArrayFileError(f"{path}: images must be 2-D")
    ny, nx = af.dims
    try:
        size = float(af.meta.get("pixel_size", 1.0))
        origin = None
        if "origin_x" in af.meta:
            origin = (float(af.meta["origin_x"]), float(af.meta["origin_y"]))
    except (KeyError, ValueError):
        raise ArrayFileError(f"{path}: bad grid metadata") from None
    return ImageGrid(nx, ny, size, origin)


def save_image_pair(path, pair: ImagePair, **meta) -> None:
    write_array_file(path, "image_pair", [pair.c, pair.p], {**_grid_meta(pair.grid), **meta})


def load_image_pair(path) -> ImagePair:
    af = _expect(read_array_file(path), "image_pair", path)
    return ImagePair(_grid_from(af, path), af.blocks[0], af.blocks[1])


def save_image(path, img, grid: ImageGrid | None = None, **meta) -> None:
    write_array_file(path, "image", [img], {**(_grid_meta(grid) if grid else {}), **meta})


def load_image(path) -> np.ndarray:
    return _expect(read_array_file(path), "image", path).blocks[0]


def save_mask(path, mask, name: str, grid: ImageGrid | None = None, **meta) -> None:
    write_array_file(path, "mask", [np.asarray(mask, dtype=float)],
                     {"name": name, **(_grid_meta(grid) if grid else {}), **meta})


def load_mask(path) -> tuple[str, np.ndarray]:
    af = _expect(read_array_file(path), "mask", path)
    return af.meta.get("name", Path(path).stem), af.blocks[0] != 0


def save_dual_sinogram(path, sino: DualSinogram, shape: tuple[int, int], **meta) -> None:
    write_array_file(path, "sinogram_dual",
                     [sino.counts_low.reshape(shape), sino.counts_high.reshape(shape)],
                     {"y0": repr(float(sino.y0)), **meta})


def load_dual_sinogram(path) -> tuple[DualSinogram, ArrayFile]:
    af = _expect(read_array_file(path), "sinogram_dual", path)
    if "y0" not in af.meta:
        raise ArrayFileError(f"{path}: sinogram header lacks y0")
    try:
        sino = DualSinogram(af.blocks[0], af.blocks[1], float(af.meta["y0"]))
    except ValueError as exc:
        raise ArrayFileError(f"{path}: {exc}") from None
    return sino, af
