"""``dect`` command line: phantom | simulate | reconstruct | metrics | render.

Exit codes: 0 ok, 2 configuration/schema error, 3 I/O error, 4 numerical
failure or dimension mismatch. Errors are reported on stderr as one line
``dect: error[<kind>]: <message>``.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .admm import AdmmError
from .arrayfile import (ArrayFileError, atomic_write_bytes, load_dual_sinogram, load_image_pair,
                        load_mask, read_array_file, save_dual_sinogram, save_image_pair, save_mask)
from .config import ConfigError, RunConfig, config_from_dict, dump_config, load_config
from .geometry import CapacityError
from .metrics import clouds_from_tsv, clouds_to_tsv, image_quality, material_clouds
from .phantom import MATERIALS

log = logging.getLogger("dect")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind = code, kind


class DimensionError(ValueError):
    """Inputs whose shapes disagree with each other or with the config."""


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    over = {}
    if getattr(args, "seed", None) is not None:
        over["noise"] = dataclasses.replace(cfg.noise, seed=args.seed)
    if getattr(args, "method", None) is not None:
        over["method"] = args.method
    if getattr(args, "stride", None) is not None:
        over["stride"] = args.stride
    cfg = dataclasses.replace(cfg, **over)
    # Re-validate after flag overrides.
    return config_from_dict(cfg.to_dict())


def _echo_config(cfg: RunConfig, out: Path, command: str) -> None:
    atomic_write_bytes(out / f"{command}.config.json", dump_config(cfg).encode())


def _thread_limit(cfg: RunConfig):
    env = os.environ.get("DECT_THREADS")
    n = cfg.threads
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"DECT_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError("DECT_THREADS must be >= 1")
    if n is None:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _grid_matches(cfg: RunConfig, pair, what: str):
    if (pair.grid.ny, pair.grid.nx) != (cfg.grid.ny, cfg.grid.nx):
        raise DimensionError(f"{what} is {pair.grid.nx}x{pair.grid.ny}, config grid is "
                             f"{cfg.grid.nx}x{cfg.grid.ny}")


# ----------------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------------

def cmd_phantom(cfg: RunConfig, out: Path) -> list[Path]:
    from .pipeline import make_phantom

    truth, scene = make_phantom(cfg)
    paths = [out / "phantom.dect"]
    save_image_pair(paths[0], truth)
    for name, mask in scene.masks.items():
        p = out / f"mask_{name}.dect"
        save_mask(p, mask, name, truth.grid, material=scene.material_of(name))
        paths.append(p)
    return paths


def cmd_simulate(cfg: RunConfig, phantom_path: Path, out: Path) -> Path:
    from .pipeline import simulate

    truth = load_image_pair(phantom_path)
    _grid_matches(cfg, truth, "phantom")
    sino = simulate(cfg, truth)
    g = cfg.geometry
    path = out / "sinogram.dect"
    save_dual_sinogram(path, sino, (g.n_angles, g.n_detectors), seed=cfg.noise.seed)
    return path


def cmd_reconstruct(cfg: RunConfig, sino_path: Path, out: Path) -> list[Path]:
    from .pipeline import reconstruct

    sino, af = load_dual_sinogram(sino_path)
    g = cfg.geometry
    if af.dims != (g.n_angles, g.n_detectors):
        raise DimensionError(f"sinogram is {af.dims[0]}x{af.dims[-1]} (angles x detectors), config "
                             f"geometry is {g.n_angles}x{g.n_detectors}")
    pair, report = reconstruct(cfg, sino)
    tag = cfg.method if cfg.stride == 1 else f"{cfg.method}_stride{cfg.stride}"
    paths = [out / f"recon_{tag}.dect"]
    save_image_pair(paths[0], pair, method=cfg.method, stride=cfg.stride)
    if report is not None:
        paths.append(out / f"report_{tag}.tsv")
        atomic_write_bytes(paths[-1], report.to_tsv().encode())
    return paths


def _load_masks(paths):
    masks, materials = {}, {}
    for p in paths:
        name, mask = load_mask(p)
        masks[name] = mask
        materials[name] = read_array_file(p).meta.get("material", name)
    return masks, materials


def cmd_metrics(cfg: RunConfig, recon_path: Path, truth_path: Path, mask_paths, out: Path) -> str:
    recon = load_image_pair(recon_path)
    truth = load_image_pair(truth_path)
    if recon.c.shape != truth.c.shape:
        raise DimensionError(f"reconstruction {recon.c.shape} and truth {truth.c.shape} differ")
    q = image_quality(recon, truth)
    lines = ["metric\tvalue"] + [f"{k}\t{v!r}" for k, v in q.items()]
    metrics_text = "\n".join(lines) + "\n"
    stem = Path(recon_path).stem
    atomic_write_bytes(out / f"metrics_{stem}.tsv", metrics_text.encode())
    text = metrics_text
    if mask_paths:
        masks, materials = _load_masks(mask_paths)
        for name, m in masks.items():
            if m.shape != recon.c.shape:
                raise DimensionError(f"mask {name!r} is {m.shape}, image is {recon.c.shape}")
        clouds = clouds_to_tsv(material_clouds(recon, masks, materials))
        atomic_write_bytes(out / f"clouds_{stem}.tsv", clouds.encode())
        text += "\n" + clouds
    return text


def cmd_render(cfg: RunConfig, inputs, out: Path) -> list[Path]:
    from .plotting import plot_clouds, render_pair

    paths, groups = [], {}
    for p in map(Path, inputs):
        if p.suffix == ".tsv":
            groups[p.stem.removeprefix("clouds_")] = clouds_from_tsv(p.read_text())
        else:
            paths += render_pair(load_image_pair(p), out, p.stem)
    if groups:
        truth = {}
        for stats in groups.values():
            for s in stats:
                if s.material in MATERIALS:
                    m = MATERIALS[s.material]
                    truth[s.object] = (m.c, m.p)
        paths.append(out / "clouds.png")
        plot_clouds(groups, paths[-1], truth)
    return paths


# ----------------------------------------------------------------------------
# Entry point
# ----------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_CONFIG, "usage", message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML/JSON run configuration")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = _Parser(prog="dect", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"dect {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("phantom", parents=[common], help="write the suitcase phantom and masks")
    p = sub.add_parser("simulate", parents=[common], help="simulate a noisy dual-energy scan")
    p.add_argument("phantom", type=Path)
    p.add_argument("--seed", type=int)
    p = sub.add_parser("reconstruct", parents=[common], help="reconstruct (c, p) from a sinogram")
    p.add_argument("sinogram", type=Path)
    p.add_argument("--method", choices=["fbp", "ync", "admm", "admm-noreg"])
    p.add_argument("--stride", type=int, help="keep every N-th projection angle")
    p = sub.add_parser("metrics", parents=[common], help="PSNR/SSIM and material clouds")
    p.add_argument("recon", type=Path)
    p.add_argument("truth", type=Path)
    p.add_argument("--masks", type=Path, nargs="*", default=[])
    p = sub.add_parser("render", parents=[common], help="PNG images and cloud plots")
    p.add_argument("inputs", type=Path, nargs="+", help="image_pair files and/or clouds_*.tsv tables")
    return ap


def _run(args) -> int:
    cfg = _resolve(args)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    with contextlib.ExitStack() as stack:
        limit = _thread_limit(cfg)
        if limit is not None:
            stack.enter_context(limit)
        if args.command == "phantom":
            written = cmd_phantom(cfg, out)
        elif args.command == "simulate":
            written = [cmd_simulate(cfg, args.phantom, out)]
        elif args.command == "reconstruct":
            written = cmd_reconstruct(cfg, args.sinogram, out)
        elif args.command == "metrics":
            sys.stdout.write(cmd_metrics(cfg, args.recon, args.truth, args.masks, out))
            written = []
        else:
            written = cmd_render(cfg, args.inputs, out)
        _echo_config(cfg, out, args.command)
    for p in written:
        print(p)
    return EXIT_OK


def _one_line(exc) -> str:
    return " ".join(str(exc).split()) or exc.__class__.__name__


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return _run(args)
    except CliError as exc:
        err = exc
    except ConfigError as exc:
        err = CliError(EXIT_CONFIG, "config", _one_line(exc))
    except (FileNotFoundError, IsADirectoryError, PermissionError, ArrayFileError) as exc:
        err = CliError(EXIT_IO, "io", _one_line(exc))
    except OSError as exc:
        err = CliError(EXIT_IO, "io", _one_line(exc))
    except (DimensionError, AdmmError, CapacityError, FloatingPointError, np.linalg.LinAlgError) as exc:
        err = CliError(EXIT_NUMERIC, "numeric", _one_line(exc))
    except ValueError as exc:
        err = CliError(EXIT_NUMERIC, "numeric", _one_line(exc))
    sys.stderr.write(f"dect: error[{err.kind}]: {_one_line(err)}\n")
    return err.code


if __name__ == "__main__":
    sys.exit(main())
