"""Command-line entry point: ``turbrestore <subcommand> [options]``.

Stages communicate only through files under ``--output-dir``::

    clean/<name>.png               simulate
    distorted/<name>/frame_*.png   simulate
    beta.txt                       calibrate-beta
    prior.psfb                     train-prior
    restored/<name>/frame_*.png    restore
    runtime.txt                    restore
    metrics/<name>.jsonl           evaluate
"""

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, dump_config, load_config
from .images import standard_images
from .metrics import normalized_gradient, psnr
from .pipeline import STAGES, StageError, restore_sequence
from .prior import read_psfb, train_prior, write_psfb
from .reference import BetaCalibration
from .simulate import simulate_sequence

logger = logging.getLogger("turbrestore")

SUBCOMMANDS = ("simulate", "calibrate-beta", "train-prior", "restore", "evaluate",
               "print-config")


def _paths(cfg):
    out = Path(cfg.output_dir)
    return {
        "clean": Path(cfg.clean_dir) if cfg.clean_dir else out / "clean",
        "distorted": Path(cfg.input_dir) if cfg.input_dir else out / "distorted",
        "beta": out / "beta.txt",
        "prior": Path(cfg.prior.basis_path) if cfg.prior.basis_path else out / "prior.psfb",
        "restored": out / "restored",
        "runtime": out / "runtime.txt",
        "metrics": out / "metrics",
    }


def _dr0(cfg):
    return cfg.simulate.dr0 if cfg.simulate.dr0 is not None else cfg.optics.dr0


def _sequence_dirs(root):
    """Sub-directories holding one sequence each, or ``root`` itself."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"{root} does not exist")
    subs = sorted(p for p in root.iterdir() if p.is_dir())
    return {p.name: p for p in subs} if subs else {root.name: root}


def cmd_simulate(cfg):
    p = _paths(cfg)
    params = cfg.optics if cfg.simulate.dr0 is None else cfg.optics.with_dr0(cfg.simulate.dr0)
    if cfg.simulate.input_dir:
        src = Path(cfg.simulate.input_dir)
        clean = {f.stem: io.read_frame(f) for f in sorted(src.iterdir())
                 if f.suffix.lower() in (".png", ".tif", ".tiff")}
        if not clean:
            raise FileNotFoundError(f"no images in {src}")
    else:
        clean = standard_images(cfg.simulate.image_size, cfg.simulate.images)
    p["clean"].mkdir(parents=True, exist_ok=True)
    for i, (name, img) in enumerate(clean.items()):
        io.write_frame(p["clean"] / f"{name}.png", img, cfg.bits)
        seq = simulate_sequence(img, params, seed=[cfg.seed, i], n_frames=cfg.simulate.n_frames,
                                noise_sigma=cfg.simulate.noise_sigma, n_jobs=cfg.threads)
        io.write_sequence(seq, p["distorted"] / name, bits=cfg.bits)
        logger.info("simulated %s: %d frames at D/r0 = %.3g", name, len(seq), params.dr0)
    return 0


def cmd_calibrate_beta(cfg):
    c, r = cfg.calibrate, cfg.reference
    curve = BetaCalibration.fit(c.dr0, trials=c.trials, seed=cfg.seed, params=cfg.optics,
                                patch_size=r.patch_size, spatial_search=r.spatial_search,
                                temporal_window=r.temporal_window, stride=r.stride)
    path = _paths(cfg)["beta"]
    path.parent.mkdir(parents=True, exist_ok=True)
    curve.save(path)
    for d, b in zip(curve.dr0, curve.beta):
        print(f"{d:g} {b:.6g}")
    return 0


def cmd_train_prior(cfg):
    pc = cfg.prior
    levels = [cfg.simulate.dr0] if cfg.simulate.dr0 is not None else pc.dr0
    basis = train_prior(levels, pc.n_samples, pc.n_components, pc.kappa, pc.tau,
                        cfg.optics, np.random.default_rng(cfg.seed))
    path = _paths(cfg)["prior"]
    path.parent.mkdir(parents=True, exist_ok=True)
    write_psfb(path, basis)
    logger.info("wrote %d-component basis to %s", basis.n_components, path)
    return 0


def cmd_restore(cfg):
    p = _paths(cfg)
    if not p["prior"].exists():
        logger.info("no basis at %s; training one", p["prior"])
        cmd_train_prior(cfg)
    basis = read_psfb(p["prior"])
    if cfg.reference.beta is None and not cfg.reference.beta_table and p["beta"].exists():
        cfg = dataclasses.replace(
            cfg, reference=dataclasses.replace(cfg.reference, beta_table=str(p["beta"])))
    totals = dict.fromkeys(STAGES, 0.0)
    for name, d in _sequence_dirs(p["distorted"]).items():
        seq = io.read_sequence(d)
        res = restore_sequence(seq, basis, cfg, dr0=_dr0(cfg))
        io.write_sequence(res.restored, p["restored"] / name, bits=cfg.bits)
        if cfg.save_flow:
            fdir = p["restored"] / name / "flow"
            fdir.mkdir(parents=True, exist_ok=True)
            for t, flow in enumerate(res.flows):
                io.write_flow(fdir / f"flow_{t:05d}.flo", flow)
        for k, v in res.timings.items():
            totals[k] += v
        logger.info("restored %s", name)
    io.write_runtime_table(p["runtime"], totals)
    sys.stdout.write(io.format_runtime_table(totals))
    return 0


def evaluate_sequence(restored, clean, distorted=None):
    """Metric records for one restored sequence against its clean frame."""
    ng = normalized_gradient(restored)
    records = []
    for t, frame in enumerate(restored):
        rec = {"index": t, "psnr_db": psnr(frame, clean), "normalized_gradient": float(ng[t])}
        if distorted is not None:
            rec["input_psnr_db"] = psnr(distorted[t], clean)
        records.append(rec)
    return records


def cmd_evaluate(cfg):
    p = _paths(cfg)
    p["metrics"].mkdir(parents=True, exist_ok=True)
    summary = {}
    for name, d in _sequence_dirs(p["restored"]).items():
        clean_path = p["clean"] / f"{name}.png"
        if not clean_path.exists():
            raise FileNotFoundError(f"no clean frame {clean_path} for sequence {name}")
        clean = io.read_frame(clean_path)
        restored = io.read_sequence(d)
        dist_dir = p["distorted"] / name
        distorted = io.read_sequence(dist_dir) if dist_dir.is_dir() else None
        records = evaluate_sequence(restored, clean, distorted)
        io.write_metric_records(p["metrics"] / f"{name}.jsonl", records)
        row = {"psnr_db": float(np.mean([r["psnr_db"] for r in records]))}
        if distorted is not None:
            row["input_psnr_db"] = float(np.mean([r["input_psnr_db"] for r in records]))
            row["gain_db"] = row["psnr_db"] - row["input_psnr_db"]
        summary[name] = row
    (p["metrics"] / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    for name, row in summary.items():
        print(name, " ".join(f"{k}={v:.3f}" for k, v in row.items()))
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate-beta": cmd_calibrate_beta,
    "train-prior": cmd_train_prior,
    "restore": cmd_restore,
    "evaluate": cmd_evaluate,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="turbrestore",
                                     description="Turbulence simulation and restoration.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML configuration file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--dr0", type=float, help="turbulence strength D/r0")
        sp.add_argument("--frames", type=int, help="frames per simulated sequence")
        sp.add_argument("--output-dir")
        sp.add_argument("--input-dir", help="distorted sequences to restore")
        sp.add_argument("--beta", type=float, help="fixed reference-frame beta")
        sp.add_argument("--denoiser", help="plug-and-play denoiser of the deconvolution")
        sp.add_argument("--trials", type=int, help="beta calibration trials per level")
    return parser


def apply_overrides(cfg, args):
    """Command-line flags on top of the loaded configuration."""
    top = {}
    for flag, key in (("seed", "seed"), ("threads", "threads"), ("output_dir", "output_dir"),
                      ("input_dir", "input_dir")):
        v = getattr(args, flag, None)
        if v is not None:
            top[key] = v
    sim = {}
    if args.dr0 is not None:
        sim["dr0"] = args.dr0
    if args.frames is not None:
        sim["n_frames"] = args.frames
    cfg = dataclasses.replace(cfg, **top)
    if sim:
        cfg = dataclasses.replace(cfg, simulate=dataclasses.replace(cfg.simulate, **sim))
    if args.beta is not None:
        cfg = dataclasses.replace(cfg, reference=dataclasses.replace(cfg.reference,
                                                                     beta=args.beta))
    if args.denoiser is not None:
        cfg = dataclasses.replace(cfg, deconv=dataclasses.replace(cfg.deconv,
                                                                  denoiser=args.denoiser))
    if args.trials is not None:
        cfg = dataclasses.replace(cfg, calibrate=dataclasses.replace(cfg.calibrate,
                                                                     trials=args.trials))
    return cfg.validate()


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = apply_overrides(load_config(args.config), args)
    except (ConfigError, OSError) as exc:
        print(f"turbrestore: configuration error: {exc}", file=sys.stderr)
        return 2
    if args.command == "print-config":
        sys.stdout.write(dump_config(cfg))
        return 0
    try:
        return COMMANDS[args.command](cfg)
    except StageError as exc:
        print(f"turbrestore {args.command}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"turbrestore {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
