"""Command-line front end: ``laserloc {extract,localize,simulate,evaluate}``.

Exit codes:
    0  success
    2  bad input: unreadable image, invalid config, calibration or parameters
    3  no laser line found (extract)
    4  localization failed (localize)
    5  an acceptance gate was violated (evaluate)
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict

from laserloc.errors import (
    EmptyLineError,
    FitError,
    GeometryError,
    ImageFormatError,
    LocalizationError,
    ParameterError,
)
from laserloc.evaluate import build_reports, check_gates
from laserloc.imagekit import load_image
from laserloc.lle import BrceParams, NoiseParams, extract_laser_line
from laserloc.scan import ScanParams, localize
from laserloc.simulate import CorpusSpec, default_calibration, make_corpus
from laserloc.triangulate import load_calibration, save_calibration

log = logging.getLogger("laserloc")

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_EMPTY_LINE = 3
EXIT_LOCALIZATION = 4
EXIT_GATE = 5

CONFIG_SECTIONS = {
    "brce": set(BrceParams.__dataclass_fields__),
    "noise": set(NoiseParams.__dataclass_fields__),
    "scan": {"w1", "w2", "depth_band", "roi_margin"},
    "corpus": set(CorpusSpec.__dataclass_fields__),
    "gates": None,  # checked by evaluate.check_gates
}
CONFIG_SCALARS = {"calib", "seed", "jobs"}


class ConfigError(Exception):
    pass


def load_config(path) -> dict:
    """Read a JSON run config, rejecting unknown keys and missing files."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - set(CONFIG_SECTIONS) - CONFIG_SCALARS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    for section, keys in CONFIG_SECTIONS.items():
        if section not in cfg:
            continue
        if not isinstance(cfg[section], dict):
            raise ConfigError(f"config section {section!r} must be an object")
        if keys is not None and set(cfg[section]) - keys:
            raise ConfigError(f"unknown keys in {section!r}: {sorted(set(cfg[section]) - keys)}")
    if "calib" in cfg:
        # relative calibration paths resolve against the config file
        calib = os.path.join(os.path.dirname(os.path.abspath(path)), cfg["calib"])
        if not os.path.isfile(calib):
            raise ConfigError(f"calibration file {calib} does not exist")
        cfg["calib"] = calib
    return cfg


def resolve(args) -> dict:
    """Merge config file and flags; flags win."""
    cfg = load_config(args.config) if args.config else {}
    brce = dict(cfg.get("brce", {}))
    noise = dict(cfg.get("noise", {}))
    for flag, section, key in (("step", brce, "step"), ("th", brce, "th"),
                               ("theta", noise, "theta"), ("gamma", noise, "gamma")):
        if getattr(args, flag, None) is not None:
            section[key] = getattr(args, flag)
    resolved = {
        "command": args.command,
        "brce": asdict(BrceParams(**brce)),
        "noise": asdict(NoiseParams(**noise)),
        "scan": dict(cfg.get("scan", {})),
        "corpus": dict(cfg.get("corpus", {})),
        "gates": dict(cfg.get("gates", {})),
        "seed": cfg.get("seed", 0) if args.seed is None else args.seed,
        "jobs": cfg.get("jobs", 1) if args.jobs is None else args.jobs,
        "calib": args.calib if args.calib is not None else cfg.get("calib"),
    }
    if resolved["calib"] is not None and not os.path.isfile(resolved["calib"]):
        raise ConfigError(f"calibration file {resolved['calib']} does not exist")
    return resolved


def scan_params(cfg: dict) -> ScanParams:
    scan = dict(cfg["scan"])
    if "depth_band" in scan:
        scan["depth_band"] = tuple(scan["depth_band"])
    return ScanParams(brce=BrceParams(**cfg["brce"]), noise=NoiseParams(**cfg["noise"]), **scan)


def write_run_config(out_dir, cfg: dict, extra: dict | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    snap = dict(cfg, **(extra or {}))
    if snap.get("calib"):
        snap["calib"] = os.path.abspath(snap["calib"])
    with open(os.path.join(out_dir, "run_config.json"), "w") as fh:
        json.dump(snap, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _emit(doc: dict, out_dir, name: str) -> None:
    text = json.dumps(doc, indent=2) + "\n"
    if out_dir is None:
        sys.stdout.write(text)
        return
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, name), "w") as fh:
        fh.write(text)


def _pair(text: str, name: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"{name} must be numbers separated by commas") from None
    if len(vals) != 2:
        raise ConfigError(f"{name} needs exactly two values")
    return vals


# --- subcommands ---------------------------------------------------------------

def cmd_extract(args, cfg) -> int:
    img = load_image(args.image)
    roi = None
    if args.roi:
        roi = tuple(int(v) for v in args.roi.split(","))
        if len(roi) != 4:
            raise ConfigError("--roi needs x0,y0,x1,y1")
    prefix = None
    if args.dump_stages:
        if args.out is None:
            raise ConfigError("--dump-stages needs --out")
        os.makedirs(args.out, exist_ok=True)
        prefix = os.path.join(args.out, "stage")
    if args.out is not None:
        write_run_config(args.out, cfg, {"image": os.path.abspath(args.image), "roi": roi})
    try:
        line = extract_laser_line(img, BrceParams(**cfg["brce"]), NoiseParams(**cfg["noise"]),
                                  roi=roi, dump_prefix=prefix).line
    except (EmptyLineError, FitError) as exc:
        log.error("%s", exc)
        return EXIT_EMPTY_LINE
    _emit({
        "rows": line.rows.tolist(),
        "centroids": line.centroids.tolist(),
        "counts": line.counts.tolist(),
        "poly": line.poly.tolist(),
        "domain": list(line.domain),
        "order": line.order,
        "residual_rms": line.residual_rms,
    }, args.out, "centerline.json")
    return EXIT_OK


def _session_inputs(args):
    """Images, offsets and detection from either a session dir or explicit paths."""
    doc = {}
    if len(args.inputs) == 1 and os.path.isdir(args.inputs[0]):
        d = args.inputs[0]
        for name in ("session.json", "truth.json"):
            if os.path.exists(os.path.join(d, name)):
                with open(os.path.join(d, name)) as fh:
                    doc = json.load(fh)
                break
        offsets = doc.get("offsets_m")
        if offsets is None:
            raise ConfigError(f"{d} has no session.json with offsets_m")
        paths = [os.path.join(d, f"stop_{k}.png") for k in range(len(offsets))]
    else:
        paths = args.inputs
        offsets = None
    if args.offsets:
        offsets = [float(v) for v in args.offsets.split(",")]
    if offsets is None:
        raise ConfigError("--offsets is required when passing image files")
    if len(offsets) != len(paths):
        raise ConfigError(f"{len(paths)} images but {len(offsets)} offsets")

    detection = doc.get("detection")
    if args.est_center:
        detection = dict(detection or {}, center=_pair(args.est_center, "--est-center"))
    if args.box_size:
        detection = dict(detection or {}, size=_pair(args.box_size, "--box-size"))
    if not detection or "center" not in detection or "size" not in detection:
        raise ConfigError("need --est-center and --box-size (or a session file with a detection)")
    return paths, offsets, detection


def cmd_localize(args, cfg) -> int:
    if cfg["calib"] is None:
        raise ConfigError("localize needs --calib")
    cal = load_calibration(cfg["calib"])
    paths, offsets, detection = _session_inputs(args)
    images = [load_image(p) for p in paths]
    if args.out is not None:
        write_run_config(args.out, cfg, {"images": [os.path.abspath(p) for p in paths],
                                         "offsets_m": offsets, "detection": detection})
    try:
        result = localize(images, offsets, detection, cal, scan_params(cfg))
    except (LocalizationError, GeometryError) as exc:
        log.error("localization failed: %s", exc)
        return EXIT_LOCALIZATION
    _emit(result.to_dict(), args.out, "scan_result.json")
    return EXIT_OK


def cmd_simulate(args, cfg) -> int:
    if args.out is None:
        raise ConfigError("simulate needs --out")
    corpus = dict(cfg["corpus"])
    if args.n_cases is not None:
        corpus["n_cases"] = args.n_cases
    try:
        spec = CorpusSpec.from_dict(corpus)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    cal = load_calibration(cfg["calib"]) if cfg["calib"] else default_calibration()
    cfg = dict(cfg, corpus=spec.to_dict())
    write_run_config(args.out, cfg)
    make_corpus(spec, cfg["seed"], args.out, cal)
    save_calibration(cal, os.path.join(args.out, "calib.txt"))
    return EXIT_OK


def cmd_evaluate(args, cfg) -> int:
    if args.out is None:
        raise ConfigError("evaluate needs --out")
    if not os.path.isfile(os.path.join(args.corpus, "manifest.json")):
        raise ConfigError(f"{args.corpus} has no manifest.json")
    write_run_config(args.out, cfg, {"corpus": os.path.abspath(args.corpus)})
    build_reports(args.corpus, scan_params(cfg), args.out, jobs=int(cfg["jobs"]))
    with open(os.path.join(args.out, "summary.json")) as fh:
        summary = json.load(fh)
    violations = check_gates(summary, cfg["gates"])
    for v in violations:
        log.error("gate violated: %s", v)
    return EXIT_GATE if violations else EXIT_OK


# --- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--step", type=int, help="bRCE neighbour distance in pixels")
    common.add_argument("--th", type=int, help="bRCE gradient threshold")
    common.add_argument("--theta", type=int, help="noise-window pixel count threshold")
    common.add_argument("--gamma", type=int, help="noise-window horizontal stride")
    common.add_argument("--calib", help="calibration file (key = value)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--jobs", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="laserloc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("extract", parents=[common], help="extract the laser centerline of one image")
    ex.add_argument("image")
    ex.add_argument("--roi", help="x0,y0,x1,y1 crop in pixels")
    ex.add_argument("--dump-stages", action="store_true", help="write per-stage images to --out")

    lo = sub.add_parser("localize", parents=[common], help="localize a fruit from a multi-stop scan")
    lo.add_argument("inputs", nargs="+", help="stop images, or one session directory")
    lo.add_argument("--offsets", help="slide offsets in meters, comma separated")
    lo.add_argument("--est-center", help="detector center as col,row")
    lo.add_argument("--box-size", help="detector box as w,h")

    si = sub.add_parser("simulate", parents=[common], help="render a synthetic corpus")
    si.add_argument("--n-cases", type=int)

    ev = sub.add_parser("evaluate", parents=[common], help="score the pipeline on a corpus")
    ev.add_argument("corpus")
    return p


COMMANDS = {
    "extract": cmd_extract,
    "localize": cmd_localize,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, ParameterError, ImageFormatError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
