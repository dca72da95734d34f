"""Command-line entry point: ``relightaug <subcommand> [options]``.

Every subcommand loads inputs, calls one library function and writes the
result plus a ``manifest.json`` describing the run. Option values come from
built-in defaults, then a ``--config`` file of ``key = value`` lines, then
flags on the command line, each overriding the previous.

Exit status: 0 on success, 1 on invalid input or usage, 2 on file errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .envmap import build_sampling_tables
from .errors import ImageIOError, MissingFileError, ValidationError
from .geometry import depth_to_mesh, project_mask, render_background, save_mesh_obj
from .imagery import ValidationReport, load_gbuffer, load_image, load_pfm, read_png_raw, save_gbuffer, save_image, save_pfm
from .metrics import psnr, ssim, temporal_ssim
from .optimize import EnvEstimateConfig, RefineConfig, estimate_envmap, refine_properties
from .pipeline import JitterParams, augment_episode, degrade_episode, load_episode, save_episode, swap_albedo
from .relight import RenderSettings, relight_frame
from .temporal import propagate, quotient_map

log = logging.getLogger("relightaug")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2

GLOBAL_DEFAULTS = {"threads": 0, "seed": 0, "verbose": False, "config": None}
RENDER_DEFAULTS = {"spp": 256, "mode": "disney", "sampler": "mis", "exposure": 1.0}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _flag(v: str) -> bool:
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {v!r}")


def _resolution(v: str) -> tuple[int, int]:
    try:
        w, h = (int(p) for p in str(v).lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {v!r}") from None
    return w, h


def _rgb(v: str) -> tuple[float, float, float]:
    try:
        parts = [float(p) for p in str(v).split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected R,G,B, got {v!r}") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated values, got {v!r}")
    return tuple(parts)


def _paths(v: str) -> list[str]:
    return [p for p in str(v).split(",") if p]


# ---------------------------------------------------------------------------
# parser


def _add_globals(p):
    S = argparse.SUPPRESS
    p.add_argument("--threads", type=int, default=S, help="worker threads (0 = all cores)")
    p.add_argument("--seed", type=int, default=S, help="random seed")
    p.add_argument("--config", default=S, help="file of key = value defaults")
    p.add_argument("--verbose", action="store_true", default=S)


def _add_render(p):
    S = argparse.SUPPRESS
    p.add_argument("--spp", type=int, default=S, help="samples per pixel and strategy")
    p.add_argument("--mode", choices=("disney", "lambert"), default=S)
    p.add_argument("--sampler", choices=("mis", "env_only", "cosine_only"), default=S)
    p.add_argument("--exposure", type=float, default=S)


SUBCOMMANDS: dict[str, dict] = {}


def _sub(name, help, defaults, render=False):
    def deco(fn):
        SUBCOMMANDS[name] = {"fn": fn, "help": help, "defaults": defaults, "render": render}
        return fn
    return deco


def build_parser() -> _Parser:
    S = argparse.SUPPRESS
    parser = _Parser(prog="relightaug", description="G-buffer relighting and episode augmentation")
    parser.add_argument("--version", action="version", version=f"relightaug {__version__}")
    _add_globals(parser)
    subs = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="SUBCOMMAND")

    p = subs.add_parser("relight", help=SUBCOMMANDS["relight"]["help"])
    p.add_argument("--gbuffer", default=S, help="G-buffer directory")
    p.add_argument("--env", default=S, help="environment map (.pfm)")
    p.add_argument("--out", default=S, help="output image (.png or .pfm)")
    _add_render(p)

    p = subs.add_parser("estimate-env", help=SUBCOMMANDS["estimate-env"]["help"])
    p.add_argument("--gbuffer", default=S)
    p.add_argument("--frame", default=S, help="observed frame (.png or .pfm)")
    p.add_argument("--res", type=_resolution, default=S, help="environment resolution WxH")
    p.add_argument("--ridge", type=float, default=S)
    p.add_argument("--max-iters", type=int, default=S)
    p.add_argument("--tol", type=float, default=S)
    p.add_argument("--mode", choices=("disney", "lambert"), default=S)
    p.add_argument("--out", default=S, help="output environment map (.pfm)")

    p = subs.add_parser("refine", help=SUBCOMMANDS["refine"]["help"])
    p.add_argument("--gbuffer", default=S)
    p.add_argument("--frame", default=S)
    p.add_argument("--env", default=S)
    p.add_argument("--delta", type=float, default=S)
    p.add_argument("--iters", type=int, default=S)
    p.add_argument("--step-size", type=float, default=S)
    p.add_argument("--spp-inner", type=int, default=S)
    p.add_argument("--mode", choices=("disney", "lambert"), default=S)
    p.add_argument("--out", default=S, help="output G-buffer directory")

    p = subs.add_parser("mesh", help=SUBCOMMANDS["mesh"]["help"])
    p.add_argument("--gbuffer", default=S)
    p.add_argument("--ratio", type=float, default=S, help="depth discontinuity ratio")
    p.add_argument("--out", default=S, help="output .obj")

    p = subs.add_parser("background", help=SUBCOMMANDS["background"]["help"])
    p.add_argument("--gbuffer", default=S)
    p.add_argument("--mask", default=S, help="8-bit grayscale PNG, 255 = keep")
    p.add_argument("--env", default=S)
    p.add_argument("--ratio", type=float, default=S)
    p.add_argument("--out", default=S)
    _add_render(p)

    p = subs.add_parser("propagate", help=SUBCOMMANDS["propagate"]["help"])
    p.add_argument("--episode", default=S)
    p.add_argument("--relit-first", default=S, help="relit version of frame 0")
    p.add_argument("--epsilon", type=float, default=S)
    p.add_argument("--gain-max", type=float, default=S)
    p.add_argument("--out", default=S, help="output episode directory")

    p = subs.add_parser("augment", help=SUBCOMMANDS["augment"]["help"])
    p.add_argument("--episode", default=S)
    p.add_argument("--gbuffer", default=S)
    p.add_argument("--envs", type=_paths, default=S, help="comma-separated .pfm paths")
    p.add_argument("--refine", type=_flag, nargs="?", const=True, default=S)
    p.add_argument("--source-env", default=S, help="lighting of the original episode, if known")
    p.add_argument("--delta", type=float, default=S)
    p.add_argument("--iters", type=int, default=S)
    p.add_argument("--out", default=S, help="output directory; one episode per environment")
    _add_render(p)

    p = subs.add_parser("degrade", help=SUBCOMMANDS["degrade"]["help"])
    p.add_argument("--episode", default=S)
    p.add_argument("--out", default=S)

    p = subs.add_parser("texture", help=SUBCOMMANDS["texture"]["help"])
    p.add_argument("--gbuffer", default=S)
    p.add_argument("--mask", default=S, help="PNG; nonzero pixels receive the new albedo")
    p.add_argument("--albedo", type=_rgb, default=S, help="linear R,G,B in [0, 1]")
    p.add_argument("--env", default=S)
    p.add_argument("--out", default=S)
    _add_render(p)

    p = subs.add_parser("metrics", help=SUBCOMMANDS["metrics"]["help"])
    p.add_argument("--ref", default=S, help="reference frames (episode or image directory)")
    p.add_argument("--test", default=S, help="frames to score")
    p.add_argument("--out", default=S, help="report .csv")

    for action in subs.choices.values():
        _add_globals(action)
    return parser


def _actions_by_dest(parser, command):
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[command]
    return {a.dest: a for a in sub._actions if a.dest != "help"}


def read_config(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(path, "config file not found")
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValidationError(f"{path}:{lineno}: expected key = value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def resolve_options(parser, ns: argparse.Namespace) -> dict:
    """Merge built-in defaults < config file < command-line flags."""
    command = ns.command
    given = {k: v for k, v in vars(ns).items() if k != "command"}
    spec = SUBCOMMANDS[command]
    opts = dict(GLOBAL_DEFAULTS)
    if spec["render"]:
        opts.update(RENDER_DEFAULTS)
    opts.update(spec["defaults"])
    config_path = given.get("config")
    if config_path:
        actions = _actions_by_dest(parser, command)
        for key, raw in read_config(config_path).items():
            if key not in actions:
                raise ValidationError(f"config key {key!r} is not an option of {command}")
            act = actions[key]
            if isinstance(act, argparse._StoreTrueAction):
                value = _flag(raw)
            else:
                try:
                    value = act.type(raw) if act.type else raw
                except (argparse.ArgumentTypeError, ValueError) as e:
                    raise ValidationError(f"config key {key!r}: {e}") from None
                if act.choices and value not in act.choices:
                    raise ValidationError(f"config key {key!r} must be one of {list(act.choices)}")
            opts[key] = value
    opts.update(given)
    return opts


def _require(opts, *names):
    missing = [n for n in names if opts.get(n) in (None, "")]
    if missing:
        raise ValidationError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _settings(opts) -> RenderSettings:
    return RenderSettings(spp=opts["spp"], mode=opts["mode"], sampler=opts["sampler"],
                          seed=opts["seed"], exposure=opts["exposure"])


def _threads(opts):
    return opts["threads"] or None


def _gbuffer(path):
    report = ValidationReport()
    return load_gbuffer(path, report), report.warnings


def _load_env(path):
    return build_sampling_tables(load_pfm(path).astype(np.float64))


def _load_mask(path) -> np.ndarray:
    m = read_png_raw(path)
    if m.ndim == 3:
        m = m[..., 0]
    return m


def _out_dir_of(opts) -> Path | None:
    out = opts.get("out")
    if not out:
        return None
    p = Path(out)
    return p if not p.suffix else p.parent


# ---------------------------------------------------------------------------
# subcommands; each returns (outputs, warnings)


@_sub("relight", "render a G-buffer under an environment map", {}, render=True)
def cmd_relight(opts):
    _require(opts, "gbuffer", "env", "out")
    gbuf, warnings = _gbuffer(opts["gbuffer"])
    img = relight_frame(gbuf, _load_env(opts["env"]), _settings(opts), _threads(opts))
    save_image(img, opts["out"])
    return [opts["out"]], warnings


@_sub("estimate-env", "estimate a low-resolution environment map from one frame",
      {"res": (32, 16), "ridge": 1e-3, "max_iters": 500, "tol": 1e-4, "mode": "disney"})
def cmd_estimate_env(opts):
    _require(opts, "gbuffer", "frame", "out")
    w, h = opts["res"]
    cfg = EnvEstimateConfig(env_width=w, env_height=h, ridge=opts["ridge"], max_iters=opts["max_iters"], tol=opts["tol"])
    gbuf, warnings = _gbuffer(opts["gbuffer"])
    est = estimate_envmap(gbuf, load_image(opts["frame"]), cfg, RenderSettings(mode=opts["mode"]))
    save_pfm(est.env.radiance.astype(np.float32), opts["out"])
    log.info("relative residual %.6g after %d iterations (%s)", est.relative_residual, est.iterations, est.status)
    return [opts["out"]], warnings + list(est.warnings)


@_sub("refine", "refine albedo and roughness against an observed frame",
      {"delta": 0.1, "iters": 200, "step_size": 0.05, "spp_inner": 64, "mode": "disney"})
def cmd_refine(opts):
    _require(opts, "gbuffer", "frame", "env", "out")
    cfg = RefineConfig(delta=opts["delta"], iterations=opts["iters"], step_size=opts["step_size"],
                       spp_inner=opts["spp_inner"])
    gbuf, warnings = _gbuffer(opts["gbuffer"])
    res = refine_properties(gbuf, load_image(opts["frame"]), _load_env(opts["env"]), cfg,
                            RenderSettings(mode=opts["mode"], seed=opts["seed"]))
    out = Path(opts["out"])
    save_gbuffer(res.gbuffer, out)
    (out / "loss_trace.txt").write_text("".join(f"{v!r}\n" for v in res.loss_trace))
    return [str(out)], warnings


@_sub("mesh", "triangulate the depth map into an OBJ mesh", {"ratio": 1.1})
def cmd_mesh(opts):
    _require(opts, "gbuffer", "out")
    gbuf, warnings = _gbuffer(opts["gbuffer"])
    save_mesh_obj(depth_to_mesh(gbuf.depth, gbuf.intrinsics, opts["ratio"]), opts["out"])
    return [opts["out"]], warnings


@_sub("background", "re-render the background under a new environment map", {"ratio": 1.1}, render=True)
def cmd_background(opts):
    _require(opts, "gbuffer", "mask", "env", "out")
    gbuf, warnings = _gbuffer(opts["gbuffer"])
    keep = _load_mask(opts["mask"]) >= 0.5
    mesh = project_mask(depth_to_mesh(gbuf.depth, gbuf.intrinsics, opts["ratio"]), keep.astype(np.int64))
    img = render_background(mesh, gbuf, keep, _load_env(opts["env"]), _settings(opts), _threads(opts))
    save_image(img, opts["out"])
    return [opts["out"]], warnings


@_sub("propagate", "carry a relit first frame across an episode", {"epsilon": 1e-3, "gain_max": 8.0})
def cmd_propagate(opts):
    _require(opts, "episode", "relit_first", "out")
    ep = load_episode(opts["episode"])
    qmap = quotient_map(ep.frames[0], load_image(opts["relit_first"]), opts["epsilon"], opts["gain_max"])
    save_episode(ep.with_frames(propagate(ep.frames, qmap)), opts["out"])
    return [opts["out"]], []


@_sub("augment", "relight an episode under several environment maps",
      {"refine": False, "source_env": None, "delta": 0.1, "iters": 200}, render=True)
def cmd_augment(opts):
    _require(opts, "episode", "gbuffer", "envs", "out")
    ep = load_episode(opts["episode"])
    gbuf, warnings = _gbuffer(opts["gbuffer"])
    envs = [_load_env(p) for p in opts["envs"]]
    refine = RefineConfig(delta=opts["delta"], iterations=opts["iters"]) if opts["refine"] else None
    source = _load_env(opts["source_env"]) if opts["source_env"] else None
    res = augment_episode(ep, gbuf, envs, _settings(opts), refine, _threads(opts), source)
    out = Path(opts["out"])
    outputs = []
    for i, e in enumerate(res.episodes):
        if e is None:
            warnings.append(f"env {i} ({opts['envs'][i]}): {res.failures[i]}")
            continue
        d = out / f"env_{i:03d}"
        save_episode(e, d)
        outputs.append(str(d))
    if not outputs:
        raise ValidationError("every environment failed: " + "; ".join(warnings))
    return outputs, warnings


@_sub("degrade", "apply one random colour jitter to a whole episode", {})
def cmd_degrade(opts):
    _require(opts, "episode", "out")
    params = JitterParams.sample(opts["seed"])
    save_episode(degrade_episode(load_episode(opts["episode"]), params), opts["out"])
    log.info("jitter %s", params)
    return [opts["out"]], []


@_sub("texture", "swap albedo inside a mask and relight", {}, render=True)
def cmd_texture(opts):
    _require(opts, "gbuffer", "mask", "albedo", "env", "out")
    gbuf, warnings = _gbuffer(opts["gbuffer"])
    swapped = swap_albedo(gbuf, _load_mask(opts["mask"]) > 0, opts["albedo"])
    img = relight_frame(swapped, _load_env(opts["env"]), _settings(opts), _threads(opts))
    save_image(img, opts["out"])
    return [opts["out"]], warnings


def _load_sequence(directory) -> list[np.ndarray]:
    d = Path(directory)
    if (d / "frames").is_dir():
        d = d / "frames"
    if not d.is_dir():
        raise MissingFileError(d, "frame directory not found")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in (".png", ".pfm"))
    if not files:
        raise MissingFileError(d, "no .png or .pfm frames")
    return [load_image(p) for p in files]


@_sub("metrics", "score a sequence against a reference (SSIM, PSNR, temporal SSIM)", {})
def cmd_metrics(opts):
    _require(opts, "ref", "test", "out")
    ref, test = _load_sequence(opts["ref"]), _load_sequence(opts["test"])
    if len(ref) != len(test):
        raise ValidationError(f"reference has {len(ref)} frames but test has {len(test)}")
    rows = [(t, ssim(a, b), psnr(a, b)) for t, (a, b) in enumerate(zip(ref, test))]
    lines = ["frame,ssim,psnr"] + [f"{t},{s!r},{p!r}" for t, s, p in rows]
    mean_ssim = float(np.mean([r[1] for r in rows]))
    lines.append(f"mean_ssim,{mean_ssim!r},")
    warnings = []
    if len(ref) >= 2:
        lines.append(f"temporal_ssim_ref,{temporal_ssim(ref)!r},")
        lines.append(f"temporal_ssim_test,{temporal_ssim(test)!r},")
    else:
        lines += ["temporal_ssim_ref,n/a,", "temporal_ssim_test,n/a,"]
        warnings.append("temporal SSIM needs at least two frames")
    out = Path(opts["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(out.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, out)
    print(f"mean_ssim {mean_ssim:.6f}")
    print("lpips n/a")
    print("temporal_lpips n/a")
    return [str(out)], warnings


# ---------------------------------------------------------------------------


def _jsonable(v):
    if isinstance(v, (tuple, list)):
        return [_jsonable(x) for x in v]
    if isinstance(v, Path):
        return str(v)
    return v


def write_manifest(directory: Path, record: dict) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "manifest.json"
    tmp = directory / "manifest.json.tmp"
    tmp.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)
    return path


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    if ns.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_INVALID

    start = time.perf_counter()
    record = {"subcommand": ns.command, "status": "error", "warnings": [], "inputs": {}, "outputs": []}
    status = EXIT_OK
    opts = {}
    try:
        opts = resolve_options(parser, ns)
        logging.basicConfig(level=logging.INFO if opts["verbose"] else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        # create output parents up front so a bad path surfaces as an I/O error
        out_dir = _out_dir_of(opts)
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
        outputs, warnings = SUBCOMMANDS[ns.command]["fn"](opts)
        record.update(status="ok", outputs=outputs, warnings=warnings)
        for w in warnings:
            log.warning(w)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        record.update(status="invalid", error=str(e))
        status = EXIT_INVALID
    except (ImageIOError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        record.update(status="io_error", error=str(e))
        status = EXIT_IO
    record["parameters"] = {k: _jsonable(v) for k, v in sorted(opts.items())}
    record["seed"] = opts.get("seed")
    record["inputs"] = {k: _jsonable(opts[k]) for k in
                        ("gbuffer", "env", "envs", "frame", "mask", "episode", "relit_first", "ref", "test", "source_env")
                        if opts.get(k)}
    record["wall_clock_s"] = round(time.perf_counter() - start, 6)
    out_dir = _out_dir_of(opts) if opts else None
    if out_dir is not None:
        try:
            write_manifest(out_dir, record)
        except OSError as e:
            print(f"error: could not write manifest: {e}", file=sys.stderr)
            status = status or EXIT_IO
    return status


if __name__ == "__main__":
    sys.exit(main())
