"""Command-line front end: phantom synthesis, surface detection, patch
extraction, training, model selection, evaluation and overlay rendering.

Options may come from a flat ``key = value`` config file (``--config``);
explicit flags override file values.  Every command echoes its resolved
configuration, and all randomness flows from one root seed split into named
streams, so re-runs with identical inputs produce identical artifacts.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import octio, overlay, preproc, report, synth
from .errors import (
    OctMarginError,
    ShapeError,
    SliceShrinkError,
    TrainingDivergedError,
    UsageError,
)
from .metrics import confusion, eer, metrics, roc, vertical_average, DEFAULT_FPR_GRID
from .modelsel import GridEntry, HyperGrid, cross_validate, enumerate_grid, selection_table
from .network import default_architecture, tumor_scores
from .regularizers import METHODS, RegularizerConfig, SamplerSettings, momentum_for
from .train import TrainConfig, default_schedule, train

DESK_EPOCHS = 15
DESK_SAMPLER_BURN_IN = 48  # coordinate updates
DESK_SAMPLER_THIN = 16

LABEL_NAMES = {"tumor": 1, "normal": 0, "auto": preproc.UNLABELED}


def _echo(command: str, args: argparse.Namespace) -> None:
    pairs = sorted(
        (k, v) for k, v in vars(args).items() if k not in ("func", "command") and v is not None
    )
    print(f"# {command} " + " ".join(f"{k}={v}" for k, v in pairs))


def load_config_file(path) -> dict:
    """Flat UTF-8 key = value lines; '#' starts a comment."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError("USAGE", f"cannot read config file {path}: {e}") from None
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError("USAGE", f"{path}:{ln}: expected key = value")
        key, val = line.split("=", 1)
        values[key.strip().replace("-", "_")] = val.strip()
    return values


def _coerce(raw: str, action: argparse.Action):
    if isinstance(action, (argparse._StoreTrueAction,)):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError("USAGE", f"config key {action.dest}: expected a boolean, got {raw!r}")
    caster = action.type or str
    try:
        value = caster(raw)
    except (TypeError, ValueError):
        raise UsageError("USAGE", f"config key {action.dest}: cannot parse {raw!r}") from None
    if action.choices is not None and value not in action.choices:
        raise UsageError("USAGE", f"config key {action.dest}: {value!r} not in {action.choices}")
    return value


def apply_config(args: argparse.Namespace, parser: argparse.ArgumentParser, argv: list) -> None:
    """Overlay config-file values onto options not given on the command line."""
    if not getattr(args, "config", None):
        return
    values = load_config_file(args.config)
    explicit = set()
    for token in argv:
        if token.startswith("--"):
            explicit.add(token.split("=", 1)[0][2:].replace("-", "_"))
    for action in parser._actions:
        key = action.dest
        if key in values and key not in explicit:
            setattr(args, key, _coerce(values[key], action))


def _require(args, names) -> None:
    for name in names:
        if getattr(args, name, None) is None:
            flag = "--" + name.replace("_", "-")
            raise UsageError("USAGE", f"{flag} is required for this command")


def _detect_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--shift", type=int, default=preproc.SURFACE_SHIFT,
                   help="rows to push the curve into the tissue")
    p.add_argument("--ball-radius", type=float, default=50.0)
    p.add_argument("--min-edge-strength", type=float, default=0.05,
                   help="absolute floor under the automatic edge threshold")


def _detect_all(volume, args):
    return [
        preproc.detect_surface(
            volume.frames[:, :, f],
            shift=args.shift,
            ball_radius=args.ball_radius,
            min_edge_strength=args.min_edge_strength,
        )
        for f in range(volume.shape[2])
    ]


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    _require(args, ["out", "seed"])
    config = synth.PhantomConfig(
        rows=args.rows,
        cols=args.cols,
        frames=args.frames,
        surface=args.surface,
        surface_row=args.surface_row,
        tilt=args.tilt,
        amplitude=args.amplitude,
        period=args.period,
        layout=args.layout,
        adipose_period=args.adipose_period,
        seed=args.seed,
    )
    _echo("synth", args)
    volume = synth.generate(config)
    octio.write_octv(args.out, volume)
    print(f"wrote {args.out}: {volume.shape[0]}x{volume.shape[1]}x{volume.shape[2]} with mask")
    return 0


def cmd_detect(args) -> int:
    _require(args, ["volume", "out"])
    _echo("detect", args)
    volume = octio.read_octv(args.volume)
    if not 0 <= args.frame < volume.shape[2]:
        raise UsageError("USAGE", f"--frame {args.frame} outside 0..{volume.shape[2] - 1}")
    curve = preproc.detect_surface(
        volume.frames[:, :, args.frame],
        shift=args.shift,
        ball_radius=args.ball_radius,
        min_edge_strength=args.min_edge_strength,
    )
    report.write_text(args.out, report.surface_table(curve))
    fallback = int(np.sum(curve.flags != preproc.DETECTED))
    print(f"wrote {args.out}: {len(curve.rows)} columns, {fallback} fallback columns")
    return 0


def cmd_extract(args) -> int:
    _require(args, ["volume", "out"])
    _echo("extract", args)
    volume = octio.read_octv(args.volume)
    surfaces = _detect_all(volume, args)
    patches = preproc.extract_patches(
        volume, surfaces, args.mode, label=LABEL_NAMES[args.label]
    )
    octio.save_patches(args.out, patches)
    counts = {int(v): int(n) for v, n in zip(*np.unique(patches.labels, return_counts=True))}
    print(f"wrote {args.out}: {len(patches)} {args.mode} patches, labels {counts}")
    return 0


def _desk_scale(args) -> None:
    if not args.desk_scale:
        return
    if args.epochs is None:
        args.epochs = DESK_EPOCHS
    if getattr(args, "sampler_burn_in", None) is None:
        args.sampler_burn_in = DESK_SAMPLER_BURN_IN
    if getattr(args, "sampler_thin", None) is None:
        args.sampler_thin = DESK_SAMPLER_THIN
    print(
        f"[desk-scale] reduced protocol: epochs={args.epochs}, slice-sampler "
        f"burn-in={args.sampler_burn_in} and thinning={args.sampler_thin} coordinate updates",
        file=sys.stderr,
    )


def _build_regularizer(args, train_x) -> RegularizerConfig:
    if args.lam is None:
        raise UsageError("USAGE", f"--lam is required for method {args.method}")
    if args.method == "wd":
        return RegularizerConfig(method="wd", lam=args.lam)
    if args.method == "wd_do":
        if args.dropout_rate is None:
            raise UsageError("USAGE", "--dropout-rate is required for method wd_do")
        return RegularizerConfig(method="wd_do", lam=args.lam, dropout_rate=args.dropout_rate)
    if args.method == "fn_dd":
        if args.reg_patches is None:
            raise UsageError("USAGE", "--reg-patches is required for method fn_dd")
        reg_set = octio.load_patches(args.reg_patches).patches
        return RegularizerConfig(method="fn_dd", lam=args.lam, reg_set=reg_set)
    count = args.fn_samples
    if count is None and args.reg_patches is not None:
        count = len(octio.load_patches(args.reg_patches).patches)
    if count is None:
        raise UsageError("USAGE", "--fn-samples (or --reg-patches) is required for method fn_ss")
    sampler = SamplerSettings(burn_in=args.sampler_burn_in, thin=args.sampler_thin)
    return RegularizerConfig(method="fn_ss", lam=args.lam, sample_count=count, sampler=sampler)


def cmd_train(args) -> int:
    _require(args, ["patches", "out", "seed"])
    _desk_scale(args)
    if args.epochs is None:
        args.epochs = 45
    _echo("train", args)
    data = octio.load_patches(args.patches)
    if np.any(data.labels == preproc.UNLABELED):
        raise UsageError("USAGE", "training patches must be labeled")
    reg = _build_regularizer(args, data.patches)
    momentum = args.momentum if args.momentum is not None else momentum_for(args.method)
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        momentum=momentum,
        seed=args.seed,
        schedule=default_schedule(args.epochs),
    )
    arch = default_architecture(pooling=args.pooling)

    t0 = time.perf_counter()
    params, log = train(
        data.patches,
        data.labels,
        config,
        reg,
        arch=arch,
        progress=lambda ep, lg: print(
            f"epoch {ep:3d} lr={lg.rates[-1]:g} loss={lg.losses[-1]:.4f} "
            f"error={lg.errors[-1]:.4f} penalty={lg.penalties[-1]:.4f}"
        ),
    )
    octio.write_checkpoint(args.out, params)
    print(f"wrote {args.out} after {time.perf_counter() - t0:.1f} s")
    stem = Path(args.out).with_suffix("")
    lines = ["epoch,lr,loss,top1_error,penalty"]
    for i in range(len(log.losses)):
        lines.append(
            f"{i + 1},{log.rates[i]:g},{log.losses[i]:.6f},{log.errors[i]:.6f},{log.penalties[i]:.6f}"
        )
    report.write_text(f"{stem}_log.csv", "\n".join(lines) + "\n")
    report.plot_training(f"{stem}_log.png", log, title=f"{args.method} training")
    print(f"wrote {stem}_log.csv and {stem}_log.png")
    return 0


def cmd_select(args) -> int:
    _require(args, ["patches", "out", "seed"])
    _desk_scale(args)
    if args.epochs is None:
        args.epochs = 45
    _echo("select", args)
    data = octio.load_patches(args.patches)
    if args.grid == "full":
        grid = enumerate_grid(args.method)
    else:
        grid = HyperGrid(
            method=args.method,
            entries=(
                GridEntry(lam=1e-4, pooling="max",
                          r_do=0.25 if args.method == "wd_do" else None),
                GridEntry(lam=10.0, pooling="max",
                          r_do=0.25 if args.method == "wd_do" else None),
            ),
        )
    base = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        momentum=momentum_for(args.method),
        seed=args.seed,
        schedule=default_schedule(args.epochs),
    )
    sampler = SamplerSettings(burn_in=args.sampler_burn_in, thin=args.sampler_thin)
    result = cross_validate(
        data.patches,
        data.labels,
        grid,
        base,
        k=args.folds,
        seed=args.seed,
        fn_samples=args.fn_samples or min(32, len(data.patches)),
        sampler=sampler,
        workers=args.workers,
        log=lambda msg: print(msg, file=sys.stderr),
    )
    report.write_text(args.out, selection_table(result))
    win = result.winning_entry
    print(f"wrote {args.out}; selected {win.describe()} "
          f"(mean AUC {result.mean_aucs[result.winner]:.4f})")
    return 0


def _read_roster(path):
    rows = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError("USAGE", f"cannot read roster {path}: {e}") from None
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise UsageError("USAGE", f"{path}:{ln}: expected 'name,model,patches'")
        rows.append(parts)
    if not rows:
        raise UsageError("USAGE", f"roster {path} lists no trials")
    return rows


def cmd_eval(args) -> int:
    _require(args, ["roster", "out_dir"])
    _echo("eval", args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, curves, names = [], [], []
    for name, model_path, patch_path in _read_roster(args.roster):
        params = octio.read_checkpoint(model_path)
        data = octio.load_patches(patch_path)
        scores = tumor_scores(params, data.patches)
        preds = (scores >= 0.5).astype(int)
        rep = metrics(confusion(preds, data.labels))
        curve = roc(scores, data.labels)
        e = eer(curve) if curve.auc is not None else None
        rows.append((name, rep, curve.auc, e))
        curves.append(curve)
        names.append(name)
        report.write_text(out / f"roc_{name}.csv", report.roc_table(curve))
    report.write_text(out / "metrics.csv", report.metrics_table(rows))
    defined = [c for c in curves if c.auc is not None]
    if defined:
        mean, std = vertical_average(defined, DEFAULT_FPR_GRID)
        report.write_text(out / "mean_roc.csv",
                          report.mean_roc_table(DEFAULT_FPR_GRID, mean, std))
    report.plot_rocs(out / "roc.png", curves, names, title="test ROC")
    print(f"wrote {out}/metrics.csv, per-trial ROC tables, mean_roc.csv and roc.png")
    return 0


def cmd_overlay(args) -> int:
    _require(args, ["volume", "model", "out_dir"])
    _echo("overlay", args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    volume = octio.read_octv(args.volume)
    if not 0 <= args.frame < volume.shape[2]:
        raise UsageError("USAGE", f"--frame {args.frame} outside 0..{volume.shape[2] - 1}")
    params = octio.read_checkpoint(args.model)

    t0 = time.perf_counter()
    surfaces = _detect_all(volume, args)
    patches = preproc.extract_patches(volume, surfaces, "test")
    covers = (patches.origins[:, 2] <= args.frame) & (
        args.frame < patches.origins[:, 2] + preproc.BLOCK_FRAMES
    )
    sel = patches.patches[covers]
    if len(sel) == 0:
        raise UsageError("USAGE", "no patch covers the requested frame below the surface")
    scores = tumor_scores(params, sel)
    hard = (scores >= 0.5).astype(int)
    field = overlay.accumulate(
        volume.shape[:2],
        patches.origins[covers][:, :2],
        hard,
        surfaces[args.frame],
        depth_limit=args.depth_limit,
    )
    rgb = overlay.render(field)
    elapsed = time.perf_counter() - t0
    print(f"overlay inference time: {elapsed:.2f} s for frame {args.frame}")

    report.save_overlay_png(out / "overlay.png", rgb)
    octio.write_octv(
        out / "field.octv",
        preproc.BScanVolume(frames=field.mean[:, :, None].astype(float)),
    )
    if volume.mask is not None:
        plane = volume.mask[:, :, args.frame]
        lines = ["polarity,region,score"]
        for polarity, cls in (("cancer", synth.TUMOR_CLASS), ("normal", synth.NORMAL_CLASS)):
            rs = overlay.score_regions(field, plane == cls, polarity, args.min_region_pixels)
            for i, s in enumerate(rs.scores):
                lines.append(f"{polarity},{i},{s:g}")
            if rs.mean is not None:
                lines.append(f"{polarity},mean,{rs.mean:g}")
        report.write_text(out / "region_scores.csv", "\n".join(lines) + "\n")
        print(f"wrote {out}/region_scores.csv")
    print(f"wrote {out}/overlay.png and {out}/field.octv")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="octmargin",
        description="OCT breast-tissue margin assessment pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value file; flags override it")
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "generate a phantom volume with ground truth")
    p.add_argument("--out", help="output OCTV path")
    p.add_argument("--seed", type=int)
    p.add_argument("--rows", type=int, default=256)
    p.add_argument("--cols", type=int, default=256)
    p.add_argument("--frames", type=int, default=6)
    p.add_argument("--surface", choices=synth.SURFACE_PROFILES, default="flat")
    p.add_argument("--surface-row", type=float, default=60.0)
    p.add_argument("--tilt", type=float, default=0.15)
    p.add_argument("--amplitude", type=float, default=10.0)
    p.add_argument("--period", type=float, default=256.0)
    p.add_argument("--layout", choices=synth.LAYOUTS, default="normal")
    p.add_argument("--adipose-period", type=int, default=16)

    p = add("detect", cmd_detect, "detect the tissue surface of one frame")
    p.add_argument("--volume", help="input OCTV path")
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--frame", type=int, default=0)
    _detect_args(p)

    p = add("extract", cmd_extract, "extract labeled patches below the surface")
    p.add_argument("--volume")
    p.add_argument("--out", help="output .npz path")
    p.add_argument("--mode", choices=("train", "test"), default="train")
    p.add_argument("--label", choices=sorted(LABEL_NAMES), default="auto",
                   help="volume label when no ground-truth mask is present")
    _detect_args(p)

    def train_like(p, with_method=True):
        p.add_argument("--patches", help="training patches (.npz)")
        p.add_argument("--seed", type=int)
        if with_method:
            p.add_argument("--method", choices=METHODS, required=True)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--batch-size", type=int, default=100)
        p.add_argument("--desk-scale", action="store_true",
                       help="reduced 15-epoch protocol with a bounded sampler budget")
        p.add_argument("--fn-samples", type=int, default=None,
                       help="slice samples per epoch for fn_ss")
        p.add_argument("--sampler-burn-in", type=int, default=None,
                       help="sampler burn-in in coordinate updates (default: 100 sweeps)")
        p.add_argument("--sampler-thin", type=int, default=None,
                       help="sampler thinning in coordinate updates (default: 2 sweeps)")

    p = add("train", cmd_train, "train one network configuration")
    train_like(p)
    p.add_argument("--lam", type=float, default=None, help="regularization weight")
    p.add_argument("--dropout-rate", type=float, default=None)
    p.add_argument("--reg-patches", help="unlabeled patches (.npz) for fn_dd")
    p.add_argument("--pooling", choices=("max", "average"), default="max")
    p.add_argument("--momentum", type=float, default=None,
                   help="default: 0.95 for wd/wd_do, 0 for fn methods")
    p.add_argument("--out", help="output checkpoint (.octm)")

    p = add("select", cmd_select, "cross-validated hyperparameter selection")
    train_like(p)
    p.add_argument("--grid", choices=("full", "mini"), default="full")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--workers", type=int,
                   default=int(os.environ.get("OCTMARGIN_WORKERS", "1")))
    p.add_argument("--out", help="output selection table (.csv)")

    p = add("eval", cmd_eval, "evaluate trained models over a trial roster")
    p.add_argument("--roster", help="CSV lines: name,model.octm,patches.npz")
    p.add_argument("--out-dir")

    p = add("overlay", cmd_overlay, "render the tumor overlay for one frame")
    p.add_argument("--volume")
    p.add_argument("--model")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--out-dir")
    p.add_argument("--depth-limit", type=int, default=overlay.DEPTH_LIMIT)
    p.add_argument("--min-region-pixels", type=int, default=overlay.MIN_REGION_PIXELS)
    _detect_args(p)

    return parser


def _fail(code: str, message: str) -> None:
    msg = " ".join(str(message).split()).replace('"', "'")
    print(f'error code={code} message="{msg}"', file=sys.stderr)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        apply_config(args, sub, argv)
        return args.func(args)
    except UsageError as e:
        _fail(e.code, str(e))
        return 2
    except octio.CorruptFileError as e:
        _fail("CORRUPT", str(e))
        return 1
    except TrainingDivergedError as e:
        _fail("DIVERGED", str(e))
        return 1
    except SliceShrinkError as e:
        _fail("SLICE_SHRINK", str(e))
        return 1
    except ShapeError as e:
        _fail("SHAPE", str(e))
        return 1
    except OctMarginError as e:
        _fail("ERROR", str(e))
        return 1
    except FileNotFoundError as e:
        _fail("IO", str(e))
        return 1
    except (ValueError, RuntimeError) as e:
        _fail("INVALID", str(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
