"""Command line entry point: ``gazestyle <command> ...``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, JobConfig, dump_config, load_config
from .imageio import ImageFormatError, load_image, load_mask, save_image
from .losses import CURVE_COLUMNS, LossBreakdown, RegionLoss
from .lossnet import LossNet, WeightFileError, load_weights, vgg16_spec
from .optimize import StylizeJob, stylize_by_optimization
from .pupil import estimate_attention_mask, pupil_shift_report
from .transfer import TrainRun, TransferNet, train

logger = logging.getLogger("gazestyle")


def write_curve(path, curve: list[LossBreakdown]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for i, bd in enumerate(curve):
            w.writerow([i] + [f"{v:.8g}" for v in bd.row(i)[1:]])


def build_loss_net(cfg: JobConfig) -> LossNet:
    spec = vgg16_spec(cfg.loss_net.width)
    if cfg.loss_net.weights:
        return load_weights(cfg.resolve(cfg.loss_net.weights), spec)
    return LossNet.random(spec, seed=cfg.loss_net.seed)


def _require(cfg: JobConfig, *keys: str) -> None:
    missing = [k for k in keys if getattr(cfg, k) is None]
    if missing:
        raise ConfigError(f"config is missing {missing}")


def _style(cfg: JobConfig):
    _require(cfg, "style", "style_mask")
    return load_image(cfg.resolve(cfg.style)), load_mask(cfg.resolve(cfg.style_mask), cfg.mask_channels)


def _output_dir(cfg: JobConfig, override: str | None) -> Path:
    out = Path(override) if override else cfg.resolve(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands


def cmd_stylize_opt(cfg: JobConfig, out: Path, args) -> int:
    _require(cfg, "content", "content_mask")
    content = load_image(cfg.resolve(cfg.content))
    mask = load_mask(cfg.resolve(cfg.content_mask), cfg.mask_channels)
    style, style_mask = _style(cfg)
    job = StylizeJob(content, mask, style, style_mask, cfg.loss, cfg.solver, cfg.seed)
    image, curve, result = stylize_by_optimization(job, build_loss_net(cfg))
    save_image(image, out / "output.png")
    write_curve(out / "curve.csv", curve)
    print(f"{len(result.trace) - 1} iterations ({result.status}); loss {result.trace[0].loss:.6g} -> "
          f"{result.trace[-1].loss:.6g}; wrote {out / 'output.png'}")
    return 0


def cmd_stylize_ff(cfg: JobConfig, out: Path, args) -> int:
    _require(cfg, "content", "checkpoint")
    net = TransferNet.load(cfg.resolve(cfg.checkpoint), dropout=cfg.transfer.dropout)
    content = load_image(cfg.resolve(cfg.content))
    t0 = time.perf_counter()
    image = net.forward(content, training=False).data
    elapsed = time.perf_counter() - t0
    save_image(image, out / "output.png")
    print(f"forward pass {elapsed:.3f}s; wrote {out / 'output.png'}")
    return 0


def cmd_train(cfg: JobConfig, out: Path, args) -> int:
    items = cfg.content_items()
    if not items:
        raise ConfigError("train needs 'contents' (or 'content' + 'content_mask')")
    contents = [(load_image(cfg.resolve(i.image)), load_mask(cfg.resolve(i.mask), cfg.mask_channels))
                for i in items]
    style, style_mask = _style(cfg)
    run = TrainRun(contents, style, style_mask, cfg.adam, cfg.loss, cfg.transfer, cfg.checkpoint_every,
                   str(out / "checkpoints"), cfg.seed, cfg.learn_attention)
    result = train(run, build_loss_net(cfg))
    result.net.save(out / "checkpoint.rstw")
    write_curve(out / "train_curve.csv", result.curve)
    first, last = result.curve[0].total, result.curve[-1].total
    print(f"{len(result.curve)} steps ({result.status}); loss {first:.6g} -> {last:.6g}; "
          f"wrote {out / 'checkpoint.rstw'}")
    return 0 if result.status == "done" else 2


def cmd_compare_baseline(cfg: JobConfig, out: Path, args) -> int:
    """Optimise each content image under both objectives and record per-iteration curves."""
    items = cfg.content_items()
    if len(items) < 5:
        logger.warning("compare-baseline: %d images given; the protocol uses at least 5", len(items))
    net = build_loss_net(cfg)
    style, style_mask = _style(cfg)
    ff = TransferNet.load(cfg.resolve(cfg.checkpoint)) if cfg.checkpoint else None
    rows = []
    for k, item in enumerate(items):
        name = Path(item.image).stem
        content = load_image(cfg.resolve(item.image))
        mask = load_mask(cfg.resolve(item.mask), cfg.mask_channels)
        region = RegionLoss(net, cfg.loss, content, mask, style, style_mask)
        for objective in ("baseline", "region"):
            job = StylizeJob(content, mask, style, style_mask, cfg.loss, cfg.solver, cfg.seed + k, objective)
            image, curve, result = stylize_by_optimization(job, net)
            write_curve(out / "curves" / f"{name}_{objective}.csv", curve)
            _, final = region(image, include_tv=True)
            rows.append([name, objective, len(result.trace) - 1, f"{curve[0].total:.8g}", f"{curve[-1].total:.8g}",
                         f"{final.total:.8g}"])
        if ff is not None:
            _, bd = region(ff.forward(content).data, include_tv=True)
            rows.append([name, "feed_forward", 0, "", f"{bd.total:.8g}", f"{bd.total:.8g}"])
    with open(out / "compare_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image", "method", "iterations", "initial_objective", "final_objective", "final_region_objective"])
        w.writerows(rows)
    print(f"wrote {len(rows)} summary rows and curves for {len(items)} images to {out}")
    return 0


def format_speed_table(resolutions, times: dict[str, list[float]], iterations: int) -> str:
    """Aligned text table: one column per resolution, one row per method, then the two speedup rows."""
    opt, base, ours = times["optimization"], times["feed_forward"], times["proposed"]
    header = ["Method \\ Resolution"] + [f"{r}x{r}" for r in resolutions]
    body = [
        [f"Optimization baseline ({iterations} it)"] + [f"{t:.3f}s" for t in opt],
        ["Feed-forward baseline"] + [f"{t:.3f}s" for t in base],
        ["Proposed method"] + [f"{t:.3f}s" for t in ours],
        ["speedup (proposed vs optimization)"] + [f"{a / b:.0f}x" for a, b in zip(opt, ours)],
        ["speedup (proposed vs feed-forward)"] + [f"{a / b:.2f}x" for a, b in zip(base, ours)],
    ]
    table = [header] + body
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    lines = [" | ".join(cell.ljust(w) for cell, w in zip(row, widths)) for row in table]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines)


def run_bench(net: LossNet, cfg: JobConfig, resolutions, iterations: int, proposed: TransferNet | None = None):
    times = {"optimization": [], "feed_forward": [], "proposed": []}
    proposed = proposed or TransferNet.init(cfg.transfer, seed=cfg.seed)
    # feed-forward baseline: five residual blocks, no dropout
    baseline_ff = TransferNet.init(replace(cfg.transfer, n_residual=5, dropout=0.0), seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    for r in resolutions:
        content = rng.uniform(0, 255, (1, 3, r, r)).astype(np.float32)
        style = rng.uniform(0, 255, (1, 3, r, r)).astype(np.float32)
        mask = np.zeros((1, cfg.mask_channels, r, r), np.float32)
        mask[:, 0] = 1.0
        solver = replace(cfg.solver, max_iters=iterations, tol=0.0)
        job = StylizeJob(content, mask, style, mask, cfg.loss, solver, cfg.seed, "baseline")
        t0 = time.perf_counter()
        stylize_by_optimization(job, net)
        times["optimization"].append(time.perf_counter() - t0)
        for key, model in (("feed_forward", baseline_ff), ("proposed", proposed)):
            t0 = time.perf_counter()
            model.forward(content, training=False)
            times[key].append(time.perf_counter() - t0)
    return times


def cmd_bench(cfg: JobConfig, out: Path, args) -> int:
    proposed = TransferNet.load(cfg.resolve(cfg.checkpoint)) if cfg.checkpoint else None
    times = run_bench(build_loss_net(cfg), cfg, args.resolutions, args.iterations, proposed)
    table = format_speed_table(args.resolutions, times, args.iterations)
    (out / "bench.txt").write_text("Speed (in seconds), measured on this machine\n" + table + "\n")
    print(table)
    return 0


def cmd_pupil_check(cfg: JobConfig | None, out: Path, args) -> int:
    originals = sorted(Path(args.originals).glob("*.png"))
    if not originals:
        raise ConfigError(f"no PNG masks in {args.originals}")
    pairs, names = [], []
    for path in originals:
        other = Path(args.purified) / path.name
        if not other.exists():
            raise ConfigError(f"no purified counterpart for {path.name} in {args.purified}")
        before = load_mask(path, args.channels)
        after = estimate_attention_mask(load_image(other)) if args.from_images else load_mask(other, args.channels)
        pairs.append((before, after))
        names.append(path.stem)
    report = pupil_shift_report(pairs, names)
    report.write_csv(out / "pupil_report.csv")
    print(report.summary())
    return 0


COMMANDS = {
    "stylize-opt": cmd_stylize_opt,
    "stylize-ff": cmd_stylize_ff,
    "train": cmd_train,
    "compare-baseline": cmd_compare_baseline,
    "bench": cmd_bench,
    "pupil-check": cmd_pupil_check,
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gazestyle", description="Attention-guided eye image purification")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("stylize-opt", "stylize-ff", "train", "compare-baseline", "bench"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON job config")
        p.add_argument("--output", help="output directory (overrides the config)")
        if name == "bench":
            p.add_argument("--resolutions", type=int, nargs=3, default=[256, 512, 1024])
            p.add_argument("--iterations", type=int, default=400, help="L-BFGS iterations for the optimization row")
    p = sub.add_parser("pupil-check")
    p.add_argument("--originals", required=True, help="directory of original label masks (PNG)")
    p.add_argument("--purified", required=True, help="directory of purified masks, or images with --from-images")
    p.add_argument("--from-images", action="store_true", help="re-estimate masks from purified images")
    p.add_argument("--channels", type=int, default=2)
    p.add_argument("--output", required=True)
    sub.add_parser("dump-config").add_argument("--config", required=True)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "dump-config":
            print(dump_config(load_config(args.config)))
            return 0
        if args.command == "pupil-check":
            out = Path(args.output)
            out.mkdir(parents=True, exist_ok=True)
            return cmd_pupil_check(None, out, args)
        cfg = load_config(args.config)
        out = _output_dir(cfg, args.output)
        return COMMANDS[args.command](cfg, out, args)
    except (ConfigError, ImageFormatError, WeightFileError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"gazestyle {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
