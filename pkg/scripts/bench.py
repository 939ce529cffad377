"""Time optimization-based and feed-forward stylization at three resolutions on this machine."""

import argparse
import json
from pathlib import Path

from gazestyle.cli import main as cli
from gazestyle.imageio import save_image, save_mask
from gazestyle.synth import style_eye


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--resolutions", type=int, nargs=3, default=[64, 128, 256])
    parser.add_argument("--iterations", type=int, default=400)
    parser.add_argument("--width", type=float, default=1.0, help="loss-net channel multiplier")
    parser.add_argument("--checkpoint", help="trained transfer-net checkpoint for the proposed row")
    parser.add_argument("--out", default="bench_run")
    args = parser.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    style, _, labels = style_eye()
    save_image(style, out / "style.png")
    save_mask(labels, out / "style_mask.png")
    job = {"style": "style.png", "style_mask": "style_mask.png", "output": "results",
           "loss_net": {"width": args.width}}
    if args.checkpoint:
        job["checkpoint"] = str(Path(args.checkpoint).resolve())
    (out / "job.json").write_text(json.dumps(job, indent=2))
    return cli(["bench", "--config", str(out / "job.json"), "--resolutions", *map(str, args.resolutions),
                "--iterations", str(args.iterations)])


if __name__ == "__main__":
    raise SystemExit(main())
