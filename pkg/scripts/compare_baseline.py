"""Record per-iteration loss curves of the baseline and region objectives on a synthetic cohort.

Writes the cohort images, a job config and the ``compare-baseline`` outputs under ``--out``.
"""

import argparse
import json
from pathlib import Path

from gazestyle.cli import main as cli
from gazestyle.imageio import save_image, save_mask
from gazestyle.synth import real_cohort, style_eye


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=5)
    parser.add_argument("--iterations", type=int, default=100)
    parser.add_argument("--width", type=float, default=1.0, help="loss-net channel multiplier")
    parser.add_argument("--out", default="compare_run")
    args = parser.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    contents = []
    for i, (img, _, labels) in enumerate(real_cohort(args.n, seed=1)):
        save_image(img, out / f"eye{i:02d}.png")
        save_mask(labels, out / f"eye{i:02d}_mask.png")
        contents.append({"image": f"eye{i:02d}.png", "mask": f"eye{i:02d}_mask.png"})
    style, _, labels = style_eye()
    save_image(style, out / "style.png")
    save_mask(labels, out / "style_mask.png")
    job = {"contents": contents, "style": "style.png", "style_mask": "style_mask.png", "output": "results",
           "loss_net": {"width": args.width}, "solver": {"max_iters": args.iterations}}
    (out / "job.json").write_text(json.dumps(job, indent=2))
    return cli(["compare-baseline", "--config", str(out / "job.json")])


if __name__ == "__main__":
    raise SystemExit(main())
