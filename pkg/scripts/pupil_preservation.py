"""Stylize a synthetic outdoor-eye cohort toward an indoor style eye and report pupil-center shifts.

Original masks and masks re-estimated from the stylized images are written as PNGs,
so the same numbers can be reproduced with ``gazestyle pupil-check --from-images``.
"""

import argparse
import logging
from pathlib import Path

from gazestyle.imageio import save_image, save_mask
from gazestyle.losses import LossConfig
from gazestyle.lossnet import LossNet, vgg16_spec
from gazestyle.optimize import LbfgsConfig, StylizeJob, stylize_by_optimization
from gazestyle.pupil import estimate_attention_mask, pupil_shift_report
from gazestyle.synth import real_cohort, style_eye


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=50)
    parser.add_argument("--iterations", type=int, default=40)
    parser.add_argument("--width", type=float, default=1.0, help="loss-net channel multiplier")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="pupil_run")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    out = Path(args.out)
    for sub in ("originals", "purified", "estimated"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    net = LossNet.random(vgg16_spec(args.width), seed=0)
    style, style_mask, _ = style_eye()
    pairs, names = [], []
    for i, (img, mask, labels) in enumerate(real_cohort(args.n, seed=args.seed)):
        job = StylizeJob(img, mask, style, style_mask, LossConfig(), LbfgsConfig(max_iters=args.iterations), seed=i)
        purified, _, _ = stylize_by_optimization(job, net)
        estimated = estimate_attention_mask(purified)
        name = f"eye{i:03d}"
        save_mask(labels, out / "originals" / f"{name}.png")
        save_image(purified, out / "purified" / f"{name}.png")
        save_mask(estimated, out / "estimated" / f"{name}.png")
        pairs.append((mask, estimated))
        names.append(name)
        logging.info("%s done", name)
    report = pupil_shift_report(pairs, names)
    report.write_csv(out / "pupil_report.csv")
    print(report.summary())


if __name__ == "__main__":
    main()
