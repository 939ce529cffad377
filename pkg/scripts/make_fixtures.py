"""Regenerate the small fixture files under tests/fixtures/ (deterministic)."""

import argparse
from pathlib import Path

import numpy as np

from gazestyle.imageio import save_image, save_mask
from gazestyle.lossnet import LossNet, small_spec
from gazestyle.synth import style_eye, synthetic_eye


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests" / "fixtures"))
    args = parser.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    img, labels = synthetic_eye(seed=3, noise=3.0, light_gradient=(0.3, -0.2))
    save_image(img, out / "eye_55x35.png")
    save_mask(labels, out / "eye_55x35_mask.png")

    img, labels = synthetic_eye(64, 64, (30.0, 33.0), iris_radius=12.0, pupil_radius=5.0, noise=4.0,
                                light_gradient=(0.4, 0.2), seed=5)
    save_image(img, out / "content_64.png")
    save_mask(labels, out / "content_64_mask.png")
    img, _, labels = style_eye(64, 64)
    save_image(img, out / "style_64.png")
    save_mask(labels, out / "style_64_mask.png")

    LossNet.random(small_spec(), seed=11).save(out / "small_lossnet.rslw")
    for p in sorted(out.iterdir()):
        print(p)


if __name__ == "__main__":
    main()
