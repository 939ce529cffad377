"""Synthetic eye patches used as fixtures: a real-looking cohort and an indoor "synthetic" style."""

from __future__ import annotations

import numpy as np

from .imageio import labels_to_mask

ATTENTION, BACKGROUND = 0, 1


def synthetic_eye(
    width: int = 55,
    height: int = 35,
    center: tuple[float, float] | None = None,
    iris_radius: float = 8.0,
    pupil_radius: float = 3.5,
    skin=(196, 150, 128),
    sclera=(235, 230, 225),
    iris=(92, 64, 44),
    pupil=(18, 16, 16),
    light_gradient: tuple[float, float] = (0.0, 0.0),
    noise: float = 0.0,
    seed: int = 0,
):
    """Render an eye patch and its label map.

    The attention label covers iris and pupil; everything else is background.
    ``light_gradient`` is a multiplicative illumination ramp per unit of x and y
    (fraction per image width / height), ``noise`` a Gaussian sigma in pixel units.
    Returns (image 1x3xHxW float32 in [0, 255], labels HxW uint8).
    """
    rng = np.random.default_rng(seed)
    cx, cy = center if center is not None else ((width - 1) / 2, (height - 1) / 2)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    img = np.empty((3, height, width))
    img[:] = np.asarray(skin, float)[:, None, None]
    # almond-shaped opening between two eyelid arcs
    ex, ey = (width - 1) / 2, (height - 1) / 2
    opening = ((xs - ex) / (0.47 * width)) ** 2 + ((ys - ey) / (0.40 * height)) ** 2 <= 1.0
    img[:, opening] = np.asarray(sclera, float)[:, None]
    r = np.hypot(xs - cx, ys - cy)
    iris_px = (r <= iris_radius) & opening
    img[:, iris_px] = np.asarray(iris, float)[:, None]
    pupil_px = (r <= pupil_radius) & opening
    img[:, pupil_px] = np.asarray(pupil, float)[:, None]
    gx, gy = light_gradient
    light = 1.0 + gx * (xs / width - 0.5) + gy * (ys / height - 0.5)
    img = img * light[None]
    if noise:
        img = img + rng.normal(0.0, noise, img.shape)
    labels = np.where(iris_px, ATTENTION, BACKGROUND).astype(np.uint8)
    return np.clip(img, 0, 255).astype(np.float32)[None], labels


def real_cohort(n: int, seed: int = 0, width: int = 55, height: int = 35):
    """``n`` outdoor-like eyes: varied gaze position, skin tone, illumination ramp and sensor noise.

    Yields (image, mask 1x2xHxW, labels).
    """
    rng = np.random.default_rng(seed)
    for i in range(n):
        center = (width / 2 + rng.uniform(-8, 8), height / 2 + rng.uniform(-3, 3))
        skin = rng.uniform([150, 105, 80], [215, 170, 150])
        iris = rng.uniform([50, 35, 20], [120, 95, 80])
        img, labels = synthetic_eye(
            width, height, center,
            iris_radius=rng.uniform(7.0, 9.0),
            pupil_radius=rng.uniform(2.5, 4.0),
            skin=skin, iris=iris,
            sclera=rng.uniform(200, 245, 3),
            light_gradient=tuple(rng.uniform(-0.6, 0.6, 2)),
            noise=rng.uniform(4, 12),
            seed=int(rng.integers(1 << 31)),
        )
        yield img, labels_to_mask(labels, 2), labels


def style_eye(width: int = 55, height: int = 35, seed: int = 1):
    """Evenly lit indoor eye with a different colour scheme: the purification target."""
    img, labels = synthetic_eye(width, height, ((width - 1) / 2 + 3, (height - 1) / 2 - 1), iris_radius=8.5,
                                pupil_radius=3.8, skin=(225, 185, 165), sclera=(245, 245, 245),
                                iris=(70, 95, 120), pupil=(8, 8, 10), noise=1.0, seed=seed)
    return img, labels_to_mask(labels, 2), labels
