"""Pupil-center estimation and the before/after shift report."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from skimage.filters import threshold_multiotsu, threshold_otsu

EYE_WIDTH_PX = 55


def pupil_center(mask, channel: int = 0, refine: bool = False) -> tuple[float, float]:
    """Sub-pixel (x, y) center of a mask's attention channel.

    The default is the intensity-weighted centroid. ``refine=True`` instead fits
    an ellipse to the region boundary by least squares and returns its center.
    """
    m = np.asarray(getattr(mask, "data", mask), dtype=np.float64)
    if m.ndim == 4:
        m = m[0, channel]
    elif m.ndim == 3:
        m = m[channel]
    total = m.sum()
    if total <= 0:
        raise ValueError("attention region is empty")
    ys, xs = np.indices(m.shape)
    cx, cy = float((xs * m).sum() / total), float((ys * m).sum() / total)
    if refine:
        fitted = fit_ellipse_center(_boundary_points(m > 0.5))
        if fitted is not None:
            return fitted
    return cx, cy


def _boundary_points(region: np.ndarray) -> np.ndarray:
    edge = region & ~ndimage.binary_erosion(region)
    ys, xs = np.nonzero(edge)
    return np.column_stack([xs, ys]).astype(np.float64)


def fit_ellipse_center(points: np.ndarray) -> tuple[float, float] | None:
    """Center of the least-squares conic a x^2 + b xy + c y^2 + d x + e y = 1 through ``points``."""
    if len(points) < 5:
        return None
    x0, y0 = points.mean(axis=0)
    x, y = points[:, 0] - x0, points[:, 1] - y0
    design = np.column_stack([x * x, x * y, y * y, x, y])
    coef, *_ = np.linalg.lstsq(design, np.ones(len(points)), rcond=None)
    a, b, c, d, e = coef
    det = 4 * a * c - b * b
    if det <= 1e-12:
        return None
    cx = (b * e - 2 * c * d) / det
    cy = (b * d - 2 * a * e) / det
    return float(cx + x0), float(cy + y0)


def estimate_attention_mask(image) -> np.ndarray:
    """Dark pupil/iris region of an RGB eye image.

    Luminance is split into three classes (skin, sclera, iris/pupil) by multi-level
    Otsu thresholding; the darkest class's largest connected component is kept.

    Returns a 1x2xHxW mask (channel 0 attention, channel 1 background).
    """
    img = np.asarray(getattr(image, "data", image), dtype=np.float64)
    img = img[0] if img.ndim == 4 else img
    gray = 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]
    if np.ptp(gray) == 0:
        raise ValueError("image is constant; no dark region to find")
    if len(np.unique(gray)) < 3:
        dark = gray <= threshold_otsu(gray)
    else:
        dark = gray <= threshold_multiotsu(gray, classes=3)[0]
    labels, n = ndimage.label(dark)
    if n > 1:
        sizes = ndimage.sum(dark, labels, index=range(1, n + 1))
        dark = labels == (1 + int(np.argmax(sizes)))
    att = dark.astype(np.float32)
    return np.stack([att, 1.0 - att])[None]


@dataclass
class PupilRow:
    name: str
    before: tuple[float, float]
    after: tuple[float, float]

    @property
    def shift(self) -> float:
        return float(np.hypot(self.after[0] - self.before[0], self.after[1] - self.before[1]))


@dataclass
class PupilReport:
    rows: list[PupilRow] = field(default_factory=list)
    eye_width: int = EYE_WIDTH_PX

    @property
    def shifts(self) -> np.ndarray:
        return np.array([r.shift for r in self.rows])

    @property
    def mean(self) -> float:
        return float(self.shifts.mean()) if self.rows else 0.0

    @property
    def std(self) -> float:
        return float(self.shifts.std()) if self.rows else 0.0

    def summary(self) -> str:
        return f"pupil shift {self.mean:.1f} ± {self.std:.1f} px (eye width={self.eye_width}px, n={len(self.rows)})"

    def write_csv(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write("# centers from masks (automated centroid), not manual ellipse labels\n")
            w = csv.writer(fh)
            w.writerow(["name", "x_before", "y_before", "x_after", "y_after", "shift_px"])
            for r in self.rows:
                w.writerow([r.name, f"{r.before[0]:.4f}", f"{r.before[1]:.4f}", f"{r.after[0]:.4f}",
                            f"{r.after[1]:.4f}", f"{r.shift:.4f}"])
            w.writerow(["mean", "", "", "", "", f"{self.mean:.4f}"])
            w.writerow(["std", "", "", "", "", f"{self.std:.4f}"])


def pupil_shift_report(pairs, names=None, eye_width: int = EYE_WIDTH_PX, channel: int = 0) -> PupilReport:
    """Per-pair center shift between original masks and masks re-estimated on purified images."""
    pairs = list(pairs)
    names = names or [f"img{i:03d}" for i in range(len(pairs))]
    rows = [PupilRow(n, pupil_center(a, channel), pupil_center(b, channel)) for n, (a, b) in zip(names, pairs)]
    return PupilReport(rows, eye_width)
