"""PNG images and label masks <-> 1xCxHxW arrays."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

_EIGHT_BIT = {"RGB", "RGBA", "L", "P", "LA"}


class ImageFormatError(ValueError):
    pass


def _open(path) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
    except (OSError, SyntaxError) as exc:
        raise ImageFormatError(f"{path}: cannot read image ({exc})") from None
    return img


def load_image(path) -> np.ndarray:
    """8-bit PNG -> float32 array of shape 1x3xHxW with values in [0, 255]."""
    img = _open(path)
    if img.mode not in _EIGHT_BIT:
        raise ImageFormatError(f"{path}: expected an 8-bit image, got mode {img.mode!r}")
    arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    return arr.transpose(2, 0, 1)[None].copy()


def save_image(image, path) -> None:
    """Write a 1x3xHxW (or 3xHxW) array as an 8-bit RGB PNG, rounding and clipping to [0, 255]."""
    arr = np.asarray(getattr(image, "data", image))
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise ValueError(f"save_image takes a single image, got batch of {arr.shape[0]}")
        arr = arr[0]
    if arr.shape[0] != 3:
        raise ValueError(f"expected 3 channels, got shape {arr.shape}")
    out = np.clip(np.rint(arr), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(out, "RGB").save(path)


def labels_to_mask(labels: np.ndarray, channels: int) -> np.ndarray:
    """HxW integer labels -> one-hot float32 mask 1xCxHxW."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= channels):
        bad = int(labels.max() if labels.max() >= channels else labels.min())
        raise ValueError(f"mask label {bad} outside [0, {channels})")
    onehot = (labels[None] == np.arange(channels)[:, None, None]).astype(np.float32)
    return onehot[None]


def load_mask(path, channels: int = 2) -> np.ndarray:
    """Grayscale or palette PNG whose pixel value i marks channel i."""
    img = _open(path)
    if img.mode not in ("L", "P"):
        raise ImageFormatError(f"{path}: mask must be a grayscale or indexed PNG, got mode {img.mode!r}")
    return labels_to_mask(np.asarray(img), channels)


def save_mask(labels, path) -> None:
    arr = np.asarray(labels)
    if arr.ndim == 4:
        arr = arr[0].argmax(axis=0)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr.astype(np.uint8), "L").save(path)
