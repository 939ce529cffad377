"""JSON job configuration with strict key checking."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .losses import LossConfig
from .lossnet import TapSet
from .optimize import AdamConfig, LbfgsConfig
from .transfer import TransferNetSpec


class ConfigError(ValueError):
    pass


@dataclass
class LossNetConfig:
    weights: str | None = None  # None -> seeded random VGG-16
    width: float = 1.0
    seed: int = 0


@dataclass
class ContentItem:
    image: str
    mask: str


@dataclass
class JobConfig:
    content: str | None = None
    content_mask: str | None = None
    style: str | None = None
    style_mask: str | None = None
    contents: list[ContentItem] = field(default_factory=list)
    output: str = "out"
    checkpoint: str | None = None
    checkpoint_every: int = 0
    mask_channels: int = 2
    seed: int = 0
    learn_attention: bool = False
    loss_net: LossNetConfig = field(default_factory=LossNetConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    solver: LbfgsConfig = field(default_factory=LbfgsConfig)
    adam: AdamConfig = field(default_factory=AdamConfig)
    transfer: TransferNetSpec = field(default_factory=TransferNetSpec)
    base_dir: str = field(default=".", repr=False, compare=False)

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def content_items(self) -> list[ContentItem]:
        items = list(self.contents)
        if not items and self.content:
            items = [ContentItem(self.content, self.content_mask)]
        return items


def _check_keys(doc: dict, cls, where: str, skip=()) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object, got {type(doc).__name__}")
    allowed = {f.name for f in fields(cls)} - set(skip)
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def _build(cls, doc: dict, where: str, convert=None):
    _check_keys(doc, cls, where)
    kwargs = dict(doc)
    for key, fn in (convert or {}).items():
        if key in kwargs:
            kwargs[key] = fn(kwargs[key])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(doc: dict[str, Any], base_dir: str | Path = ".") -> JobConfig:
    _check_keys(doc, JobConfig, "config", skip=("base_dir",))
    kw = dict(doc)
    if "loss_net" in kw:
        kw["loss_net"] = _build(LossNetConfig, kw["loss_net"], "loss_net")
    if "loss" in kw:
        _check_keys(kw["loss"], LossConfig, "loss")
        loss = dict(kw["loss"])
        if "taps" in loss:
            loss["taps"] = _build(TapSet, loss["taps"], "loss.taps",
                                  {"local_style": tuple, "global_style": tuple})
        kw["loss"] = _build(LossConfig, loss, "loss", {"attention_channels": tuple})
    if "solver" in kw:
        kw["solver"] = _build(LbfgsConfig, kw["solver"], "solver")
    if "adam" in kw:
        kw["adam"] = _build(AdamConfig, kw["adam"], "adam")
    if "transfer" in kw:
        kw["transfer"] = _build(TransferNetSpec, kw["transfer"], "transfer", {"widths": tuple})
    if "contents" in kw:
        kw["contents"] = [_build(ContentItem, item, f"contents[{i}]") for i, item in enumerate(kw["contents"])]
    try:
        cfg = JobConfig(**kw, base_dir=str(base_dir))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.mask_channels < 1:
        raise ConfigError("mask_channels must be >= 1")
    if any(c >= cfg.mask_channels or c < 0 for c in cfg.loss.attention_channels):
        raise ConfigError(f"attention_channels {cfg.loss.attention_channels} outside [0, {cfg.mask_channels})")
    return cfg


def load_config(path) -> JobConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(doc, base_dir=path.parent)


def config_to_dict(cfg: JobConfig) -> dict[str, Any]:
    d = asdict(cfg)
    d.pop("base_dir")

    def listify(x):
        if isinstance(x, dict):
            return {k: listify(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [listify(v) for v in x]
        return x

    return listify(d)


def dump_config(cfg: JobConfig) -> str:
    """Canonical JSON: sorted keys, every field present."""
    return json.dumps(config_to_dict(cfg), sort_keys=True, indent=2)
