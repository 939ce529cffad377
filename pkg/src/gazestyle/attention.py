"""Contrastive attention maps and the full / attention / background feature streams."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .lossnet import FeatureBundle, LossNet


@dataclass
class AttentionSubnetParams:
    """1x1 convolution over concatenated (image, mask) channels plus a scalar bias."""

    weight: Tensor  # (1, 3 + C, 1, 1)
    bias: Tensor  # (1,)

    @classmethod
    def zeros(cls, mask_channels: int = 2, dtype=np.float32) -> "AttentionSubnetParams":
        return cls(
            Tensor(np.zeros((1, 3 + mask_channels, 1, 1), dtype), requires_grad=True, name="att.weight"),
            Tensor(np.zeros(1, dtype), requires_grad=True, name="att.bias"),
        )

    @classmethod
    def from_mask(cls, mask_channels: int = 2, channels=(0,), gain: float = 20.0, dtype=np.float32):
        """Parameters that reproduce the mask's attention channels through a saturated sigmoid."""
        w = np.zeros((1, 3 + mask_channels, 1, 1), dtype)
        for c in channels:
            w[0, 3 + c] = gain
        return cls(
            Tensor(w, requires_grad=True, name="att.weight"),
            Tensor(np.array([-gain / 2], dtype), requires_grad=True, name="att.bias"),
        )

    def leaves(self) -> list[Tensor]:
        return [self.weight, self.bias]


@dataclass
class AttentionPair:
    att_pos: Tensor
    att_neg: Tensor


@dataclass
class RegionStreams:
    f_full: FeatureBundle
    f_attention: FeatureBundle
    f_background: FeatureBundle


def _complement(att_pos: Tensor) -> AttentionPair:
    return AttentionPair(att_pos, ad.sub(1.0, att_pos))


def attention_maps(f_full: Tensor, f_mask: Tensor, params: AttentionSubnetParams) -> AttentionPair:
    """att+ = sigmoid(1x1conv(concat(f_full, f_mask)) + b); att- = 1 - att+."""
    if f_full.shape[2:] != f_mask.shape[2:]:
        raise ValueError(f"attention_maps: spatial mismatch {f_full.shape} vs {f_mask.shape}")
    x = ad.concat([f_full, f_mask], axis=1)
    return _complement(ad.sigmoid(ad.conv2d(x, params.weight, params.bias)))


def attention_region(mask, channels=(0,)) -> Tensor:
    """Sum of the mask channels that make up the attention region, as a 1x1xHxW map."""
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    return Tensor(m[:, list(channels)].sum(axis=1, keepdims=True))


def mask_to_attention(mask, layer: str, net: LossNet, channels=(0,)) -> AttentionPair:
    """Attention pair at ``layer``'s resolution taken directly from the segmentation mask."""
    return _complement(net.downsample_mask(attention_region(mask, channels), layer))


def pairs_from_mask(mask, layers, net: LossNet, channels=(0,)) -> dict[str, AttentionPair]:
    region = attention_region(mask, channels)
    return {layer: _complement(net.downsample_mask(region, layer)) for layer in layers}


def pairs_from_subnet(image: Tensor, mask, layers, net: LossNet, params: AttentionSubnetParams):
    """Learned attention at input resolution, then average-pooled to each layer."""
    mask_t = mask if isinstance(mask, Tensor) else Tensor(mask)
    f_full = ad.mul(image, 1.0 / 255.0)
    att = attention_maps(f_full, ad.Tensor(mask_t.data.astype(image.dtype)), params).att_pos
    return {layer: _complement(net.downsample_mask(att, layer)) for layer in layers}


def build_streams(bundle_full: FeatureBundle, pairs: dict[str, AttentionPair]) -> RegionStreams:
    """Spatially weight every tapped layer by att+ and att- (broadcast over channels)."""
    att, bkgd = FeatureBundle(), FeatureBundle()
    for layer in bundle_full.layers():
        if layer not in pairs:
            raise KeyError(f"no attention pair for layer {layer!r}")
        f = bundle_full[layer]
        pair = pairs[layer]
        if pair.att_pos.shape[2:] != f.shape[2:]:
            raise ValueError(f"layer {layer!r}: attention {pair.att_pos.shape} does not match features {f.shape}")
        att.features[layer] = ad.mul(f, pair.att_pos)
        bkgd.features[layer] = ad.mul(f, pair.att_neg)
    return RegionStreams(bundle_full, att, bkgd)
