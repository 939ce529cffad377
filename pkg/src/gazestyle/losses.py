"""Region-level content and style losses, the baseline objective, and total variation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import AttentionPair, AttentionSubnetParams, pairs_from_mask, pairs_from_subnet
from .autodiff import Tensor
from .lossnet import FeatureBundle, LossNet, TapSet

CURVE_COLUMNS = ("iter", "l_gc", "l_lc", "l_gs", "l_ls", "l_tv", "total")


@dataclass
class LossConfig:
    """Scalar weights of the objective.

    ``alpha`` / ``beta`` apply to every tapped layer unless overridden in
    ``layer_alpha`` / ``layer_beta``.
    """

    alpha: float = 1e2
    beta: float = 1e4
    lambda_g: float = 1.0
    lambda_l: float = 1.0
    theta: float = 1e-6
    layer_alpha: dict[str, float] = field(default_factory=dict)
    layer_beta: dict[str, float] = field(default_factory=dict)
    taps: TapSet = field(default_factory=TapSet)
    attention_channels: tuple[int, ...] = (0,)

    def __post_init__(self):
        weights = [self.alpha, self.beta, self.lambda_g, self.lambda_l, self.theta]
        weights += list(self.layer_alpha.values()) + list(self.layer_beta.values())
        if any(not np.isfinite(w) or w < 0 for w in weights):
            raise ValueError(f"loss weights must be finite and non-negative: {weights}")
        self.attention_channels = tuple(self.attention_channels)

    def alpha_for(self, layer: str) -> float:
        return self.layer_alpha.get(layer, self.alpha)

    def beta_for(self, layer: str) -> float:
        return self.layer_beta.get(layer, self.beta)


@dataclass
class LossBreakdown:
    """Weighted contributions to the objective; they add up to ``total``.

    ``per_layer`` holds the raw (unweighted) term values, e.g.
    ``per_layer["l_gs"]["conv2_2"]``.
    """

    l_gc: float = 0.0
    l_lc: float = 0.0
    l_gs: float = 0.0
    l_ls: float = 0.0
    l_tv: float = 0.0
    per_layer: dict[str, dict[str, float]] = field(default_factory=dict)

    @property
    def l_feat(self) -> float:
        return self.l_gc + self.l_lc

    @property
    def l_style(self) -> float:
        return self.l_gs + self.l_ls

    @property
    def total(self) -> float:
        return self.l_feat + self.l_style + self.l_tv

    def row(self, iteration: int) -> list:
        return [iteration, self.l_gc, self.l_lc, self.l_gs, self.l_ls, self.l_tv, self.total]


# ---------------------------------------------------------------- term functions


def _check_same(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def _nm(f: Tensor) -> tuple[int, int]:
    _, n, h, w = f.shape
    return n, h * w


def content_loss_global(f_out: Tensor, f_in: Tensor, mask_channels: int = 1) -> Tensor:
    """sum_c 1/(2 N M) ||F[O] - F[I]||^2, the sum over c running over the mask channels."""
    _check_same(f_out, f_in, "content_loss_global")
    n, m = _nm(f_out)
    return ad.mul(ad.sum_all(ad.square(ad.sub(f_out, f_in))), mask_channels / (2.0 * n * m))


def content_loss_local(f_out: Tensor, f_in: Tensor, attention_in: Tensor, mask_channels: int = 1) -> Tensor:
    """Like the global content loss, on features weighted by the input image's attention map."""
    _check_same(f_out, f_in, "content_loss_local")
    n, m = _nm(f_out)
    diff = ad.sub(ad.mul(f_out, attention_in), ad.mul(f_in, attention_in))
    return ad.mul(ad.sum_all(ad.square(diff)), mask_channels / (2.0 * n * m))


def masked_gram(f_full: Tensor, region: Tensor) -> Tensor:
    """Gram matrix of the region-weighted features (weighting happens before the product)."""
    return ad.gram(ad.mul(f_full, region))


def _gram_gap(g_out: Tensor, g_ref: Tensor, n: int, m: int, mask_channels: int) -> Tensor:
    _check_same(g_out, g_ref, "style loss")
    return ad.mul(ad.sum_all(ad.square(ad.sub(g_out, g_ref))), mask_channels / (4.0 * n * n * m * m))


def style_loss_global(g_bkgd_out: Tensor, g_bkgd_style: Tensor, n: int, m: int, mask_channels: int = 1) -> Tensor:
    """Background-region style term: sum_c 1/(4 N^2 M^2) ||G_bkgd[O] - G_bkgd[S]||_F^2."""
    return _gram_gap(g_bkgd_out, g_bkgd_style, n, m, mask_channels)


def style_loss_local(g_att_out: Tensor, g_att_style: Tensor, n: int, m: int, mask_channels: int = 1) -> Tensor:
    """Attention-region style term, same form as the background one."""
    return _gram_gap(g_att_out, g_att_style, n, m, mask_channels)


def tv_loss(image: Tensor) -> Tensor:
    """Squared anisotropic total variation, summed over channels."""
    _, _, h, w = image.shape
    terms = []
    if h > 1:
        terms.append(ad.sum_all(ad.square(ad.sub(ad.crop(image, 1, 0, h - 1, w), ad.crop(image, 0, 0, h - 1, w)))))
    if w > 1:
        terms.append(ad.sum_all(ad.square(ad.sub(ad.crop(image, 0, 1, h, w - 1), ad.crop(image, 0, 0, h, w - 1)))))
    if not terms:
        return Tensor(np.zeros((1, 1, 1, 1), image.dtype))
    return terms[0] if len(terms) == 1 else ad.add(terms[0], terms[1])


def feature_loss(f_out: FeatureBundle, f_in: FeatureBundle, pairs_in: dict[str, AttentionPair], cfg: LossConfig,
                 mask_channels: int = 1) -> Tensor:
    """lambda_g * l_gc at the global content tap + lambda_l * l_lc at the local content tap."""
    gtap, ltap = cfg.taps.global_content, cfg.taps.local_content
    gc = content_loss_global(f_out[gtap], f_in[gtap], mask_channels)
    lc = content_loss_local(f_out[ltap], f_in[ltap], pairs_in[ltap].att_pos, mask_channels)
    return ad.add(ad.mul(gc, cfg.lambda_g), ad.mul(lc, cfg.lambda_l))


def style_loss(f_out: FeatureBundle, pairs_out: dict[str, AttentionPair], f_style: FeatureBundle,
               pairs_style: dict[str, AttentionPair], cfg: LossConfig, mask_channels: int = 1) -> Tensor:
    """lambda_g * sum of background terms over the global style taps + lambda_l * attention terms over the local ones."""
    total = None
    for layers, weight, which in ((cfg.taps.global_style, cfg.lambda_g, "att_neg"),
                                  (cfg.taps.local_style, cfg.lambda_l, "att_pos")):
        for layer in layers:
            n, m = _nm(f_out[layer])
            g_o = masked_gram(f_out[layer], getattr(pairs_out[layer], which))
            g_s = masked_gram(f_style[layer], getattr(pairs_style[layer], which))
            term = ad.mul(_gram_gap(g_o, g_s, n, m, mask_channels), weight)
            total = term if total is None else ad.add(total, term)
    return total


# ---------------------------------------------------------------- objectives


class RegionLoss:
    """Region-level objective for a fixed (content, style) pair, differentiable in the output image.

    Target features of the content and style images are computed once. With
    ``attention_params`` the attention pairs come from the learned subnet and
    gradients reach its parameters; otherwise they are read off the masks.
    """

    def __init__(self, net: LossNet, cfg: LossConfig, content, content_mask, style, style_mask,
                 attention_params: AttentionSubnetParams | None = None):
        cfg.taps.validate(net.spec)
        self.net, self.cfg = net, cfg
        dtype = net.weights[net.spec.conv_layers()[0][0]][0].dtype
        self.content = _as_image(content, dtype)
        self.style = _as_image(style, dtype)
        self.content_mask = np.asarray(getattr(content_mask, "data", content_mask), dtype)
        self.style_mask = np.asarray(getattr(style_mask, "data", style_mask), dtype)
        if self.content_mask.shape[1] != self.style_mask.shape[1]:
            raise ValueError(f"content and style masks have different channel counts: "
                             f"{self.content_mask.shape} vs {self.style_mask.shape}")
        self.mask_channels = self.content_mask.shape[1]
        self.layers = cfg.taps.all_layers()
        self.attention_params = attention_params
        self.f_content = net.extract_features(self.content, self.layers)
        self.f_style = net.extract_features(self.style, self.layers)
        if attention_params is None:
            ch = cfg.attention_channels
            self._pairs_content = pairs_from_mask(self.content_mask, self.layers, net, ch)
            self._pairs_style = pairs_from_mask(self.style_mask, self.layers, net, ch)

    def pairs(self):
        if self.attention_params is None:
            return self._pairs_content, self._pairs_style
        p = self.attention_params
        return (pairs_from_subnet(self.content, self.content_mask, self.layers, self.net, p),
                pairs_from_subnet(self.style, self.style_mask, self.layers, self.net, p))

    def __call__(self, output, include_tv: bool = True) -> tuple[Tensor, LossBreakdown]:
        out = output if isinstance(output, Tensor) else _as_image(output, self.content.dtype)
        f_out = self.net.extract_features(out, self.layers)
        pairs_in, pairs_style = self.pairs()
        return _assemble(self.cfg, self.mask_channels, out, f_out, self.f_content, pairs_in,
                         self.f_style, pairs_style, include_tv)


def _assemble(cfg, mask_channels, out, f_out, f_in, pairs_in, f_style, pairs_style, include_tv):
    """Sum every weighted term into one scalar tensor and record the breakdown."""
    taps = cfg.taps
    bd = LossBreakdown(per_layer={"l_gc": {}, "l_lc": {}, "l_gs": {}, "l_ls": {}})
    parts: list[Tensor] = []

    def push(key: str, layer: str, raw: Tensor, weight: float) -> None:
        bd.per_layer[key][layer] = raw.item()
        weighted = ad.mul(raw, weight)
        setattr(bd, key, getattr(bd, key) + weighted.item())
        parts.append(weighted)

    g = taps.global_content
    push("l_gc", g, content_loss_global(f_out[g], f_in[g], mask_channels), cfg.alpha_for(g) * cfg.lambda_g)
    lt = taps.local_content
    push("l_lc", lt, content_loss_local(f_out[lt], f_in[lt], pairs_in[lt].att_pos, mask_channels),
         cfg.alpha_for(lt) * cfg.lambda_l)
    # output-image Grams are masked with the input image's region maps
    for key, layers, which, lam in (("l_gs", taps.global_style, "att_neg", cfg.lambda_g),
                                    ("l_ls", taps.local_style, "att_pos", cfg.lambda_l)):
        for layer in layers:
            n, m = _nm(f_out[layer])
            g_o = masked_gram(f_out[layer], getattr(pairs_in[layer], which))
            g_s = masked_gram(f_style[layer], getattr(pairs_style[layer], which))
            push(key, layer, _gram_gap(g_o, g_s, n, m, mask_channels), cfg.beta_for(layer) * lam)
    if include_tv:
        tv = ad.mul(tv_loss(out), cfg.theta)
        bd.l_tv = tv.item()
        parts.append(tv)
    total = parts[0]
    for p in parts[1:]:
        total = ad.add(total, p)
    return total, bd


def baseline_terms(net: LossNet, cfg: LossConfig, content, style, output: Tensor, include_tv: bool = True,
                   f_content: FeatureBundle | None = None, f_style: FeatureBundle | None = None):
    """Unmasked objective: content at both content taps, plain Gram style at the local style taps.

    Uses the same per-layer normalisation as the region terms, so with an
    all-ones attention region and lambda_g == lambda_l == 1 both objectives agree.
    Returns (loss tensor, breakdown) with content in l_gc / l_lc and style in l_ls.
    """
    taps = cfg.taps
    layers = taps.all_layers()
    f_in = f_content or net.extract_features(_as_image(content, output.dtype), layers)
    f_s = f_style or net.extract_features(_as_image(style, output.dtype), layers)
    f_out = net.extract_features(output, layers)
    bd = LossBreakdown(per_layer={"l_gc": {}, "l_lc": {}, "l_gs": {}, "l_ls": {}})
    parts = []
    for key, layer in (("l_gc", taps.global_content), ("l_lc", taps.local_content)):
        raw = content_loss_global(f_out[layer], f_in[layer])
        w = ad.mul(raw, cfg.alpha_for(layer))
        bd.per_layer[key][layer] = raw.item()
        setattr(bd, key, getattr(bd, key) + w.item())
        parts.append(w)
    for layer in taps.local_style:
        n, m = _nm(f_out[layer])
        raw = _gram_gap(ad.gram(f_out[layer]), ad.gram(f_s[layer]), n, m, 1)
        w = ad.mul(raw, cfg.beta_for(layer))
        bd.per_layer["l_ls"][layer] = raw.item()
        bd.l_ls += w.item()
        parts.append(w)
    if include_tv:
        tv = ad.mul(tv_loss(output), cfg.theta)
        bd.l_tv = tv.item()
        parts.append(tv)
    total = parts[0]
    for p in parts[1:]:
        total = ad.add(total, p)
    return total, bd


class BaselineLoss:
    """Differentiable baseline objective with cached target features."""

    def __init__(self, net: LossNet, cfg: LossConfig, content, style):
        cfg.taps.validate(net.spec)
        dtype = net.weights[net.spec.conv_layers()[0][0]][0].dtype
        self.net, self.cfg = net, cfg
        self.content = _as_image(content, dtype)
        self.style = _as_image(style, dtype)
        layers = cfg.taps.all_layers()
        self.f_content = net.extract_features(self.content, layers)
        self.f_style = net.extract_features(self.style, layers)

    def __call__(self, output, include_tv: bool = True):
        out = output if isinstance(output, Tensor) else _as_image(output, self.content.dtype)
        return baseline_terms(self.net, self.cfg, self.content, self.style, out, include_tv,
                              self.f_content, self.f_style)


def total_loss(net: LossNet, content, style, output, content_mask, style_mask, cfg: LossConfig,
               include_tv: bool = False) -> LossBreakdown:
    """Evaluate the region objective once and return its breakdown."""
    _, bd = RegionLoss(net, cfg, content, content_mask, style, style_mask)(output, include_tv)
    return bd


def baseline_total_loss(net: LossNet, content, style, output, cfg: LossConfig, include_tv: bool = False) -> float:
    out = _as_image(output, net.weights[net.spec.conv_layers()[0][0]][0].dtype)
    loss, _ = baseline_terms(net, cfg, content, style, out, include_tv)
    return loss.item()


def _as_image(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x if x.dtype == dtype else Tensor(x.data.astype(dtype))
    return Tensor(np.asarray(x, dtype=dtype))
