"""Feed-forward image transformation network and its training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .attention import AttentionSubnetParams
from .autodiff import Tensor
from .losses import LossBreakdown, LossConfig, RegionLoss
from .lossnet import LossNet, read_weight_file, write_weight_file
from .optimize import AdamConfig, AdamState, adam_step

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"RSTW"


@dataclass(frozen=True)
class TransferNetSpec:
    widths: tuple[int, int, int] = (32, 64, 128)
    n_residual: int = 4
    outer_kernel: int = 9
    dropout: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


def _conv_init(rng, cout, cin, k, dtype):
    return rng.normal(0.0, np.sqrt(2.0 / (cin * k * k)), (cout, cin, k, k)).astype(dtype)


class TransferNet:
    """9x9 conv, two stride-2 3x3 convs, residual blocks, two 4x4 stride-2 deconvs, 9x9 conv, scaled tanh.

    Every convolution except the output one is followed by batch norm and ReLU.
    Residual blocks are conv -> dropout -> BN -> ReLU -> conv -> dropout -> BN,
    added to the block input. 3x3 convolutions use reflection padding of 1 so
    maps keep their size; inputs are reflection-padded to a multiple of 4 and
    the output is cropped back.
    """

    def __init__(self, spec: TransferNetSpec, params: dict[str, np.ndarray], buffers: dict[str, np.ndarray]):
        self.spec = spec
        self.params = {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}
        self.buffers = {k: np.array(v) for k, v in buffers.items()}

    @staticmethod
    def layout(spec: TransferNetSpec) -> list[tuple[str, str, int, int, int]]:
        """(name, kind, in, out, kernel) for each conv-like layer, in order."""
        w0, w1, w2 = spec.widths
        k = spec.outer_kernel
        layers = [("c1", "conv", 3, w0, k), ("c2", "conv", w0, w1, 3), ("c3", "conv", w1, w2, 3)]
        for i in range(spec.n_residual):
            layers += [(f"r{i}a", "conv", w2, w2, 3), (f"r{i}b", "conv", w2, w2, 3)]
        layers += [("d1", "deconv", w2, w1, 4), ("d2", "deconv", w1, w0, 4), ("out", "conv", w0, 3, k)]
        return layers

    @classmethod
    def init(cls, spec: TransferNetSpec | None = None, seed: int = 0, dtype=np.float32) -> "TransferNet":
        spec = spec or TransferNetSpec()
        rng = np.random.default_rng(seed)
        params, buffers = {}, {}
        for name, kind, cin, cout, k in cls.layout(spec):
            if kind == "deconv":
                params[f"{name}.w"] = _conv_init(rng, cin, cout, k, dtype)  # (in, out, k, k)
            else:
                params[f"{name}.w"] = _conv_init(rng, cout, cin, k, dtype)
            params[f"{name}.b"] = np.zeros(cout, dtype)
            if name != "out":
                params[f"{name}.gamma"] = np.ones(cout, dtype)
                params[f"{name}.beta"] = np.zeros(cout, dtype)
                buffers[f"{name}.mean"] = np.zeros(cout, dtype)
                buffers[f"{name}.var"] = np.ones(cout, dtype)
        return cls(spec, params, buffers)

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params.items()}

    def set_parameters(self, arrays: dict[str, np.ndarray]) -> None:
        self.params = {k: Tensor(arrays[k], requires_grad=True, name=k) for k in self.params}

    def astype(self, dtype) -> "TransferNet":
        return TransferNet(self.spec, {k: v.data.astype(dtype) for k, v in self.params.items()},
                           {k: v.astype(dtype) for k, v in self.buffers.items()})

    # -------------------------------------------------------------- forward

    def _bn(self, x, name, training):
        p = self.params
        x = ad.batch_norm(x, p[f"{name}.gamma"], p[f"{name}.beta"], self.buffers[f"{name}.mean"],
                          self.buffers[f"{name}.var"], training)
        return x

    def _conv(self, x, name, stride=1):
        w = self.params[f"{name}.w"]
        pad = w.shape[2] // 2
        return ad.conv2d(ad.reflect_pad(x, pad), w, self.params[f"{name}.b"], stride=stride)

    def forward(self, image, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Map a Bx3xHxW batch in [0, 255] to an output batch of the same shape in [0, 255]."""
        x = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=self.params["c1.w"].dtype))
        if x.data.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected a Bx3xHxW batch, got {x.shape}")
        _, _, h, w = x.shape
        ph, pw = (-h) % 4, (-w) % 4
        x = ad.reflect_pad(x, (ph // 2, ph - ph // 2, pw // 2, pw - pw // 2))
        x = ad.mul(ad.sub(x, 127.5), 1.0 / 127.5)
        p = self.params
        drop = self.spec.dropout

        x = ad.relu(self._bn(self._conv(x, "c1"), "c1", training))
        x = ad.relu(self._bn(self._conv(x, "c2", 2), "c2", training))
        x = ad.relu(self._bn(self._conv(x, "c3", 2), "c3", training))
        for i in range(self.spec.n_residual):
            y = ad.dropout(self._conv(x, f"r{i}a"), drop, rng, training)
            y = ad.relu(self._bn(y, f"r{i}a", training))
            y = ad.dropout(self._conv(y, f"r{i}b"), drop, rng, training)
            y = self._bn(y, f"r{i}b", training)
            x = ad.add(x, y)
        for name in ("d1", "d2"):
            x = ad.conv_transpose2d(x, p[f"{name}.w"], p[f"{name}.b"], stride=2, padding=1)
            x = ad.relu(self._bn(x, name, training))
        x = ad.scaled_tanh(self._conv(x, "out"))
        return ad.crop(x, ph // 2, pw // 2, h, w)

    __call__ = forward

    # -------------------------------------------------------------- checkpoints

    def save(self, path) -> None:
        """Write an ``RSTW`` container. Deconvolution kernels are stored as (out, in, k, k)."""
        records = {}
        for name, kind, _, cout, _ in self.layout(self.spec):
            w = self.params[f"{name}.w"].data
            if kind == "deconv":
                w = w.transpose(1, 0, 2, 3)
            records[name] = (w, self.params[f"{name}.b"].data)
            if name != "out":
                records[f"{name}.bn"] = (self.params[f"{name}.gamma"].data.reshape(-1, 1, 1, 1),
                                         self.params[f"{name}.beta"].data)
                records[f"{name}.running"] = (self.buffers[f"{name}.mean"].reshape(-1, 1, 1, 1),
                                              self.buffers[f"{name}.var"])
        write_weight_file(path, records, magic=CHECKPOINT_MAGIC)

    @classmethod
    def load(cls, path, dropout: float = 0.5) -> "TransferNet":
        _, records = read_weight_file(path, magic=CHECKPOINT_MAGIC)
        try:
            w0, w1, w2 = records["c1"][0].shape[0], records["c2"][0].shape[0], records["c3"][0].shape[0]
            k = records["c1"][0].shape[2]
        except KeyError as exc:
            raise ValueError(f"{path}: checkpoint is missing layer {exc.args[0]!r}") from None
        n_res = sum(1 for n in records if n.startswith("r") and n.endswith("a"))
        spec = TransferNetSpec((w0, w1, w2), n_res, k, dropout)
        params, buffers = {}, {}
        for name, kind, cin, cout, kk in cls.layout(spec):
            needed = [name] + ([f"{name}.bn", f"{name}.running"] if name != "out" else [])
            for rec in needed:
                if rec not in records:
                    raise ValueError(f"{path}: checkpoint is missing layer {rec!r}")
            w, b = records[name]
            params[f"{name}.w"] = w.transpose(1, 0, 2, 3).copy() if kind == "deconv" else w.copy()
            params[f"{name}.b"] = b.copy()
            if name != "out":
                params[f"{name}.gamma"] = records[f"{name}.bn"][0].reshape(-1).copy()
                params[f"{name}.beta"] = records[f"{name}.bn"][1].copy()
                buffers[f"{name}.mean"] = records[f"{name}.running"][0].reshape(-1).copy()
                buffers[f"{name}.var"] = records[f"{name}.running"][1].copy()
        return cls(spec, params, buffers)


# ---------------------------------------------------------------- training


@dataclass
class TrainRun:
    contents: list[tuple[np.ndarray, np.ndarray]]  # (image 1x3xHxW, mask 1xCxHxW)
    style: np.ndarray
    style_mask: np.ndarray
    adam: AdamConfig = field(default_factory=lambda: AdamConfig(iterations=1000))
    loss: LossConfig = field(default_factory=LossConfig)
    spec: TransferNetSpec = field(default_factory=TransferNetSpec)
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None
    seed: int = 0
    learn_attention: bool = False

    def __post_init__(self):
        if not self.contents:
            raise ValueError("training needs at least one content image")


@dataclass
class TrainResult:
    net: TransferNet
    curve: list[LossBreakdown]
    status: str  # "done" or "diverged"
    attention: AttentionSubnetParams | None = None


def batch_loss(net: TransferNet, objectives: list[RegionLoss], images: list[np.ndarray], training: bool,
               rng: np.random.Generator | None):
    """Mean region loss of the network outputs over a batch; returns (loss, mean breakdown)."""
    batch = Tensor(np.concatenate(images, axis=0).astype(net.params["c1.w"].dtype))
    out = net.forward(batch, training=training, rng=rng)
    total = None
    rows = []
    for i, obj in enumerate(objectives):
        loss, bd = obj(ad.select_batch(out, i), include_tv=True)
        rows.append(bd)
        total = loss if total is None else ad.add(total, loss)
    scale = 1.0 / len(objectives)
    return ad.mul(total, scale), _mean_breakdown(rows)


def _mean_breakdown(rows: list[LossBreakdown]) -> LossBreakdown:
    n = len(rows)
    return LossBreakdown(
        l_gc=sum(r.l_gc for r in rows) / n,
        l_lc=sum(r.l_lc for r in rows) / n,
        l_gs=sum(r.l_gs for r in rows) / n,
        l_ls=sum(r.l_ls for r in rows) / n,
        l_tv=sum(r.l_tv for r in rows) / n,
    )


def train(run: TrainRun, loss_net: LossNet, net: TransferNet | None = None) -> TrainResult:
    """Adam on the transformation network against the region objective.

    Batches are drawn with replacement from ``run.contents`` using ``run.seed``;
    the same seed replays the same loss curve. A non-finite loss stops training
    and returns the last checkpointed weights.
    """
    rng = np.random.default_rng(run.seed)
    net = net or TransferNet.init(run.spec, seed=run.seed)
    attention = AttentionSubnetParams.from_mask(run.style_mask.shape[1], run.loss.attention_channels) \
        if run.learn_attention else None
    objectives = [RegionLoss(loss_net, run.loss, img, mask, run.style, run.style_mask, attention)
                  for img, mask in run.contents]
    state = AdamState()
    curve: list[LossBreakdown] = []
    last_good = (net.parameter_arrays(), {k: v.copy() for k, v in net.buffers.items()})
    ckpt_dir = Path(run.checkpoint_dir) if run.checkpoint_dir else None
    bs = min(run.adam.batch_size, len(run.contents)) if len(run.contents) > 1 else 1
    status = "done"
    for step in range(run.adam.iterations):
        idx = rng.integers(0, len(run.contents), size=bs)
        loss, bd = batch_loss(net, [objectives[i] for i in idx], [run.contents[i][0] for i in idx], True, rng)
        if not np.isfinite(loss.item()):
            logger.warning("loss diverged at step %d; restoring last checkpoint", step)
            net = TransferNet(net.spec, *last_good)
            status = "diverged"
            break
        curve.append(bd)
        leaves = list(net.params.values()) + (attention.leaves() if attention else [])
        grads = ad.backward(loss, leaves)
        params = net.parameter_arrays()
        grad_arrays = {k: grads[t] for k, t in net.params.items()}
        if attention:
            params.update({"att.weight": attention.weight.data, "att.bias": attention.bias.data})
            grad_arrays.update({"att.weight": grads[attention.weight], "att.bias": grads[attention.bias]})
        params, state = adam_step(params, grad_arrays, state, run.adam)
        if attention:
            attention = AttentionSubnetParams(Tensor(params.pop("att.weight"), requires_grad=True),
                                              Tensor(params.pop("att.bias"), requires_grad=True))
            for obj in objectives:
                obj.attention_params = attention
        net.set_parameters(params)
        if run.checkpoint_every and (step + 1) % run.checkpoint_every == 0:
            last_good = (net.parameter_arrays(), {k: v.copy() for k, v in net.buffers.items()})
            if ckpt_dir:
                ckpt_dir.mkdir(parents=True, exist_ok=True)
                net.save(ckpt_dir / f"step{step + 1:06d}.rstw")
    return TrainResult(net, curve, status, attention)
