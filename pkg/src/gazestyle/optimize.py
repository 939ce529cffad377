"""Projected L-BFGS over images and Adam for network parameters."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import autodiff as ad
from .attention import AttentionSubnetParams
from .autodiff import Tensor
from .losses import BaselineLoss, LossBreakdown, LossConfig, RegionLoss
from .lossnet import LossNet

logger = logging.getLogger(__name__)


@dataclass
class LbfgsConfig:
    max_iters: int = 500
    history_size: int = 10
    lower: float = 0.0
    upper: float = 255.0
    c1: float = 1e-4
    tol: float = 1e-6  # relative loss change
    gtol: float = 1e-9  # sup-norm of the projected gradient
    max_backtracks: int = 30
    first_step: float = 1.0  # largest pixel move of the very first (steepest-descent) step

    def __post_init__(self):
        if self.max_iters <= 0:
            raise ValueError("max_iters must be positive")
        if self.history_size < 1:
            raise ValueError("history_size must be >= 1")
        if self.lower >= self.upper:
            raise ValueError("empty box")


@dataclass
class IterRecord:
    iteration: int
    loss: float
    step: float
    aux: Any = None


@dataclass
class OptimizeResult:
    x: np.ndarray
    trace: list[IterRecord]
    status: str  # "max_iters", "converged", "line_search_failed", "non_finite"

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.trace]


def _eval(objective, x):
    out = objective(x)
    f, g = out[0], out[1]
    aux = out[2] if len(out) > 2 else None
    return float(f), np.asarray(g, dtype=np.float64), aux


def lbfgs_projected(objective: Callable, x0, cfg: LbfgsConfig | None = None) -> OptimizeResult:
    """Minimise ``objective`` over the box [lower, upper]^n.

    ``objective(x)`` returns ``(f, grad)`` or ``(f, grad, aux)``; ``aux`` is kept
    in the trace. Directions come from the two-loop recursion, coordinates pinned
    at a bound are frozen, the trial point is projected back into the box, and
    Armijo backtracking makes the recorded losses non-increasing.
    Trace entry 0 is the (projected) starting point.
    """
    cfg = cfg or LbfgsConfig()
    shape = np.shape(x0)
    lo, hi = cfg.lower, cfg.upper
    x = np.clip(np.asarray(x0, dtype=np.float64).reshape(-1), lo, hi)
    f, g, aux = _eval(objective, x.reshape(shape))
    g = g.reshape(-1)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise FloatingPointError("objective is not finite at the starting point")
    trace = [IterRecord(0, f, 0.0, aux)]
    s_hist: deque[np.ndarray] = deque(maxlen=cfg.history_size)
    y_hist: deque[np.ndarray] = deque(maxlen=cfg.history_size)
    status = "max_iters"

    for it in range(1, cfg.max_iters + 1):
        free = ~(((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0)))
        gf = np.where(free, g, 0.0)
        if np.max(np.abs(gf), initial=0.0) <= cfg.gtol:
            status = "converged"
            break
        d = -_two_loop(gf, s_hist, y_hist)
        d[~free] = 0.0
        slope = float(g @ d)
        if slope >= 0 or not s_hist:
            d = -gf
            if not s_hist:
                d *= cfg.first_step / np.max(np.abs(gf))
            slope = float(g @ d)

        t = 1.0
        accepted = False
        for _ in range(cfg.max_backtracks):
            x_new = np.clip(x + t * d, lo, hi)
            step = x_new - x
            f_new, g_new, aux_new = _eval(objective, x_new.reshape(shape))
            g_new = g_new.reshape(-1)
            if not (np.isfinite(f_new) and np.all(np.isfinite(g_new))):
                t *= 0.5
                continue
            # min(., 0) keeps the accepted sequence monotone even if projection bends the step uphill
            if f_new <= f + cfg.c1 * min(float(g @ step), 0.0):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            status = "non_finite" if not np.isfinite(f_new) else "line_search_failed"
            break

        y = g_new - g
        sy = float(step @ y)
        if sy > 1e-10 * float(y @ y):
            s_hist.append(step)
            y_hist.append(y)
        rel = abs(f - f_new) / max(abs(f), abs(f_new), 1e-30)
        x, f, g = x_new, f_new, g_new
        trace.append(IterRecord(it, f, t, aux_new))
        if rel < cfg.tol or rel == 0.0:
            status = "converged"
            break
    return OptimizeResult(x.reshape(shape), trace, status)


def _two_loop(g: np.ndarray, s_hist, y_hist) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / float(y @ s)
        a = rho * float(s @ q)
        q -= a * y
        alphas.append((rho, a))
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


# ---------------------------------------------------------------- Adam


@dataclass
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    iterations: int = 50000

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass
class AdamState:
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, cfg: AdamConfig):
    """One bias-corrected Adam update. Returns new (params, state); inputs are left untouched."""
    t = state.t + 1
    new_params, m_new, v_new = {}, {}, {}
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        m = cfg.beta1 * state.m.get(name, np.zeros_like(p)) + (1 - cfg.beta1) * g
        v = cfg.beta2 * state.v.get(name, np.zeros_like(p)) + (1 - cfg.beta2) * g * g
        new_params[name] = (p - cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(p.dtype)
        m_new[name], v_new[name] = m, v
    return new_params, AdamState(t, m_new, v_new)


# ---------------------------------------------------------------- image optimisation


@dataclass
class StylizeJob:
    content: np.ndarray  # 1x3xHxW in [0, 255]
    content_mask: np.ndarray  # 1xCxHxW
    style: np.ndarray
    style_mask: np.ndarray
    loss: LossConfig = field(default_factory=LossConfig)
    solver: LbfgsConfig = field(default_factory=LbfgsConfig)
    seed: int = 0
    objective: str = "region"  # or "baseline"
    attention: AttentionSubnetParams | None = None

    def __post_init__(self):
        shapes = {np.shape(self.content)[2:], np.shape(self.style)[2:],
                  np.shape(self.content_mask)[2:], np.shape(self.style_mask)[2:]}
        if len(shapes) != 1:
            raise ValueError(f"content, style and masks must share spatial size, got {shapes}")
        if self.objective not in ("region", "baseline"):
            raise ValueError(f"unknown objective {self.objective!r}")


def white_noise(shape, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).uniform(0.0, 255.0, size=shape).astype(np.float32)


def image_objective(loss_fn, dtype=np.float32):
    """Wrap a (Tensor -> (loss, breakdown)) callable as an L-BFGS objective on flat pixels."""

    def objective(x):
        img = Tensor(np.asarray(x, dtype=dtype), requires_grad=True)
        loss, bd = loss_fn(img)
        grads = ad.backward(loss, [img])
        return loss.item(), grads[img].astype(np.float64), bd

    return objective


def stylize_by_optimization(job: StylizeJob, net: LossNet) -> tuple[np.ndarray, list[LossBreakdown], OptimizeResult]:
    """Solve argmin_O L_total(O) + theta * TV(O) from seeded white noise with projected L-BFGS.

    Returns the output image, the per-iteration breakdown trace, and the raw solver result.
    """
    if job.objective == "region":
        loss_fn = RegionLoss(net, job.loss, job.content, job.content_mask, job.style, job.style_mask, job.attention)
    else:
        loss_fn = BaselineLoss(net, job.loss, job.content, job.style)
    x0 = white_noise(np.shape(job.content), job.seed)
    result = lbfgs_projected(image_objective(loss_fn), x0, job.solver)
    logger.info("stylize: %d iterations, loss %.4g -> %.4g (%s)", len(result.trace) - 1,
                result.trace[0].loss, result.trace[-1].loss, result.status)
    curve = [r.aux for r in result.trace]
    return result.x.astype(np.float32), curve, result
