"""Attention-guided, region-masked style transfer for purifying real eye images."""

from .attention import AttentionPair, AttentionSubnetParams, attention_maps, build_streams, mask_to_attention
from .autodiff import Tensor, backward, finite_diff_gradient
from .losses import LossBreakdown, LossConfig, RegionLoss, baseline_total_loss, total_loss
from .lossnet import LossNet, TapSet, load_weights, vgg16_spec
from .optimize import AdamConfig, LbfgsConfig, StylizeJob, lbfgs_projected, stylize_by_optimization
from .transfer import TrainRun, TransferNet, TransferNetSpec, train

__version__ = "0.1.0"
