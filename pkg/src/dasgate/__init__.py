"""Deformable attention gates for CNNs on a from-scratch numpy autodiff core."""

from .analysis import (
    CostReport,
    RegionMask,
    SaliencyMap,
    count_macs,
    count_params,
    grad_cam,
    infer_B,
    sfd_score,
)
from .autodiff import Var, backward, finite_diff_check, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .data import DatasetSpec, gen_synthetic, load_cifar100
from .estimator import DASClassifier
from .gate import DASGate, GateConfig, Variant, bottleneck_width, das_forward, variant_forward
from .layers import ConvLayer, DeformableConvLayer, DepthwiseSeparableConv, Norm, NormKind
from .models import ModelConfig, Network, build_model, forward_logits
from .optim import SGD, TrainConfig, lr_at_epoch, sgd_update
from .training import train

__version__ = "0.1.0"
