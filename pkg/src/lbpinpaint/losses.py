"""The five training losses and their stage totals.

Feature-space distances use the Euclidean norm of the flattened difference
(unnormalized); a size-normalized variant divides by the square root of the
element count and is available behind the ``normalized`` flag. Ground-truth
branches are always treated as constants.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import (
    ConvParams,
    DimensionError,
    Tensor,
    activation,
    batch_slice,
    clamp,
    conv2d,
    matmul,
    weighted_sum,
)

DISC_CLAMP_EPS = 1e-7

LBP_STAGE_PARTS = ("multi_level", "reconstruction", "adversarial")
INPAINT_STAGE_PARTS = LBP_STAGE_PARTS + ("perceptual", "style")


@dataclass(frozen=True)
class LossWeights:
    """Trade-off scalars; defaults follow the training recipe."""

    multi_level: float = 0.01
    reconstruction: float = 10.0
    adversarial: float = 0.2
    perceptual: float = 1.0
    style: float = 10.0

    def __post_init__(self):
        for name in INPAINT_STAGE_PARTS:
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")


def _euclidean(diff, normalized):
    total = (diff * diff).sum()
    if normalized:
        total = total * (1.0 / diff.size)
    return total ** 0.5


def reconstruction_loss(out, gt, normalized=False):
    """Euclidean norm of the flattened output/target difference."""
    if out.shape != gt.shape:
        raise DimensionError(f"reconstruction_loss: shapes {out.shape} vs {gt.shape}")
    return _euclidean(out - gt.detach(), normalized)


def multi_level_loss(feats_out, feats_gt, normalized=False):
    """Sum of per-layer Euclidean feature distances; target features are constants."""
    if len(feats_out) != len(feats_gt):
        raise DimensionError(
            f"multi_level_loss: {len(feats_out)} output layers vs {len(feats_gt)} target layers"
        )
    total = None
    for i, (fo, fg) in enumerate(zip(feats_out, feats_gt)):
        if fo.shape != fg.shape:
            raise DimensionError(
                f"multi_level_loss: layer {i} shapes {fo.shape} vs {fg.shape}"
            )
        term = _euclidean(fo - fg.detach(), normalized)
        total = term if total is None else total + term
    if total is None:
        return Tensor(np.asarray(0.0))
    return total


def adversarial_losses(d_real, d_fake):
    """Discriminator and (non-saturating) generator losses from sigmoid scores.

    d_loss = -mean(log d_real) - mean(log(1 - d_fake));
    g_loss = -mean(log d_fake). Scores are clamped away from {0, 1} before
    the logs; values outside [0, 1] are rejected.
    """
    for name, t in (("d_real", d_real), ("d_fake", d_fake)):
        lo, hi = float(t.data.min()), float(t.data.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"{name} values must lie in [0, 1], got range [{lo}, {hi}]")
    dr = clamp(d_real, DISC_CLAMP_EPS, 1.0 - DISC_CLAMP_EPS)
    df = clamp(d_fake, DISC_CLAMP_EPS, 1.0 - DISC_CLAMP_EPS)
    d_loss = -(dr.log().mean()) - ((1.0 - df).log().mean())
    g_loss = -(df.log().mean())
    return d_loss, g_loss


class FeatureExtractor:
    """Ordered feature stages with a selected comparison subset.

    Each stage is (name, fn) where fn maps the previous stage's tensor to
    the next; ``selected`` names the stages whose outputs enter the loss.
    """

    def __init__(self, stages, selected=None):
        self.stages = list(stages)
        names = [name for name, _ in self.stages]
        if len(set(names)) != len(names):
            raise ValueError("feature extractor stage names must be unique")
        self.selected = list(selected) if selected is not None else list(names)
        missing = [s for s in self.selected if s not in names]
        if missing:
            raise ValueError(f"selected stages not present in extractor: {missing}")

    def extract(self, x):
        """Run all stages, returning the selected outputs in stage order."""
        outputs = []
        current = x
        for name, fn in self.stages:
            current = fn(current)
            if name in self.selected:
                outputs.append(current)
        return outputs


def identity_extractor():
    return FeatureExtractor([("identity", lambda t: t)])


def frozen_random_extractor(in_channels=3, seed=0, channels=(16, 32, 64)):
    """Fixed-seed frozen strided-conv stack standing in for a pretrained backbone.

    Three stride-2 stages with fan-in-scaled weights; parameters never
    require gradients, so the extractor only shapes the loss surface.
    """
    rng = np.random.default_rng((0xFE, seed))
    stages = []
    cin = in_channels
    for i, cout in enumerate(channels):
        fan_in = cin * 3 * 3
        w = Tensor(rng.standard_normal((cout, cin, 3, 3)) * np.sqrt(2.0 / fan_in))
        b = Tensor(np.zeros(cout))
        p = ConvParams(cout, 3, 2, 1)

        def stage(x, w=w, b=b, p=p):
            return activation(conv2d(x, w, b, p), "relu")

        stages.append((f"stage{i + 1}", stage))
        cin = cout
    return FeatureExtractor(stages)


def perceptual_loss(out, gt, fx, normalized=False):
    """Sum of feature-space Euclidean distances over the extractor's selected stages."""
    if out.shape != gt.shape:
        raise DimensionError(f"perceptual_loss: shapes {out.shape} vs {gt.shape}")
    feats_out = fx.extract(out)
    feats_gt = fx.extract(gt.detach())
    return multi_level_loss(feats_out, feats_gt, normalized)


def _gram(sample):
    """Channel covariance G = F F^T / (C*H*W) for one (1, C, H, W) sample."""
    _, c, h, w = sample.shape
    flat = sample.reshape(c, h * w)
    return matmul(flat, flat.transpose()) * (1.0 / (c * h * w))


def style_loss(out, gt, fx, normalized=False):
    """Sum of Gram-matrix distances over the selected stages (and batch samples)."""
    if out.shape != gt.shape:
        raise DimensionError(f"style_loss: shapes {out.shape} vs {gt.shape}")
    feats_out = fx.extract(out)
    feats_gt = fx.extract(gt.detach())
    total = None
    for fo, fg in zip(feats_out, feats_gt):
        for bi in range(fo.shape[0]):
            diff = _gram(batch_slice(fo, bi)) - _gram(batch_slice(fg, bi)).detach()
            term = _euclidean(diff, normalized)
            total = term if total is None else total + term
    if total is None:
        return Tensor(np.asarray(0.0))
    return total


def weighted_total(parts, weights, stage):
    """Stage loss: the weighted combination of named scalar parts.

    ``stage`` selects the contract: "lbp_stage" requires multi_level,
    reconstruction and adversarial parts; "inpaint_stage" adds perceptual
    and style. The combination is computed with correctly-rounded summation.
    """
    if stage == "lbp_stage":
        required = LBP_STAGE_PARTS
    elif stage == "inpaint_stage":
        required = INPAINT_STAGE_PARTS
    else:
        raise ValueError(f"unknown stage {stage!r}")
    missing = [name for name in required if name not in parts]
    if missing:
        raise ValueError(f"{stage} is missing loss parts: {missing}")
    unknown = [name for name in parts if name not in required]
    if unknown:
        raise ValueError(f"{stage} got unexpected loss parts: {unknown}")
    return weighted_sum([(getattr(weights, name), parts[name]) for name in required])
