"""Finite-difference gradient verification across every differentiable piece.

Each entry compares analytic gradients against central differences at fixed
random, tie-free points (activations are kept away from their kinks, the
attention input away from top-T selection ties). The end-to-end entry
differentiates every parameter of a tiny inpainting generator through the
complete stage-2 loss stack at 16x16.
"""

import numpy as np

from .attention import AttentionConfig, attend
from .losses import (
    LossWeights,
    adversarial_losses,
    frozen_random_extractor,
    multi_level_loss,
    perceptual_loss,
    reconstruction_loss,
    style_loss,
    weighted_total,
)
from .masking import Mask
from .networks import ModelState, build_discriminator, build_generator, forward
from .tensor import (
    ConvParams,
    Tensor,
    activation,
    conv2d,
    grad_check,
    instance_norm,
    transposed_conv2d,
)

GRAD_TOLERANCE = 1e-4
FD_STEP = 1e-5


def _away_from_kinks(rng, shape, margin=0.05):
    """Values whose magnitude exceeds the FD step by a wide margin."""
    signs = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return signs * rng.uniform(margin, 1.0, shape)


def _hole_mask(h, w, top, left, side):
    bits = np.ones((h, w), dtype=np.uint8)
    bits[top : top + side, left : left + side] = 0
    return Mask(bits)


def end_to_end_case(seed=2024):
    """Max FD error over every generator parameter of the full stage-2 loss.

    A depth-3, heavily width-scaled inpainting generator runs at 16x16 with
    attention active; the loss combines all five terms. The adversarial term
    uses a depth-4 score network because the standard 5-layer one cannot
    ingest 16 pixels.
    """
    rng = np.random.default_rng(seed)
    spec, state = build_generator("inpaint", width_scale=1 / 64, depth=3, seed=seed)
    d_spec, d_state = build_discriminator(1 / 8, in_channels=3, seed=seed + 1, depth=4)
    d_state.set_requires_grad(False)
    fx = frozen_random_extractor(3, seed=seed, channels=(4, 8))
    cfg = AttentionConfig(top_count=2)
    weights = LossWeights()
    mask = _hole_mask(16, 16, 4, 4, 8)

    x = Tensor(rng.standard_normal((1, 5, 16, 16)) * 0.5)
    x_gt = Tensor(rng.standard_normal((1, 5, 16, 16)) * 0.5)
    gt = Tensor(np.tanh(rng.standard_normal((1, 3, 16, 16))))

    state.set_requires_grad(False)
    _, feats_gt = forward(spec, state, x_gt, mask=mask, attention_cfg=cfg, collect_features=True)
    feats_gt = [f.detach() for f in feats_gt]
    state.set_requires_grad(True)

    names = list(state.params)
    base = [state.params[n] for n in names]

    def stage2_loss(leaves):
        trial = ModelState(dict(zip(names, leaves)))
        out, feats = forward(spec, trial, x, mask=mask, attention_cfg=cfg, collect_features=True)
        _, g_adv = adversarial_losses(
            Tensor(np.asarray([0.5])), forward(d_spec, d_state, out)
        )
        parts = {
            "multi_level": multi_level_loss(feats, feats_gt),
            "reconstruction": reconstruction_loss(out, gt),
            "adversarial": g_adv,
            "perceptual": perceptual_loss(out, gt, fx),
            "style": style_loss(out, gt, fx),
        }
        return weighted_total(parts, weights, "inpaint_stage")

    return grad_check(stage2_loss, base, step=FD_STEP)


def gradient_suite(include_end_to_end=True, seed=2024):
    """Run every gradient check; returns [(name, max_relative_error), ...]."""
    rng = np.random.default_rng(seed)
    results = []

    x = Tensor(rng.standard_normal((1, 2, 5, 5)))
    w = Tensor(rng.standard_normal((3, 2, 3, 3)))
    b = Tensor(rng.standard_normal(3))
    p = ConvParams(3, 3, 2, 1)
    results.append(("conv2d", grad_check(lambda t: conv2d(t[0], t[1], t[2], p), [x, w, b], FD_STEP)))

    xd = Tensor(rng.standard_normal((1, 3, 3, 3)))
    wd = Tensor(rng.standard_normal((3, 2, 4, 4)))
    bd = Tensor(rng.standard_normal(2))
    pd = ConvParams(2, 4, 2, 1)
    results.append(
        (
            "transposed_conv2d",
            grad_check(lambda t: transposed_conv2d(t[0], t[1], t[2], pd), [xd, wd, bd], FD_STEP),
        )
    )

    xn = Tensor(rng.standard_normal((1, 2, 4, 4)))
    results.append(("instance_norm", grad_check(lambda t: instance_norm(t[0], 1e-5), [xn], FD_STEP)))

    for kind in ("relu", "leaky_relu", "tanh", "sigmoid"):
        xa = Tensor(_away_from_kinks(rng, (1, 2, 4, 4)))
        results.append(
            (kind, grad_check(lambda t, k=kind: activation(t[0], k), [xa], FD_STEP))
        )

    out = Tensor(rng.standard_normal((1, 2, 4, 4)))
    gt = Tensor(rng.standard_normal((1, 2, 4, 4)))
    results.append(
        ("reconstruction_loss", grad_check(lambda t: reconstruction_loss(t[0], gt), [out], FD_STEP))
    )

    g1 = Tensor(rng.standard_normal((1, 2, 3, 3)))
    g2 = Tensor(rng.standard_normal((1, 3, 2, 2)))
    o1 = Tensor(rng.standard_normal((1, 2, 3, 3)))
    o2 = Tensor(rng.standard_normal((1, 3, 2, 2)))
    results.append(
        (
            "multi_level_loss",
            grad_check(lambda t: multi_level_loss([t[0], t[1]], [g1, g2]), [o1, o2], FD_STEP),
        )
    )

    d_real = Tensor(rng.uniform(0.2, 0.8, (1, 1, 2, 2)))
    d_fake = Tensor(rng.uniform(0.2, 0.8, (1, 1, 2, 2)))
    results.append(
        (
            "adversarial_d_loss",
            grad_check(lambda t: adversarial_losses(t[0], t[1])[0], [d_real, d_fake], FD_STEP),
        )
    )
    results.append(
        (
            "adversarial_g_loss",
            grad_check(lambda t: adversarial_losses(d_real, t[0])[1], [d_fake], FD_STEP),
        )
    )

    fx = frozen_random_extractor(3, seed=seed, channels=(4, 8))
    po = Tensor(rng.standard_normal((1, 3, 8, 8)))
    pg = Tensor(rng.standard_normal((1, 3, 8, 8)))
    results.append(
        ("perceptual_loss", grad_check(lambda t: perceptual_loss(t[0], pg, fx), [po], FD_STEP))
    )
    results.append(("style_loss", grad_check(lambda t: style_loss(t[0], pg, fx), [po], FD_STEP)))

    feats = Tensor(rng.standard_normal((1, 4, 8, 8)))
    mask = _hole_mask(8, 8, 2, 2, 3)
    cfg = AttentionConfig(top_count=2)
    results.append(
        ("attend", grad_check(lambda t: attend(t[0], mask, cfg), [feats], FD_STEP))
    )

    if include_end_to_end:
        results.append(("end_to_end_stage2", end_to_end_case(seed)))
    return results


def format_suite(results):
    lines = ["primitive                 max_rel_error   status"]
    for name, err in results:
        status = "ok" if err < GRAD_TOLERANCE else "FAIL"
        lines.append(f"{name:<25} {err:>13.3e}   {status}")
    return "\n".join(lines)
