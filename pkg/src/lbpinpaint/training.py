"""Two-phase adversarial training.

Phase one trains the structure generator and its discriminator on code
planes alone. Phase two trains the inpainting generator end to end: the
structure generator's output feeds the inpainting network and receives
gradients through it, while a second discriminator scores the filled
images. Each iteration performs exactly one discriminator update followed
by one generator update.
"""

from dataclasses import dataclass, field, fields

import numpy as np

from .attention import AttentionConfig
from .lbp import encode_plane, extract_lbp, rgb_to_gray
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
from .masking import Mask, RatioBucket, centering_mask, irregular_mask, white_fill
from .networks import (
    build_discriminator,
    build_generator,
    forward,
    save_checkpoint,
)
from .tensor import NonFiniteError, Tensor, concat


@dataclass
class TrainConfig:
    """Optimization, architecture, and loss settings for both phases."""

    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch: int = 1
    iters_stage1: int = 300
    iters_stage2: int = 500
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    deterministic: bool = True
    depth: int = 5
    width_scale: float = 1 / 8
    image_size: int = 64
    normalized_norms: bool = False
    checkpoint_every: int = 0  # 0 keeps only the final checkpoint
    adam_eps: float = 1e-8
    with_attention: bool = True  # False builds the attention-free ablation generator


class AdamState:
    """Per-parameter first/second moment buffers and the shared step counter."""

    def __init__(self, params):
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.step = 0


def adam_step(params, grads, state, cfg):
    """Bias-corrected Adam update, in place. Rejects non-finite gradients."""
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    for name, p in params.params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("adam_step", f"non-finite gradient for parameter {name!r}")
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        p.data -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return params, state


def _collect_grads(state):
    return {
        name: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for name, t in state.params.items()
    }


# -- data ------------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    """One training example: an RGB uint8 image and its mask."""

    image: np.ndarray
    mask: Mask


def make_texture(kind, size, rng):
    """Procedural RGB texture: oriented stripes, checkerboard, or a ramp."""
    c0 = rng.integers(0, 256, 3).astype(np.float64)
    c1 = rng.integers(0, 256, 3).astype(np.float64)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    if kind == "stripes":
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(2.0, 6.0)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) / size + phase)
        t = (wave + 1.0) / 2.0
    elif kind == "checker":
        cell = int(rng.choice([4, 8, 16]))
        t = ((yy // cell + xx // cell) % 2).astype(np.float64)
    elif kind == "gradient":
        theta = rng.uniform(0, 2 * np.pi)
        proj = xx * np.cos(theta) + yy * np.sin(theta)
        t = (proj - proj.min()) / max(proj.max() - proj.min(), 1e-9)
    else:
        raise ValueError(f"unknown texture kind {kind!r}")
    img = c0[None, None] + t[:, :, None] * (c1 - c0)[None, None]
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


TEXTURE_KINDS = ("stripes", "checker", "gradient")


def synthetic_stream(size, seed, mask_mode="centering", hole_side=None, bucket=None):
    """Endless stream of seeded texture samples with fresh masks."""
    rng = np.random.default_rng((0x5A, seed))
    side = hole_side if hole_side is not None else size // 4
    index = 0
    while True:
        kind = TEXTURE_KINDS[index % len(TEXTURE_KINDS)]
        image = make_texture(kind, size, rng)
        if mask_mode == "centering":
            mask = centering_mask(size, size, side)
        elif mask_mode == "irregular":
            b = bucket if bucket is not None else RatioBucket(10, 20)
            mask = irregular_mask(size, size, int(rng.integers(0, 2 ** 31)), b)
        else:
            raise ValueError(f"unknown mask mode {mask_mode!r}")
        yield Sample(image=image, mask=mask)
        index += 1


def repeat_first(stream):
    """Pin the stream to its first sample (the single-sample overfit regime)."""
    sample = next(stream)
    while True:
        yield sample


def folder_stream(data_dir, size, seed, mask_mode="centering", hole_side=None, bucket=None):
    """Cycle PNG images from a directory (resized to ``size``) with fresh masks."""
    import glob
    import os

    from PIL import Image

    from .pngio import read_rgb

    paths = sorted(glob.glob(os.path.join(data_dir, "*.png")))
    if not paths:
        raise ValueError(f"no PNG files found in {data_dir!r}")
    rng = np.random.default_rng((0x0F, seed))
    side = hole_side if hole_side is not None else size // 4
    index = 0
    while True:
        image = read_rgb(paths[index % len(paths)])
        if image.shape[:2] != (size, size):
            image = np.asarray(
                Image.fromarray(image).resize((size, size), Image.BILINEAR), dtype=np.uint8
            )
        if mask_mode == "centering":
            mask = centering_mask(size, size, side)
        elif mask_mode == "irregular":
            b = bucket if bucket is not None else RatioBucket(10, 20)
            mask = irregular_mask(size, size, int(rng.integers(0, 2 ** 31)), b)
        else:
            raise ValueError(f"unknown mask mode {mask_mode!r}")
        yield Sample(image=image, mask=mask)
        index += 1


def image_to_tensor(image):
    """(H, W, 3) uint8 -> (1, 3, H, W) tensor in [-1, 1]."""
    a = np.asarray(image, dtype=np.float64)
    return Tensor((a.transpose(2, 0, 1)[None]) * (2.0 / 255.0) - 1.0)


def tensor_to_image(t):
    """(1, 3, H, W) tensor in [-1, 1] -> (H, W, 3) uint8."""
    a = (t.data[0].transpose(1, 2, 0) + 1.0) * (255.0 / 2.0)
    return np.clip(np.rint(a), 0, 255).astype(np.uint8)


def mask_plane(mask):
    return Tensor(mask.bits.astype(np.float64)[None, None])


def prepare_sample(sample):
    """All network inputs for one sample.

    The masked input image carries white in the hole; its code plane is the
    structure network's input, the clean image's code plane its target.
    """
    masked = white_fill(sample.image, sample.mask)
    code_in = encode_plane(extract_lbp(rgb_to_gray(masked)))
    code_gt = encode_plane(extract_lbp(rgb_to_gray(sample.image)))
    return {
        "image_in": image_to_tensor(masked),
        "image_gt": image_to_tensor(sample.image),
        "code_in": code_in,
        "code_gt": code_gt,
        "mask_plane": mask_plane(sample.mask),
        "mask": sample.mask,
    }


# -- traces ----------------------------------------------------------------


@dataclass(frozen=True)
class Stage1Row:
    iteration: int
    d_loss: float
    multi_level: float
    reconstruction: float
    adversarial: float
    total: float


@dataclass(frozen=True)
class Stage2Row:
    iteration: int
    d_loss: float
    multi_level: float
    reconstruction: float
    adversarial: float
    perceptual: float
    style: float
    total: float


def trace_to_csv(rows):
    """Full-precision CSV so equal traces compare bitwise."""
    if not rows:
        return ""
    names = [f.name for f in fields(rows[0])]
    lines = [",".join(names)]
    for row in rows:
        lines.append(
            ",".join(
                str(getattr(row, n)) if n == "iteration" else format(getattr(row, n), ".17g")
                for n in names
            )
        )
    return "\n".join(lines) + "\n"


def moving_average(values, window):
    if len(values) < window:
        raise ValueError(f"need at least {window} values, got {len(values)}")
    out = []
    acc = 0.0
    for i, v in enumerate(values):
        acc += v
        if i >= window:
            acc -= values[i - window]
        if i >= window - 1:
            out.append(acc / window)
    return out


# -- stage 1: structure network ---------------------------------------------


def _frozen_feature_pass(spec, state, x, mask=None, attention_cfg=None):
    state.set_requires_grad(False)
    try:
        _, feats = forward(
            spec, state, x, mask=mask, attention_cfg=attention_cfg, collect_features=True
        )
    finally:
        state.set_requires_grad(True)
    return feats


def _write_checkpoint(out_dir, name, models):
    if out_dir is None:
        return
    save_checkpoint(f"{out_dir}/{name}", models)


def train_lbp_stage(data, cfg, out_dir=None, init_g1=None, init_d1=None):
    """Alternating D/G training of the structure network.

    Returns ((g1_spec, g1_state), (d1_spec, d1_state), trace rows).
    """
    g1_spec, g1 = init_g1 if init_g1 else build_generator(
        "lbp", cfg.width_scale, cfg.depth, seed=cfg.seed
    )
    d1_spec, d1 = init_d1 if init_d1 else build_discriminator(
        cfg.width_scale, in_channels=1, seed=cfg.seed + 1
    )
    adam_g = AdamState(g1.params)
    adam_d = AdamState(d1.params)
    trace = []
    use_multi_level = cfg.weights.multi_level != 0.0
    for it in range(cfg.iters_stage1):
        sample = next(data)
        t = prepare_sample(sample)
        g_in = concat([t["code_in"], t["mask_plane"]], axis=1)
        gt_in = concat([t["code_gt"], t["mask_plane"]], axis=1)
        try:
            feats_gt = (
                _frozen_feature_pass(g1_spec, g1, gt_in) if use_multi_level else None
            )
            code_out, feats_out = forward(g1_spec, g1, g_in, collect_features=True)

            # discriminator step on detached output
            d_real = forward(d1_spec, d1, t["code_gt"])
            d_fake = forward(d1_spec, d1, code_out.detach())
            d_loss, _ = adversarial_losses(d_real, d_fake)
            d1.zero_grads()
            d_loss.backward()
            adam_step(d1, _collect_grads(d1), adam_d, cfg)

            # generator step against the frozen discriminator
            d1.set_requires_grad(False)
            try:
                d_fake_g = forward(d1_spec, d1, code_out)
                _, g_adv = adversarial_losses(d_real.detach(), d_fake_g)
                l_m = (
                    multi_level_loss(feats_out, feats_gt, cfg.normalized_norms)
                    if use_multi_level
                    else Tensor(np.asarray(0.0))
                )
                l_r = reconstruction_loss(code_out, t["code_gt"], cfg.normalized_norms)
                total = weighted_total(
                    {"multi_level": l_m, "reconstruction": l_r, "adversarial": g_adv},
                    cfg.weights,
                    "lbp_stage",
                )
                g1.zero_grads()
                total.backward()
                adam_step(g1, _collect_grads(g1), adam_g, cfg)
            finally:
                d1.set_requires_grad(True)
        except NonFiniteError:
            _write_checkpoint(out_dir, "stage1_diagnostic.ckpt", {
                "g1": (g1_spec, g1), "d1": (d1_spec, d1),
            })
            raise
        trace.append(
            Stage1Row(
                iteration=it,
                d_loss=d_loss.item(),
                multi_level=l_m.item(),
                reconstruction=l_r.item(),
                adversarial=g_adv.item(),
                total=total.item(),
            )
        )
        if out_dir and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            _write_checkpoint(out_dir, f"stage1_{it + 1:06d}.ckpt", {
                "g1": (g1_spec, g1), "d1": (d1_spec, d1),
            })
    _write_checkpoint(out_dir, "stage1.ckpt", {"g1": (g1_spec, g1), "d1": (d1_spec, d1)})
    return (g1_spec, g1), (d1_spec, d1), trace


# -- stage 2: joint end-to-end training --------------------------------------


def train_joint_stage(data, g1_pair, cfg, out_dir=None, init_g2=None, init_d2=None, extractor=None):
    """Joint training of both generators and the image discriminator.

    The structure generator's output flows into the inpainting network and
    its parameters keep receiving gradients. Returns (g1, g2, d2, trace).
    """
    g1_spec, g1 = g1_pair
    g2_spec, g2 = init_g2 if init_g2 else build_generator(
        "inpaint", cfg.width_scale, cfg.depth, seed=cfg.seed + 2,
        with_attention=cfg.with_attention,
    )
    d2_spec, d2 = init_d2 if init_d2 else build_discriminator(
        cfg.width_scale, in_channels=3, seed=cfg.seed + 3
    )
    fx = extractor if extractor is not None else frozen_random_extractor(3, seed=cfg.seed)
    adam_g1 = AdamState(g1.params)
    adam_g2 = AdamState(g2.params)
    adam_d = AdamState(d2.params)
    trace = []
    use_multi_level = cfg.weights.multi_level != 0.0
    for it in range(cfg.iters_stage2):
        sample = next(data)
        t = prepare_sample(sample)
        try:
            gt_in = concat([t["image_gt"], t["code_gt"], t["mask_plane"]], axis=1)
            feats_gt = (
                _frozen_feature_pass(
                    g2_spec, g2, gt_in, mask=t["mask"], attention_cfg=cfg.attention
                )
                if use_multi_level
                else None
            )
            code_out = forward(g1_spec, g1, concat([t["code_in"], t["mask_plane"]], axis=1))
            g2_in = concat([t["image_in"], code_out, t["mask_plane"]], axis=1)
            image_out, feats_out = forward(
                g2_spec, g2, g2_in, mask=t["mask"], attention_cfg=cfg.attention,
                collect_features=True,
            )

            d_real = forward(d2_spec, d2, t["image_gt"])
            d_fake = forward(d2_spec, d2, image_out.detach())
            d_loss, _ = adversarial_losses(d_real, d_fake)
            d2.zero_grads()
            d_loss.backward()
            adam_step(d2, _collect_grads(d2), adam_d, cfg)

            d2.set_requires_grad(False)
            try:
                d_fake_g = forward(d2_spec, d2, image_out)
                _, g_adv = adversarial_losses(d_real.detach(), d_fake_g)
                l_m = (
                    multi_level_loss(feats_out, feats_gt, cfg.normalized_norms)
                    if use_multi_level
                    else Tensor(np.asarray(0.0))
                )
                l_r = reconstruction_loss(image_out, t["image_gt"], cfg.normalized_norms)
                l_p = perceptual_loss(image_out, t["image_gt"], fx, cfg.normalized_norms)
                l_s = style_loss(image_out, t["image_gt"], fx, cfg.normalized_norms)
                total = weighted_total(
                    {
                        "multi_level": l_m,
                        "reconstruction": l_r,
                        "adversarial": g_adv,
                        "perceptual": l_p,
                        "style": l_s,
                    },
                    cfg.weights,
                    "inpaint_stage",
                )
                g1.zero_grads()
                g2.zero_grads()
                total.backward()
                adam_step(g1, _collect_grads(g1), adam_g1, cfg)
                adam_step(g2, _collect_grads(g2), adam_g2, cfg)
            finally:
                d2.set_requires_grad(True)
        except NonFiniteError:
            _write_checkpoint(out_dir, "stage2_diagnostic.ckpt", {
                "g1": (g1_spec, g1), "g2": (g2_spec, g2), "d2": (d2_spec, d2),
            })
            raise
        trace.append(
            Stage2Row(
                iteration=it,
                d_loss=d_loss.item(),
                multi_level=l_m.item(),
                reconstruction=l_r.item(),
                adversarial=g_adv.item(),
                perceptual=l_p.item(),
                style=l_s.item(),
                total=total.item(),
            )
        )
        if out_dir and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            _write_checkpoint(out_dir, f"stage2_{it + 1:06d}.ckpt", {
                "g1": (g1_spec, g1), "g2": (g2_spec, g2), "d2": (d2_spec, d2),
            })
    _write_checkpoint(out_dir, "model.ckpt", {
        "g1": (g1_spec, g1), "g2": (g2_spec, g2), "d2": (d2_spec, d2),
    })
    return (g1_spec, g1), (g2_spec, g2), (d2_spec, d2), trace


# -- inference and baselines -------------------------------------------------


def inpaint_image(g1_pair, g2_pair, image, mask, attention_cfg=None):
    """Full test-time pipeline; known pixels are copied from the input verbatim."""
    sample = Sample(image=np.asarray(image), mask=mask)
    t = prepare_sample(sample)
    g1_spec, g1 = g1_pair
    g2_spec, g2 = g2_pair
    code_out = forward(g1_spec, g1, concat([t["code_in"], t["mask_plane"]], axis=1))
    g2_in = concat([t["image_in"], code_out, t["mask_plane"]], axis=1)
    image_out = forward(
        g2_spec, g2, g2_in, mask=mask, attention_cfg=attention_cfg or AttentionConfig()
    )
    return composite_known_pixels(tensor_to_image(image_out), sample.image, mask)


def composite_known_pixels(generated, original, mask):
    """Keep generated pixels only in the hole; known pixels come from the original."""
    out = np.asarray(generated).copy()
    known = mask.bits == 1
    out[known] = np.asarray(original)[known]
    return out


def mean_fill_baseline(image, mask):
    """Fill the hole with the known region's per-channel mean intensity."""
    img = np.asarray(image)
    out = img.copy()
    known = mask.bits == 1
    hole = ~known
    if img.ndim == 3:
        means = img[known].mean(axis=0)
        out[hole] = np.rint(means).astype(img.dtype)
    else:
        out[hole] = np.rint(img[known].mean()).astype(img.dtype)
    return out
