"""Dual-scope spatial attention over 1x1 feature patches.

Every feature patch (channel vector) in the missing region is replaced by a
softmax-weighted combination of its top-T most similar patches, where
similarity is cosine and candidates are drawn from BOTH the missing region
(intra) and the known region (inter). Known-region patches pass through
untouched. The top-T selection is computed from current values and treated
as constant by the backward pass; the weights and the mixed patches remain
differentiable.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import DimensionError, Tensor, _accum, _from_op, batch_slice, concat, matmul

PAD_LOGIT = -1e30  # additive mask for unused candidate slots; exp() underflows to 0


@dataclass(frozen=True)
class PatchIndex:
    """Location and region of one 1x1 feature patch."""

    row: int
    col: int
    region: str  # "missing" | "known"


@dataclass(frozen=True)
class AttentionConfig:
    """Attention placement and selection parameters.

    layer_index records the intended decoder position in full-depth table
    numbering; builders place the layer structurally (three decoder steps
    before the output), which reproduces it.
    """

    layer_index: int = 13
    top_count: int = 2
    similarity_eps: float = 1e-8
    include_intra: bool = True  # False reproduces known-region-only attention

    def __post_init__(self):
        if self.top_count < 1:
            raise ValueError(f"top_count must be >= 1, got {self.top_count}")
        if self.similarity_eps <= 0:
            raise ValueError(f"similarity_eps must be > 0, got {self.similarity_eps}")


def downsample_mask_nearest(mask, feat_h, feat_w):
    """Nearest-neighbor downsample of mask bits to the feature resolution.

    A feature pixel is missing iff the source pixel nearest to its cell
    center is missing.
    """
    rows = np.minimum((((np.arange(feat_h) + 0.5) * mask.height) / feat_h).astype(np.int64), mask.height - 1)
    cols = np.minimum((((np.arange(feat_w) + 0.5) * mask.width) / feat_w).astype(np.int64), mask.width - 1)
    return mask.bits[rows[:, None], cols[None, :]]


def _flat_regions(down_bits):
    flat = down_bits.reshape(-1)
    missing = np.flatnonzero(flat == 0)
    known = np.flatnonzero(flat == 1)
    return missing, known


def patch_indices(down_bits):
    """All patches of a downsampled mask in row-major order, region-labeled."""
    h, w = down_bits.shape
    return [
        PatchIndex(row=y, col=x, region="known" if down_bits[y, x] else "missing")
        for y in range(h)
        for x in range(w)
    ]


def similarity_matrix(features, down_bits, eps=1e-8):
    """Cosine similarities of missing-region patches.

    Returns (intra, inter): intra[j, k] compares missing patch j with missing
    patch k; inter[j, k] compares missing patch j with known patch k. Patch
    norms are guarded with ``norm + eps``. Empty missing region gives empty
    matrices.
    """
    data = features.data if isinstance(features, Tensor) else np.asarray(features)
    if data.ndim != 3:
        raise DimensionError(f"similarity_matrix expects CxHxW features, got {data.shape}")
    c, h, w = data.shape
    if down_bits.shape != (h, w):
        raise DimensionError(
            f"mask extent {down_bits.shape} does not match feature extent {(h, w)}"
        )
    missing, known = _flat_regions(down_bits)
    x = data.reshape(c, h * w)
    xn = x / np.maximum(np.linalg.norm(x, axis=0), eps)
    intra = xn[:, missing].T @ xn[:, missing]
    inter = xn[:, missing].T @ xn[:, known]
    return intra, inter


# -- differentiable building blocks --------------------------------------


def _column_norms(x):
    """Euclidean norm of each column of a (C, K) matrix; subgradient 0 at zero columns."""
    n = np.linalg.norm(x.data, axis=0)
    safe = np.where(n > 0, n, 1.0)

    def backward(g):
        _accum(x, x.data / safe[None] * g[None])

    return _from_op(n, (x,), backward, "column_norms")


def _clamp_min(x, lo):
    """Elementwise max(x, lo); the gradient vanishes where the floor binds."""
    above = x.data > lo

    def backward(g):
        _accum(x, g * above)

    return _from_op(np.maximum(x.data, lo), (x,), backward, "clamp_min")


def _scale_columns(x, s):
    def backward(g):
        _accum(x, g * s.data[None])
        _accum(s, (g * x.data).sum(axis=0))

    return _from_op(x.data * s.data[None], (x, s), backward, "scale_columns")


def _gather_columns(x, idx):
    def backward(g):
        if x.requires_grad:
            dx = np.zeros_like(x.data.T)
            np.add.at(dx, idx, g.T)
            _accum(x, dx.T)

    return _from_op(np.ascontiguousarray(x.data[:, idx]), (x,), backward, "gather_columns")


def _gather_entries(s, rows, cols):
    def backward(g):
        if s.requires_grad:
            ds = np.zeros_like(s.data)
            np.add.at(ds, (rows[:, None], cols), g)
            _accum(s, ds)

    return _from_op(s.data[rows[:, None], cols], (s,), backward, "gather_entries")


def _softmax_rows(logits):
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    w = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        _accum(logits, w * (g - (g * w).sum(axis=1, keepdims=True)))

    return _from_op(w, (logits,), backward, "softmax_rows")


def _weighted_mix(x, cols_idx, w):
    """out[:, j] = sum_t w[j, t] * x[:, cols_idx[j, t]] for a (C, K) matrix."""
    gathered = x.data[:, cols_idx]  # (C, m, t)

    def backward(g):
        if w.requires_grad:
            _accum(w, np.einsum("cm,cmt->mt", g, gathered))
        if x.requires_grad:
            contrib = g[:, :, None] * w.data[None]  # (C, m, t)
            dxt = np.zeros_like(x.data.T)
            np.add.at(dxt, cols_idx.reshape(-1), contrib.transpose(1, 2, 0).reshape(-1, x.data.shape[0]))
            _accum(x, dxt.T)

    return _from_op(np.einsum("cmt,mt->cm", gathered, w.data), (x, w), backward, "weighted_mix")


def _replace_columns(x, cols, v):
    out = x.data.copy()
    out[:, cols] = v.data

    def backward(g):
        if x.requires_grad:
            gx = g.copy()
            gx[:, cols] = 0.0
            _accum(x, gx)
        _accum(v, g[:, cols])

    return _from_op(out, (x, v), backward, "replace_columns")


# -- the attention layer --------------------------------------------------


def _select_top(similarities, candidates, count):
    """Indices of the top-`count` candidates by similarity; lower flat index
    wins ties (candidates are passed in increasing flat order)."""
    if candidates.size == 0 or count == 0:
        return candidates[:0]
    order = np.argsort(-similarities, kind="stable")
    return candidates[order[: min(count, candidates.size)]]


def attend(features, mask, cfg):
    """Apply dual-scope attention to a (B, C, H, W) feature tensor.

    The mask is nearest-neighbor downsampled to the feature resolution.
    Known patches pass through bitwise; an empty missing region makes the
    layer the identity. Regions short of top_count candidates contribute
    what they have, and the softmax renormalizes over the union.
    """
    if features.data.ndim != 4:
        raise DimensionError(f"attend expects rank-4 features, got {features.shape}")
    b, c, h, w = features.data.shape
    down = downsample_mask_nearest(mask, h, w)
    missing, known = _flat_regions(down)
    t = cfg.top_count
    if missing.size == 0:
        return features
    intra_possible = cfg.include_intra and missing.size >= 2
    if known.size == 0 and not intra_possible:
        return features

    samples = []
    for bi in range(b):
        x = batch_slice(features, bi).reshape(c, h * w)
        norms = _column_norms(x)
        inv = _clamp_min(norms, cfg.similarity_eps) ** -1.0
        xn = _scale_columns(x, inv)
        xn_miss = _gather_columns(xn, missing)
        sim_rows = matmul(xn_miss.transpose(), xn)  # (m, K)

        m = missing.size
        cols_idx = np.zeros((m, 2 * t), dtype=np.int64)
        offsets = np.full((m, 2 * t), PAD_LOGIT)
        sim_data = sim_rows.data
        for j in range(m):
            chosen = []
            if cfg.include_intra:
                cand = missing[missing != missing[j]]
                chosen.extend(_select_top(sim_data[j, cand], cand, t))
            chosen.extend(_select_top(sim_data[j, known], known, t))
            cols_idx[j, : len(chosen)] = chosen
            offsets[j, : len(chosen)] = 0.0

        logits = _gather_entries(sim_rows, np.arange(m), cols_idx) + Tensor(offsets)
        weights = _softmax_rows(logits)
        mixed = _weighted_mix(x, cols_idx, weights)
        out_flat = _replace_columns(x, missing, mixed)
        samples.append(out_flat.reshape(1, c, h, w))
    return samples[0] if b == 1 else concat(samples, axis=0)
