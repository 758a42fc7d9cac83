"""Transformer encoder used as a frozen perceptual feature extractor.

Single-channel inputs are cut into non-overlapping patches (2-D slices or
3-D volumes), linearly embedded with additive position terms, and passed
through pre-norm transformer blocks: attention then MLP, each wrapped in
a residual sum. Pooled final tokens serve two roles: the pretext
classification head during self-supervised training, and the feature
vector compared across resolutions during SR training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DimensionError, ValidationError
from .nn import Linear, Module


@dataclass
class ViTConfig:
    input_extents: tuple[int, ...] = (256, 256)
    patch_size: int = 16
    embed_dim: int = 768
    layers: int = 12
    heads: int = 12
    mlp_hidden: int = 3072
    num_classes: int = 2

    def __post_init__(self):
        if len(self.input_extents) not in (2, 3):
            raise ConfigurationError(
                f"input rank must be 2 or 3, got extents {self.input_extents}")
        if self.embed_dim % self.heads:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        for extent in self.input_extents:
            if extent % self.patch_size:
                raise ConfigurationError(
                    f"extent {extent} not divisible by patch size {self.patch_size}")

    @property
    def rank(self) -> int:
        return len(self.input_extents)

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @property
    def patch_dim(self) -> int:
        return self.patch_size ** self.rank

    @property
    def n_patches(self) -> int:
        n = 1
        for extent in self.input_extents:
            n *= extent
        return n // self.patch_dim


def patchify(image, patch_size: int) -> Tensor:
    """[H,W] or [H,W,D] -> [N, P^rank] rows in row-major patch-grid order.

    Lossless: unpatchify inverts it exactly. Differentiable (pure index
    permutation), so feature losses can reach a generated image."""
    t = image if isinstance(image, Tensor) else Tensor(image)
    if t.ndim not in (2, 3):
        raise DimensionError(f"patchify expects rank 2 or 3, got shape {t.shape}")
    p = int(patch_size)
    if p < 1:
        raise DimensionError(f"patch size must be positive, got {p}")
    for extent in t.shape:
        if extent % p:
            raise DimensionError(
                f"extent {extent} of {t.shape} not divisible by patch size {p}")
    if t.ndim == 2:
        h, w = t.shape[0] // p, t.shape[1] // p
        grid = ad.reshape(t, (h, p, w, p))
        grid = ad.transpose(grid, (0, 2, 1, 3))
        return ad.reshape(grid, (h * w, p * p))
    h, w, d = (s // p for s in t.shape)
    grid = ad.reshape(t, (h, p, w, p, d, p))
    grid = ad.transpose(grid, (0, 2, 4, 1, 3, 5))
    return ad.reshape(grid, (h * w * d, p ** 3))


def unpatchify(patches, extents: tuple[int, ...], patch_size: int) -> Tensor:
    t = patches if isinstance(patches, Tensor) else Tensor(patches)
    p = int(patch_size)
    if len(extents) == 2:
        h, w = extents[0] // p, extents[1] // p
        grid = ad.reshape(t, (h, w, p, p))
        grid = ad.transpose(grid, (0, 2, 1, 3))
        return ad.reshape(grid, extents)
    h, w, d = (s // p for s in extents)
    grid = ad.reshape(t, (h, w, d, p, p, p))
    grid = ad.transpose(grid, (0, 3, 1, 4, 2, 5))
    return ad.reshape(grid, extents)


def embed_sequence(patches: Tensor, embed: Tensor, pos: Tensor) -> Tensor:
    """z0 = patches @ E + E_pos."""
    if patches.shape[0] != pos.shape[0]:
        raise DimensionError(
            f"{patches.shape[0]} patches but {pos.shape[0]} position rows")
    return ad.add(ad.matmul(patches, embed), pos)


def attention_weights(q: Tensor, k: Tensor) -> Tensor:
    """Rows of softmax(q k^T / sqrt(head_dim)); each row sums to 1."""
    if q.ndim != 2 or k.ndim != 2 or q.shape[1] != k.shape[1]:
        raise DimensionError(f"attention expects [N,Kh] pairs, got {q.shape} and {k.shape}")
    scale = 1.0 / np.sqrt(q.shape[1])
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (1, 0))), scale)
    return ad.softmax(scores, axis=-1)


def self_attention(z: Tensor, w_q: Tensor, w_k: Tensor, w_v: Tensor) -> Tensor:
    """One head: A(z) @ (z W_v) with A from the projected queries/keys."""
    q = ad.matmul(z, w_q)
    k = ad.matmul(z, w_k)
    v = ad.matmul(z, w_v)
    return ad.matmul(attention_weights(q, k), v)


def multi_head_attention(z: Tensor, w_q: list[Tensor], w_k: list[Tensor],
                         w_v: list[Tensor], w_msa: Tensor) -> Tensor:
    """Concatenated per-head attention projected back to embed_dim."""
    n = len(w_q)
    if not (len(w_k) == len(w_v) == n) or n < 1:
        raise DimensionError("need matching, nonempty per-head weight lists")
    heads = [self_attention(z, w_q[i], w_k[i], w_v[i]) for i in range(n)]
    stacked = heads[0] if n == 1 else ad.concat(heads, axis=1)
    if stacked.shape[1] != w_msa.shape[0]:
        raise DimensionError(
            f"concatenated heads have width {stacked.shape[1]}, W_msa expects {w_msa.shape[0]}")
    return ad.matmul(stacked, w_msa)


class TransformerBlock(Module):
    def __init__(self, config: ViTConfig, rng: np.random.Generator):
        k, kh, n = config.embed_dim, config.head_dim, config.heads
        init = lambda *shape: Tensor(rng.normal(0.0, 0.02, shape), requires_grad=True)
        self.norm1_gain = Tensor(np.ones(k), requires_grad=True)
        self.norm1_bias = Tensor(np.zeros(k), requires_grad=True)
        self.w_q = [init(k, kh) for _ in range(n)]
        self.w_k = [init(k, kh) for _ in range(n)]
        self.w_v = [init(k, kh) for _ in range(n)]
        self.w_msa = init(n * kh, k)
        self.norm2_gain = Tensor(np.ones(k), requires_grad=True)
        self.norm2_bias = Tensor(np.zeros(k), requires_grad=True)
        self.mlp_in = Linear(k, config.mlp_hidden, rng, scale=0.02)
        self.mlp_out = Linear(config.mlp_hidden, k, rng, scale=0.02)

    def __call__(self, z: Tensor) -> Tensor:
        normed = ad.layer_norm(z, self.norm1_gain, self.norm1_bias)
        attended = ad.add(
            multi_head_attention(normed, self.w_q, self.w_k, self.w_v, self.w_msa), z)
        normed2 = ad.layer_norm(attended, self.norm2_gain, self.norm2_bias)
        mlp = self.mlp_out(ad.gelu(self.mlp_in(normed2)))
        return ad.add(mlp, attended)


class ViTState(Module):
    def __init__(self, config: ViTConfig, rng: np.random.Generator):
        self.config = config
        self.embed = Tensor(rng.normal(0.0, 0.02, (config.patch_dim, config.embed_dim)),
                            requires_grad=True)
        self.pos = Tensor(rng.normal(0.0, 0.02, (config.n_patches, config.embed_dim)),
                          requires_grad=True)
        self.blocks = [TransformerBlock(config, rng) for _ in range(config.layers)]
        # pretext head starts at zero: uniform logits, CE = ln(num_classes)
        self.pretext_head = Tensor(np.zeros((config.embed_dim, config.num_classes)),
                                   requires_grad=True)


def encode_features(image, state: ViTState) -> Tensor:
    """Image -> pooled token features [embed_dim]."""
    cfg = state.config
    t = image if isinstance(image, Tensor) else Tensor(image)
    if t.shape != tuple(cfg.input_extents):
        raise DimensionError(
            f"image extents {t.shape} differ from configured {cfg.input_extents}")
    z = embed_sequence(patchify(t, cfg.patch_size), state.embed, state.pos)
    for block in state.blocks:
        z = block(z)
    return ad.reshape(ad.mean(z, axis=0), (cfg.embed_dim,))


def pretext_logits(features: Tensor, head: Tensor) -> Tensor:
    """Pooled features [K] (or [B,K]) -> class logits."""
    single = features.ndim == 1
    mat = ad.reshape(features, (1, features.shape[0])) if single else features
    if mat.shape[1] != head.shape[0]:
        raise DimensionError(
            f"features of width {mat.shape[1]} but head expects {head.shape[0]}")
    logits = ad.matmul(mat, head)
    return ad.reshape(logits, (head.shape[1],)) if single else logits


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """-log softmax(logits)[label], stable via a constant max shift."""
    if logits.ndim != 1:
        raise DimensionError(f"cross_entropy expects a logit vector, got {logits.shape}")
    if not 0 <= label < logits.shape[0]:
        raise ValidationError(f"label {label} outside [0, {logits.shape[0]})")
    shifted = ad.sub(logits, float(logits.values.max()))
    log_z = ad.log(ad.tensor_sum(ad.exp(shifted)))
    onehot = np.zeros(logits.shape[0])
    onehot[label] = 1.0
    return ad.sub(log_z, ad.tensor_sum(ad.mul(shifted, onehot)))


DICE_SMOOTH = 1e-7
PROB_FLOOR = 1e-7


def dice_ce_loss(probs, onehot) -> Tensor:
    """Combined dice and cross-entropy over [voxels, classes] predictions.

    loss = 1 - (2/J) sum_j dice_j - (1/I) sum_ij G_ij log Y_ij, with the
    per-class ratio dice_j = (sum_i G Y + d/2)/(sum_i G^2 + sum_i Y^2 + d)
    smoothed so empty classes score as perfect and Y == G gives exactly 0.
    Differentiable in the predictions."""
    y = probs if isinstance(probs, Tensor) else Tensor(probs)
    g = np.asarray(onehot, dtype=np.float64)
    if y.ndim != 2 or g.shape != y.shape:
        raise DimensionError(
            f"dice_ce_loss expects matching [I,J] arrays, got {y.shape} and {g.shape}")
    if not np.all((g == 0.0) | (g == 1.0)) or not np.allclose(g.sum(axis=1), 1.0):
        raise ValidationError("ground truth must be exactly one-hot per row")
    row_sums = y.values.sum(axis=1)
    if np.abs(row_sums - 1.0).max() > 1e-6 or y.values.min() < 0.0:
        raise ValidationError("predictions must be probability rows summing to 1")
    voxels, classes = y.shape

    overlap = ad.tensor_sum(ad.mul(y, g), axis=0)
    energy = ad.add(ad.tensor_sum(ad.mul(y, y), axis=0), (g * g).sum(axis=0))
    dice = ad.div(ad.add(overlap, DICE_SMOOTH / 2.0), ad.add(energy, DICE_SMOOTH))
    dice_term = ad.mul(ad.tensor_sum(dice), 2.0 / classes)

    log_y = ad.log(ad.clamp(y, PROB_FLOOR, 1.0))
    ce_term = ad.mul(ad.tensor_sum(ad.mul(log_y, g)), 1.0 / voxels)

    return ad.sub(ad.sub(1.0, dice_term), ce_term)
