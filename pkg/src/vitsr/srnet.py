"""Super-resolution network: a residual CNN generator trained against a
discriminator plus frozen feature extractors.

The generator starts out as an exact-ish bilinear upscaler: channel 0
carries the image through delta-initialized head/tail convs, the residual
blocks open at identity (zero-initialized output-norm gain), and the
stride-2 transposed convs start at the separable bilinear kernel.  Training
then only has to learn the correction on top of plain interpolation.

The composite objective is adversarial realism plus cosine-similarity
anchors on transformer features and on the structure/texture codes of the
bicubically upscaled input.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import disentangle as dz
from . import vit
from .autodiff import Tensor
from .data import bicubic_resize
from .disentangle import LatentCode, adv_loss
from .errors import ConfigurationError, DimensionError
from .nn import BatchNorm2d, Conv2d, ConvDiscriminator, ConvT2d, Module, as_batch


@dataclass(frozen=True)
class GeneratorConfig:
    """Sizing of the SR generator. scale must be a power of two; one
    transposed-conv stage per doubling."""

    scale: int = 2
    residual_blocks: int = 8
    base_channels: int = 64

    def __post_init__(self):
        if self.scale < 2 or self.scale & (self.scale - 1):
            raise ConfigurationError(
                f"upscale factor must be a power of two >= 2, got {self.scale}")
        if self.residual_blocks < 0:
            raise ConfigurationError(
                f"residual block count must be nonnegative, got {self.residual_blocks}")
        if self.base_channels < 1:
            raise ConfigurationError(
                f"base channel width must be positive, got {self.base_channels}")

    @property
    def upsample_stages(self) -> int:
        return int(round(math.log2(self.scale)))


@dataclass(frozen=True)
class LossWeights:
    """Multipliers on the feature terms; the adversarial term is unweighted."""

    vit: float = 1.0
    structure: float = 1.0
    texture: float = 0.9

    def __post_init__(self):
        for name in ("vit", "structure", "texture"):
            if getattr(self, name) < 0:
                raise ConfigurationError(
                    f"loss weight {name} must be nonnegative, got {getattr(self, name)}")


def _delta_passthrough(conv: Conv2d, rng: np.random.Generator, scale: float = 0.01):
    """Shrink a conv's random weights and plant a centered unit tap on the
    channel-0 -> channel-0 path so the image passes through unchanged."""
    w = conv.w.values
    w *= scale
    mid = w.shape[2] // 2
    w[0, :, :, :] = 0.0
    w[0, 0, mid, mid] = 1.0


class ResidualBlock(Module):
    """conv-BN-ReLU-conv-BN with an additive skip. The second norm's gain
    starts at zero, so the block opens as the identity."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.conv1 = Conv2d(channels, channels, rng=rng)
        self.bn1 = BatchNorm2d(channels)
        self.conv2 = Conv2d(channels, channels, rng=rng)
        self.bn2 = BatchNorm2d(channels)
        self.bn2.gain.values[:] = 0.0

    def __call__(self, x: Tensor) -> Tensor:
        h = ad.relu(self.bn1(self.conv1(x)))
        return ad.add(x, self.bn2(self.conv2(h)))


class Generator(Module):
    """LR image in, scale-times-larger image out."""

    def __init__(self, config: GeneratorConfig, rng: np.random.Generator):
        self.config = config
        c = config.base_channels
        self.head = Conv2d(1, c, rng=rng)
        _delta_passthrough(self.head, rng)
        self.blocks = [ResidualBlock(c, rng) for _ in range(config.residual_blocks)]
        self.ups = [ConvT2d(c, c, rng=rng, bilinear_init=True)
                    for _ in range(config.upsample_stages)]
        self.tail = Conv2d(c, 1, rng=rng)
        _delta_passthrough(self.tail, rng)


def sr_generate(lr, state: Generator) -> Tensor:
    """Upscale one image [H,W] (or a batch [B,H,W]) by the configured factor."""
    t = lr if isinstance(lr, Tensor) else Tensor(np.asarray(lr, dtype=np.float64))
    single = t.ndim == 2
    if t.ndim not in (2, 3):
        raise DimensionError(f"expected an image or image batch, got shape {t.shape}")
    if min(t.shape[-2:]) < 1:
        raise DimensionError(f"input extents must be positive, got {t.shape}")
    h0 = t.shape[-2]
    w0 = t.shape[-1]
    x = as_batch(t)
    h = ad.relu(state.head(x))
    for block in state.blocks:
        h = block(h)
    eh, ew = h0, w0
    for up in state.ups:
        eh, ew = 2 * eh, 2 * ew
        h = ad.relu(up(h, output_size=(eh, ew)))
    out = state.tail(h)
    shape = (eh, ew) if single else (t.shape[0], eh, ew)
    return ad.reshape(out, shape)


def discriminate(images, disc: ConvDiscriminator) -> Tensor:
    """Probability the discriminator assigns to each image being real."""
    return disc(as_batch(images))


def sr_adv_loss(lr, generator: Generator, disc: ConvDiscriminator) -> Tensor:
    """-log D(G(lr)) averaged over the batch, clamped like the
    autoencoder's adversarial term."""
    sr = sr_generate(lr, generator)
    return adv_loss(discriminate(sr, disc))


def vit_feature_loss(f_lr, f_hr) -> Tensor:
    """1 - cosine similarity of two transformer feature vectors."""
    a = ad.as_tensor(f_lr)
    b = ad.as_tensor(f_hr)
    if a.shape != b.shape:
        raise DimensionError(f"feature length mismatch: {a.shape} vs {b.shape}")
    return ad.sub(1.0, ad.cosine_similarity(a, b))


def structure_texture_loss(code_x: LatentCode, code_y: LatentCode):
    """(1 - cos z_str, 1 - cos z_tex); each lies in [0, 2]."""
    if code_x.z_str.shape != code_y.z_str.shape:
        raise DimensionError(
            f"structure code mismatch: {code_x.z_str.shape} vs {code_y.z_str.shape}")
    if code_x.z_tex.shape != code_y.z_tex.shape:
        raise DimensionError(
            f"texture code mismatch: {code_x.z_tex.shape} vs {code_y.z_tex.shape}")
    l_str = ad.sub(1.0, ad.cosine_similarity(code_x.z_str, code_y.z_str))
    l_tex = ad.sub(1.0, ad.cosine_similarity(code_x.z_tex, code_y.z_tex))
    return l_str, l_tex


def total_sr_loss(adv, vit_term, structure, texture, weights: LossWeights = LossWeights()):
    """adv + w_vit * vit + w_str * structure + w_tex * texture."""
    terms = (adv, vit_term, structure, texture)
    if any(isinstance(v, Tensor) for v in terms):
        out = ad.as_tensor(adv)
        for w, v in ((weights.vit, vit_term), (weights.structure, structure),
                     (weights.texture, texture)):
            out = ad.add(out, ad.mul(w, v))
        return out
    return (float(adv) + weights.vit * float(vit_term)
            + weights.structure * float(structure) + weights.texture * float(texture))


def _mean_scalars(terms: list) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = ad.add(acc, t)
    return ad.mul(1.0 / len(terms), acc) if len(terms) > 1 else acc


@dataclass
class FeatureTarget:
    """Frozen-extractor features of one bicubically upscaled LR image."""

    f_vit: Tensor
    code: LatentCode


def extract_feature_targets(lr_images, vit_state, ae_state, scale: int) -> list:
    """Constant feature anchors for each LR image: both extractors see the
    LR input resized to the HR extent, so comparisons are same-extent."""
    targets = []
    for lr in lr_images:
        up = bicubic_resize(np.asarray(lr, dtype=np.float64), float(scale))
        f = vit.encode_features(up, vit_state)
        code = dz.encode(up, ae_state)
        targets.append(FeatureTarget(
            f_vit=f.detach(),
            code=LatentCode(z_str=code.z_str.detach(), z_tex=code.z_tex.detach())))
    return targets


def sr_train_step(pairs, generator: Generator, disc: ConvDiscriminator,
                  vit_state, ae_state, gen_opt, disc_opt,
                  weights: LossWeights = LossWeights(), targets=None) -> dict:
    """One alternating update of the SR GAN on a batch of (lr, hr) pairs.

    The transformer and autoencoder act as fixed feature extractors and
    must be frozen; zero-weighted feature terms are skipped entirely.
    Passing precomputed `targets` (from extract_feature_targets) avoids
    re-encoding the unchanged LR side every step.
    """
    if not vit_state.frozen():
        raise ConfigurationError("transformer extractor must be frozen for SR training")
    if not ae_state.frozen():
        raise ConfigurationError("autoencoder extractor must be frozen for SR training")
    lrs = [np.asarray(p.lr, dtype=np.float64) for p in pairs]
    hrs = [np.asarray(p.hr, dtype=np.float64) for p in pairs]
    if targets is None:
        targets = extract_feature_targets(lrs, vit_state, ae_state, generator.config.scale)
    if len(targets) != len(pairs):
        raise ConfigurationError(
            f"{len(targets)} feature targets for {len(pairs)} pairs")

    srs = [sr_generate(lr, generator) for lr in lrs]
    sr_batch = ad.concat([ad.reshape(s, (1, 1) + s.shape) for s in srs], axis=0)
    adv = adv_loss(disc(sr_batch))
    vit_term: object = 0.0
    str_term: object = 0.0
    tex_term: object = 0.0
    if weights.vit > 0:
        vit_term = _mean_scalars(
            [vit_feature_loss(t.f_vit, vit.encode_features(s, vit_state))
             for t, s in zip(targets, srs)])
    if weights.structure > 0 or weights.texture > 0:
        codes = [dz.encode(s, ae_state) for s in srs]
        both = [structure_texture_loss(t.code, c) for t, c in zip(targets, codes)]
        if weights.structure > 0:
            str_term = _mean_scalars([b[0] for b in both])
        if weights.texture > 0:
            tex_term = _mean_scalars([b[1] for b in both])
    total = total_sr_loss(adv, vit_term, str_term, tex_term, weights)
    generator.zero_grad()
    disc.zero_grad()
    ad.backward(total)
    gen_opt.step()

    hr_batch = as_batch(np.stack(hrs))
    d_real = disc(hr_batch)
    d_fake = disc(sr_batch.detach())
    disc_loss = dz._disc_loss(d_real, [d_fake])
    generator.zero_grad()
    disc.zero_grad()
    ad.backward(disc_loss)
    disc_opt.step()

    def _val(v):
        return v.item() if isinstance(v, Tensor) else float(v)

    return {"adv": _val(adv), "vit": _val(vit_term), "str": _val(str_term),
            "tex": _val(tex_term), "total": _val(total), "disc": disc_loss.item()}
