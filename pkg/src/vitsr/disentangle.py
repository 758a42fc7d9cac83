"""Swapped autoencoder that factors an image into a spatial structure code
and a flat texture code.

The encoder downsamples 16x and forks into two heads: a transposed-conv head
that re-expands the bottleneck to a one-channel grid at a quarter of the
input extent (structure), and a pooled linear head (texture).  The decoder
fuses both codes and upsamples back to the input extent.  An auxiliary
discriminator scores realism of reconstructions and of hybrids built from
one image's structure and another's texture.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DimensionError, SamplingError
from .nn import Conv2d, ConvDiscriminator, ConvT2d, Linear, Module, as_batch

# generator-side loss weights: total = rec + 0.7 adv + 0.7 swap
ADV_WEIGHT = 0.7
SWAP_WEIGHT = 0.7

# floor for probabilities entering a log
EPS_PROB = 1e-7

_POOL_STAGES = 4  # one max-pool per encoder block


@dataclass(frozen=True)
class AEConfig:
    """Autoencoder sizing. Defaults are the full-size setting: 256x256
    inputs, encoder widths 64,64,32,32, a 64x64 structure grid and a
    256-dim texture vector."""

    input_extent: int = 256
    channels: tuple = (64, 64, 32, 32)
    z_tex_dim: int = 256
    disc_channels: int = 64
    disc_stages: int = 3

    def __post_init__(self):
        if len(self.channels) != _POOL_STAGES:
            raise ConfigurationError(
                f"encoder takes {_POOL_STAGES} block widths, got {self.channels}")
        if any(int(c) <= 0 for c in self.channels):
            raise ConfigurationError(f"channel widths must be positive, got {self.channels}")
        divisor = 2 ** _POOL_STAGES
        if self.input_extent <= 0 or self.input_extent % divisor:
            raise ConfigurationError(
                f"input extent must be a positive multiple of {divisor}, "
                f"got {self.input_extent}")
        if self.z_tex_dim <= 0:
            raise ConfigurationError(f"texture size must be positive, got {self.z_tex_dim}")
        if self.input_extent < 2 ** self.disc_stages:
            raise ConfigurationError(
                f"{self.disc_stages} discriminator stages need extent >= "
                f"{2 ** self.disc_stages}, got {self.input_extent}")

    @property
    def z_str_extent(self) -> int:
        return self.input_extent // 4

    @property
    def bottleneck_extent(self) -> int:
        return self.input_extent // 2 ** _POOL_STAGES


@dataclass
class LatentCode:
    """Disentangled pair: z_str keeps spatial axes, z_tex is flat."""

    z_str: Tensor  # [S, S]
    z_tex: Tensor  # [T]


class AEState(Module):
    """Encoder, decoder, and discriminator weights."""

    def __init__(self, config: AEConfig, rng: np.random.Generator):
        self.config = config
        c = config.channels
        self.enc_blocks = [Conv2d(1, c[0], rng=rng),
                           Conv2d(c[0], c[1], rng=rng),
                           Conv2d(c[1], c[2], rng=rng),
                           Conv2d(c[2], c[3], rng=rng)]
        mid = max(c[3] // 2, 1)
        self.str_up1 = ConvT2d(c[3], mid, rng=rng)
        self.str_up2 = ConvT2d(mid, 1, rng=rng)
        self.tex_head = Linear(c[3], config.z_tex_dim, rng)
        # decoder block widths mirror the encoder's, reversed
        d = tuple(reversed(c))
        self.merge_str = Conv2d(1, d[0], rng=rng)
        self.merge_tex = Linear(config.z_tex_dim, d[0], rng)
        self.dec_conv1 = Conv2d(d[0], d[1], rng=rng)
        self.dec_up1 = ConvT2d(d[1], d[2], rng=rng)
        self.dec_up2 = ConvT2d(d[2], d[3], rng=rng)
        self.out_conv = Conv2d(d[3], 1, rng=rng)
        self.disc = ConvDiscriminator(rng, base_channels=config.disc_channels,
                                      stages=config.disc_stages)

    def generator_parameters(self) -> list:
        """Encoder + decoder weights (everything the rec/adv/swap losses train)."""
        return [t for name, t in self.named_parameters() if not name.startswith("disc.")]

    def discriminator_parameters(self) -> list:
        return [t for name, t in self.named_parameters() if name.startswith("disc.")]


def _check_extent(x: np.ndarray, extent: int):
    if x.ndim != 2 or x.shape != (extent, extent):
        raise DimensionError(
            f"autoencoder expects a {extent}x{extent} image, got shape {x.shape}")


def encode(x, state: AEState) -> LatentCode:
    """Image -> LatentCode. Deterministic and differentiable."""
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    _check_extent(t.values, state.config.input_extent)
    h = as_batch(t)
    for block in state.enc_blocks:
        h = ad.max_pool2d(ad.relu(block(h)), 2)
    b = state.config.bottleneck_extent
    s = ad.relu(state.str_up1(h, output_size=(2 * b, 2 * b)))
    s = state.str_up2(s, output_size=(4 * b, 4 * b))
    z_str = ad.reshape(s, (4 * b, 4 * b))
    pooled = ad.mean(h, axis=(2, 3))  # [1, C]
    z_tex = ad.reshape(state.tex_head(pooled), (state.config.z_tex_dim,))
    return LatentCode(z_str=z_str, z_tex=z_tex)


def generate(code: LatentCode, state: AEState) -> Tensor:
    """LatentCode -> image at the encoder's input extent."""
    cfg = state.config
    s_ext = cfg.z_str_extent
    if code.z_str.shape != (s_ext, s_ext):
        raise DimensionError(
            f"structure code must be {s_ext}x{s_ext}, got {code.z_str.shape}")
    if code.z_tex.shape != (cfg.z_tex_dim,):
        raise DimensionError(
            f"texture code must have {cfg.z_tex_dim} entries, got {code.z_tex.shape}")
    s = ad.reshape(code.z_str, (1, 1, s_ext, s_ext))
    str_feat = state.merge_str(s)
    tex_feat = state.merge_tex(ad.reshape(code.z_tex, (1, cfg.z_tex_dim)))
    tex_feat = ad.reshape(tex_feat, (1, tex_feat.shape[1], 1, 1))
    h = ad.relu(str_feat + tex_feat)
    h = ad.relu(state.dec_conv1(h))
    h = ad.relu(state.dec_up1(h, output_size=(2 * s_ext, 2 * s_ext)))
    h = ad.relu(state.dec_up2(h, output_size=(4 * s_ext, 4 * s_ext)))
    out = state.out_conv(h)
    return ad.reshape(out, (cfg.input_extent, cfg.input_extent))


def swap_codes(a: LatentCode, b: LatentCode) -> LatentCode:
    """Structure from a, texture from b. Pure recombination."""
    return LatentCode(z_str=a.z_str, z_tex=b.z_tex)


def rec_loss(x, x_hat) -> Tensor:
    """Mean absolute difference per pixel."""
    ref = np.asarray(x.values if isinstance(x, Tensor) else x, dtype=np.float64)
    if ref.shape != tuple(x_hat.shape):
        raise DimensionError(
            f"reconstruction shape {tuple(x_hat.shape)} does not match input {ref.shape}")
    return ad.mean(ad.absolute(ad.sub(x_hat, ref)))


def adv_loss(d_out) -> Tensor:
    """-log D averaged over the batch, with D clamped away from zero."""
    t = d_out if isinstance(d_out, Tensor) else Tensor(np.asarray(d_out, dtype=np.float64))
    return ad.mean(-ad.log(ad.clamp(t, EPS_PROB, 1.0)))


def swap_gan_loss(d_out_on_hybrid) -> Tensor:
    """Same functional form as adv_loss, scored on structure/texture hybrids."""
    return adv_loss(d_out_on_hybrid)


def disent_total_loss(rec, adv, swap):
    """rec + 0.7 adv + 0.7 swap. Tensor-aware; plain floats stay floats."""
    if any(isinstance(v, Tensor) for v in (rec, adv, swap)):
        return ad.add(rec, ad.add(ad.mul(ADV_WEIGHT, adv), ad.mul(SWAP_WEIGHT, swap)))
    return float(rec) + ADV_WEIGHT * float(adv) + SWAP_WEIGHT * float(swap)


def _disc_loss(d_real: Tensor, d_fakes: list) -> Tensor:
    """Non-saturating discriminator objective: -log D(real) minus the mean
    of log(1 - D(fake)) over the generated images."""
    loss = ad.mean(-ad.log(ad.clamp(d_real, EPS_PROB, 1.0)))
    share = 1.0 / len(d_fakes)
    for fake in d_fakes:
        flipped = ad.log(ad.clamp(1.0 - fake, EPS_PROB, 1.0))
        loss = loss - share * ad.mean(flipped)
    return loss


def disentangle_train_step(x1, x2, state: AEState, gen_opt, disc_opt) -> dict:
    """One alternating GAN update from an image pair.

    Generator/encoder step minimizes rec + 0.7 adv + 0.7 swap where adv
    scores the reconstruction of x1 and swap scores the hybrid built from
    x1's structure and x2's texture; discriminator step then separates x1
    from both generated images (detached).
    """
    a1 = np.asarray(x1, dtype=np.float64)
    a2 = np.asarray(x2, dtype=np.float64)
    if a1.shape == a2.shape and np.array_equal(a1, a2):
        raise SamplingError("swap training needs two distinct images, got an identical pair")

    code1 = encode(a1, state)
    code2 = encode(a2, state)
    recon = generate(code1, state)
    hybrid = generate(swap_codes(code1, code2), state)
    rec = rec_loss(a1, recon)
    adv = adv_loss(state.disc(as_batch(recon)))
    swap = swap_gan_loss(state.disc(as_batch(hybrid)))
    total = disent_total_loss(rec, adv, swap)
    state.zero_grad()
    ad.backward(total)
    gen_opt.step()

    d_real = state.disc(as_batch(a1))
    d_fake_rec = state.disc(as_batch(recon.detach()))
    d_fake_hyb = state.disc(as_batch(hybrid.detach()))
    disc = _disc_loss(d_real, [d_fake_rec, d_fake_hyb])
    state.zero_grad()
    ad.backward(disc)
    disc_opt.step()

    return {"rec": rec.item(), "adv": adv.item(), "swap": swap.item(),
            "total": total.item(), "disc": disc.item()}
