"""Parameter containers and small layers shared by the networks.

A Module is a plain object whose Tensor attributes (and nested Modules,
including inside lists) are its parameters, discovered in attribute
insertion order so checkpoint layouts and optimizer walks stay
deterministic.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DimensionError


class Module:
    def named_parameters(self, prefix: str = ""):
        for name, attr in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(attr, Tensor):
                yield key, attr
            elif isinstance(attr, Module):
                yield from attr.named_parameters(f"{key}.")
            elif isinstance(attr, (list, tuple)):
                for i, item in enumerate(attr):
                    if isinstance(item, Tensor):
                        yield f"{key}.{i}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(f"{key}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        return self

    def frozen(self) -> bool:
        return all(not p.requires_grad for p in self.parameters())

    def zero_(self):
        for p in self.parameters():
            p.values = np.zeros_like(p.values)
        return self

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.values for name, p in self.named_parameters()}

    def load_state(self, arrays: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        if set(own) != set(arrays):
            missing = sorted(set(own) - set(arrays))
            extra = sorted(set(arrays) - set(own))
            raise ConfigurationError(
                f"checkpoint does not match model: missing {missing}, unexpected {extra}")
        for name, p in own.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.values.shape:
                raise ConfigurationError(
                    f"checkpoint tensor {name} has shape {arr.shape}, model expects {p.values.shape}")
            p.values = arr.copy()
        return self


class Linear(Module):
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator,
                 bias: bool = True, scale: float | None = None):
        if scale is None:
            scale = float(np.sqrt(1.0 / fan_in))
        self.w = Tensor(rng.normal(0.0, scale, (fan_in, fan_out)), requires_grad=True)
        self.b = Tensor(np.zeros(fan_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = ad.matmul(x, self.w)
        return out if self.b is None else ad.add(out, self.b)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int = 3, stride: int = 1,
                 padding: int | None = None, rng: np.random.Generator | None = None,
                 bias: bool = True):
        self.stride = stride
        self.padding = (k - 1) // 2 if padding is None else padding
        scale = float(np.sqrt(2.0 / (c_in * k * k)))
        values = rng.normal(0.0, scale, (c_out, c_in, k, k)) if rng is not None \
            else np.zeros((c_out, c_in, k, k))
        self.w = Tensor(values, requires_grad=True)
        self.b = Tensor(np.zeros((c_out, 1, 1)), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = ad.conv2d(x, self.w, stride=self.stride, padding=self.padding)
        return out if self.b is None else ad.add(out, self.b)


# exact 2x bilinear interpolation expressed as a stride-2 k=5 p=2
# transposed conv (phase weights 0.75/0.25 under the half-pixel mapping)
_BILINEAR_TAPS = np.array([0.0, 0.25, 0.75, 0.75, 0.25])


class ConvT2d(Module):
    """Transposed conv; doubles the spatial extents when stride=2."""

    def __init__(self, c_in: int, c_out: int, k: int = 5, stride: int = 2,
                 padding: int | None = None, rng: np.random.Generator | None = None,
                 bias: bool = True, bilinear_init: bool = False):
        self.stride = stride
        self.padding = (k - 1) // 2 if padding is None else padding
        scale = float(np.sqrt(2.0 / (c_in * k * k)))
        values = rng.normal(0.0, scale, (c_in, c_out, k, k)) if rng is not None \
            else np.zeros((c_in, c_out, k, k))
        if bilinear_init:
            if k != 5 or stride != 2 or self.padding != 2:
                raise ConfigurationError("bilinear_init requires k=5, stride=2, padding=2")
            values = values * 0.01
            kernel2d = np.outer(_BILINEAR_TAPS, _BILINEAR_TAPS)
            for c in range(min(c_in, c_out)):
                values[c, c] = kernel2d
        self.w = Tensor(values, requires_grad=True)
        self.b = Tensor(np.zeros((c_out, 1, 1)), requires_grad=True) if bias else None

    def __call__(self, x: Tensor, output_size: tuple[int, int] | None = None) -> Tensor:
        out = ad.conv2d(x, self.w, stride=self.stride, padding=self.padding,
                        transposed=True, output_size=output_size)
        return out if self.b is None else ad.add(out, self.b)


class BatchNorm2d(Module):
    """Normalizes each channel over batch and spatial axes using the
    statistics of the current batch (no running averages; inference on a
    fixed input is therefore deterministic)."""

    def __init__(self, channels: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones((channels, 1, 1)), requires_grad=True)
        self.bias = Tensor(np.zeros((channels, 1, 1)), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4:
            raise DimensionError(f"BatchNorm2d expects [B,C,H,W], got {x.shape}")
        mu = ad.mean(x, axis=(0, 2, 3), keepdims=True)
        centered = ad.sub(x, mu)
        var = ad.mean(ad.mul(centered, centered), axis=(0, 2, 3), keepdims=True)
        normed = ad.div(centered, ad.sqrt(ad.add(var, self.eps)))
        return ad.add(ad.mul(normed, self.gain), self.bias)


class ConvDiscriminator(Module):
    """Real/fake probability head: strided 3x3 convs doubling the channel
    count, global average pool, linear, sigmoid."""

    def __init__(self, rng: np.random.Generator, base_channels: int = 64,
                 stages: int = 3, in_channels: int = 1):
        if stages < 1:
            raise ConfigurationError(f"discriminator needs at least one stage, got {stages}")
        self.entry = Conv2d(in_channels, base_channels, k=3, stride=1, rng=rng)
        ch = base_channels
        self.stages = []
        for _ in range(stages):
            self.stages.append(Conv2d(ch, 2 * ch, k=3, stride=2, padding=1, rng=rng))
            ch *= 2
        self.head = Linear(ch, 1, rng)
        self.min_extent = 2 ** stages

    def __call__(self, x: Tensor) -> Tensor:
        """x: [B,H,W] or [B,1,H,W] -> probabilities [B]."""
        if x.ndim == 3:
            x = ad.reshape(x, (x.shape[0], 1, x.shape[1], x.shape[2]))
        if x.ndim != 4:
            raise DimensionError(f"discriminator expects a batch of images, got {x.shape}")
        if min(x.shape[2], x.shape[3]) < self.min_extent:
            raise DimensionError(
                f"discriminator input {x.shape[2]}x{x.shape[3]} below minimum {self.min_extent}")
        h = ad.relu(self.entry(x))
        for conv in self.stages:
            h = ad.relu(conv(h))
        pooled = ad.mean(h, axis=(2, 3))  # [B, C]
        return ad.reshape(ad.sigmoid(self.head(pooled)), (x.shape[0],))


def as_batch(images) -> Tensor:
    """[H,W], [B,H,W] array or Tensor -> [B,1,H,W] Tensor."""
    t = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float64))
    if t.ndim == 2:
        return ad.reshape(t, (1, 1) + t.shape)
    if t.ndim == 3:
        return ad.reshape(t, (t.shape[0], 1, t.shape[1], t.shape[2]))
    if t.ndim == 4:
        return t
    raise DimensionError(f"expected image or image batch, got shape {t.shape}")
