"""Training orchestration for the three phases: transformer pretext
finetuning, swapped-autoencoder disentanglement, then the SR GAN with both
earlier networks frozen as feature extractors.

Every run is driven by a flat RunConfig (key=value files plus overrides),
draws all randomness from one seeded generator, writes a checkpoint and a
train/val/test loss CSV per phase, and echoes the exact configuration
beside the outputs.
"""

import csv
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import disentangle as dz
from . import srnet, vit
from .checkpoint import require_checkpoint, save_checkpoint
from .data import PatchPair, degrade
from .errors import ConfigurationError, ValidationError
from .nn import ConvDiscriminator
from .optim import Adam, AdamW

PHASES = ("pretext", "disentangle", "sr")

CKPT_VIT = "vit_pretext"
CKPT_AE = "disentangle"
CKPT_SR_GEN = "sr_generator"
CKPT_SR_DISC = "sr_discriminator"

LOSS_CSV_HEADER = ["epoch", "train_loss", "val_loss", "test_loss"]
SR_COMPONENTS_HEADER = ["epoch", "adv", "vit", "str", "tex"]
CONFIG_SNAPSHOT_NAME = "run_config.txt"


@dataclass(frozen=True)
class RunConfig:
    """Flat knob set for all phases. Defaults are the desk-scale preset;
    the paper-scale preset is the full-size configuration."""

    seed: int = 0
    out_dir: str = "runs"
    preset: str = "desk"
    data_path: str = ""
    val_path: str = ""
    test_path: str = ""
    scale: int = 2
    pretext_epochs: int = 3
    disent_epochs: int = 3
    sr_epochs: int = 3
    steps_per_epoch: int = 0  # 0 -> one pass over the training set
    vit_batch: int = 4
    sr_batch: int = 4
    vit_extent: int = 32
    vit_patch: int = 8
    vit_embed: int = 16
    vit_layers: int = 2
    vit_heads: int = 2
    vit_mlp: int = 32
    vit_classes: int = 3
    vit_lr: float = 1e-4
    vit_weight_decay: float = 0.01
    ae_extent: int = 32
    ae_channels: str = "8,8,4,4"
    ae_z_tex: int = 16
    ae_disc_channels: int = 8
    ae_disc_stages: int = 2
    gan_lr: float = 2e-3
    gan_disc_lr: float = 2e-4
    gan_weight_decay: float = 0.0
    gen_blocks: int = 2
    gen_channels: int = 8
    sr_lr: float = 1e-4
    sr_disc_lr: float = 1e-5
    sr_disc_channels: int = 8
    sr_disc_stages: int = 2
    lambda_vit: float = 1.0
    lambda_str: float = 1.0
    lambda_tex: float = 0.9

    def vit_config(self) -> vit.ViTConfig:
        return vit.ViTConfig(input_extents=(self.vit_extent, self.vit_extent),
                             patch_size=self.vit_patch, embed_dim=self.vit_embed,
                             layers=self.vit_layers, heads=self.vit_heads,
                             mlp_hidden=self.vit_mlp, num_classes=self.vit_classes)

    def ae_config(self) -> dz.AEConfig:
        return dz.AEConfig(input_extent=self.ae_extent,
                           channels=_parse_int_tuple(self.ae_channels),
                           z_tex_dim=self.ae_z_tex,
                           disc_channels=self.ae_disc_channels,
                           disc_stages=self.ae_disc_stages)

    def gen_config(self) -> srnet.GeneratorConfig:
        return srnet.GeneratorConfig(scale=self.scale,
                                     residual_blocks=self.gen_blocks,
                                     base_channels=self.gen_channels)

    def loss_weights(self) -> srnet.LossWeights:
        return srnet.LossWeights(vit=self.lambda_vit, structure=self.lambda_str,
                                 texture=self.lambda_tex)

    def snapshot(self) -> dict:
        """Every knob as a string, in declaration order."""
        return {f.name: str(getattr(self, f.name)) for f in fields(self)}


# full-size configuration: ViT-B/16 extractor, 256x256 autoencoder,
# batch 6 / 20k iterations for pretext, batch 256 / weight decay 0.1 for the
# GAN phases; 1e-4 is the usual GAN learning-rate choice
PRESETS = {
    "desk": {},
    "paper": dict(
        pretext_epochs=100, disent_epochs=100, sr_epochs=80, steps_per_epoch=200,
        vit_batch=6, sr_batch=256,
        vit_extent=256, vit_patch=16, vit_embed=768, vit_layers=12,
        vit_heads=12, vit_mlp=3072, vit_classes=2,
        ae_extent=256, ae_channels="64,64,32,32", ae_z_tex=256,
        ae_disc_channels=64, ae_disc_stages=3,
        gan_lr=1e-4, gan_disc_lr=1e-5, gan_weight_decay=0.1,
        gen_blocks=8, gen_channels=64,
        sr_disc_channels=64, sr_disc_stages=3),
}


def _parse_int_tuple(text: str) -> tuple:
    try:
        return tuple(int(part) for part in str(text).split(","))
    except ValueError:
        raise ConfigurationError(f"expected comma-separated integers, got {text!r}") from None


def make_config(preset: str = "desk", **overrides) -> RunConfig:
    """Preset defaults plus keyword overrides; unknown keys rejected."""
    if preset not in PRESETS:
        raise ConfigurationError(
            f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    settings = dict(PRESETS[preset], preset=preset)
    settings.update(overrides)
    known = {f.name for f in fields(RunConfig)}
    bad = sorted(set(settings) - known)
    if bad:
        raise ConfigurationError(f"unknown config keys: {', '.join(bad)}")
    return RunConfig(**settings)


def parse_config_file(path) -> dict:
    """key=value lines; blank lines and #-comments ignored."""
    path = Path(path)
    settings = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        settings[key.strip()] = value.strip()
    return settings


def apply_settings(config: RunConfig, settings: dict) -> RunConfig:
    """Overlay string settings onto a config, coercing by field type."""
    by_name = {f.name: f for f in fields(RunConfig)}
    coerced = {}
    for key, value in settings.items():
        if key not in by_name:
            raise ConfigurationError(f"unknown config key {key!r}")
        kind = by_name[key].type
        name = kind if isinstance(kind, str) else getattr(kind, "__name__", "str")
        try:
            if name == "int":
                coerced[key] = int(value)
            elif name == "float":
                coerced[key] = float(value)
            else:
                coerced[key] = str(value)
        except ValueError:
            raise ConfigurationError(
                f"config key {key!r} expects {name}, got {value!r}") from None
    return replace(config, **coerced)


def write_config_snapshot(config: RunConfig, path):
    lines = [f"{k}={v}" for k, v in config.snapshot().items()]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class TrainRunRecord:
    """Per-epoch loss curves plus enough context to reproduce the run."""

    phase: str
    seed: int
    epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    config_snapshot: dict = field(default_factory=dict)
    components: list = field(default_factory=list)  # sr phase: per-epoch term means

    @property
    def final_train_loss(self) -> float:
        return self.train_loss[-1]

    def append_epoch(self, epoch: int, train: float, val: float, test: float,
                     secs: float):
        if self.epochs and epoch <= self.epochs[-1]:
            raise ValidationError(
                f"epochs must increase: {epoch} after {self.epochs[-1]}")
        self.epochs.append(epoch)
        self.train_loss.append(train)
        self.val_loss.append(val)
        self.test_loss.append(test)
        self.seconds.append(secs)


def emit_loss_csv(record: TrainRunRecord, path):
    """header + one row per epoch; floats printed at full precision so the
    file parses back to the exact in-memory values."""
    if not record.epochs:
        raise ValidationError("refusing to emit a loss CSV for an empty record")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_CSV_HEADER)
        for i, epoch in enumerate(record.epochs):
            writer.writerow([epoch, str(record.train_loss[i]),
                             str(record.val_loss[i]), str(record.test_loss[i])])


def read_loss_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{"epoch": int(r["epoch"]),
             "train_loss": float(r["train_loss"]),
             "val_loss": float(r["val_loss"]),
             "test_loss": float(r["test_loss"])} for r in rows]


def emit_components_csv(record: TrainRunRecord, path):
    if not record.components:
        raise ValidationError("run record carries no per-term components")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SR_COMPONENTS_HEADER)
        for epoch, parts in zip(record.epochs, record.components):
            writer.writerow([epoch] + [str(parts[k]) for k in SR_COMPONENTS_HEADER[1:]])


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Permutation of range(n) with no fixed points (n >= 2)."""
    if n < 2:
        raise ValidationError(f"derangement needs at least 2 items, got {n}")
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


def _splits(datasets: dict) -> tuple:
    train = list(datasets["train"])
    if not train:
        raise ValidationError("training split is empty")
    val = list(datasets.get("val") or train)
    test = list(datasets.get("test") or train)
    return train, val, test


# ---------------------------------------------------------------------------
# pretext phase

def _pretext_batch_loss(samples, state) -> ad.Tensor:
    total = None
    for image, label in samples:
        logits = vit.pretext_logits(vit.encode_features(image, state),
                                    state.pretext_head)
        ce = vit.cross_entropy(logits, int(label))
        total = ce if total is None else ad.add(total, ce)
    return ad.mul(1.0 / len(samples), total)


def _pretext_eval(samples, state) -> float:
    return float(np.mean([_pretext_batch_loss([s], state).item() for s in samples]))


def _run_pretext(config: RunConfig, datasets: dict, out: Path) -> TrainRunRecord:
    train, val, test = _splits(datasets)
    rng = np.random.default_rng(config.seed)
    state = vit.ViTState(config.vit_config(), np.random.default_rng(config.seed))
    opt = AdamW(state.parameters(), lr=config.vit_lr,
                weight_decay=config.vit_weight_decay)
    record = TrainRunRecord(phase="pretext", seed=config.seed,
                            config_snapshot=config.snapshot())
    batch = min(config.vit_batch, len(train))
    steps = config.steps_per_epoch or max(1, len(train) // batch)
    for epoch in range(1, config.pretext_epochs + 1):
        t0 = time.perf_counter()
        epoch_losses = []
        for _ in range(steps):
            picks = rng.choice(len(train), size=batch, replace=False)
            loss = _pretext_batch_loss([train[i] for i in picks], state)
            state.zero_grad()
            ad.backward(loss)
            opt.step()
            epoch_losses.append(loss.item())
        record.append_epoch(epoch, float(np.mean(epoch_losses)),
                            _pretext_eval(val, state), _pretext_eval(test, state),
                            time.perf_counter() - t0)
    save_checkpoint(out / CKPT_VIT, state.state())
    return record


# ---------------------------------------------------------------------------
# disentanglement phase

def _disent_eval(images, state) -> float:
    """Generator-side total on a fixed rotation pairing; no updates."""
    total = 0.0
    n = len(images)
    for i, x1 in enumerate(images):
        x2 = images[(i + 1) % n]
        code1 = dz.encode(x1, state)
        code2 = dz.encode(x2, state)
        recon = dz.generate(code1, state)
        hybrid = dz.generate(dz.swap_codes(code1, code2), state)
        rec = dz.rec_loss(x1, recon)
        adv = dz.adv_loss(state.disc(dz.as_batch(recon)))
        swap = dz.swap_gan_loss(state.disc(dz.as_batch(hybrid)))
        total += dz.disent_total_loss(rec, adv, swap).item()
    return total / n


def _run_disentangle(config: RunConfig, datasets: dict, out: Path) -> TrainRunRecord:
    train, val, test = _splits(datasets)
    if len(train) < 2:
        raise ValidationError("disentanglement needs at least 2 training images")
    rng = np.random.default_rng(config.seed)
    state = dz.AEState(config.ae_config(), np.random.default_rng(config.seed))
    gen_opt = Adam(state.generator_parameters(), lr=config.gan_lr,
                   weight_decay=config.gan_weight_decay)
    disc_opt = Adam(state.discriminator_parameters(), lr=config.gan_disc_lr,
                    weight_decay=config.gan_weight_decay)
    record = TrainRunRecord(phase="disentangle", seed=config.seed,
                            config_snapshot=config.snapshot())
    n = len(train)
    steps = config.steps_per_epoch or n
    for epoch in range(1, config.disent_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        partner = derangement(n, rng)
        epoch_parts = {k: [] for k in ("rec", "adv", "swap", "total", "disc")}
        for k in range(steps):
            i = int(order[k % n])
            parts = dz.disentangle_train_step(train[i], train[int(partner[i])],
                                              state, gen_opt, disc_opt)
            for key in epoch_parts:
                epoch_parts[key].append(parts[key])
        means = {k: float(np.mean(v)) for k, v in epoch_parts.items()}
        record.components.append({k: means[k] for k in ("rec", "adv", "swap", "disc")})
        record.append_epoch(epoch, means["total"],
                            _disent_eval(val, state), _disent_eval(test, state),
                            time.perf_counter() - t0)
    save_checkpoint(out / CKPT_AE, state.state())
    return record


# ---------------------------------------------------------------------------
# super-resolution phase

def load_extractors(config: RunConfig, out: Path):
    """Rebuild and freeze both extractors from their phase checkpoints."""
    vstate = vit.ViTState(config.vit_config(), np.random.default_rng(0))
    vstate.load_state(require_checkpoint(out / CKPT_VIT, "transformer pretext"))
    vstate.freeze()
    astate = dz.AEState(config.ae_config(), np.random.default_rng(0))
    astate.load_state(require_checkpoint(out / CKPT_AE, "disentanglement"))
    astate.freeze()
    return vstate, astate


def _make_pairs(images, scale: int, prefix: str) -> list:
    pairs = []
    for i, hr in enumerate(images):
        hr = np.asarray(hr, dtype=np.float64)
        pairs.append(PatchPair(lr=degrade(hr, scale), hr=hr, scale=scale,
                               pair_id=f"{prefix}{i}"))
    return pairs


def _sr_eval(pairs, targets, generator, disc, vstate, astate, weights) -> float:
    total = 0.0
    for pair, target in zip(pairs, targets):
        sr = srnet.sr_generate(pair.lr, generator)
        adv = dz.adv_loss(srnet.discriminate(sr, disc))
        vit_term = srnet.vit_feature_loss(target.f_vit, vit.encode_features(sr, vstate))
        l_str, l_tex = srnet.structure_texture_loss(target.code, dz.encode(sr, astate))
        total += srnet.total_sr_loss(adv, vit_term, l_str, l_tex, weights).item()
    return total / len(pairs)


def _run_sr(config: RunConfig, datasets: dict, out: Path) -> TrainRunRecord:
    train, val, test = _splits(datasets)
    hr_extent = int(np.asarray(train[0]).shape[0])
    if hr_extent != config.vit_extent or hr_extent != config.ae_extent:
        raise ConfigurationError(
            f"extractors are sized for {config.vit_extent}/{config.ae_extent} "
            f"inputs but HR images are {hr_extent}; resize the dataset or the configs")
    vstate, astate = load_extractors(config, out)
    rng = np.random.default_rng(config.seed)
    generator = srnet.Generator(config.gen_config(), np.random.default_rng(config.seed))
    disc = ConvDiscriminator(np.random.default_rng(config.seed + 1),
                             base_channels=config.sr_disc_channels,
                             stages=config.sr_disc_stages)
    gen_opt = Adam(generator.parameters(), lr=config.sr_lr,
                   weight_decay=config.gan_weight_decay)
    disc_opt = Adam(disc.parameters(), lr=config.sr_disc_lr,
                    weight_decay=config.gan_weight_decay)
    weights = config.loss_weights()
    train_pairs = _make_pairs(train, config.scale, "train")
    val_pairs = _make_pairs(val, config.scale, "val")
    test_pairs = _make_pairs(test, config.scale, "test")
    train_targets = srnet.extract_feature_targets([p.lr for p in train_pairs],
                                                  vstate, astate, config.scale)
    val_targets = srnet.extract_feature_targets([p.lr for p in val_pairs],
                                                vstate, astate, config.scale)
    test_targets = srnet.extract_feature_targets([p.lr for p in test_pairs],
                                                 vstate, astate, config.scale)
    record = TrainRunRecord(phase="sr", seed=config.seed,
                            config_snapshot=config.snapshot())
    n = len(train_pairs)
    batch = min(config.sr_batch, n)
    steps = config.steps_per_epoch or max(1, n // batch)
    for epoch in range(1, config.sr_epochs + 1):
        t0 = time.perf_counter()
        epoch_parts = {k: [] for k in ("adv", "vit", "str", "tex", "total")}
        for _ in range(steps):
            picks = rng.choice(n, size=batch, replace=False)
            parts = srnet.sr_train_step([train_pairs[i] for i in picks],
                                        generator, disc, vstate, astate,
                                        gen_opt, disc_opt, weights=weights,
                                        targets=[train_targets[i] for i in picks])
            for key in epoch_parts:
                epoch_parts[key].append(parts[key])
        means = {k: float(np.mean(v)) for k, v in epoch_parts.items()}
        record.components.append({k: means[k] for k in ("adv", "vit", "str", "tex")})
        record.append_epoch(
            epoch, means["total"],
            _sr_eval(val_pairs, val_targets, generator, disc, vstate, astate, weights),
            _sr_eval(test_pairs, test_targets, generator, disc, vstate, astate, weights),
            time.perf_counter() - t0)
    save_checkpoint(out / CKPT_SR_GEN, generator.state())
    save_checkpoint(out / CKPT_SR_DISC, disc.state())
    return record


_RUNNERS = {"pretext": _run_pretext, "disentangle": _run_disentangle, "sr": _run_sr}


def run_phase(phase: str, config: RunConfig, datasets: dict) -> TrainRunRecord:
    """Train one phase end to end: fit, evaluate per epoch, write the
    checkpoint, the loss CSV, and the config snapshot under out_dir.

    datasets maps split names (train/val/test) to lists: (image, label)
    tuples for the pretext phase, plain images otherwise (HR images for sr,
    which degrades them internally). Missing val/test fall back to train.
    """
    if phase not in _RUNNERS:
        raise ConfigurationError(f"unknown phase {phase!r}; choose from {PHASES}")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    record = _RUNNERS[phase](config, datasets, out)
    emit_loss_csv(record, out / f"loss_{phase}.csv")
    if phase == "sr" and record.components:
        emit_components_csv(record, out / "sr_components.csv")
    write_config_snapshot(config, out / CONFIG_SNAPSHOT_NAME)
    return record
