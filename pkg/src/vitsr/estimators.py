"""Estimator façade over the functional core: transformer features as a
transformer, the swapped autoencoder as an invertible transformer, and the
SR GAN as a fit/predict upscaler.

Constructor arguments are stored verbatim (validation happens in fit), all
learned state lives in trailing-underscore attributes, and get_params /
set_params / clone behave as usual for this style of API.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from . import disentangle as dz
from . import srnet, vit
from .data import PatchPair, degrade
from .errors import ConfigurationError
from .nn import ConvDiscriminator
from .optim import Adam, AdamW
from .validation import as_image_stack, as_int_labels, require_extent


class ViTFeatureEncoder(TransformerMixin, BaseEstimator):
    """Transformer feature extractor finetuned on an image-class pretext.

    fit(X, y) trains the encoder and its classification head with AdamW on
    cross-entropy; transform(X) returns pooled features [n, embed_dim].
    """

    def __init__(self, extent=32, patch_size=8, embed_dim=16, layers=2, heads=2,
                 mlp_hidden=32, num_classes=3, lr=1e-4, weight_decay=0.01,
                 epochs=3, batch_size=4, seed=0):
        self.extent = extent
        self.patch_size = patch_size
        self.embed_dim = embed_dim
        self.layers = layers
        self.heads = heads
        self.mlp_hidden = mlp_hidden
        self.num_classes = num_classes
        self.lr = lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed

    def _config(self) -> vit.ViTConfig:
        return vit.ViTConfig(input_extents=(self.extent, self.extent),
                             patch_size=self.patch_size, embed_dim=self.embed_dim,
                             layers=self.layers, heads=self.heads,
                             mlp_hidden=self.mlp_hidden,
                             num_classes=self.num_classes)

    def fit(self, X, y):
        X = as_image_stack(X)
        y = as_int_labels(y, self.num_classes, len(X))
        for img in X:
            require_extent(img, self.extent)
        rng = np.random.default_rng(self.seed)
        state = vit.ViTState(self._config(), np.random.default_rng(self.seed))
        opt = AdamW(state.parameters(), lr=self.lr, weight_decay=self.weight_decay)
        n = len(X)
        batch = max(1, min(self.batch_size, n))
        for _ in range(self.epochs):
            for _ in range(max(1, n // batch)):
                picks = rng.choice(n, size=batch, replace=False)
                loss = None
                for i in picks:
                    logits = vit.pretext_logits(
                        vit.encode_features(X[i], state), state.pretext_head)
                    ce = vit.cross_entropy(logits, int(y[i]))
                    loss = ce if loss is None else ad.add(loss, ce)
                loss = ad.mul(1.0 / batch, loss)
                state.zero_grad()
                ad.backward(loss)
                opt.step()
        state.freeze()
        self.state_ = state
        self.n_features_ = self.embed_dim
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self)
        X = as_image_stack(X)
        out = np.empty((len(X), self.embed_dim))
        for i, img in enumerate(X):
            require_extent(img, self.extent)
            out[i] = vit.encode_features(img, self.state_).values
        return out


class DisentanglingAutoencoder(TransformerMixin, BaseEstimator):
    """Swapped autoencoder exposed as an invertible transformer.

    transform(X) returns flattened (z_str, z_tex) codes side by side;
    inverse_transform regenerates images from such rows.
    """

    def __init__(self, extent=16, channels=(8, 8, 4, 4), z_tex_dim=8,
                 disc_channels=4, disc_stages=2, gen_lr=2e-3, disc_lr=2e-4,
                 epochs=3, seed=0):
        self.extent = extent
        self.channels = channels
        self.z_tex_dim = z_tex_dim
        self.disc_channels = disc_channels
        self.disc_stages = disc_stages
        self.gen_lr = gen_lr
        self.disc_lr = disc_lr
        self.epochs = epochs
        self.seed = seed

    def _config(self) -> dz.AEConfig:
        return dz.AEConfig(input_extent=self.extent, channels=tuple(self.channels),
                           z_tex_dim=self.z_tex_dim,
                           disc_channels=self.disc_channels,
                           disc_stages=self.disc_stages)

    def fit(self, X, y=None):
        X = as_image_stack(X)
        if len(X) < 2:
            raise ConfigurationError(
                "swapped-autoencoder training needs at least 2 images")
        for img in X:
            require_extent(img, self.extent)
        rng = np.random.default_rng(self.seed)
        state = dz.AEState(self._config(), np.random.default_rng(self.seed))
        gen_opt = Adam(state.generator_parameters(), lr=self.gen_lr)
        disc_opt = Adam(state.discriminator_parameters(), lr=self.disc_lr)
        n = len(X)
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for i in order:
                j = int(rng.choice([k for k in range(n) if k != i]))
                dz.disentangle_train_step(X[int(i)], X[j], state, gen_opt, disc_opt)
        state.freeze()
        self.state_ = state
        self.str_extent_ = self._config().z_str_extent
        self.n_features_ = self.str_extent_ ** 2 + self.z_tex_dim
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self)
        X = as_image_stack(X)
        out = np.empty((len(X), self.n_features_))
        for i, img in enumerate(X):
            require_extent(img, self.extent)
            code = dz.encode(img, self.state_)
            out[i] = np.concatenate([code.z_str.values.ravel(),
                                     code.z_tex.values])
        return out

    def inverse_transform(self, Z) -> np.ndarray:
        check_is_fitted(self)
        Z = np.asarray(Z, dtype=np.float64)
        if Z.ndim != 2 or Z.shape[1] != self.n_features_:
            raise ConfigurationError(
                f"expected code rows of width {self.n_features_}, got {Z.shape}")
        s = self.str_extent_
        out = np.empty((len(Z), self.extent, self.extent))
        for i, row in enumerate(Z):
            code = dz.LatentCode(
                z_str=ad.Tensor(row[:s * s].reshape(s, s)),
                z_tex=ad.Tensor(row[s * s:]))
            out[i] = dz.generate(code, self.state_).values
        return out


class SuperResolver(BaseEstimator):
    """GAN upscaler with transformer/autoencoder feature anchoring.

    fit(X) takes HR images, degrades them internally by `scale`, and trains
    the generator; predict(X) upscales LR images. Fitted extractors can be
    passed in (vit_encoder / autoencoder); fresh frozen ones are built
    otherwise.
    """

    def __init__(self, scale=2, residual_blocks=2, base_channels=8,
                 disc_channels=4, disc_stages=2, lr=1e-4, disc_lr=1e-5,
                 lambda_vit=1.0, lambda_str=1.0, lambda_tex=0.9,
                 epochs=3, batch_size=2, seed=0,
                 vit_encoder=None, autoencoder=None):
        self.scale = scale
        self.residual_blocks = residual_blocks
        self.base_channels = base_channels
        self.disc_channels = disc_channels
        self.disc_stages = disc_stages
        self.lr = lr
        self.disc_lr = disc_lr
        self.lambda_vit = lambda_vit
        self.lambda_str = lambda_str
        self.lambda_tex = lambda_tex
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.vit_encoder = vit_encoder
        self.autoencoder = autoencoder

    def _extractor_states(self, hr_extent: int):
        if self.vit_encoder is not None:
            check_is_fitted(self.vit_encoder)
            vstate = self.vit_encoder.state_
        else:
            patch = max(1, hr_extent // 4)
            cfg = vit.ViTConfig(input_extents=(hr_extent, hr_extent),
                                patch_size=patch, embed_dim=8, layers=1,
                                heads=2, mlp_hidden=12)
            vstate = vit.ViTState(cfg, np.random.default_rng(self.seed + 10))
            vstate.freeze()
        if self.autoencoder is not None:
            check_is_fitted(self.autoencoder)
            astate = self.autoencoder.state_
        else:
            acfg = dz.AEConfig(input_extent=hr_extent, channels=(4, 4, 4, 4),
                               z_tex_dim=8, disc_channels=4, disc_stages=2)
            astate = dz.AEState(acfg, np.random.default_rng(self.seed + 11))
            astate.freeze()
        return vstate, astate

    def fit(self, X, y=None):
        X = as_image_stack(X)
        hr_extent = X.shape[1]
        vstate, astate = self._extractor_states(hr_extent)
        rng = np.random.default_rng(self.seed)
        config = srnet.GeneratorConfig(scale=self.scale,
                                       residual_blocks=self.residual_blocks,
                                       base_channels=self.base_channels)
        generator = srnet.Generator(config, np.random.default_rng(self.seed))
        disc = ConvDiscriminator(np.random.default_rng(self.seed + 1),
                                 base_channels=self.disc_channels,
                                 stages=self.disc_stages)
        gen_opt = Adam(generator.parameters(), lr=self.lr)
        disc_opt = Adam(disc.parameters(), lr=self.disc_lr)
        weights = srnet.LossWeights(vit=self.lambda_vit, structure=self.lambda_str,
                                    texture=self.lambda_tex)
        pairs = [PatchPair(lr=degrade(hr, self.scale), hr=hr, scale=self.scale,
                           pair_id=str(i)) for i, hr in enumerate(X)]
        targets = srnet.extract_feature_targets([p.lr for p in pairs],
                                                vstate, astate, self.scale)
        n = len(pairs)
        batch = max(1, min(self.batch_size, n))
        for _ in range(self.epochs):
            for _ in range(max(1, n // batch)):
                picks = rng.choice(n, size=batch, replace=False)
                srnet.sr_train_step([pairs[i] for i in picks], generator, disc,
                                    vstate, astate, gen_opt, disc_opt,
                                    weights=weights,
                                    targets=[targets[i] for i in picks])
        self.generator_ = generator
        self.discriminator_ = disc
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self)
        X = as_image_stack(X)
        h, w = X.shape[1], X.shape[2]
        out = np.empty((len(X), self.scale * h, self.scale * w))
        for i, img in enumerate(X):
            out[i] = srnet.sr_generate(img, self.generator_).values
        return out
