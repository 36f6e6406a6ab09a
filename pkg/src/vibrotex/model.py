"""Conditional adversarial autoencoder for vibration spectrograms.

Four networks cooperate: an encoder maps normalized spectrogram segments to
a latent vector, a generator reconstructs segments from latent vectors with
a class-label plane injected as an extra feature channel, a spectrogram
discriminator judges (segment, label) pairs, and a two-headed latent
network both discriminates encodings from Gaussian prior samples and
classifies encodings.

Per training batch, in order:
  1. spectrogram discriminator update (smoothed real vs generated pairs)
  2. latent discriminator update (prior samples real, encodings fake)
  3. joint encoder/generator/classifier update minimizing
     recon_weight * MSE + tv_weight * TV + adversarial terms + classification

Training is deterministic given (dataset, config, seed): all randomness
flows from one seeded generator in a fixed draw order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nnet
from .corpus import LabeledDataset, PipelineConfig
from .dsp import NormStats, Spectrogram
from .nnet import (
    AdamState,
    Conv2d,
    Dense,
    LeakyRelu,
    Network,
    PixelShuffle,
    Relu,
    Reshape,
    Residual,
    Sigmoid,
    Tanh,
    adam_step,
    loss_bce,
    loss_cross_entropy,
    loss_mse,
    loss_total_variation,
    smoothed_targets,
)

CHECKPOINT_MAGIC = b"VBTXCKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; segment shape must match the dataset."""

    latent_dim: int
    n_classes: int
    seg_shape: tuple[int, int]
    enc_ch: int = 8
    enc_hidden: int = 128
    gen_ch: int = 16
    gen_feat: int = 16
    gen_up_ch: int = 8
    disc_ch: int = 8
    trunk_width: int = 64

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be positive")
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        object.__setattr__(self, "seg_shape", tuple(self.seg_shape))

    @property
    def upscale_stages(self) -> int:
        h, w = self.seg_shape
        stages = 0
        while stages < 2 and h % 2 == 0 and w % 2 == 0:
            h //= 2
            w //= 2
            stages += 1
        return stages

    @property
    def base_shape(self) -> tuple[int, int]:
        f = 2**self.upscale_stages
        return self.seg_shape[0] // f, self.seg_shape[1] // f


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters for the adversarial autoencoder."""

    recon_weight: float = 100.0
    tv_weight: float = 10.0
    batch_size: int = 128
    lr_gen: float = 2e-4
    lr_spec_disc: float = 2e-4
    lr_encoder: float = 1e-3
    lr_latent: float = 1e-3
    lr_decay: float = 0.95
    epochs: int = 50
    soft_scale: float = 0.3
    seed: int = 0
    adv_spec_weight: float = 1.0
    adv_latent_weight: float = 1.0
    class_weight: float = 1.0
    prior_moment_weight: float = 5.0
    classifier_updates_trunk: bool = True

    def __post_init__(self):
        if min(self.recon_weight, self.tv_weight, self.adv_spec_weight,
               self.adv_latent_weight, self.class_weight) < 0:
            raise ValueError("loss weights must be nonnegative")
        if min(self.lr_gen, self.lr_spec_disc, self.lr_encoder, self.lr_latent) <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def toy_train_config() -> TrainConfig:
    """Frozen benchmark recipe for the toy profile."""
    return TrainConfig(epochs=26, batch_size=128, seed=7, prior_moment_weight=5.0)


def full_model_config(n_classes: int) -> ModelConfig:
    """The full-scale profile: latent 128, 48 x 320 segments."""
    return ModelConfig(latent_dim=128, n_classes=n_classes, seg_shape=(48, 320))


def toy_model_config(n_classes: int = 5) -> ModelConfig:
    """Reduced profile used by the fast benchmarks: latent 16, 24 x 64."""
    return ModelConfig(latent_dim=16, n_classes=n_classes, seg_shape=(24, 64))


def micro_model_config() -> ModelConfig:
    """Smallest useful instance, sized for finite-difference checks."""
    return ModelConfig(
        latent_dim=4,
        n_classes=2,
        seg_shape=(6, 8),
        enc_ch=2,
        enc_hidden=8,
        gen_ch=4,
        gen_feat=4,
        gen_up_ch=4,
        disc_ch=2,
        trunk_width=8,
    )


def _down3(h: int, w: int) -> tuple[int, int]:
    for _ in range(3):
        h = (h + 1) // 2
        w = (w + 1) // 2
    return h, w


def _build_networks(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Network]:
    h, w = cfg.seg_shape
    c, gf = cfg.enc_ch, cfg.gen_feat
    h3, w3 = _down3(h, w)
    h0, w0 = cfg.base_shape

    encoder = Network([
        Conv2d(1, c, 3, 2, 1, rng), Relu(),
        Conv2d(c, 2 * c, 3, 2, 1, rng), Relu(),
        Conv2d(2 * c, 4 * c, 3, 2, 1, rng), Relu(),
        Reshape((-1,)),
        Dense(4 * c * h3 * w3, cfg.enc_hidden, rng), Relu(),
        Dense(cfg.enc_hidden, cfg.latent_dim, rng),
    ])

    gen_head = Network([
        Dense(cfg.latent_dim, cfg.gen_ch * h0 * w0, rng), Relu(),
        Reshape((cfg.gen_ch, h0, w0)),
    ])
    gen_label_embed = Network([Dense(cfg.n_classes, h0 * w0, rng)])

    body: list = [Conv2d(cfg.gen_ch + 1, gf, 3, 1, 1, rng), Relu()]
    for _ in range(2):
        body.append(Residual([
            Conv2d(gf, gf, 3, 1, 1, rng), Relu(),
            Conv2d(gf, gf, 3, 1, 1, rng),
        ]))
    ch = gf
    for _ in range(cfg.upscale_stages):
        body += [Conv2d(ch, 4 * cfg.gen_up_ch, 3, 1, 1, rng), PixelShuffle(2), Relu()]
        ch = cfg.gen_up_ch
    body += [Conv2d(ch, 1, 3, 1, 1, rng), Tanh()]
    gen_body = Network(body)

    dc = cfg.disc_ch
    dh, dw = h, w
    layers: list = []
    channels = [2, dc, 2 * dc, 4 * dc, 4 * dc]
    for i in range(4):
        layers += [Conv2d(channels[i], channels[i + 1], 3, 2, 1, rng), LeakyRelu(0.2)]
        dh, dw = (dh + 1) // 2, (dw + 1) // 2
    layers += [Reshape((-1,)), Dense(4 * dc * dh * dw, 1, rng), Sigmoid()]
    spec_disc = Network(layers)
    disc_label_embed = Network([Dense(cfg.n_classes, h * w, rng)])

    t = cfg.trunk_width
    latent_trunk = Network([
        Dense(cfg.latent_dim, t, rng), LeakyRelu(0.2),
        Dense(t, t, rng), LeakyRelu(0.2),
    ])
    latent_disc_head = Network([Dense(t, 1, rng), Sigmoid()])
    latent_class_head = Network([Dense(t, cfg.n_classes, rng)])

    return {
        "encoder": encoder,
        "gen_head": gen_head,
        "gen_label_embed": gen_label_embed,
        "gen_body": gen_body,
        "disc_label_embed": disc_label_embed,
        "spec_disc": spec_disc,
        "latent_trunk": latent_trunk,
        "latent_disc_head": latent_disc_head,
        "latent_class_head": latent_class_head,
    }


class TextureGan:
    """The trained artifact: networks plus normalization and pipeline info."""

    def __init__(
        self,
        config: ModelConfig,
        networks: dict[str, Network],
        norm_stats: NormStats,
        pipeline: PipelineConfig,
    ):
        self.config = config
        self.networks = networks
        self.norm_stats = norm_stats
        self.pipeline = pipeline

    # -- inference ---------------------------------------------------------

    def _one_hot(self, labels: np.ndarray) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.intp)
        if np.any(labels < 0) or np.any(labels >= self.config.n_classes):
            raise ValueError(
                f"label out of range for {self.config.n_classes} classes"
            )
        eye = np.zeros((labels.size, self.config.n_classes))
        eye[np.arange(labels.size), labels] = 1.0
        return eye

    def _check_batch(self, x: np.ndarray) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 2
        if single:
            x = x[None]
        if x.ndim != 3 or x.shape[1:] != self.config.seg_shape:
            raise ValueError(
                f"expected segments of shape {self.config.seg_shape}, got {x.shape}"
            )
        return x, single

    def encode(self, x) -> np.ndarray:
        """Latent vectors for normalized segments (h, w) or (N, h, w)."""
        if isinstance(x, Spectrogram):
            if not x.normalized:
                raise ValueError("encode expects normalized spectrograms")
            x = x.magnitudes
        batch, single = self._check_batch(x)
        z, _ = self.networks["encoder"].forward(batch[:, None])
        return z[0] if single else z

    def _label_plane(self, one_hot: np.ndarray, embed: str, shape: tuple[int, int]):
        plane, _ = self.networks[embed].forward(one_hot)
        return plane.reshape(one_hot.shape[0], 1, *shape)

    def generate(self, z, labels) -> np.ndarray:
        """Normalized segments in [-1, 1] for latent vectors and labels."""
        z = np.asarray(z, dtype=np.float64)
        single = z.ndim == 1
        if single:
            z = z[None]
            labels = np.atleast_1d(labels)
        if z.shape[1] != self.config.latent_dim:
            raise ValueError(
                f"latent dimension {z.shape[1]} != model {self.config.latent_dim}"
            )
        one_hot = self._one_hot(labels)
        feat, _ = self.networks["gen_head"].forward(z)
        plane = self._label_plane(one_hot, "gen_label_embed", self.config.base_shape)
        x, _ = self.networks["gen_body"].forward(np.concatenate([feat, plane], axis=1))
        out = x[:, 0]
        return out[0] if single else out

    def discriminate_spec(self, x, labels) -> np.ndarray:
        """Probability that (segment, label) pairs are real."""
        batch, single = self._check_batch(x)
        one_hot = self._one_hot(np.atleast_1d(labels))
        plane = self._label_plane(one_hot, "disc_label_embed", self.config.seg_shape)
        p, _ = self.networks["spec_disc"].forward(
            np.concatenate([batch[:, None], plane], axis=1)
        )
        return float(p[0, 0]) if single else p[:, 0]

    def latent_discriminate_classify(self, z) -> tuple[np.ndarray, np.ndarray]:
        """(real-probability, class logits) for latent vectors."""
        z = np.asarray(z, dtype=np.float64)
        single = z.ndim == 1
        if single:
            z = z[None]
        if z.shape[1] != self.config.latent_dim:
            raise ValueError(
                f"latent dimension {z.shape[1]} != model {self.config.latent_dim}"
            )
        trunk, _ = self.networks["latent_trunk"].forward(z)
        prob, _ = self.networks["latent_disc_head"].forward(trunk)
        logits, _ = self.networks["latent_class_head"].forward(trunk)
        if single:
            return float(prob[0, 0]), logits[0]
        return prob[:, 0], logits

    def generate_spectrogram(self, z, label: int) -> Spectrogram:
        """Single generated segment wrapped as a normalized spectrogram."""
        mags = self.generate(z, label)
        return Spectrogram(
            magnitudes=mags,
            freq_resolution=self.pipeline.sample_rate / self.pipeline.stft.frame_length,
            time_resolution=self.pipeline.stft.hop_length / self.pipeline.sample_rate,
            normalized=True,
        )

    # -- parameter bookkeeping ---------------------------------------------

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for name, net in self.networks.items():
            for i, p in enumerate(net.params):
                out.append((f"{name}.{i}", p))
        return out

    def params_hash(self) -> str:
        h = hashlib.sha256()
        for name, p in self.named_params():
            h.update(name.encode())
            h.update(p.tobytes())
        return h.hexdigest()


def build_model(
    config: ModelConfig,
    norm_stats: NormStats,
    pipeline: PipelineConfig,
    seed: int = 0,
) -> TextureGan:
    rng = np.random.default_rng(seed)
    return TextureGan(config, _build_networks(config, rng), norm_stats, pipeline)


# ---------------------------------------------------------------------------
# Loss-and-gradient blocks (pure given pre-drawn randomness; each block is
# finite-difference checked in the tests)
# ---------------------------------------------------------------------------


def spec_disc_loss(model, x, one_hot, x_fake, targets_real, targets_fake):
    """Spectrogram-discriminator objective and gradients for its params."""
    nets = model.networks
    plane_out, plane_caches = nets["disc_label_embed"].forward(one_hot)
    plane = plane_out.reshape(-1, 1, *model.config.seg_shape)

    real_in = np.concatenate([x[:, None], plane], axis=1)
    fake_in = np.concatenate([x_fake[:, None], plane], axis=1)
    p_real, caches_r = nets["spec_disc"].forward(real_in)
    p_fake, caches_f = nets["spec_disc"].forward(fake_in)
    loss_r, g_r = loss_bce(p_real[:, 0], targets_real)
    loss_f, g_f = loss_bce(p_fake[:, 0], targets_fake)

    gin_r, grads_r = nets["spec_disc"].backward(caches_r, g_r[:, None])
    gin_f, grads_f = nets["spec_disc"].backward(caches_f, g_f[:, None])
    disc_grads = [a + b for a, b in zip(grads_r, grads_f)]
    g_plane = (gin_r[:, 1] + gin_f[:, 1]).reshape(one_hot.shape[0], -1)
    _, embed_grads = nets["disc_label_embed"].backward(plane_caches, g_plane)
    return loss_r + loss_f, {"spec_disc": disc_grads, "disc_label_embed": embed_grads}


def latent_disc_loss(model, z_prior, z_enc, targets_real, targets_fake):
    """Latent-discriminator objective and gradients for trunk + disc head."""
    nets = model.networks
    tr_r, c_tr = nets["latent_trunk"].forward(z_prior)
    tr_f, c_tf = nets["latent_trunk"].forward(z_enc)
    p_r, c_hr = nets["latent_disc_head"].forward(tr_r)
    p_f, c_hf = nets["latent_disc_head"].forward(tr_f)
    loss_r, g_r = loss_bce(p_r[:, 0], targets_real)
    loss_f, g_f = loss_bce(p_f[:, 0], targets_fake)

    gtr_r, head_grads_r = nets["latent_disc_head"].backward(c_hr, g_r[:, None])
    gtr_f, head_grads_f = nets["latent_disc_head"].backward(c_hf, g_f[:, None])
    _, trunk_grads_r = nets["latent_trunk"].backward(c_tr, gtr_r)
    _, trunk_grads_f = nets["latent_trunk"].backward(c_tf, gtr_f)
    return loss_r + loss_f, {
        "latent_trunk": [a + b for a, b in zip(trunk_grads_r, trunk_grads_f)],
        "latent_disc_head": [a + b for a, b in zip(head_grads_r, head_grads_f)],
    }


def egc_loss(model, x, labels, cfg: TrainConfig):
    """Joint encoder/generator/classifier objective.

    Returns (terms, grads) where terms holds every unweighted loss term and
    grads covers the encoder, generator (head, body, label embed), latent
    classification head, and the trunk's classification-route gradient.
    Discriminator parameters are read but not updated here.
    """
    nets = model.networks
    mcfg = model.config
    n = x.shape[0]
    one_hot = model._one_hot(labels)

    # forward: z = E(x), x_hat = G(z, y)
    z, enc_caches = nets["encoder"].forward(x[:, None])
    feat, head_caches = nets["gen_head"].forward(z)
    gplane_out, gplane_caches = nets["gen_label_embed"].forward(one_hot)
    gplane = gplane_out.reshape(n, 1, *mcfg.base_shape)
    body_in = np.concatenate([feat, gplane], axis=1)
    x_hat4, body_caches = nets["gen_body"].forward(body_in)
    x_hat = x_hat4[:, 0]

    # reconstruction + smoothness
    mse, g_mse = loss_mse(x_hat, x)
    tv, g_tv = loss_total_variation(x_hat4)

    # fool the spectrogram discriminator (its params frozen here)
    dplane_out, _ = nets["disc_label_embed"].forward(one_hot)
    dplane = dplane_out.reshape(n, 1, *mcfg.seg_shape)
    disc_in = np.concatenate([x_hat4, dplane], axis=1)
    p_spec, disc_caches = nets["spec_disc"].forward(disc_in)
    adv_s, g_adv_s = loss_bce(p_spec[:, 0], np.ones(n))

    # fool the latent discriminator; classify the encoding
    trunk_out, trunk_caches = nets["latent_trunk"].forward(z)
    p_lat, dh_caches = nets["latent_disc_head"].forward(trunk_out)
    logits, ch_caches = nets["latent_class_head"].forward(trunk_out)
    adv_z, g_adv_z = loss_bce(p_lat[:, 0], np.ones(n))
    ce, g_ce = loss_cross_entropy(logits, labels)
    # optional prior pull: batch mean of each coordinate to 0 plus the
    # per-coordinate std to 1. The |sigma - 1| force stays finite as the
    # cloud shrinks, so (unlike the adversarial term or a plain variance
    # penalty) it cannot stall at a collapsed encoding.
    mu = z.mean(axis=0)
    sigma = np.sqrt(z.var(axis=0) + 1e-8)
    moments = float(mu @ mu + np.mean(np.abs(sigma - 1.0)))

    terms = {"mse": mse, "tv": tv, "adv_spec": adv_s, "adv_latent": adv_z,
             "class_ce": ce, "prior_moments": moments}

    # backward into x_hat
    g_xhat4 = cfg.recon_weight * g_mse[:, None] + cfg.tv_weight * g_tv
    if cfg.adv_spec_weight > 0:
        gin_disc, _ = nets["spec_disc"].backward(
            disc_caches, cfg.adv_spec_weight * g_adv_s[:, None]
        )
        g_xhat4 = g_xhat4 + gin_disc[:, :1]

    g_body_in, body_grads = nets["gen_body"].backward(body_caches, g_xhat4)
    g_feat = g_body_in[:, : mcfg.gen_ch]
    g_gplane = g_body_in[:, mcfg.gen_ch :].reshape(n, -1)
    gz_gen, head_grads = nets["gen_head"].backward(head_caches, g_feat)
    _, gembed_grads = nets["gen_label_embed"].backward(gplane_caches, g_gplane)

    # backward into z through the latent head
    g_trunk_cls, class_head_grads = nets["latent_class_head"].backward(
        ch_caches, cfg.class_weight * g_ce
    )
    gz_latent = np.zeros_like(z)
    trunk_grads_cls = [np.zeros_like(p) for p in nets["latent_trunk"].params]
    if cfg.class_weight > 0:
        gz_cls, cls_route_grads = nets["latent_trunk"].backward(trunk_caches, g_trunk_cls)
        gz_latent = gz_latent + gz_cls
        if cfg.classifier_updates_trunk:
            trunk_grads_cls = cls_route_grads
    if cfg.adv_latent_weight > 0:
        g_trunk_adv, _ = nets["latent_disc_head"].backward(
            dh_caches, cfg.adv_latent_weight * g_adv_z[:, None]
        )
        gz_adv, _ = nets["latent_trunk"].backward(trunk_caches, g_trunk_adv)
        gz_latent = gz_latent + gz_adv

    gz_total = gz_gen + gz_latent
    if cfg.prior_moment_weight > 0:
        d = z.shape[1]
        g_mu = 2.0 * mu / n
        g_std = np.sign(sigma - 1.0) / d * (z - mu) / (n * sigma)
        gz_total = gz_total + cfg.prior_moment_weight * (g_mu[None, :] + g_std)
    _, enc_grads = nets["encoder"].backward(enc_caches, gz_total)

    grads = {
        "encoder": enc_grads,
        "gen_head": head_grads,
        "gen_body": body_grads,
        "gen_label_embed": gembed_grads,
        "latent_class_head": class_head_grads,
        "latent_trunk": trunk_grads_cls,
    }
    return terms, grads, z, x_hat


def egc_total(terms: dict, cfg: TrainConfig) -> float:
    return (
        cfg.recon_weight * terms["mse"]
        + cfg.tv_weight * terms["tv"]
        + cfg.adv_spec_weight * terms["adv_spec"]
        + cfg.adv_latent_weight * terms["adv_latent"]
        + cfg.class_weight * terms["class_ce"]
        + cfg.prior_moment_weight * terms["prior_moments"]
    )


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def train(
    model: TextureGan, dataset: LabeledDataset, cfg: TrainConfig, on_epoch=None
) -> list[dict]:
    """Train in place; returns per-epoch mean loss terms.

    ``on_epoch(epoch_metrics)`` is called after every epoch when given.
    """
    if len(dataset.segments) == 0:
        raise ValueError("empty dataset")
    if dataset.n_classes != model.config.n_classes:
        raise ValueError(
            f"dataset has {dataset.n_classes} classes, model expects "
            f"{model.config.n_classes}"
        )
    rng = np.random.default_rng(cfg.seed)
    nets = model.networks

    opt_enc = AdamState.for_params(nets["encoder"].params, cfg.lr_encoder)
    gen_params = nets["gen_head"].params + nets["gen_body"].params + nets["gen_label_embed"].params
    opt_gen = AdamState.for_params(gen_params, cfg.lr_gen)
    spec_params = nets["spec_disc"].params + nets["disc_label_embed"].params
    opt_spec = AdamState.for_params(spec_params, cfg.lr_spec_disc)
    dz_params = nets["latent_trunk"].params + nets["latent_disc_head"].params
    opt_dz = AdamState.for_params(dz_params, cfg.lr_latent)
    c_params = nets["latent_trunk"].params + nets["latent_class_head"].params
    opt_c = AdamState.for_params(c_params, cfg.lr_latent)

    d = model.config.latent_dim
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset.segments))
        sums: dict[str, float] = {}
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            batch_idx = order[start : start + cfg.batch_size]
            x = dataset.segments[batch_idx]
            y = dataset.labels[batch_idx]
            n = len(batch_idx)
            one_hot = model._one_hot(y)

            # joint forward once: E/G params only change in step 3 below
            terms, egc_grads, z_enc, x_fake = egc_loss(model, x, y, cfg)

            # 1. spectrogram discriminator
            if cfg.adv_spec_weight > 0:
                t_real = smoothed_targets(True, cfg.soft_scale, n, rng)
                t_fake = smoothed_targets(False, cfg.soft_scale, n, rng)
                d_spec, grads = spec_disc_loss(model, x, one_hot, x_fake, t_real, t_fake)
                adam_step(spec_params, grads["spec_disc"] + grads["disc_label_embed"], opt_spec)
            else:
                d_spec = 0.0

            # 2. latent discriminator
            if cfg.adv_latent_weight > 0:
                z_prior = rng.standard_normal((n, d))
                t_real = smoothed_targets(True, cfg.soft_scale, n, rng)
                t_fake = smoothed_targets(False, cfg.soft_scale, n, rng)
                d_lat, grads = latent_disc_loss(model, z_prior, z_enc, t_real, t_fake)
                adam_step(dz_params, grads["latent_trunk"] + grads["latent_disc_head"], opt_dz)
            else:
                d_lat = 0.0

            # 3. encoder / generator / classifier joint step (grads were
            # computed against the pre-update discriminators; the functional
            # ordering matches the alternation contract because E/G/C params
            # were untouched by steps 1-2)
            adam_step(nets["encoder"].params, egc_grads["encoder"], opt_enc)
            adam_step(
                gen_params,
                egc_grads["gen_head"] + egc_grads["gen_body"] + egc_grads["gen_label_embed"],
                opt_gen,
            )
            adam_step(
                c_params, egc_grads["latent_trunk"] + egc_grads["latent_class_head"], opt_c
            )

            record = dict(terms)
            record["d_spec"] = d_spec
            record["d_latent"] = d_lat
            record["egc_total"] = egc_total(terms, cfg)
            for key, value in record.items():
                if not np.isfinite(value):
                    raise FloatingPointError(
                        f"non-finite loss term {key!r} at epoch {epoch}, "
                        f"batch {n_batches}"
                    )
                sums[key] = sums.get(key, 0.0) + value
            n_batches += 1

        opt_dz.lr *= cfg.lr_decay
        opt_c.lr *= cfg.lr_decay
        history.append({k: v / n_batches for k, v in sums.items()} | {"epoch": epoch})
        if on_epoch is not None:
            on_epoch(history[-1])
    return history


# ---------------------------------------------------------------------------
# Checkpoint format: magic, version, JSON header, raw parameters, checksum
# ---------------------------------------------------------------------------


def save_checkpoint(model: TextureGan, path) -> None:
    names, blobs, manifest = [], [], []
    for name, p in model.named_params():
        names.append(name)
        blobs.append(np.ascontiguousarray(p, dtype=np.float64).tobytes())
        manifest.append({"name": name, "shape": list(p.shape)})
    header = {
        "model_config": asdict(model.config),
        "norm_stats": {
            "min_value": model.norm_stats.min_value,
            "max_value": model.norm_stats.max_value,
        },
        "pipeline": model.pipeline.to_dict(),
        "params": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    payload = (
        CHECKPOINT_MAGIC
        + struct.pack("<I", CHECKPOINT_VERSION)
        + struct.pack("<Q", len(header_bytes))
        + header_bytes
        + b"".join(blobs)
    )
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(digest)


def load_checkpoint(path) -> TextureGan:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(CHECKPOINT_MAGIC) + 12 + 32:
        raise ValueError("checkpoint truncated")
    payload, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise ValueError("checkpoint checksum mismatch (corrupt or truncated file)")
    if not payload.startswith(CHECKPOINT_MAGIC):
        raise ValueError("not a model checkpoint (bad magic bytes)")
    off = len(CHECKPOINT_MAGIC)
    (version,) = struct.unpack_from("<I", payload, off)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version {version} unsupported")
    off += 4
    (header_len,) = struct.unpack_from("<Q", payload, off)
    off += 8
    header = json.loads(payload[off : off + header_len].decode())
    off += header_len

    mc = header["model_config"]
    mc["seg_shape"] = tuple(mc["seg_shape"])
    config = ModelConfig(**mc)
    stats = NormStats(**header["norm_stats"])
    pipeline = PipelineConfig.from_dict(header["pipeline"])
    model = build_model(config, stats, pipeline, seed=0)

    by_name = {name: p for name, p in model.named_params()}
    for entry in header["params"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in by_name:
            raise ValueError(f"unknown parameter {name!r} in checkpoint")
        p = by_name[name]
        if p.shape != shape:
            raise ValueError(f"parameter {name!r} shape {shape} != expected {p.shape}")
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        p[...] = np.frombuffer(payload[off : off + nbytes], dtype=np.float64).reshape(shape)
        off += nbytes
    if off != len(payload):
        raise ValueError("checkpoint has trailing bytes")
    return model
