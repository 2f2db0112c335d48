"""Tabular GAN and VAE over encoded survey rows, plus population synthesis."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from popsyn.codec import EncodedMatrix, decode
from popsyn.errors import EmptyBatch, EmptyData
from popsyn.nn_core import (
    AdamState,
    adam_step,
    backward,
    MlpNetwork,
    bce_loss,
    build_mlp,
    forward,
    kl_standard_normal,
    reconstruction_loss,
)
from popsyn.rng import Rng, derive_seed

# stream tags for derive_seed
_GEN_INIT, _DISC_INIT, _ENC_INIT, _DEC_INIT = 1, 2, 3, 4
_EPOCH_SHUFFLE, _STEP = 11, 12
_DECODE = 21


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 1000
    lr_generator: float = 1e-3
    lr_discriminator: float = 1e-3
    lr_vae: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    noise_dim: int = 100
    latent_dim: int = 8
    gan_hidden: tuple = (100, 50)
    disc_hidden: tuple = (100, 50)
    vae_hidden: tuple = (200, 100, 50)
    leaky_slope: float = 0.2
    gumbel_tau: float = 0.2
    kl_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("gan_hidden", "disc_hidden", "vae_hidden"):
            setattr(self, name, tuple(int(h) for h in getattr(self, name)))
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        for name in ("batch_size", "noise_dim", "latent_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("lr_generator", "lr_discriminator", "lr_vae"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if any(h < 1 for h in self.gan_hidden + self.disc_hidden + self.vae_hidden):
            raise ValueError("hidden sizes must be positive")
        if self.kl_weight < 0:
            raise ValueError("kl_weight must be >= 0")
        if self.gumbel_tau < 0:
            raise ValueError("gumbel_tau must be >= 0")

    def to_json(self):
        d = asdict(self)
        for k in ("gan_hidden", "disc_hidden", "vae_hidden"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_json(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return TrainConfig(**d)


@dataclass
class EpochRecord:
    epoch: int
    losses: dict
    seconds: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def series(self, key):
        return [r.losses[key] for r in self.records]


@dataclass
class GanModel:
    generator: object
    discriminator: object
    noise_dim: int
    layout: object
    config: TrainConfig
    g_opt: AdamState
    d_opt: AdamState

    kind = "gan"


@dataclass
class VaeModel:
    encoder: object
    decoder: object
    latent_dim: int
    layout: object
    config: TrainConfig
    opt: AdamState

    kind = "vae"

    def params(self):
        return self.encoder.params() + self.decoder.params()


def _matrix(train):
    return train.data if isinstance(train, EncodedMatrix) else np.asarray(train, dtype=np.float64)


# --------------------------------------------------------------------------
# GAN
# --------------------------------------------------------------------------

def gan_init(layout, config=None, seed=None):
    config = config or TrainConfig()
    seed = config.seed if seed is None else seed
    if layout.width == 0:
        raise ValueError("layout is empty")
    gen = build_mlp([config.noise_dim, *config.gan_hidden, layout.width], "leaky_relu",
                    "softmax_blocks", derive_seed(seed, _GEN_INIT), config.leaky_slope, layout)
    disc = build_mlp([layout.width, *config.disc_hidden, 1], "leaky_relu", "sigmoid",
                     derive_seed(seed, _DISC_INIT), config.leaky_slope)
    return GanModel(
        gen, disc, config.noise_dim, layout, config,
        AdamState.for_params(gen.params(), config.lr_generator, config.beta1, config.beta2),
        AdamState.for_params(disc.params(), config.lr_discriminator, config.beta1, config.beta2),
    )


def gan_noise(model, m, seed):
    """Noise a train step draws for ``seed``: generator inputs for the
    discriminator and generator updates, then Gumbel noise for each."""
    rng = Rng(seed)
    z_d = rng.normal((m, model.noise_dim))
    z_g = rng.normal((m, model.noise_dim))
    w = model.layout.width
    return z_d, z_g, _gumbel(rng, (m, w)), _gumbel(rng, (m, w))


def _gumbel(rng, shape):
    u = rng.uniform(shape) + 2.0 ** -54  # strictly inside (0, 1)
    return -np.log(-np.log(u))


def generator_forward(model, noise, gumbel=None):
    """Generator rows for the discriminator.

    With ``gumbel`` noise and ``config.gumbel_tau > 0`` each one-hot block is
    the relaxed sample ``softmax((logits + gumbel) / tau)``; otherwise the
    plain softmax.  Returns ``(rows, cache)`` for ``generator_backward``.
    """
    gen = model.generator
    body = MlpNetwork(gen.layers[:-1])
    h, body_cache = forward(body, noise)
    last = gen.layers[-1]
    logits = h @ last.weights.T + last.biases
    tau = model.config.gumbel_tau
    relaxed = gumbel is not None and tau > 0
    z = logits
    if relaxed:
        z = logits.copy()
        for b in model.layout.onehot_blocks:
            sl = slice(b.offset, b.offset + b.width)
            z[:, sl] = (logits[:, sl] + gumbel[:, sl]) / tau
    y = last.activate(z)
    return y, (body, body_cache, h, z, y, relaxed)


def generator_backward(model, cache, grad_rows):
    body, body_cache, h, z, y, relaxed = cache
    last = model.generator.layers[-1]
    dz = last.activate_backward(z, y, grad_rows)
    if relaxed:
        tau = model.config.gumbel_tau
        for b in model.layout.onehot_blocks:
            dz[:, b.offset:b.offset + b.width] /= tau
    grads, _ = backward(body, body_cache, dz @ last.weights)
    return grads + [dz.T @ h, dz.sum(axis=0)]


def discriminator_loss(model, real, noise, gumbel=None):
    """BCE over the stacked [real; G(noise)] batch, labels 1 then 0.

    Returns ``(loss, discriminator grads)``; the generator is not touched.
    """
    fake = generator_forward(model, noise, gumbel)[0]
    x = np.vstack([real, fake])
    t = np.concatenate([np.ones(len(real)), np.zeros(len(fake))])[:, None]
    p, cache = forward(model.discriminator, x)
    loss, gp = bce_loss(p, t)
    grads, _ = backward(model.discriminator, cache, gp)
    return loss, grads


def generator_loss(model, noise, gumbel=None):
    """Non-saturating objective ``-mean ln D(G(noise))`` and generator grads."""
    fake, gcache = generator_forward(model, noise, gumbel)
    p, dcache = forward(model.discriminator, fake)
    loss, gp = bce_loss(p, np.ones_like(p))
    _, dx = backward(model.discriminator, dcache, gp)
    return loss, generator_backward(model, gcache, dx)


def gan_train_step(model, real_batch, seed):
    """One discriminator update (generator frozen), then one generator update
    against the updated discriminator.  Returns pre-update ``(d_loss, g_loss)``."""
    real = _matrix(real_batch)
    if len(real) == 0:
        raise EmptyBatch("empty real batch")
    noise_d, noise_g, gumbel_d, gumbel_g = gan_noise(model, len(real), seed)
    d_loss, d_grads = discriminator_loss(model, real, noise_d, gumbel_d)
    adam_step(model.discriminator.params(), d_grads, model.d_opt)
    g_loss, g_grads = generator_loss(model, noise_g, gumbel_g)
    adam_step(model.generator.params(), g_grads, model.g_opt)
    return d_loss, g_loss


def _batches(n, batch_size, seed, epoch):
    perm = Rng(derive_seed(seed, _EPOCH_SHUFFLE, epoch)).permutation(n)
    for s, start in enumerate(range(0, n, batch_size)):
        yield s, perm[start:start + batch_size]


def gan_train(model, train, config=None):
    config = config or model.config
    data = _matrix(train)
    if len(data) == 0:
        raise EmptyData("no training rows")
    log = TrainLog()
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        d_sum = g_sum = 0.0
        steps = 0
        for s, idx in _batches(len(data), config.batch_size, config.seed, epoch):
            d, g = gan_train_step(model, data[idx], derive_seed(config.seed, _STEP, epoch, s))
            d_sum += d
            g_sum += g
            steps += 1
        log.records.append(EpochRecord(epoch, {"d_loss": d_sum / steps, "g_loss": g_sum / steps},
                                       time.perf_counter() - t0))
    return log


# --------------------------------------------------------------------------
# VAE
# --------------------------------------------------------------------------

def vae_init(layout, config=None, seed=None):
    config = config or TrainConfig()
    seed = config.seed if seed is None else seed
    if layout.width == 0:
        raise ValueError("layout is empty")
    L = config.latent_dim
    enc = build_mlp([layout.width, *config.vae_hidden, 2 * L], "relu", "linear",
                    derive_seed(seed, _ENC_INIT))
    dec = build_mlp([L, *reversed(config.vae_hidden), layout.width], "relu", "softmax_blocks",
                    derive_seed(seed, _DEC_INIT), layout=layout)
    opt = AdamState.for_params(enc.params() + dec.params(), config.lr_vae,
                               config.beta1, config.beta2)
    return VaeModel(enc, dec, L, layout, config, opt)


def vae_encode(model, x):
    h = forward(model.encoder, x)[0]
    return h[:, :model.latent_dim], h[:, model.latent_dim:]


def vae_loss(model, batch, eps, kl_weight=None):
    """Reparameterized ELBO pieces for fixed noise ``eps``.

    Returns ``(recon, kl, grads)`` where grads follow ``model.params()`` and
    are the gradient of ``recon + kl_weight * kl``.
    """
    kl_weight = model.config.kl_weight if kl_weight is None else kl_weight
    x = _matrix(batch)
    L = model.latent_dim
    h, ecache = forward(model.encoder, x)
    mu, log_var = h[:, :L], h[:, L:]
    std = np.exp(0.5 * log_var)
    z = mu + std * eps
    out, dcache = forward(model.decoder, z)
    recon, g_out = reconstruction_loss(out, x, model.layout)
    dec_grads, dz = backward(model.decoder, dcache, g_out)
    kl, (dmu_kl, dlv_kl) = kl_standard_normal(mu, log_var)
    dmu = dz + kl_weight * dmu_kl
    dlv = dz * eps * 0.5 * std + kl_weight * dlv_kl
    enc_grads, _ = backward(model.encoder, ecache, np.hstack([dmu, dlv]))
    return recon, kl, enc_grads + dec_grads


def vae_train_step(model, batch, seed, eps=None):
    """One joint Adam update of encoder and decoder.

    ``eps`` overrides the standard-normal reparameterization noise (test hook);
    ``eps = 0`` makes ``z == mu``.  Returns pre-update ``(recon, kl)``.
    """
    x = _matrix(batch)
    if len(x) == 0:
        raise EmptyBatch("empty batch")
    if eps is None:
        eps = Rng(seed).normal((len(x), model.latent_dim))
    recon, kl, grads = vae_loss(model, x, eps)
    adam_step(model.params(), grads, model.opt)
    return recon, kl


def vae_train(model, train, config=None):
    config = config or model.config
    data = _matrix(train)
    if len(data) == 0:
        raise EmptyData("no training rows")
    log = TrainLog()
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        r_sum = k_sum = 0.0
        steps = 0
        for s, idx in _batches(len(data), config.batch_size, config.seed, epoch):
            r, k = vae_train_step(model, data[idx], derive_seed(config.seed, _STEP, epoch, s))
            r_sum += r
            k_sum += k
            steps += 1
        log.records.append(EpochRecord(epoch, {"recon": r_sum / steps, "kl": k_sum / steps},
                                       time.perf_counter() - t0))
    return log


# --------------------------------------------------------------------------
# synthesis
# --------------------------------------------------------------------------

def init_model(kind, layout, config=None, seed=None):
    if kind == "gan":
        return gan_init(layout, config, seed)
    if kind == "vae":
        return vae_init(layout, config, seed)
    raise ValueError(f"unknown model kind {kind!r}")


def train_model(model, train, config=None):
    if model.kind == "gan":
        return gan_train(model, train, config)
    return vae_train(model, train, config)


def synthesize_soft(model, count, seed):
    """Raw model output rows (softmax blocks / tanh numerics) for ``count`` draws."""
    rng = Rng(seed)
    if model.kind == "gan":
        return forward(model.generator, rng.normal((count, model.noise_dim)))[0]
    return forward(model.decoder, rng.normal((count, model.latent_dim)))[0]


def synthesize(model, count, seed):
    soft = synthesize_soft(model, count, seed)
    return decode(EncodedMatrix(model.layout, soft), "sample", derive_seed(seed, _DECODE))
