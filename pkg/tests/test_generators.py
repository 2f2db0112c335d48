import numpy as np
import pytest

from conftest import toy_table
from popsyn.codec import build_layout, encode
from popsyn.generators import (
    TrainConfig, discriminator_loss, gan_init, gan_noise, gan_train, gan_train_step,
    generator_loss, init_model, synthesize, synthesize_soft, train_model, vae_encode, vae_init,
    vae_loss, vae_train, vae_train_step,
)
from popsyn.nn_core import forward, gradient_check, reconstruction_loss
from popsyn.rng import Rng
from popsyn.survey_data import SurrogateProfile, generate_surrogate

SMALL = TrainConfig(noise_dim=6, latent_dim=3, gan_hidden=(8, 5), disc_hidden=(7, 4),
                    vae_hidden=(9, 6, 4), batch_size=64, epochs=2)


@pytest.fixture(scope="module")
def data():
    t = generate_surrogate(300, 5)
    lay = build_layout(t.schema)
    return lay, encode(t, lay)


def _same(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def test_default_gan_shapes(data):
    lay, _ = data
    m = gan_init(lay, TrainConfig(), seed=1)
    assert m.generator.sizes == [100, 100, 50, 10]
    assert m.discriminator.sizes == [10, 100, 50, 1]
    assert [l.activation for l in m.generator.layers] == ["leaky_relu"] * 2 + ["softmax_blocks"]
    again = gan_init(lay, TrainConfig(), seed=1)
    assert _same(m.generator.params() + m.discriminator.params(),
                 again.generator.params() + again.discriminator.params())


def test_discriminator_range_and_generator_blocks(data):
    lay, enc = data
    m = gan_init(lay, SMALL, seed=2)
    p = m.discriminator(enc.data)
    assert p.shape == (300, 1) and np.all((p > 0) & (p < 1))
    soft = synthesize_soft(m, 200, 3)
    for b in lay.onehot_blocks:
        np.testing.assert_allclose(soft[:, b.offset:b.offset + b.width].sum(1), 1.0, atol=1e-12)
    assert np.all(np.abs(soft[:, 0]) <= 1)


def test_half_discriminator_gives_ln2_losses(data):
    lay, enc = data
    m = gan_init(lay, SMALL, seed=3)
    last = m.discriminator.layers[-1]
    last.weights[:] = 0.0
    last.biases[:] = 0.0
    d, g = gan_train_step(m, enc.data[:50], seed=4)
    assert d == pytest.approx(np.log(2), abs=1e-12)
    # the generator sees D after one Adam step, so only approximately 1/2
    assert g == pytest.approx(np.log(2), abs=1e-2)


def test_train_step_is_deterministic(data):
    lay, enc = data
    a, b = gan_init(lay, SMALL, seed=5), gan_init(lay, SMALL, seed=5)
    la, lb = gan_train_step(a, enc.data[:64], 9), gan_train_step(b, enc.data[:64], 9)
    assert la == lb
    assert _same(a.generator.params(), b.generator.params())
    assert _same(a.discriminator.params(), b.discriminator.params())


def test_small_discriminator_step_descends(data):
    lay, enc = data
    m = gan_init(lay, SMALL.replace(lr_discriminator=1e-6), seed=6)
    real = enc.data[:64]
    nd, _, gd, _ = gan_noise(m, len(real), 11)
    before, grads = discriminator_loss(m, real, nd, gd)
    from popsyn.nn_core import adam_step
    adam_step(m.discriminator.params(), grads, m.d_opt)
    after, _ = discriminator_loss(m, real, nd, gd)
    assert after <= before + 1e-6


def test_discriminator_loss_gradient(data):
    lay, enc = data
    m = gan_init(lay, TrainConfig(), seed=7)
    real = enc.data[:4]
    nd, _, gd, _ = gan_noise(m, 4, 12)
    rep = gradient_check(lambda ps: discriminator_loss(m, real, nd, gd), m.discriminator.params())
    assert rep.passed, rep.worst


@pytest.mark.parametrize("relaxed", [True, False])
def test_generator_loss_gradient(data, relaxed):
    lay, _ = data
    m = gan_init(lay, SMALL, seed=8)
    _, ng, _, gg = gan_noise(m, 4, 13)
    gumbel = gg if relaxed else None
    rep = gradient_check(lambda ps: generator_loss(m, ng, gumbel), m.generator.params())
    assert rep.passed, rep.worst


def test_zero_epochs_changes_nothing(data):
    lay, enc = data
    for kind in ("gan", "vae"):
        m = init_model(kind, lay, SMALL.replace(epochs=0), seed=9)
        nets = (m.generator, m.discriminator) if kind == "gan" else (m.encoder, m.decoder)
        before = [p.copy() for n in nets for p in n.params()]
        log = train_model(m, enc)
        assert len(log) == 0
        assert _same(before, [p for n in nets for p in n.params()])


def test_log_length_and_training_determinism(data):
    lay, enc = data
    cfg = SMALL.replace(epochs=3)
    a, b = gan_init(lay, cfg), gan_init(lay, cfg)
    la, lb = gan_train(a, enc), gan_train(b, enc)
    assert len(la) == 3 and la.series("d_loss") == lb.series("d_loss")
    va = vae_init(lay, cfg)
    assert len(vae_train(va, enc)) == 3


def test_default_vae_shapes(data):
    lay, _ = data
    m = vae_init(lay, TrainConfig(), seed=1)
    assert m.encoder.sizes == [10, 200, 100, 50, 16]
    assert m.decoder.sizes == [8, 50, 100, 200, 10]
    assert all(l.activation == "relu" for l in m.encoder.layers[:-1] + m.decoder.layers[:-1])
    again = vae_init(lay, TrainConfig(), seed=1)
    assert _same(m.params(), again.params())
    out = m.decoder(Rng(1).normal((30, 8)))
    for b in lay.onehot_blocks:
        np.testing.assert_allclose(out[:, b.offset:b.offset + b.width].sum(1), 1.0, atol=1e-12)


def test_zero_eps_uses_the_mean(data):
    lay, enc = data
    m = vae_init(lay, SMALL, seed=2)
    x = enc.data[:10]
    recon, _, _ = vae_loss(m, x, np.zeros((10, SMALL.latent_dim)))
    mu, _ = vae_encode(m, x)
    assert recon == reconstruction_loss(forward(m.decoder, mu)[0], x, lay)[0]


def test_vae_total_loss_gradient(data):
    lay, enc = data
    m = vae_init(lay, SMALL, seed=3)
    x = enc.data[:4]
    eps = Rng(4).normal((4, SMALL.latent_dim))

    def fn(ps):
        r, k, g = vae_loss(m, x, eps)
        return r + k, g

    rep = gradient_check(fn, m.params())
    assert rep.passed, rep.worst


def test_kl_never_negative(data):
    lay, enc = data
    m = vae_init(lay, SMALL, seed=5)
    for s in range(20):
        _, kl = vae_train_step(m, enc.data[s * 10:(s + 1) * 10], seed=s)
        assert kl >= 0


def test_synthesize_contract(data):
    lay, _ = data
    for kind in ("gan", "vae"):
        m = init_model(kind, lay, SMALL, seed=6)
        assert synthesize(m, 0, 1).n_rows == 0
        t = synthesize(m, 10_000, 2)
        assert t.n_rows == 10_000
        t.validate()
        assert t == synthesize(m, 10_000, 2)


def test_config_json_round_trip():
    cfg = SMALL.replace(gumbel_tau=0.5)
    assert TrainConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(ValueError):
        TrainConfig.from_json({"epochs": 3, "momentum": 0.9})
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="single-column ELBO converges to the marginal entropy "
                   "within a few epochs; later epochs are stationary noise (~50% non-increasing)")
def test_vae_reconstruction_curve_mostly_non_increasing():
    t = toy_table(8000, 2000)
    lay = build_layout(t.schema)
    m = vae_init(lay, TrainConfig(seed=0))
    recon = np.array(vae_train(m, encode(t, lay)).series("recon"))
    frac = float(np.mean(np.diff(recon) <= 0))
    print(f"non-increasing epoch pairs: {frac:.3f}")
    assert frac >= 0.8
