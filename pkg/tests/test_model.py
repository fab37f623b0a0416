import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pidm.dyaddata import FlameSequence, GroupStats
from pidm.model import (
    ModelConfig,
    decode_agent,
    encode_agent,
    encode_interaction,
    generate,
    init_params,
    kl_divergence,
    loss,
    reparameterize,
)
from pidm.numkernel import Tensor

TINY = ModelConfig(d_model=8, heads=2, ff=16, z_dim=4)


@pytest.fixture(scope="module")
def small():
    # random (non-zero) output head so decoder outputs depend on their inputs
    return init_params(ModelConfig(d_model=16, heads=2, ff=32, z_dim=4), seed=3, zero_output_head=False)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d_model=10, heads=4)
    with pytest.raises(ValueError):
        ModelConfig(layers=4)


def test_init_six_blocks_everywhere_and_finite():
    p = init_params(ModelConfig())
    assert len(p.ea_blocks) == len(p.ei_blocks) == len(p.da_blocks) == 6
    assert all(np.all(np.isfinite(t.data)) for t in p.parameters())
    assert not p.out_w.data.any() and not p.out_b.data.any()
    names = [n for n, _ in p.named_parameters()]
    assert len(names) == len(set(names))


def test_shapes(small):
    rng = np.random.default_rng(0)
    a = rng.standard_normal((100, 59)).astype(np.float32)
    emb = encode_agent(a, small)
    assert emb.shape == (100, 16)
    mu, logvar = encode_interaction(a, a, small)
    assert mu.shape == logvar.shape == (4,)
    out = decode_agent(Tensor(rng.standard_normal(4).astype(np.float32)), emb, small)
    assert out.shape == (100, 59)
    batched = encode_agent(np.stack([a, a]), small)
    assert batched.shape == (2, 100, 16)


def test_eval_mode_determinism(small):
    a = np.random.default_rng(1).standard_normal((20, 59)).astype(np.float32)
    assert np.array_equal(encode_agent(a, small).data, encode_agent(a, small).data)
    m1, l1 = encode_interaction(a, a[::-1], small)
    m2, l2 = encode_interaction(a, a[::-1], small)
    assert np.array_equal(m1.data, m2.data) and np.array_equal(l1.data, l2.data)
    emb = encode_agent(a, small)
    z = Tensor(np.ones(4, dtype=np.float32))
    assert np.array_equal(decode_agent(z, emb, small).data, decode_agent(z, emb, small).data)


def test_permuting_frames_changes_embedding(small):
    a = np.random.default_rng(2).standard_normal((12, 59)).astype(np.float32)
    perm = np.random.default_rng(3).permutation(12)
    e, ep = encode_agent(a, small).data, encode_agent(a[perm], small).data
    # without positions the embedding would be permutation-equivariant
    assert not np.allclose(e[perm], ep, atol=1e-4)


def test_z_reaches_decoder(small):
    emb = encode_agent(np.random.default_rng(4).standard_normal((10, 59)).astype(np.float32), small)
    o1 = decode_agent(Tensor(np.zeros(4, dtype=np.float32)), emb, small).data
    o2 = decode_agent(Tensor(np.full(4, 2.0, dtype=np.float32)), emb, small).data
    assert np.abs(o1 - o2).mean() > 0


def test_input_errors(small):
    with pytest.raises(ValueError):
        encode_agent(np.zeros((5, 58), dtype=np.float32), small)
    with pytest.raises(ValueError):
        encode_interaction(np.zeros((5, 59)), np.zeros((6, 59)), small)
    emb = encode_agent(np.zeros((5, 59), dtype=np.float32), small)
    with pytest.raises(ValueError):
        decode_agent(Tensor(np.zeros(3, dtype=np.float32)), emb, small)


def test_zero_input_latent_golden_values():
    p = init_params(TINY, seed=0, dtype=np.float64)
    mu, logvar = encode_interaction(np.zeros((5, 59)), np.zeros((5, 59)), p)
    np.testing.assert_allclose(
        mu.data, [-1.150784726020293, 0.9231482709115577, -0.4098685037113107, 1.3850129121124455], rtol=1e-9)
    np.testing.assert_allclose(
        logvar.data, [0.13177657933292927, 0.10133099385490303, 0.9476055319495285, 0.6306991581560928], rtol=1e-9)


# -- reparameterization ---------------------------------------------------------


def test_reparameterize_examples():
    mu, lv = np.array([0.3, -1.0]), np.array([0.2, -0.4])
    np.testing.assert_array_equal(reparameterize(mu, lv, np.zeros(2)).z.data, mu)
    eps = np.array([1.5, -0.25])
    np.testing.assert_allclose(reparameterize(np.zeros(2), np.zeros(2), eps).z.data, eps)
    s = reparameterize(mu, lv, eps)
    np.testing.assert_allclose(s.z.data, mu + np.exp(lv / 2) * eps)
    with pytest.raises(ValueError):
        reparameterize(mu, lv, np.zeros(3))


def test_reparameterize_monte_carlo_moments():
    eps = np.random.default_rng(5).standard_normal(10_000)
    z = reparameterize(np.ones(10_000), np.full(10_000, np.log(4.0)), eps).z.data
    assert abs(z.mean() - 1) < 0.05
    assert abs(z.var() - 4) < 0.15


# -- loss -------------------------------------------------------------------------


def T64(x):
    return Tensor(np.asarray(x, dtype=np.float64))


def test_loss_examples():
    f = np.random.default_rng(6).standard_normal((10, 59))
    br = loss(T64(f), f, np.zeros(4), np.zeros(4), 1e-3)
    assert br.values() == (0.0, 0.0, 0.0)
    assert float(kl_divergence(T64([1.0]), T64([0.0])).data) == 0.5
    assert float(loss(T64(f + 0.5), f, np.zeros(1), np.zeros(1)).rec.data) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ValueError):
        loss(T64(f), f[:5], np.zeros(1), np.zeros(1))


def test_kl_batch_average():
    mu = np.array([[1.0, 0.0], [0.0, 0.0]])
    assert float(kl_divergence(T64(mu), T64(np.zeros((2, 2)))).data) == pytest.approx(0.25)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 1.0))
def test_loss_identity_and_kl_nonnegative(seed, lam):
    rng = np.random.default_rng(seed)
    mu, lv = rng.standard_normal(6) * 2, rng.standard_normal(6) * 2
    br = loss(T64(rng.standard_normal((4, 59))), rng.standard_normal((4, 59)), mu, lv, lam)
    total, rec, kl = br.values()
    assert kl >= 0 and rec >= 0
    assert abs(total - (rec + lam * kl)) < 1e-6


# -- generation -------------------------------------------------------------------


def stats_fixture():
    rng = np.random.default_rng(7)
    return GroupStats(rng.standard_normal(59), rng.uniform(0.5, 2.0, 59))


def test_generate_zero_head_predicts_training_mean():
    p = init_params(TINY, seed=1)
    st_ = stats_fixture()
    a = FlameSequence(np.random.default_rng(8).standard_normal((15, 59)).astype(np.float32), 10.0)
    out = generate(a, p, st_, rng_seed=0)
    assert out.frames.shape == (15, 59) and out.fps == 10.0
    np.testing.assert_allclose(out.frames, np.tile(st_.mean, (15, 1)), rtol=1e-6, atol=1e-6)


def test_generate_seeds(small):
    st_ = stats_fixture()
    a = FlameSequence(np.random.default_rng(9).standard_normal((15, 59)).astype(np.float32), 10.0)
    g0, g0b, g1 = generate(a, small, st_, 0), generate(a, small, st_, 0), generate(a, small, st_, 1)
    assert np.array_equal(g0.frames, g0b.frames)
    assert np.abs(g0.frames - g1.frames).mean() > 0
