import math

import numpy as np
import pytest

from mmdcvae.autodiff import Tensor, grad_check
from mmdcvae.errors import ContractError, DimensionError
from mmdcvae.mmd import KernelSpec
from mmdcvae.model import (
    LatentStats,
    ModelConfig,
    batch_loss,
    config_with,
    cvae_loss,
    decode,
    encode,
    init_params,
    kl_divergence,
    one_hot,
    param_shapes,
    predict_transform,
    reparameterize,
)


def tiny_config(**kwargs):
    base = dict(
        input_dim=5,
        condition_count=2,
        encoder_hidden=(7,),
        z_dim=3,
        g1_dim=4,
        g2_hidden=(6,),
        alpha=1.0,
        eta=1.0,
        beta=1.0,
        kernel=KernelSpec(gammas=(0.1, 1.0, 10.0)),
    )
    base.update(kwargs)
    return ModelConfig(**base)


def zero_params(config):
    rng = np.random.default_rng(0)
    params = init_params(config, rng)
    return params.with_leaves([np.zeros_like(a) for a in params.leaves()])


# ---- config / params plumbing ---------------------------------------------


def test_config_validation():
    with pytest.raises(ContractError):
        tiny_config(condition_count=1)
    with pytest.raises(ContractError):
        tiny_config(mmd_layer="bottleneck")
    with pytest.raises(ContractError):
        tiny_config(eta=0.0)
    with pytest.raises(ContractError):
        tiny_config(z_dim=0)


def test_param_shapes_chain():
    config = tiny_config()
    shapes = dict(param_shapes(config))
    assert shapes["encoder.0.w"] == (7, 7)  # 5 features + 2 conditions
    assert shapes["mu.w"] == (7, 3)
    assert shapes["g1.w"] == (5, 4)  # 3 latent + 2 conditions
    assert shapes["g2.1.w"] == (6, 5)


def test_init_params_matches_layout_and_is_seeded():
    config = tiny_config()
    a = init_params(config, np.random.default_rng(42))
    b = init_params(config, np.random.default_rng(42))
    for (name_a, leaf_a), (name_b, leaf_b) in zip(a.flat(), b.flat()):
        assert name_a == name_b
        assert np.array_equal(leaf_a, leaf_b)
        assert leaf_a.shape == dict(param_shapes(config))[name_a]
    assert all(np.all(leaf == 0) for name, leaf in a.flat() if name.endswith(".b"))


def test_one_hot_basics():
    np.testing.assert_array_equal(one_hot([0, 2, 1], 3), np.eye(3)[[0, 2, 1]])
    with pytest.raises(ContractError):
        one_hot([0, 3], 3)
    with pytest.raises(ContractError):
        one_hot([0.5], 2)


# ---- encode / reparameterize / decode --------------------------------------


def test_encode_zero_params_gives_zero_stats():
    config = tiny_config()
    params = zero_params(config)
    stats = encode(params, config, np.random.default_rng(1).normal(size=(4, 5)), [0, 1, 0, 1])
    assert np.all(stats.mu.data == 0.0)
    assert np.all(stats.logvar.data == 0.0)


def test_encode_output_shapes():
    config = tiny_config()
    params = init_params(config, np.random.default_rng(2))
    stats = encode(params, config, np.zeros((6, 5)), np.zeros(6, dtype=int))
    assert stats.mu.shape == (6, 3)
    assert stats.logvar.shape == (6, 3)


def test_encode_label_out_of_range():
    config = tiny_config()
    params = init_params(config, np.random.default_rng(2))
    with pytest.raises(ContractError):
        encode(params, config, np.zeros((1, 5)), [2])


def test_encode_gradient_passes_grad_check():
    config = tiny_config()
    params = init_params(config, np.random.default_rng(3))
    x = np.random.default_rng(4).normal(size=(3, 5))
    s = np.array([0, 1, 1])

    def build(ts):
        stats = encode(params.with_leaves(ts), config, x, s)
        return (stats.mu.square() + stats.logvar.square()).sum()

    assert grad_check(build, params.leaves(), h=1e-5) < 1e-5


def test_reparameterize_zero_eps_returns_mu():
    stats = LatentStats(Tensor([[1.0, -2.0]]), Tensor([[0.3, 1.1]]))
    z = reparameterize(stats, np.zeros((1, 2)))
    np.testing.assert_array_equal(z.data, [[1.0, -2.0]])


def test_reparameterize_forced_sigma():
    stats = LatentStats(Tensor([[1.0]]), Tensor([[math.log(4.0)]]))
    z = reparameterize(stats, np.array([[0.5]]))
    assert z.item() == pytest.approx(2.0, abs=1e-12)


def test_reparameterize_monte_carlo_mean():
    rng = np.random.default_rng(99)
    n = 100_000
    mu, sigma = 1.3, 0.5
    stats = LatentStats(Tensor(np.full((n, 1), mu)), Tensor(np.full((n, 1), 2 * math.log(sigma))))
    z = reparameterize(stats, rng.standard_normal((n, 1)))
    assert abs(z.data.mean() - mu) < 3 * sigma / math.sqrt(n)


def test_reparameterize_shape_mismatch():
    stats = LatentStats(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    with pytest.raises(DimensionError):
        reparameterize(stats, np.zeros((2, 2)))


def test_decode_zero_params_gives_zero_outputs():
    config = tiny_config()
    params = zero_params(config)
    y1, xhat = decode(params, config, np.ones((3, 3)), [0, 1, 0])
    assert np.all(y1.data == 0.0)
    assert np.all(xhat.data == 0.0)


def test_decode_condition_changes_y1():
    config = tiny_config()
    params = init_params(config, np.random.default_rng(5))
    z = np.random.default_rng(6).normal(size=(2, 3))
    y1_a, _ = decode(params, config, z, [0, 0])
    y1_b, _ = decode(params, config, z, [1, 1])
    assert not np.allclose(y1_a.data, y1_b.data)


def test_decode_chain_gradient_passes_grad_check():
    config = tiny_config()
    params = init_params(config, np.random.default_rng(7))
    z = np.random.default_rng(8).normal(size=(3, 3))
    s = np.array([0, 1, 0])

    def build(ts):
        y1, xhat = decode(params.with_leaves(ts), config, z, s)
        return xhat.square().sum() + y1.mean()

    assert grad_check(build, params.leaves(), h=1e-5) < 1e-5


# ---- losses -----------------------------------------------------------------


def test_kl_zero_for_standard_normal_posterior():
    stats = LatentStats(Tensor(np.zeros((4, 3))), Tensor(np.zeros((4, 3))))
    assert kl_divergence(stats).item() == 0.0


def test_kl_unit_mean_value():
    stats = LatentStats(Tensor([[1.0]]), Tensor([[0.0]]))
    assert kl_divergence(stats).item() == pytest.approx(0.5, abs=1e-12)


def test_kl_log_two_variance_value():
    stats = LatentStats(Tensor([[0.0]]), Tensor([[math.log(2.0)]]))
    assert kl_divergence(stats).item() == pytest.approx(0.5 * (2 - 1 - math.log(2.0)), abs=1e-12)


def test_kl_nonnegative_and_zero_only_at_origin():
    rng = np.random.default_rng(11)
    for _ in range(50):
        stats = LatentStats(Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(3, 4))))
        assert kl_divergence(stats).item() >= 0.0
    near = LatentStats(Tensor([[1e-3]]), Tensor([[0.0]]))
    assert kl_divergence(near).item() > 0.0


def test_cvae_loss_perfect_reconstruction_zero():
    x = Tensor(np.ones((2, 3)))
    stats = LatentStats(Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 2))))
    assert cvae_loss(x, Tensor(np.ones((2, 3))), stats, alpha=1.0, eta=1.0).item() == 0.0


def test_cvae_loss_eta_scales_reconstruction_exactly():
    rng = np.random.default_rng(12)
    x, xhat = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(3, 4)))
    stats = LatentStats(Tensor(np.zeros((3, 2))), Tensor(np.zeros((3, 2))))
    assert cvae_loss(x, xhat, stats, 0.0, 2.0).item() == 2.0 * cvae_loss(x, xhat, stats, 0.0, 1.0).item()


def test_cvae_loss_hand_value():
    x = Tensor([[0.0, 0.0]])
    xhat = Tensor([[1.0, 1.0]])
    stats = LatentStats(Tensor([[1.0]]), Tensor([[0.0]]))
    assert cvae_loss(x, xhat, stats, alpha=1.0, eta=1.0).item() == pytest.approx(1.5, abs=1e-12)


# ---- batch loss --------------------------------------------------------------


def make_batch(config, n=8, seed=20):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, config.input_dim))
    s = rng.integers(0, config.condition_count, size=n)
    s[0], s[1] = 0, 1  # both conditions present
    eps = rng.standard_normal((n, config.z_dim))
    return x, s, eps


def test_batch_loss_beta_zero_equals_cvae_sum():
    config = tiny_config(beta=0.0)
    params = init_params(config, np.random.default_rng(30))
    x, s, eps = make_batch(config)
    total, parts = batch_loss(params, config, x, s, eps)
    assert total.item() == pytest.approx(config.eta * parts.recon + config.alpha * parts.kl, abs=1e-12)


def test_batch_loss_none_layer_equals_y1_with_beta_zero():
    params_seed = np.random.default_rng(31)
    config_none = tiny_config(mmd_layer="none", beta=5.0)
    params = init_params(config_none, params_seed)
    x, s, eps = make_batch(config_none)
    total_none, _ = batch_loss(params, config_none, x, s, eps)
    config_y1 = config_with(config_none, mmd_layer="y1", beta=0.0)
    total_y1, _ = batch_loss(params, config_y1, x, s, eps)
    assert total_none.item() == total_y1.item()


def test_batch_loss_single_condition_skips_mmd():
    config = tiny_config()
    params = init_params(config, np.random.default_rng(32))
    x, _, eps = make_batch(config)
    s = np.zeros(len(x), dtype=int)
    _, parts = batch_loss(params, config, x, s, eps)
    assert parts.mmd == 0.0
    assert parts.mmd_skipped


def test_batch_loss_empty_batch_rejected():
    config = tiny_config()
    params = init_params(config, np.random.default_rng(33))
    with pytest.raises(ContractError):
        batch_loss(params, config, np.zeros((0, 5)), np.zeros(0, dtype=int), np.zeros((0, 3)))


def scalar_loss_oracle(params, config, x, s, eps):
    """Straight-line pure-Python recomputation of batch_loss (no numpy tensor ops)."""
    leaves = {name: leaf.tolist() for name, leaf in params.flat()}
    slope = config.activation_slope

    def affine(row, w, b):
        return [sum(r * w[i][j] for i, r in enumerate(row)) + b[j] for j in range(len(b))]

    def leaky(row):
        return [v if v >= 0 else slope * v for v in row]

    def forward_row(xrow, label, eps_row):
        row = list(xrow) + [1.0 if c == label else 0.0 for c in range(config.condition_count)]
        for i in range(len(config.encoder_hidden)):
            row = leaky(affine(row, leaves[f"encoder.{i}.w"], leaves[f"encoder.{i}.b"]))
        mu = affine(row, leaves["mu.w"], leaves["mu.b"])
        lv = affine(row, leaves["logvar.w"], leaves["logvar.b"])
        z = [m + math.exp(v / 2.0) * e for m, v, e in zip(mu, lv, eps_row)]
        zc = z + [1.0 if c == label else 0.0 for c in range(config.condition_count)]
        y1 = leaky(affine(zc, leaves["g1.w"], leaves["g1.b"]))
        h = y1
        n_g2 = len(config.g2_hidden) + 1
        for i in range(n_g2 - 1):
            h = leaky(affine(h, leaves[f"g2.{i}.w"], leaves[f"g2.{i}.b"]))
        xhat = affine(h, leaves[f"g2.{n_g2 - 1}.w"], leaves[f"g2.{n_g2 - 1}.b"])
        return mu, lv, z, y1, xhat

    recon, kl = 0.0, 0.0
    groups = {}
    for c in sorted(set(int(v) for v in s)):
        rows = [i for i in range(len(s)) if s[i] == c]
        se, sk = 0.0, 0.0
        for i in rows:
            mu, lv, z, y1, xhat = forward_row(x[i], c, eps[i])
            se += sum((a - b) ** 2 for a, b in zip(xhat, x[i]))
            sk += 0.5 * sum(math.exp(v) + m * m - 1 - v for m, v in zip(mu, lv))
            groups.setdefault(c, []).append(z if config.mmd_layer == "z" else y1)
        recon += se / (len(rows) * config.input_dim)
        kl += sk / len(rows)

    total = config.eta * recon + config.alpha * kl
    if config.mmd_layer != "none" and len(groups) >= 2:
        from test_mmd import mmd_loop_oracle

        keys = sorted(groups)
        penalty = sum(
            mmd_loop_oracle(groups[keys[i]], groups[keys[j]], config.kernel.gammas)
            for i in range(len(keys))
            for j in range(i + 1, len(keys))
        )
        total += config.beta * penalty
    return total


def test_batch_loss_matches_scalar_oracle():
    config = tiny_config(alpha=0.7, eta=2.5, beta=1.3)
    params = init_params(config, np.random.default_rng(40))
    x, s, eps = make_batch(config, n=7, seed=41)
    total, _ = batch_loss(params, config, x, s, eps)
    oracle = scalar_loss_oracle(params, config, x, s, eps)
    assert total.item() == pytest.approx(oracle, abs=1e-10)


def test_batch_loss_scalar_oracle_z_layer():
    config = tiny_config(mmd_layer="z", alpha=0.2, eta=1.0, beta=2.0)
    params = init_params(config, np.random.default_rng(42))
    x, s, eps = make_batch(config, n=6, seed=43)
    total, _ = batch_loss(params, config, x, s, eps)
    assert total.item() == pytest.approx(scalar_loss_oracle(params, config, x, s, eps), abs=1e-10)


def test_full_loss_gradient_passes_grad_check():
    config = tiny_config()
    params = init_params(config, np.random.default_rng(50))
    x, s, eps = make_batch(config, n=6, seed=51)

    def build(ts):
        total, _ = batch_loss(params.with_leaves(ts), config, x, s, eps)
        return total

    assert grad_check(build, params.leaves(), h=1e-4) < 1e-5


# ---- prediction ---------------------------------------------------------------


def test_predict_transform_same_condition_is_reconstruction():
    config = tiny_config()
    params = init_params(config, np.random.default_rng(60))
    x = np.random.default_rng(61).normal(size=(4, 5))
    pred = predict_transform(params, config, x, 0, 0)
    stats = encode(params, config, x, np.zeros(4, dtype=int))
    _, xhat = decode(params, config, stats.mu, np.zeros(4, dtype=int))
    np.testing.assert_array_equal(pred, xhat.data)


def test_predict_transform_shape_and_determinism():
    config = tiny_config()
    params = init_params(config, np.random.default_rng(62))
    x = np.random.default_rng(63).normal(size=(5, 5))
    a = predict_transform(params, config, x, 0, 1)
    b = predict_transform(params, config, x, 0, 1)
    assert a.shape == x.shape
    assert np.array_equal(a, b)


def test_predict_transform_label_validation():
    config = tiny_config()
    params = init_params(config, np.random.default_rng(64))
    with pytest.raises(ContractError):
        predict_transform(params, config, np.zeros((1, 5)), 0, 5)
