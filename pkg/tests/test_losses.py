import numpy as np
import pytest

from udehaze import losses
from udehaze.losses import LossConfig
from udehaze.tensor import Tensor, blockwise_dct, dct_basis


def brute_dct_loss(j, g, sizes=(8, 16, 32), weights=(0.1, 0.8, 1.0)):
    """Tile-by-tile DCT with explicit loops over images, channels and tiles."""
    total = 0.0
    for n, w in zip(sizes, weights):
        b = dct_basis(n)
        per_tile = []
        for img in range(j.shape[0]):
            for c in range(j.shape[1]):
                for i in range(0, j.shape[2], n):
                    for k in range(0, j.shape[3], n):
                        d = j[img, c, i:i + n, k:k + n] - g[img, c, i:i + n, k:k + n]
                        per_tile.append(np.abs(b @ d @ b.T).sum())
        total += w * np.mean(per_tile)
    return total


# L1

def test_l1_examples():
    g = np.full((1, 3, 4, 4), 0.5)
    assert losses.loss_l1(g, g).item() == 0.0
    assert losses.loss_l1(g + 0.1, g).item() == pytest.approx(0.1, abs=1e-15)
    half = g.copy()
    half[:, :, :2] += 0.2
    assert losses.loss_l1(half, g).item() == pytest.approx(0.1, abs=1e-15)


def test_l1_shape_mismatch():
    with pytest.raises(ValueError):
        losses.loss_l1(np.zeros((1, 3, 4, 4)), np.zeros((1, 3, 4, 8)))


# DCT

@pytest.mark.parametrize("n", [8, 16, 32])
def test_dct_basis_orthonormal(n):
    b = dct_basis(n)
    assert np.abs(b.T @ b - np.eye(n)).max() < 1e-10


def test_dct_of_zero_and_constant_patch():
    assert not blockwise_dct(Tensor(np.zeros((1, 1, 8, 8))), 8).data.any()
    coeffs = blockwise_dct(Tensor(np.full((1, 1, 8, 8), 0.3)), 8).data[0, 0, 0, 0]
    assert coeffs[0, 0] == pytest.approx(8 * 0.3, abs=1e-14)
    rest = coeffs.copy()
    rest[0, 0] = 0
    assert np.abs(rest).max() < 1e-14


def test_dct_parseval(rng):
    patch = rng.standard_normal((1, 1, 16, 16))
    coeffs = blockwise_dct(Tensor(patch), 16).data
    assert abs(np.linalg.norm(coeffs) - np.linalg.norm(patch)) < 1e-9


def test_dct_unsupported_patch():
    with pytest.raises(ValueError):
        blockwise_dct(Tensor(np.zeros((1, 1, 12, 12))), 5)


def test_dct_loss_constant_offset_example():
    g = np.full((1, 3, 32, 32), 0.4)
    assert losses.loss_dct(g + 0.1, g).item() == pytest.approx(4.56, abs=1e-12)
    assert losses.loss_dct(g, g).item() == 0.0


def test_dct_loss_single_tile_difference():
    g = np.zeros((1, 3, 64, 64))
    j = g.copy()
    j[0, 1, 8:16, 40:48] = 0.25
    assert abs(losses.loss_dct(j, g).item() - brute_dct_loss(j, g)) < 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_dct_loss_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    j, g = rng.uniform(size=(2, 3, 64, 64)), rng.uniform(size=(2, 3, 64, 64))
    assert abs(losses.loss_dct(j, g).item() - brute_dct_loss(j, g)) < 1e-9


def test_dct_loss_zero_only_at_equality(rng):
    g = rng.uniform(size=(1, 3, 32, 32))
    j = g.copy()
    j[0, 2, 31, 0] += 1e-6
    assert losses.loss_dct(j, g).item() > 0


def test_dct_loss_needs_divisible_size():
    with pytest.raises(ValueError, match="divisible"):
        losses.loss_dct(np.zeros((1, 3, 40, 40)), np.zeros((1, 3, 40, 40)))


# forward consistency

def test_fwd_is_zero_at_truth(rng):
    j = rng.uniform(size=(1, 3, 8, 8))
    t = rng.uniform(0.01, 1, size=j.shape)
    a = np.array([[0.45, 0.6, 0.75]])
    img = j * t + a[:, :, None, None] * (1 - t)
    assert losses.loss_fwd(img, j, t, a).item() < 1e-9


def test_fwd_without_haze_is_l1(rng):
    j, img = rng.uniform(size=(1, 3, 8, 8)), rng.uniform(size=(1, 3, 8, 8))
    assert losses.loss_fwd(img, j, np.ones_like(j), [[0.5, 0.5, 0.5]]).item() == pytest.approx(
        losses.loss_l1(j, img).item(), abs=1e-15)


def test_fwd_collapses_when_radiance_is_atmospheric_light(rng):
    a = np.array([[0.4, 0.6, 0.8]])
    j = np.broadcast_to(a[:, :, None, None], (1, 3, 8, 8)).copy()
    img = rng.uniform(size=j.shape)
    expected = np.abs(j - img).mean()
    assert losses.loss_fwd(img, j, rng.uniform(size=j.shape), a).item() == pytest.approx(expected, abs=1e-15)


# atmospheric light regularizer

def test_a_reg_inactive():
    a = np.array([0.4, 0.6, 0.8])
    assert losses.loss_a_reg(a, a, np.array([0.3, 0.3, 0.3])).item() == 0.0


def test_a_reg_ordering_hinge():
    a = np.array([0.6, 0.6, 0.8])
    assert losses.loss_a_reg(a, a, np.zeros(3)).item() == pytest.approx(0.002, abs=1e-15)


def test_a_reg_brightness_hinge():
    a = np.array([0.4, 0.6, 0.8])
    i_mean = np.array([0.3, 0.65, 0.3])
    assert losses.loss_a_reg(a, a, i_mean).item() == pytest.approx(0.005, abs=1e-15)


def test_a_reg_anchor_is_channel_mean():
    a = np.array([0.4, 0.6, 0.8])
    assert losses.loss_a_reg(a, a + np.array([0.03, 0.0, 0.0]), np.zeros(3)).item() == pytest.approx(0.01)


def test_a_reg_shape_check():
    with pytest.raises(ValueError):
        losses.loss_a_reg(np.zeros((2, 3)), np.zeros((1, 3)), np.zeros((2, 3)))


# attenuation regularizer

@pytest.mark.parametrize("beta, expected", [
    ((1.0, 0.5, 0.2), 0.0),
    ((0.5, 0.5, 0.5), 0.02),
    ((2.5, 0.5, 0.2), 0.05),
    ((1.0, 0.5, 0.01), 0.1 * 0.04),
])
def test_beta_reg_examples(beta, expected):
    assert losses.loss_beta_reg(np.array(beta)).item() == pytest.approx(expected, abs=1e-15)


def test_beta_reg_zero_set(rng):
    for _ in range(200):
        b_b = rng.uniform(0.05, 1.9)
        b_g = rng.uniform(b_b + 0.01, 1.95)
        b_r = rng.uniform(b_g + 0.01, 2.0)
        assert losses.loss_beta_reg(np.array([b_r, b_g, b_b])).item() == 0.0
    assert losses.loss_beta_reg(np.array([0.3, 0.6, 0.1])).item() > 0


# total

def test_total_examples():
    zero = {name: Tensor(0.0) for name in losses.TERMS}
    assert losses.loss_total(zero).total == 0.0
    ones = {name: Tensor(1.0) for name in losses.TERMS}
    out = losses.loss_total(ones)
    assert out.total == pytest.approx(3.0, abs=1e-15)
    assert out.as_dict()["lambdas"] == [1.5, 0.8, 0.5, 0.1, 0.1]


def test_without_dct():
    cfg = LossConfig().without("dct")
    assert cfg.lambdas == (1.5, 0.0, 0.5, 0.1, 0.1)
    out = losses.loss_total({name: Tensor(2.0) for name in losses.TERMS}, cfg)
    assert out.dct == 2.0
    assert out.total == pytest.approx(2 * (1.5 + 0.5 + 0.1 + 0.1))


def test_without_unknown_term():
    with pytest.raises(ValueError, match="unknown"):
        LossConfig().without("ssim")


def test_config_validation():
    with pytest.raises(ValueError):
        LossConfig(lambdas=(1.0, -1.0, 0.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        LossConfig(dct_weights=(1.0, 1.0))


def test_batch_is_mean_of_samples(rng):
    n = 3
    j, g = rng.uniform(size=(n, 3, 32, 32)), rng.uniform(size=(n, 3, 32, 32))
    t = rng.uniform(0.1, 1, size=j.shape)
    a = rng.uniform(0.3, 1, size=(n, 3))
    a_cl = rng.uniform(0.3, 1, size=(n, 3))
    i_mean = rng.uniform(0.2, 0.9, size=(n, 3))
    checks = [
        (losses.loss_l1(j, g), [losses.loss_l1(j[k:k + 1], g[k:k + 1]) for k in range(n)]),
        (losses.loss_dct(j, g), [losses.loss_dct(j[k:k + 1], g[k:k + 1]) for k in range(n)]),
        (losses.loss_fwd(g, j, t, a), [losses.loss_fwd(g[k:k + 1], j[k:k + 1], t[k:k + 1], a[k:k + 1])
                                       for k in range(n)]),
        (losses.loss_a_reg(a, a_cl, i_mean), [losses.loss_a_reg(a[k], a_cl[k], i_mean[k]) for k in range(n)]),
    ]
    for batch_value, singles in checks:
        assert batch_value.item() == pytest.approx(np.mean([s.item() for s in singles]), abs=1e-13)


@pytest.mark.parametrize("seed", range(5))
def test_terms_non_negative(seed):
    rng = np.random.default_rng(seed)
    j, g = rng.uniform(size=(2, 3, 32, 32)), rng.uniform(size=(2, 3, 32, 32))
    terms = {
        "l1": losses.loss_l1(j, g),
        "dct": losses.loss_dct(j, g),
        "fwd": losses.loss_fwd(g, j, rng.uniform(size=j.shape), rng.uniform(0.3, 1, size=(2, 3))),
        "a_reg": losses.loss_a_reg(rng.uniform(0.3, 1, size=(2, 3)), rng.uniform(size=(2, 3)),
                                   rng.uniform(size=(2, 3))),
        "beta_reg": losses.loss_beta_reg(rng.uniform(-1, 3, size=3)),
    }
    out = losses.loss_total(terms)
    assert min(out.l1, out.dct, out.fwd, out.a_reg, out.beta_reg) >= 0
