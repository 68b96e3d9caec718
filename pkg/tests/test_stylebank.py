"""Style bank tests: init, affinity, projection, orthogonality penalty."""

import numpy as np
import pytest

from styleproj.autodiff import Tensor, grad_check
from styleproj.stylebank import (StyleBank, cosine_affinity, fit_orthogonal, init_bank,
                                 orthogonality_loss, project_style, affinities)
from styleproj.styleops import StyleVector

INV_SOFTPLUS_1 = float(np.log(np.e - 1.0))


def _style(mu, sigma):
    return StyleVector(mu=Tensor(np.asarray(mu, dtype=np.float64)),
                       sigma=Tensor(np.asarray(sigma, dtype=np.float64)))


def _bank_with(mu_rows, sigma_rows=None):
    mu_rows = np.asarray(mu_rows, dtype=np.float64)
    n, c = mu_rows.shape
    bank = init_bank(n, c, 0)
    bank.raw_mu.data[:] = mu_rows
    if sigma_rows is None:
        bank.raw_sigma.data[:] = INV_SOFTPLUS_1  # softplus -> exactly 1
    else:
        bank.raw_sigma.data[:] = np.log(np.expm1(np.asarray(sigma_rows)))
    return bank


def test_init_bank_deterministic():
    a, b = init_bank(8, 16, 42), init_bank(8, 16, 42)
    np.testing.assert_array_equal(a.raw_mu.data, b.raw_mu.data)
    np.testing.assert_array_equal(a.raw_sigma.data, b.raw_sigma.data)


def test_init_bank_sigma_near_one():
    bank = init_bank(2, 4, 0)
    sigma = np.log1p(np.exp(bank.raw_sigma.data))
    assert sigma.min() >= 0.8 and sigma.max() <= 1.2


def test_init_bank_rejects_single_basis():
    with pytest.raises(ValueError):
        init_bank(1, 4, 0)


def test_affinity_self_is_one_one():
    s = _style([0.3, -1.2, 0.5], [1.0, 2.0, 0.5])
    d_mu, d_sigma = cosine_affinity(s, s)
    assert d_mu.item() == pytest.approx(1.0)
    assert d_sigma.item() == pytest.approx(1.0)


def test_affinity_orthogonal_mu_equal_sigma():
    s = _style([1.0, 0.0], [1.0, 1.0])
    b = _style([0.0, 1.0], [1.0, 1.0])
    d_mu, d_sigma = cosine_affinity(s, b)
    assert d_mu.item() == pytest.approx(0.0, abs=1e-12)
    assert d_sigma.item() == pytest.approx(1.0)


def test_affinity_cosine_arithmetic():
    s = _style([1.0, 0.0], [1.0, 1.0])
    b = _style([1.0, 1.0], [1.0, 1.0])
    d_mu, _ = cosine_affinity(s, b)
    assert d_mu.item() == pytest.approx(1.0 / np.sqrt(2.0), abs=1e-12)


def test_affinity_bounded():
    rng = np.random.default_rng(0)
    for _ in range(20):
        s = _style(rng.standard_normal(5), rng.random(5) + 0.1)
        b = _style(rng.standard_normal(5), rng.random(5) + 0.1)
        d_mu, d_sigma = cosine_affinity(s, b)
        assert -1.0 - 1e-12 <= d_mu.item() <= 1.0 + 1e-12
        assert -1.0 - 1e-12 <= d_sigma.item() <= 1.0 + 1e-12


def test_affinity_scale_invariant():
    rng = np.random.default_rng(1)
    s = _style(rng.standard_normal(6), rng.random(6) + 0.1)
    bank = init_bank(3, 6, 2)
    base_mu, base_sigma = affinities(s, bank)
    for alpha in (0.5, 3.0, 117.0):
        scaled = _style(alpha * s.mu.data, alpha * s.sigma.data)
        cos_mu, cos_sigma = affinities(scaled, bank)
        np.testing.assert_allclose(cos_mu.data, base_mu.data, atol=1e-12)
        np.testing.assert_allclose(cos_sigma.data, base_sigma.data, atol=1e-12)


def test_affinity_channel_mismatch_rejected():
    with pytest.raises(ValueError, match="channel"):
        cosine_affinity(_style([1.0], [1.0]), _style([1.0, 2.0], [1.0, 1.0]))


def test_project_equal_affinities_average_bases():
    # two bases mirrored through the style's mu direction: equal affinities
    bank = _bank_with([[1.0, 1.0, 0.0], [1.0, -1.0, 0.0]])
    s = _style([1.0, 0.0, 0.0], [1.0, 1.0, 1.0])
    projected, weights = project_style(s, bank)
    np.testing.assert_allclose(weights.w_mu.data, [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(weights.w_sigma.data, [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(projected.mu.data, [1.0, 0.0, 0.0], atol=1e-12)


def test_project_softmax_arithmetic():
    # engineered affinity gap ln 3 between two bases gives weights (0.25, 0.75)
    cos = Tensor(np.array([0.0, np.log(3.0)]))
    from styleproj.autodiff import softmax
    np.testing.assert_allclose(softmax(cos).data, [0.25, 0.75], atol=1e-12)


def test_project_weight_dominance_for_matching_basis():
    bank = _bank_with([[1.0, 0.0, 0.0, 0.0],
                       [0.0, 1.0, 0.0, 0.0],
                       [0.0, 0.0, 1.0, 0.0]])
    s = _style([1.0, 0.0, 0.0, 0.0], np.ones(4))
    _, weights = project_style(s, bank)
    w = weights.w_mu.data
    assert w[0] == pytest.approx(np.e / (np.e + 2.0), abs=1e-12)
    assert w[0] > w[1] and w[0] > w[2]


def test_projection_weights_on_simplex():
    rng = np.random.default_rng(3)
    bank = init_bank(5, 8, 4)
    for _ in range(20):
        s = _style(rng.standard_normal(8), rng.random(8) + 0.1)
        projected, weights = project_style(s, bank)
        for w in (weights.w_mu.data, weights.w_sigma.data):
            assert w.min() >= 0.0
            assert abs(w.sum() - 1.0) <= 1e-6
        assert projected.sigma.data.min() > 0.0  # convex combo of positives


def test_projection_permutation_equivariance():
    rng = np.random.default_rng(5)
    bank = init_bank(4, 6, 6)
    s = _style(rng.standard_normal(6), rng.random(6) + 0.1)
    projected, weights = project_style(s, bank)
    perm = np.array([2, 0, 3, 1])
    bank2 = init_bank(4, 6, 6)
    bank2.raw_mu.data[:] = bank.raw_mu.data[perm]
    bank2.raw_sigma.data[:] = bank.raw_sigma.data[perm]
    projected2, weights2 = project_style(s, bank2)
    np.testing.assert_allclose(weights2.w_mu.data, weights.w_mu.data[perm], atol=1e-12)
    np.testing.assert_allclose(weights2.w_sigma.data, weights.w_sigma.data[perm], atol=1e-12)
    np.testing.assert_allclose(projected2.mu.data, projected.mu.data, atol=1e-12)
    np.testing.assert_allclose(projected2.sigma.data, projected.sigma.data, atol=1e-12)


def test_projection_channel_mismatch_rejected():
    bank = init_bank(3, 4, 0)
    with pytest.raises(ValueError, match="channel"):
        project_style(_style([1.0, 2.0], [1.0, 1.0]), bank)


def test_orthogonality_loss_orthogonal_pair_is_zero():
    # concatenated vectors (4,0 | 1,2) and (-1,0 | 2,1): dot = -4 + 2 + 2 = 0
    bank = _bank_with(np.array([[4.0, 0.0], [-1.0, 0.0]]),
                      sigma_rows=np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert orthogonality_loss(bank).item() == pytest.approx(0.0, abs=1e-20)


def test_orthogonality_loss_identical_pair_is_one():
    bank = _bank_with([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])
    assert orthogonality_loss(bank).item() == pytest.approx(1.0)


def test_orthogonality_loss_three_bases_enumeration():
    # v1 == v2 (cosine 1), v3 orthogonal to both: cosines (1, 0, 0)
    # v1 = (3,0 | 1,1); v3 = (x,5 | 1,1) with 3x + 2 = 0
    bank = _bank_with(np.array([[3.0, 0.0], [3.0, 0.0], [-2.0 / 3.0, 5.0]]),
                      sigma_rows=np.ones((3, 2)))
    assert orthogonality_loss(bank).item() == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_orthogonality_loss_bounds_and_normalizers():
    rng = np.random.default_rng(7)
    for trial in range(10):
        bank = init_bank(4, 5, trial)
        val = orthogonality_loss(bank).item()
        assert 0.0 <= val <= 1.0
    bank = init_bank(4, 5, 0)
    ordered = orthogonality_loss(bank).item()
    bank.pair_normalizer = "literal"
    literal = orthogonality_loss(bank).item()
    n = 4
    assert literal == pytest.approx(ordered * n * (n - 1) / (n - 1) ** 2)


def test_orthogonality_training_drives_loss_down():
    bank = init_bank(4, 8, 11)
    history = fit_orthogonal(bank, steps=300, lr=0.1)
    assert history[-1] < 1e-3
    assert history[-1] < history[0]


def test_projection_gradients():
    rng = np.random.default_rng(8)
    bank = init_bank(3, 4, 9)
    mu0 = rng.standard_normal(4)
    sigma0 = rng.random(4) + 0.5
    wvec = rng.random(4) + 0.5

    def scalar_of_projection(style):
        projected, _ = project_style(style, bank)
        return (projected.mu * Tensor(wvec)).sum() + (projected.sigma * Tensor(wvec)).sum()

    assert grad_check(lambda t: scalar_of_projection(
        StyleVector(mu=t, sigma=Tensor(sigma0))), Tensor(mu0)) < 1e-4
    assert grad_check(lambda t: scalar_of_projection(
        StyleVector(mu=Tensor(mu0), sigma=t)), Tensor(sigma0)) < 1e-4

    def loss_wrt_bank_mu(t):
        b = StyleBank(n=3, channels=4, raw_mu=t, raw_sigma=Tensor(bank.raw_sigma.data))
        projected, _ = project_style(StyleVector(mu=Tensor(mu0), sigma=Tensor(sigma0)), b)
        return (projected.mu * Tensor(wvec)).sum()

    assert grad_check(loss_wrt_bank_mu, Tensor(bank.raw_mu.data)) < 1e-4


def test_orthogonality_gradients():
    bank = init_bank(3, 4, 10)

    def f_mu(t):
        b = StyleBank(n=3, channels=4, raw_mu=t, raw_sigma=Tensor(bank.raw_sigma.data))
        return orthogonality_loss(b)

    def f_sigma(t):
        b = StyleBank(n=3, channels=4, raw_mu=Tensor(bank.raw_mu.data), raw_sigma=t)
        return orthogonality_loss(b)

    assert grad_check(f_mu, Tensor(bank.raw_mu.data)) < 1e-4
    assert grad_check(f_sigma, Tensor(bank.raw_sigma.data)) < 1e-4


def test_two_basis_orthogonality_grad_check():
    bank = init_bank(2, 5, 3)

    def f(t):
        return orthogonality_loss(StyleBank(2, 5, t, Tensor(bank.raw_sigma.data)))

    assert grad_check(f, Tensor(bank.raw_mu.data)) < 1e-4


def test_project_equal_affinities_averages_sigma_too():
    bank = _bank_with([[1.0, 1.0, 0.0], [1.0, -1.0, 0.0]])
    s = _style([1.0, 0.0, 0.0], [1.0, 1.0, 1.0])
    projected, _ = project_style(s, bank)
    sigma_eff = np.log1p(np.exp(bank.raw_sigma.data))
    np.testing.assert_allclose(projected.sigma.data, sigma_eff.mean(axis=0), atol=1e-12)


from hypothesis import given, settings, strategies as st


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6))
def test_projection_simplex_property(seed, n):
    rng = np.random.default_rng(seed)
    bank = init_bank(n, 5, seed)
    s = _style(rng.standard_normal(5), rng.random(5) + 0.05)
    projected, weights = project_style(s, bank)
    for w in (weights.w_mu.data, weights.w_sigma.data):
        assert w.min() >= 0.0
        assert abs(w.sum() - 1.0) <= 1e-6
    assert projected.sigma.data.min() > 0.0
    assert 0.0 <= orthogonality_loss(bank).item() <= 1.0
