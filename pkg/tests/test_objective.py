import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deeprisk.errors import MissingHorizon, SingularGram, ZeroReturns
from deeprisk.objective import (
    LossConfig,
    loss_and_gradient,
    loss_gradient,
    multitask_loss,
    projection_fit,
    r_squared,
    total_loss,
    vif_bruteforce,
    vif_trace,
)

from conftest import standardized


def test_projection_of_span_element(rng):
    F = rng.standard_normal((40, 3))
    y = F @ np.array([0.3, -1.0, 2.0])
    np.testing.assert_allclose(projection_fit(F, y), y, atol=1e-8)
    assert r_squared(F, y) == pytest.approx(1.0, abs=1e-12)


def test_orthogonal_target():
    F = np.array([[1.0], [1.0], [0.0], [0.0]])
    y = np.array([1.0, -1.0, 2.0, 0.5])
    np.testing.assert_allclose(projection_fit(F, y), 0.0, atol=1e-15)
    assert abs(r_squared(F, y)) < 1e-10


def test_projection_matches_explicit_inverse(rng):
    F = rng.standard_normal((50, 5))
    y = rng.standard_normal(50)
    expected = F @ np.linalg.inv(F.T @ F) @ F.T @ y
    np.testing.assert_allclose(projection_fit(F, y), expected, rtol=1e-10, atol=1e-12)


def test_zero_returns():
    with pytest.raises(ZeroReturns):
        r_squared(np.ones((3, 1)), np.zeros(3))


def test_vif_trace_orthogonal():
    Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((30, 4)))
    F = Q * np.sqrt(30)
    assert vif_trace(F) == pytest.approx(4.0, rel=1e-12)
    np.testing.assert_allclose(vif_bruteforce(F), 1.0, rtol=1e-10)


def test_vif_two_correlated_columns():
    # exact sample correlation 0.9 between two standardized columns
    r = np.random.default_rng(1)
    a, b = standardized(r, 100, 2).T
    b = b - (a @ b) / (a @ a) * a
    b /= b.std()
    c = 0.9 * a + np.sqrt(1 - 0.81) * b
    F = np.column_stack([a, c])
    expected = 2 / (1 - 0.81)
    assert expected == pytest.approx(10.526, abs=1e-3)
    assert vif_trace(F) == pytest.approx(expected, rel=1e-10)
    np.testing.assert_allclose(vif_bruteforce(F), 1 / (1 - 0.81), rtol=1e-10)


def test_vif_duplicate_columns():
    F = standardized(np.random.default_rng(2), 20, 3)
    F[:, 2] = F[:, 0]
    with pytest.raises(SingularGram):
        vif_bruteforce(F)
    with pytest.raises(SingularGram):
        vif_trace(F)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 8))
def test_vif_identity_property(seed, K):
    F = standardized(np.random.default_rng(seed), 60, K)
    assert vif_trace(F) == pytest.approx(vif_bruteforce(F).sum(), rel=1e-9)


def test_single_horizon_is_one_minus_r2(rng):
    F, y = rng.standard_normal((30, 3)), rng.standard_normal(30)
    cfg = LossConfig(H=1, ridge_eps=1e-300)
    assert multitask_loss(F, y[None], cfg) == pytest.approx(1 - r_squared(F, y), rel=1e-12)


def test_all_targets_in_span(rng):
    F = rng.standard_normal((30, 3))
    Y = (F @ rng.standard_normal((3, 4))).T
    assert multitask_loss(F, Y, LossConfig(H=4, ridge_eps=1e-300)) == pytest.approx(0.0, abs=1e-12)


def test_three_horizons_decompose(rng):
    F, Y = rng.standard_normal((25, 3)), rng.standard_normal((3, 25))
    single = [multitask_loss(F, Y[h][None], LossConfig(H=1)) for h in range(3)]
    assert multitask_loss(F, Y, LossConfig(H=3)) == pytest.approx(sum(single) / 3, rel=1e-13)


def test_missing_horizon(rng):
    with pytest.raises(MissingHorizon):
        multitask_loss(rng.standard_normal((10, 2)), rng.standard_normal((2, 10)), LossConfig(H=3))


def test_total_loss_lambda_zero(rng):
    F, Y = rng.standard_normal((20, 2)), rng.standard_normal((2, 20))
    assert total_loss(F, Y, LossConfig(lam=0.0, H=2)) == multitask_loss(F, Y, LossConfig(lam=0.0, H=2))


def test_total_loss_orthogonal_standardized():
    N, K = 40, 4
    Q, _ = np.linalg.qr(np.random.default_rng(3).standard_normal((N, K)))
    F = Q * np.sqrt(N)
    Y = np.random.default_rng(4).standard_normal((2, N))
    cfg = LossConfig(lam=0.01, H=2)
    assert total_loss(F, Y, cfg) == pytest.approx(multitask_loss(F, Y, cfg) + 0.01 * K / N, rel=1e-9)


def test_defaults():
    cfg = LossConfig()
    assert (cfg.lam, cfg.H) == (0.01, 20)


def fd_grad(F, Y, cfg, src=None, h=1e-5):
    g = np.zeros_like(F)
    for idx in np.ndindex(F.shape):
        E = np.zeros_like(F)
        E[idx] = h
        g[idx] = (total_loss(F + E, Y, cfg, src) - total_loss(F - E, Y, cfg, src)) / (2 * h)
    return g


@pytest.mark.parametrize("mode", ["per-horizon", "current-projection"])
def test_gradient_matches_fd(rng, mode):
    F, Y, y0 = rng.standard_normal((30, 4)), rng.standard_normal((2, 30)), rng.standard_normal(30)
    cfg = LossConfig(H=2, target_mode=mode)
    an = loss_gradient(F, Y, cfg, y0)
    fd = fd_grad(F, Y, cfg, y0)
    rel = np.abs(an - fd) / np.maximum(np.maximum(np.abs(an), np.abs(fd)), 1e-6)
    assert rel.max() < 1e-4


def test_gradient_zero_at_stationary_one_column():
    y = np.array([1.0, -2.0, 0.5, 3.0])
    cfg = LossConfig(lam=0.0, H=1, ridge_eps=1e-300)
    for f in (2.0 * y, np.array([2.0, 1.0, 0.0, 0.0])):  # f parallel to y, f orthogonal to y
        assert np.linalg.norm(loss_gradient(f[:, None], y[None], cfg)) < 1e-8


def test_gradient_zero_for_span_targets(rng):
    F = rng.standard_normal((20, 3))
    Y = (F @ rng.standard_normal((3, 2))).T
    _, g = loss_and_gradient(F, Y, LossConfig(lam=0.0, H=2, ridge_eps=1e-300))
    assert np.abs(g).max() < 1e-10
