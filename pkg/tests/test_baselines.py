import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from neurorx.baselines import (CsiSource, SearchSpaceError, dd_rls_csi, delay_domain_estimate,
                               interpolate_csi, lmmse_channel_estimate, lmmse_detect,
                               ml_detect_bruteforce, sphere_decode)
from neurorx.txchain import qam_constellation

from conftest import crandn


def _qam(rng, M, *shape):
    return rng.choice(qam_constellation(M), shape)


def test_lmmse_estimate_exact_noiseless(rng):
    n_r, n_t, n_sc, P = 3, 2, 8, 4
    H = crandn(rng, n_r, n_t, n_sc)
    X = _qam(rng, 4, P, n_t, n_sc)
    Y = np.einsum("rtk,ptk->prk", H, X)
    est = lmmse_channel_estimate(Y, X, noise_var=0.0, n_total=6)
    assert est.h_hat.shape == (6, n_r, n_t, n_sc)
    assert est.source is CsiSource.PILOT_ONLY
    assert np.allclose(est.h_hat[5], H, atol=1e-10)
    assert est.at(2).shape == (n_sc, n_r, n_t)


def test_lmmse_estimate_matches_per_subcarrier_formula(rng):
    H = crandn(rng, 2, 2, 4)
    X = _qam(rng, 16, 3, 2, 4)
    Y = np.einsum("rtk,ptk->prk", H, X) + 0.1 * crandn(rng, 3, 2, 4)
    est = lmmse_channel_estimate(Y, X, noise_var=0.05).h_hat[0]
    for k in range(4):
        Xk, Yk = X[:, :, k].T, Y[:, :, k].T
        ref = Yk @ Xk.conj().T @ np.linalg.inv(Xk @ Xk.conj().T + 0.05 * np.eye(2))
        assert np.allclose(est[:, :, k], ref)


def test_lmmse_estimate_rank_deficient(rng):
    X = np.ones((1, 2, 4), dtype=complex)  # one pilot vector cannot resolve two antennas
    with pytest.raises(np.linalg.LinAlgError):
        lmmse_channel_estimate(crandn(rng, 1, 2, 4), X, noise_var=0.1)


def test_lmmse_estimate_error_grows_with_noise(rng):
    H = crandn(rng, 2, 2, 64)
    X = _qam(rng, 4, 8, 2, 64)
    mse = []
    for nv in (1e-3, 1e-2, 1e-1):
        Y = np.einsum("rtk,ptk->prk", H, X) + np.sqrt(nv) * crandn(rng, 8, 2, 64) / np.sqrt(2)
        mse.append(np.mean(np.abs(lmmse_channel_estimate(Y, X, nv).h_hat[0] - H) ** 2))
    assert mse[0] < mse[1] < mse[2]


def test_delay_domain_resolves_superposed_pilots(rng):
    n_sc, L = 32, 3
    h = crandn(rng, 2, 2, L)
    Hf = np.fft.fft(h, n=n_sc, axis=-1)
    X = _qam(rng, 4, 2, n_sc)
    Y = np.einsum("rtk,tk->rk", Hf, X)
    assert np.allclose(delay_domain_estimate(Y, X, 0.0, L), Hf, atol=1e-8)


def test_interpolation_linear_drift(rng):
    h0, dh = crandn(rng, 2, 2, 4), crandn(rng, 2, 2, 4)
    t = np.array([0, 1, 5])
    Hp = h0[None] + t[:, None, None, None] * dh[None]
    est = interpolate_csi(Hp, t, 10)
    truth = h0[None] + np.arange(10)[:, None, None, None] * dh[None]
    assert np.allclose(est.h_hat, truth)
    hold = np.broadcast_to(Hp[-1], truth.shape)
    assert np.linalg.norm(est.h_hat - truth) < np.linalg.norm(hold - truth)


def test_interpolation_single_pilot_holds(rng):
    Hp = crandn(rng, 1, 2, 2, 3)
    est = interpolate_csi(Hp, [0], 4)
    assert np.allclose(est.h_hat, Hp[0][None])
    with pytest.raises(ValueError):
        interpolate_csi(Hp, [0, 1], 4)


def _dd_setup(rng, n_sc=16, N=40, nv=1e-4):
    H = crandn(rng, 2, 2, n_sc) / np.sqrt(2)
    X = _qam(rng, 4, N, 2, n_sc)
    Y = np.einsum("rtk,ntk->nrk", H, X) + np.sqrt(nv / 2) * crandn(rng, N, 2, n_sc)
    return H, X, Y, nv


def test_dd_rls_converges_with_correct_decisions(rng):
    H, X, Y, nv = _dd_setup(rng)
    start = H + 0.3 * crandn(rng, *H.shape)
    est, dec = dd_rls_csi(Y, start, X[:2], first_data=2, noise_var=nv, alpha=1.0, detected_symbols=X)
    e0 = np.linalg.norm(est.h_hat[2] - H)
    e1 = np.linalg.norm(est.h_hat[-1] - H)
    # the prior weighs as much as the 2 pilots, so 38 updates shrink it about 20x
    assert e1 < 0.1 * e0
    assert np.array_equal(dec[2:], X[2:])


def test_dd_rls_wrong_decisions_hurt(rng):
    H, X, Y, nv = _dd_setup(rng)
    wrong = X.copy()
    wrong[2:] = -X[2:]
    good, _ = dd_rls_csi(Y, H, X[:2], 2, nv, detected_symbols=X)
    bad, _ = dd_rls_csi(Y, H, X[:2], 2, nv, detected_symbols=wrong)
    assert np.linalg.norm(bad.h_hat[-1] - H) > 10 * np.linalg.norm(good.h_hat[-1] - H)


def test_dd_rls_with_detector_callback(rng):
    H, X, Y, nv = _dd_setup(rng)
    det = lambda y, Hk: lmmse_detect(y, Hk, nv, 4)
    est, dec = dd_rls_csi(Y, H, X[:2], 2, nv, detector=det)
    assert np.mean(dec[2:] != X[2:]) < 0.01
    assert est.source is CsiSource.DECISION_DIRECTED


def test_lmmse_detect_noiseless_and_zf(rng):
    H = crandn(rng, 100, 4, 4) + 3 * np.eye(4)
    x = _qam(rng, 16, 100, 4)
    y = (H @ x[..., None])[..., 0]
    assert np.array_equal(lmmse_detect(y, H, 0.0, 16), x)
    assert np.array_equal(lmmse_detect(y, H, 1e-6, 16), x)


def test_ml_guard():
    with pytest.raises(SearchSpaceError):
        ml_detect_bruteforce(np.zeros(4), np.eye(4), 64)


@given(st.integers(0, 10 ** 6), st.sampled_from([(2, 4), (2, 16), (3, 4)]))
def test_sphere_matches_ml(seed, shape):
    n, M = shape
    rng = np.random.default_rng(seed)
    H = crandn(rng, n, n)
    y = H @ _qam(rng, M, n) + 0.5 * crandn(rng, n)
    ml = ml_detect_bruteforce(y, H, M)
    assert np.allclose(sphere_decode(y, H, M), ml)
    assert np.allclose(sphere_decode(y, H, M, initial_radius="babai"), ml)


def test_sphere_prunes(rng):
    H = crandn(rng, 50, 4, 4)
    y = (H @ _qam(rng, 16, 50, 4)[..., None])[..., 0] + 0.05 * crandn(rng, 50, 4)
    _, nodes = sphere_decode(y, H, 16, return_nodes=True)
    assert nodes.shape == (50,)
    assert np.all(nodes < 16 ** 4)


def test_sphere_rank_deficient_falls_back(rng):
    H = np.ones((2, 2), dtype=complex)
    y = crandn(rng, 2)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        out = sphere_decode(y, H, 4)
    assert any(issubclass(x.category, RuntimeWarning) for x in w)
    r = lambda x: np.linalg.norm(y - H @ x)
    assert r(out) == pytest.approx(r(ml_detect_bruteforce(y, H, 4)))
