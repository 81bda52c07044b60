import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st

from neurorx.errors import NumericalFailure
from neurorx.reservoir import (RlsState, init_reservoir, init_rls, rc_forward, rls_run, rls_step,
                               run_states, train_ls, window_input)

from conftest import crandn


def test_defaults():
    m = init_reservoir(4, 4)
    assert m.n_neurons == 16 and m.window_len == 32
    assert m.state_dim == 16 + 4 * 32
    assert np.all(m.w_out == 0)
    with pytest.raises(ValueError):
        m.w_res[0, 0] = 0


@given(st.integers(0, 10 ** 6), st.floats(0.1, 1.5))
def test_spectral_radius(seed, rho):
    m = init_reservoir(2, 2, n_neurons=12, spectral_radius=rho, seed=seed)
    # Schur form as an independent eigenvalue route
    T = scipy.linalg.schur(np.asarray(m.w_res), output="complex")[0]
    assert np.max(np.abs(np.diag(T))) == pytest.approx(rho, abs=1e-6)


def test_input_weight_bound():
    m = init_reservoir(4, 4, window_len=8, input_scale=0.5, seed=3)
    b = 0.5 / np.sqrt(32)
    assert np.all(np.abs(m.w_in.real) <= b) and np.all(np.abs(m.w_in.imag) <= b)


def test_window_input_layout(rng):
    u = crandn(rng, 2, 6)
    w = window_input(u, 3)
    assert w.shape == (6, 6)
    assert np.array_equal(w[0:2], u)
    assert np.array_equal(w[2:4, 1:], u[:, :-1]) and np.all(w[2:4, 0] == 0)
    assert np.array_equal(w[4:6, 2:], u[:, :-2]) and np.all(w[4:6, :2] == 0)


def test_states_seeded_and_bounded(rng):
    m = init_reservoir(2, 2, seed=7)
    u = 3 * crandn(rng, 2, 100)
    Z1, Z2 = run_states(m, u), run_states(init_reservoir(2, 2, seed=7), u)
    assert np.array_equal(Z1, Z2)
    s = Z1[: m.n_neurons]
    assert np.all(np.abs(s.real) < 1) and np.all(np.abs(s.imag) < 1)


def test_echo_state_forgetting(rng):
    m = init_reservoir(1, 1, window_len=1, spectral_radius=0.9, seed=0)
    u = crandn(rng, 1, 300)
    v = u.copy()
    v[:, 0] += 5.0
    d = np.linalg.norm(run_states(m, u)[: m.n_neurons] - run_states(m, v)[: m.n_neurons], axis=0)
    assert d[0] > 1e-2
    assert d[200] < 1e-3


@pytest.mark.parametrize("ridge", [0.0, 1e-3, 1.0])
def test_train_ls_matches_normal_equations(ridge, rng):
    Z = crandn(rng, 10, 200)
    O = crandn(rng, 3, 200)
    W, res = train_ls(Z, O, ridge)
    # second solver: real-valued normal equations of the lifted problem
    A = np.block([[Z.real.T, -Z.imag.T], [Z.imag.T, Z.real.T]])
    G = A.T @ A + ridge * np.eye(20)
    for r in range(3):
        b = np.concatenate([O[r].real, O[r].imag])
        sol = np.linalg.solve(G, A.T @ b)
        w = sol[:10] + 1j * sol[10:]
        # (W Z)^T = Z^T W^T, so the lifted unknown is conj-free W[r]
        assert np.allclose(W[r], w, atol=1e-8)
    assert res == pytest.approx(np.linalg.norm(W @ Z - O))


def test_train_ls_rank_deficient(rng):
    Z = crandn(rng, 4, 50)
    Z = np.vstack([Z, Z[:1]])
    with pytest.raises(NumericalFailure):
        train_ls(Z, crandn(rng, 1, 50), ridge=0.0)
    train_ls(Z, crandn(rng, 1, 50), ridge=1e-3)  # ridge restores solvability


def test_train_ls_shape_mismatch(rng):
    with pytest.raises(ValueError):
        train_ls(crandn(rng, 3, 10), crandn(rng, 1, 11))


def test_rls_equals_ridge_ls(rng):
    m = init_reservoir(2, 2, n_neurons=4, window_len=2, seed=1)
    Z = crandn(rng, m.state_dim, 300)
    O = crandn(rng, 2, 300)
    rls = init_rls(m.state_dim, alpha=1.0, delta=1e-6)
    rls_run(m, rls, Z, O)
    W, _ = train_ls(Z, O, ridge=1e-6)
    assert np.linalg.norm(m.w_out - W) / np.linalg.norm(W) < 1e-6


def test_rls_from_pilot_statistics_continues_ls(rng):
    Z = crandn(rng, 6, 120)
    O = crandn(rng, 1, 120)
    m = init_reservoir(1, 1, n_neurons=2, window_len=4)
    m.w_out, _ = train_ls(Z[:, :60], O[:, :60], ridge=1e-3)
    rls = init_rls(6, alpha=1.0, delta=1e-3, Z_pilot=Z[:, :60])
    rls_run(m, rls, Z[:, 60:], O[:, 60:])
    W, _ = train_ls(Z, O, ridge=1e-3)
    assert np.allclose(m.w_out, W, atol=1e-8)


def test_forgetting_tracks_switch(rng):
    Z = crandn(rng, 4, 400)
    w1, w2 = crandn(rng, 1, 4), crandn(rng, 1, 4)
    O = np.hstack([w1 @ Z[:, :200], w2 @ Z[:, 200:]])
    res = {}
    for a in (1.0, 0.95):
        m = init_reservoir(1, 1, n_neurons=1, window_len=3)
        rls_run(m, init_rls(4, alpha=a, delta=1e-4), Z, O)
        res[a] = np.linalg.norm(m.w_out @ Z[:, 300:] - O[:, 300:])
    assert res[0.95] < res[1.0]


def test_rls_alpha_validated():
    with pytest.raises(ValueError):
        RlsState(np.eye(2), alpha=0.0)
    with pytest.raises(ValueError):
        RlsState(np.eye(2), alpha=1.5)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_rls_non_finite_raises():
    m = init_reservoir(1, 1, n_neurons=1, window_len=1)
    rls = init_rls(2, alpha=1.0)
    with pytest.raises(NumericalFailure):
        rls_step(m, rls, np.array([np.nan, 1.0]), np.array([1.0]))


def _nmse_db(a, b):
    return 10 * np.log10(np.sum(np.abs(a - b) ** 2) / np.sum(np.abs(b) ** 2))


def test_identity_task(rng):
    m = init_reservoir(1, 1, seed=2)
    u = crandn(rng, 1, 3000)
    Z = run_states(m, u)
    m.w_out, _ = train_ls(Z[:, :2000], u[:, :2000], ridge=1e-8)
    assert _nmse_db(rc_forward(m, Z=Z[:, 2000:]), u[:, 2000:]) < -30


def test_flat_channel_equalization(rng):
    h = 0.8 * np.exp(0.6j)
    x = (rng.choice([-1, 1], 2000) + 1j * rng.choice([-1, 1], 2000)) / np.sqrt(2)
    nv = abs(h) ** 2 / 1000.0  # 30 dB
    y = h * x + np.sqrt(nv / 2) * (rng.standard_normal(2000) + 1j * rng.standard_normal(2000))
    m = init_reservoir(1, 1, seed=0)
    Z = run_states(m, y[None])
    m.w_out, _ = train_ls(Z[:, :500], x[None, :500], ridge=1e-3)
    assert _nmse_db(rc_forward(m, Z=Z[:, 500:]), x[None, 500:]) < -20
    assert np.allclose(rc_forward(m, u=y[None]), m.w_out @ Z)
