import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from neurorx.attention import (AttentionBlockParams, attention_head, init_mha, permute, softmax_rows,
                               twod_mha_backward, twod_mha_forward, unpermute)


@given(arrays(np.float64, (5, 7), elements=st.floats(-500, 500)))
def test_softmax_rows_normalized(A):
    S = softmax_rows(A)
    assert np.all(S >= 0)
    assert np.allclose(S.sum(axis=1), 1.0, atol=1e-12)


def test_softmax_shift_invariant(rng):
    A = rng.standard_normal((3, 4))
    assert np.allclose(softmax_rows(A), softmax_rows(A + 1e3))


def _ref_head(U, p):
    # literal evaluation, one row at a time
    out = np.zeros((U.shape[0], p.w_v.shape[1]))
    for i in range(U.shape[0]):
        q = U[i] @ p.w_q
        s = np.array([q @ (U[j] @ p.w_k) for j in range(U.shape[0])]) / np.sqrt(p.w_q.shape[1])
        a = np.exp(s - s.max())
        a /= a.sum()
        out[i] = sum(a[j] * (U[j] @ p.w_v) for j in range(U.shape[0]))
    return out


def test_head_matches_reference(rng):
    U = rng.standard_normal((6, 10))
    p = AttentionBlockParams(rng.standard_normal((10, 3)), rng.standard_normal((10, 3)),
                             rng.standard_normal((10, 10)))
    assert np.allclose(attention_head(U, p), _ref_head(U, p), atol=1e-12)
    with pytest.raises(ValueError):
        attention_head(rng.standard_normal((6, 9)), p)


@given(st.integers(1, 5), st.integers(1, 6), st.integers(1, 3))
def test_permute_inverse(n_sym, n_sc, lead):
    I = np.arange(lead * n_sym * 2 * n_sc, dtype=float).reshape(lead, n_sym, 2 * n_sc)
    P = permute(I)
    assert P.shape == (lead, n_sc, 2 * n_sym)
    assert np.array_equal(unpermute(P), I)


def test_permute_keeps_complex_pairs():
    # grid[n, 2k:2k+2] = (re, im) of RE (n, k)
    n_sym, n_sc = 3, 4
    z = np.arange(n_sym * n_sc).reshape(n_sym, n_sc) + 0.5j
    I = np.stack([z.real, z.imag], axis=-1).reshape(n_sym, 2 * n_sc)
    P = permute(I)
    for k in range(n_sc):
        for n in range(n_sym):
            assert P[k, 2 * n] == z[n, k].real and P[k, 2 * n + 1] == z[n, k].imag


def test_zero_output_is_identity(rng):
    p = init_mha(4, 8, nk_time=5, nk_freq=3, seed=0)
    I = rng.standard_normal((2, 4, 16))
    assert np.array_equal(twod_mha_forward(I, p), I)


def test_forward_matches_composition(rng):
    p = init_mha(4, 8, nk_time=5, nk_freq=3, seed=1, zero_output=False)
    I = rng.standard_normal((4, 16))
    ht = _ref_head(I, p.time_block)
    hf = _ref_head(permute(I), p.freq_block)
    ref = np.concatenate([ht, unpermute(hf)], axis=1) @ p.w_o + I
    assert np.allclose(twod_mha_forward(I, p), ref, atol=1e-12)


def _fd_check(seed, step=1e-5):
    rng = np.random.default_rng(seed)
    p = init_mha(4, 8, nk_time=6, nk_freq=3, seed=seed, zero_output=False)
    I = rng.standard_normal((2, 4, 16))
    G = rng.standard_normal((2, 4, 16))
    loss = lambda: float(np.sum(G * twod_mha_forward(I, p)))
    grads, dI = twod_mha_backward(I, p, G)
    worst = 0.0
    arrays_ = dict(p.arrays(), I=I)
    grads = dict(grads, I=dI)
    for name, a in arrays_.items():
        num = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            o = a[idx]
            a[idx] = o + step
            lp = loss()
            a[idx] = o - step
            lm = loss()
            a[idx] = o
            num[idx] = (lp - lm) / (2 * step)
        rel = np.linalg.norm(num - grads[name]) / max(np.linalg.norm(num), 1e-12)
        worst = max(worst, rel)
    return worst


@pytest.mark.parametrize("seed", range(3))
def test_backward_finite_differences(seed):
    assert _fd_check(seed) < 1e-4


def test_backward_zero_output_gradients(rng):
    # with w_o = 0 only w_o receives gradient and dI passes straight through
    p = init_mha(4, 8, nk_time=6, nk_freq=3, seed=0)
    I, G = rng.standard_normal((4, 16)), rng.standard_normal((4, 16))
    grads, dI = twod_mha_backward(I, p, G)
    assert np.array_equal(dI, G)
    assert np.linalg.norm(grads["w_o"]) > 0
    assert all(np.all(grads[k] == 0) for k in grads if k != "w_o")
