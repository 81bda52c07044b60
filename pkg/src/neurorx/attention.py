"""Two-dimensional (time x frequency) self-attention with a residual path.

The input for one transmit antenna is a real grid ``I`` of shape
``(n_sym, 2 * n_sc)`` whose features interleave real and imaginary parts per
subcarrier: ``I[n, 2k] = Re``, ``I[n, 2k + 1] = Im``. The time block attends
over OFDM symbols; the frequency block attends over subcarriers of the
permuted grid ``(n_sc, 2 * n_sym)``. A leading batch axis (one entry per
transmit antenna) is supported everywhere and shares all parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "AttentionBlockParams",
    "TwoDMhaParams",
    "softmax_rows",
    "attention_head",
    "attention_head_backward",
    "permute",
    "unpermute",
    "init_mha",
    "twod_mha_forward",
    "twod_mha_backward",
]


def softmax_rows(A: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis with max subtraction."""
    A = np.asarray(A, dtype=float)
    e = np.exp(A - A.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class AttentionBlockParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.w_q.shape[0]

    @property
    def key_dim(self) -> int:
        return self.w_q.shape[1]


@dataclass
class TwoDMhaParams:
    time_block: AttentionBlockParams
    freq_block: AttentionBlockParams
    w_o: np.ndarray  # (4 n_sc, 2 n_sc)

    def arrays(self) -> dict:
        """Named views of every trainable array (updated in place by optimizers)."""
        return {
            "t_q": self.time_block.w_q, "t_k": self.time_block.w_k, "t_v": self.time_block.w_v,
            "f_q": self.freq_block.w_q, "f_k": self.freq_block.w_k, "f_v": self.freq_block.w_v,
            "w_o": self.w_o,
        }

    def copy(self) -> "TwoDMhaParams":
        a = {k: v.copy() for k, v in self.arrays().items()}
        return TwoDMhaParams(AttentionBlockParams(a["t_q"], a["t_k"], a["t_v"]),
                             AttentionBlockParams(a["f_q"], a["f_k"], a["f_v"]), a["w_o"])


def _xavier(rng, fan_in, fan_out):
    b = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-b, b, (fan_in, fan_out))


def init_mha(n_sym: int, n_sc: int, nk_time: int = 216, nk_freq: int = 8, seed=0,
             zero_output: bool = True) -> TwoDMhaParams:
    """Xavier-uniform block weights; ``w_o`` starts at zero unless told otherwise
    so the module is exactly the identity before training."""
    rng = np.random.default_rng(seed)
    dt, df = 2 * n_sc, 2 * n_sym
    tb = AttentionBlockParams(_xavier(rng, dt, nk_time), _xavier(rng, dt, nk_time), _xavier(rng, dt, dt))
    fb = AttentionBlockParams(_xavier(rng, df, nk_freq), _xavier(rng, df, nk_freq), _xavier(rng, df, df))
    w_o = np.zeros((2 * dt, dt)) if zero_output else _xavier(rng, 2 * dt, dt)
    return TwoDMhaParams(tb, fb, w_o)


def attention_head(U: np.ndarray, p: AttentionBlockParams, return_cache: bool = False):
    """``softmax(Q K^T / sqrt(N_k)) V`` with ``Q, K, V = U W_q, U W_k, U W_v``."""
    U = np.asarray(U, dtype=float)
    if U.shape[-1] != p.input_dim:
        raise ValueError(f"input has {U.shape[-1]} features, block expects {p.input_dim}")
    Q, K, V = U @ p.w_q, U @ p.w_k, U @ p.w_v
    A = softmax_rows(Q @ np.swapaxes(K, -1, -2) / np.sqrt(p.key_dim))
    H = A @ V
    if return_cache:
        return H, (U, Q, K, V, A)
    return H


def attention_head_backward(cache, p: AttentionBlockParams, dH: np.ndarray):
    U, Q, K, V, A = cache
    scale = 1.0 / np.sqrt(p.key_dim)
    tr = lambda x: np.swapaxes(x, -1, -2)
    dA = dH @ tr(V)
    dV = tr(A) @ dH
    dS = A * (dA - np.sum(dA * A, axis=-1, keepdims=True)) * scale
    dQ = dS @ K
    dK = tr(dS) @ Q
    flat = lambda x: x.reshape(-1, x.shape[-1])
    Uf = flat(U)
    grads = {"w_q": Uf.T @ flat(dQ), "w_k": Uf.T @ flat(dK), "w_v": Uf.T @ flat(dV)}
    dU = dQ @ p.w_q.T + dK @ p.w_k.T + dV @ p.w_v.T
    return grads, dU


def permute(I: np.ndarray) -> np.ndarray:
    """``(..., n_sym, 2 n_sc)`` -> ``(..., n_sc, 2 n_sym)`` keeping re/im pairs together."""
    *lead, n_sym, d = I.shape
    n_sc = d // 2
    g = I.reshape(*lead, n_sym, n_sc, 2)
    return np.swapaxes(g, -3, -2).reshape(*lead, n_sc, 2 * n_sym)


def unpermute(P: np.ndarray) -> np.ndarray:
    *lead, n_sc, d = P.shape
    n_sym = d // 2
    g = P.reshape(*lead, n_sc, n_sym, 2)
    return np.swapaxes(g, -3, -2).reshape(*lead, n_sym, 2 * n_sc)


def twod_mha_forward(I: np.ndarray, p: TwoDMhaParams, return_cache: bool = False):
    I = np.asarray(I, dtype=float)
    ht, ct = attention_head(I, p.time_block, return_cache=True)
    hf_p, cf = attention_head(permute(I), p.freq_block, return_cache=True)
    hf = unpermute(hf_p)
    C = np.concatenate([ht, hf], axis=-1)
    out = C @ p.w_o + I
    if return_cache:
        return out, (ct, cf, C)
    return out


def twod_mha_backward(I: np.ndarray, p: TwoDMhaParams, upstream: np.ndarray):
    """Exact gradients of ``twod_mha_forward`` given ``dL/d(output)``.

    Returns
    -------
    grads : dict
        Keyed like :meth:`TwoDMhaParams.arrays`.
    dI : ndarray
        Gradient with respect to the input grid.
    """
    I = np.asarray(I, dtype=float)
    _, (ct, cf, C) = twod_mha_forward(I, p, return_cache=True)
    G = np.asarray(upstream, dtype=float)
    d = I.shape[-1]
    grads = {"w_o": C.reshape(-1, C.shape[-1]).T @ G.reshape(-1, d)}
    dC = G @ p.w_o.T
    gt, dI_t = attention_head_backward(ct, p.time_block, dC[..., :d])
    gf, dP = attention_head_backward(cf, p.freq_block, permute(dC[..., d:]))
    for k, v in gt.items():
        grads["t_" + k[2:]] = v
    for k, v in gf.items():
        grads["f_" + k[2:]] = v
    dI = G + dI_t + unpermute(dP)
    return grads, dI
