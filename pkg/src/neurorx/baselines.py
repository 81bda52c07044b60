"""Classical comparators: pilot-based channel estimation and LMMSE / ML /
sphere-decoding detection.

Channel estimates are ``(n_total, n_r, n_t, n_sc)`` arrays, one matrix per
OFDM symbol and subcarrier. Detectors take ``y`` as ``(..., n_r)`` and ``H``
as ``(..., n_r, n_t)`` with matching leading axes.
"""

from __future__ import annotations

import enum
import itertools
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .txchain import nearest_qam, pam_levels, qam_constellation, qam_scale, real_channel_form

__all__ = [
    "CsiSource",
    "CsiEstimate",
    "lmmse_channel_estimate",
    "delay_domain_estimate",
    "interpolate_csi",
    "dd_rls_csi",
    "lmmse_detect",
    "ml_detect_bruteforce",
    "sphere_decode",
    "SearchSpaceError",
]

ML_GUARD = 10 ** 6


class SearchSpaceError(ValueError):
    pass


class CsiSource(str, enum.Enum):
    PILOT_ONLY = "pilot"
    INTERPOLATED = "interp"
    DECISION_DIRECTED = "dd"
    ORACLE = "oracle"


@dataclass
class CsiEstimate:
    h_hat: np.ndarray = field(repr=False)  # (n_total, n_r, n_t, n_sc)
    source: CsiSource = CsiSource.PILOT_ONLY

    def at(self, n: int) -> np.ndarray:
        """``(n_sc, n_r, n_t)`` matrices for OFDM symbol ``n``."""
        return np.moveaxis(self.h_hat[n], -1, 0)


def lmmse_channel_estimate(rx_pilots, tx_pilots, noise_var: float, n_total: Optional[int] = None,
                           re_mask=None) -> CsiEstimate:
    """Per-subcarrier ridge LS ``H = Y X^H (X X^H + noise_var I)^-1``.

    Parameters
    ----------
    rx_pilots : ndarray, (P, n_r, n_sc)
        Received pilot symbols.
    tx_pilots : ndarray, (P, n_t, n_sc)
    noise_var : float
    n_total : int, optional
        Number of OFDM symbols the (time-constant) estimate is replicated to;
        defaults to ``P``.
    re_mask : ndarray of bool, (P, n_sc), optional
        Pilot REs; other entries are ignored.
    """
    Y = np.asarray(rx_pilots, dtype=complex)
    X = np.asarray(tx_pilots, dtype=complex)
    P, n_r, n_sc = Y.shape
    n_t = X.shape[1]
    if re_mask is not None:
        m = np.asarray(re_mask, dtype=bool)[:, None, :]
        Y = np.where(m, Y, 0)
        X = np.where(m, X, 0)
    Yk = np.moveaxis(Y, -1, 0)  # (n_sc, P, n_r) -> rows are pilot observations
    Xk = np.moveaxis(X, -1, 0)
    Yk = np.swapaxes(Yk, 1, 2)  # (n_sc, n_r, P)
    Xk = np.swapaxes(Xk, 1, 2)  # (n_sc, n_t, P)
    G = Xk @ np.swapaxes(Xk.conj(), 1, 2)
    rank = np.linalg.matrix_rank(G, hermitian=True)
    if np.any(rank < n_t):
        bad = int(np.flatnonzero(rank < n_t)[0])
        raise np.linalg.LinAlgError(f"pilot matrix is rank deficient on subcarrier {bad}")
    R = G + noise_var * np.eye(n_t)
    C = Yk @ np.swapaxes(Xk.conj(), 1, 2)  # (n_sc, n_r, n_t)
    H = np.swapaxes(np.linalg.solve(R, np.swapaxes(C, 1, 2).conj()).conj(), 1, 2)
    h = np.moveaxis(H, 0, -1)  # (n_r, n_t, n_sc)
    N = P if n_total is None else n_total
    return CsiEstimate(np.broadcast_to(h, (N,) + h.shape).copy(), CsiSource.PILOT_ONLY)


def delay_domain_estimate(rx_sym, tx_sym, noise_var: float, n_taps: int, re_mask=None) -> np.ndarray:
    """Ridge LS of an ``n_taps`` impulse response from one OFDM symbol.

    Every pilot RE contributes one equation
    ``Y[r, k] = sum_t sum_l h[r, t, l] exp(-2j pi k l / n_sc) X[t, k]``, so all
    antennas are resolved jointly even when each subcarrier carries a single
    superposed pilot. Returns the ``(n_r, n_t, n_sc)`` frequency response.
    """
    Y = np.asarray(rx_sym, dtype=complex)
    X = np.asarray(tx_sym, dtype=complex)
    n_r, n_sc = Y.shape
    n_t = X.shape[0]
    ks = np.arange(n_sc) if re_mask is None else np.flatnonzero(re_mask)
    F = np.exp(-2j * np.pi * np.outer(ks, np.arange(n_taps)) / n_sc)  # (K, L)
    A = (X[:, ks].T[:, :, None] * F[:, None, :]).reshape(ks.size, n_t * n_taps)
    G = A.conj().T @ A + max(noise_var, 1e-12) * np.eye(n_t * n_taps)
    h = np.linalg.solve(G, A.conj().T @ Y[:, ks].T).T.reshape(n_r, n_t, n_taps)
    return np.fft.fft(h, n=n_sc, axis=-1)


def interpolate_csi(pilot_csi, pilot_symbols, n_total: int) -> CsiEstimate:
    """Per-subcarrier linear regression over time, evaluated at every symbol.

    With one pilot symbol the estimate is held constant; with two or more a
    least-squares line through the pilot estimates interpolates between and
    extrapolates beyond them.
    """
    Hp = np.asarray(pilot_csi, dtype=complex)  # (P, n_r, n_t, n_sc)
    t = np.asarray(pilot_symbols, dtype=float)
    if Hp.shape[0] != t.size or t.size == 0:
        raise ValueError("need one CSI matrix per pilot symbol")
    if t.size == 1 or np.ptp(t) == 0:
        return CsiEstimate(np.broadcast_to(Hp.mean(axis=0), (n_total,) + Hp.shape[1:]).copy(),
                           CsiSource.INTERPOLATED)
    tc = t - t.mean()
    mean = Hp.mean(axis=0)
    slope = np.tensordot(tc, Hp - mean, axes=(0, 0)) / np.sum(tc ** 2)
    grid = np.arange(n_total) - t.mean()
    h = mean[None] + grid[:, None, None, None] * slope[None]
    return CsiEstimate(h, CsiSource.INTERPOLATED)


def dd_rls_csi(rx_grid, pilot_csi, tx_pilots, first_data: int, noise_var: float, alpha: float = 0.95,
               detected_symbols=None, detector: Optional[Callable] = None):
    """Decision-directed per-subcarrier RLS channel tracking.

    Parameters
    ----------
    rx_grid : ndarray, (n_total, n_r, n_sc)
    pilot_csi : ndarray, (n_r, n_t, n_sc)
        Starting estimate, normally the pilot-only LMMSE result.
    tx_pilots : ndarray, (first_data, n_t, n_sc)
        Pilots used to seed the inverse correlation matrix.
    detected_symbols : ndarray, (n_total, n_t, n_sc), optional
        Decisions to use as regressors. Ignored when ``detector`` is given.
    detector : callable, optional
        ``detector(y (n_sc, n_r), H (n_sc, n_r, n_t)) -> (n_sc, n_t)``; called
        with the current estimate before each update.

    Returns
    -------
    CsiEstimate
        Estimate used for each symbol (the state *before* its own update).
    decisions : ndarray, (n_total, n_t, n_sc)
    """
    Y = np.asarray(rx_grid, dtype=complex)
    N, n_r, n_sc = Y.shape
    n_t = pilot_csi.shape[1]
    H = np.moveaxis(np.asarray(pilot_csi, dtype=complex), -1, 0).copy()  # (n_sc, n_r, n_t)
    Xp = np.moveaxis(np.asarray(tx_pilots, dtype=complex), -1, 0)       # (n_sc, P, n_t)
    G = np.swapaxes(Xp, 1, 2) @ Xp.conj() + max(noise_var, 1e-9) * np.eye(n_t)
    P = np.linalg.inv(G)  # (n_sc, n_t, n_t), inverse of sum x x^H
    h_hat = np.empty((N, n_sc, n_r, n_t), dtype=complex)
    h_hat[:first_data] = H
    decisions = np.zeros((N, n_t, n_sc), dtype=complex)
    for n in range(first_data, N):
        h_hat[n] = H
        y = Y[n].T  # (n_sc, n_r)
        if detector is not None:
            x = detector(y, H)
        else:
            x = np.asarray(detected_symbols[n]).T
        decisions[n] = x.T
        # every row of H is an RLS filter driven by the decided vector x
        Px = np.einsum("kij,kj->ki", P, x)
        denom = alpha + np.einsum("ki,ki->k", x.conj(), Px).real
        v = Px / denom[:, None]
        e = y - np.einsum("krt,kt->kr", H, x)
        H = H + e[:, :, None] * v.conj()[:, None, :]
        P = (P - v[:, :, None] * np.einsum("ki,kij->kj", x.conj(), P)[:, None, :]) / alpha
    return CsiEstimate(np.moveaxis(h_hat, 1, -1), CsiSource.DECISION_DIRECTED), decisions


def lmmse_detect(y, H, noise_var: float, M: int) -> np.ndarray:
    """``(H^H H + noise_var I)^-1 H^H y`` per RE, projected onto M-QAM."""
    y = np.asarray(y, dtype=complex)
    H = np.asarray(H, dtype=complex)
    Hh = np.swapaxes(H.conj(), -1, -2)
    rhs = (Hh @ y[..., None])[..., 0]
    if noise_var > 0:
        n_t = H.shape[-1]
        x = np.linalg.solve(Hh @ H + noise_var * np.eye(n_t), rhs[..., None])[..., 0]
    else:
        x = (np.linalg.pinv(H) @ y[..., None])[..., 0]
    return nearest_qam(x, M)


def _candidates(M: int, n_t: int) -> np.ndarray:
    if M ** n_t > ML_GUARD:
        raise SearchSpaceError(f"M^n_t = {M}^{n_t} exceeds the brute-force guard {ML_GUARD}")
    pts = qam_constellation(M)
    return np.array(list(itertools.product(pts, repeat=n_t)))  # (M^n_t, n_t)


def ml_detect_bruteforce(y, H, M: int) -> np.ndarray:
    """Exhaustive ``argmin ||y - H x||^2`` over all ``M^n_t`` vectors."""
    y = np.asarray(y, dtype=complex)
    H = np.asarray(H, dtype=complex)
    lead = y.shape[:-1]
    yf = y.reshape(-1, y.shape[-1])
    Hf = np.broadcast_to(H, lead + H.shape[-2:]).reshape(-1, *H.shape[-2:])
    cand = _candidates(M, H.shape[-1])
    out = np.empty((yf.shape[0], H.shape[-1]), dtype=complex)
    for i in range(yf.shape[0]):
        r = yf[i][None, :] - cand @ Hf[i].T
        out[i] = cand[np.argmin(np.einsum("cr,cr->c", r.conj(), r).real)]
    return out.reshape(lead + (H.shape[-1],))


def _sd_single(yr, B, levels, radius_sq):
    """Depth-first Schnorr-Euchner search on ``min ||yr - B a||``, a in levels^n."""
    Q, R = np.linalg.qr(B)
    z = Q.T @ yr
    n = B.shape[1]
    rd = np.diag(R).copy()
    best = [radius_sq, None]
    x = np.zeros(n)
    nodes = [0]
    lv = list(levels)

    def search(i, pd):
        c = (z[i] - R[i, i + 1:] @ x[i + 1:]) / rd[i]
        for a in sorted(lv, key=lambda v: abs(v - c)):
            nodes[0] += 1
            d = pd + (rd[i] * (a - c)) ** 2
            if d >= best[0]:
                break  # remaining candidates are farther from the centre
            x[i] = a
            if i == 0:
                best[0], best[1] = d, x.copy()
            else:
                search(i - 1, d)

    search(n - 1, 0.0)
    return best[1], nodes[0]


def sphere_decode(y, H, M: int, initial_radius: str = "inf", return_nodes: bool = False):
    """Exact ML detection by sphere decoding on the real-valued lifted system.

    Parameters
    ----------
    initial_radius : {"inf", "babai"}
        ``"babai"`` starts from the distance of the rounded zero-forcing point.
    """
    y = np.asarray(y, dtype=complex)
    H = np.asarray(H, dtype=complex)
    lead = y.shape[:-1]
    n_t = H.shape[-1]
    yf = y.reshape(-1, y.shape[-1])
    Hf = np.broadcast_to(H, lead + H.shape[-2:]).reshape(-1, *H.shape[-2:])
    c = qam_scale(M)
    levels = pam_levels(M)
    out = np.empty((yf.shape[0], n_t), dtype=complex)
    nodes = np.zeros(yf.shape[0], dtype=np.int64)
    for i in range(yf.shape[0]):
        B = c * real_channel_form(Hf[i])
        yr = np.concatenate([yf[i].real, yf[i].imag])
        if np.linalg.matrix_rank(B) < B.shape[1]:
            warnings.warn("rank-deficient channel, falling back to brute-force ML", RuntimeWarning)
            out[i] = ml_detect_bruteforce(yf[i], Hf[i], M)
            continue
        r2 = np.inf
        if initial_radius == "babai":
            a0 = np.linalg.lstsq(B, yr, rcond=None)[0]
            a0 = levels[np.argmin(np.abs(a0[:, None] - levels[None, :]), axis=1)]
            r2 = float(np.sum((yr - B @ a0) ** 2)) * (1 + 1e-12) + 1e-300
        a, nodes[i] = _sd_single(yr, B, levels, r2)
        out[i] = (a[:n_t] + 1j * a[n_t:]) * c
    out = out.reshape(lead + (n_t,))
    if return_nodes:
        return out, nodes.reshape(lead)
    return out
