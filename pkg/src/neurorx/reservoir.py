"""Complex echo-state network with LS readout training and RLS tracking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NumericalFailure

__all__ = [
    "ReservoirModel",
    "RlsState",
    "init_reservoir",
    "window_input",
    "run_states",
    "train_ls",
    "init_rls",
    "rls_step",
    "rls_run",
    "rc_forward",
]


@dataclass
class ReservoirModel:
    w_in: np.ndarray = field(repr=False)   # (n_neurons, n_in * window_len)
    w_res: np.ndarray = field(repr=False)  # (n_neurons, n_neurons)
    w_out: np.ndarray = field(repr=False)  # (n_out, n_neurons + n_in * window_len)
    n_in: int = 1
    window_len: int = 32
    seed: object = None

    @property
    def n_neurons(self) -> int:
        return self.w_res.shape[0]

    @property
    def state_dim(self) -> int:
        return self.w_out.shape[1]


@dataclass
class RlsState:
    phi_inv: np.ndarray = field(repr=False)
    alpha: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"forgetting factor must lie in (0, 1], got {self.alpha}")


def _spectral_radius(a: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(a))))


def init_reservoir(n_in: int, n_out: int, n_neurons: int = 16, window_len: int = 32,
                   spectral_radius: float = 0.9, input_scale: float = 0.5, seed=0) -> ReservoirModel:
    """Random reservoir with zero readout.

    Recurrent weights are uniform complex entries rescaled to the requested
    spectral radius; input weights are uniform in
    ``+-input_scale / sqrt(n_in * window_len)`` per real and imaginary part.
    """
    if n_neurons < 1:
        raise ValueError("n_neurons must be >= 1")
    rng = np.random.default_rng(seed)
    w = rng.uniform(-1, 1, (n_neurons, n_neurons)) + 1j * rng.uniform(-1, 1, (n_neurons, n_neurons))
    rad = _spectral_radius(w)
    w_res = w * (spectral_radius / rad) if rad > 0 else w
    fan_in = n_in * window_len
    bound = input_scale / np.sqrt(fan_in)
    w_in = bound * (rng.uniform(-1, 1, (n_neurons, fan_in)) + 1j * rng.uniform(-1, 1, (n_neurons, fan_in)))
    w_in.setflags(write=False)
    w_res.setflags(write=False)
    w_out = np.zeros((n_out, n_neurons + fan_in), dtype=complex)
    return ReservoirModel(w_in=w_in, w_res=w_res, w_out=w_out, n_in=n_in,
                          window_len=window_len, seed=seed)


def window_input(u: np.ndarray, window_len: int) -> np.ndarray:
    """Stack ``[u(m); u(m-1); ...; u(m-window_len+1)]`` per column, zero-padded."""
    u = np.atleast_2d(np.asarray(u, dtype=complex))
    n_in, T = u.shape
    out = np.zeros((n_in * window_len, T), dtype=complex)
    for j in range(window_len):
        if j >= T:
            break
        out[j * n_in:(j + 1) * n_in, j:] = u[:, : T - j]
    return out


def _ctanh(x):
    return np.tanh(x.real) + 1j * np.tanh(x.imag)


def run_states(model: ReservoirModel, u: np.ndarray) -> np.ndarray:
    """Trajectory ``Z`` with column m equal to ``[s(m); u_win(m)]``."""
    uw = window_input(u, model.window_len)
    drive = model.w_in @ uw
    T = uw.shape[1]
    s = np.zeros((model.n_neurons, T), dtype=complex)
    prev = np.zeros(model.n_neurons, dtype=complex)
    w = model.w_res
    for m in range(T):
        prev = _ctanh(w @ prev + drive[:, m])
        s[:, m] = prev
    return np.vstack([s, uw])


def train_ls(Z: np.ndarray, targets: np.ndarray, ridge: float = 0.0):
    """Least-squares readout ``argmin ||W Z - O||_F^2 + ridge ||W||_F^2``.

    Returns
    -------
    w_out : ndarray
    residual : float
        Frobenius norm of ``W Z - O`` on the training data.
    """
    Z = np.asarray(Z, dtype=complex)
    O = np.atleast_2d(np.asarray(targets, dtype=complex))
    if Z.shape[1] != O.shape[1]:
        raise ValueError(f"Z has {Z.shape[1]} columns, targets {O.shape[1]}")
    if ridge > 0:
        G = Z @ Z.conj().T + ridge * np.eye(Z.shape[0])
        W = np.linalg.solve(G, Z @ O.conj().T).conj().T
    else:
        sol, _, rank, _ = np.linalg.lstsq(Z.conj().T, O.conj().T, rcond=None)
        if rank < Z.shape[0]:
            raise NumericalFailure(f"rank-deficient trajectory ({rank} < {Z.shape[0]}) with ridge=0",
                                   stage="rc-ls")
        W = sol.conj().T
    if not np.all(np.isfinite(W)):
        raise NumericalFailure("non-finite LS readout", stage="rc-ls")
    return W, float(np.linalg.norm(W @ Z - O))


def init_rls(dim: int, alpha: float = 0.9995, delta: float = 1e-6,
             Z_pilot: Optional[np.ndarray] = None) -> RlsState:
    """``phi_inv = (Z Z^H + delta I)^-1`` from pilot statistics, or ``I/delta``."""
    if Z_pilot is None:
        return RlsState(phi_inv=np.eye(dim, dtype=complex) / delta, alpha=alpha)
    G = Z_pilot @ Z_pilot.conj().T + delta * np.eye(dim)
    P = np.linalg.inv(G)
    return RlsState(phi_inv=0.5 * (P + P.conj().T), alpha=alpha)


def rls_step(model: ReservoirModel, rls: RlsState, z: np.ndarray, target: np.ndarray):
    """One exponentially weighted RLS update of ``model.w_out`` (in place)."""
    P = rls.phi_inv
    Pz = P @ z
    zP = z.conj() @ P
    denom = rls.alpha + np.real(zP @ z)
    v = Pz / denom
    e = target - model.w_out @ z
    W = model.w_out + np.outer(e, v.conj())
    P = (P - np.outer(v, zP)) / rls.alpha
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(P))):
        raise NumericalFailure("non-finite RLS update", stage="rc-rls")
    model.w_out = W
    rls.phi_inv = P
    return model.w_out, rls


def rls_run(model: ReservoirModel, rls: RlsState, Z: np.ndarray, targets: np.ndarray):
    """Stream the columns of ``Z`` and ``targets`` through :func:`rls_step`."""
    targets = np.atleast_2d(targets)
    for m in range(Z.shape[1]):
        rls_step(model, rls, Z[:, m], targets[:, m])
    # keep the inverse correlation Hermitian against round-off drift
    rls.phi_inv = 0.5 * (rls.phi_inv + rls.phi_inv.conj().T)
    return model.w_out, rls


def rc_forward(model: ReservoirModel, u: Optional[np.ndarray] = None, Z: Optional[np.ndarray] = None) -> np.ndarray:
    """Linear readout of the trajectory; pass either raw input ``u`` or ``Z``."""
    if Z is None:
        Z = run_states(model, u)
    return model.w_out @ Z
