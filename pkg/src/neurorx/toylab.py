"""Toy 2x2 real MIMO experiments with 4-PAM and condition-filtered Gaussian
channels.

Three receivers share one classifier architecture:

* ADNN-GT uses the true channel for shifting.
* ADNN-LMMSE uses a ridge LS estimate from 4 pilot samples, kept frozen.
* StructNet starts from the same estimate and learns it (PE layer).

A four-class MLP with the same hidden layer serves as the comparator under
label corruption.

Noise: with 4-PAM on the integer lattice ``{-3, -1, 1, 3}`` the symbol energy
is 5 and each symbol carries 2 bits, so ``Eb = 2.5`` and the per-dimension
noise variance is ``sigma^2 = Eb / (2 Eb/No) = 1.25 / (Eb/No)``. Channel gain
is not folded into Eb.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .optim import make_optimizer
from .structnet import (SampleBatch, StructNetParams, construct_binary_samples, init_classifier,
                        posterior_batch, train_pilot)
from .txchain import pam_levels

__all__ = [
    "ToyConfig",
    "toy_channel_sample",
    "toy_noise_var",
    "corrupt_labels",
    "binary_label_audit",
    "FourClassMlp",
    "toy_trial",
    "toy_experiment_a",
    "toy_experiment_b",
    "ToyTable",
]

M_TOY = 16  # 4-PAM per real dimension
METHODS_A = ("ADNN-GT", "ADNN-LMMSE", "StructNet")
METHODS_B = ("StructNet", "FourClassMlp", "ADNN-GT", "ADNN-LMMSE")


@dataclass(frozen=True)
class ToyConfig:
    n_lmmse: int = 4
    n_train: int = 996
    n_test: int = 3000
    max_cond: float = 1.5
    n_hidden: int = 128
    epochs: int = 80
    lr_clf: float = 2e-2
    lr_pe: float = 2e-2
    optimizer: str = "adam"


def toy_noise_var(ebno_db: float) -> float:
    return 1.25 / 10.0 ** (ebno_db / 10.0)


def toy_channel_sample(seed, max_cond: float = 1.5, guard: int = 10 ** 6, return_draws: bool = False):
    """Rejection-sample a real 2x2 N(0, 1) channel with condition number below ``max_cond``."""
    rng = np.random.default_rng(seed)
    for draws in range(1, guard + 1):
        H = rng.standard_normal((2, 2))
        if np.linalg.cond(H) < max_cond:
            return (H, draws) if return_draws else H
    raise RuntimeError(f"no channel with cond < {max_cond} in {guard} draws")


def corrupt_labels(labels: np.ndarray, fraction: float, rng) -> np.ndarray:
    """Replace a ``fraction`` of entries by a uniform draw from the other PAM levels."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("corruption fraction must lie in [0, 1]")
    levels = pam_levels(M_TOY)
    out = np.array(labels, dtype=float, copy=True)
    flat = out.reshape(-1)
    n_bad = int(round(fraction * flat.size))
    idx = rng.choice(flat.size, size=n_bad, replace=False)
    for i in idx:
        others = levels[levels != flat[i]]
        flat[i] = others[rng.integers(others.size)]
    return out


def binary_label_audit(true_labels, used_labels) -> float:
    """Fraction of constructed binary samples whose assigned label disagrees
    with the sign of the actually shifted component."""
    t = np.asarray(true_labels, dtype=float).ravel()
    u = np.asarray(used_labels, dtype=float).ravel()
    wrong = 0
    for xt, xu in zip(t, u):
        for s in construct_binary_samples(xu, np.zeros(1)):
            wrong += int(np.sign(xt + s.shift) != s.label)
    return wrong / (2 * t.size)


class FourClassMlp:
    """Per-dimension MLP ``y -> tanh(W1 y + b1) -> 4 logits``."""

    def __init__(self, d: int = 2, n_dims: int = 2, n_hidden: int = 128, seed=0):
        rng = np.random.default_rng(seed)
        b1 = np.sqrt(6.0 / (d + n_hidden))
        b2 = np.sqrt(6.0 / (n_hidden + 4))
        self.levels = pam_levels(M_TOY)
        self.p = {
            "w1": rng.uniform(-b1, b1, (n_dims, d, n_hidden)),
            "b1": np.zeros((n_dims, n_hidden)),
            "w2": rng.uniform(-b2, b2, (n_dims, n_hidden, 4)),
            "b2": np.zeros((n_dims, 4)),
        }

    def _forward(self, y, n):
        h = np.tanh(y @ self.p["w1"][n] + self.p["b1"][n])
        return h, h @ self.p["w2"][n] + self.p["b2"][n]

    def fit(self, y, labels, epochs: int, lr: float, optimizer: str = "adam"):
        opt = make_optimizer(optimizer, self.p, lr)
        cls = np.searchsorted(self.levels, labels)
        N = y.shape[0]
        for _ in range(epochs):
            g = {k: np.zeros_like(v) for k, v in self.p.items()}
            for n in range(labels.shape[1]):
                h, z = self._forward(y, n)
                z = z - z.max(axis=1, keepdims=True)
                p = np.exp(z)
                p /= p.sum(axis=1, keepdims=True)
                p[np.arange(N), cls[:, n]] -= 1.0
                dz = p / N
                da = (dz @ self.p["w2"][n].T) * (1.0 - h ** 2)
                g["w2"][n], g["b2"][n] = h.T @ dz, dz.sum(axis=0)
                g["w1"][n], g["b1"][n] = y.T @ da, da.sum(axis=0)
            opt.step(g)
        return self

    def predict(self, y) -> np.ndarray:
        return np.stack([self.levels[np.argmax(self._forward(y, n)[1], axis=1)]
                         for n in range(self.p["w1"].shape[0])], axis=1)


def _make_params(pe, clf):
    return StructNetParams(pe[None].copy(), {k: v.copy() for k, v in clf.items()},
                           np.array([[0, 1]]), np.zeros(2, dtype=bool), M_TOY)


def _ser(params, y, x) -> float:
    return float(np.mean(posterior_batch(params, y, 0).argmax != x))


def toy_trial(ebno_db: float, seed, cfg: ToyConfig = ToyConfig(), corrupt: float = 0.0,
              methods: Sequence[str] = METHODS_A) -> dict:
    """One channel realization: train every requested method, return SER per method."""
    ss = np.random.SeedSequence(seed)
    s_ch, s_data, s_clf, s_bad = ss.spawn(4)
    H = toy_channel_sample(s_ch, cfg.max_cond)
    rng = np.random.default_rng(s_data)
    levels = pam_levels(M_TOY)
    nv = toy_noise_var(ebno_db)
    n_all = cfg.n_lmmse + cfg.n_train + cfg.n_test
    x = rng.choice(levels, size=(n_all, 2))
    y = x @ H.T + np.sqrt(nv) * rng.standard_normal((n_all, 2))
    xl, yl = x[: cfg.n_lmmse], y[: cfg.n_lmmse]
    xt, yt = x[cfg.n_lmmse: cfg.n_lmmse + cfg.n_train], y[cfg.n_lmmse: cfg.n_lmmse + cfg.n_train]
    xe, ye = x[-cfg.n_test:], y[-cfg.n_test:]
    labels = corrupt_labels(xt, corrupt, np.random.default_rng(s_bad)) if corrupt > 0 else xt

    H_ls = np.linalg.solve(xl.T @ xl + nv * np.eye(2), xl.T @ yl).T
    clf0 = init_classifier(2, cfg.n_hidden, 2, seed=s_clf)
    batch = SampleBatch(yt, np.zeros(len(yt)), labels)
    out = {"binary_corruption": binary_label_audit(xt, labels) if corrupt > 0 else 0.0}
    half = cfg.epochs // 2
    for m in methods:
        if m == "FourClassMlp":
            mlp = FourClassMlp(2, 2, cfg.n_hidden, seed=s_clf).fit(yt, labels, half, cfg.lr_clf, cfg.optimizer)
            out[m] = float(np.mean(mlp.predict(ye) != xe))
            continue
        pe, learn = {"ADNN-GT": (H, False), "ADNN-LMMSE": (H_ls, False), "StructNet": (H_ls, True)}[m]
        params = _make_params(pe, clf0)
        # same number of classifier updates for every method
        epochs = cfg.epochs if learn else cfg.epochs - 1
        train_pilot(params, batch, epochs, cfg.lr_clf, cfg.lr_pe, cfg.optimizer, freeze_pe=not learn)
        out[m] = _ser(params, ye, xe)
    return out


@dataclass
class ToyTable:
    """SER per (method, x) with one entry per seed; ``x`` is Eb/No or corruption."""

    x_name: str
    ser: dict = field(default_factory=dict)  # (method, x) -> list of SER
    binary_corruption: dict = field(default_factory=dict)  # x -> list

    def median(self, method: str, x: float) -> float:
        return float(np.median(self.ser[(method, x)]))

    def rows(self):
        for (m, x), v in sorted(self.ser.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            yield m, x, len(v), float(np.median(v)), float(np.mean(v))


def toy_experiment_a(ebno_list=(3, 5, 7, 9), seeds=range(100), cfg: ToyConfig = ToyConfig()) -> ToyTable:
    """SER of ADNN-GT / ADNN-LMMSE / StructNet against Eb/No, one channel per seed."""
    tab = ToyTable("ebno_db")
    for e in ebno_list:
        for s in seeds:
            r = toy_trial(e, [int(s), 0], cfg, 0.0, METHODS_A)
            for m in METHODS_A:
                tab.ser.setdefault((m, float(e)), []).append(r[m])
    return tab


def toy_experiment_b(corrupt_fractions=(0.0, 0.3, 0.5, 0.7), seeds=range(20), ebno_db: float = 5.0,
                     cfg: ToyConfig = ToyConfig(), methods: Sequence[str] = METHODS_B) -> ToyTable:
    """SER against the fraction of corrupted PAM training labels at fixed Eb/No."""
    tab = ToyTable("corruption")
    for f in corrupt_fractions:
        for s in seeds:
            r = toy_trial(ebno_db, [int(s), 1], cfg, float(f), methods)
            for m in methods:
                tab.ser.setdefault((m, float(f)), []).append(r[m])
            tab.binary_corruption.setdefault(float(f), []).append(r["binary_corruption"])
    return tab
