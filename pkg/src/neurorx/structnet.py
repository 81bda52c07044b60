"""StructNet: a learned effective channel (PE layer) plus a shared binary
classifier that detects PAM symbols through the shifting process.

Detection of a PAM component ``x_n`` in ``A = {-2K-1, ..., 2K+1}`` reduces to
``2K + 1`` binary questions. Shifting the received vector by ``s * h_n`` moves
``x_n`` to ``x_n + s``; the classifier then only has to tell whether that
shifted component is ``+1`` or ``-1``. The likelihood ratios collected at the
``2K + 1`` midpoints of the lattice chain together into a full posterior.

Vectors live in the integer-lattice coordinates of :mod:`neurorx.txchain`.
Imaginary dimensions are rotated by ``-j`` (``T([re; im]) = [im; -re]``)
before classification, so under a complex-structured channel one classifier
head serves both the real and the imaginary part of a stream.

A model holds ``n_units`` independent PE matrices of shape ``(d, n_dims)``
and ``n_heads`` classifier heads; ``head_index[u, n]`` picks the head used
for dimension ``n`` of unit ``u``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NumericalFailure
from .optim import make_optimizer
from .txchain import pam_levels

__all__ = [
    "BinarySample",
    "ClassPosterior",
    "StructNetParams",
    "SampleBatch",
    "construct_binary_samples",
    "shift",
    "rotate",
    "rotate_adjoint",
    "init_classifier",
    "binary_forward",
    "binary_logits",
    "assemble_class_posterior",
    "posterior_batch",
    "attention_weight",
    "structnet_loss",
    "offline_pretrain",
    "init_pe_lmmse",
    "train_pilot",
    "finetune_df",
    "LOGIT_CLIP",
]

LOGIT_CLIP = 30.0


def _check_label(label, M):
    lv = pam_levels(M)
    if not np.any(np.isclose(lv, label)):
        raise ValueError(f"label {label} is not in the {int(np.sqrt(M))}-PAM lattice")


@dataclass(frozen=True)
class BinarySample:
    input: np.ndarray
    label: int
    shift: float
    dim_index: int
    weight: float = 1.0


def construct_binary_samples(pam_label, y, dim_index: int = 0, weight: float = 1.0,
                             M: Optional[int] = None):
    """Positive/negative pair for one PAM label: shifts ``-x+1`` and ``-x-1``.

    The positive sample moves the labelled component to ``+1``, the negative
    one to ``-1``.
    """
    if M is not None:
        _check_label(pam_label, M)
    elif float(pam_label) % 2 != 1:
        raise ValueError(f"label {pam_label} is not an odd integer")
    y = np.asarray(y, dtype=float)
    pos = BinarySample(y, +1, float(-pam_label + 1), dim_index, weight)
    neg = BinarySample(y, -1, float(-pam_label - 1), dim_index, weight)
    return pos, neg


def shift(y, s, pe, n: int) -> np.ndarray:
    return np.asarray(y, dtype=float) + s * np.asarray(pe)[:, n]


def rotate(v: np.ndarray) -> np.ndarray:
    """Multiply the underlying complex vector by ``-j`` (last axis = [re; im])."""
    h = v.shape[-1] // 2
    return np.concatenate([v[..., h:], -v[..., :h]], axis=-1)


def rotate_adjoint(g: np.ndarray) -> np.ndarray:
    h = g.shape[-1] // 2
    return np.concatenate([-g[..., h:], g[..., :h]], axis=-1)


def init_classifier(d: int, n_hidden: int = 128, n_heads: int = 1, seed=0) -> dict:
    rng = np.random.default_rng(seed)
    b1 = np.sqrt(6.0 / (d + n_hidden))
    b2 = np.sqrt(6.0 / (n_hidden + 2))
    return {
        "w1": rng.uniform(-b1, b1, (n_heads, d, n_hidden)),
        "b1": np.zeros((n_heads, n_hidden)),
        "w2": rng.uniform(-b2, b2, (n_heads, n_hidden, 2)),
        "b2": np.zeros((n_heads, 2)),
    }


@dataclass
class StructNetParams:
    pe: np.ndarray                  # (n_units, d, n_dims)
    clf: dict                       # w1, b1, w2, b2 with a leading head axis
    head_index: np.ndarray          # (n_units, n_dims) int
    rot_dims: np.ndarray            # (n_dims,) bool
    M: int = 4

    @property
    def n_units(self) -> int:
        return self.pe.shape[0]

    @property
    def n_dims(self) -> int:
        return self.pe.shape[2]

    def arrays(self) -> dict:
        a = dict(self.clf)
        a["pe"] = self.pe
        return a

    def copy(self) -> "StructNetParams":
        return StructNetParams(self.pe.copy(), {k: v.copy() for k, v in self.clf.items()},
                               self.head_index.copy(), self.rot_dims.copy(), self.M)


@dataclass
class SampleBatch:
    """PAM-labelled received vectors. ``labels``/``weights`` are ``(S, n_dims)``."""

    y: np.ndarray
    unit: np.ndarray
    labels: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        self.unit = np.asarray(self.unit, dtype=np.int64).reshape(-1)
        self.labels = np.asarray(self.labels, dtype=float)
        if self.weights is None:
            self.weights = np.ones_like(self.labels)


@dataclass(frozen=True)
class ClassPosterior:
    probs: np.ndarray        # (..., n_classes), classes ascending
    argmax: np.ndarray       # detected PAM value
    confidence: np.ndarray   # probability of the detected value
    classes: np.ndarray = field(repr=False, default=None)


def _head_groups(head: np.ndarray):
    """``(h, index)`` pairs; ``index`` is a slice when ``head`` is sorted."""
    head = np.asarray(head)
    if head.size == 0:
        return []
    if head.size == 1 or np.all(head[1:] >= head[:-1]):
        cuts = np.flatnonzero(np.diff(head)) + 1
        starts = np.concatenate([[0], cuts])
        stops = np.concatenate([cuts, [head.size]])
        return [(int(head[a]), slice(a, b)) for a, b in zip(starts, stops)]
    return [(int(h), head == h) for h in np.unique(head)]


def _clf_forward(clf: dict, X: np.ndarray, head: np.ndarray, groups=None):
    z = np.empty((X.shape[0], 2))
    hid = np.empty((X.shape[0], clf["w1"].shape[2]))
    for h, m in groups if groups is not None else _head_groups(head):
        hm = X[m] @ clf["w1"][h]
        hm += clf["b1"][h]
        np.tanh(hm, out=hm)
        hid[m] = hm
        z[m] = hm @ clf["w2"][h] + clf["b2"][h]
    return z, hid


def binary_logits(clf: dict, X, head=None) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    head = np.zeros(X.shape[0], dtype=np.int64) if head is None else np.broadcast_to(head, X.shape[:1])
    return _clf_forward(clf, X, np.asarray(head))[0]


def binary_forward(clf: dict, X, head=None):
    """``(p_plus, p_minus)`` for each input row."""
    z = binary_logits(clf, X, head)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return p[:, 0], p[:, 1]


def _shifted_inputs(params: StructNetParams, y, unit, shifts):
    """Inputs for every (sample, dim, shift): returns ``(S, n_dims, n_shift, d)``."""
    cols = np.swapaxes(params.pe[unit], 1, 2)  # (S, n_dims, d)
    X = y[:, None, None, :] + shifts[..., None] * cols[:, :, None, :]
    X[:, params.rot_dims] = rotate(X[:, params.rot_dims])
    return X


def posterior_batch(params: StructNetParams, y, unit) -> ClassPosterior:
    """Class posteriors for all dims of all rows of ``y``; probs ``(S, n_dims, sqrt(M))``."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    unit = np.broadcast_to(np.asarray(unit, dtype=np.int64), y.shape[:1])
    levels = pam_levels(params.M)
    mids = 0.5 * (levels[:-1] + levels[1:])
    S, nd, nm = y.shape[0], params.n_dims, mids.size
    shifts = np.broadcast_to(-mids, (S, nd, nm))
    X = _shifted_inputs(params, y, unit, shifts)
    head = np.broadcast_to(params.head_index[unit][:, :, None], (S, nd, nm))
    z = _clf_forward(params.clf, X.reshape(-1, X.shape[-1]), head.reshape(-1))[0]
    llr = np.clip(z[:, 0] - z[:, 1], -LOGIT_CLIP, LOGIT_CLIP).reshape(S, nd, nm)
    logp = np.concatenate([np.zeros((S, nd, 1)), np.cumsum(llr, axis=-1)], axis=-1)
    logp -= logp.max(axis=-1, keepdims=True)
    p = np.exp(logp)
    p /= p.sum(axis=-1, keepdims=True)
    idx = np.argmax(p, axis=-1)
    conf = np.take_along_axis(p, idx[..., None], axis=-1)[..., 0]
    return ClassPosterior(probs=p, argmax=levels[idx], confidence=conf, classes=levels)


def assemble_class_posterior(params: StructNetParams, y, n: int, unit: int = 0) -> ClassPosterior:
    """Posterior over the PAM lattice for dimension ``n`` of a single vector."""
    post = posterior_batch(params, np.asarray(y, dtype=float)[None, :], unit)
    return ClassPosterior(probs=post.probs[0, n], argmax=post.argmax[0, n],
                          confidence=post.confidence[0, n], classes=post.classes)


def attention_weight(confidence, eta: float = 0.5):
    """``q(x) = x`` if ``x >= eta`` else 0."""
    c = np.asarray(confidence, dtype=float)
    out = np.where(c >= eta, c, 0.0)
    return out if out.ndim else float(out)


def structnet_loss(params: StructNetParams, batch: SampleBatch, need_input_grad: bool = False):
    """Weighted binary cross-entropy over all constructed samples.

    Returns
    -------
    loss : float
        ``mean(w * CE)`` over the ``2 * S * n_dims`` binary samples.
    grads : dict
        Gradients for ``w1, b1, w2, b2`` and ``pe``.
    dy : ndarray or None
        Gradient with respect to ``batch.y`` when requested.
    """
    y, unit = batch.y, batch.unit
    S, d = y.shape
    nd = params.n_dims
    x = batch.labels
    shifts = np.stack([-x + 1.0, -x - 1.0], axis=-1)  # (S, nd, 2)
    X = _shifted_inputs(params, y, unit, shifts)
    head = np.broadcast_to(params.head_index[unit][:, :, None], (S, nd, 2)).reshape(-1)
    Xf = X.reshape(-1, d)
    target = np.tile([0, 1], S * nd)
    w = np.repeat(batch.weights.reshape(-1), 2)
    order = None
    if head.size > 1 and np.any(head[1:] < head[:-1]):
        order = np.argsort(head, kind="stable")
        head, Xf, target, w = head[order], Xf[order], target[order], w[order]
    groups = _head_groups(head)
    z, hid = _clf_forward(params.clf, Xf, head, groups)
    N = Xf.shape[0]

    zs = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(zs).sum(axis=1))
    ce = lse - zs[np.arange(N), target]
    loss = float(np.sum(w * ce) / N)
    if not np.isfinite(loss):
        raise NumericalFailure("non-finite StructNet loss", stage="structnet")

    p = np.exp(zs - lse[:, None])
    dz = p
    dz[np.arange(N), target] -= 1.0
    dz *= (w / N)[:, None]

    clf = params.clf
    grads = {k: np.zeros_like(v) for k, v in clf.items()}
    dX = np.empty_like(Xf)
    for h, m in groups:
        hm, dzm = hid[m], dz[m]
        grads["w2"][h] = hm.T @ dzm
        grads["b2"][h] = dzm.sum(axis=0)
        da = dzm @ clf["w2"][h].T
        sech2 = hm * hm
        np.subtract(1.0, sech2, out=sech2)
        da *= sech2
        grads["w1"][h] = Xf[m].T @ da
        grads["b1"][h] = da.sum(axis=0)
        dX[m] = da @ clf["w1"][h].T
    if order is not None:
        dX[order] = dX.copy()
    dX = dX.reshape(S, nd, 2, d)
    dX[:, params.rot_dims] = rotate_adjoint(dX[:, params.rot_dims])
    # d(loss)/d(pe[u][:, n]) = sum of shift * dX over samples of unit u
    contrib = np.einsum("snk,snkd->snd", shifts, dX)
    gpe = np.zeros((params.n_units, nd, d))
    np.add.at(gpe, unit, contrib)
    grads["pe"] = np.swapaxes(gpe, 1, 2)
    dy = dX.sum(axis=(1, 2)) if need_input_grad else None
    return loss, grads, dy


@functools.lru_cache(maxsize=16)
def _pretrain_cached(n_hidden, M, seed, d, n_samples, epochs, lr, ebno_lo, ebno_hi):
    rng = np.random.default_rng(seed)
    levels = pam_levels(M)
    k = np.log2(M)
    x = rng.choice(levels, size=(n_samples, d))
    x[:, 0] = rng.choice([-1.0, 1.0], size=n_samples)
    ebno = 10.0 ** (rng.uniform(ebno_lo, ebno_hi, size=n_samples) / 10.0)
    sigma2 = (2.0 * (M - 1) / 3.0) / (2.0 * k * ebno)
    y = x + np.sqrt(sigma2)[:, None] * rng.standard_normal((n_samples, d))
    target = (x[:, 0] < 0).astype(np.int64)  # class 0 is "+1"

    clf = init_classifier(d, n_hidden, 1, seed=rng.integers(2**32))
    opt = make_optimizer("adam", clf, lr)
    N = n_samples
    head = np.zeros(N, dtype=np.int64)
    for _ in range(epochs):
        z, hid = _clf_forward(clf, y, head)
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(N), target] -= 1.0
        dz = p / N
        da = (dz @ clf["w2"][0].T) * (1.0 - hid ** 2)
        g = {"w2": (hid.T @ dz)[None], "b2": dz.sum(axis=0)[None],
             "w1": (y.T @ da)[None], "b1": da.sum(axis=0)[None]}
        opt.step(g)
    for v in clf.values():
        v.setflags(write=False)
    return clf


def offline_pretrain(n_hidden: int = 128, M: int = 16, seed=0, d: int = 2, n_samples: int = 2000,
                     epochs: int = 1000, lr: float = 1e-2, ebno_range=(0.0, 15.0)) -> dict:
    """Classifier pretrained on artificial samples ``x + noise``.

    The first component of ``x`` is ``+-1`` (it carries the label); the others
    are drawn from the PAM lattice so the head learns to ignore them. Noise
    variance per sample follows an Eb/No drawn uniformly from ``ebno_range``.
    Results are cached; callers receive a fresh writable copy.
    """
    clf = _pretrain_cached(n_hidden, M, int(seed), d, n_samples, epochs, lr,
                           float(ebno_range[0]), float(ebno_range[1]))
    return {k: v.copy() for k, v in clf.items()}


def init_pe_lmmse(outputs, symbols, ridge: float = 1e-3) -> np.ndarray:
    """Ridge fit ``pe = Y X^T (X X^T + ridge I)^-1`` with samples along rows.

    ``outputs`` is ``(S, d)`` and ``symbols`` ``(S, n_dims)``.
    """
    Y = np.atleast_2d(np.asarray(outputs, dtype=float))
    X = np.atleast_2d(np.asarray(symbols, dtype=float))
    if X.shape[0] == 0 or not np.any(X):
        raise ValueError("no pilot symbols to fit the PE layer")
    if X.shape[0] != Y.shape[0]:
        raise ValueError("pilot output and symbol counts differ")
    G = X.T @ X
    lam = ridge * max(np.trace(G) / G.shape[0], 1e-12)
    try:
        pe = np.linalg.solve(G + lam * np.eye(G.shape[0]), X.T @ Y).T
    except np.linalg.LinAlgError:
        pe = np.linalg.lstsq(G + (lam + 1e-6) * np.eye(G.shape[0]), X.T @ Y, rcond=None)[0].T
    return pe


def _make_opts(params: StructNetParams, optimizer: str, lr_clf: float, lr_pe: float):
    return {"clf": make_optimizer(optimizer, params.clf, lr_clf),
            "pe": make_optimizer(optimizer, {"pe": params.pe}, lr_pe)}


def train_pilot(params: StructNetParams, batch: SampleBatch, epochs: int = 20, lr_clf: float = 1e-3,
                lr_pe: float = 5e-4, optimizer: str = "adam", frontend=None, freeze_pe: bool = False,
                opts: Optional[dict] = None):
    """Alternating pilot training: even epochs update the classifier (and the
    optional ``frontend``), odd epochs update the PE layer.

    ``frontend`` produces the inputs ``batch.y`` through ``forward()`` and
    consumes their gradient through ``update(dy)``; the 2D attention module
    plugs in here.

    Returns
    -------
    history : list of float
        Loss evaluated at the start of every epoch.
    opts : dict
        Optimizer state, reusable for later fine-tuning.
    """
    if opts is None:
        opts = _make_opts(params, optimizer, lr_clf, lr_pe)
    history = []
    for ep in range(epochs):
        clf_epoch = ep % 2 == 0
        if not clf_epoch and freeze_pe:
            continue
        if frontend is not None:
            batch.y = frontend.forward()
        loss, g, dy = structnet_loss(params, batch, need_input_grad=frontend is not None and clf_epoch)
        history.append(loss)
        if clf_epoch:
            opts["clf"].step(g, keys=("w1", "b1", "w2", "b2"))
            if frontend is not None:
                frontend.update(dy)
        else:
            opts["pe"].step(g, keys=("pe",))
    return history, opts


def finetune_df(params: StructNetParams, batch: SampleBatch, confidences, epochs_df: int = 3,
                lr_clf: float = 1e-3, lr_pe: float = 5e-4, eta: float = 0.5, optimizer: str = "adam",
                freeze_pe: bool = False, opts: Optional[dict] = None):
    """Decision-feedback fine-tuning weighted by ``q(confidence)``.

    Samples whose weight is zero are dropped; when nothing survives the
    parameters are left untouched and ``skipped`` is reported.
    """
    w = attention_weight(confidences, eta)
    w = np.asarray(w, dtype=float).reshape(batch.labels.shape)
    keep = np.any(w > 0, axis=1)
    diag = {"kept": int(np.count_nonzero(w)), "total": int(w.size), "skipped": False, "loss": []}
    if not np.any(keep):
        diag["skipped"] = True
        return diag, opts
    sub = SampleBatch(batch.y[keep], batch.unit[keep], batch.labels[keep], w[keep])
    hist, opts = train_pilot(params, sub, epochs_df, lr_clf, lr_pe, optimizer,
                             freeze_pe=freeze_pe, opts=opts)
    diag["loss"] = hist
    return diag, opts
