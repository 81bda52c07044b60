"""Per-subframe receivers and the Monte-Carlo driver.

The learned receivers share one flow. A reservoir equalizes the received
time-domain signal and is trained by least squares on the pilot symbols.
Its output is converted to the frequency domain and handed to StructNet,
optionally after the 2D attention module. The data symbols are then
processed in order. Each symbol's RC output is projected onto the
constellation, re-modulated and used as the RLS target for the reservoir.
StructNet's decisions, weighted by confidence, fine-tune the classifier
(and the PE layer where enabled).

Conventional receivers estimate CSI (oracle, pilot-only, interpolated or
decision-directed) and apply LMMSE, sphere-decoding or brute-force ML
detection on every data resource element.
"""

from __future__ import annotations

import concurrent.futures as cf
import dataclasses
import re
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import baselines as bl
from .attention import init_mha, twod_mha_backward, twod_mha_forward
from .channel import (ChannelProfile, PaConfig, apply_channel, generate_channel,
                      noise_var_from_ebno, true_freq_response)
from .errors import ConfigurationError, NumericalFailure
from .optim import make_optimizer
from .reservoir import init_reservoir, init_rls, rls_run, run_states, train_ls
from .structnet import (SampleBatch, StructNetParams, finetune_df, init_pe_lmmse,
                        offline_pretrain, posterior_batch, train_pilot)
from .txchain import (PilotPattern, Subframe, SubframeSpec, assemble_subframe, demap_qam_to_bits,
                      demodulate_subframe, modulate_subframe, nearest_qam, ofdm_modulate, qam_scale)

__all__ = [
    "RC_VARIANTS",
    "ReservoirConfig",
    "AttentionConfig",
    "StructNetConfig",
    "DetectorConfig",
    "DetectionReport",
    "SubframeSim",
    "simulate_subframe",
    "detect_subframe",
    "detect_subframe_conventional",
    "run_detector",
    "CellResult",
    "MonteCarloTable",
    "run_montecarlo",
    "parse_variant",
]

# variant -> (decision feedback, PE learned, 2D attention)
RC_VARIANTS = {
    "RcStruct": (False, False, False),
    "RcStructDf": (True, False, False),
    "RcStructNetDf": (True, True, False),
    "RcAttStructNetDf": (True, True, True),
}
CONVENTIONAL_KINDS = ("Lmmse", "SphereDecoder")
CSI_NAMES = {"Oracle": bl.CsiSource.ORACLE, "PilotOnly": bl.CsiSource.PILOT_ONLY,
             "Interpolated": bl.CsiSource.INTERPOLATED, "DecisionDirected": bl.CsiSource.DECISION_DIRECTED}

STAGE_DATA, STAGE_PILOT, STAGE_CHANNEL, STAGE_NOISE, STAGE_RC, STAGE_MHA, STAGE_CLF = range(7)


def parse_variant(name: str):
    """``"Lmmse{Oracle}"`` -> ``("Lmmse", CsiSource.ORACLE)``; RC variants map to ``(name, None)``."""
    if name in RC_VARIANTS or name == "MlOracle":
        return name, None
    m = re.fullmatch(r"(\w+)\{(\w+)\}", name)
    if not m or m.group(1) not in CONVENTIONAL_KINDS or m.group(2) not in CSI_NAMES:
        raise ConfigurationError(f"unknown detector variant {name!r}")
    return m.group(1), CSI_NAMES[m.group(2)]


@dataclass(frozen=True)
class ReservoirConfig:
    n_neurons: int = 16
    window_len: int = 32
    spectral_radius: float = 0.9
    input_scale: float = 0.5
    delay: Optional[int] = None  # None -> n_cp
    ridge: float = 1.0
    alpha: float = 0.9995
    delta: float = 1e-6
    warm_start: bool = True


@dataclass(frozen=True)
class AttentionConfig:
    nk_time: int = 216
    nk_freq: int = 8
    lr: float = 1e-3
    optimizer: str = "adam"
    zero_output: bool = True


@dataclass(frozen=True)
class StructNetConfig:
    n_hidden: int = 128
    group_size: int = 108
    epochs_pilot: int = 20
    epochs_df: int = 3
    lr_clf: float = 1e-3
    lr_pe: float = 5e-4
    optimizer: str = "adam"
    eta: float = 0.5
    pe_ridge: float = 1e-3
    pretrain_samples: int = 2000
    pretrain_epochs: int = 1000
    pretrain_lr: float = 1e-2
    pretrain_seed: int = 0


@dataclass(frozen=True)
class DetectorConfig:
    variant: str = "RcAttStructNetDf"
    reservoir: ReservoirConfig = field(default_factory=ReservoirConfig)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    structnet: StructNetConfig = field(default_factory=StructNetConfig)
    df_target: str = "projection"
    csi_taps: Optional[int] = None
    dd_alpha: float = 0.95

    def __post_init__(self):
        parse_variant(self.variant)
        if self.df_target not in ("projection", "decision"):
            raise ConfigurationError(f"df_target must be 'projection' or 'decision', got {self.df_target!r}")
        if self.structnet.optimizer not in ("gd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.structnet.optimizer!r}")

    def with_variant(self, variant: str) -> "DetectorConfig":
        return dataclasses.replace(self, variant=variant)


@dataclass
class DetectionReport:
    variant: str
    detected_bits: np.ndarray = field(repr=False)
    detected_symbols: np.ndarray = field(repr=False)  # (n_data_re, n_t)
    bit_errors: int = 0
    n_bits: int = 0
    symbol_errors: int = 0
    n_symbols: int = 0
    confidence_hist: np.ndarray = field(default_factory=lambda: np.zeros(10, dtype=np.int64))
    timings: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def ber(self) -> float:
        return self.bit_errors / self.n_bits if self.n_bits else float("nan")

    @property
    def ser(self) -> float:
        return self.symbol_errors / self.n_symbols if self.n_symbols else float("nan")

    def same_as(self, other: "DetectionReport") -> bool:
        """Equality of everything except wall-clock timings."""
        return (self.variant == other.variant
                and np.array_equal(self.detected_bits, other.detected_bits)
                and np.array_equal(self.detected_symbols, other.detected_symbols)
                and (self.bit_errors, self.n_bits, self.symbol_errors, self.n_symbols)
                == (other.bit_errors, other.n_bits, other.symbol_errors, other.n_symbols)
                and np.array_equal(self.confidence_hist, other.confidence_hist))


@dataclass
class SubframeSim:
    spec: SubframeSpec
    subframe: Subframe
    x_time: np.ndarray = field(repr=False)
    rx_time: np.ndarray = field(repr=False)
    channel: object = field(repr=False)
    noise_var: float = 0.0


def _seed(master, index, stage):
    return np.random.SeedSequence([int(master), int(index), int(stage)])


def simulate_subframe(spec: SubframeSpec, profile: ChannelProfile, ebno_db: float, master_seed: int,
                      index: int, pa: Optional[PaConfig] = None) -> SubframeSim:
    """Draw data, channel and noise for subframe ``index`` of a run.

    Every random stage gets its own seed derived from ``(master, index,
    stage)``, so all detectors evaluated on the same index see the same
    transmission.
    """
    rng = np.random.default_rng(_seed(master_seed, index, STAGE_DATA))
    bits = rng.integers(0, 2, size=spec.n_data_bits(), dtype=np.int8)
    sub = assemble_subframe(spec, bits, _seed(master_seed, index, STAGE_PILOT))
    x_time = modulate_subframe(sub.freq, spec.n_cp)
    ch = generate_channel(profile, spec.n_r, spec.n_t, x_time.shape[1],
                          _seed(master_seed, index, STAGE_CHANNEL), n_cp=spec.n_cp)
    nv = noise_var_from_ebno(ebno_db, spec.mod_order, spec)
    rx = apply_channel(x_time, ch, pa, nv, seed=_seed(master_seed, index, STAGE_NOISE))
    return SubframeSim(spec, sub, x_time, rx, ch, nv)


def _finish_report(variant, spec: SubframeSpec, sub: Subframe, detected: np.ndarray, conf=None,
                   timings=None, diagnostics=None) -> DetectionReport:
    data_mask = ~sub.pilot_mask
    det_syms = detected.transpose(0, 2, 1)[data_mask]
    true_syms = sub.data_symbols()
    det_bits = demap_qam_to_bits(det_syms, spec.mod_order)
    sym_err = int(np.count_nonzero(~np.isclose(nearest_qam(det_syms, spec.mod_order), true_syms)))
    hist = np.zeros(10, dtype=np.int64)
    if conf is not None and conf.size:
        hist = np.histogram(conf, bins=10, range=(0.0, 1.0))[0].astype(np.int64)
    return DetectionReport(
        variant=variant, detected_bits=det_bits, detected_symbols=det_syms,
        bit_errors=int(np.count_nonzero(det_bits != sub.data_bits)), n_bits=int(sub.data_bits.size),
        symbol_errors=sym_err, n_symbols=int(true_syms.size), confidence_hist=hist,
        timings=timings or {}, diagnostics=diagnostics or {})


class _MhaFrontend:
    """Feeds StructNet with attention-refined pilot features during training."""

    def __init__(self, params, grid, index, lr, optimizer="adam"):
        self.params = params
        self.grid = grid          # (n_t, n_sym, 2 n_sc)
        self.index = index        # (t, n, k) per StructNet sample
        self.opt = make_optimizer(optimizer, params.arrays(), lr)

    def _gather(self, out):
        t, n, k = self.index
        g = out.reshape(out.shape[0], out.shape[1], -1, 2)
        return g[t, n, k]

    def forward(self):
        return self._gather(twod_mha_forward(self.grid, self.params))

    def update(self, dy):
        t, n, k = self.index
        d = np.zeros(self.grid.shape[:2] + (self.grid.shape[2] // 2, 2))
        np.add.at(d, (t, n, k), dy)
        grads, _ = twod_mha_backward(self.grid, self.params, d.reshape(self.grid.shape))
        self.opt.step(grads)


def _interleave(freq: np.ndarray) -> np.ndarray:
    """(..., n_sc) complex -> (..., 2 n_sc) real with re/im pairs."""
    return np.stack([freq.real, freq.imag], axis=-1).reshape(*freq.shape[:-1], -1)


class _RcReceiver:
    def __init__(self, cfg: DetectorConfig, spec: SubframeSpec, sub: Subframe, rx_time, noise_var,
                 master_seed, index):
        self.cfg, self.spec, self.sub = cfg, spec, sub
        self.rx = np.asarray(rx_time)
        self.noise_var = noise_var
        self.df, self.learn_pe, self.use_mha = RC_VARIANTS[cfg.variant]
        self.c = qam_scale(spec.mod_order)
        self.Ls = spec.symbol_len
        self.d = spec.n_cp if cfg.reservoir.delay is None else cfg.reservoir.delay
        if not 0 <= self.d <= spec.n_cp:
            raise ConfigurationError(f"reservoir delay {self.d} must lie in [0, n_cp={spec.n_cp}]")
        self.seed_rc = _seed(master_seed, index, STAGE_RC)
        self.seed_mha = _seed(master_seed, index, STAGE_MHA)
        G = cfg.structnet.group_size
        self.n_groups = -(-spec.n_sc // G)
        self.group = np.arange(spec.n_sc) // G
        self.scattered = spec.pilot_pattern is PilotPattern.SCATTERED
        self.timings = {}

    # ----- reservoir -------------------------------------------------------
    def _tic(self, name, t0):
        self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0

    def _body_freq(self, W, n):
        s0 = n * self.Ls + self.spec.n_cp
        seg = W @ self.Z[:, s0:s0 + self.spec.n_sc]
        return np.fft.fft(np.roll(seg, -self.d, axis=1), axis=1, norm="ortho")

    def _fit_reservoir(self):
        t0 = time.perf_counter()
        spec, rcfg = self.spec, self.cfg.reservoir
        if self.scattered:
            span = self.rx
        else:
            span = self.rx[:, : spec.n_pilot * self.Ls]
        u = self.rx / np.sqrt(np.mean(np.abs(span) ** 2))
        self.model = init_reservoir(spec.n_r, spec.n_t, rcfg.n_neurons, rcfg.window_len,
                                    rcfg.spectral_radius, rcfg.input_scale, seed=self.seed_rc)
        self.Z = run_states(self.model, u)
        self.target = np.zeros((spec.n_t, self.Z.shape[1]), dtype=complex)
        if self.scattered:
            mask = self.sub.pilot_mask
            cols, tgt = [], []
            for n in spec.pilot_symbols():
                s0 = n * self.Ls + spec.n_cp
                zf = np.fft.fft(np.roll(self.Z[:, s0:s0 + spec.n_sc], -self.d, axis=1), axis=1, norm="ortho")
                cols.append(zf[:, mask[n]])
                tgt.append(self.sub.pilots[n][:, mask[n]])
            Zp, Op = np.hstack(cols), np.hstack(tgt)
        else:
            n_p = spec.n_pilot * self.Ls
            self.target[:, :n_p] = modulate_subframe(self.sub.pilots[: spec.n_pilot], spec.n_cp)
            Zp = self.Z[:, self.d:n_p]
            Op = self.target[:, : n_p - self.d]
        W, _ = train_ls(Zp, Op, rcfg.ridge)
        self.model.w_out = W
        if rcfg.warm_start:
            # continue the LS statistics, ridge included
            self.rls = init_rls(W.shape[1], rcfg.alpha, max(rcfg.ridge, rcfg.delta), Z_pilot=Zp)
        else:
            self.rls = init_rls(W.shape[1], rcfg.alpha, rcfg.delta)
        self._tic("rc_train", t0)

    def _rls_update(self, n, xbar):
        t0 = time.perf_counter()
        s0 = n * self.Ls
        self.target[:, s0:s0 + self.Ls] = ofdm_modulate(xbar, self.spec.n_cp)
        lo = max(s0, self.d)
        cols = np.arange(lo, s0 + self.Ls)
        rls_run(self.model, self.rls, self.Z[:, cols], self.target[:, cols - self.d])
        self._tic("rc_rls", t0)

    # ----- frequency domain -------------------------------------------------
    def _samples(self, grid_lat, n_idx, k_idx, t_idx):
        """StructNet vectors from lattice-unit grid (n, t, k)."""
        v = grid_lat[n_idx, t_idx, k_idx]
        return np.stack([v.real, v.imag], axis=1)

    def _unit(self, k_idx, t_idx):
        return self.group[k_idx] * self.spec.n_t + t_idx

    def _init_structnet(self, y, unit, labels):
        scfg, spec = self.cfg.structnet, self.spec
        n_units = self.n_groups * spec.n_t
        pe = np.zeros((n_units, 2, 2))
        for u in range(n_units):
            m = unit == u
            pe[u] = init_pe_lmmse(y[m], labels[m], scfg.pe_ridge) if np.any(m) else np.eye(2)
        t0 = time.perf_counter()
        base = offline_pretrain(scfg.n_hidden, spec.mod_order, scfg.pretrain_seed, d=2,
                                n_samples=scfg.pretrain_samples, epochs=scfg.pretrain_epochs,
                                lr=scfg.pretrain_lr)
        self._tic("pretrain", t0)
        clf = {k: np.repeat(v, self.n_groups, axis=0) for k, v in base.items()}
        head = np.repeat((np.arange(n_units) // spec.n_t)[:, None], 2, axis=1)
        return StructNetParams(pe, clf, head, np.array([False, True]), spec.mod_order)

    def run(self):
        spec, scfg = self.spec, self.cfg.structnet
        self._fit_reservoir()
        t0 = time.perf_counter()
        mask = self.sub.pilot_mask
        N = spec.n_total
        W0 = self.model.w_out.copy()
        pil_syms = spec.pilot_symbols()
        lat = np.zeros((N, spec.n_t, spec.n_sc), dtype=complex)
        for n in pil_syms:
            lat[n] = self._body_freq(W0, n) / self.c
        # pilot StructNet samples: every pilot RE and antenna with a non-empty pilot
        truth = self.sub.pilots / self.c
        n_i, t_i, k_i = np.nonzero((np.abs(truth) > 0) & mask[:, None, :])
        y = self._samples(lat, n_i, k_i, t_i)
        labels = self._samples(truth, n_i, k_i, t_i)
        unit = self._unit(k_i, t_i)
        params = self._init_structnet(y, unit, labels)
        t0 += self.timings["pretrain"]  # reported as its own stage
        frontend = None
        if self.use_mha and not self.scattered:
            acfg = self.cfg.attention
            self.mha = init_mha(spec.n_pilot, spec.n_sc, acfg.nk_time, acfg.nk_freq, seed=self.seed_mha,
                                zero_output=acfg.zero_output)
            self.pilot_grid = _interleave(lat[: spec.n_pilot].transpose(1, 0, 2))  # (n_t, N_p, 2 n_sc)
            frontend = _MhaFrontend(self.mha, self.pilot_grid, (t_i, n_i, k_i), acfg.lr, acfg.optimizer)
        batch = SampleBatch(y, unit, labels)
        _, opts = train_pilot(params, batch, scfg.epochs_pilot, scfg.lr_clf, scfg.lr_pe, scfg.optimizer,
                              frontend=frontend, freeze_pe=not self.learn_pe)
        self._tic("freq_train", t0)

        detected = np.zeros((N, spec.n_t, spec.n_sc), dtype=complex)
        confs = []
        k_all = np.repeat(np.arange(spec.n_sc), spec.n_t)
        t_all = np.tile(np.arange(spec.n_t), spec.n_sc)
        unit_all = self._unit(k_all, t_all)
        order = range(N) if self.scattered else range(spec.n_pilot, N)
        for n in order:
            Xhat = self._body_freq(self.model.w_out, n)
            t0 = time.perf_counter()
            grid = Xhat / self.c
            y_raw = self._samples(grid[None], np.zeros_like(k_all), k_all, t_all)
            y_in = y_raw
            if self.use_mha and not self.scattered and n == spec.n_pilot:
                win = np.concatenate([self.pilot_grid[:, 1:], _interleave(grid)[:, None]], axis=1)
                out = twod_mha_forward(win, self.mha)[:, -1].reshape(spec.n_t, spec.n_sc, 2)
                y_in = out[t_all, k_all]
            post = posterior_batch(params, y_in, unit_all)
            dec = (post.argmax[:, 0] + 1j * post.argmax[:, 1]) * self.c
            conf = post.confidence.copy()
            dec = dec.reshape(spec.n_sc, spec.n_t).T
            labels_n = post.argmax.copy()
            if self.scattered and mask[n].any():
                pk = mask[n][k_all]
                labels_n[pk] = self._samples(truth[n][None], np.zeros(pk.sum(), int), k_all[pk], t_all[pk])
                conf[pk] = 1.0
                keep_rows = ~pk | (np.abs(truth[n][t_all, k_all]) > 0)
            else:
                keep_rows = np.ones(k_all.size, dtype=bool)
            detected[n] = dec
            data_rows = ~mask[n][k_all]
            confs.append(post.confidence[data_rows].ravel())
            self._tic("freq_detect", t0)
            if self.df:
                xbar = nearest_qam(Xhat, spec.mod_order) if self.cfg.df_target == "projection" else dec.copy()
                if self.scattered:
                    xbar[:, mask[n]] = self.sub.pilots[n][:, mask[n]]
                self._rls_update(n, xbar)
                t0 = time.perf_counter()
                fb = SampleBatch(y_raw[keep_rows], unit_all[keep_rows], labels_n[keep_rows])
                _, opts = finetune_df(params, fb, conf[keep_rows], scfg.epochs_df, scfg.lr_clf, scfg.lr_pe,
                                      scfg.eta, scfg.optimizer, freeze_pe=not self.learn_pe, opts=opts)
                self._tic("freq_df", t0)
        conf_all = np.concatenate(confs) if confs else np.zeros(0)
        return detected, conf_all


def detect_subframe(cfg: DetectorConfig, rx_time_grid, pilot_record: Subframe, spec: SubframeSpec,
                    noise_var: float = 0.0, master_seed: int = 0, index: int = 0) -> DetectionReport:
    """Run one of the reservoir/StructNet receivers on a received subframe.

    ``pilot_record`` supplies the pilot values and layout; its data part is
    only used to count errors. ``master_seed``/``index`` seed the random
    reservoir and attention weights.
    """
    if cfg.variant not in RC_VARIANTS:
        raise ConfigurationError(f"{cfg.variant} is not a reservoir-based variant")
    rx = _RcReceiver(cfg, spec, pilot_record, rx_time_grid, noise_var, master_seed, index)
    try:
        detected, conf = rx.run()
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(str(exc), stage="rc-pipeline") from exc
    return _finish_report(cfg.variant, spec, pilot_record, detected, conf, rx.timings)


def _estimate_csi(source, spec, sub, Yf, noise_var, n_taps, channel):
    N = spec.n_total
    mask = sub.pilot_mask
    psyms = spec.pilot_symbols()
    if source is bl.CsiSource.ORACLE:
        if channel is None:
            raise ConfigurationError("oracle CSI needs the channel realization")
        return bl.CsiEstimate(np.stack([true_freq_response(channel, n, spec) for n in range(N)]),
                              bl.CsiSource.ORACLE)
    if source is bl.CsiSource.PILOT_ONLY and spec.pilot_pattern is PilotPattern.BLOCK_LEADING:
        return bl.lmmse_channel_estimate(Yf[psyms], sub.pilots[psyms], noise_var, n_total=N)
    per_sym = np.stack([bl.delay_domain_estimate(Yf[n], sub.pilots[n], noise_var, n_taps, re_mask=mask[n])
                        for n in psyms])
    if source is bl.CsiSource.PILOT_ONLY:
        return bl.CsiEstimate(np.broadcast_to(per_sym.mean(axis=0), (N,) + per_sym.shape[1:]).copy(),
                              bl.CsiSource.PILOT_ONLY)
    return bl.interpolate_csi(per_sym, psyms, N)


def detect_subframe_conventional(cfg: DetectorConfig, rx_time_grid, pilot_record: Subframe,
                                 spec: SubframeSpec, noise_var: float = 0.0, channel=None,
                                 n_taps: Optional[int] = None) -> DetectionReport:
    """CSI estimation followed by LMMSE, sphere-decoding or brute-force ML detection."""
    kind, source = parse_variant(cfg.variant)
    if kind == "MlOracle":
        kind, source = "Ml", bl.CsiSource.ORACLE
    M = spec.mod_order
    timings = {}
    t0 = time.perf_counter()
    Yf = demodulate_subframe(np.asarray(rx_time_grid), spec.n_total, spec.n_sc, spec.n_cp)  # (N, n_r, n_sc)
    taps = cfg.csi_taps or n_taps or spec.n_cp

    def detector(y, H):  # y (n_sc, n_r), H (n_sc, n_r, n_t)
        if kind == "Lmmse":
            return bl.lmmse_detect(y, H, noise_var, M)
        if kind == "SphereDecoder":
            return bl.sphere_decode(y, H, M)
        return bl.ml_detect_bruteforce(y, H, M)

    detected = np.zeros((spec.n_total, spec.n_t, spec.n_sc), dtype=complex)
    data_syms = np.flatnonzero((~pilot_record.pilot_mask).any(axis=1))
    if source is bl.CsiSource.DECISION_DIRECTED:
        if spec.pilot_pattern is not PilotPattern.BLOCK_LEADING:
            raise ConfigurationError("decision-directed CSI supports the block pilot pattern only")
        psyms = spec.pilot_symbols()
        init = bl.lmmse_channel_estimate(Yf[psyms], pilot_record.pilots[psyms], noise_var).h_hat[0]
        timings["csi"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        _, detected = bl.dd_rls_csi(Yf, init, pilot_record.pilots[psyms], spec.n_pilot, noise_var,
                                    cfg.dd_alpha, detector=detector)
        timings["detect"] = time.perf_counter() - t0
    else:
        csi = _estimate_csi(source, spec, pilot_record, Yf, noise_var, taps, channel)
        timings["csi"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        for n in data_syms:
            detected[n] = detector(Yf[n].T, csi.at(n)).T
        timings["detect"] = time.perf_counter() - t0
    return _finish_report(cfg.variant, spec, pilot_record, detected, None, timings)


def run_detector(cfg: DetectorConfig, sim: SubframeSim, master_seed: int = 0, index: int = 0,
                 n_taps: Optional[int] = None) -> DetectionReport:
    if cfg.variant in RC_VARIANTS:
        return detect_subframe(cfg, sim.rx_time, sim.subframe, sim.spec, sim.noise_var, master_seed, index)
    return detect_subframe_conventional(cfg, sim.rx_time, sim.subframe, sim.spec, sim.noise_var,
                                        channel=sim.channel, n_taps=n_taps)


@dataclass
class CellResult:
    """Integer counters for one (detector, Eb/No) cell plus per-subframe BERs."""

    detector: str
    ebno_db: float
    n_subframes: int = 0
    bits: int = 0
    bit_errors: int = 0
    symbols: int = 0
    symbol_errors: int = 0
    excluded_subframes: int = 0
    seconds: float = 0.0
    per_subframe_ber: dict = field(default_factory=dict)  # index -> BER

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits if self.bits else float("nan")

    @property
    def ser(self) -> float:
        return self.symbol_errors / self.symbols if self.symbols else float("nan")

    def median_ber(self) -> float:
        v = list(self.per_subframe_ber.values())
        return float(np.median(v)) if v else float("nan")

    def add(self, index: int, rep: Optional[DetectionReport], seconds: float):
        self.n_subframes += 1
        self.seconds += seconds
        if rep is None:
            self.excluded_subframes += 1
            return
        self.bits += rep.n_bits
        self.bit_errors += rep.bit_errors
        self.symbols += rep.n_symbols
        self.symbol_errors += rep.symbol_errors
        self.per_subframe_ber[index] = rep.ber


@dataclass
class MonteCarloTable:
    cells: list
    failed: bool = False
    failures: list = field(default_factory=list)

    def cell(self, detector: str, ebno_db: float) -> CellResult:
        for c in self.cells:
            if c.detector == detector and c.ebno_db == ebno_db:
                return c
        raise KeyError((detector, ebno_db))


def _one_subframe(args):
    cfgs, spec, profile, pa, ebno, seed, index = args
    sim = simulate_subframe(spec, profile, ebno, seed, index, pa)
    out = []
    for cfg in cfgs:
        t0 = time.perf_counter()
        try:
            rep = run_detector(cfg, sim, seed, index, n_taps=profile.n_taps)
            err = None
        except (NumericalFailure, np.linalg.LinAlgError) as exc:
            rep, err = None, f"{cfg.variant} subframe {index} @ {ebno} dB: {exc}"
        out.append((cfg.variant, rep, time.perf_counter() - t0, err))
    return ebno, index, out


def run_montecarlo(cfgs: Sequence[DetectorConfig], spec: SubframeSpec, channel_profile: ChannelProfile,
                   ebno_list: Iterable[float], n_subframes: int, seed: int, pa: Optional[PaConfig] = None,
                   parallelism: int = 1, progress: Optional[Callable] = None) -> MonteCarloTable:
    """BER/SER over ``n_subframes`` independent subframes per Eb/No point.

    All detectors run on identical transmissions (paired comparison). Results
    are accumulated in integer counters, so the table does not depend on
    ``parallelism`` or completion order. Runs with more than 1% excluded
    subframes are flagged as failed.
    """
    if n_subframes < 1:
        raise ValueError("n_subframes must be >= 1")
    if isinstance(cfgs, DetectorConfig):
        cfgs = [cfgs]
    ebnos = [float(e) for e in ebno_list]
    cells = {(c.variant, e): CellResult(c.variant, e) for e in ebnos for c in cfgs}
    jobs = [(tuple(cfgs), spec, channel_profile, pa, e, seed, i) for e in ebnos for i in range(n_subframes)]
    failures = []

    def collect(result):
        ebno, index, out = result
        for variant, rep, secs, err in out:
            cells[(variant, ebno)].add(index, rep, secs)
            if err:
                failures.append(err)
        if progress is not None:
            progress(ebno, index)

    if parallelism <= 1:
        for j in jobs:
            collect(_one_subframe(j))
    else:
        with cf.ProcessPoolExecutor(max_workers=parallelism) as pool:
            for res in pool.map(_one_subframe, jobs):
                collect(res)
    ordered = [cells[(c.variant, e)] for e in ebnos for c in cfgs]
    failed = any(c.excluded_subframes > 0.01 * c.n_subframes for c in ordered)
    return MonteCarloTable(ordered, failed, sorted(failures))
