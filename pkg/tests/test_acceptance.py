"""Acceptance criteria 1-10 at their stated tolerances.

Each test prints one ``criterion N: PASS|FAIL`` line; the lines are repeated
in the terminal summary. The Monte-Carlo criteria (1, 8, 9) take minutes.
"""

import itertools
import time

import numpy as np
import pytest
from scipy.special import j0

from neurorx.attention import init_mha, softmax_rows, twod_mha_backward, twod_mha_forward
from neurorx.baselines import ml_detect_bruteforce, sphere_decode
from neurorx.channel import ChannelProfile, PaConfig, generate_channel
from neurorx.cli import PA_IBO_DB, PRESETS
from neurorx.config import parse_config
from neurorx.pipeline import DetectorConfig, run_montecarlo, simulate_subframe
from neurorx.reservoir import init_reservoir, init_rls, rls_run, train_ls
from neurorx.structnet import (SampleBatch, StructNetParams, construct_binary_samples, init_classifier,
                               posterior_batch, structnet_loss)
from neurorx.toylab import (binary_label_audit, corrupt_labels, toy_experiment_a,
                            toy_experiment_b)
from neurorx.txchain import (SubframeSpec, demap_qam_to_bits, map_bits_to_qam, modulate_subframe,
                             demodulate_subframe, pam_levels, qam_constellation, qam_scale)

from conftest import crandn, zf_ber_prediction

pytestmark = pytest.mark.acceptance

RESULTS = {}
SEED = 2026  # differs from every seed used while choosing presets


def _verdict(n, ok, detail, capsys):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


# ----- 1, 2: toy experiments -------------------------------------------------

def test_criterion_1_toy_pe_effectiveness(capsys):
    t0 = time.perf_counter()
    tab = toy_experiment_a((3, 5, 7, 9), range(100))
    secs = time.perf_counter() - t0
    parts, ok = [], True
    for e in (3, 5, 7, 9):
        s, l = tab.median("StructNet", e), tab.median("ADNN-LMMSE", e)
        ok &= s <= l
        parts.append(f"{e}dB S={s:.4g}/L={l:.4g}")
    s5, g5 = tab.median("StructNet", 5), tab.median("ADNN-GT", 5)
    ok &= s5 <= 1.5 * g5
    _verdict(1, ok, f"{'; '.join(parts)}; 5dB S/GT={s5 / g5:.3f} (<=1.5); {secs:.0f}s", capsys)


def test_criterion_2_toy_incorrect_labels(capsys):
    tab = toy_experiment_b((0.7,), range(20), 5.0, methods=("StructNet", "FourClassMlp"))
    s, m = tab.median("StructNet", 0.7), tab.median("FourClassMlp", 0.7)
    # audit every corrupted batch the toy setup can produce at these fractions
    worst, violations = 0.0, 0
    levels = pam_levels(16)
    for seed in range(200):
        rng = np.random.default_rng(seed)
        x = rng.choice(levels, (996, 2))
        for f in (0.1, 0.3, 0.5, 0.7, 0.9, 1.0):
            a = binary_label_audit(x, corrupt_labels(x, f, rng))
            worst = max(worst, a)
            violations += a > 0.5 + 1e-12
    recorded = max(tab.binary_corruption[0.7])
    ok = s < m and violations == 0 and recorded <= 0.5
    _verdict(2, ok, f"70% corruption median SER StructNet={s:.4f} FourClassMlp={m:.4f}; "
                    f"binary corruption max={worst:.4f} (70%: {recorded:.4f}), violations={violations}", capsys)


# ----- 3: incorrect-label bound ---------------------------------------------

def test_criterion_3_incorrect_label_bound(capsys):
    counter, pairs = 0, 0
    for M in (4, 16, 64):
        lv = pam_levels(M)
        for true, used in itertools.permutations(lv, 2):
            pairs += 1
            wrong = sum(np.sign(true + s.shift) != s.label
                        for s in construct_binary_samples(used, np.zeros(1), M=M))
            counter += wrong > 1
    _verdict(3, counter == 0, f"{pairs} ordered pairs, {counter} counterexamples", capsys)


# ----- 4: RLS equals ridge LS -----------------------------------------------

def test_criterion_4_rls_equals_ls(capsys):
    worst = 0.0
    for s in range(20):
        rng = np.random.default_rng(s)
        m = init_reservoir(2, 2, n_neurons=6, window_len=3, seed=s)
        Z = crandn(rng, m.state_dim, 200)
        O = crandn(rng, 2, 200)
        rls_run(m, init_rls(m.state_dim, alpha=1.0, delta=1e-6), Z, O)
        W, _ = train_ls(Z, O, ridge=1e-6)
        worst = max(worst, np.linalg.norm(m.w_out - W) / np.linalg.norm(W))
    _verdict(4, worst < 1e-6, f"20 systems, max relative error {worst:.2e} (<1e-6)", capsys)


# ----- 5: gradients -----------------------------------------------------------

def _fd_rel(arrays, grads, loss, step):
    worst = 0.0
    for name, a in arrays.items():
        num = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            o = a[idx]
            a[idx] = o + step
            lp = loss()
            a[idx] = o - step
            lm = loss()
            a[idx] = o
            num[idx] = (lp - lm) / (2 * step)
        worst = max(worst, np.linalg.norm(num - grads[name]) / max(np.linalg.norm(num), 1e-12))
    return worst


def _mha_rel(seed):
    rng = np.random.default_rng(seed)
    p = init_mha(4, 6, nk_time=5, nk_freq=3, seed=seed, zero_output=False)
    I = rng.standard_normal((2, 4, 12))
    G = rng.standard_normal((2, 4, 12))
    grads, dI = twod_mha_backward(I, p, G)
    return _fd_rel(dict(p.arrays(), I=I), dict(grads, I=dI),
                   lambda: float(np.sum(G * twod_mha_forward(I, p))), 1e-5)


def _structnet_rel(seed):
    rng = np.random.default_rng(seed)
    clf = init_classifier(2, 6, 2, seed=seed)
    clf["b1"] = rng.standard_normal(clf["b1"].shape)
    clf["b2"] = rng.standard_normal(clf["b2"].shape)
    p = StructNetParams(rng.standard_normal((2, 2, 2)), clf, rng.integers(0, 2, (2, 2)),
                        np.array([False, True]), 16)
    b = SampleBatch(rng.standard_normal((8, 2)), rng.integers(0, 2, 8), rng.choice(pam_levels(16), (8, 2)),
                    rng.random((8, 2)))
    _, g, dy = structnet_loss(p, b, need_input_grad=True)
    return _fd_rel(dict(p.arrays(), y=b.y), dict(g, y=dy), lambda: structnet_loss(p, b)[0], 1e-6)


def test_criterion_5_gradients(capsys):
    mha = max(_mha_rel(s) for s in range(20))
    sn = max(_structnet_rel(s) for s in range(20))
    _verdict(5, max(mha, sn) < 1e-4, f"20 seeds, max relative error MHA {mha:.2e}, StructNet {sn:.2e} "
                                     "(<1e-4)", capsys)


# ----- 6: normalization -------------------------------------------------------

def test_criterion_6_normalization(capsys):
    rng = np.random.default_rng(SEED)
    soft_err = post_err = 0.0
    n_post = 0
    for trial in range(100):
        A = rng.standard_normal((1000, 8)) * 10 ** rng.uniform(-2, 2.5)
        soft_err = max(soft_err, np.max(np.abs(softmax_rows(A).sum(axis=1) - 1)))
        M = (4, 16, 64)[trial % 3]
        clf = init_classifier(2, 16, 2, seed=trial)
        for k in clf:
            clf[k] = clf[k] * rng.uniform(0.5, 20)
        p = StructNetParams(rng.standard_normal((3, 2, 2)), clf, rng.integers(0, 2, (3, 2)),
                            rng.random(2) < 0.5, M)
        post = posterior_batch(p, rng.standard_normal((500, 2)) * 8, rng.integers(0, 3, 500))
        post_err = max(post_err, np.max(np.abs(post.probs.sum(axis=-1) - 1)))
        n_post += post.probs.shape[0] * post.probs.shape[1]
    ok = soft_err <= 1e-12 and post_err <= 1e-9
    _verdict(6, ok, f"10^5 softmax rows max |sum-1|={soft_err:.1e}; {n_post} posteriors "
                    f"max |sum-1|={post_err:.1e}", capsys)


# ----- 7: sphere decoder exactness --------------------------------------------

def test_criterion_7_sd_exact(capsys):
    rng = np.random.default_rng(SEED)
    mism = 0
    for n, M, count in ((2, 16, 1000), (4, 4, 100)):
        for _ in range(count):
            H = crandn(rng, n, n)
            x = rng.choice(qam_constellation(M), n)
            y = H @ x + rng.uniform(0.05, 1.0) * crandn(rng, n)
            mism += not np.allclose(sphere_decode(y, H, M), ml_detect_bruteforce(y, H, M))
    _verdict(7, mism == 0, f"1000 2x2 16-QAM + 100 4x4 QPSK, {mism} mismatches", capsys)


# ----- 8, 9: desk-scale MIMO-OFDM -------------------------------------------

def _table(preset, **pa):
    cfg = parse_config(PRESETS[preset])
    pa_cfg = PaConfig(**dict(vars(cfg.pa), **pa)) if pa else cfg.pa
    return cfg, run_montecarlo(cfg.detector_configs(), cfg.spec, cfg.channel, cfg.ebno_db, cfg.n_subframes,
                               SEED, pa=pa_cfg)


def test_criterion_8_ablation_ordering(capsys):
    cfg, tab = _table("ablate")
    assert cfg.n_subframes >= 50 and cfg.spec.mod_order == 64 and cfg.channel.doppler_hz == pytest.approx(97.0)
    order = ("RcAttStructNetDf", "RcStructNetDf", "RcStructDf", "RcStruct")
    med = [tab.cell(v, 21.0).median_ber() for v in order]
    ok = all(a <= b for a, b in zip(med, med[1:])) and not tab.failed
    detail = " <= ".join(f"{v} {m:.5f}" for v, m in zip(order, med))
    _verdict(8, ok, f"{cfg.n_subframes} subframes @21dB: {detail}", capsys)


def test_criterion_9_pa_trend(capsys):
    sd, rc = "SphereDecoder{Interpolated}", "RcAttStructNetDf"
    med = {sd: [], rc: []}
    for ibo in PA_IBO_DB:
        cfg, tab = _table("pa-sweep", enabled=True, ibo_db=ibo)
        assert cfg.n_subframes >= 30 and cfg.pa.x_sat == 1.0 and cfg.pa.rho == 3.0
        for v in med:
            med[v].append(tab.cell(v, cfg.ebno_db[0]).median_ber())
    mono = all(a < b for a, b in zip(med[sd], med[sd][1:]))
    r_sd, r_rc = med[sd][-1] / med[sd][0], med[rc][-1] / med[rc][0]
    ok = mono and r_rc < r_sd
    fmt = lambda v: ", ".join(f"{m:.4f}" for m in med[v])
    _verdict(9, ok, f"IBO {PA_IBO_DB}: SD [{fmt(sd)}] ratio {r_sd:.2f}; RC [{fmt(rc)}] ratio {r_rc:.2f}", capsys)


# ----- 10: conventional baseline and channel sanity -------------------------

def test_criterion_10_sanity(capsys):
    spec = SubframeSpec(n_sc=64, n_cp=16)
    prof = ChannelProfile.for_spec(spec, model="static")
    n_sub = -(-10 ** 6 // spec.n_data_bits())
    tab = run_montecarlo([DetectorConfig(variant="Lmmse{Oracle}")], spec, prof, [40.0], n_sub, SEED)
    c = tab.cells[0]
    ok_ber = c.bits >= 10 ** 6 and c.ber < 1e-4
    # second route: closed-form zero-forcing BER on the same channel draws
    zf = np.mean([zf_ber_prediction(sim.channel, spec, sim.noise_var)
                  for sim in (simulate_subframe(spec, prof, 40.0, SEED, i) for i in range(n_sub))])

    rng = np.random.default_rng(SEED)
    X = crandn(rng, 20, 4, 64)
    ofdm_err = np.max(np.abs(demodulate_subframe(modulate_subframe(X, 16), 20, 64, 16) - X))

    gray_ok = True
    for M in (4, 16, 64):
        k = int(np.log2(M))
        bits = np.array(list(itertools.product([0, 1], repeat=k))).ravel()
        pts = map_bits_to_qam(bits, M)
        words = bits.reshape(-1, k)
        d = np.abs(pts[:, None] - pts[None, :])
        near = np.isclose(d, 2 * qam_scale(M))
        ham = (words[:, None, :] != words[None, :, :]).sum(-1)
        gray_ok &= bool(np.all(ham[near] == 1))
        gray_ok &= np.array_equal(demap_qam_to_bits(pts, M), bits)

    prof_t = ChannelProfile(n_taps=1, doppler_hz=50.0, sample_rate_hz=1000.0)
    h = generate_channel(prof_t, 100, 100, 17, seed=SEED).taps[:, :, 0, :].reshape(-1, 17)
    ac = max(abs(np.mean(h[:, l] * h[:, 0].conj()).real / np.mean(np.abs(h[:, 0]) ** 2)
                 - j0(2 * np.pi * 0.05 * l)) for l in range(17))
    ok = ok_ber and ofdm_err < 1e-12 and gray_ok and ac < 0.05
    _verdict(10, ok, f"Lmmse{{Oracle}} 40dB BER={c.ber:.2e} over {c.bits} bits (closed-form ZF {zf:.2e}); OFDM err {ofdm_err:.1e}; "
                     f"gray {'ok' if gray_ok else 'BAD'}; autocorr max dev {ac:.3f} (<0.05)", capsys)
