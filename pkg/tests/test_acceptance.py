"""Acceptance checks, one test per criterion.

Each test prints a single ``[PASS]`` / ``[FAIL]`` line with the measured value
and runtime, then asserts both the criterion and its runtime budget.
"""
import itertools
import time

import numpy as np
import pytest

from gradcheck import check_gradients, check_param_gradients
from oracles import dense_cumulative, enum_posterior
from test_autograd import OPS
from vqbwe import d3pm
from vqbwe.codec import dequantize, imdct, mdct, quantize, read_wav, train_rvq
from vqbwe.dsp import lsd
from vqbwe.nn import ssd
from vqbwe.nn.layers import ConMamba2Config
from vqbwe.nn.losses import vlb_loss_tensor
from vqbwe.nn.model import ConMamba2Denoiser
from vqbwe.nn.tabular import TabularDenoiser
from vqbwe.nn.train import make_batch
from vqbwe.pipeline import commands as C
from vqbwe.pipeline.config import load_config
from vqbwe.schedule import cumulative_transition, explicit_cumulative, linear_schedule, transition_matrix

from test_dsp import WHITE_NOISE_LSD, white_noise_case
from test_pipeline import CONFIGS


def default_ramps(K, T=100):
    return linear_schedule(T, K, 0.9, 0.1, beta_is_total=True)


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail, elapsed, limit):
        ok_time = elapsed < limit
        tag = "PASS" if ok and ok_time else "FAIL"
        with capsys.disabled():
            print(f"\n[{tag}] criterion {number}: {title} | {detail} | {elapsed:.1f}s (limit {limit:.0f}s)")
        assert ok, detail
        assert ok_time, f"runtime {elapsed:.1f}s exceeds {limit}s"
    return emit


def test_01_transition_matrix_structure(verdict):
    t0 = time.perf_counter()
    worst_col, min_entry, absorbing = 0.0, np.inf, True
    for K in (2, 4, 8, 1024):
        s = default_ramps(K)
        for t in range(1, 101):
            Q = transition_matrix(s, t)
            worst_col = max(worst_col, np.abs(Q.sum(axis=0) - 1).max())
            min_entry = min(min_entry, Q.min())
            e = np.zeros(K + 1)
            e[K] = 1
            absorbing &= bool(np.array_equal(Q[:, K], e))
    ok = worst_col <= 1e-12 and min_entry >= 0 and absorbing
    verdict(1, "Q_t columns sum to 1, mask absorbing, entries >= 0", ok,
            f"max |colsum-1|={worst_col:.2e}, min entry={min_entry:.2e}, absorbing={absorbing}",
            time.perf_counter() - t0, 5)


def test_02_cumulative_closed_form(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for K in range(2, 9):
        for beta_total in (False, True):
            s = linear_schedule(100, K, 0.9 if beta_total else 0.5, 0.1 if beta_total else 0.4 / K,
                                beta_is_total=beta_total)
            P = np.eye(K + 1)
            for t in range(1, 101):
                P = transition_matrix(s, t) @ P
                worst = max(worst, np.abs(cumulative_transition(s, t) - P).max())
    verdict(2, "closed-form Qbar_t vs explicit product (K<=8, T<=100)", worst <= 1e-10,
            f"max abs diff={worst:.2e}", time.perf_counter() - t0, 5)


def test_03_posterior_bayes_oracle(verdict):
    t0 = time.perf_counter()
    K, T = 3, 4
    s = default_ramps(K, T)
    worst_post = worst_chain = 0.0
    for t in range(1, T + 1):
        Qbar_t, Qbar_prev = dense_cumulative(s, t), dense_cumulative(s, t - 1)
        for x0 in range(K):
            recon = np.zeros(K + 1)
            for xt in range(K + 1):
                if Qbar_t[xt, x0] == 0:
                    continue
                q = d3pm.posterior(np.array([xt]), np.array([x0]), t, s)[0]
                if t > 1:
                    worst_post = max(worst_post, np.abs(q - enum_posterior(s, xt, x0, t)).max())
                recon += q * Qbar_t[xt, x0]
            worst_chain = max(worst_chain, np.abs(recon - Qbar_prev[:, x0]).max())
    ok = worst_post <= 1e-10 and worst_chain <= 1e-10
    verdict(3, "posterior vs enumeration and chain-rule marginal (K=3, T=4)", ok,
            f"posterior err={worst_post:.2e}, chain err={worst_chain:.2e}", time.perf_counter() - t0, 10)


def test_04_forward_sampling_statistics(verdict):
    t0 = time.perf_counter()
    s = default_ramps(4)
    n = 100_000
    details, ok = [], True
    # t = T as stated, plus a mid-chain t where every category has mass
    for t in (s.T, 10):
        x0 = np.full(n, 1)
        counts = np.bincount(d3pm.sample_forward(x0, t, s, seed=t), minlength=5)
        p = d3pm.forward_marginal(np.array([1]), t, s)[0]
        z = np.abs(counts - n * p) / np.maximum(np.sqrt(n * p * (1 - p)), 1e-300)
        within = np.all(np.abs(counts - n * p) <= 3 * np.sqrt(n * p * (1 - p)) + 1e-9)
        ok &= bool(within)
        details.append(f"t={t}: max z={np.max(np.where(n * p > 0, z, 0)):.2f}")
    verdict(4, "100k forward draws within 3 sigma of the analytic marginal (K=4)", ok,
            ", ".join(details), time.perf_counter() - t0, 10)


def test_05_tabular_distribution_recovery(verdict):
    t0 = time.perf_counter()
    s = default_ramps(3)
    pi = np.array([0.5, 0.3, 0.2])
    den = TabularDenoiser(s).fit(np.repeat([0, 1, 2], [5, 3, 2])[:, None])
    out = d3pm.sample(den, None, s, (10_000, 1), seed=11)
    emp = np.bincount(out[:, 0], minlength=3) / out.shape[0]
    tv = 0.5 * np.abs(emp - pi).sum()
    verdict(5, "tabular denoiser 10k reverse-chain samples, TV to data < 0.05", tv < 0.05,
            f"TV={tv:.4f}, empirical={np.round(emp, 4).tolist()}", time.perf_counter() - t0, 60)


def test_06_ssd_scan_equivalence(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        for L in (1, 2, 7, 64, 257):
            x = rng.standard_normal((2, L, 2, 3))
            a = rng.uniform(0.3, 1.0, (2, L, 2))
            B = rng.standard_normal((2, L, 1, 4))
            Cm = rng.standard_normal((2, L, 2, 4))
            worst = max(worst, np.abs(ssd.ssd_scan_chunked(x, a, B, Cm) - ssd.ssd_scan_naive(x, a, B, Cm)).max())
    verdict(6, "chunked SSD scan vs naive recurrence, fp64 (20 seeds)", worst <= 1e-10,
            f"max abs diff={worst:.2e}", time.perf_counter() - t0, 10)


def _random_shape_ops(seed):
    rng = np.random.default_rng(seed)
    n, m = (int(v) for v in rng.integers(2, 6, 2))
    arr = rng.standard_normal((n, m))
    from vqbwe.nn import autograd as ag
    return {
        "mul": (lambda a, b: a * b, [arr, rng.standard_normal(m)]),
        "matmul": (lambda a, b: a @ b, [arr, rng.standard_normal((m, n))]),
        "softmax": (lambda a: ag.softmax(a, axis=-1), [arr]),
        "layer_norm": (lambda a: ag.layer_norm(a), [arr]),
        "conv_causal": (lambda a, w: ag.conv1d_depthwise(a, w), [arr[None], rng.standard_normal((m, 3))]),
        "ssd_scan": (lambda x, a, B, C: ag.ssd_scan(x, a, B, C, chunk=2),
                     [rng.standard_normal((1, n, 1, m)), rng.uniform(0.3, 1, (1, n, 1)),
                      rng.standard_normal((1, n, 1, 2)), rng.standard_normal((1, n, 1, 2))]),
    }


def test_07_gradient_checks(verdict):
    t0 = time.perf_counter()
    worst_op, worst_name = 0.0, ""
    for seed in range(5):
        cases = {name: (fn, build(seed)) for name, (fn, build) in OPS.items()}
        cases.update({f"rand:{k}": v for k, v in _random_shape_ops(seed).items()})
        for name, (fn, arrays) in cases.items():
            err = check_gradients(fn, arrays, seed=seed)
            if err > worst_op:
                worst_op, worst_name = err, name
    cfg = ConMamba2Config(layers=2, feature_dim=4, state_dim=2, conv_width=2, heads=2, expand=1, ff_mult=1,
                          conv_kernel=3, chunk=2, cond_dim=4, cond_layers=1, cond_heads=2)
    s = default_ramps(3, 5)
    worst_model = 0.0
    for seed in range(5):
        model = ConMamba2Denoiser(cfg, 3, 1, 5, seed=seed, dtype=np.float64)
        rng = np.random.default_rng(seed)
        x0 = rng.integers(0, 3, (1, 3, 1))
        b = make_batch(x0, (x0 + 1) % 3, s, rng, t=np.array([int(rng.integers(1, 6))]))

        def loss():
            return vlb_loss_tensor(b.x0, b.t, b.x_t, model.logits(b.x_t, b.t, b.y), s)[0]

        worst_model = max(worst_model, max(check_param_gradients(loss, model.named_parameters()).values()))
    ok = worst_op <= 1e-4 and worst_model <= 1e-4
    verdict(7, "finite-difference gradients: every op and a 2-block ConMamba2 loss (5 seeds)", ok,
            f"worst op err={worst_op:.2e} ({worst_name}), worst model err={worst_model:.2e}",
            time.perf_counter() - t0, 120)


def test_08_codec_round_trips(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    worst = 0.0
    for n in (64, 1000, 8000):
        x = rng.uniform(-1, 1, n)
        worst = max(worst, np.abs(imdct(mdct(x, 64), 64, n) - x).max())
    data = rng.standard_normal((2000, 8))
    cb = train_rvq(data, 4, 16, iters=15, seed=0)
    codes = quantize(data, cb)
    mse = [float(np.mean(data ** 2))] + [float(np.mean((data - dequantize(codes, cb, stages=k)) ** 2))
                                         for k in range(1, 5)]
    monotone = all(b <= a for a, b in zip(mse, mse[1:]))
    verdict(8, "MDCT/IMDCT exact; RVQ residual MSE non-increasing over stages", worst <= 1e-10 and monotone,
            f"mdct max err={worst:.2e}, mse by stage={[round(v, 4) for v in mse]}", time.perf_counter() - t0, 10)


def test_09_lsd_metric(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    a = rng.standard_normal(4096)
    same = lsd(a, a)
    tenfold = lsd(a, 10 * a)
    ref, est = white_noise_case()
    pinned = lsd(ref, est)
    ok = same == 0.0 and abs(tenfold - 1.0) <= 1e-9 and abs(pinned - WHITE_NOISE_LSD) <= 1e-6
    verdict(9, "LSD: identity 0, 10x magnitude = 1, white-noise reference value", ok,
            f"lsd(a,a)={same}, 10x={tenfold:.12f}, white noise={pinned:.10f} (ref {WHITE_NOISE_LSD:.10f})",
            time.perf_counter() - t0, 5)


def test_10_end_to_end_learnability(verdict, tmp_path):
    t0 = time.perf_counter()
    cfg = load_config(CONFIGS / "bwe.cfg")
    corpus = C.cmd_synth(cfg, tmp_path / "corpus")
    ck = C.cmd_train(cfg, corpus, tmp_path / "ck")
    est = C.cmd_infer(cfg, ck, corpus / "test_lowpass", tmp_path / "est")
    rep = C.cmd_eval(cfg, corpus / "test", est, tmp_path / "eval", inputs=corpus / "test_lowpass")
    model, cb, _ = C.load_trained(ck)
    names = sorted(p.name for p in (corpus / "test").glob("*.wav"))
    ref = [read_wav(corpus / "test" / n) for n in names]
    low = [read_wav(corpus / "test_lowpass" / n) for n in names]
    acc = C.token_accuracy(cfg, model, cb, ref, low)
    acc_T = C.token_accuracy(cfg, model, cb, ref, low, t=cfg.diffusion.T)
    out_lsd, in_lsd = rep.aggregate["lsd_output"], rep.aggregate["lsd_input"]
    ok = acc >= 0.95 and out_lsd < in_lsd and len(rep.rows) == 20
    verdict(10, "tiny denoiser: >=95% held-out token accuracy and LSD(out) < LSD(low-passed in)", ok,
            f"accuracy={acc:.4f} (t=T: {acc_T:.4f}), mean LSD out={out_lsd:.4f} vs in={in_lsd:.4f}, "
            f"{len(rep.rows)} utterances", time.perf_counter() - t0, 15 * 60)


def test_11_pipeline_determinism(verdict, tmp_path):
    t0 = time.perf_counter()
    cfg = load_config(CONFIGS / "toy.cfg")
    reports = []
    for run in ("a", "b"):
        root = tmp_path / run
        corpus = C.cmd_synth(cfg, root / "corpus")
        ck = C.cmd_train(cfg, corpus, root / "ck")
        est = C.cmd_infer(cfg, ck, corpus / "test_lowpass", root / "est")
        C.cmd_eval(cfg, corpus / "test", est, root / "eval", inputs=corpus / "test_lowpass")
        reports.append(((root / "eval" / "report.jsonl").read_bytes(), (root / "eval" / "report.txt").read_bytes(),
                        (ck / "model.vqck").read_bytes()))
    same = reports[0] == reports[1]
    verdict(11, "synth -> train (5 epochs toy) -> infer -> eval twice gives byte-identical reports", same,
            f"report.jsonl, report.txt and checkpoint identical: {same}", time.perf_counter() - t0, 20 * 60)
