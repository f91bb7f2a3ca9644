"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records a single PASS/FAIL line, echoed live and again in the
terminal summary.
"""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from attndec.decoding import DecodeConfig, bootstrap_segments, isc_cv, loo_pair_split, run_task
from attndec.groupsync import DEFAULT_GCCA_LAG, fit_gcca, isc, transformed_views
from attndec.linalg import LagSpec, TimeSeries, pearson, sym_gevd
from attndec.mvcorr import (
    DEFAULT_K,
    DEFAULT_LAG_X,
    DEFAULT_LAG_Y,
    DEFAULT_SUM_COMPONENTS,
    ConfoundSet,
    embed_confound,
    embed_view,
    fit_cca,
    fit_pcca,
)
from attndec.simulator import SimConfig, gen_dataset
from attndec.stats import (
    ALPHA,
    N_CIRCULAR_SHIFTS,
    N_PHASE_SURROGATES,
    bh_adjust,
    binomial_interval,
    phase_scramble,
    significance_threshold,
    wilcoxon_signed_rank,
)
from oracles import brute_force_cca, gevd_explicit_inverse, random_spd, wilcoxon_enumeration

L0 = LagSpec((0,))


def ts(a):
    return TimeSeries(np.asarray(a, dtype=float), 30.0)


def report(acceptance, capsys, number, title, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {title} ({detail})"
    acceptance.append(line)
    with capsys.disabled():
        print(f"\n{line}")
    assert ok, line


# ---------------------------------------------------------------- 1-5: oracle equivalence

def test_criterion_1_gevd(acceptance, capsys):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst_res = worst_orth = worst_oracle = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 9))
        M = rng.standard_normal((n, n))
        A = M + M.T
        B = random_spd(n, rng)
        lam, V = sym_gevd(A, B, n)
        res = np.abs(A @ V - B @ V * lam).max() / np.abs(A).sum(axis=1).max()
        orth = np.abs(V.T @ B @ V - np.eye(n)).max()
        oracle = np.abs(lam - gevd_explicit_inverse(A, B)).max() / max(1.0, np.abs(lam).max())
        worst_res, worst_orth, worst_oracle = max(worst_res, res), max(worst_orth, orth), max(worst_oracle, oracle)
    elapsed = time.perf_counter() - t0
    ok = worst_res < 1e-8 and worst_orth < 1e-8 and worst_oracle < 1e-8 and elapsed < 5
    report(acceptance, capsys, 1, "GEVD residual, B-orthonormality, explicit-inverse oracle", ok,
           f"residual {worst_res:.1e}, orthonormality {worst_orth:.1e}, oracle {worst_oracle:.1e}, {elapsed:.2f} s")


def test_criterion_2_cca_brute_force(acceptance, capsys):
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        T = 2000
        s = rng.standard_normal(T)
        X = np.outer(s, rng.standard_normal(2)) + rng.standard_normal((T, 2)) * rng.uniform(0.3, 3, 2)
        Y = np.outer(s, rng.standard_normal(2)) + rng.standard_normal((T, 2)) * rng.uniform(0.3, 3, 2)
        rho = fit_cca(ts(X), ts(Y), L0, L0, K=1, ridge=0).train_corrs[0]
        worst = max(worst, abs(rho - brute_force_cca(X, Y, 0.5)))
    elapsed = time.perf_counter() - t0
    report(acceptance, capsys, 2, "CCA vs 0.5 degree brute-force weight search", worst < 2e-3 and elapsed < 30,
           f"max deviation {worst:.1e}, {elapsed:.2f} s")


def test_criterion_3_pcca(acceptance, capsys):
    rng = np.random.default_rng(303)
    worst_orth = worst_null = 0.0
    for _ in range(50):
        T = int(rng.integers(300, 1000))
        X = ts(rng.standard_normal((T, int(rng.integers(1, 5)))))
        Y = ts(X.data[:, :1] + rng.standard_normal((T, 1)))
        C = ts(rng.standard_normal((T, int(rng.integers(1, 4)))) + 0.5 * X.data[:, :1])
        Ce = embed_confound(C, DEFAULT_LAG_X)
        for view, lag in ((X, DEFAULT_LAG_X), (Y, DEFAULT_LAG_Y)):
            R = embed_view(view, lag, Ce)
            scale = np.linalg.norm(R) * np.linalg.norm(Ce)
            worst_orth = max(worst_orth, np.abs(Ce.T @ R).max() / scale)
        K = min(2, X.n_channels * 3)
        plain = fit_cca(X, Y, K=K)
        part = fit_pcca(X, Y, ConfoundSet(ts(np.zeros((T, 2)))), K=K)
        worst_null = max(worst_null, np.abs(plain.train_corrs - part.train_corrs).max())
    report(acceptance, capsys, 3, "PCCA residual orthogonality and null-confound equivalence",
           worst_orth < 1e-8 and worst_null < 1e-10,
           f"relative inner product {worst_orth:.1e}, null-confound deviation {worst_null:.1e}")


def test_criterion_4_gcca(acceptance, capsys):
    rng = np.random.default_rng(404)
    s = rng.standard_normal(3000)
    views = [ts(np.outer(s, rng.standard_normal(3)) + rng.standard_normal((3000, 3))) for _ in range(2)]
    model = fit_gcca(views, DEFAULT_GCCA_LAG, K=3)
    proj = transformed_views(model, views)
    dev_pearson = max(abs(isc(model, views, k) - pearson(proj[0][:, k - 1], proj[1][:, k - 1])[0]) for k in (1, 2, 3))
    x = ts(rng.standard_normal((2000, 4)))
    same = fit_gcca([x, x, x], DEFAULT_GCCA_LAG, K=2)
    dev_one = abs(isc(same, [x, x, x], 1) - 1)
    many = [ts(np.outer(s, rng.standard_normal(4)) + rng.standard_normal((3000, 4))) for _ in range(5)]
    lag = DEFAULT_GCCA_LAG
    g = fit_gcca(many, lag, K=4)
    Z = np.hstack([embed_view(v, lag) for v in many])
    R = Z.T @ Z / (Z.shape[0] - 1)
    w = Z.shape[1] // 5
    D = np.zeros_like(R)
    for n in range(5):
        sl = slice(n * w, (n + 1) * w)
        R[sl, sl] += 1e-8 * np.trace(R[sl, sl]) / w * np.eye(w)
        D[sl, sl] = R[sl, sl]
    W = np.vstack(g.decoders)
    resid = np.abs(R @ W - D @ W * g.eigenvalues).max() / np.abs(R).max()
    ok = dev_pearson < 1e-12 and dev_one < 1e-8 and resid < 1e-6
    report(acceptance, capsys, 4, "GCCA/ISC: two-view Pearson, identical views, block-GEVD residual", ok,
           f"Pearson deviation {dev_pearson:.1e}, identical-view deviation {dev_one:.1e}, residual {resid:.1e}")


def test_criterion_5_statistics(acceptance, capsys):
    rng = np.random.default_rng(505)
    mismatches = 0
    for _ in range(100):
        n = int(rng.integers(1, 9))
        a = np.round(rng.standard_normal(n), 1)
        b = np.round(rng.standard_normal(n), 1)
        if np.all(a == b):
            continue
        less, greater = wilcoxon_enumeration(a, b)
        got = (wilcoxon_signed_rank(a, b, "less"), wilcoxon_signed_rank(a, b, "greater"),
               wilcoxon_signed_rank(a, b))
        want = (less, greater, min(1.0, 2 * min(less, greater)))
        mismatches += not np.allclose(got, want, rtol=0, atol=1e-12)
    bh = bh_adjust([0.005, 0.01, 0.03, 0.04])
    bh_ok = np.allclose(bh, [0.02, 0.02, 0.04, 0.04], atol=1e-15)
    for _ in range(50):
        p = rng.random(int(rng.integers(1, 20)))
        q = bh_adjust(p)
        bh_ok &= bool(np.all(q >= p * (1 - 1e-15)) and np.all(q <= 1) and np.all(np.diff(q[np.argsort(p)]) >= 0))
    worst_spec = 0.0
    for T in (64, 97, 1000):
        x = rng.standard_normal((T, 2))
        y = phase_scramble(ts(x), rng).data
        mx, my = np.abs(np.fft.rfft(x, axis=0)), np.abs(np.fft.rfft(y, axis=0))
        worst_spec = max(worst_spec, np.abs(mx - my).max() / mx.max())
    ok = mismatches == 0 and bh_ok and worst_spec < 1e-9
    report(acceptance, capsys, 5, "Wilcoxon enumeration, BH example and properties, phase-scramble spectrum", ok,
           f"{mismatches} Wilcoxon mismatches, BH ok={bh_ok}, spectrum deviation {worst_spec:.1e}")


# ---------------------------------------------------------------- 6: protocol constants

def test_criterion_6_protocol_constants(acceptance, capsys):
    cfg = DecodeConfig()
    records, _ = gen_dataset(SimConfig(n_subjects=1, trial_seconds=2, n_channels=2))
    checks = {
        "30 s segments": cfg.segment_seconds == 30,
        "floor(V/3) segments": bootstrap_segments(240, 30, 0).size == 80 and bootstrap_segments(301, 30, 0).size == 100,
        "7 folds for 7 pairs": len(loo_pair_split(records)) == 7,
        "500 phase surrogates": cfg.n_phase_surrogates == N_PHASE_SURROGATES == 500,
        "100 circular shifts": cfg.n_circular_shifts == N_CIRCULAR_SHIFTS == 100,
        "L_y = 15": len(cfg.lag_y) == len(DEFAULT_LAG_Y) == 15 and DEFAULT_LAG_Y.offsets[-1] == 0,
        "L_x = 3": len(cfg.lag_x) == len(DEFAULT_LAG_X) == 3,
        "L_x = 5 (GCCA)": len(cfg.lag_gcca) == len(DEFAULT_GCCA_LAG) == 5,
        "sum of first 2 components": cfg.m == DEFAULT_SUM_COMPONENTS == 2 and cfg.K == DEFAULT_K,
        "97.5th percentile": cfg.alpha == ALPHA == 0.05
        and significance_threshold(np.arange(1001) / 1000) == pytest.approx(0.975),
    }
    bad = [k for k, v in checks.items() if not v]
    report(acceptance, capsys, 6, "protocol constants", not bad,
           "all defaults honored" if not bad else f"violated: {', '.join(bad)}")


# ---------------------------------------------------------------- 7-9: end to end on simulation

FULL = SimConfig(seed=0)  # 19 subjects, 7 pairs, 120 s, 64 channels, SNR 0 dB
DECODE = DecodeConfig(n_phase_surrogates=0)  # circular-shift null only


@pytest.fixture(scope="module")
def svad_runs():
    """Lazily computed full-scale SVAD reports, keyed by unattended gain."""
    cache = {}

    def get(g_u):
        if g_u not in cache:
            t0 = time.perf_counter()
            records, _ = gen_dataset(FULL.replace(unattended_gain=g_u))
            rep = run_task(records, DECODE)
            cache[g_u] = (rep, time.perf_counter() - t0)
        return cache[g_u]

    return get


@pytest.fixture(scope="module")
def default_variants():
    """MM and PCCA reports on the default-gain dataset (g_u = 0.25)."""
    records, _ = gen_dataset(FULL)
    return {
        "mm": run_task(records, DECODE.replace(task="mm")),
        "pcca": run_task(records, DECODE.replace(confound_mode="regress")),
    }


@pytest.mark.slow
def test_criterion_7_null_calibration(acceptance, capsys, svad_runs):
    rep, elapsed = svad_runs(1.0)
    lo, hi = binomial_interval(rep.n_effective)
    null_mean = float(rep.null_accuracy.values.mean())
    ok = lo <= rep.mean_accuracy <= hi and lo <= null_mean <= hi and elapsed < 180
    report(acceptance, capsys, 7, "g_a = g_u gives chance accuracy", ok,
           f"accuracy {rep.mean_accuracy:.4f}, null mean {null_mean:.4f}, "
           f"95% interval [{lo:.4f}, {hi:.4f}] over {rep.n_effective} independent segments, {elapsed:.0f} s")


@pytest.mark.slow
def test_criterion_8_sensitivity(acceptance, capsys, svad_runs):
    gains = (0.0, 0.25, 0.5, 1.0)
    reps = {g: svad_runs(g) for g in gains}
    base, _ = reps[0.25]
    accs = [reps[g][0].mean_accuracy for g in gains]
    decreasing = all(a > b for a, b in zip(accs, accs[1:]))
    total = sum(t for _, t in reps.values())
    ok = base.mean_accuracy > base.accuracy_threshold and decreasing and total < 600
    report(acceptance, capsys, 8, "sensitivity to attentional modulation", ok,
           f"g_u 0.25 accuracy {base.mean_accuracy:.4f} vs null 97.5th pct {base.accuracy_threshold:.4f}; "
           f"sweep {', '.join(f'{g}: {a:.4f}' for g, a in zip(gains, accs))}; {total:.0f} s")


@pytest.mark.slow
def test_criterion_9_directional(acceptance, capsys, svad_runs, default_variants):
    svad, _ = svad_runs(0.25)
    mm = default_variants["mm"].mean_accuracy
    pcca = default_variants["pcca"].mean_accuracy
    a_ok = mm >= svad.mean_accuracy
    b_ok = svad.mean_accuracy - pcca < 0.05

    small = SimConfig(n_subjects=6, n_channels=16, seed=0)
    iscs = {}
    for rate in (0.0, 6.0):
        records, _ = gen_dataset(small.replace(switch_rate=rate))
        iscs[rate] = float(isc_cv(records, DecodeConfig(), k=1, n_null=50).mean_isc[0])
    c_ok = iscs[6.0] < iscs[0.0]
    report(acceptance, capsys, 9, "directional findings", a_ok and b_ok and c_ok,
           f"(a) MM {mm:.4f} >= SVAD {svad.mean_accuracy:.4f}: {a_ok}; "
           f"(b) PCCA {pcca:.4f}, drop {100 * (svad.mean_accuracy - pcca):.1f} points < 5: {b_ok}; "
           f"(c) ISC_1 {iscs[0.0]:.3f} -> {iscs[6.0]:.3f} with distractor switching: {c_ok}")


# ---------------------------------------------------------------- 10: determinism

def _cli(args, env=None):
    proc = subprocess.run([sys.executable, "-m", "attndec", *args], capture_output=True, text=True, env=env)
    assert proc.returncode == 0, proc.stderr
    return proc.stdout


def _tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.slow
def test_criterion_10_determinism(acceptance, capsys, tmp_path):
    cfg = tmp_path / "sim.cfg"
    cfg.write_text("n_subjects = 4\nn_pairs = 3\ntrial_seconds = 60\nn_channels = 8\n")
    sims, decs, outs = [], [], []
    for run, workers in enumerate((1, 1, 4)):
        data = tmp_path / f"data{run}"
        dec = tmp_path / f"dec{run}"
        so = _cli(["simulate", "--config", str(cfg), "--seed", "11", "--workers", str(workers), "--out", str(data)])
        do = _cli(["decode", str(data), "--seed", "3", "--workers", str(workers), "--n-phase-surrogates", "20",
                   "--out", str(dec)])
        sims.append(_tree(data))
        decs.append(_tree(dec))
        outs.append((so.replace(str(data), "<data>"), do.replace(str(dec), "<out>")))
    same_runs = sims[0] == sims[1] and decs[0] == decs[1] and outs[0] == outs[1]
    same_workers = sims[0] == sims[2] and decs[0] == decs[2] and outs[0] == outs[2]
    report(acceptance, capsys, 10, "byte-identical simulate/decode outputs", same_runs and same_workers,
           f"{len(sims[0])} dataset files and {len(decs[0])} report files; repeat identical: {same_runs}; "
           f"workers 1 vs 4 identical: {same_workers}")
