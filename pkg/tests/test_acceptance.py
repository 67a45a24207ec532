"""Acceptance checks 1-10. Each test prints one PASS/FAIL line.

Run with ``pytest -v tests/test_acceptance.py -s`` to see only these lines,
or as part of the full suite (the lines bypass output capture).
"""

import itertools
import math
import time

import numpy as np
import pytest

from custego.cbssm import bqum, restoration_analysis
from custego.codec import decode_video, encode_frame
from custego.evaluation import (
    ExperimentConfig,
    bir,
    capacity_per_1pct,
    delta_psnr,
    psnr,
    run_experiment,
)
from custego.frame_io import Frame, synth_frame, synthetic_corpus
from custego.stc import StcParams, build_parity, stc_embed, stc_extract
from custego.stego import audit_modifications, capacity, embed_prepared, extract, prepare_cover, three_level_cost

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} | {detail}")

    return emit


# 1 ---------------------------------------------------------------------------


def _all_words(n: int) -> np.ndarray:
    return ((np.arange(1 << n)[:, None] >> np.arange(n)[None, :]) & 1).astype(np.uint8)


def test_criterion_1_stc_optimality(report):
    t0 = time.time()
    rng = np.random.default_rng(101)
    words = {n: _all_words(n) for n in range(4, 19)}
    bad = 0
    for i in range(100):
        h = (3, 4)[i % 2]
        n = int(rng.integers(4, 19))
        m = int(rng.integers(1, n // 2 + 2))
        params = StcParams(h, seed=int(rng.integers(0, 1000)))
        cover = rng.integers(0, 2, n).astype(np.uint8)
        costs = rng.uniform(0, 1, n)
        msg = rng.integers(0, 2, m).astype(np.uint8)
        stego, cost = stc_embed(cover, costs, msg, params)
        W = words[n]
        H = build_parity(n, m, params).dense()
        ok = np.all((W @ H.T) % 2 == msg, axis=1)
        best = float(((W[ok] != cover) * costs).sum(axis=1).min())
        if not (np.array_equal(stc_extract(stego, m, params), msg) and math.isclose(cost, best, rel_tol=1e-9, abs_tol=1e-12)):
            bad += 1
    dt = time.time() - t0
    passed = bad == 0 and dt < 60
    report(1, passed, f"{100 - bad}/100 instances optimal with matching syndrome, {dt:.1f}s (limit 60s)")
    assert passed


# 2 and 3 ---------------------------------------------------------------------


def test_criteria_2_3_round_trip_and_audit(report):
    t0 = time.time()
    corpus = synthetic_corpus(2, 5, 64, 64, seed=77)  # 10 frames in total
    frames = [f for v in corpus for f in v]
    rng = np.random.default_rng(202)
    cells = list(itertools.product((0.1, 0.3, 0.5), (26, 32, 38), ("full", "8x8")))
    embeds = failures = audit_problems = 0
    prepared = {}
    for alpha, qp, scheme in cells:
        key = (qp, scheme)
        if key not in prepared:
            prepared[key] = prepare_cover(frames, qp, scheme)
        analyses = prepared[key]
        cap = capacity([a.carriers.q for a in analyses], alpha)
        assert cap > 0, f"no capacity at alpha {alpha}, qp {qp}, scheme {scheme}"
        for j in range(100):
            n = cap if j % 4 == 0 else int(rng.integers(1, cap + 1))
            msg = rng.integers(0, 2, n).astype(np.uint8)
            res = embed_prepared(analyses, msg, alpha, StcParams(7, seed=j), scheme)
            embeds += 1
            if not np.array_equal(extract(res.package), msg):
                failures += 1
            for a, st in zip(analyses, res.stego):
                audit_problems += len(audit_modifications(a.coded.structure, st.structure, a.carriers))
    dt = time.time() - t0
    ok2 = failures == 0 and dt < 600
    report(2, ok2, f"{embeds - failures}/{embeds} messages recovered exactly over {len(cells)} grid cells, {dt:.0f}s (limit 600s)")
    report(3, audit_problems == 0, f"{audit_problems} depth-bound violations across {embeds} embeds")
    assert ok2 and audit_problems == 0


# 4 and 5 ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def restoration_qp32():
    frames = [synth_frame("scene", 128, 128, seed=400 + i) for i in range(20)]
    return restoration_analysis(frames, 32)


def test_criterion_4_restoration(report, restoration_qp32):
    r = restoration_qp32
    ok = r.fraction_structure_unchanged >= 0.60 and r.mean_bsim >= 0.60
    report(
        4,
        ok,
        f"fraction unchanged {r.fraction_structure_unchanged:.4f}, mean BSIM {r.mean_bsim:.4f} "
        f"over 20 frames at qp 32 (need >= 0.60; reference figure 0.85)",
    )
    assert ok


def test_criterion_5_margin_bound(report, restoration_qp32):
    r = restoration_qp32
    frames = [s for s in r.per_frame if s["n_changed"] and s["n_unchanged"]]
    ordered = sum(s["mean_delta_unchanged"] > s["mean_delta_changed"] for s in frames)
    rate = r.change_rate_above_bound
    estimable = math.isfinite(r.lipschitz) and bool(frames)
    ok_rate = estimable and (math.isnan(rate) or rate <= 0.10)
    ok_order = bool(frames) and ordered / len(frames) >= 0.80
    report(
        5,
        ok_rate and ok_order,
        f"L_J={r.lipschitz:.4g}, change rate above bound {rate:.4f} (need <= 0.10), "
        f"unchanged-margin > changed-margin on {ordered}/{len(frames)} frames with changes (need >= 80%)",
    )
    assert ok_rate and ok_order


# 6 ---------------------------------------------------------------------------


def test_criterion_6_three_level_algebra(report):
    vals = (three_level_cost(3, 0.1, 0), three_level_cost(3, 0.1, 1), three_level_cost(3, 0.1, 2))
    exact = all(math.isclose(a, b, abs_tol=1e-12) for a, b in zip(vals, (0.3, 0.1, 0.05)))
    order = all(
        three_level_cost(md, d, 0) >= three_level_cost(md, d, 1) > three_level_cost(md, d, mdd)
        for md in (1, 2, 3, 4)
        for d in (0.01, 0.1, 1.0)
        for mdd in (2, 3, 4)
    )
    report(6, exact and order, f"costs {[round(v, 12) for v in vals]} for MDD 0/1/2, case ordering holds: {order}")
    assert exact and order


# 7 ---------------------------------------------------------------------------


def test_criterion_7_detectability(report):
    corpus = synthetic_corpus(20, 2, 128, 128, seed=1)
    cfg = ExperimentConfig(qps=(26,), payloads=(0.5,), schemes=("full", "tew"), repeats=100, restoration=False)
    res = run_experiment(corpus, cfg)
    acc = {d["scheme"]: d["accuracy"] for d in res.detection}
    gap = 100 * (acc["tew"] - acc["full"])
    ok = gap >= 10 and acc["tew"] >= 0.70
    report(
        7,
        ok,
        f"detector accuracy tew {acc['tew']:.3f}, proposed {acc['full']:.3f}, gap {gap:+.1f} pp "
        f"(need >= +10 pp and tew >= 0.70) on 20 videos, qp 26, 0.5 bpc",
    )
    assert ok


# 8 ---------------------------------------------------------------------------


def test_criterion_8_quality_rate_ordering(report):
    corpus = synthetic_corpus(6, 2, 128, 128, seed=2)
    cfg = ExperimentConfig(schemes=("full", "tew"), repeats=1, restoration=False)
    res = run_experiment(corpus, cfg)
    bad = []
    for qp in cfg.qps:
        for a in cfg.payloads:
            mean = {}
            for s in ("full", "tew"):
                rows = [r for r in res.rows if r["qp"] == qp and r["payload"] == a and r["scheme"] == s]
                mean[s] = (np.mean([r["delta_psnr"] for r in rows]), np.mean([r["bir"] for r in rows]))
            if not (mean["full"][0] < mean["tew"][0] and mean["full"][1] < mean["tew"][1]):
                bad.append(f"qp{qp}/a{a}: dPSNR {mean['full'][0]:.3f} vs {mean['tew'][0]:.3f}, BIR {mean['full'][1]:.4f} vs {mean['tew'][1]:.4f}")
    report(8, not bad, f"{9 - len(bad)}/9 grid points with proposed < tew in both dPSNR and BIR" + (f"; {bad}" if bad else ""))
    assert not bad


# 9 ---------------------------------------------------------------------------


def test_criterion_9_metric_formulas(report):
    zero = synth_frame("flat", 64, 64, value=0)
    one = zero.luma.copy()
    one[0, 0] = 16
    checks = [
        math.isclose(delta_psnr(40.0, 39.9, 1000), 0.1, rel_tol=1e-9),
        delta_psnr(40.0, 40.0, 1000) == 0.0,
        math.isclose(delta_psnr(40.0, 39.9, 2000), 0.05, rel_tol=1e-9),
        bir(10**6, 10**6, 1000) == 0.0,
        math.isclose(bir(10**6, 1.001 * 10**6, 1000), 1e-3, rel_tol=1e-9),
        math.isclose(capacity_per_1pct(1e-3), 10_000, rel_tol=1e-9),
        math.isclose(capacity_per_1pct(1e-2), 1_000, rel_tol=1e-9),
        capacity_per_1pct(0.0) == float("inf"),
        abs(bqum(2, 1) - math.exp(-0.5)) < 1e-9,
        abs(bqum(1, 0) - math.exp(-1.0)) < 1e-9,
        psnr(zero, zero) == 99.0,
        abs(psnr(zero, Frame.from_array(one)) - 10 * math.log10(255**2 / 0.0625)) < 1e-9,
    ]
    report(9, all(checks), f"{sum(checks)}/{len(checks)} hand values exact")
    assert all(checks)


# 10 --------------------------------------------------------------------------


def test_criterion_10_codec_soundness(report):
    rng = np.random.default_rng(1010)
    frames = []
    for i in range(50):
        if i % 2:
            frames.append(synth_frame("scene", 64, 64, seed=1000 + i))
        else:
            base = np.kron(rng.integers(0, 256, (8, 8)), np.ones((8, 8)))
            frames.append(Frame.from_array(np.clip(base + rng.normal(0, 12, (64, 64)), 0, 255).astype(np.uint8)))
    exact = monotone = deterministic = 0
    for f in frames:
        ps = []
        ok_exact = ok_det = True
        for qp in (20, 26, 32, 38):
            coded, data, recon = encode_frame(f, qp)
            dv = decode_video(data)
            ok_exact &= dv.frames[0] == recon and dv.structures[0] == coded.structure
            ok_det &= encode_frame(f, qp)[1] == data
            ps.append(psnr(f, recon))
        exact += ok_exact
        deterministic += ok_det
        monotone += all(a >= b for a, b in zip(ps, ps[1:]))
    ok = exact == deterministic == monotone == 50
    report(10, ok, f"bit-exact {exact}/50, PSNR non-increasing {monotone}/50, byte-deterministic {deterministic}/50")
    assert ok
