"""Acceptance suite: one test per headline criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (lines are printed even when
output capture is on).
"""

import itertools
import math
import time

import numpy as np
import pytest
from scipy.signal import welch
from sklearn.metrics import silhouette_score

from dialect_aug import acoustics, augment, classifier as clf, experiment as ex, pipeline, stats, synthetic
from dialect_aug.classifier import TrainConfig
from dialect_aug.corpus import AgeGroup, DatasetManifest, RecordingMeta, Waveform, segment_recording
from dialect_aug.embed import EmbeddingTable

from conftest import RATE, sawtooth, tone, vowel


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail, t0):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n:2d} {'PASS' if ok else 'FAIL'}: {detail} [{time.time() - t0:.1f} s]")
    return emit


# 1 ------------------------------------------------------------------------------

def test_01_sr_arithmetic(report):
    t0 = time.time()
    spec = augment.SegmentRemovalSpec()
    x = Waveform(np.random.default_rng(0).standard_normal(10 * RATE), RATE)
    bad = 0
    for seed in range(200):
        plan = augment.plan_segment_removal(10.0, spec, seed)
        out = augment.apply_segment_removal(x, plan)
        bad += not (len(plan.intervals) == 16 and abs(plan.removed_s - 4.8) < 1e-12 and out.n_samples == 83200)
    ok = bad == 0
    report(1, ok, f"200 plans on 10 s input, {bad} not (16 chunks, 4.8 s, 83200 samples)", t0)
    assert ok


# 2 ------------------------------------------------------------------------------

@pytest.mark.slow
def test_02_srfm_count_ratio(report):
    t0 = time.time()
    rng = np.random.default_rng(2)
    # 50 recordings of 30-50 full windows plus a ragged tail (2028 windows in all)
    n_windows = rng.integers(30, 51, size=50)
    tails = rng.uniform(0.0, 9.9, size=50)
    recs = [RecordingMeta(f"r{i:03d}", f"s{i % 13:02d}", f"D{i % 4}", AgeGroup.MIDDLE, "x.wav",
                          float(10 * n + t)) for i, (n, t) in enumerate(zip(n_windows, tails))]

    def load(rec):
        n = int(round(rec.duration_s * RATE))
        return Waveform(np.random.default_rng(int(rec.recording_id[1:])).standard_normal(n) * 0.1, RATE)

    n_in = n1 = 0
    per_pass6 = np.zeros(6, dtype=int)
    for rec in recs:
        segs = segment_recording(load(rec), recording_id=rec.recording_id)
        n_in += len(segs)
        n1 += sum(1 for _ in augment.iter_sr_fm_copies(segs, 1, 7))
        for a in augment.iter_sr_fm_copies(segs, 6, 7):
            per_pass6[a.pass_index] += 1
    n6 = int(per_pass6.sum())
    ratio = n1 / n_in
    ok = n_in >= 2000 and len(recs) >= 50 and 0.46 <= ratio <= 0.52 and n6 == 6 * n1
    report(2, ok, f"{n_in} segments / {len(recs)} recordings: SR-FM-1 {n1} (ratio {ratio:.4f}), "
                  f"SR-FM-6 {n6} = 6 x {n6 / 6:g}", t0)
    assert ok


# 3 ------------------------------------------------------------------------------

def test_03_fm_spectral_contract(report):
    t0 = time.time()
    spec = augment.FreqMaskSpec()
    worst_att, worst_out = math.inf, 0.0
    for seed in range(100):
        x = Waveform(np.random.default_rng(seed).standard_normal(4 * RATE), RATE)
        bands = augment.sample_mask_bands(spec, seed)
        y = augment.apply_frequency_mask(x, bands)
        f, px = welch(x.samples, fs=RATE, nperseg=4096)
        _, py = welch(y.samples, fs=RATE, nperseg=4096)
        near = np.zeros(len(f), dtype=bool)
        for b in bands:
            inside = (f >= b.lo_hz) & (f <= b.hi_hz)
            worst_att = min(worst_att, 10 * np.log10(px[inside].sum() / py[inside].sum()))
            near |= (f >= b.lo_hz - 100.0) & (f <= b.hi_hz + 100.0)
        worst_out = max(worst_out, abs(10 * np.log10(py[~near].sum() / px[~near].sum())))
    ok = worst_att >= 40.0 and worst_out < 1.0
    report(3, ok, f"100 draws: min in-band attenuation {worst_att:.1f} dB, "
                  f"max out-of-band change {worst_out:.4f} dB", t0)
    assert ok


# 4 ------------------------------------------------------------------------------

def test_04_split_protocol(report):
    t0 = time.time()
    rng = np.random.default_rng(4)
    sizes = np.concatenate([[3, 40], rng.integers(3, 41, size=18)])
    recs = []
    for d, n in enumerate(sizes):
        for s in range(n):
            recs.append(RecordingMeta(f"d{d:02d}s{s:02d}", f"d{d:02d}s{s:02d}", f"D{d:02d}", AgeGroup.MIDDLE,
                                      "x.wav", 30.0))
    manifest = DatasetManifest(recs)
    by_dialect = manifest.speakers_by_dialect()
    violations = wrong_counts = 0
    for i in range(250):
        split = ex.sample_split(manifest, ex.run_seed(0, i))
        for d, spk in by_dialect.items():
            v, t, tr = (set(split.val_speakers[d]), set(split.test_speakers[d]), set(split.train_speakers[d]))
            violations += bool(v & t or v & tr or t & tr) or (v | t | tr) != set(spk)
            k = math.ceil(len(spk) / 10)
            wrong_counts += len(v) != k or len(t) != k
    ok = violations == 0 and wrong_counts == 0
    report(4, ok, f"250 splits x 20 dialects (sizes {sizes.min()}-{sizes.max()}): "
                  f"{violations} partition violations, {wrong_counts} wrong val/test counts", t0)
    assert ok


# 5 ------------------------------------------------------------------------------

def _enumerated_p(x, y):
    """Two-sided p by listing every assignment of the pooled midranks to the first sample."""
    ranks = stats.rankdata(np.concatenate([x, y]))
    n1 = len(x)
    u = ranks[:n1].sum() - n1 * (n1 + 1) / 2
    combos = np.array(list(itertools.combinations(range(len(ranks)), n1)))
    us = ranks[combos].sum(axis=1) - n1 * (n1 + 1) / 2
    lower = np.mean(us <= u + 1e-9)
    upper = np.mean(us >= u - 1e-9)
    return min(1.0, 2 * min(lower, upper))


def test_05_mann_whitney(report):
    t0 = time.time()
    rng = np.random.default_rng(5)
    worst_normal = 0.0
    for _ in range(1000):
        x = rng.standard_normal(8)
        y = rng.standard_normal(8) + rng.uniform(0, 2.5)
        got = stats.mann_whitney_u(x, y, method="normal").p_value
        worst_normal = max(worst_normal, abs(got - _enumerated_p(x, y)))
    # the default method for every size up to 8 x 8, with ties
    worst_auto = 0.0
    for _ in range(1000):
        n1, n2 = rng.integers(1, 9, size=2)
        x = np.round(rng.standard_normal(n1), 1)
        y = np.round(rng.standard_normal(n2) + rng.uniform(0, 2), 1)
        worst_auto = max(worst_auto, abs(stats.mann_whitney_u(x, y).p_value - _enumerated_p(x, y)))
    hand = stats.mann_whitney_u([1, 2, 3], [4, 5, 6])
    ok = worst_normal <= 0.01 and worst_auto <= 0.01 and hand.u_statistic == 0 and abs(hand.p_value - 0.1) < 1e-12
    report(5, ok, f"normal approx at 8 x 8: max |p - p_exact| {worst_normal:.5f}; default method, sizes 1-8 "
                  f"with ties: {worst_auto:.2e}; {{1,2,3}} vs {{4,5,6}}: U={hand.u_statistic:g} p={hand.p_value:g}", t0)
    assert ok


# 6 ------------------------------------------------------------------------------

def _brute_f1(truth, pred):
    total = 0.0
    for c in set(truth):
        tp = sum(t == c and p == c for t, p in zip(truth, pred))
        fp = sum(t != c and p == c for t, p in zip(truth, pred))
        fn = sum(t == c and p != c for t, p in zip(truth, pred))
        f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
        total += f1 * sum(t == c for t in truth) / len(truth)
    return total


def test_06_weighted_f1(report):
    t0 = time.time()
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(1000):
        n, k = rng.integers(1, 40), rng.integers(1, 7)
        truth = list(rng.integers(0, k, size=n))
        pred = list(rng.integers(0, k, size=n))
        worst = max(worst, abs(stats.weighted_f1(truth, pred) - _brute_f1(truth, pred)))
    hand = stats.weighted_f1(list("aabbc"), list("abbbc"))
    ok = worst <= 1e-9 and abs(hand - 0.78667) <= 1e-5
    report(6, ok, f"1000 vectors: max deviation {worst:.1e}; hand case {hand:.5f}", t0)
    assert ok


# 7 ------------------------------------------------------------------------------

def _loss_ld(arrays, X, y, masks, slope=0.01):
    """Mean cross-entropy written out independently in extended precision."""
    W1, b1, W2, b2, W3, b3 = arrays
    a1 = X @ W1 + b1
    a1 = np.where(a1 > 0, a1, slope * a1) * masks[0]
    a2 = a1 @ W2 + b2
    a2 = np.where(a2 > 0, a2, slope * a2) * masks[1]
    z = a2 @ W3 + b3
    z = z - z.max(axis=1, keepdims=True)
    return np.mean(np.log(np.exp(z).sum(axis=1)) - z[np.arange(len(y)), y])


def test_07_gradient_check(report):
    t0 = time.time()
    # central differences in 80-bit floats keep round-off far below the smallest gradients
    eps = np.longdouble(1e-7)
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        D, H1, H2, C, n = (int(v) for v in rng.integers([2, 2, 2, 2, 1], [8, 9, 9, 5, 7]))
        p = clf.init_params(D, H1, H2, C, rng)
        p.b1 += rng.normal(0, 0.1, H1)
        p.b2 += rng.normal(0, 0.1, H2)
        X = rng.standard_normal((n, D))
        y = rng.integers(0, C, size=n)
        masks = clf.dropout_masks(rng, n, H1, H2, 0.3)
        _, g = clf.loss_and_grad(p, X, y, masks)
        arrays = [a.astype(np.longdouble) for a in p.arrays()]
        Xl = X.astype(np.longdouble)
        ml = tuple(m.astype(np.longdouble) for m in masks)
        for a, ga in zip(arrays, g.arrays()):
            for i in np.ndindex(a.shape):
                old = a[i]
                a[i] = old + eps
                lp = _loss_ld(arrays, Xl, y, ml)
                a[i] = old - eps
                lm = _loss_ld(arrays, Xl, y, ml)
                a[i] = old
                num = float((lp - lm) / (2 * eps))
                if ga[i] != 0 or num != 0:
                    worst = max(worst, abs(ga[i] - num) / max(abs(ga[i]), abs(num)))
    ok = worst < 1e-4
    report(7, ok, f"20 networks with frozen dropout masks: max relative error {worst:.2e}", t0)
    assert ok


# 8 ------------------------------------------------------------------------------

def test_08_pitch(report):
    t0 = time.time()
    worst_median, octave, voiced, frames = 0.0, 0, 0, 0
    for f0 in (90, 118, 150, 220, 300):
        for make in (tone, sawtooth):
            c = acoustics.extract_pitch(make(f0, 1.0))
            est = c.f0_hz[c.voiced]
            worst_median = max(worst_median, float(np.median(np.abs(est / f0 - 1))))
            octave += int(np.sum(np.abs(np.log2(est / f0)) > 0.5))
            voiced += len(est)
            frames += len(c.voiced)
    ok = worst_median < 0.02 and octave < 0.01 * voiced and voiced >= 0.9 * frames
    report(8, ok, f"sines and sawtooths at 90-300 Hz: worst median error {100 * worst_median:.3f}%, "
                  f"{octave}/{voiced} octave errors, {voiced}/{frames} frames voiced", t0)
    assert ok


# 9 ------------------------------------------------------------------------------

def test_09_formants(report):
    t0 = time.time()
    worst = 0.0
    for formants in ((700, 1220, 2600), (624, 1598, 2666)):
        conf = acoustics.extract_formants(vowel(formants)).confident()
        med = np.median(conf, axis=0)
        worst = max(worst, float(np.max(np.abs(med / np.array(formants) - 1))))
    ok = worst <= 0.05
    report(9, ok, f"two all-pole vowels: worst per-formant median error {100 * worst:.2f}%", t0)
    assert ok


# 10 -----------------------------------------------------------------------------

@pytest.mark.slow
def test_10_end_to_end_synthetic(report):
    t0 = time.time()
    corpus = synthetic.make_corpus(n_dialects=2, speakers_per_dialect=12, recordings_per_speaker=10)
    data = pipeline.synthetic_experiment_data(corpus, srfm_k=1, seed=0)
    config = TrainConfig()
    base = ex.run_many(ex.parse_condition("baseline"), data, config, n_runs=50, base_seed=0)
    srfm = ex.run_many(ex.parse_condition("srfm1"), data, config, n_runs=50, base_seed=0)
    delta = srfm.mean - base.mean
    not_significant = 0
    for trial in range(20):
        a = ex.run_many(ex.parse_condition("baseline"), data, config, n_runs=10, base_seed=1000 + 2 * trial)
        b = ex.run_many(ex.parse_condition("baseline"), data, config, n_runs=10, base_seed=1001 + 2 * trial)
        not_significant += ex.compare_conditions(a, b).p_value > 0.05
    elapsed = time.time() - t0
    ok = base.mean >= 0.90 and delta > -0.05 and not_significant >= 18 and elapsed < 600
    report(10, ok, f"baseline mean F1 {base.mean:.4f} over 50 runs, SR-FM-1 change {delta:+.4f}, "
                   f"calibration p > 0.05 in {not_significant}/20", t0)
    assert ok


# 11 -----------------------------------------------------------------------------

def test_11_projection_contraction(report):
    t0 = time.time()
    rng = np.random.default_rng(11)
    n, dim, content_dims, n_speakers = 150, 128, 32, 15
    content = rng.standard_normal((n, content_dims))
    voices = rng.normal(0.0, 2.0, size=(n_speakers, dim - content_dims))
    speaker = rng.integers(0, n_speakers, size=n)
    original = np.hstack([content, voices[speaker] + 0.3 * rng.standard_normal((n, dim - content_dims))])
    # every converted point keeps its content but takes the single target voice
    target = np.full(dim - content_dims, 6.0)
    collapsed = np.hstack([content, target + 0.3 * rng.standard_normal((n, dim - content_dims))])
    table = EmbeddingTable(dim)
    for i in range(n):
        table.add(f"o{i:03d}", original[i])
        table.add(f"c{i:03d}", collapsed[i])

    def spread(X):
        d = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
        return d[np.triu_indices(len(X), 1)].mean()

    sil = {}
    for method in ("pca", "tsne"):
        proj = acoustics.project_embeddings(table, method, seed=0)
        labels = [s[0] for s in proj.segment_ids]
        sil[method] = silhouette_score(proj.coords, labels)
    contraction = spread(collapsed) / spread(original)
    ok = sil["pca"] > 0.5 and sil["tsne"] > 0.5 and contraction < 0.5
    report(11, ok, f"silhouette PCA {sil['pca']:.3f}, t-SNE {sil['tsne']:.3f}; "
                   f"collapsed/original spread {contraction:.3f}", t0)
    assert ok
