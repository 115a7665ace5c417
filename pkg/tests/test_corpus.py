import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dialect_aug import corpus
from dialect_aug.corpus import (AgeGroup, DatasetManifest, ManifestFormatError, ManifestValidationError, Provenance,
                                RecordingMeta, UnsupportedRateError, Waveform)

from conftest import RATE, noise, tone, write_manifest_rows


def rows_for(dialect_speakers, age="middle", dur=20.0):
    rows = []
    for d, n in dialect_speakers.items():
        for i in range(n):
            spk = f"{d}_s{i}"
            rows.append((f"{spk}_r0", spk, d, age, f"audio/{spk}.wav", dur))
    return rows


def test_thin_dialect_dropped_with_warning(tmp_path, caplog):
    path = write_manifest_rows(tmp_path / "m.csv", rows_for({"A": 5, "B": 2}))
    with caplog.at_level(logging.WARNING):
        m = corpus.load_manifest(path)
    assert m.dialects == {"A"}
    assert "'B'" in caplog.text
    assert m.dropped_ids == {"B_s0_r0", "B_s1_r0"}


def test_empty_manifest_is_validation_error(tmp_path):
    (tmp_path / "m.csv").write_text("", encoding="utf-8")
    with pytest.raises(ManifestValidationError):
        corpus.load_manifest(tmp_path / "m.csv")
    write_manifest_rows(tmp_path / "h.csv", [])
    with pytest.raises(ManifestValidationError):
        corpus.load_manifest(tmp_path / "h.csv")


def test_duplicate_recording_id(tmp_path):
    rows = rows_for({"A": 3})
    rows.append(rows[0])
    with pytest.raises(ManifestValidationError, match="duplicate"):
        corpus.load_manifest(write_manifest_rows(tmp_path / "m.csv", rows))


def test_format_error_reports_line(tmp_path):
    rows = rows_for({"A": 3})
    rows[1] = rows[1][:5] + ("ten",)
    with pytest.raises(ManifestFormatError) as exc:
        corpus.load_manifest(write_manifest_rows(tmp_path / "m.csv", rows))
    assert exc.value.line == 3


def test_bad_age_group(tmp_path):
    rows = rows_for({"A": 3}, age="teen")
    with pytest.raises(ManifestFormatError, match="age_group"):
        corpus.load_manifest(write_manifest_rows(tmp_path / "m.csv", rows))


def test_speaker_in_two_dialects_rejected(tmp_path):
    rows = rows_for({"A": 3, "B": 3})
    rows.append(("x", "A_s0", "B", "middle", "x.wav", 5.0))
    with pytest.raises(ManifestValidationError, match="A_s0"):
        corpus.load_manifest(write_manifest_rows(tmp_path / "m.csv", rows))


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 9), st.sampled_from(list(AgeGroup)),
                          st.floats(0.0, 1e5, allow_nan=False)), min_size=1, max_size=40))
def test_manifest_round_trip_is_idempotent(tmp_path_factory, items):
    # speaker ids encode their dialect and age so the speaker rules always hold
    recs = []
    for i, (d, s, age, dur) in enumerate(items):
        spk = f"D{d}_{age.value}_{s}"
        recs.append(RecordingMeta(f"r{i}", spk, f"D{d}", age, f"a/r{i}.wav", dur))
    d = tmp_path_factory.mktemp("m")
    corpus.write_manifest(DatasetManifest(recs), d / "a.csv")
    try:
        first = corpus.load_manifest(d / "a.csv")
    except ManifestValidationError:
        return  # every dialect was too thin
    corpus.write_manifest(first, d / "b.csv")
    second = corpus.load_manifest(d / "b.csv")
    assert first == second
    corpus.write_manifest(second, d / "c.csv")
    assert (d / "b.csv").read_bytes() == (d / "c.csv").read_bytes()


def reference_scale_manifest(seed=0):
    """20 dialects; per-group speaker totals 139 / 237 / 198, each dialect >= 3 speakers per group."""
    rng = np.random.default_rng(seed)
    recs = []
    totals = {AgeGroup.YOUNG: (139, 32440.17), AgeGroup.MIDDLE: (237, 59966.90), AgeGroup.OLD: (198, 64476.90)}
    for age, (n_spk, seconds) in totals.items():
        per_dialect = np.full(20, 3)
        extra = rng.multinomial(n_spk - 60, np.ones(20) / 20)
        per_dialect += extra
        durs = rng.gamma(4.0, 1.0, size=n_spk)
        durs = durs / durs.sum() * seconds
        k = 0
        for d, n in enumerate(per_dialect):
            for _ in range(n):
                spk = f"{age.value}_{k:03d}"
                recs.append(RecordingMeta(f"{spk}_r0", spk, f"D{d:02d}", age, f"{spk}.wav", float(durs[k])))
                k += 1
    return DatasetManifest(recs)


def test_summary_matches_reference_speaker_counts():
    rows = {r.age_group: r for r in corpus.summarize_manifest(reference_scale_manifest())}
    assert [rows[g].n_speakers for g in ("Young", "Middle", "Old", "All")] == [139, 237, 198, 574]
    assert rows["Young"].total_seconds == pytest.approx(32440.17, abs=0.01)
    assert rows["All"].total_seconds == pytest.approx(156883.97, abs=0.02)
    # about one trailing half-window lost per recording
    assert abs(rows["Young"].n_samples - 3170) <= 0.03 * 3170


def test_val_test_column_is_per_set_count():
    m = reference_scale_manifest()
    rows = {r.age_group: r for r in corpus.summarize_manifest(m)}
    expected = sum(corpus.split_speaker_count(len(s)) for s in m.speakers_by_dialect().values())
    assert rows["All"].n_speakers_val_test == expected
    # 20 dialects averaging 28.7 speakers land close to a reference total of 69
    assert 60 <= expected <= 80


def test_format_summary_header():
    text = corpus.format_summary(corpus.summarize_manifest(reference_scale_manifest()))
    head = text.splitlines()[0]
    for col in ("Age group", "# Speakers", "Total Seconds", "# Samples"):
        assert col in head


def test_restrict_reapplies_thin_rule():
    recs = [RecordingMeta(f"r{i}", f"s{i}", "A", AgeGroup.YOUNG if i < 2 else AgeGroup.OLD, "x", 10.0)
            for i in range(6)]
    m = DatasetManifest(recs)
    assert m.restrict(AgeGroup.YOUNG).recordings == []
    assert len(m.restrict(AgeGroup.OLD).recordings) == 4


# --- audio ----------------------------------------------------------------------

def test_normalize_identity_for_16k_mono():
    w = noise(1.0)
    out = corpus.normalize_audio(w)
    assert out.rate_hz == RATE
    assert np.array_equal(out.samples, w.samples)


def test_normalize_48k_stereo_tone_peak():
    t = np.arange(48000) / 48000
    x = 0.4 * np.sin(2 * np.pi * 1000 * t)
    out = corpus.normalize_audio(Waveform(np.stack([x, x], axis=1), 48000))
    assert out.rate_hz == RATE and out.channels == 1
    spec = np.abs(np.fft.rfft(out.samples))
    freqs = np.fft.rfftfreq(len(out.samples), 1 / RATE)
    assert abs(freqs[spec.argmax()] - 1000) <= freqs[1]


def test_normalize_rejects_low_rate():
    with pytest.raises(UnsupportedRateError):
        corpus.normalize_audio(Waveform(np.zeros(4000), 4000))


@given(st.integers(0, 2**31), st.sampled_from([8000, 22050, 44100, 48000]))
def test_resampler_is_linear(seed, rate):
    rng = np.random.default_rng(seed)
    a = 0.2 * rng.standard_normal(rate // 10)
    b = 0.2 * rng.standard_normal(rate // 10)
    na = corpus.normalize_audio(Waveform(a, rate)).samples
    nb = corpus.normalize_audio(Waveform(b, rate)).samples
    nab = corpus.normalize_audio(Waveform(a + b, rate)).samples
    if max(np.abs(na).max(), np.abs(nb).max(), np.abs(nab).max()) >= 1.0:
        return  # clipping is not linear
    assert np.sqrt(np.mean((nab - na - nb) ** 2)) < 1e-6


def test_segment_recording_windows():
    segs = corpus.segment_recording(noise(25.0), recording_id="r")
    assert [s.start_s for s in segs] == [0.0, 10.0]
    assert [s.segment_id for s in segs] == ["r__0000", "r__0001"]
    assert all(s.provenance is Provenance.ORIGINAL for s in segs)
    assert corpus.segment_recording(noise(9.9)) == []


@given(st.floats(0.0, 45.0))
def test_segments_partition_the_prefix(seconds):
    w = noise(seconds, seed=3)
    segs = corpus.segment_recording(w)
    n = len(segs) * 10 * RATE
    assert len(segs) == int(len(w.samples) // (10 * RATE))
    joined = np.concatenate([s.waveform.samples for s in segs]) if segs else np.zeros(0)
    assert np.array_equal(joined, w.samples[:n])


def test_filter_min_duration():
    ws = [noise(d) for d in (0.5, 1.0, 3.2)]
    assert [w.duration_s for w in corpus.filter_min_duration(ws)] == [1.0, 3.2]
    assert corpus.filter_min_duration([]) == []


@given(st.lists(st.integers(-32768, 32767), min_size=1, max_size=400))
def test_wav_round_trip_on_pcm_grid(tmp_path_factory, ints):
    x = np.array(ints, dtype=np.float64) / 32768.0
    path = tmp_path_factory.mktemp("w") / "x.wav"
    corpus.write_wav(path, Waveform(x, RATE))
    back = corpus.read_wav(path)
    assert back.rate_hz == RATE
    assert np.array_equal(back.samples, x)


def test_write_wav_rejects_unnormalized(tmp_path):
    with pytest.raises(corpus.CorpusError):
        corpus.write_wav(tmp_path / "x.wav", Waveform(np.zeros(10), 44100))


def test_check_duration():
    rec = RecordingMeta("r", "s", "A", AgeGroup.OLD, "x", 1.0)
    assert corpus.check_duration(rec, tone(100, 1.0))
    assert not corpus.check_duration(rec, tone(100, 1.01))
