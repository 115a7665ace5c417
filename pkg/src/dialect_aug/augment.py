"""Segment removal (SR) and frequency masking (FM) augmentation.

SR excises fixed-length chunks covering a fraction of each segment, so the
audio gets shorter; FM zeroes randomly placed frequency bands of the
short-time spectrum over the whole segment. ``iter_sr_fm_copies`` composes
them (SR first, then FM) to produce k augmented passes over a recording.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from . import dsp
from .corpus import SEGMENT_SECONDS, Provenance, Segment, Waveform, segment_recording, write_wav

FM_N_FFT = 1024
FM_HOP = 256
# extra STFT bins zeroed on each side of a band so window leakage stays below -40 dB in-band
FM_GUARD_BINS = 3
MAX_PLACEMENT_RETRIES = 100


class AugmentError(ValueError):
    pass


class InfeasiblePlanError(AugmentError):
    pass


@dataclass(frozen=True)
class SegmentRemovalSpec:
    ratio: float = 0.5
    chunk_s: float = 0.3

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise AugmentError(f"ratio must be in [0, 1], got {self.ratio}")
        if self.chunk_s <= 0:
            raise AugmentError(f"chunk_s must be > 0, got {self.chunk_s}")

    def chunk_count(self, duration_s: float) -> int:
        return int(math.floor(self.ratio * duration_s / self.chunk_s + 1e-9))


@dataclass(frozen=True)
class FreqMaskSpec:
    count_min: int = 1
    count_max: int = 3
    bw_min_hz: float = 100.0
    bw_max_hz: float = 2500.0
    f_low_hz: float = 0.0
    f_high_hz: float | None = None  # None means Nyquist

    def __post_init__(self):
        if not 1 <= self.count_min <= self.count_max:
            raise AugmentError(f"need 1 <= count_min <= count_max, got {self.count_min}, {self.count_max}")
        if not 0 < self.bw_min_hz <= self.bw_max_hz:
            raise AugmentError(f"need 0 < bw_min_hz <= bw_max_hz, got {self.bw_min_hz}, {self.bw_max_hz}")

    def window(self, rate_hz: int) -> tuple[float, float]:
        hi = rate_hz / 2.0 if self.f_high_hz is None else self.f_high_hz
        if not 0 <= self.f_low_hz < hi <= rate_hz / 2.0:
            raise AugmentError(f"placement window [{self.f_low_hz}, {hi}] outside [0, {rate_hz / 2}]")
        if self.bw_min_hz > hi - self.f_low_hz:
            raise AugmentError(f"bw_min_hz {self.bw_min_hz} wider than placement window {hi - self.f_low_hz}")
        return self.f_low_hz, hi


@dataclass(frozen=True)
class RemovalPlan:
    intervals: tuple[tuple[float, float], ...]
    duration_s: float

    @property
    def removed_s(self) -> float:
        return sum(b - a for a, b in self.intervals)


@dataclass(frozen=True)
class MaskBand:
    lo_hz: float
    hi_hz: float


def plan_segment_removal(duration_s: float, spec: SegmentRemovalSpec, seed,
                         rate_hz: int = 16000) -> RemovalPlan:
    """Place floor(ratio * duration / chunk_s) disjoint chunks uniformly at random.

    Placement works on the sample grid: the free samples are split by n sorted
    uniform draws (with replacement), which gives every disjoint arrangement
    equal probability and needs no retries.
    """
    if duration_s < spec.chunk_s:
        raise InfeasiblePlanError(f"duration {duration_s} s shorter than one chunk ({spec.chunk_s} s)")
    n = spec.chunk_count(duration_s)
    total = int(round(duration_s * rate_hz))
    chunk = int(round(spec.chunk_s * rate_hz))
    free = total - n * chunk
    if free < 0:
        raise InfeasiblePlanError(f"{n} chunks of {spec.chunk_s} s do not fit in {duration_s} s")
    rng = np.random.default_rng(seed)
    gaps = np.sort(rng.integers(0, free + 1, size=n))
    starts = gaps + chunk * np.arange(n)
    intervals = tuple((int(s) / rate_hz, int(s + chunk) / rate_hz) for s in starts)
    return RemovalPlan(intervals, duration_s)


def apply_segment_removal(w: Waveform, plan: RemovalPlan) -> Waveform:
    """Excise the planned chunks and concatenate what is left, in order."""
    x = np.asarray(w.samples)
    keep = np.ones(len(x), dtype=bool)
    for a, b in plan.intervals:
        i, j = int(round(a * w.rate_hz)), int(round(b * w.rate_hz))
        if not 0 <= i <= j <= len(x):
            raise AugmentError(f"removal interval ({a}, {b}) s outside waveform of {w.duration_s} s")
        keep[i:j] = False
    if keep.all():
        return Waveform(x.copy(), w.rate_hz)
    return Waveform(x[keep], w.rate_hz)


def sample_mask_bands(spec: FreqMaskSpec, seed, rate_hz: int = 16000) -> list[MaskBand]:
    """Draw between count_min and count_max pairwise disjoint bands.

    Widths are uniform in Hz over [bw_min, bw_max], clipped to the placement
    window; positions are uniform over the room left for each width. A draw
    with overlapping bands is rejected; after 100 rejections the band count
    drops by one.
    """
    f_lo, f_hi = spec.window(rate_hz)
    span = f_hi - f_lo
    bw_hi = min(spec.bw_max_hz, span)
    rng = np.random.default_rng(seed)
    k = int(rng.integers(spec.count_min, spec.count_max + 1))
    while k > 1:
        for _ in range(MAX_PLACEMENT_RETRIES):
            bands = _draw_bands(rng, k, spec.bw_min_hz, bw_hi, f_lo, f_hi)
            if all(a.hi_hz <= b.lo_hz for a, b in zip(bands, bands[1:])):
                return bands
        k -= 1
    return _draw_bands(rng, 1, spec.bw_min_hz, bw_hi, f_lo, f_hi)


def _draw_bands(rng, k, bw_lo, bw_hi, f_lo, f_hi) -> list[MaskBand]:
    widths = rng.uniform(bw_lo, bw_hi, size=k)
    starts = f_lo + rng.uniform(0.0, 1.0, size=k) * (f_hi - f_lo - widths)
    return sorted((MaskBand(float(s), float(s + w)) for s, w in zip(starts, widths)), key=lambda b: b.lo_hz)


def apply_frequency_mask(w: Waveform, bands: list[MaskBand]) -> Waveform:
    """Zero the STFT bins of each band (plus a 3-bin guard) and resynthesize.

    Hann window of 1024 samples, hop 256, weighted overlap-add; output length
    equals input length.
    """
    nyq = w.rate_hz / 2.0
    for b in bands:
        if not 0 <= b.lo_hz < b.hi_hz <= nyq:
            raise AugmentError(f"band [{b.lo_hz}, {b.hi_hz}] Hz outside [0, {nyq}] Hz")
    x = np.asarray(w.samples, dtype=np.float64)
    if not bands or len(x) == 0:
        return Waveform(x.copy(), w.rate_hz)
    spec = dsp.stft(x, FM_N_FFT, FM_HOP)
    freqs = np.fft.rfftfreq(FM_N_FFT, 1.0 / w.rate_hz)
    guard = FM_GUARD_BINS * w.rate_hz / FM_N_FFT
    for b in bands:
        spec[:, (freqs >= b.lo_hz - guard) & (freqs <= b.hi_hz + guard)] = 0.0
    return Waveform(dsp.istft(spec, len(x), FM_N_FFT, FM_HOP), w.rate_hz)


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary printable parts (order-sensitive)."""
    h = hashlib.blake2b("\x1f".join(map(str, parts)).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little") >> 1


@dataclass
class AugmentedSegment:
    segment: Segment
    source_recording_id: str
    pass_index: int
    recording_seed: int
    bands: list[MaskBand]


def iter_sr_fm_copies(recording_segments: Iterable[Segment], k: int, seed,
                      sr_spec: SegmentRemovalSpec = SegmentRemovalSpec(),
                      fm_spec: FreqMaskSpec = FreqMaskSpec(),
                      seg_len_s: float = SEGMENT_SECONDS,
                      passes: Iterable[int] | None = None) -> Iterator[AugmentedSegment]:
    """Lazily yield SR-FM outputs for ``k`` passes over the given segments.

    Segments are grouped by recording. Per pass and recording: SR on every
    segment, concatenate the retained audio in segment order, re-cut into full
    windows (the remainder is dropped), then FM each window with fresh bands.
    Seeds depend only on (seed, recording_id, pass, index), so the output does
    not depend on the order recordings are processed in.
    """
    by_rec: dict[str, list[Segment]] = {}
    for s in recording_segments:
        by_rec.setdefault(s.recording_id, []).append(s)
    pass_ids = range(k) if passes is None else passes
    for p in pass_ids:
        for rid in sorted(by_rec):
            segs = sorted(by_rec[rid], key=lambda s: s.segment_index)
            rec_seed = derive_seed(seed, rid, p)
            pieces = []
            for s in segs:
                plan = plan_segment_removal(s.waveform.duration_s, sr_spec, derive_seed(rec_seed, "sr", s.segment_index),
                                            rate_hz=s.waveform.rate_hz)
                pieces.append(apply_segment_removal(s.waveform, plan).samples)
            rate = segs[0].waveform.rate_hz
            src_prov = segs[0].provenance
            prov = Provenance.CONVERTED_SRFM if src_prov == Provenance.CONVERTED else Provenance.SRFM
            joined = Waveform(np.concatenate(pieces), rate)
            for win in segment_recording(joined, seg_len_s, rid, prov):
                bands = sample_mask_bands(fm_spec, derive_seed(rec_seed, "fm", win.segment_index), rate)
                win.waveform = apply_frequency_mask(win.waveform, bands)
                win.segment_id = srfm_segment_id(rid, p, win.segment_index)
                yield AugmentedSegment(win, rid, p, rec_seed, bands)


def generate_sr_fm_copies(recording_segments: list[Segment], k: int, seed, **kwargs) -> list[Segment]:
    return [a.segment for a in iter_sr_fm_copies(recording_segments, k, seed, **kwargs)]


def srfm_segment_id(recording_id: str, pass_index: int, index: int) -> str:
    return f"{recording_id}__srfm{pass_index}__{index:04d}"


def srfm_window_count(n_segments: int, sr_spec: SegmentRemovalSpec = SegmentRemovalSpec(),
                      seg_len_s: float = SEGMENT_SECONDS, rate_hz: int = 16000) -> int:
    """Windows one SR-FM pass yields from a recording of ``n_segments`` full segments."""
    seg = int(round(seg_len_s * rate_hz))
    kept = seg - sr_spec.chunk_count(seg_len_s) * int(round(sr_spec.chunk_s * rate_hz))
    return (n_segments * kept) // seg


SIDECAR_FIELDS = ["segment_id", "recording_id", "pass_index", "window_index", "recording_seed", "provenance", "bands_hz"]


def write_augmented(items: Iterable[AugmentedSegment], out_dir, sidecar_name: str = "augmented.csv") -> int:
    """Write WAVs named ``<recording_id>__srfm<pass>__<index>.wav`` plus a sidecar CSV.

    The recording seed in the sidecar regenerates both the removal plans and the
    mask bands. Returns the number of segments written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(out_dir / sidecar_name, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SIDECAR_FIELDS)
        for a in items:
            s = a.segment
            write_wav(out_dir / f"{s.segment_id}.wav", s.waveform)
            bands = ";".join(f"{b.lo_hz:.3f}-{b.hi_hz:.3f}" for b in a.bands)
            w.writerow([s.segment_id, a.source_recording_id, a.pass_index, s.segment_index,
                        a.recording_seed, s.provenance.value, bands])
            n += 1
    return n
