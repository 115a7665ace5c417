"""Manifest ingestion, audio I/O, normalization and fixed-length segmentation."""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

log = logging.getLogger(__name__)

TARGET_RATE = 16000
MIN_SOURCE_RATE = 8000
SEGMENT_SECONDS = 10.0
MIN_SPEAKERS_PER_DIALECT = 3
MANIFEST_FIELDS = ["recording_id", "speaker_id", "dialect", "age_group", "path", "duration_s"]


class CorpusError(ValueError):
    pass


class ManifestFormatError(CorpusError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ManifestValidationError(CorpusError):
    pass


class UnsupportedRateError(CorpusError):
    pass


class AgeGroup(str, enum.Enum):
    YOUNG = "young"
    MIDDLE = "middle"
    OLD = "old"

    @property
    def label(self) -> str:
        return self.value.capitalize()


class Provenance(str, enum.Enum):
    ORIGINAL = "original"
    CONVERTED = "converted"
    SRFM = "srfm"
    CONVERTED_SRFM = "converted_srfm"


@dataclass(frozen=True)
class RecordingMeta:
    recording_id: str
    speaker_id: str
    dialect: str
    age_group: AgeGroup
    path: str
    duration_s: float


@dataclass
class DatasetManifest:
    recordings: list[RecordingMeta]
    root: Path = field(default=Path("."), compare=False)
    # ids removed by the filtering rules, kept so downstream files can skip them knowingly
    dropped_ids: frozenset[str] = field(default=frozenset(), compare=False)

    @property
    def dialects(self) -> set[str]:
        return {r.dialect for r in self.recordings}

    @property
    def age_groups(self) -> set[AgeGroup]:
        return {r.age_group for r in self.recordings}

    def speakers_by_dialect(self) -> dict[str, list[str]]:
        out: dict[str, set[str]] = {}
        for r in self.recordings:
            out.setdefault(r.dialect, set()).add(r.speaker_id)
        return {d: sorted(s) for d, s in sorted(out.items())}

    def speaker_dialect(self) -> dict[str, str]:
        return {r.speaker_id: r.dialect for r in self.recordings}

    def by_id(self) -> dict[str, RecordingMeta]:
        return {r.recording_id: r for r in self.recordings}

    def audio_path(self, rec: RecordingMeta) -> Path:
        p = Path(rec.path)
        return p if p.is_absolute() else self.root / p

    def restrict(self, age_group: AgeGroup | None) -> "DatasetManifest":
        """Sub-manifest for one age group, re-applying the minimum-speaker rule."""
        if age_group is None:
            return self
        recs = [r for r in self.recordings if r.age_group == age_group]
        kept = _drop_thin_dialects(recs)
        dropped = {r.recording_id for r in self.recordings} - {r.recording_id for r in kept}
        return DatasetManifest(kept, root=self.root, dropped_ids=self.dropped_ids | dropped)


@dataclass
class Waveform:
    samples: np.ndarray  # (n,) mono or (n, channels)
    rate_hz: int

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.rate_hz


@dataclass
class Segment:
    waveform: Waveform
    recording_id: str
    segment_index: int
    start_s: float
    provenance: Provenance = Provenance.ORIGINAL
    segment_id: str = ""

    def __post_init__(self):
        if not self.segment_id:
            self.segment_id = f"{self.recording_id}__{self.segment_index:04d}"


# --- manifest -----------------------------------------------------------------

def _drop_thin_dialects(recs: list[RecordingMeta]) -> list[RecordingMeta]:
    speakers: dict[str, set[str]] = {}
    for r in recs:
        speakers.setdefault(r.dialect, set()).add(r.speaker_id)
    thin = {d for d, s in speakers.items() if len(s) < MIN_SPEAKERS_PER_DIALECT}
    for d in sorted(thin):
        log.warning("dropping dialect %r: %d speaker(s), need at least %d",
                    d, len(speakers[d]), MIN_SPEAKERS_PER_DIALECT)
    return [r for r in recs if r.dialect not in thin]


def load_manifest(path) -> DatasetManifest:
    """Parse a manifest CSV and apply the corpus filtering rules.

    Dialects with fewer than three distinct speakers are dropped with a warning.
    Raises ManifestFormatError (with the 1-based line number) on malformed rows
    and ManifestValidationError on duplicate ids, speakers shared across
    dialects, or a manifest with no recordings.
    """
    path = Path(path)
    recs: list[RecordingMeta] = []
    seen: set[str] = set()
    speaker_home: dict[str, tuple[str, AgeGroup]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ManifestValidationError(f"{path}: empty manifest, zero recordings")
        if [h.strip() for h in header] != MANIFEST_FIELDS:
            raise ManifestFormatError(f"expected header {','.join(MANIFEST_FIELDS)}", line=1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(MANIFEST_FIELDS):
                raise ManifestFormatError(f"expected {len(MANIFEST_FIELDS)} fields, got {len(row)}", line)
            rid, spk, dialect, age, p, dur = (c.strip() for c in row)
            if not rid or not spk or not dialect:
                raise ManifestFormatError("empty recording_id, speaker_id or dialect", line)
            try:
                age_group = AgeGroup(age.lower())
            except ValueError:
                raise ManifestFormatError(f"unknown age_group {age!r}", line) from None
            try:
                duration = float(dur)
            except ValueError:
                raise ManifestFormatError(f"duration_s {dur!r} is not a number", line) from None
            if not math.isfinite(duration) or duration < 0:
                raise ManifestFormatError(f"duration_s must be finite and >= 0, got {dur}", line)
            if rid in seen:
                raise ManifestValidationError(f"duplicate recording_id {rid!r} (line {line})")
            seen.add(rid)
            home = speaker_home.setdefault(spk, (dialect, age_group))
            if home != (dialect, age_group):
                raise ManifestValidationError(
                    f"speaker {spk!r} appears under both {home[0]}/{home[1].value} and "
                    f"{dialect}/{age_group.value} (line {line})")
            recs.append(RecordingMeta(rid, spk, dialect, age_group, p, duration))
    if not recs:
        raise ManifestValidationError(f"{path}: empty manifest, zero recordings")
    kept = _drop_thin_dialects(recs)
    if not kept:
        raise ManifestValidationError(
            f"{path}: no dialect has at least {MIN_SPEAKERS_PER_DIALECT} speakers, zero recordings left")
    dropped = frozenset(r.recording_id for r in recs) - {r.recording_id for r in kept}
    return DatasetManifest(kept, root=path.parent, dropped_ids=dropped)


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for r in manifest.recordings:
            w.writerow([r.recording_id, r.speaker_id, r.dialect, r.age_group.value, r.path, repr(r.duration_s)])


@dataclass
class SummaryRow:
    age_group: str
    n_speakers: int
    total_seconds: float
    n_samples: int
    n_speakers_val_test: int


def split_speaker_count(n_speakers: int) -> int:
    """Speakers drawn for each of validation and test from one dialect."""
    return math.ceil(n_speakers / 10)


def summarize_manifest(manifest: DatasetManifest, seg_len_s: float = SEGMENT_SECONDS) -> list[SummaryRow]:
    """Dataset overview rows per age group plus an ``All`` row.

    ``n_samples`` counts the full-length windows each recording yields and
    ``n_speakers_val_test`` is the number of speakers that go to each of the
    validation and test partitions (sum over dialects of ceil(S_d / 10)).
    """
    rows = []
    groups = [g for g in AgeGroup if g in manifest.age_groups]
    for label, sub in [(g.label, manifest.restrict(g)) for g in groups] + [("All", manifest)]:
        recs = sub.recordings
        rows.append(SummaryRow(
            age_group=label,
            n_speakers=len({r.speaker_id for r in recs}),
            total_seconds=round(sum(r.duration_s for r in recs), 2),
            n_samples=sum(_window_count(r.duration_s, seg_len_s) for r in recs),
            n_speakers_val_test=sum(split_speaker_count(len(s)) for s in sub.speakers_by_dialect().values()),
        ))
    return rows


def format_summary(rows: list[SummaryRow]) -> str:
    head = f"{'Age group':<10} {'# Speakers':>10} {'Total Seconds':>14} {'# Samples':>10} {'# Speakers (Val/Test)':>22}"
    lines = [head]
    for r in rows:
        lines.append(f"{r.age_group:<10} {r.n_speakers:>10d} {r.total_seconds:>14.2f} {r.n_samples:>10d} {r.n_speakers_val_test:>22d}")
    return "\n".join(lines)


def _window_count(duration_s: float, seg_len_s: float) -> int:
    # tolerate float noise in durations written as exact multiples
    return int(math.floor(duration_s / seg_len_s + 1e-9))


# --- audio --------------------------------------------------------------------

def read_wav(path) -> Waveform:
    """Read 16/24/32-bit PCM or float-32 WAV into float samples in [-1, 1]."""
    rate, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        # scipy returns 24-bit PCM left-aligned in int32
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        x = data.astype(np.float64)
    else:
        raise CorpusError(f"{path}: unsupported WAV sample type {data.dtype}")
    return Waveform(x, int(rate))


def write_wav(path, w: Waveform) -> None:
    """Write 16-bit PCM mono 16 kHz; the input must already be normalized."""
    if w.rate_hz != TARGET_RATE or w.channels != 1:
        raise CorpusError(f"write_wav expects mono {TARGET_RATE} Hz, got {w.channels}ch {w.rate_hz} Hz")
    pcm = np.clip(np.round(np.asarray(w.samples) * 32768.0), -32768, 32767).astype(np.int16)
    wavfile.write(str(path), TARGET_RATE, pcm)


def normalize_audio(w: Waveform) -> Waveform:
    """Convert to mono 16 kHz with samples clamped to [-1, 1].

    Stereo is averaged. Resampling is polyphase windowed-sinc (Kaiser, beta 8.6,
    roughly 86 dB stop-band). Rates below 8 kHz are rejected.
    """
    if w.rate_hz < MIN_SOURCE_RATE:
        raise UnsupportedRateError(f"sample rate {w.rate_hz} Hz below minimum {MIN_SOURCE_RATE} Hz")
    if w.channels not in (1, 2):
        raise CorpusError(f"expected 1 or 2 channels, got {w.channels}")
    x = np.asarray(w.samples, dtype=np.float64)
    if x.ndim == 2:
        x = x.mean(axis=1)
    if w.rate_hz != TARGET_RATE:
        g = math.gcd(TARGET_RATE, w.rate_hz)
        x = resample_poly(x, TARGET_RATE // g, w.rate_hz // g, window=("kaiser", 8.6))
    return Waveform(np.clip(x, -1.0, 1.0), TARGET_RATE)


def load_recording(manifest: DatasetManifest, rec: RecordingMeta) -> Waveform:
    return normalize_audio(read_wav(manifest.audio_path(rec)))


def check_duration(rec: RecordingMeta, w: Waveform) -> bool:
    """True when the manifest duration agrees with the audio within one sample period."""
    return abs(rec.duration_s - w.duration_s) <= 1.0 / w.rate_hz


def segment_recording(w: Waveform, seg_len_s: float = SEGMENT_SECONDS, recording_id: str = "",
                      provenance: Provenance = Provenance.ORIGINAL) -> list[Segment]:
    """Cut consecutive non-overlapping windows; a short trailing remainder is dropped."""
    n = int(round(seg_len_s * w.rate_hz))
    x = np.asarray(w.samples)
    out = []
    for i in range(len(x) // n):
        out.append(Segment(Waveform(x[i * n:(i + 1) * n], w.rate_hz), recording_id, i, i * n / w.rate_hz, provenance))
    return out


def filter_min_duration(ws: list[Waveform], min_s: float = 1.0) -> list[Waveform]:
    return [w for w in ws if w.duration_s >= min_s]
