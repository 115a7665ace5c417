"""Boundary to externally produced voice-converted audio.

The converter itself is never run here: this module assigns target speakers,
reads conversion manifests, checks converted files against their originals,
and summarizes pitch stability.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .acoustics import extract_pitch
from .corpus import (MIN_SOURCE_RATE, TARGET_RATE, AgeGroup, CorpusError, DatasetManifest, Waveform,
                     normalize_audio, read_wav)

log = logging.getLogger(__name__)

DURATION_TOLERANCE_S = 0.1
PITCH_WARN_RATIO = 0.10
CONVERSION_FIELDS = ["recording_id", "converted_path", "target_speaker_id", "mode"]


class ConversionError(ValueError):
    pass


class ConversionConfigError(ConversionError):
    pass


class ConversionIOError(OSError):
    pass


class Mode(str, enum.Enum):
    RVC1 = "rvc1"
    RVC3 = "rvc3"


class Verdict(str, enum.Enum):
    PASS = "pass"
    WARN = "warn"
    FAIL = "fail"


@dataclass(frozen=True)
class TargetAssignment:
    mode: Mode
    mapping: dict[AgeGroup, str]


def assign_targets(manifest: DatasetManifest, mode, targets: dict[AgeGroup, str]) -> TargetAssignment:
    """Map each age group in the manifest to a target speaker.

    RVC-1 sends every group to the configured middle-aged target; RVC-3 needs
    a distinct target per age group present.
    """
    mode = Mode(mode)
    groups = sorted(manifest.age_groups, key=lambda g: list(AgeGroup).index(g))
    if mode is Mode.RVC1:
        if AgeGroup.MIDDLE not in targets:
            raise ConversionConfigError("rvc1 needs a middle-aged target speaker id")
        return TargetAssignment(mode, {g: targets[AgeGroup.MIDDLE] for g in groups})
    missing = [g.value for g in groups if g not in targets]
    if missing:
        raise ConversionConfigError(f"rvc3: no target speaker configured for age group(s) {', '.join(missing)}")
    mapping = {g: targets[g] for g in groups}
    if len(set(mapping.values())) != len(mapping):
        raise ConversionConfigError(f"rvc3 targets must be distinct per age group, got {mapping}")
    return TargetAssignment(mode, mapping)


@dataclass(frozen=True)
class ConversionPair:
    recording_id: str
    converted_path: str
    target_speaker_id: str
    mode: Mode


@dataclass
class ConversionManifest:
    pairs: list[ConversionPair]
    root: Path = Path(".")

    def path(self, pair: ConversionPair) -> Path:
        p = Path(pair.converted_path)
        return p if p.is_absolute() else self.root / p

    def modes(self) -> set[Mode]:
        return {p.mode for p in self.pairs}

    def for_mode(self, mode) -> list[ConversionPair]:
        mode = Mode(mode)
        return [p for p in self.pairs if p.mode is mode]


def load_conversion_manifest(path, dataset: DatasetManifest | None = None,
                             check_files: bool = True) -> ConversionManifest:
    """Read ``recording_id,converted_path,target_speaker_id,mode`` rows.

    With ``dataset`` given, every recording id must exist in it; rows for
    recordings the dataset filters dropped (thin dialects, other age groups)
    are skipped.
    """
    path = Path(path)
    pairs = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CONVERSION_FIELDS:
            raise ConversionError(f"{path}: expected header {','.join(CONVERSION_FIELDS)}")
        for row in reader:
            if not row:
                continue
            if len(row) != 4:
                raise ConversionError(f"{path}: line {reader.line_num}: expected 4 fields")
            rid, cpath, tid, mode = (c.strip() for c in row)
            try:
                mode = Mode(mode.lower())
            except ValueError:
                raise ConversionError(f"{path}: line {reader.line_num}: unknown mode {mode!r}") from None
            if (rid, mode) in seen:
                raise ConversionError(f"{path}: duplicate converted file for ({rid}, {mode.value})")
            seen.add((rid, mode))
            pairs.append(ConversionPair(rid, cpath, tid, mode))
    cm = ConversionManifest(pairs, path.parent)
    if dataset is not None:
        known = {r.recording_id for r in dataset.recordings}
        unknown = [p.recording_id for p in pairs
                   if p.recording_id not in known and p.recording_id not in dataset.dropped_ids]
        if unknown:
            raise ConversionError(f"{path}: {len(unknown)} recording id(s) not in the dataset manifest, "
                                  f"e.g. {unknown[0]!r}")
        cm.pairs = [p for p in pairs if p.recording_id in known]
    if check_files:
        absent = [str(cm.path(p)) for p in cm.pairs if not cm.path(p).exists()]
        if absent:
            raise ConversionIOError(f"{len(absent)} converted file(s) missing, e.g. {absent[0]}")
    return cm


def check_coverage(cm: ConversionManifest, dataset: DatasetManifest, mode) -> None:
    """Reject a conversion condition unless every dataset recording has its converted file."""
    mode = Mode(mode)
    have = {p.recording_id for p in cm.for_mode(mode)}
    missing = [r.recording_id for r in dataset.recordings if r.recording_id not in have]
    if missing:
        raise ConversionError(f"{mode.value}: {len(missing)} recording(s) lack a converted file, e.g. {missing[0]}")


@dataclass
class PairReport:
    rate_ok: bool
    channels_ok: bool
    duration_drift_s: float
    mean_pitch_orig_hz: float
    mean_pitch_conv_hz: float
    verdict: Verdict

    @property
    def pitch_delta_hz(self) -> float:
        return self.mean_pitch_conv_hz - self.mean_pitch_orig_hz


def _mean_pitch(w: Waveform) -> float:
    if w.rate_hz < MIN_SOURCE_RATE:
        return math.nan
    return extract_pitch(normalize_audio(w)).mean_voiced()


def validate_converted_pair(orig: Waveform, conv: Waveform, tolerance_s: float = DURATION_TOLERANCE_S,
                            pitch_warn_ratio: float = PITCH_WARN_RATIO) -> PairReport:
    """Check a converted file against its original.

    Fail on a rate other than 16 kHz, more than one channel, or a duration drift
    above ``tolerance_s``. Otherwise Warn when the mean voiced pitch moves by
    more than ``pitch_warn_ratio`` of the original's (or cannot be measured in
    one file but can in the other), else Pass.
    """
    rate_ok = orig.rate_hz == TARGET_RATE and conv.rate_hz == TARGET_RATE
    channels_ok = orig.channels == 1 and conv.channels == 1
    drift = conv.duration_s - orig.duration_s
    p_orig = _mean_pitch(orig)
    p_conv = _mean_pitch(conv)
    if not (rate_ok and channels_ok) or abs(drift) > tolerance_s:
        verdict = Verdict.FAIL
    elif math.isnan(p_orig) != math.isnan(p_conv):
        verdict = Verdict.WARN
    elif not math.isnan(p_orig) and abs(p_conv - p_orig) > pitch_warn_ratio * p_orig:
        verdict = Verdict.WARN
    else:
        verdict = Verdict.PASS
    return PairReport(rate_ok, channels_ok, drift, p_orig, p_conv, verdict)


def _read(path) -> Waveform:
    try:
        return read_wav(path)
    except (OSError, ValueError, CorpusError) as exc:
        raise ConversionIOError(f"cannot decode {path}: {exc}") from exc


def validate_pair_files(orig_path, conv_path, **kwargs) -> PairReport:
    return validate_converted_pair(_read(orig_path), _read(conv_path), **kwargs)


@dataclass
class PitchStability:
    n_pairs: int
    mean_orig: float
    std_orig: float
    mean_conv: float
    std_conv: float
    mean_abs_delta: float
    n_excluded: int = 0

    def format(self) -> str:
        return (f"{self.mean_orig:.2f} ± {self.std_orig:.2f} Hz to "
                f"{self.mean_conv:.2f} ± {self.std_conv:.2f} Hz")


def pitch_stability_report(pairs: Sequence[tuple[Waveform, Waveform]]) -> PitchStability:
    """Mean and std (across files) of per-file mean voiced pitch, before and after.

    A pair where either file has no voiced frame is excluded with a warning.
    """
    if not pairs:
        raise ConversionError("pitch_stability_report needs at least one pair")
    po, pc = [], []
    excluded = 0
    for i, (o, c) in enumerate(pairs):
        a, b = _mean_pitch(o), _mean_pitch(c)
        if math.isnan(a) or math.isnan(b):
            log.warning("pair %d: no voiced frames, excluded", i)
            excluded += 1
            continue
        po.append(a)
        pc.append(b)
    if not po:
        raise ConversionError("every pair was excluded (no voiced frames)")
    po, pc = np.array(po), np.array(pc)
    return PitchStability(len(po), float(po.mean()), float(po.std()), float(pc.mean()), float(pc.std()),
                          float(np.mean(np.abs(pc - po))), excluded)
