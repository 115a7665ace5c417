"""Synthetic dialect corpora for desk-scale runs and tests.

Each dialect fixes a spectral tilt. Each speaker adds a nuisance filter (two
random resonances) and a pitch offset. A simulated conversion keeps the
source excitation (pitch contour and timing) and the dialect tilt, and swaps
the speaker's resonances for those of a target speaker.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .augment import derive_seed
from .corpus import AgeGroup, DatasetManifest, RecordingMeta, Waveform, write_manifest, write_wav

RATE = 16000
AGE_CYCLE = (AgeGroup.YOUNG, AgeGroup.MIDDLE, AgeGroup.OLD)


@dataclass(frozen=True)
class VoiceProfile:
    f0_hz: float
    resonances: tuple[tuple[float, float, float], ...]  # (freq, bandwidth, gain)


def dialect_tilts(n_dialects: int, spread: float = 0.7) -> list[float]:
    """One-pole tilt coefficients: positive darkens the spectrum, negative brightens it."""
    if n_dialects == 1:
        return [0.0]
    return list(np.linspace(spread, -spread, n_dialects))


def random_voice(rng: np.random.Generator, base_f0: float = 118.0) -> VoiceProfile:
    f0 = float(base_f0 * np.exp(rng.normal(0.0, 0.12)))
    res = tuple((float(rng.uniform(300, 3500)), float(rng.uniform(80, 250)), float(rng.uniform(0.5, 1.5)))
                for _ in range(2))
    return VoiceProfile(f0, res)


def _resonator(x, freq, bw, rate=RATE):
    r = np.exp(-np.pi * bw / rate)
    th = 2 * np.pi * freq / rate
    return lfilter([1.0 - r], [1.0, -2.0 * r * np.cos(th), r * r], x)


def excitation(rng: np.random.Generator, f0_hz: float, duration_s: float) -> np.ndarray:
    """Glottal-like pulse train with slow pitch drift, syllabic envelope and breath noise."""
    n = int(round(duration_s * RATE))
    t = np.arange(n) / RATE
    drift = 1.0 + 0.05 * np.sin(2 * np.pi * rng.uniform(0.2, 0.5) * t + rng.uniform(0, 2 * np.pi))
    phase = np.cumsum(f0_hz * drift / RATE)
    pulses = np.diff(np.floor(phase), prepend=0.0)
    src = lfilter([1.0], [1.0, -0.95], pulses)
    src = src + 0.05 * rng.standard_normal(n)
    env = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(3.0, 5.0) * t + rng.uniform(0, 2 * np.pi))
    return src * env


def render(src: np.ndarray, tilt: float, voice: VoiceProfile) -> np.ndarray:
    y = lfilter([1.0], [1.0, -tilt], src)
    colored = sum(g * _resonator(y, f, b) for f, b, g in voice.resonances)
    out = 0.5 * y + colored
    return 0.5 * out / (np.max(np.abs(out)) + 1e-12)


@dataclass
class SyntheticSpeaker:
    speaker_id: str
    dialect: str
    age_group: AgeGroup
    voice: VoiceProfile


@dataclass
class SyntheticCorpus:
    speakers: list[SyntheticSpeaker]
    tilts: dict[str, float]
    targets: dict[AgeGroup, VoiceProfile]
    seed: int
    recordings_per_speaker: int
    recording_s: float

    def recordings(self):
        """Yield (RecordingMeta, speaker, recording seed) in a fixed order."""
        for spk in self.speakers:
            for j in range(self.recordings_per_speaker):
                rid = f"{spk.speaker_id}_r{j:02d}"
                meta = RecordingMeta(rid, spk.speaker_id, spk.dialect, spk.age_group,
                                     f"audio/{rid}.wav", self.recording_s)
                yield meta, spk, derive_seed(self.seed, rid)

    def original(self, spk: SyntheticSpeaker, rec_seed: int) -> Waveform:
        rng = np.random.default_rng(rec_seed)
        src = excitation(rng, spk.voice.f0_hz, self.recording_s)
        return Waveform(render(src, self.tilts[spk.dialect], spk.voice), RATE)

    def converted(self, spk: SyntheticSpeaker, rec_seed: int, target: VoiceProfile) -> Waveform:
        # same excitation draw as the original: pitch and timing are preserved
        rng = np.random.default_rng(rec_seed)
        src = excitation(rng, spk.voice.f0_hz, self.recording_s)
        return Waveform(render(src, self.tilts[spk.dialect], target), RATE)

    def manifest(self) -> DatasetManifest:
        return DatasetManifest([m for m, _, _ in self.recordings()])

    def target_for(self, mode: str, age_group: AgeGroup) -> VoiceProfile:
        return self.targets[AgeGroup.MIDDLE] if mode == "rvc1" else self.targets[age_group]


def make_corpus(n_dialects: int = 2, speakers_per_dialect: int = 12, recordings_per_speaker: int = 10,
                recording_s: float = 20.0, seed: int = 0) -> SyntheticCorpus:
    rng = np.random.default_rng(seed)
    tilts = {f"D{d:02d}": t for d, t in enumerate(dialect_tilts(n_dialects))}
    speakers = []
    k = 0
    for dialect in tilts:
        for _ in range(speakers_per_dialect):
            speakers.append(SyntheticSpeaker(f"S{k:03d}", dialect, AGE_CYCLE[k % 3], random_voice(rng)))
            k += 1
    targets = {g: random_voice(rng) for g in AGE_CYCLE}
    return SyntheticCorpus(speakers, tilts, targets, seed, recordings_per_speaker, recording_s)


def write_corpus(corpus: SyntheticCorpus, out_dir, conversions=("rvc1", "rvc3")) -> Path:
    """Write WAVs, ``manifest.csv`` and one ``conversion_<mode>.csv`` per mode; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    conv_rows = {m: [] for m in conversions}
    for m in conversions:
        (out_dir / m).mkdir(exist_ok=True)
    for meta, spk, rs in corpus.recordings():
        write_wav(out_dir / meta.path, corpus.original(spk, rs))
        for mode in conversions:
            target = corpus.target_for(mode, spk.age_group)
            rel = f"{mode}/{meta.recording_id}.wav"
            write_wav(out_dir / rel, corpus.converted(spk, rs, target))
            tid = "T_middle" if mode == "rvc1" else f"T_{spk.age_group.value}"
            conv_rows[mode].append([meta.recording_id, rel, tid, mode])
    path = out_dir / "manifest.csv"
    write_manifest(corpus.manifest(), path)
    for mode, rows in conv_rows.items():
        with open(out_dir / f"conversion_{mode}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["recording_id", "converted_path", "target_speaker_id", "mode"])
            w.writerows(rows)
    return path
