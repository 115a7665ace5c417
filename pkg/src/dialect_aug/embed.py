"""Segment embeddings: external tables and a built-in log-mel statistics extractor."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import dsp
from .corpus import TARGET_RATE, Segment, Waveform

BINARY_MAGIC = b"EMBT"
BINARY_VERSION = 1

N_MELS = 64
MEL_WIN_S = 0.025
MEL_HOP_S = 0.010
MEL_N_FFT = 512
LOG_FLOOR = 1e-10
BUILTIN_DIM = 2 * N_MELS


class EmbeddingError(ValueError):
    pass


@dataclass
class EmbeddingTable:
    dim: int
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def add(self, key: str, vec) -> None:
        v = np.asarray(vec, dtype=np.float64)
        if v.shape != (self.dim,):
            raise EmbeddingError(f"{key}: vector length {v.size} != dim {self.dim}")
        if not np.all(np.isfinite(v)):
            raise EmbeddingError(f"{key}: non-finite value")
        if key in self.entries:
            raise EmbeddingError(f"duplicate segment_id {key!r}")
        self.entries[key] = v

    def matrix(self, keys) -> np.ndarray:
        missing = [k for k in keys if k not in self.entries]
        if missing:
            raise EmbeddingError(f"{len(missing)} segment(s) have no embedding, e.g. {missing[0]!r}")
        if not keys:
            return np.zeros((0, self.dim))
        return np.stack([self.entries[k] for k in keys])


def load_embedding_table(path) -> EmbeddingTable:
    """Read the CSV (``#dim=D`` header line) or the binary table form.

    The binary form is detected by its magic bytes.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == BINARY_MAGIC:
        return _load_binary(path)
    return _load_csv(path)


def _load_csv(path: Path) -> EmbeddingTable:
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline().strip()
        if not first.startswith("#dim="):
            raise EmbeddingError(f"{path}: line 1 must be '#dim=<D>', got {first[:40]!r}")
        try:
            dim = int(first[5:])
        except ValueError:
            raise EmbeddingError(f"{path}: bad dim header {first!r}") from None
        if dim <= 0:
            raise EmbeddingError(f"{path}: dim must be positive, got {dim}")
        table = EmbeddingTable(dim)
        for row_no, row in enumerate(csv.reader(fh), start=2):
            if not row:
                continue
            if len(row) != dim + 1:
                raise EmbeddingError(f"{path}: row {row_no} has {len(row) - 1} values, expected {dim}")
            try:
                vals = [float(t) for t in row[1:]]
            except ValueError as exc:
                raise EmbeddingError(f"{path}: row {row_no}: {exc}") from None
            try:
                table.add(row[0], vals)
            except EmbeddingError as exc:
                raise EmbeddingError(f"{path}: row {row_no}: {exc}") from None
    return table


def _load_binary(path: Path) -> EmbeddingTable:
    data = path.read_bytes()
    try:
        magic, version, dim, count = struct.unpack_from("<4sIII", data, 0)
        if version != BINARY_VERSION:
            raise EmbeddingError(f"{path}: unsupported binary version {version}")
        table = EmbeddingTable(dim)
        off = 16
        for i in range(count):
            (klen,) = struct.unpack_from("<I", data, off)
            off += 4
            key = data[off:off + klen].decode("utf-8")
            off += klen
            if off + 4 * dim > len(data):
                raise EmbeddingError(f"{path}: truncated binary table at entry {i}")
            vec = np.frombuffer(data, dtype="<f4", count=dim, offset=off)
            off += 4 * dim
            try:
                table.add(key, vec)
            except EmbeddingError as exc:
                raise EmbeddingError(f"{path}: entry {i}: {exc}") from None
    except struct.error as exc:
        raise EmbeddingError(f"{path}: truncated binary table ({exc})") from None
    if off != len(data):
        raise EmbeddingError(f"{path}: {len(data) - off} trailing bytes")
    return table


def write_embedding_table(table: EmbeddingTable, path, binary: bool = False) -> None:
    path = Path(path)
    keys = sorted(table.entries)
    if binary:
        parts = [struct.pack("<4sIII", BINARY_MAGIC, BINARY_VERSION, table.dim, len(keys))]
        for k in keys:
            kb = k.encode("utf-8")
            parts.append(struct.pack("<I", len(kb)) + kb + table.entries[k].astype("<f4").tobytes())
        path.write_bytes(b"".join(parts))
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"#dim={table.dim}\n")
        w = csv.writer(fh, lineterminator="\n")
        for k in keys:
            w.writerow([k] + [repr(float(v)) for v in table.entries[k]])


@lru_cache(maxsize=4)
def _mel_weights(rate: int) -> np.ndarray:
    return dsp.mel_filterbank(N_MELS, MEL_N_FFT, rate)


def log_mel(w: Waveform) -> np.ndarray:
    """(frames, 64) log mel energies, 25 ms Hann window, 10 ms hop.

    Frames are taken on a circular grid (one per hop, the last ones wrapping
    to the start), so circularly shifting the input by whole hops only
    permutes the frames.
    """
    x = np.asarray(w.samples, dtype=np.float64)
    n_win = int(round(MEL_WIN_S * w.rate_hz))
    hop = int(round(MEL_HOP_S * w.rate_hz))
    n_frames = len(x) // hop
    if len(x) < n_win or n_frames == 0:
        return np.zeros((0, N_MELS))
    xp = np.concatenate([x, x[:n_win]])
    frames = dsp.frame_signal(xp, n_win, hop)[:n_frames]
    power = np.abs(np.fft.rfft(frames * dsp.hann(n_win), MEL_N_FFT, axis=1)) ** 2
    return np.log(np.maximum(power @ _mel_weights(w.rate_hz).T, LOG_FLOOR))


def compute_builtin_embedding(seg: Segment | Waveform) -> np.ndarray:
    """128-dim vector: per-band mean then per-band std of the log-mel frames."""
    w = seg.waveform if isinstance(seg, Segment) else seg
    if w.rate_hz != TARGET_RATE or w.channels != 1:
        raise EmbeddingError(f"expected mono {TARGET_RATE} Hz, got {w.channels}ch {w.rate_hz} Hz")
    feats = log_mel(w)
    if len(feats) == 0:
        return np.concatenate([np.full(N_MELS, math.log(LOG_FLOOR)), np.zeros(N_MELS)])
    # statistics of the offsets from frame 0: constant bands give exactly zero std
    dev = feats - feats[0]
    return np.concatenate([feats[0] + dev.mean(axis=0), dev.std(axis=0)])


def builtin_table(segments) -> EmbeddingTable:
    table = EmbeddingTable(BUILTIN_DIM)
    for s in segments:
        table.add(s.segment_id, compute_builtin_embedding(s))
    return table
