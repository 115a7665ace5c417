"""Pitch and formant tracking, paired original/converted summaries, 2-D embedding projections."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import resample_poly
from scipy.signal.windows import gaussian

from .corpus import TARGET_RATE, Waveform
from .dsp import frame_signal

log = logging.getLogger(__name__)

PITCH_WINDOW_S = 0.040
PITCH_HOP_S = 0.010
YIN_THRESHOLD = 0.2

FORMANT_RATE = 10000
FORMANT_WINDOW_S = 0.025
FORMANT_HOP_S = 0.010
LPC_ORDER = 12
PRE_EMPHASIS = 0.97
MAX_FORMANT_BANDWIDTH = 400.0
MIN_FORMANT_HZ = 90.0


class AnalysisError(ValueError):
    pass


@dataclass
class PitchContour:
    frame_times_s: np.ndarray
    f0_hz: np.ndarray  # nan where unvoiced
    voiced: np.ndarray

    def mean_voiced(self) -> float:
        return float(np.mean(self.f0_hz[self.voiced])) if self.voiced.any() else math.nan


@dataclass
class FormantTrack:
    frame_times_s: np.ndarray
    formants_hz: np.ndarray  # (frames, 3), nan rows where confidence is 0
    confidence: np.ndarray

    @property
    def f1_hz(self):
        return self.formants_hz[:, 0]

    @property
    def f2_hz(self):
        return self.formants_hz[:, 1]

    @property
    def f3_hz(self):
        return self.formants_hz[:, 2]

    def confident(self) -> np.ndarray:
        return self.formants_hz[self.confidence > 0]


def _require_16k_mono(w: Waveform):
    if w.rate_hz != TARGET_RATE or w.channels != 1:
        raise AnalysisError(f"expected mono {TARGET_RATE} Hz input, got {w.channels}ch {w.rate_hz} Hz")


# --- pitch --------------------------------------------------------------------

def _cmnd(frames: np.ndarray, window: int, tau_max: int) -> np.ndarray:
    """Cumulative mean normalized difference for each frame, lags 0..tau_max."""
    n_fft = 1 << int(math.ceil(math.log2(window + tau_max + window)))
    spec = np.fft.rfft(frames, n_fft, axis=1)
    head = np.fft.rfft(frames[:, :window], n_fft, axis=1)
    # cross term sum_j x[j] x[j + tau] over the integration window
    cross = np.fft.irfft(np.conj(head) * spec, n_fft, axis=1)[:, :tau_max + 1]
    sq = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(frames ** 2, axis=1)], axis=1)
    energy0 = sq[:, window][:, None]
    taus = np.arange(tau_max + 1)
    energy_tau = sq[:, taus + window] - sq[:, taus]
    diff = np.maximum(energy0 + energy_tau - 2.0 * cross, 0.0)
    csum = np.cumsum(diff[:, 1:], axis=1)
    out = np.ones_like(diff)
    with np.errstate(invalid="ignore", divide="ignore"):
        out[:, 1:] = diff[:, 1:] * taus[1:] / csum
    out[~np.isfinite(out)] = 1.0
    return out


def extract_pitch(w: Waveform, fmin: float = 60.0, fmax: float = 400.0,
                  threshold: float = YIN_THRESHOLD) -> PitchContour:
    """YIN-style F0 track: 40 ms integration window, 10 ms hop.

    A frame is voiced when the normalized difference dips below ``threshold``
    at a lag inside [rate/fmax, rate/fmin]; the first such dip is followed to
    its local minimum and refined by parabolic interpolation.
    """
    _require_16k_mono(w)
    rate = w.rate_hz
    window = int(round(PITCH_WINDOW_S * rate))
    hop = int(round(PITCH_HOP_S * rate))
    tau_min = max(2, int(math.floor(rate / fmax)))
    tau_max = int(math.ceil(rate / fmin))
    x = np.asarray(w.samples, dtype=np.float64)
    frames = frame_signal(np.ascontiguousarray(x), window + tau_max + 1, hop)
    n = frames.shape[0]
    times = (np.arange(n) * hop + window / 2.0) / rate
    f0 = np.full(n, np.nan)
    voiced = np.zeros(n, dtype=bool)
    if n == 0:
        return PitchContour(times, f0, voiced)
    d = _cmnd(frames, window, tau_max)
    for i in range(n):
        row = d[i]
        below = np.flatnonzero(row[tau_min:tau_max] < threshold)
        if below.size == 0:
            continue
        t = tau_min + below[0]
        while t + 1 < tau_max and row[t + 1] < row[t]:
            t += 1
        a, b, c = row[t - 1], row[t], row[t + 1]
        den = a - 2.0 * b + c
        shift = 0.5 * (a - c) / den if den > 0 else 0.0
        f = rate / (t + shift)
        if fmin <= f <= fmax:
            f0[i] = f
            voiced[i] = True
    return PitchContour(times, f0, voiced)


# --- formants -----------------------------------------------------------------

def levinson_durbin(r: np.ndarray, order: int) -> tuple[np.ndarray, float, bool]:
    """Solve the autocorrelation normal equations.

    Returns (a, error, stable) where a[0] = 1 and the prediction-error filter is
    A(z) = sum_k a[k] z^-k. ``stable`` is False if any reflection coefficient
    reaches magnitude 1 or the error power stops being positive.
    """
    a = np.zeros(order + 1)
    a[0] = 1.0
    err = float(r[0])
    if err <= 0:
        return a, 0.0, False
    for i in range(1, order + 1):
        k = -(r[i] + np.dot(a[1:i], r[i - 1:0:-1])) / err
        if not abs(k) < 1.0:
            return a, err, False
        a[1:i] = a[1:i] + k * a[i - 1:0:-1]
        a[i] = k
        err *= 1.0 - k * k
        if err <= 0:
            return a, err, False
    return a, err, True


def _frame_formants(frame: np.ndarray, rate: int, order: int) -> np.ndarray | None:
    r = np.correlate(frame, frame, mode="full")[len(frame) - 1:len(frame) + order]
    if r[0] <= 1e-12:
        return None
    a, _, stable = levinson_durbin(r, order)
    if not stable:
        return None
    roots = np.roots(a)
    roots = roots[np.imag(roots) > 0]
    if np.any(np.abs(roots) >= 1.0):
        return None
    freqs = np.angle(roots) * rate / (2 * np.pi)
    bws = -np.log(np.abs(roots)) * rate / np.pi
    keep = (bws < MAX_FORMANT_BANDWIDTH) & (freqs > MIN_FORMANT_HZ) & (freqs < rate / 2.0 - 50.0)
    f = np.sort(freqs[keep])
    if len(f) < 3 or not (f[0] < f[1] < f[2]):
        return None
    return f[:3]


def extract_formants(w: Waveform, order: int = LPC_ORDER) -> FormantTrack:
    """F1-F3 per frame from autocorrelation LPC.

    Pre-emphasis 0.97, resampling to 10 kHz, 25 ms Gaussian frames every 10 ms.
    Frames that are silent, yield an unstable predictor, or have fewer than
    three resonances narrower than 400 Hz get confidence 0.
    """
    _require_16k_mono(w)
    x = np.asarray(w.samples, dtype=np.float64)
    x = np.append(x[:1], x[1:] - PRE_EMPHASIS * x[:-1]) if len(x) else x
    g = math.gcd(FORMANT_RATE, w.rate_hz)
    y = resample_poly(x, FORMANT_RATE // g, w.rate_hz // g)
    n_win = int(round(FORMANT_WINDOW_S * FORMANT_RATE))
    hop = int(round(FORMANT_HOP_S * FORMANT_RATE))
    frames = frame_signal(np.ascontiguousarray(y), n_win, hop)
    win = gaussian(n_win, std=n_win / 6.0)
    n = frames.shape[0]
    out = np.full((n, 3), np.nan)
    conf = np.zeros(n)
    for i in range(n):
        f = _frame_formants(frames[i] * win, FORMANT_RATE, order)
        if f is not None:
            out[i] = f
            conf[i] = 1.0
    times = (np.arange(n) * hop + n_win / 2.0) / FORMANT_RATE
    return FormantTrack(times, out, conf)


# --- summaries ----------------------------------------------------------------

@dataclass
class SetStats:
    n_files: int
    mean_pitch: float
    std_pitch: float
    mean_formants: np.ndarray  # F1..F3
    std_formants: np.ndarray
    n_excluded: int = 0


@dataclass
class AnalysisSummary:
    a: SetStats
    b: SetStats

    @property
    def delta_pitch(self) -> float:
        return self.b.mean_pitch - self.a.mean_pitch

    @property
    def delta_formants(self) -> np.ndarray:
        return self.b.mean_formants - self.a.mean_formants

    @property
    def delta_std_formants(self) -> np.ndarray:
        return self.b.std_formants - self.a.std_formants

    def format(self) -> str:
        lines = [f"pitch: {self.a.mean_pitch:.2f} ± {self.a.std_pitch:.2f} Hz to "
                 f"{self.b.mean_pitch:.2f} ± {self.b.std_pitch:.2f} Hz"]
        for k in range(3):
            lines.append(f"F{k + 1}: {self.a.mean_formants[k]:.2f} Hz to {self.b.mean_formants[k]:.2f} Hz "
                         f"(std {self.a.std_formants[k]:.2f} to {self.b.std_formants[k]:.2f})")
        return "\n".join(lines)


def file_features(w: Waveform) -> tuple[float, np.ndarray]:
    """Mean voiced pitch and mean confident F1-F3 of one file (nan if none)."""
    pitch = extract_pitch(w).mean_voiced()
    track = extract_formants(w).confident()
    formants = track.mean(axis=0) if len(track) else np.full(3, np.nan)
    return pitch, formants


def _set_stats(ws: Sequence[Waveform], label: str) -> SetStats:
    pitches, formants = [], []
    excluded = 0
    for i, w in enumerate(ws):
        p, f = file_features(w)
        if math.isnan(p) or np.isnan(f).any():
            log.warning("set %s file %d: no voiced/confident frames, excluded", label, i)
            excluded += 1
            continue
        pitches.append(p)
        formants.append(f)
    if not pitches:
        raise AnalysisError(f"set {label}: every file was excluded")
    fm = np.array(formants)
    return SetStats(len(pitches), float(np.mean(pitches)), float(np.std(pitches)),
                    fm.mean(axis=0), fm.std(axis=0), excluded)


def summarize_pairs(set_a: Sequence[Waveform], set_b: Sequence[Waveform]) -> AnalysisSummary:
    """Set-level mean and std of per-file mean pitch and F1-F3.

    Standard deviations are across files (population form). Files with no
    voiced or confident frames are dropped from their set with a warning.
    """
    if not set_a or not set_b:
        raise AnalysisError("both sets must be nonempty")
    return AnalysisSummary(_set_stats(set_a, "a"), _set_stats(set_b, "b"))


# --- projections --------------------------------------------------------------

class ProjectionMethod(str, enum.Enum):
    PCA = "pca"
    TSNE = "tsne"


TSNE_MAX_POINTS = 5000


@dataclass
class Projection2D:
    segment_ids: list[str]
    coords: np.ndarray  # (n, 2)
    method: ProjectionMethod
    metadata: list[dict] = field(default_factory=list)
    directions: np.ndarray | None = None  # (2, dim) PCA axes


def pca_2d(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Coordinates on, and unit vectors of, the top two principal directions."""
    Xc = X - X.mean(axis=0)
    _, _, vt = np.linalg.svd(Xc, full_matrices=False)
    dirs = vt[:2]
    # fix the sign so results do not depend on the LAPACK build
    signs = np.sign(dirs[np.arange(2), np.argmax(np.abs(dirs), axis=1)])
    dirs = dirs * signs[:, None]
    return Xc @ dirs.T, dirs


def project_embeddings(table, method="pca", seed: int = 0, metadata: dict[str, dict] | None = None,
                       perplexity: float = 30.0, n_iter: int = 1000) -> Projection2D:
    """2-D projection of an embedding table.

    PCA uses the top two principal directions of the centered data. t-SNE is
    the exact O(n^2) variant, 1000 iterations, perplexity 30 (lowered to
    n - 1 for tiny inputs), seeded; capped at 5000 points.
    """
    method = ProjectionMethod(method)
    ids = sorted(table.entries)
    if len(ids) < 3:
        raise AnalysisError(f"need at least 3 embeddings, got {len(ids)}")
    X = np.stack([table.entries[i] for i in ids]).astype(np.float64)
    meta = [dict((metadata or {}).get(i, {})) for i in ids]
    if method is ProjectionMethod.PCA:
        coords, dirs = pca_2d(X)
        return Projection2D(ids, coords, method, meta, dirs)
    if len(ids) > TSNE_MAX_POINTS:
        raise AnalysisError(f"exact t-SNE is limited to {TSNE_MAX_POINTS} points, got {len(ids)}")
    from sklearn.manifold import TSNE

    tsne = TSNE(n_components=2, perplexity=min(perplexity, len(ids) - 1.0), method="exact",
                max_iter=n_iter, init="pca", random_state=seed)
    coords = tsne.fit_transform(X)
    return Projection2D(ids, np.asarray(coords, dtype=np.float64), method, meta)
