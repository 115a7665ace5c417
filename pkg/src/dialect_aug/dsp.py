"""Low-level DSP kernels shared by the augmentation, embedding and analysis code."""

import functools

import numpy as np


def hann(n: int) -> np.ndarray:
    # periodic Hann: satisfies constant overlap-add for hop = n/4
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_signal(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    """Strided view of ``x`` as (n_frames, frame_len); the ragged tail is dropped."""
    if len(x) < frame_len:
        return np.zeros((0, frame_len), dtype=x.dtype)
    n = 1 + (len(x) - frame_len) // hop
    return np.lib.stride_tricks.as_strided(
        x, shape=(n, frame_len), strides=(x.strides[0] * hop, x.strides[0]), writeable=False
    )


def stft(x: np.ndarray, n_fft: int = 1024, hop: int = 256) -> np.ndarray:
    """Centered Hann STFT, shape (frames, n_fft // 2 + 1).

    The signal is padded by ``n_fft // 2`` on the left and enough zeros on the
    right that every input sample is covered by a full set of overlapping frames.
    """
    x = np.asarray(x, dtype=np.float64)
    pad = n_fft // 2
    total = len(x) + 2 * pad
    extra = (-(total - n_fft)) % hop
    xp = np.pad(x, (pad, pad + extra))
    frames = frame_signal(xp, n_fft, hop)
    return np.fft.rfft(frames * hann(n_fft), axis=1)


def _overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    n_frames, n_fft = frames.shape
    out = np.zeros(n_fft + hop * (n_frames - 1))
    if n_fft % hop == 0:
        # frames r, r + q, r + 2q, ... tile the output without overlapping
        q = n_fft // hop
        for r in range(min(q, n_frames)):
            sub = frames[r::q]
            out[r * hop:r * hop + sub.size] += sub.ravel()
    else:
        for i in range(n_frames):
            out[i * hop:i * hop + n_fft] += frames[i]
    return out


@functools.lru_cache(maxsize=32)
def _inverse_norm(n_frames: int, n_fft: int, hop: int) -> np.ndarray:
    w2 = hann(n_fft) ** 2
    norm = _overlap_add(np.broadcast_to(w2, (n_frames, n_fft)), hop)
    inv = np.zeros_like(norm)
    np.divide(1.0, norm, out=inv, where=norm > 1e-12)
    inv.setflags(write=False)
    return inv


def istft(spec: np.ndarray, length: int, n_fft: int = 1024, hop: int = 256) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`, trimmed to ``length`` samples."""
    frames = np.fft.irfft(spec, n=n_fft, axis=1)
    frames *= hann(n_fft)
    out = _overlap_add(frames, hop) * _inverse_norm(frames.shape[0], n_fft, hop)
    pad = n_fft // 2
    return out[pad:pad + length]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, rate_hz: int, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-style mel filters with unit peak, shape (n_mels, n_fft // 2 + 1)."""
    fmax = rate_hz / 2.0 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.fft.rfftfreq(n_fft, 1.0 / rate_hz)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))
