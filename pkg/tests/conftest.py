import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dialect_aug.corpus import Waveform

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

RATE = 16000


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def noise(seconds, seed=0, rate=RATE):
    return Waveform(np.random.default_rng(seed).standard_normal(int(round(seconds * rate))) * 0.1, rate)


def tone(freq, seconds, rate=RATE, amp=0.5):
    t = np.arange(int(round(seconds * rate))) / rate
    return Waveform(amp * np.sin(2 * np.pi * freq * t), rate)


def sawtooth(freq, seconds, rate=RATE, amp=0.5):
    t = np.arange(int(round(seconds * rate))) / rate
    return Waveform(amp * (2 * ((freq * t) % 1.0) - 1), rate)


def write_manifest_rows(path, rows):
    lines = ["recording_id,speaker_id,dialect,age_group,path,duration_s"]
    lines += [",".join(map(str, r)) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def vowel(formants, f0=120.0, seconds=1.0, bandwidths=(60.0, 90.0, 120.0), rate=RATE):
    """Impulse train through a cascade of two-pole resonators (an all-pole vowel)."""
    from scipy.signal import lfilter

    n = int(round(seconds * rate))
    x = np.zeros(n)
    x[(np.arange(0, seconds, 1.0 / f0) * rate).astype(int)] = 1.0
    for f, bw in zip(formants, bandwidths):
        r = np.exp(-np.pi * bw / rate)
        x = lfilter([1.0], [1.0, -2 * r * np.cos(2 * np.pi * f / rate), r * r], x)
    return Waveform(0.5 * x / np.abs(x).max(), rate)
