import numpy as np
import pytest

from solosf.speech import Talker, speech_like


def test_deterministic_and_seed_dependent():
    a, b = speech_like(1.5, seed=4), speech_like(1.5, seed=4)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, speech_like(1.5, seed=5).samples)


def test_length_rate_and_unit_rms():
    x = speech_like(2.0, fs=16000, seed=1)
    assert x.num_samples == 32000 and x.sample_rate == 16000 and x.num_channels == 1
    s = x.samples[0]
    active = s[np.abs(s) > 0]
    assert np.sqrt(np.mean(active**2)) == pytest.approx(1.0)


def test_has_pauses_and_little_energy_near_nyquist():
    s = speech_like(3.0, seed=2).samples[0]
    frames = s[: s.size // 160 * 160].reshape(-1, 160)
    energy = np.sum(frames**2, axis=1)
    assert np.mean(energy < 1e-3 * energy.max()) > 0.05  # sparse in time
    spec = np.abs(np.fft.rfft(s)) ** 2
    freq = np.fft.rfftfreq(s.size, 1 / 16000)
    assert spec[freq > 7900].sum() < 1e-3 * spec.sum()


def test_same_talker_same_voice():
    t = Talker.random(9)
    assert t == Talker.random(9)
    assert 90 <= t.f0 <= 240


def test_rejects_bad_duration():
    with pytest.raises(ValueError):
        speech_like(0.0)
