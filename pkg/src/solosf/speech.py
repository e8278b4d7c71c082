"""Deterministic speech-like dry signals for simulation.

Real corpora are out of scope, so the evaluation harness drives the room
simulator with a crude source-filter talker: syllables of harmonic voicing
(gliding f0, three formants, spectral tilt) or fricative noise, separated
by pauses.  What matters for spatial features is that energy is sparse in
time and frequency the way speech is, and that each talker's pitch range
and formant space differ.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import WaveBuffer


@dataclass(frozen=True)
class Talker:
    f0: float  # median pitch, Hz
    formant_scale: float  # vocal-tract length factor
    rate: float  # syllables per second

    @classmethod
    def random(cls, seed: int) -> "Talker":
        rng = np.random.default_rng([seed, 7001])
        return cls(
            f0=float(rng.uniform(90.0, 240.0)),
            formant_scale=float(rng.uniform(0.85, 1.2)),
            rate=float(rng.uniform(3.0, 5.5)),
        )


def _formant_gain(freq, formants, bandwidths):
    g = np.zeros_like(freq)
    for fc, bw in zip(formants, bandwidths):
        g += 1.0 / (1.0 + ((freq - fc) / (bw / 2.0)) ** 2)
    tilt = 1.0 / (1.0 + freq / 500.0)
    return g * tilt


def _envelope(n, rng):
    attack = max(1, int(n * rng.uniform(0.1, 0.3)))
    release = max(1, int(n * rng.uniform(0.2, 0.4)))
    env = np.ones(n)
    env[:attack] = 0.5 - 0.5 * np.cos(np.pi * np.arange(attack) / attack)
    env[n - release :] *= 0.5 + 0.5 * np.cos(np.pi * np.arange(release) / release)
    return env


def _voiced(n, fs, talker, rng):
    t = np.arange(n) / fs
    f0_start = talker.f0 * rng.uniform(0.8, 1.25)
    f0_end = f0_start * rng.uniform(0.8, 1.2)
    f0 = np.linspace(f0_start, f0_end, n) * (1.0 + 0.01 * np.sin(2 * np.pi * 5.0 * t + rng.uniform(0, 2 * np.pi)))
    phase = 2.0 * np.pi * np.cumsum(f0) / fs
    formants = talker.formant_scale * np.array(
        [rng.uniform(300, 900), rng.uniform(900, 2500), rng.uniform(2300, 3400)]
    )
    bandwidths = np.array([80.0, 120.0, 180.0]) * rng.uniform(0.8, 1.3)
    kmax = int(7600.0 / f0.max())
    out = np.zeros(n)
    for k in range(1, kmax + 1):
        gain = _formant_gain(k * f0, formants, bandwidths)
        out += gain * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    return out


def _fricative(n, fs, rng):
    x = rng.standard_normal(n)
    spec = np.fft.rfft(x)
    freq = np.fft.rfftfreq(n, 1.0 / fs)
    lo, hi = rng.uniform(1500, 3500), rng.uniform(5000, 7800)
    shape = 1.0 / (1.0 + np.exp(-(freq - lo) / 200.0)) / (1.0 + np.exp((freq - hi) / 300.0))
    return np.fft.irfft(spec * shape, n) * 0.3


def speech_like(duration: float, fs: int = 16000, seed: int = 0, talker: Talker | None = None) -> WaveBuffer:
    """Mono talker-like signal of ``duration`` seconds, unit RMS over voiced parts.

    The same ``talker`` with different ``seed`` gives different "sentences"
    in the same voice.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng([seed, 4242])
    talker = talker or Talker.random(seed)
    n_total = int(round(duration * fs))
    out = np.zeros(n_total)
    pos = int(rng.uniform(0.0, 0.08) * fs)
    while pos < n_total:
        syl = int(rng.uniform(0.6, 1.4) / talker.rate * fs)
        syl = min(syl, n_total - pos)
        if syl < int(0.03 * fs):
            break
        if rng.random() < 0.8:
            seg = _voiced(syl, fs, talker, rng)
        else:
            seg = _fricative(syl, fs, rng)
        out[pos : pos + syl] += seg * _envelope(syl, rng) * rng.uniform(0.4, 1.0)
        pos += syl
        if rng.random() < 0.35:
            pos += int(rng.uniform(0.05, 0.35) * fs)
    active = np.abs(out) > 0
    rms = np.sqrt(np.mean(out[active] ** 2)) if active.any() else 1.0
    return WaveBuffer(out / rms, fs)
