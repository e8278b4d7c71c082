"""STFT/iSTFT, phase extraction and log-power spectra.

Everything downstream (spatial features, kernel selection, evaluation) runs
on the :class:`ComplexSpectrogram` produced here.  Frames are taken without
centering or padding, so frame ``t`` covers samples
``[t * hop, t * hop + window_len)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LPS_FLOOR = 1e-8


class DspError(ValueError):
    """Raised for invalid signal-processing inputs."""


@dataclass(frozen=True)
class WaveBuffer:
    """Multichannel time-domain signal, ``samples`` shaped ``[M, N]``."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2:
            raise DspError(f"samples must be [channels, samples], got shape {x.shape}")
        if x.shape[0] < 1 or x.shape[1] < 1:
            raise DspError("wave buffer is empty")
        if int(self.sample_rate) <= 0:
            raise DspError("sample_rate must be positive")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    """Analysis parameters.

    The defaults are a 25 ms periodic Hann window with a 10 ms hop at 16 kHz,
    zero-padded to a 512-point FFT (257 one-sided bins).  ``sound_speed`` is
    carried here so geometry-based phase models share one source of truth.
    """

    window_len: int = 400
    hop: int = 160
    fft_size: int = 512
    window_kind: str = "hann"
    sample_rate: int = 16000
    sound_speed: float = 343.0

    def __post_init__(self):
        if not 0 < self.hop <= self.window_len <= self.fft_size:
            raise DspError(
                "need 0 < hop <= window_len <= fft_size, got "
                f"hop={self.hop} window_len={self.window_len} fft_size={self.fft_size}"
            )
        if self.fft_size % 2:
            raise DspError("fft_size must be even")
        if self.window_kind not in _WINDOWS:
            raise DspError(f"unknown window kind {self.window_kind!r}; choose from {sorted(_WINDOWS)}")
        if self.sample_rate <= 0:
            raise DspError("sample_rate must be positive")
        if self.sound_speed <= 0:
            raise DspError("sound_speed must be positive")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    def window(self) -> np.ndarray:
        return _WINDOWS[self.window_kind](self.window_len)

    def bin_frequencies(self) -> np.ndarray:
        """Centre frequency in Hz of every one-sided bin."""
        return np.arange(self.num_bins) * self.sample_rate / self.fft_size

    def num_frames(self, num_samples: int) -> int:
        if num_samples < self.window_len:
            return 0
        return 1 + (num_samples - self.window_len) // self.hop


def _periodic_hann(n):
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _sqrt_hann(n):
    return np.sqrt(_periodic_hann(n))


def _hamming(n):
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _rect(n):
    return np.ones(n)


_WINDOWS = {
    "hann": _periodic_hann,
    "sqrt_hann": _sqrt_hann,
    "hamming": _hamming,
    "rect": _rect,
}


@dataclass(frozen=True)
class ComplexSpectrogram:
    """One-sided STFT, ``data`` shaped ``[T, F, M]``."""

    data: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim == 2:
            d = d[:, :, None]
        if d.ndim != 3:
            raise DspError(f"spectrogram must be [T, F, M], got shape {d.shape}")
        if d.shape[1] != self.config.num_bins:
            raise DspError(
                f"spectrogram has {d.shape[1]} bins but fft_size={self.config.fft_size} "
                f"implies {self.config.num_bins}"
            )
        d = d.astype(np.complex128, copy=False)
        object.__setattr__(self, "data", d)

    @property
    def shape(self):
        return self.data.shape

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def num_bins(self) -> int:
        return self.data.shape[1]

    @property
    def num_channels(self) -> int:
        return self.data.shape[2]


def frame_signal(x: np.ndarray, window_len: int, hop: int) -> np.ndarray:
    """Strided frame view of the last axis: ``[..., N] -> [..., T, window_len]``."""
    n = x.shape[-1]
    if n < window_len:
        raise DspError(f"input too short: {n} samples < window of {window_len}")
    frames = np.lib.stride_tricks.sliding_window_view(x, window_len, axis=-1)
    return frames[..., ::hop, :]


def stft(wave: WaveBuffer, config: StftConfig | None = None) -> ComplexSpectrogram:
    """Multichannel one-sided STFT.

    Parameters
    ----------
    wave : WaveBuffer
        Signal at ``config.sample_rate``.
    config : StftConfig, optional
        Analysis settings; defaults to 400/160/512 at 16 kHz.

    Returns
    -------
    ComplexSpectrogram
        ``[T, F, M]`` with ``T = 1 + (N - window_len) // hop``.
    """
    config = config or StftConfig()
    if wave.sample_rate != config.sample_rate:
        raise DspError(
            f"wave is at {wave.sample_rate} Hz but config expects {config.sample_rate} Hz; resample first"
        )
    frames = frame_signal(wave.samples, config.window_len, config.hop)  # [M, T, W]
    spec = np.fft.rfft(frames * config.window(), n=config.fft_size, axis=-1)  # [M, T, F]
    return ComplexSpectrogram(np.transpose(spec, (1, 2, 0)), config)


def _synthesis_envelope(window, hop, num_frames):
    length = (num_frames - 1) * hop + len(window)
    env = np.zeros(length)
    w2 = window**2
    for t in range(num_frames):
        env[t * hop : t * hop + len(window)] += w2
    return env


def is_invertible(config: StftConfig, tol: float = 1e-3) -> bool:
    """True if the steady-state squared-window overlap never vanishes."""
    w = config.window()
    reps = int(np.ceil(config.window_len / config.hop)) + 2
    env = _synthesis_envelope(w, config.hop, 2 * reps)
    mid = env[reps * config.hop : reps * config.hop + config.hop]
    return bool(mid.min() > tol * env.max())


def istft(spec: ComplexSpectrogram) -> WaveBuffer:
    """Weighted overlap-add inverse of :func:`stft`.

    Samples whose squared-window envelope is numerically zero (the very first
    sample for a periodic Hann window, and nothing else) come back as 0.
    """
    config = spec.config
    if not is_invertible(config):
        raise DspError("window/hop not invertible: squared-window overlap has zeros")
    w = config.window()
    T, _, M = spec.shape
    frames = np.fft.irfft(np.transpose(spec.data, (2, 0, 1)), n=config.fft_size, axis=-1)
    frames = frames[..., : config.window_len] * w  # [M, T, W]
    length = (T - 1) * config.hop + config.window_len
    out = np.zeros((M, length))
    for t in range(T):
        out[:, t * config.hop : t * config.hop + config.window_len] += frames[:, t]
    env = _synthesis_envelope(w, config.hop, T)
    nz = env > 1e-10 * env.max()
    out[:, nz] /= env[nz]
    out[:, ~nz] = 0.0
    return WaveBuffer(out, config.sample_rate)


def angle(z) -> np.ndarray:
    """Principal phase in (-pi, pi], with ``angle(0) == 0``."""
    z = np.asarray(z)
    a = np.arctan2(z.imag, z.real)
    a = np.where(a <= -np.pi, np.pi, a)
    return np.where(z == 0, 0.0, a)


def unit_phasor(z) -> np.ndarray:
    """``z / |z|`` with zeros mapped to 1, i.e. ``exp(1j * angle(z))``."""
    z = np.asarray(z, dtype=np.complex128)
    mag = np.hypot(z.real, z.imag)
    nz = mag > 0
    safe = np.where(nz, mag, 1.0)
    out = np.empty_like(z)
    out.real = np.where(nz, z.real / safe, 1.0)
    out.imag = np.where(nz, z.imag / safe, 0.0)
    return out


def cross(a, b) -> np.ndarray:
    """``a * conj(b)`` from separately rounded real products.

    numpy's complex multiply may fuse operations, which breaks exact symmetry
    under quarter-turn rotations; this form does not.
    """
    ar, ai, br, bi = a.real, a.imag, b.real, b.imag
    out = np.empty(np.broadcast_shapes(ar.shape, br.shape), dtype=np.complex128)
    out.real = ar * br + ai * bi
    out.imag = ai * br - ar * bi
    return out


def wrap(phase) -> np.ndarray:
    """Wrap real phases into (-pi, pi]."""
    w = np.mod(np.asarray(phase) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w <= -np.pi, np.pi, w)


def lps(spec: ComplexSpectrogram, ref_channel: int = 0):
    """Log-magnitude spectrum ``log(max(|Y|, 1e-8))`` of one channel."""
    from .features import FeatureMap

    if not 0 <= ref_channel < spec.num_channels:
        raise DspError(f"ref_channel {ref_channel} out of range for {spec.num_channels} channels")
    mag = np.abs(spec.data[:, :, ref_channel])
    return FeatureMap(np.log(np.maximum(mag, LPS_FLOOR)), "lps")
