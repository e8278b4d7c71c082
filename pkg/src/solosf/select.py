"""Choosing a K-frame solo segment from the target speaker's solo part.

Three strategies are provided:

* ``random``  -- a uniformly drawn contiguous slice;
* ``max``     -- the slice starting at the frame with the largest magnitude
  sum over frequency;
* ``compose`` -- an independent start frame per frequency, each at that
  bin's magnitude peak, gathered into one kernel.

Magnitudes are read from a single reference channel and the resulting frame
indices are applied to every channel, so interchannel phase relations inside
the kernel stay intact.  All argmax ties resolve to the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp import ComplexSpectrogram
from .features import ConvKernel, low_energy_bins

STRATEGIES = ("random", "max", "compose")


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class SoloPart:
    """STFT ``[G, F, M]`` of a stretch where only the target speaks."""

    data: np.ndarray
    origin: str = ""

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.complex128)
        if d.ndim != 3:
            raise SelectionError(f"solo part must be [G, F, M], got shape {d.shape}")
        object.__setattr__(self, "data", d)

    @classmethod
    def from_spectrogram(cls, spec: ComplexSpectrogram, origin: str = "") -> "SoloPart":
        return cls(spec.data, origin)

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class SelectionStrategy:
    kind: str = "compose"
    seed: int = 0
    ref_channel: int = 0
    windowed: bool = False

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise SelectionError(f"unknown strategy {self.kind!r}; choose from {STRATEGIES}")
        if self.ref_channel < 0:
            raise SelectionError("ref_channel must be non-negative")


def _check(P: SoloPart, K: int, ref_channel: int = 0):
    if K < 1:
        raise SelectionError("K must be at least 1")
    if P.num_frames < K:
        raise SelectionError(f"solo part too short: G={P.num_frames} frames < K={K}")
    if not 0 <= ref_channel < P.data.shape[2]:
        raise SelectionError(f"ref_channel {ref_channel} out of range for {P.data.shape[2]} channels")


def random_offset(G: int, K: int, seed: int) -> int:
    """Start frame drawn uniformly from ``[0, G - K]``."""
    return int(np.random.default_rng(seed).integers(0, G - K + 1))


def select_random(P: SoloPart, K: int = 10, seed: int = 0) -> ConvKernel:
    _check(P, K)
    c = random_offset(P.num_frames, K, seed)
    F = P.data.shape[1]
    return ConvKernel(P.data[c : c + K].copy(), np.full(F, c))


def _window_sums(x: np.ndarray, K: int) -> np.ndarray:
    """Sums of ``K`` consecutive rows, one per valid start."""
    c = np.concatenate([np.zeros((1,) + x.shape[1:]), np.cumsum(x, axis=0)])
    return c[K:] - c[:-K]


def max_offset(P: SoloPart, K: int, ref_channel: int = 0, windowed: bool = False) -> int:
    """Start frame maximising the magnitude summed over frequency.

    With ``windowed=True`` the score is the energy of the whole K-frame
    window rather than of its first frame.
    """
    _check(P, K, ref_channel)
    G = P.num_frames
    mag = np.abs(P.data[:, :, ref_channel])
    if windowed:
        score = _window_sums((mag**2).sum(axis=1), K)
    else:
        score = mag.sum(axis=1)[: G - K + 1]
    return int(np.argmax(score))


def select_max(P: SoloPart, K: int = 10, ref_channel: int = 0, windowed: bool = False) -> ConvKernel:
    c = max_offset(P, K, ref_channel, windowed)
    F = P.data.shape[1]
    return ConvKernel(P.data[c : c + K].copy(), np.full(F, c))


def compose_offsets(P: SoloPart, K: int, ref_channel: int = 0, windowed: bool = False) -> np.ndarray:
    """Per-frequency start frames ``c_f``, shape ``[F]``."""
    _check(P, K, ref_channel)
    G = P.num_frames
    mag = np.abs(P.data[:, :, ref_channel])
    score = _window_sums(mag**2, K) if windowed else mag[: G - K + 1]
    return np.argmax(score, axis=0)


def select_compose(P: SoloPart, K: int = 10, ref_channel: int = 0, windowed: bool = False) -> ConvKernel:
    c_f = compose_offsets(P, K, ref_channel, windowed)
    F = P.data.shape[1]
    rows = c_f[None, :] + np.arange(K)[:, None]  # [K, F]
    S = P.data[rows, np.arange(F)[None, :], :]
    return ConvKernel(S, c_f)


def select_kernel(P: SoloPart, K: int, strategy: SelectionStrategy) -> ConvKernel:
    if strategy.kind == "random":
        _check(P, K, strategy.ref_channel)
        return select_random(P, K, strategy.seed)
    if strategy.kind == "max":
        return select_max(P, K, strategy.ref_channel, strategy.windowed)
    return select_compose(P, K, strategy.ref_channel, strategy.windowed)


@dataclass(frozen=True)
class KernelEnergyReport:
    peak: np.ndarray  # [F, M] max over frames of |S|
    flags: np.ndarray  # [F, M] bool
    threshold: float = field(default=0.0)

    @property
    def flagged_bins(self) -> np.ndarray:
        """Frequencies flagged on any channel."""
        return np.flatnonzero(self.flags.any(axis=1))

    @property
    def num_flagged(self) -> int:
        return int(self.flags.sum())

    def to_rows(self):
        F, M = self.peak.shape
        for f in range(F):
            for m in range(M):
                yield f, m, float(self.peak[f, m]), bool(self.flags[f, m])


def kernel_energy_report(S: ConvKernel, rel: float = 1e-6) -> KernelEnergyReport:
    """Per-(f, m) peak magnitude and a flag where it falls below ``rel`` of the global peak."""
    peak, flags = low_energy_bins(S, rel)
    return KernelEnergyReport(peak, flags, float(rel * peak.max()))
