"""Spatial features: IPD, TPD, 3D-SF, RIR-SF and Solo-SF.

Convolved-phase features are evaluated as ``Re(u1 * conj(u2))`` with
``u = exp(1j * angle(z))``, which is ``cos(angle(z1) - angle(z2))`` with the
interchannel cancellation done in the complex domain from separately
rounded real products.  A quarter-turn rotation or power-of-two gain shared
by all channels therefore leaves the output bit-identical.  Pair aggregation is a sequential loop over the pair
list (fixed reduction order).
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dsp import ComplexSpectrogram, StftConfig, angle, cross, unit_phasor

FEATURE_KINDS = ("sf3d", "rir_sf", "solo_sf", "lps", "composite")
LOW_ENERGY_REL = 1e-6


class FeatureError(ValueError):
    pass


class DegenerateKernelWarning(UserWarning):
    """A convolution kernel has (near-)silent frequencies; phases there are meaningless."""


@dataclass(frozen=True)
class MicPair:
    m1: int
    m2: int

    def __post_init__(self):
        if self.m1 == self.m2:
            raise FeatureError(f"microphone pair needs two distinct channels, got ({self.m1}, {self.m2})")
        if self.m1 < 0 or self.m2 < 0:
            raise FeatureError("channel indices must be non-negative")

    def check(self, num_channels: int):
        if max(self.m1, self.m2) >= num_channels:
            raise FeatureError(f"pair ({self.m1}, {self.m2}) out of range for {num_channels} channels")


@dataclass(frozen=True)
class PairSet:
    """Ordered microphone pairs and how their per-pair features are combined.

    ``aggregation="mean"`` keeps features in [-1, 1]; ``"sum"`` is the plain
    summation, ranging over [-P, P].
    """

    pairs: tuple = ()
    aggregation: str = "mean"

    def __post_init__(self):
        pairs = tuple(p if isinstance(p, MicPair) else MicPair(*p) for p in self.pairs)
        if not pairs:
            raise FeatureError("pair set is empty")
        seen = set()
        for p in pairs:
            key = frozenset((p.m1, p.m2))
            if key in seen:
                raise FeatureError(f"duplicate pair ({p.m1}, {p.m2})")
            seen.add(key)
        if self.aggregation not in ("mean", "sum"):
            raise FeatureError(f"aggregation must be 'mean' or 'sum', got {self.aggregation!r}")
        object.__setattr__(self, "pairs", pairs)

    @classmethod
    def all_pairs(cls, num_channels: int, aggregation: str = "mean") -> "PairSet":
        return cls(tuple(MicPair(a, b) for a, b in itertools.combinations(range(num_channels), 2)), aggregation)

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def check(self, num_channels: int):
        for p in self.pairs:
            p.check(num_channels)


@dataclass(frozen=True)
class SourceBearing:
    """Target position relative to the array origin.

    ``mic_offsets`` are signed coordinates of each microphone along the
    (linear) array axis, measured from the origin.  Azimuth is taken from
    that axis within the horizontal plane, elevation from the horizontal.
    """

    azimuth: float
    elevation: float
    distance: float
    mic_offsets: tuple = ()

    def __post_init__(self):
        if not self.distance > 0:
            raise FeatureError("source distance to origin must be positive")
        object.__setattr__(self, "mic_offsets", tuple(float(x) for x in self.mic_offsets))

    def mic_distances(self) -> np.ndarray:
        """Source-to-microphone distances by the law of cosines."""
        d_om = np.asarray(self.mic_offsets)
        cos_psi = np.cos(self.azimuth) * np.cos(self.elevation)
        sq = d_om**2 + self.distance**2 - 2.0 * d_om * self.distance * cos_psi
        if np.any(sq < -1e-12):
            raise FeatureError("impossible geometry: negative squared distance")
        return np.sqrt(np.maximum(sq, 0.0))


@dataclass(frozen=True)
class ConvKernel:
    """Complex convolution kernel ``[K, F, M]`` (an RIR STFT or a solo segment)."""

    data: np.ndarray
    start_frames: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.complex128)
        if d.ndim != 3 or d.shape[0] < 1:
            raise FeatureError(f"kernel must be [K>=1, F, M], got shape {d.shape}")
        object.__setattr__(self, "data", d)

    @property
    def length(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class FeatureMap:
    data: np.ndarray
    kind: str

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 2:
            raise FeatureError(f"feature map must be 2-D [T, F], got shape {d.shape}")
        if self.kind not in FEATURE_KINDS:
            raise FeatureError(f"unknown feature kind {self.kind!r}")
        object.__setattr__(self, "data", d)

    @property
    def shape(self):
        return self.data.shape


def compute_ipd(Y: ComplexSpectrogram, pair: MicPair) -> np.ndarray:
    """Interchannel phase difference ``angle(Y[m1]) - angle(Y[m2])``, wrapped, ``[T, F]``."""
    pair.check(Y.num_channels)
    u = unit_phasor(Y.data[:, :, [pair.m1, pair.m2]])
    return angle(cross(u[:, :, 0], u[:, :, 1]))


def compute_tpd_3d(bearing: SourceBearing, config: StftConfig, pair: MicPair, num_bins: int | None = None) -> np.ndarray:
    """Target phase difference predicted from source geometry, shape ``[F]``.

    Bin ``f`` is mapped to ``f * fs / fft_size`` Hz.  A longer path to ``m1``
    delays that channel, which the forward transform renders as a negative
    phase, hence ``2 pi f_hz (d_m2 - d_m1) / c``.
    """
    num_bins = config.num_bins if num_bins is None else num_bins
    if num_bins < 2:
        raise FeatureError("need at least two frequency bins")
    d = bearing.mic_distances()
    if max(pair.m1, pair.m2) >= len(d):
        raise FeatureError(f"pair ({pair.m1}, {pair.m2}) out of range for {len(d)} microphone offsets")
    f_hz = np.arange(num_bins) * config.sample_rate / (2.0 * (num_bins - 1))
    return 2.0 * np.pi * f_hz * (d[pair.m2] - d[pair.m1]) / config.sound_speed


def compute_tpd_from_rir(R: ConvKernel, pair: MicPair) -> np.ndarray:
    """Target phase difference from the direct-wave frame ``R[0]``, shape ``[F]``."""
    pair.check(R.shape[2])
    u = unit_phasor(R.data[0][:, [pair.m1, pair.m2]])
    return angle(cross(u[:, 0], u[:, 1]))


def _aggregate(per_pair, pairs: PairSet):
    acc = None
    for cos_map in per_pair:
        acc = cos_map.copy() if acc is None else acc + cos_map
    if pairs.aggregation == "mean":
        acc = acc / len(pairs)
    return acc


def compute_3d_sf(ipd, tpd, pairs: PairSet) -> FeatureMap:
    """``cos(IPD - TPD)`` aggregated over pairs.

    ``ipd`` is ``[P, T, F]`` (or ``[T, F]`` for a single pair) in the same
    order as ``pairs``; ``tpd`` is ``[P, F]`` / ``[F]`` broadcast over time,
    or a full ``[P, T, F]``.
    """
    ipd = np.asarray(ipd, dtype=np.float64)
    tpd = np.asarray(tpd, dtype=np.float64)
    if ipd.ndim == 2:
        ipd = ipd[None]
        if tpd.ndim in (1, 2) and tpd.shape[0] != 1:
            tpd = tpd[None]
    if ipd.ndim != 3 or ipd.shape[0] != len(pairs):
        raise FeatureError(f"ipd stack shape {ipd.shape} does not match {len(pairs)} pairs")
    if tpd.ndim == 2:
        tpd = tpd[:, None, :]
    try:
        np.broadcast_shapes(ipd.shape, tpd.shape)
    except ValueError:
        raise FeatureError(f"ipd shape {ipd.shape} and tpd shape {tpd.shape} disagree") from None
    if tpd.shape[0] != ipd.shape[0] or tpd.shape[-1] != ipd.shape[-1]:
        raise FeatureError(f"ipd shape {ipd.shape} and tpd shape {tpd.shape} disagree")
    per_pair = (np.cos(ipd[i] - tpd[i]) for i in range(len(pairs)))
    return FeatureMap(_aggregate(per_pair, pairs), "sf3d")


def _ipd_stack(Y: ComplexSpectrogram, pairs: PairSet) -> np.ndarray:
    ur, ui = _unit_planes(*_planes(Y.data))
    return np.stack([angle((ur[p.m1] * ur[p.m2] + ui[p.m1] * ui[p.m2]) + 1j * (ui[p.m1] * ur[p.m2] - ur[p.m1] * ui[p.m2])) for p in pairs])


def sf3d_from_bearing(Y: ComplexSpectrogram, bearing: SourceBearing, pairs: PairSet) -> FeatureMap:
    pairs.check(Y.num_channels)
    tpd = np.stack([compute_tpd_3d(bearing, Y.config, p, Y.num_bins) for p in pairs])
    return compute_3d_sf(_ipd_stack(Y, pairs), tpd, pairs)


def sf3d_from_rir(Y: ComplexSpectrogram, R: ConvKernel, pairs: PairSet) -> FeatureMap:
    pairs.check(Y.num_channels)
    tpd = np.stack([compute_tpd_from_rir(R, p) for p in pairs])
    return compute_3d_sf(_ipd_stack(Y, pairs), tpd, pairs)


def _planes(z: np.ndarray):
    """Contiguous channel-first real and imaginary parts of a ``[..., M]`` array."""
    return (
        np.ascontiguousarray(np.moveaxis(z.real, -1, 0)),
        np.ascontiguousarray(np.moveaxis(z.imag, -1, 0)),
    )


def _correlate_planes(Y: ComplexSpectrogram, kernel: ConvKernel):
    T, F, M = Y.shape
    K = kernel.length
    if kernel.shape[1:] != (F, M):
        raise FeatureError(f"kernel shape {kernel.shape} does not match spectrogram bins/channels {(F, M)}")
    if K > T:
        raise FeatureError(f"kernel longer than signal: K={K} > T={T}")
    yr, yi = _planes(Y.data)  # [M, T, F]
    sr, si = _planes(kernel.data)  # [M, K, F]
    re = yr * sr[:, :1] + yi * si[:, :1]
    im = yi * sr[:, :1] - yr * si[:, :1]
    t1 = np.empty_like(re)
    t2 = np.empty_like(re)
    for k in range(1, K):
        n = T - k
        a, b = yr[:, :n], yi[:, :n]
        c, d = sr[:, k : k + 1], si[:, k : k + 1]
        p, q = t1[:, :n], t2[:, :n]
        # each product rounded separately, then summed in a fixed order
        np.multiply(a, c, out=p)
        np.multiply(b, d, out=q)
        np.add(p, q, out=p)
        np.add(re[:, k:], p, out=re[:, k:])
        np.multiply(b, c, out=p)
        np.multiply(a, d, out=q)
        np.subtract(p, q, out=p)
        np.add(im[:, k:], p, out=im[:, k:])
    return re, im


def correlate(Y: ComplexSpectrogram, kernel: ConvKernel) -> np.ndarray:
    """``sum_k Y[t-k] * conj(kernel[k])`` per (f, m), zero for ``t-k < 0``; ``[T, F, M]``."""
    re, im = _correlate_planes(Y, kernel)
    out = np.empty(Y.shape, dtype=np.complex128)
    out.real = np.moveaxis(re, 0, -1)
    out.imag = np.moveaxis(im, 0, -1)
    return out


def phase_convolve(Y: ComplexSpectrogram, kernel: ConvKernel) -> np.ndarray:
    """Kernel-convolved phase ``angle(Y * kernel^H)``, shape ``[T, F, M]``."""
    return angle(correlate(Y, kernel))


def _unit_planes(re, im):
    mag = np.sqrt(re * re + im * im)
    nz = mag > 0
    safe = np.where(nz, mag, 1.0)
    return np.where(nz, re / safe, 1.0), np.where(nz, im / safe, 0.0)


def _pairwise_cosine(re, im, pairs: PairSet) -> np.ndarray:
    # cos of the phase difference is Re(u1 * conj(u2)) for unit phasors
    ur, ui = _unit_planes(re, im)
    per_pair = (np.clip(ur[p.m1] * ur[p.m2] + ui[p.m1] * ui[p.m2], -1.0, 1.0) for p in pairs)
    return _aggregate(per_pair, pairs)


def low_energy_bins(kernel: ConvKernel, rel: float = LOW_ENERGY_REL):
    """Peak magnitude per (f, m) over frames and the low-energy flag mask."""
    peak = np.abs(kernel.data).max(axis=0)
    ref = peak.max()
    flags = peak < rel * ref if ref > 0 else np.ones_like(peak, dtype=bool)
    return peak, flags


def _warn_degenerate(kernel: ConvKernel, name: str):
    _, flags = low_energy_bins(kernel)
    bad = np.flatnonzero(flags.any(axis=1))
    if bad.size:
        shown = ", ".join(str(b) for b in bad[:12]) + (" ..." if bad.size > 12 else "")
        warnings.warn(
            f"degenerate {name} kernel: {bad.size} low-energy frequency bins [{shown}]",
            DegenerateKernelWarning,
            stacklevel=3,
        )


def compute_rir_sf(Y: ComplexSpectrogram, R: ConvKernel, pairs: PairSet) -> FeatureMap:
    """RIR-convolved phase differences turned into a cosine feature."""
    pairs.check(Y.num_channels)
    _warn_degenerate(R, "RIR")
    return FeatureMap(_pairwise_cosine(*_correlate_planes(Y, R), pairs), "rir_sf")


def compute_solo_sf(Y: ComplexSpectrogram, S: ConvKernel, pairs: PairSet) -> FeatureMap:
    """Solo-segment-convolved phase differences turned into a cosine feature.

    ``S`` must come from the same speaker at the same position, recorded with
    the same array, so that its phase pattern matches the target's in ``Y``.
    """
    pairs.check(Y.num_channels)
    _warn_degenerate(S, "solo")
    return FeatureMap(_pairwise_cosine(*_correlate_planes(Y, S), pairs), "solo_sf")


def assemble_composite(lps_map: FeatureMap, sf: FeatureMap) -> FeatureMap:
    """``[T, 2F]`` concatenation with the spectral part first."""
    if lps_map.shape != sf.shape:
        raise FeatureError(f"LPS shape {lps_map.shape} and SF shape {sf.shape} differ")
    return FeatureMap(np.concatenate([lps_map.data, sf.data], axis=1), "composite")


def aggregate_pairs(per_pair: Sequence[np.ndarray], pairs: PairSet) -> np.ndarray:
    """Public form of the fixed-order pair reduction."""
    if len(per_pair) != len(pairs):
        raise FeatureError("one map per pair required")
    return _aggregate(iter(per_pair), pairs)
