"""Multichannel spatial features for target-speaker processing.

Modules:

``dsp``       STFT/ISTFT, phase helpers, log power spectrum
``features``  phase-difference features from geometry, an RIR or a solo segment
``select``    picking a K-frame solo segment as the convolution kernel
``room``      image-source room simulation and two-talker mixtures
``evaluate``  oracle dominance masks and method comparison
``io``        WAV, tensor, heatmap and config files
``cli``       the ``solosf`` command
"""

from .dsp import ComplexSpectrogram, StftConfig, WaveBuffer, istft, lps, stft
from .features import (
    ConvKernel,
    FeatureMap,
    MicPair,
    PairSet,
    SourceBearing,
    assemble_composite,
    compute_3d_sf,
    compute_rir_sf,
    compute_solo_sf,
    phase_convolve,
)
from .select import SelectionStrategy, SoloPart, select_compose, select_max, select_random

__version__ = "0.1.0"

__all__ = [
    "ComplexSpectrogram",
    "ConvKernel",
    "FeatureMap",
    "MicPair",
    "PairSet",
    "SelectionStrategy",
    "SoloPart",
    "SourceBearing",
    "StftConfig",
    "WaveBuffer",
    "assemble_composite",
    "compute_3d_sf",
    "compute_rir_sf",
    "compute_solo_sf",
    "istft",
    "lps",
    "phase_convolve",
    "select_compose",
    "select_max",
    "select_random",
    "stft",
]
