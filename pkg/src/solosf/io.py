"""File formats and run configuration.

* WAV in and out (16-bit PCM or 32/64-bit float) through ``scipy.io.wavfile``,
  with an explicit chunk walk so truncated files fail instead of loading a
  partial buffer.
* A small self-describing binary tensor format (``.sst``).
* 8-bit binary PGM heatmaps of feature maps.
* :class:`RunConfig`, a flat ``key = value`` configuration with a typed
  schema that rejects unknown keys.

Tensor layout (all integers little-endian)::

    offset  size        field
    0       4           magic b"SSFT"
    4       1           format version (1)
    5       1           dtype tag (see DTYPE_TAGS)
    6       1           ndim
    7       1           reserved, 0
    8       8 * ndim    shape, uint64 each
    ...     prod(shape) * itemsize   payload, row-major, little-endian
"""

from __future__ import annotations

import dataclasses
import os
import re
import struct
import warnings
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .dsp import WaveBuffer
from .features import FeatureMap, MicPair, PairSet

TENSOR_MAGIC = b"SSFT"
TENSOR_VERSION = 1
DTYPE_TAGS = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("<c8"),
    4: np.dtype("<c16"),
    5: np.dtype("<i1"),
    6: np.dtype("<i4"),
    7: np.dtype("<i8"),
}
_TAG_OF = {v: k for k, v in DTYPE_TAGS.items()}
WAV_FORMATS = ("float32", "float64", "pcm16")
SF_KINDS = ("sf3d", "rir_sf", "solo_sf")


class FormatError(ValueError):
    """Malformed or unsupported file."""


# --------------------------------------------------------------------------
# WAV


def _wav_data_size(path) -> tuple[int, int]:
    """(declared, available) byte counts of the ``data`` chunk."""
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] not in (b"RIFF", b"RIFX") or head[8:12] != b"WAVE":
            raise FormatError(f"{path}: not a RIFF/WAVE file")
        size = os.fstat(fh.fileno()).st_size
        pos = 12
        while pos + 8 <= size:
            fh.seek(pos)
            cid, clen = struct.unpack("<4sI", fh.read(8))
            if cid == b"data":
                return clen, size - pos - 8
            pos += 8 + clen + (clen & 1)
    raise FormatError(f"{path}: malformed header, no data chunk")


def read_wav(path) -> WaveBuffer:
    """Load a WAV file as ``[M, N]`` float64.

    16-bit PCM is scaled by 1/32768; float files are loaded as stored.
    """
    declared, available = _wav_data_size(path)
    if available < declared:
        raise FormatError(f"{path}: truncated, data chunk declares {declared} bytes but only {available} present")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", wavfile.WavFileWarning)
            fs, data = wavfile.read(path)
    except (ValueError, struct.error, wavfile.WavFileWarning) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported sample format {data.dtype}; use 16-bit PCM or float")
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise FormatError(f"{path}: no samples")
    return WaveBuffer(x.T, int(fs))


def write_wav(wave: WaveBuffer, path, fmt: str = "float32") -> None:
    """Write ``wave``; ``pcm16`` clips to [-1, 1) and rounds to the nearest step."""
    if fmt not in WAV_FORMATS:
        raise FormatError(f"unknown WAV format {fmt!r}; choose from {WAV_FORMATS}")
    x = wave.samples.T
    if fmt == "pcm16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = x.astype(fmt)
    wavfile.write(path, wave.sample_rate, np.ascontiguousarray(data))


# --------------------------------------------------------------------------
# tensors


def tensor_nbytes(shape, dtype) -> int:
    return int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype).itemsize


def tensor_to_bytes(array) -> bytes:
    a = np.asarray(array)
    dt = a.dtype.newbyteorder("<")
    if dt not in _TAG_OF:
        raise FormatError(f"unsupported tensor dtype {a.dtype}")
    if a.ndim > 255:
        raise FormatError("too many dimensions")
    header = TENSOR_MAGIC + struct.pack("<BBBB", TENSOR_VERSION, _TAG_OF[dt], a.ndim, 0)
    header += struct.pack(f"<{a.ndim}Q", *a.shape)
    return header + np.ascontiguousarray(a, dtype=dt).tobytes()


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 8 or buf[:4] != TENSOR_MAGIC:
        raise FormatError("bad tensor magic")
    version, tag, ndim, _ = struct.unpack("<BBBB", buf[4:8])
    if version != TENSOR_VERSION:
        raise FormatError(f"unsupported tensor version {version}")
    if tag not in DTYPE_TAGS:
        raise FormatError(f"unknown dtype tag {tag}")
    end = 8 + 8 * ndim
    if len(buf) < end:
        raise FormatError("truncated tensor header")
    shape = struct.unpack(f"<{ndim}Q", buf[8:end])
    dt = DTYPE_TAGS[tag]
    need = tensor_nbytes(shape, dt)
    if len(buf) - end != need:
        raise FormatError(f"payload is {len(buf) - end} bytes but shape {shape} of {dt} needs {need}")
    return np.frombuffer(buf, dtype=dt, offset=end).reshape(shape).astype(dt.newbyteorder("="))


def save_tensor(array, path) -> None:
    Path(path).write_bytes(tensor_to_bytes(array))


def load_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


# --------------------------------------------------------------------------
# heatmaps


def heatmap_levels(feature: FeatureMap | np.ndarray, kind: str | None = None) -> np.ndarray:
    """8-bit grey levels of a ``[T, F]`` map.

    Spatial-feature kinds use the fixed map ``round((v + 1) / 2 * 255)``
    after clipping to [-1, 1] (numpy rounding, half to even, so 0 -> 128).
    Anything else is min-max scaled; a constant map becomes all zeros.
    """
    data = feature.data if isinstance(feature, FeatureMap) else np.asarray(feature, dtype=np.float64)
    kind = kind or (feature.kind if isinstance(feature, FeatureMap) else None)
    if not np.all(np.isfinite(data)):
        raise FormatError("heatmap values must be finite")
    if kind in SF_KINDS:
        v = (np.clip(data, -1.0, 1.0) + 1.0) / 2.0 * 255.0
    else:
        lo, hi = float(data.min()), float(data.max())
        v = np.zeros_like(data) if hi == lo else (data - lo) / (hi - lo) * 255.0
    return np.round(v).astype(np.uint8)


def export_heatmap(feature: FeatureMap | np.ndarray, path, kind: str | None = None) -> None:
    """Binary PGM with time along x and frequency along y, lowest bin at the bottom."""
    img = heatmap_levels(feature, kind).T[::-1]  # [F, T]
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+255\s", raw)
    if m is None:
        raise FormatError(f"{path}: not an 8-bit binary PGM")
    w, h = int(m.group(1)), int(m.group(2))
    pix = raw[m.end() :]
    if len(pix) != w * h:
        raise FormatError(f"{path}: expected {w * h} pixels, found {len(pix)}")
    return np.frombuffer(pix, dtype=np.uint8).reshape(h, w)


# --------------------------------------------------------------------------
# run configuration


class ConfigError(ValueError):
    pass


def parse_pairs(text: str, num_mics: int | None = None) -> tuple | None:
    """``"all"`` -> None, or ``"0-1,2-5"`` -> ((0, 1), (2, 5))."""
    text = text.strip()
    if text == "all":
        return None
    out = []
    for item in text.split(","):
        try:
            a, b = (int(v) for v in item.split("-"))
        except ValueError:
            raise ConfigError(f"bad pair {item!r}; expected 'i-j'") from None
        if num_mics is not None:
            MicPair(a, b).check(num_mics)
        out.append((a, b))
    return tuple(out)


@dataclass(frozen=True)
class RunConfig:
    """Every parameter a subcommand can take.

    ``band`` may be ``weak``, ``strong`` or ``custom`` (then ``rt60_min`` and
    ``rt60_max`` are used).  Paths are kept as strings so the config can be
    written back out verbatim.
    """

    # analysis
    window_len: int = 400
    hop: int = 160
    fft_size: int = 512
    window_kind: str = "hann"
    sample_rate: int = 16000
    sound_speed: float = 343.0
    # features
    K: int = 10
    pairs: str = "all"
    aggregation: str = "mean"
    ref_channel: int = 0
    feature: str = "solo_sf"
    composite_sf: str = "solo_sf"
    # selection
    strategy: str = "compose"
    windowed: bool = False
    select_seed: int = 0
    # protocol
    band: str = "weak"
    rt60_min: float = 0.1
    rt60_max: float = 0.6
    sir_min: float = -6.0
    sir_max: float = 6.0
    overlap_min: float = 0.5
    overlap_max: float = 1.0
    solo_seconds: float = 2.0
    n: int = 50
    seed: int = 0
    workers: int = 1
    # io
    out_dir: str = "out"
    input: str = ""
    solo: str = ""
    rir: str = ""
    azimuth: float = float("nan")
    elevation: float = 0.0
    distance: float = float("nan")
    array_spacings: str = "0.15,0.10,0.05,0.20,0.05,0.10,0.15"
    wav_format: str = "float32"

    def __post_init__(self):
        self.validate()

    def validate(self):
        from .features import FEATURE_KINDS
        from .select import STRATEGIES
        from .room import RT60_BANDS

        try:
            self.stft_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.K < 1:
            raise ConfigError("K must be at least 1")
        if self.aggregation not in ("mean", "sum"):
            raise ConfigError("aggregation must be 'mean' or 'sum'")
        if self.feature not in FEATURE_KINDS + ("3d_sf",):
            raise ConfigError(f"unknown feature {self.feature!r}")
        if self.composite_sf not in ("3d_sf", "sf3d", "rir_sf", "solo_sf"):
            raise ConfigError(f"composite_sf must be a spatial feature, got {self.composite_sf!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.band not in tuple(RT60_BANDS) + ("custom",):
            raise ConfigError(f"unknown band {self.band!r}")
        if not 0 <= self.rt60_min <= self.rt60_max:
            raise ConfigError("need 0 <= rt60_min <= rt60_max")
        if self.sir_min > self.sir_max:
            raise ConfigError("sir_min exceeds sir_max")
        if not 0 < self.overlap_min <= self.overlap_max <= 1:
            raise ConfigError("need 0 < overlap_min <= overlap_max <= 1")
        if self.solo_seconds <= 0:
            raise ConfigError("solo_seconds must be positive")
        if self.n < 1 or self.workers < 1:
            raise ConfigError("n and workers must be positive")
        if self.ref_channel < 0:
            raise ConfigError("ref_channel must be non-negative")
        if self.wav_format not in WAV_FORMATS:
            raise ConfigError(f"wav_format must be one of {WAV_FORMATS}")
        if not self.out_dir:
            raise ConfigError("out_dir must not be empty")
        parse_pairs(self.pairs)
        self.spacings()

    def stft_config(self):
        from .dsp import StftConfig

        return StftConfig(self.window_len, self.hop, self.fft_size, self.window_kind, self.sample_rate, self.sound_speed)

    def pair_set(self, num_mics: int) -> PairSet:
        pairs = parse_pairs(self.pairs, num_mics)
        if pairs is None:
            return PairSet.all_pairs(num_mics, self.aggregation)
        return PairSet(tuple(MicPair(a, b) for a, b in pairs), self.aggregation)

    def spacings(self) -> tuple:
        try:
            vals = tuple(float(v) for v in self.array_spacings.split(","))
        except ValueError:
            raise ConfigError(f"array_spacings must be comma-separated metres, got {self.array_spacings!r}") from None
        if any(v < 0 for v in vals):
            raise ConfigError("array spacings must be non-negative")
        return vals

    def mic_offsets(self) -> np.ndarray:
        x = np.concatenate([[0.0], np.cumsum(self.spacings())])
        return x - x[-1] / 2.0

    def rt60_band(self):
        return (self.rt60_min, self.rt60_max) if self.band == "custom" else self.band

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    # text form --------------------------------------------------------

    @classmethod
    def schema(cls) -> dict:
        return {f.name: type(f.default) for f in fields(cls)}

    @classmethod
    def parse_value(cls, key: str, raw: str):
        schema = cls.schema()
        if key not in schema:
            raise ConfigError(f"unknown config key {key!r}")
        typ = schema[key]
        raw = raw.strip()
        try:
            if typ is bool:
                low = raw.lower()
                if low in ("1", "true", "yes", "on"):
                    return True
                if low in ("0", "false", "no", "off"):
                    return False
                raise ValueError(raw)
            return typ(raw)
        except ValueError:
            raise ConfigError(f"config key {key!r} expects {typ.__name__}, got {raw!r}") from None

    @classmethod
    def from_text(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            values[key] = cls.parse_value(key, raw)
        base = base or cls()
        return dataclasses.replace(base, **values)

    @classmethod
    def from_file(cls, path, base: "RunConfig | None" = None) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text, base)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = str(v).lower()
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"
