"""Shoebox image-source room simulation and two-talker mixture synthesis.

The simulated setup follows the usual far-field ASR recipe: a rectangular
room with uniform wall absorption, one 8-microphone non-uniform linear
array (15-10-5-20-5-10-15 cm) lying along the x axis, and two static
talkers.  Image sources of low reflection order are rendered with
fractional delays (81-tap Hann-windowed sinc) so interchannel phase is
exact; the higher-order tail is rendered at the nearest integer tap.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .dsp import StftConfig, WaveBuffer, stft
from .features import ConvKernel, SourceBearing

SOUND_SPEED = 343.0
DEFAULT_SPACINGS = (0.15, 0.10, 0.05, 0.20, 0.05, 0.10, 0.15)
ROOM_MIN = (3.0, 3.0, 2.5)
ROOM_MAX = (8.0, 6.0, 4.0)
RT60_BANDS = {"weak": (0.1, 0.6), "strong": (0.5, 0.7)}
SINC_HALF = 40
EXACT_ORDER = {"weak": 10, "strong": 17}
TAIL_DB = 40.0
CALIBRATION_EXTRA = 0.5  # extra horizon, in RT60 units, so truncation cannot steepen the fitted decay
ABSORPTION_MODELS = ("calibrated", "sabine", "eyring")


class RoomError(ValueError):
    pass


class AbsorptionClampWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RoomScenario:
    """Everything needed to render one room.

    ``array_origin`` is the centre of the array; microphones sit on the
    x axis through it.  ``max_image_order`` caps the reflection order of the
    whole image set and ``exact_order`` the part rendered with fractional
    delays.  ``None`` for ``max_image_order`` means "long enough to reach
    the truncation level of the decay".
    """

    room_dims: tuple
    rt60_target: float
    array_origin: tuple
    source_positions: tuple
    array_spacings: tuple = DEFAULT_SPACINGS
    max_image_order: int | None = None
    exact_order: int = 17
    seed: int = 0
    absorption_model: str = "calibrated"

    def __post_init__(self):
        dims = tuple(float(v) for v in self.room_dims)
        if len(dims) != 3 or min(dims) <= 0:
            raise RoomError(f"room_dims must be three positive lengths, got {self.room_dims}")
        object.__setattr__(self, "room_dims", dims)
        object.__setattr__(self, "array_origin", tuple(float(v) for v in self.array_origin))
        object.__setattr__(self, "array_spacings", tuple(float(v) for v in self.array_spacings))
        object.__setattr__(self, "source_positions", tuple(tuple(float(v) for v in p) for p in self.source_positions))
        if self.rt60_target < 0:
            raise RoomError("rt60_target must be non-negative")
        if self.absorption_model not in ABSORPTION_MODELS:
            raise RoomError(f"absorption_model must be one of {ABSORPTION_MODELS}, got {self.absorption_model!r}")
        for name, p in [("array origin", self.array_origin)] + [
            (f"source {i}", s) for i, s in enumerate(self.source_positions)
        ]:
            if len(p) != 3:
                raise RoomError(f"{name} must have three coordinates")
        if any(s < 0 for s in self.array_spacings):
            raise RoomError("array spacings must be non-negative")
        inside = self.mic_positions()
        if not _inside(inside, dims).all():
            raise RoomError("microphone outside the room")

    @property
    def num_mics(self) -> int:
        return len(self.array_spacings) + 1

    def mic_offsets(self) -> np.ndarray:
        """Signed x offsets of the microphones from the array centre."""
        x = np.concatenate([[0.0], np.cumsum(self.array_spacings)])
        return x - x[-1] / 2.0

    def mic_positions(self) -> np.ndarray:
        pos = np.tile(np.asarray(self.array_origin), (self.num_mics, 1))
        pos[:, 0] += self.mic_offsets()
        return pos

    def absorption(self, fs: int = 16000, c: float = SOUND_SPEED) -> float:
        if self.rt60_target == 0:
            return 1.0
        if self.absorption_model == "calibrated":
            return calibrate_absorption(self, fs, c)
        return rt60_to_absorption(self.room_dims, self.rt60_target, self.absorption_model)

    def bearing(self, source: int = 0) -> SourceBearing:
        """Azimuth/elevation/distance of a source seen from the array centre."""
        v = np.asarray(self.source_positions[source]) - np.asarray(self.array_origin)
        d = float(np.linalg.norm(v))
        horiz = math.hypot(v[0], v[1])
        return SourceBearing(
            azimuth=math.atan2(v[1], v[0]),
            elevation=math.atan2(v[2], horiz),
            distance=d,
            mic_offsets=tuple(self.mic_offsets()),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RoomScenario":
        return cls(**d)


def _inside(points, dims):
    p = np.atleast_2d(points)
    return np.all((p > 0) & (p < np.asarray(dims)), axis=1)


def _volume_area(room_dims):
    lx, ly, lz = room_dims
    return lx * ly * lz, 2.0 * (lx * ly + lx * lz + ly * lz)


def rt60_to_absorption(room_dims, rt60: float, model: str = "sabine") -> float:
    """Uniform energy absorption coefficient that yields ``rt60``.

    ``model="sabine"`` inverts ``rt60 = 0.161 V / (S alpha)``;
    ``model="eyring"`` inverts ``rt60 = 0.161 V / (-S ln(1 - alpha))``,
    which is the decay an image-source model actually produces.  Values
    above 1 are clamped with a warning.
    """
    if not rt60 > 0:
        raise RoomError("rt60 must be positive")
    V, S = _volume_area(room_dims)
    x = 0.161 * V / (rt60 * S)
    if model == "sabine":
        alpha = x
    elif model == "eyring":
        alpha = 1.0 - math.exp(-x)
    else:
        raise RoomError(f"unknown absorption model {model!r}")
    if alpha > 1.0:
        warnings.warn(
            f"rt60={rt60}s is unreachable in a {room_dims} room; absorption clamped to 1",
            AbsorptionClampWarning,
            stacklevel=2,
        )
        alpha = 1.0
    return alpha


@dataclass(frozen=True)
class RirTimeDomain:
    taps: np.ndarray  # [M, L]
    sample_rate: int = 16000

    def __post_init__(self):
        t = np.atleast_2d(np.asarray(self.taps, dtype=np.float64))
        if t.shape[1] < 1 or not np.all(np.isfinite(t)):
            raise RoomError("RIR must be non-empty and finite")
        object.__setattr__(self, "taps", t)

    @property
    def num_channels(self) -> int:
        return self.taps.shape[0]

    @property
    def length(self) -> int:
        return self.taps.shape[1]


def _axis_images(s, L, r, jmax):
    j = np.arange(-jmax, jmax + 1)
    odd = j % 2 != 0
    pos = np.where(odd, -s + (j + 1) * L, s + j * L)
    return j, pos - r


def _image_grid(src, dims, mic, max_order, max_dist):
    """Image-source offsets relative to one microphone.

    Returns (distance, order) for every image of order <= ``max_order`` and
    distance <= ``max_dist``.  Per-axis index ``j`` has ``|j|`` reflections.
    """
    jx, dx = _axis_images(src[0], dims[0], mic[0], max_order)
    jy, dy = _axis_images(src[1], dims[1], mic[1], max_order)
    jz, dz = _axis_images(src[2], dims[2], mic[2], max_order)
    keep_x = np.abs(dx) <= max_dist
    keep_y = np.abs(dy) <= max_dist
    keep_z = np.abs(dz) <= max_dist
    jx, dx, jy, dy, jz, dz = jx[keep_x], dx[keep_x], jy[keep_y], dy[keep_y], jz[keep_z], dz[keep_z]
    oyz = np.abs(jy)[:, None] + np.abs(jz)[None, :]
    d2yz = dy[:, None] ** 2 + dz[None, :] ** 2
    dists, orders = [], []
    for ox, ddx in zip(np.abs(jx), dx):
        order = ox + oyz
        d2 = ddx * ddx + d2yz
        m = (order <= max_order) & (d2 <= max_dist * max_dist)
        if m.any():
            dists.append(np.sqrt(d2[m]))
            orders.append(order[m])
    if not dists:
        return np.zeros(0), np.zeros(0, dtype=int)
    return np.concatenate(dists), np.concatenate(orders)


def _sinc_taps(delay, half=SINC_HALF):
    """Windowed-sinc fractional delay: (tap indices, weights), each ``[n, 2*half+1]``."""
    n0 = np.round(delay).astype(np.int64)
    offs = np.arange(-half, half + 1)
    idx = n0[:, None] + offs[None, :]
    x = idx - delay[:, None]
    w = 0.5 * (1.0 + np.cos(np.pi * x / (half + 1)))
    return idx, np.sinc(x) * w


def default_rir_length(scenario: RoomScenario, fs: int, c: float = SOUND_SPEED) -> int:
    """Samples needed to reach ``TAIL_DB`` of decay, plus the farthest direct path."""
    src = np.asarray(scenario.source_positions)
    mics = scenario.mic_positions()
    far = max(np.linalg.norm(s - m) for s in src for m in mics)
    tail = scenario.rt60_target * TAIL_DB / 60.0
    return int(math.ceil((far / c + tail) * fs)) + SINC_HALF + 1


def simulate_rir(
    scenario: RoomScenario,
    source: int = 0,
    fs: int = 16000,
    c: float = SOUND_SPEED,
    length: int | None = None,
) -> RirTimeDomain:
    """Image-source impulse responses from one source to every microphone.

    Each image of reflection order ``n`` at distance ``d`` contributes
    ``(1 - alpha) ** (n / 2) / (4 pi d)`` at delay ``d / c * fs`` samples.
    """
    if not 0 <= source < len(scenario.source_positions):
        raise RoomError(f"no source {source}")
    src = np.asarray(scenario.source_positions[source])
    dims = scenario.room_dims
    if not _inside(src, dims)[0]:
        raise RoomError(f"source {source} at {tuple(src)} is outside the room {dims}")
    alpha = scenario.absorption(fs, c)
    refl = math.sqrt(max(1.0 - alpha, 0.0))
    L = default_rir_length(scenario, fs, c) if length is None else int(length)
    max_dist = (L - SINC_HALF - 1) * c / fs
    if scenario.max_image_order is not None:
        max_order = int(scenario.max_image_order)
    elif refl == 0.0:
        max_order = 0
    else:
        max_order = int(math.ceil(max_dist / min(dims))) + 1
    exact = min(scenario.exact_order, max_order)

    taps = np.zeros((scenario.num_mics, L))
    for m, mic in enumerate(scenario.mic_positions()):
        dist, order = _image_grid(src, dims, mic, max_order, max_dist)
        amp = refl**order / (4.0 * np.pi * dist)
        delay = dist / c * fs
        lo = order <= exact
        if lo.any():
            idx, w = _sinc_taps(delay[lo])
            vals = w * amp[lo][:, None]
            ok = (idx >= 0) & (idx < L)
            taps[m] += np.bincount(idx[ok], weights=vals[ok], minlength=L)
        hi = ~lo
        if hi.any():
            idx = np.round(delay[hi]).astype(np.int64)
            ok = idx < L
            taps[m] += np.bincount(idx[ok], weights=amp[hi][ok], minlength=L)
    return RirTimeDomain(taps, fs)


def schroeder_rt60(h: np.ndarray, fs: int, db_range=(-5.0, -25.0)) -> float:
    """RT60 by Schroeder backward integration and a line fit over ``db_range``."""
    e = np.asarray(h, dtype=np.float64) ** 2
    edc = np.cumsum(e[::-1])[::-1]
    edc_db = 10.0 * np.log10(edc / edc[0] + 1e-300)
    hi, lo = db_range
    i0 = int(np.argmax(edc_db <= hi))
    i1 = int(np.argmax(edc_db <= lo))
    if i1 <= i0:
        raise RoomError("decay curve does not span the fit range")
    t = np.arange(i0, i1) / fs
    slope, _ = np.polyfit(t, edc_db[i0:i1], 1)
    return -60.0 / slope


def _histogram_rt60(dist, order, alpha, fs, c, length):
    amp = (1.0 - alpha) ** (order / 2.0) / (4.0 * np.pi * dist)
    idx = np.round(dist / c * fs).astype(np.int64)
    ok = idx < length
    return schroeder_rt60(np.bincount(idx[ok], weights=amp[ok], minlength=length), fs)


_CALIBRATION_CACHE: dict = {}


def calibrate_absorption(scenario: RoomScenario, fs: int = 16000, c: float = SOUND_SPEED, iters: int = 30) -> float:
    """Absorption at which the image set's own decay curve has the target RT60.

    Shoebox image sources with uniform absorption do not decay at the
    diffuse-field (Sabine/Eyring) rate, so the closed forms miss the target
    by up to ~50%.  This bisects the absorption against a Schroeder T20 of the
    integer-tap image response seen from the array centre.
    """
    key = (scenario.room_dims, scenario.rt60_target, scenario.array_origin, scenario.source_positions[0], fs, c)
    if key in _CALIBRATION_CACHE:
        return _CALIBRATION_CACHE[key]
    L = default_rir_length(scenario, fs, c) + int(math.ceil(scenario.rt60_target * fs * CALIBRATION_EXTRA))
    max_dist = (L - SINC_HALF - 1) * c / fs
    max_order = int(math.ceil(max_dist / min(scenario.room_dims))) + 1
    dist, order = _image_grid(
        np.asarray(scenario.source_positions[0]), scenario.room_dims, np.asarray(scenario.array_origin), max_order, max_dist
    )

    def rt(alpha):
        try:
            return _histogram_rt60(dist, order, alpha, fs, c, L)
        except RoomError:
            return 0.0 if alpha > 0.5 else np.inf

    lo, hi = 1e-4, 1.0 - 1e-9
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if rt(mid) > scenario.rt60_target:
            lo = mid
        else:
            hi = mid
    alpha = 0.5 * (lo + hi)
    _CALIBRATION_CACHE[key] = alpha
    return alpha


def rir_to_kernel(rir: RirTimeDomain, config: StftConfig | None = None, K: int = 10) -> ConvKernel:
    """First ``K`` STFT frames of the impulse responses, ``[K, F, M]``."""
    config = config or StftConfig()
    taps = rir.taps
    need = config.window_len + (K - 1) * config.hop
    if taps.shape[1] < config.window_len:
        warnings.warn(
            f"RIR of {taps.shape[1]} taps is shorter than one window; zero-padded",
            UserWarning,
            stacklevel=2,
        )
    if taps.shape[1] < need:
        taps = np.pad(taps, ((0, 0), (0, need - taps.shape[1])))
    spec = stft(WaveBuffer(taps[:, :need], rir.sample_rate), config)
    return ConvKernel(spec.data[:K])


@dataclass(frozen=True)
class MixtureSpec:
    sir_db: float = 0.0
    overlap_ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.overlap_ratio <= 1.0:
            raise RoomError("overlap_ratio must lie in (0, 1]")


@dataclass(frozen=True)
class MixtureResult:
    mixture: WaveBuffer
    target_image: WaveBuffer
    interference_image: WaveBuffer
    target_rir: RirTimeDomain
    interference_rir: RirTimeDomain
    scenario: RoomScenario
    spec: MixtureSpec
    target_onset: int
    interference_onset: int
    overlap: tuple  # (start, stop) sample range of the dry overlap
    solo: WaveBuffer | None = None
    metadata: dict = field(default_factory=dict)


def _mono(w: WaveBuffer, name: str) -> np.ndarray:
    if w.num_channels != 1:
        raise RoomError(f"{name} must be mono, got {w.num_channels} channels")
    x = w.samples[0]
    if x.size == 0 or not np.any(x):
        raise RoomError(f"{name} is empty")
    return x


def render(dry: np.ndarray, rir: RirTimeDomain) -> np.ndarray:
    """Convolve a mono signal with every RIR channel, ``[M, N + L - 1]``."""
    return fftconvolve(dry[None, :], rir.taps, axes=-1)


def synthesize_mixture(
    target_dry: WaveBuffer,
    interf_dry: WaveBuffer,
    scenario: RoomScenario,
    spec: MixtureSpec,
    solo_dry: WaveBuffer | None = None,
    ref_channel: int = 0,
) -> MixtureResult:
    """Reverberant two-talker mixture.

    The interference overlaps ``overlap_ratio`` of the target's extent,
    either at its head or its tail (seeded coin flip), and is scaled so the
    reference-channel power ratio over the overlapped stretch equals
    ``sir_db``.  ``solo_dry``, if given, is rendered through the target RIR.
    """
    if len(scenario.source_positions) < 2:
        raise RoomError("scenario needs at least two sources")
    xt = _mono(target_dry, "target")
    xi = _mono(interf_dry, "interference")
    fs = target_dry.sample_rate
    if interf_dry.sample_rate != fs:
        raise RoomError("target and interference sample rates differ")
    rng = np.random.default_rng(spec.seed)
    nt, ni = xt.size, xi.size
    n_ov = int(round(spec.overlap_ratio * nt))
    if ni < n_ov:
        raise RoomError(f"interference ({ni} samples) too short to overlap {n_ov} target samples")
    if rng.random() < 0.5:
        off = n_ov - ni  # interference ends inside the target
    else:
        off = nt - n_ov  # interference starts inside the target
    rir_t = simulate_rir(scenario, 0, fs)
    rir_i = simulate_rir(scenario, 1, fs)
    start = min(0, off)
    t_on, i_on = -start, off - start
    L = max(rir_t.length, rir_i.length)
    total = max(nt, off + ni) - start + L - 1
    img_t = np.zeros((scenario.num_mics, total))
    img_i = np.zeros((scenario.num_mics, total))
    rt = render(xt, rir_t)
    ri = render(xi, rir_i)
    img_t[:, t_on : t_on + rt.shape[1]] = rt
    img_i[:, i_on : i_on + ri.shape[1]] = ri
    ov0, ov1 = max(t_on, i_on), min(t_on + nt, i_on + ni)
    p_t = np.mean(img_t[ref_channel, ov0:ov1] ** 2)
    p_i = np.mean(img_i[ref_channel, ov0:ov1] ** 2)
    if p_i == 0 or p_t == 0:
        raise RoomError("silent overlap region; cannot set SIR")
    img_i *= math.sqrt(p_t / (p_i * 10.0 ** (spec.sir_db / 10.0)))
    solo = None
    if solo_dry is not None:
        solo = WaveBuffer(render(_mono(solo_dry, "solo"), rir_t), fs)
    return MixtureResult(
        mixture=WaveBuffer(img_t + img_i, fs),
        target_image=WaveBuffer(img_t, fs),
        interference_image=WaveBuffer(img_i, fs),
        target_rir=rir_t,
        interference_rir=rir_i,
        scenario=scenario,
        spec=spec,
        target_onset=t_on,
        interference_onset=i_on,
        overlap=(ov0, ov1),
        solo=solo,
    )


def measured_sir(result: MixtureResult, ref_channel: int = 0) -> float:
    a, b = result.overlap
    p_t = np.mean(result.target_image.samples[ref_channel, a:b] ** 2)
    p_i = np.mean(result.interference_image.samples[ref_channel, a:b] ** 2)
    return 10.0 * math.log10(p_t / p_i)


def sample_protocol_scenario(
    rt60_band="weak",
    seed: int = 0,
    wall_clearance: float = 0.5,
    min_src_dist: float = 1.0,
    max_src_dist: float = 5.0,
    min_talker_sep: float = 1.0,
) -> RoomScenario:
    """Random room following the simulation protocol.

    Room size is uniform in [3, 3, 2.5]..[8, 6, 4] m and RT60 uniform in the
    band (``"weak"`` = [0.1, 0.6] s, ``"strong"`` = [0.5, 0.7] s, or an
    explicit ``(lo, hi)`` pair).  Array height is drawn from [0.8, 1.5] m and
    talker height from [1.0, 2.0] m; talkers are rejection-sampled to keep
    ``wall_clearance`` from every wall, ``min_src_dist``..``max_src_dist``
    from the array centre and ``min_talker_sep`` from each other.
    """
    if isinstance(rt60_band, str):
        if rt60_band not in RT60_BANDS:
            raise RoomError(f"unknown band {rt60_band!r}; choose from {sorted(RT60_BANDS)}")
        band_name, (lo, hi) = rt60_band, RT60_BANDS[rt60_band]
    else:
        band_name, (lo, hi) = None, rt60_band
    rng = np.random.default_rng(seed)
    dims = rng.uniform(ROOM_MIN, ROOM_MAX)
    rt60 = float(rng.uniform(lo, hi))
    half_ap = sum(DEFAULT_SPACINGS) / 2.0
    for _ in range(10000):
        origin = np.array(
            [
                rng.uniform(wall_clearance + half_ap, dims[0] - wall_clearance - half_ap),
                rng.uniform(wall_clearance, dims[1] - wall_clearance),
                rng.uniform(0.8, 1.5),
            ]
        )
        talkers = []
        for _ in range(2):
            for _ in range(1000):
                p = np.array(
                    [
                        rng.uniform(wall_clearance, dims[0] - wall_clearance),
                        rng.uniform(wall_clearance, dims[1] - wall_clearance),
                        rng.uniform(1.0, min(2.0, dims[2] - wall_clearance)),
                    ]
                )
                r = np.linalg.norm(p - origin)
                if not min_src_dist <= r <= max_src_dist:
                    continue
                if talkers and np.linalg.norm(p - talkers[0]) < min_talker_sep:
                    continue
                talkers.append(p)
                break
        if len(talkers) == 2:
            break
    else:  # pragma: no cover - the default box always admits a placement
        raise RoomError("could not place talkers")
    exact = EXACT_ORDER.get(band_name, 17) if band_name else 17
    return RoomScenario(
        room_dims=tuple(float(v) for v in dims),
        rt60_target=rt60,
        array_origin=tuple(float(v) for v in origin),
        source_positions=tuple(tuple(float(v) for v in t) for t in talkers),
        exact_order=exact,
        seed=seed,
    )


def kernel_from_scenario(scenario: RoomScenario, source: int, config: StftConfig, K: int = 10) -> ConvKernel:
    return rir_to_kernel(simulate_rir(scenario, source, config.sample_rate, config.sound_speed), config, K)

