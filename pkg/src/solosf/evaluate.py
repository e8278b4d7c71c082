"""Oracle evaluation of spatial-feature quality.

A good target-speaker feature is high on time-frequency bins the target
dominates and low where the interferer does.  With simulated mixtures both
reverberant images are known, so every bin can be labelled exactly and a
feature scored by the gap between its class means ("separation") and by the
AUC of classifying target against interference bins.
"""

from __future__ import annotations

import io
import statistics
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .dsp import ComplexSpectrogram, StftConfig, stft
from .features import (
    DegenerateKernelWarning,
    FeatureMap,
    PairSet,
    compute_rir_sf,
    compute_solo_sf,
    sf3d_from_bearing,
)
from .room import MixtureResult, MixtureSpec, rir_to_kernel, sample_protocol_scenario, synthesize_mixture
from .select import SoloPart, select_compose, select_max, select_random
from .speech import Talker, speech_like

SILENT, TARGET, INTERFERENCE = 0, 1, 2
METHODS = ("rir_gt", "solo_compose", "solo_max", "solo_random", "3d_gt")
REPORT_COLUMNS = ("method", "rt60_band", "sir_db", "separation", "auc", "n")


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class DominanceMask:
    mask: np.ndarray  # [T, F] of SILENT / TARGET / INTERFERENCE
    energy_floor: float = 1e-3

    @property
    def n_target(self) -> int:
        return int(np.count_nonzero(self.mask == TARGET))

    @property
    def n_interference(self) -> int:
        return int(np.count_nonzero(self.mask == INTERFERENCE))

    @property
    def n_silent(self) -> int:
        return int(np.count_nonzero(self.mask == SILENT))


@dataclass(frozen=True)
class DiscriminabilityReport:
    feature_kind: str
    mean_target: float
    mean_interf: float
    separation: float
    auc: float
    n_target: int
    n_interf: int
    condition: dict = field(default_factory=dict)


def _ref_magnitude(spec, ref_channel):
    if isinstance(spec, ComplexSpectrogram):
        data = spec.data
    else:
        data = np.asarray(spec)
    if data.ndim == 3:
        data = data[:, :, ref_channel]
    return np.abs(data)


def oracle_dominance_mask(target_spec, interf_spec, floor: float = 1e-3, ref_channel: int = 0) -> DominanceMask:
    """Label each bin by which reverberant image is louder on the reference channel.

    Bins where both magnitudes are below ``floor`` times the global peak are
    silent; ties go to the interference.
    """
    a = _ref_magnitude(target_spec, ref_channel)
    b = _ref_magnitude(interf_spec, ref_channel)
    if a.shape != b.shape:
        raise EvaluationError(f"target {a.shape} and interference {b.shape} spectrograms differ in shape")
    thresh = floor * max(a.max(), b.max())
    mask = np.where(a > b, TARGET, INTERFERENCE).astype(np.int8)
    mask[(a < thresh) & (b < thresh)] = SILENT
    return DominanceMask(mask, floor)


def auc_score(pos: np.ndarray, neg: np.ndarray) -> float:
    """Mann-Whitney AUC with midranks for ties."""
    ranks = rankdata(np.concatenate([pos, neg]))
    n1, n2 = len(pos), len(neg)
    u = ranks[:n1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n2))


def score_feature(feature: FeatureMap | np.ndarray, mask: DominanceMask, min_bins: int = 10, condition=None) -> DiscriminabilityReport:
    data = feature.data if isinstance(feature, FeatureMap) else np.asarray(feature)
    kind = feature.kind if isinstance(feature, FeatureMap) else "array"
    if data.shape != mask.mask.shape:
        raise EvaluationError(f"feature {data.shape} and mask {mask.mask.shape} differ in shape")
    pos = data[mask.mask == TARGET]
    neg = data[mask.mask == INTERFERENCE]
    if len(pos) < min_bins or len(neg) < min_bins:
        raise EvaluationError(f"degenerate mask: {len(pos)} target / {len(neg)} interference bins (need {min_bins})")
    mt, mi = float(pos.mean()), float(neg.mean())
    return DiscriminabilityReport(kind, mt, mi, mt - mi, auc_score(pos, neg), len(pos), len(neg), dict(condition or {}))


# --------------------------------------------------------------------------
# strategy comparison


@dataclass(frozen=True)
class ProtocolSettings:
    """Per-mixture randomisation of the two-talker protocol."""

    band: str = "weak"
    sir_range: tuple = (-6.0, 6.0)
    overlap_range: tuple = (0.5, 1.0)
    target_duration: tuple = (3.0, 5.0)
    solo_duration: float = 2.0
    fs: int = 16000


def mixture_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def simulate_protocol_mixture(seed: int, settings: ProtocolSettings = ProtocolSettings()) -> MixtureResult:
    """One protocol mixture with a 2 s solo part of the target rendered through the target RIR."""
    rng = np.random.default_rng([seed, 99])
    scenario = sample_protocol_scenario(settings.band, seed)
    spk_t, spk_i = rng.integers(0, 2**31, size=2)
    talker_t, talker_i = Talker.random(int(spk_t)), Talker.random(int(spk_i))
    dur_t = rng.uniform(*settings.target_duration)
    ratio = rng.uniform(*settings.overlap_range)
    dur_i = max(rng.uniform(*settings.target_duration), ratio * dur_t + 0.01)
    fs = settings.fs
    target = speech_like(dur_t, fs, int(rng.integers(2**31)), talker_t)
    interf = speech_like(dur_i, fs, int(rng.integers(2**31)), talker_i)
    solo = speech_like(settings.solo_duration, fs, int(rng.integers(2**31)), talker_t)
    spec = MixtureSpec(sir_db=float(rng.uniform(*settings.sir_range)), overlap_ratio=float(ratio), seed=int(rng.integers(2**31)))
    result = synthesize_mixture(target, interf, scenario, spec, solo_dry=solo)
    result.metadata.update(band=settings.band, seed=seed)
    return result


def method_features(result: MixtureResult, config: StftConfig, K: int, pairs: PairSet, seed: int = 0) -> dict:
    """Feature maps of every compared method on one mixture."""
    if result.solo is None:
        raise EvaluationError("mixture has no solo part")
    Y = stft(result.mixture, config)
    P = SoloPart.from_spectrogram(stft(result.solo, config), "solo part")
    R = rir_to_kernel(result.target_rir, config, K)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateKernelWarning)
        return {
            "rir_gt": compute_rir_sf(Y, R, pairs),
            "solo_compose": compute_solo_sf(Y, select_compose(P, K), pairs),
            "solo_max": compute_solo_sf(Y, select_max(P, K), pairs),
            "solo_random": compute_solo_sf(Y, select_random(P, K, seed), pairs),
            "3d_gt": sf3d_from_bearing(Y, result.scenario.bearing(0), pairs),
        }


def score_mixture(result: MixtureResult, config: StftConfig, K: int, pairs: PairSet, seed: int = 0, floor: float = 1e-3) -> dict:
    mask = oracle_dominance_mask(stft(result.target_image, config), stft(result.interference_image, config), floor)
    cond = {"sir_db": result.spec.sir_db, "rt60": result.scenario.rt60_target, "band": result.metadata.get("band")}
    feats = method_features(result, config, K, pairs, seed)
    return {name: score_feature(f, mask, condition=cond) for name, f in feats.items()}


@dataclass(frozen=True)
class StrategyRow:
    method: str
    rt60_band: str
    sir_db: float
    separation: float
    auc: float
    n: int
    separation_std: float = 0.0


@dataclass(frozen=True)
class StrategyTable:
    rows: tuple
    per_mixture: tuple = ()

    def row(self, method: str) -> StrategyRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def ordering(self, key: str = "separation") -> list:
        return [r.method for r in sorted(self.rows, key=lambda r: -getattr(r, key))]

    def to_tsv(self) -> str:
        buf = io.StringIO()
        buf.write("\t".join(REPORT_COLUMNS) + "\n")
        for r in self.rows:
            buf.write(f"{r.method}\t{r.rt60_band}\t{r.sir_db:.4f}\t{r.separation:.6f}\t{r.auc:.6f}\t{r.n}\n")
        return buf.getvalue()

    def summary(self) -> str:
        lines = ["method         separation (std)      auc      n"]
        for r in self.rows:
            lines.append(f"{r.method:<14} {r.separation:+.4f} ({r.separation_std:.4f})  {r.auc:.4f}  {r.n}")
        lines.append("ordering by separation: " + " > ".join(self.ordering()))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows], "ordering": self.ordering()}


def _reduce(scores: list, band: str) -> StrategyTable:
    # statistics.mean/pstdev work in exact rationals: the result does not
    # depend on summation order, and identical inputs give exactly zero spread
    rows = []
    for method in METHODS:
        sep = np.array([s[method].separation for s in scores])
        auc = np.array([s[method].auc for s in scores])
        sir = np.array([s[method].condition["sir_db"] for s in scores])
        rows.append(
            StrategyRow(
                method=method,
                rt60_band=band,
                sir_db=float(sir.mean()),
                separation=statistics.mean(sep.tolist()),
                auc=statistics.mean(auc.tolist()),
                n=len(sep),
                separation_std=statistics.pstdev(sep.tolist()),
            )
        )
    per = tuple({m: (s[m].separation, s[m].auc) for m in METHODS} for s in scores)
    return StrategyTable(tuple(rows), per)


def _score_job(args):
    result, config, K, pairs, seed = args
    return score_mixture(result, config, K, pairs, seed)


def compare_strategies(
    batch: list,
    config: StftConfig | None = None,
    K: int = 10,
    pairs: PairSet | None = None,
    min_batch: int = 30,
    workers: int = 1,
    seed: int = 0,
) -> StrategyTable:
    """Mean separation / AUC of each method over a batch of mixtures.

    Results are reduced in batch order, so the table does not depend on
    ``workers``.
    """
    if len(batch) < min_batch:
        raise EvaluationError(f"insufficient batch: {len(batch)} mixtures < {min_batch}")
    config = config or StftConfig()
    pairs = pairs or PairSet.all_pairs(batch[0].mixture.num_channels)
    jobs = [(r, config, K, pairs, mixture_seed(seed, i)) for i, r in enumerate(batch)]
    scores = _map(_score_job, jobs, workers)
    band = batch[0].metadata.get("band") or "custom"
    return _reduce(scores, band)


def _simulate_and_score(args):
    seed, settings, config, K, pairs = args
    result = simulate_protocol_mixture(seed, settings)
    return score_mixture(result, config, K, pairs, seed)


def run_protocol(
    band: str = "weak",
    n: int = 50,
    seed: int = 0,
    config: StftConfig | None = None,
    K: int = 10,
    pairs: PairSet | None = None,
    workers: int = 1,
    settings: ProtocolSettings | None = None,
) -> StrategyTable:
    """Simulate ``n`` protocol mixtures and compare methods; each job builds and scores one mixture."""
    config = config or StftConfig()
    settings = settings or ProtocolSettings(band=band, fs=config.sample_rate)
    pairs = pairs or PairSet.all_pairs(len(sample_protocol_scenario(band, 0).array_spacings) + 1)
    if n < 1:
        raise EvaluationError("n must be positive")
    jobs = [(mixture_seed(seed, i), settings, config, K, pairs) for i in range(n)]
    return _reduce(_map(_simulate_and_score, jobs, workers), band_label(band))


def band_label(band) -> str:
    if isinstance(band, str):
        return band
    lo, hi = band
    return f"{lo:g}-{hi:g}"



def _map(fn, jobs, workers):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=1))
