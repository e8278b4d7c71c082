import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from solosf.dsp import ComplexSpectrogram, StftConfig
from solosf.evaluate import (
    INTERFERENCE,
    METHODS,
    REPORT_COLUMNS,
    SILENT,
    TARGET,
    DominanceMask,
    EvaluationError,
    ProtocolSettings,
    auc_score,
    compare_strategies,
    mixture_seed,
    oracle_dominance_mask,
    run_protocol,
    score_mixture,
    score_feature,
    simulate_protocol_mixture,
)
from solosf.features import FeatureMap, PairSet

CFG = StftConfig()


def brute_auc(pos, neg):
    """Probability a positive outranks a negative, ties counted half."""
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


def spec_of(mag):
    return ComplexSpectrogram(np.asarray(mag, complex)[:, :, None], CFG)


# -- masks ------------------------------------------------------------------


def test_mask_interference_silent():
    rng = np.random.default_rng(0)
    t = rng.uniform(0.5, 1, (6, 257))
    m = oracle_dominance_mask(spec_of(t), spec_of(np.zeros_like(t)))
    assert np.all(m.mask == TARGET)


def test_mask_target_silent():
    rng = np.random.default_rng(1)
    i = rng.uniform(0.5, 1, (6, 257))
    m = oracle_dominance_mask(spec_of(np.zeros_like(i)), spec_of(i))
    assert m.n_target == 0 and m.n_interference == i.size


def test_mask_matches_scalar_comparison():
    rng = np.random.default_rng(2)
    a = rng.uniform(0.1, 1.0, (8, 257))
    b = rng.uniform(0.1, 1.0, (8, 257))
    a[0, :5] = b[0, :5]  # ties
    a[1, :5] = b[1, :5] = 1e-9  # silent
    m = oracle_dominance_mask(spec_of(a), spec_of(b), floor=1e-3)
    thr = 1e-3 * max(a.max(), b.max())
    for t in range(8):
        for f in range(257):
            if a[t, f] < thr and b[t, f] < thr:
                assert m.mask[t, f] == SILENT
            elif a[t, f] > b[t, f]:
                assert m.mask[t, f] == TARGET
            else:
                assert m.mask[t, f] == INTERFERENCE
    assert m.n_silent == 5
    assert m.n_target + m.n_interference + m.n_silent == a.size


def test_mask_uses_reference_channel_and_checks_shape():
    a = np.ones((3, 257, 2), complex)
    b = np.ones((3, 257, 2), complex)
    a[:, :, 1] = 5.0
    m0 = oracle_dominance_mask(ComplexSpectrogram(a, CFG), ComplexSpectrogram(b, CFG), ref_channel=0)
    m1 = oracle_dominance_mask(ComplexSpectrogram(a, CFG), ComplexSpectrogram(b, CFG), ref_channel=1)
    assert np.all(m0.mask == INTERFERENCE) and np.all(m1.mask == TARGET)
    with pytest.raises(EvaluationError):
        oracle_dominance_mask(spec_of(np.ones((3, 257))), spec_of(np.ones((4, 257))))


# -- scoring ----------------------------------------------------------------


def half_mask(shape=(10, 20)):
    m = np.full(shape, TARGET, np.int8)
    m[:, shape[1] // 2 :] = INTERFERENCE
    return DominanceMask(m)


def test_score_perfect_feature():
    mask = half_mask()
    f = np.where(mask.mask == TARGET, 1.0, -1.0)
    r = score_feature(FeatureMap(f, "solo_sf"), mask)
    assert r.separation == 2.0 and r.auc == 1.0
    assert r.n_target == 100 and r.n_interf == 100 and r.feature_kind == "solo_sf"


def test_score_constant_feature():
    r = score_feature(np.full((10, 20), 0.3), half_mask())
    assert r.separation == 0.0 and r.auc == 0.5


def test_auc_matches_pairwise_count():
    rng = np.random.default_rng(3)
    pos = np.round(rng.normal(0.5, 1, 150), 1)
    neg = np.round(rng.normal(0.0, 1, 170), 1)
    assert auc_score(pos, neg) == pytest.approx(brute_auc(pos, neg), abs=1e-12)


def test_silent_bins_ignored():
    m = half_mask().mask.copy()
    m[0, :] = SILENT
    f = np.where(m == TARGET, 1.0, -1.0)
    f[0, :] = 100.0
    r = score_feature(f, DominanceMask(m))
    assert r.separation == 2.0


def test_degenerate_mask():
    m = np.full((5, 5), TARGET, np.int8)
    with pytest.raises(EvaluationError, match="degenerate mask"):
        score_feature(np.zeros((5, 5)), DominanceMask(m))
    with pytest.raises(EvaluationError):
        score_feature(np.zeros((5, 6)), half_mask((5, 20)))


def test_shuffled_mask_auc_near_half():
    rng = np.random.default_rng(4)
    f = rng.standard_normal((100, 200))
    m = rng.choice([TARGET, INTERFERENCE], size=f.shape).astype(np.int8)
    r = score_feature(f, DominanceMask(m))
    assert abs(r.auc - 0.5) < 0.05


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_auc_rank_invariant_separation_not(seed):
    rng = np.random.default_rng(seed)
    mask = half_mask()
    f = rng.standard_normal((10, 20)) + (mask.mask == TARGET)
    a = score_feature(f, mask)
    b = score_feature(np.exp(3 * f), mask)  # strictly increasing transform
    assert a.auc == b.auc
    assert a.separation != pytest.approx(b.separation)


# -- protocol ----------------------------------------------------------------


@pytest.fixture(scope="module")
def mixture():
    return simulate_protocol_mixture(mixture_seed(0, 0), ProtocolSettings(band="weak"))


def test_protocol_mixture_contract(mixture):
    r = mixture
    assert r.mixture.num_channels == 8
    assert 0.1 <= r.scenario.rt60_target <= 0.6
    assert -6 <= r.spec.sir_db <= 6 and 0.5 <= r.spec.overlap_ratio <= 1
    assert r.solo.num_samples >= 2 * 16000
    assert np.array_equal(simulate_protocol_mixture(mixture_seed(0, 0)).mixture.samples, r.mixture.samples)


def test_identical_batch_zero_variance(mixture):
    table = compare_strategies([mixture] * 3, CFG, min_batch=3)
    for row in table.rows:
        assert row.n == 3
        if row.method != "solo_random":  # the random slice is reseeded per batch position
            assert row.separation_std == 0.0
    again = compare_strategies([mixture] * 3, CFG, min_batch=3)
    assert again.to_tsv() == table.to_tsv() and again.per_mixture == table.per_mixture
    assert [r.method for r in table.rows] == list(METHODS)
    assert table.to_tsv().splitlines()[0].split("\t") == list(REPORT_COLUMNS)


def test_insufficient_batch(mixture):
    with pytest.raises(EvaluationError, match="insufficient batch"):
        compare_strategies([mixture] * 29, CFG)


def test_solo_sf_favours_target_bins(mixture):
    scores = score_mixture(mixture, CFG, 10, PairSet.all_pairs(8))
    assert scores["solo_compose"].mean_target > scores["solo_compose"].mean_interf


def test_run_protocol_independent_of_workers():
    a = run_protocol("weak", n=3, seed=5, workers=1)
    b = run_protocol("weak", n=3, seed=5, workers=2)
    assert a.to_tsv() == b.to_tsv()
    assert a.per_mixture == b.per_mixture
    assert "ordering by separation" in a.summary()
