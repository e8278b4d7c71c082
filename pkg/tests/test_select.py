import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from solosf.dsp import stft
from solosf.features import ConvKernel
from solosf.select import (
    SelectionError,
    SelectionStrategy,
    SoloPart,
    compose_offsets,
    kernel_energy_report,
    max_offset,
    random_offset,
    select_compose,
    select_kernel,
    select_max,
    select_random,
)
from solosf.speech import speech_like


def random_part(rng, G, F=6, M=3):
    return SoloPart(rng.standard_normal((G, F, M)) + 1j * rng.standard_normal((G, F, M)))


def brute_max(P, K, ref=0):
    best, best_c = -1.0, None
    for c in range(P.num_frames - K + 1):
        s = sum(abs(P.data[c, f, ref]) for f in range(P.data.shape[1]))
        if s > best:
            best, best_c = s, c
    return best_c


def brute_compose(P, K, ref=0):
    out = []
    for f in range(P.data.shape[1]):
        best, best_c = -1.0, None
        for c in range(P.num_frames - K + 1):
            if abs(P.data[c, f, ref]) > best:
                best, best_c = abs(P.data[c, f, ref]), c
        out.append(best_c)
    return out


# -- random ------------------------------------------------------------------


def test_random_G_equals_K():
    rng = np.random.default_rng(0)
    P = random_part(rng, 10)
    S = select_random(P, 10, seed=123)
    assert np.array_equal(S.data, P.data)
    assert np.all(S.start_frames == 0)


def test_random_is_deterministic():
    P = random_part(np.random.default_rng(1), 40)
    a, b = select_random(P, 10, seed=5), select_random(P, 10, seed=5)
    assert np.array_equal(a.data, b.data)


def test_random_uniformity_chi_square():
    G, K, n = 17, 10, 10_000
    counts = np.bincount([random_offset(G, K, s) for s in range(n)], minlength=G - K + 1)
    assert counts.size == 8
    p = 1 / 8
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) < 5 * sigma)
    chi2 = np.sum((counts - n * p) ** 2 / (n * p))
    assert chi2 < 7 + 5 * np.sqrt(2 * 7)


def test_random_slice_is_contiguous():
    P = random_part(np.random.default_rng(2), 30)
    S = select_random(P, 7, seed=9)
    c = int(S.start_frames[0])
    assert np.array_equal(S.data, P.data[c : c + 7])


# -- max ---------------------------------------------------------------------


def test_max_single_energetic_frame():
    data = np.zeros((30, 5, 2), complex)
    data[7] = 1.0
    assert max_offset(SoloPart(data), 10) == 7
    S = select_max(SoloPart(data), 10)
    assert np.array_equal(S.data, data[7:17])


def test_max_constant_magnitude_ties_to_zero():
    data = np.exp(1j * np.random.default_rng(3).uniform(0, 6, (20, 5, 2)))
    assert max_offset(SoloPart(data), 4) == 0


def test_max_ignores_peaks_past_last_valid_start():
    data = np.zeros((20, 3, 1), complex)
    data[15] = 10.0
    data[4] = 1.0
    assert max_offset(SoloPart(data), 10) == 4


@pytest.mark.parametrize("seed", range(20))
def test_max_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    P = random_part(rng, int(rng.integers(10, 40)))
    ref = int(rng.integers(0, 3))
    assert max_offset(P, 10, ref) == brute_max(P, 10, ref)


def test_max_windowed_mode():
    data = np.zeros((30, 2, 1), complex)
    data[3] = 5.0  # strongest single frame
    data[12:22] = 2.0  # strongest 10-frame window
    P = SoloPart(data)
    assert max_offset(P, 10) == 3
    assert max_offset(P, 10, windowed=True) == 12


# -- compose ----------------------------------------------------------------


def test_compose_G_equals_K():
    P = random_part(np.random.default_rng(4), 10)
    S = select_compose(P, 10)
    assert np.array_equal(S.data, P.data)
    assert np.all(S.start_frames == 0)


def test_compose_per_frequency_peak():
    data = 0.01 * np.ones((80, 4, 2), complex)
    data[50, 2, :] = 3.0
    S = select_compose(SoloPart(data), 10)
    assert S.start_frames[2] == 50
    assert np.all(S.start_frames[[0, 1, 3]] == 0)


@pytest.mark.parametrize("seed", range(20))
def test_compose_matches_brute_force_and_gather(seed):
    rng = np.random.default_rng(100 + seed)
    P = random_part(rng, int(rng.integers(10, 40)))
    K = int(rng.integers(1, 10))
    ref = int(rng.integers(0, 3))
    c = brute_compose(P, K, ref)
    assert compose_offsets(P, K, ref).tolist() == c
    S = select_compose(P, K, ref)
    for f, cf in enumerate(c):
        for k in range(K):
            for m in range(3):
                assert S.data[k, f, m] == P.data[cf + k, f, m]


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_compose_dominates_max_at_start(seed):
    rng = np.random.default_rng(seed)
    P = random_part(rng, int(rng.integers(10, 30)))
    c = max_offset(P, 10)
    c_f = compose_offsets(P, 10)
    F = P.data.shape[1]
    mag = np.abs(P.data[:, :, 0])
    assert np.all(mag[c_f, np.arange(F)] >= mag[c, np.arange(F)])


@given(st.integers(0, 2**32 - 1), st.sampled_from(["random", "max", "compose"]))
@settings(max_examples=50, deadline=None)
def test_channel_coherence(seed, kind):
    """Every channel of the kernel is read from the same frame of P."""
    rng = np.random.default_rng(seed)
    P = random_part(rng, int(rng.integers(10, 30)), F=5, M=4)
    S = select_kernel(P, 6, SelectionStrategy(kind, seed=seed % 1000))
    for f in range(5):
        c = int(S.start_frames[f])
        assert np.array_equal(S.data[:, f, :], P.data[c : c + 6, f, :])


# -- errors -------------------------------------------------------------------


@pytest.mark.parametrize("fn", [lambda P: select_random(P, 11), lambda P: select_max(P, 11), lambda P: select_compose(P, 11)])
def test_too_short(fn):
    with pytest.raises(SelectionError, match="solo part too short"):
        fn(random_part(np.random.default_rng(5), 10))


def test_strategy_validation():
    with pytest.raises(SelectionError):
        SelectionStrategy("median")
    P = random_part(np.random.default_rng(6), 20)
    with pytest.raises(SelectionError):
        select_kernel(P, 5, SelectionStrategy("max", ref_channel=3))


# -- energy report -------------------------------------------------------------


def test_energy_report_all_zero():
    rep = kernel_energy_report(ConvKernel(np.zeros((3, 5, 2))))
    assert rep.flagged_bins.tolist() == [0, 1, 2, 3, 4]
    assert rep.num_flagged == 10


def test_energy_report_one_silent_row():
    data = np.ones((3, 5, 2), complex)
    data[:, 3, :] = 0.0
    rep = kernel_energy_report(ConvKernel(data))
    assert rep.flagged_bins.tolist() == [3]
    rows = list(rep.to_rows())
    assert len(rows) == 10 and rows[6] == (3, 0, 0.0, True)


def test_compose_has_fewer_low_energy_bins_than_random_on_speech():
    P = SoloPart.from_spectrogram(stft(speech_like(2.0, seed=3)))
    assert P.num_frames == 198
    n_compose = kernel_energy_report(select_compose(P, 10)).num_flagged
    n_random = kernel_energy_report(select_random(P, 10, seed=0)).num_flagged
    assert n_compose < n_random
