import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from solosf.dsp import WaveBuffer
from solosf.features import FeatureMap, MicPair
from solosf.io import (
    ConfigError,
    FormatError,
    RunConfig,
    export_heatmap,
    heatmap_levels,
    load_tensor,
    parse_pairs,
    read_pgm,
    read_wav,
    save_tensor,
    tensor_from_bytes,
    tensor_nbytes,
    tensor_to_bytes,
    write_wav,
)

# -- WAV -------------------------------------------------------------------


def test_float_wav_round_trip_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (3, 1000)).astype(np.float32).astype(np.float64)
    write_wav(WaveBuffer(x, 16000), tmp_path / "a.wav")
    y = read_wav(tmp_path / "a.wav")
    assert y.sample_rate == 16000 and np.array_equal(y.samples, x)


def test_float64_wav_round_trip(tmp_path):
    x = np.random.default_rng(1).standard_normal((2, 300))
    write_wav(WaveBuffer(x, 8000), tmp_path / "a.wav", "float64")
    assert np.array_equal(read_wav(tmp_path / "a.wav").samples, x)


def test_pcm16_mono(tmp_path):
    x = np.sin(np.arange(1600) / 5.0) * 0.9
    write_wav(WaveBuffer(x, 16000), tmp_path / "m.wav", "pcm16")
    rate, raw = wavfile.read(tmp_path / "m.wav")
    assert raw.dtype == np.int16 and raw.ndim == 1
    y = read_wav(tmp_path / "m.wav")
    assert y.sample_rate == 16000 and y.num_channels == 1
    assert np.max(np.abs(y.samples[0] - x)) <= 0.5 / 32768


def test_pcm16_clips(tmp_path):
    write_wav(WaveBuffer(np.array([2.0, -2.0, 1.0]), 16000), tmp_path / "c.wav", "pcm16")
    _, raw = wavfile.read(tmp_path / "c.wav")
    assert raw.tolist() == [32767, -32768, 32767]


@pytest.mark.parametrize("cut", [1, 4, 8, 100])
def test_truncated_wav_rejected(tmp_path, cut):
    write_wav(WaveBuffer(np.zeros((2, 500))), tmp_path / "a.wav")
    data = (tmp_path / "a.wav").read_bytes()
    (tmp_path / "t.wav").write_bytes(data[:-cut])
    with pytest.raises(FormatError, match="truncated"):
        read_wav(tmp_path / "t.wav")


def test_malformed_headers(tmp_path):
    (tmp_path / "x.wav").write_bytes(b"not a wave file at all")
    with pytest.raises(FormatError, match="RIFF"):
        read_wav(tmp_path / "x.wav")
    write_wav(WaveBuffer(np.zeros(100)), tmp_path / "a.wav")
    (tmp_path / "h.wav").write_bytes((tmp_path / "a.wav").read_bytes()[:20])
    with pytest.raises(FormatError):
        read_wav(tmp_path / "h.wav")


def test_unsupported_codec(tmp_path):
    wavfile.write(tmp_path / "i.wav", 16000, np.zeros(100, dtype=np.int32))
    with pytest.raises(FormatError, match="unsupported"):
        read_wav(tmp_path / "i.wav")
    with pytest.raises(FormatError):
        write_wav(WaveBuffer(np.zeros(10)), tmp_path / "o.wav", "pcm24")


# -- tensors -----------------------------------------------------------------


def test_complex_kernel_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    k = rng.standard_normal((10, 257, 8)) + 1j * rng.standard_normal((10, 257, 8))
    save_tensor(k, tmp_path / "k.sst")
    back = load_tensor(tmp_path / "k.sst")
    assert back.dtype == np.complex128 and np.array_equal(back, k)


@pytest.mark.parametrize("dtype", [np.float32, np.float64, np.complex64, np.int8, np.int32, np.int64])
def test_dtype_round_trip(dtype):
    a = (np.arange(24).reshape(2, 3, 4) - 5).astype(dtype)
    b = tensor_from_bytes(tensor_to_bytes(a))
    assert b.dtype == a.dtype and np.array_equal(a, b)


def test_big_endian_input_stored_little_endian():
    a = np.arange(6, dtype=">f8").reshape(2, 3)
    buf = tensor_to_bytes(a)
    assert buf[8 + 16 :][:8] == struct.pack("<d", 0.0) and buf[8 + 16 :][8:16] == struct.pack("<d", 1.0)
    assert np.array_equal(tensor_from_bytes(buf), a)


def test_header_layout():
    buf = tensor_to_bytes(np.zeros((2, 5), np.float64))
    assert buf[:4] == b"SSFT"
    assert struct.unpack("<BBBB", buf[4:8]) == (1, 2, 2, 0)
    assert struct.unpack("<2Q", buf[8:24]) == (2, 5)
    assert len(buf) == 24 + 80


def test_corrupted_tensors():
    buf = bytearray(tensor_to_bytes(np.ones((3, 4))))
    with pytest.raises(FormatError, match="magic"):
        tensor_from_bytes(b"XXXX" + bytes(buf[4:]))
    bad = bytearray(buf)
    bad[5] = 99
    with pytest.raises(FormatError, match="dtype"):
        tensor_from_bytes(bytes(bad))
    bad = bytearray(buf)
    bad[8] = 4  # shape says 4 rows
    with pytest.raises(FormatError, match="payload"):
        tensor_from_bytes(bytes(bad))
    with pytest.raises(FormatError, match="payload"):
        tensor_from_bytes(bytes(buf[:-1]))
    with pytest.raises(FormatError, match="header"):
        tensor_from_bytes(bytes(buf[:12]))
    with pytest.raises(FormatError):
        tensor_to_bytes(np.array(["a"]))


@given(st.lists(st.integers(0, 6), min_size=0, max_size=4), st.sampled_from(["<f4", "<f8", "<c8", "<c16", "<i1", "<i4", "<i8"]))
@settings(max_examples=60, deadline=None)
def test_payload_length_formula(shape, dtype):
    a = np.zeros(shape, dtype=dtype)
    buf = tensor_to_bytes(a)
    itemsize = {"<f4": 4, "<f8": 8, "<c8": 8, "<c16": 16, "<i1": 1, "<i4": 4, "<i8": 8}[dtype]
    n = 1
    for s in shape:
        n *= s
    assert len(buf) == 8 + 8 * len(shape) + n * itemsize
    assert tensor_nbytes(shape, dtype) == n * itemsize
    assert tensor_from_bytes(buf).shape == tuple(shape)


# -- heatmaps ----------------------------------------------------------------


@pytest.mark.parametrize("value, level", [(1.0, 255), (-1.0, 0), (0.0, 128), (0.5, 191), (2.0, 255), (-3.0, 0)])
def test_sf_level_mapping(value, level):
    assert np.all(heatmap_levels(FeatureMap(np.full((3, 4), value), "solo_sf")) == level)


def test_lps_min_max():
    lv = heatmap_levels(FeatureMap(np.array([[-18.0, 0.0, 2.0]]), "lps"))
    assert lv.tolist() == [[0, 230, 255]]
    assert np.all(heatmap_levels(FeatureMap(np.full((2, 2), 4.0), "lps")) == 0)


def test_pgm_file(tmp_path):
    data = np.zeros((5, 3))
    data[:, 0] = 1.0  # lowest frequency bright
    export_heatmap(FeatureMap(data, "sf3d"), tmp_path / "h.pgm")
    raw = (tmp_path / "h.pgm").read_bytes()
    assert raw.startswith(b"P5\n5 3\n255\n")
    img = read_pgm(tmp_path / "h.pgm")
    assert img.shape == (3, 5)
    assert np.all(img[-1] == 255) and np.all(img[:-1] == 128)


def test_pgm_pixels_that_look_like_whitespace(tmp_path):
    data = np.full((4, 2), (32 / 255) * 2 - 1)  # maps to byte 32 (space)
    export_heatmap(FeatureMap(data, "sf3d"), tmp_path / "w.pgm")
    assert np.all(read_pgm(tmp_path / "w.pgm") == 32)


def test_heatmap_rejects_non_finite():
    with pytest.raises(FormatError):
        heatmap_levels(np.array([[np.nan]]), "lps")


# -- config ------------------------------------------------------------------


def test_config_defaults_and_round_trip():
    cfg = RunConfig()
    assert (cfg.window_len, cfg.hop, cfg.fft_size, cfg.K) == (400, 160, 512, 10)
    edited = cfg.replace(band="strong", windowed=True, out_dir="x y", sir_min=-3.5, azimuth=0.1, distance=1.5)
    assert RunConfig.from_text(edited.to_text()) == edited
    # unset geometry stays NaN, which never compares equal, so check the text
    assert RunConfig.from_text(cfg.to_text()).to_text() == cfg.to_text()


def test_config_parse():
    cfg = RunConfig.from_text("# comment\nK = 5\n\nwindowed = yes  # inline\npairs = 0-1, 2-3\n")
    assert cfg.K == 5 and cfg.windowed is True
    assert cfg.pair_set(4).pairs == (MicPair(0, 1), MicPair(2, 3))


@pytest.mark.parametrize(
    "text, match",
    [
        ("colour = red", "unknown config key"),
        ("K = ten", "expects int"),
        ("K = 3\nK = 4", "duplicate"),
        ("just words", "expected"),
        ("windowed = maybe", "expects bool"),
        ("K = 0", "K must"),
        ("strategy = median", "strategy"),
        ("band = medium", "band"),
        ("hop = 600", "hop"),
        ("sir_min = 7", "sir_min"),
        ("overlap_min = 0", "overlap"),
        ("pairs = 0:1", "bad pair"),
        ("array_spacings = 0.1,x", "array_spacings"),
    ],
)
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        RunConfig.from_text(text)


def test_pairs_checked_against_mic_count():
    assert parse_pairs("all") is None
    with pytest.raises(ValueError):
        parse_pairs("0-9", num_mics=8)


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        RunConfig.from_file(tmp_path / "missing.cfg")


def test_custom_band_and_offsets():
    cfg = RunConfig(band="custom", rt60_min=0.2, rt60_max=0.3)
    assert cfg.rt60_band() == (0.2, 0.3)
    assert RunConfig().rt60_band() == "weak"
    np.testing.assert_allclose(RunConfig().mic_offsets(), [-0.4, -0.25, -0.15, -0.1, 0.1, 0.15, 0.25, 0.4])
