import struct

import numpy as np
import pytest

from melsep.data_io import WavError, load_track_dir, read_wav, synth_fixture, write_wav
from melsep.evaluation import sdr


def test_float32_round_trip_bitwise(tmp_path):
    x = np.random.default_rng(0).uniform(-1, 1, (1000, 2)).astype(np.float32)
    write_wav(tmp_path / "a.wav", x, 44100)
    y, sr = read_wav(tmp_path / "a.wav")
    assert sr == 44100 and y.dtype == np.float32
    assert np.array_equal(y.view(np.uint32), x.view(np.uint32))


def test_pcm16_full_scale_square(tmp_path):
    x = np.tile([1.0, -1.0], 50)
    write_wav(tmp_path / "sq.wav", x, 44100, "pcm16")
    y, _ = read_wav(tmp_path / "sq.wav")
    assert set(np.unique(y).tolist()) == {-1.0, 32767 / 32768}


def test_pcm24_round_trip(tmp_path):
    x = np.random.default_rng(1).uniform(-1, 1, (500, 2))
    write_wav(tmp_path / "b.wav", x, 48000, "pcm24")
    y, sr = read_wav(tmp_path / "b.wav")
    assert sr == 48000 and y.shape == (500, 2)
    assert np.max(np.abs(y - x)) <= 0.5 / 2**23 + 1e-12


def test_pcm24_extremes(tmp_path):
    x = np.array([-1.0, 1.0, 0.0, -0.5])
    write_wav(tmp_path / "c.wav", x, 8000, "pcm24")
    y, _ = read_wav(tmp_path / "c.wav")
    assert y[:, 0].tolist() == [-1.0, (2**23 - 1) / 2**23, 0.0, -0.5]


def test_mono_stays_mono(tmp_path):
    write_wav(tmp_path / "m.wav", np.zeros(100), 44100)
    y, _ = read_wav(tmp_path / "m.wav")
    assert y.shape == (100, 1)


def test_extensible_header(tmp_path):
    data = np.arange(8, dtype="<i2").tobytes()
    fmt = struct.pack("<HHIIHH", 0xFFFE, 2, 44100, 44100 * 4, 4, 16)
    fmt += struct.pack("<HHI", 22, 16, 3) + struct.pack("<H", 1) + b"\x00" * 14
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(data)) + data
    (tmp_path / "e.wav").write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    y, _ = read_wav(tmp_path / "e.wav")
    assert y.shape == (4, 2) and y[1, 1] == 3 / 32768


def test_unsupported_codec(tmp_path):
    fmt = struct.pack("<HHIIHH", 0x0055, 1, 44100, 44100, 1, 8)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", 2) + b"\x00\x00"
    (tmp_path / "mp3.wav").write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(WavError, match="unsupported codec"):
        read_wav(tmp_path / "mp3.wav")


@pytest.mark.parametrize("blob", [b"", b"RIFF\x00\x00\x00\x00WAVX", b"RIFF\x04\x00\x00\x00WAVE"])
def test_corrupt_header(tmp_path, blob):
    (tmp_path / "bad.wav").write_bytes(blob)
    with pytest.raises(WavError):
        read_wav(tmp_path / "bad.wav")


def test_non_finite_rejected(tmp_path):
    x = np.zeros(10, dtype=np.float32)
    x[3] = np.nan
    with pytest.raises(WavError):
        write_wav(tmp_path / "n.wav", x, 44100)
    raw = x.tobytes()
    fmt = struct.pack("<HHIIHH", 3, 1, 44100, 44100 * 4, 4, 32)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", len(raw)) + raw
    (tmp_path / "n.wav").write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(WavError, match="non-finite"):
        read_wav(tmp_path / "n.wav")


# -- track folders ----------------------------------------------------------------

def make_track(root, n=2000, stems=("vocals", "bass", "drums", "other"), lengths=None):
    folder = root / "song"
    folder.mkdir()
    rng = np.random.default_rng(0)
    write_wav(folder / "mixture.wav", rng.standard_normal((n, 2)) * 0.1, 44100)
    for i, s in enumerate(stems):
        m = lengths[i] if lengths else n
        write_wav(folder / f"{s}.wav", rng.standard_normal((m, 2)) * 0.1, 44100)
    return folder


def test_load_four_stems(tmp_path):
    bundle = load_track_dir(make_track(tmp_path))
    assert sorted(bundle.stems) == ["bass", "drums", "other", "vocals"]
    assert bundle.name == "song" and not bundle.warnings


def test_mismatched_lengths_truncated(tmp_path):
    bundle = load_track_dir(make_track(tmp_path, stems=("vocals", "bass"), lengths=[1990, 2000]))
    assert len(bundle) == 1990
    assert all(len(x) == 1990 for x in bundle.stems.values())
    assert len(bundle.warnings) == 2 and "mixture" in bundle.warnings[0]


def test_missing_mixture(tmp_path):
    folder = make_track(tmp_path)
    (folder / "mixture.wav").unlink()
    with pytest.raises(FileNotFoundError, match="mixture"):
        load_track_dir(folder)


def test_wrong_sample_rate_rejected(tmp_path):
    folder = tmp_path / "t"
    folder.mkdir()
    write_wav(folder / "mixture.wav", np.zeros(10), 22050)
    write_wav(folder / "vocals.wav", np.zeros(10), 22050)
    with pytest.raises(WavError, match="sample rate"):
        load_track_dir(folder)


# -- synthetic fixture ------------------------------------------------------------

def test_fixture_deterministic():
    a, b = synth_fixture(3), synth_fixture(3)
    assert np.array_equal(a.mixture, b.mixture)
    assert all(np.array_equal(a.stems[k], b.stems[k]) for k in a.stems)
    assert not np.array_equal(a.mixture, synth_fixture(4).mixture)


def test_fixture_mixture_is_exact_sum():
    f = synth_fixture(0)
    assert np.all(f.mixture - (f.stems["bass"] + f.stems["vocals"]) == 0)
    assert f.mixture.shape == (44100, 2)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fixture_spectrally_disjoint(seed):
    f = synth_fixture(seed)
    hz = np.fft.rfftfreq(len(f.mixture), 1 / f.sample_rate)
    split = 1500.0
    for name, foreign in (("bass", hz > split), ("vocals", hz < split)):
        power = np.abs(np.fft.rfft(f.stems[name], axis=0)) ** 2
        assert power[foreign].sum() / power.sum() <= 0.01


def test_fixture_headroom():
    f = synth_fixture(0)
    for stem in f.stems.values():
        score = sdr(stem, f.mixture)
        assert np.isfinite(score) and score < 3.0


def test_fixture_round_trips_through_folder(tmp_path):
    f = synth_fixture(0)
    bundle = load_track_dir(f.save(tmp_path))
    np.testing.assert_allclose(bundle.stems["vocals"], f.stems["vocals"], atol=1e-7)


def test_fixture_minimum_duration():
    with pytest.raises(ValueError):
        synth_fixture(0, duration=0.5)
