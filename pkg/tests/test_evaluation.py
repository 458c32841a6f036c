import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from melsep.data_io import write_wav
from melsep.evaluation import (NameMismatch, SdrError, SdrReport, TrackSdr, chunked_track_sdr, dataset_sdr,
                               evaluate_dirs, sdr, write_reports)

from oracles import chunked_sdr_bruteforce

SR = 8000


def test_exact_match_hits_ceiling():
    x = np.random.default_rng(0).standard_normal(100)
    assert sdr(x, x) == 100.0
    assert sdr(x, x, ceiling=60.0) == 60.0


def test_half_scale():
    x = np.random.default_rng(1).standard_normal(1000)
    assert sdr(x, 0.5 * x) == pytest.approx(10 * np.log10(4), abs=1e-12)
    assert sdr(x, 0.5 * x) == pytest.approx(6.0206, abs=1e-4)


def test_constructed_ten_db_residual():
    rng = np.random.default_rng(2)
    ref = rng.standard_normal(20000)
    noise = rng.standard_normal(20000)
    noise *= np.sqrt(0.1 * np.sum(ref**2) / np.sum(noise**2))
    assert sdr(ref, ref + noise) == pytest.approx(10.0, abs=0.1)


@pytest.mark.parametrize("alpha", [0.5, 0.9, 2.0])
def test_scale_sensitivity(alpha):
    ref = np.random.default_rng(3).standard_normal((500, 2))
    assert sdr(ref, alpha * ref) == pytest.approx(-10 * np.log10((1 - alpha) ** 2), abs=1e-9)


def test_silence_estimate_is_zero_db():
    ref = np.random.default_rng(4).standard_normal(100)
    assert sdr(ref, np.zeros_like(ref)) == 0.0


def test_zero_reference_undefined():
    with pytest.raises(SdrError, match="undefined SDR"):
        sdr(np.zeros(10), np.ones(10))


def test_shape_mismatch():
    with pytest.raises(SdrError):
        sdr(np.ones(10), np.ones(11))


def test_stationary_pair_constant_chunks():
    ref = np.tile(np.random.default_rng(5).standard_normal(SR), 3)
    est = 0.5 * ref
    result = chunked_track_sdr(ref, est, SR)
    assert len(result.per_chunk) == 3
    assert result.per_track == result.per_chunk[0] == sdr(ref[:SR], est[:SR])


def test_odd_count_median():
    rng = np.random.default_rng(6)
    ref = rng.standard_normal(3 * SR)
    est = ref.copy()
    est[:SR] = 0  # 0 dB
    est[SR:2 * SR] = 0.5 * ref[SR:2 * SR]  # 6.02 dB
    result = chunked_track_sdr(ref, est, SR)  # third chunk exact -> 100 dB cap
    assert result.per_chunk == [0.0, pytest.approx(6.0206, abs=1e-4), 100.0]
    assert result.per_track == pytest.approx(6.0206, abs=1e-4)


def test_tail_dropped_and_silence_skipped():
    rng = np.random.default_rng(7)
    ref = rng.standard_normal(3 * SR + 500)
    ref[SR:2 * SR] = 0
    result = chunked_track_sdr(ref, 0.5 * ref, SR)
    assert len(result.per_chunk) == 2


def test_all_silent():
    with pytest.raises(SdrError, match="all chunks silent"):
        chunked_track_sdr(np.zeros(2 * SR), np.zeros(2 * SR), SR)


def test_too_short():
    with pytest.raises(SdrError):
        chunked_track_sdr(np.ones(SR - 1), np.ones(SR - 1), SR)


@given(st.integers(0, 2**31))
def test_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(SR, 5 * SR + SR // 2))
    ref = rng.standard_normal((n, 2))
    if rng.random() < 0.3:
        ref[SR:2 * SR] = 0
    est = ref + rng.uniform(0.01, 2.0) * rng.standard_normal((n, 2))
    if ref[:SR * (n // SR)].any():
        result = chunked_track_sdr(ref, est, SR)
        median, scores = chunked_sdr_bruteforce(ref, est, SR)
        assert result.per_chunk == scores
        assert result.per_track == median


def test_dataset_median():
    assert dataset_sdr([7.5]) == 7.5
    assert dataset_sdr([8, 10, 12]) == 10
    assert dataset_sdr([8, 10]) == 9
    with pytest.raises(SdrError):
        dataset_sdr([])


@given(st.lists(st.floats(-50, 100), min_size=1, max_size=20), st.randoms())
def test_dataset_permutation_invariant(scores, rnd):
    shuffled = scores[:]
    rnd.shuffle(shuffled)
    assert dataset_sdr(shuffled) == dataset_sdr(scores)


@given(st.integers(1, 10 * SR))
def test_chunk_accounting(n):
    n_chunks = n // SR
    assert n_chunks * SR + n % SR == n


# -- directory reports ------------------------------------------------------------

def write_set(root, tracks, scale=1.0, seed=0):
    rng = np.random.default_rng(seed)
    for t in tracks:
        (root / t).mkdir(parents=True)
        for stem in ("vocals", "bass"):
            write_wav(root / t / f"{stem}.wav", scale * rng.uniform(-0.5, 0.5, (2 * SR, 2)), SR)


def test_same_dir_all_capped(tmp_path):
    write_set(tmp_path / "ref", ["a", "b"])
    reports = evaluate_dirs(tmp_path / "ref", tmp_path / "ref")
    assert {r.stem for r in reports} == {"bass", "vocals"}
    assert all(r.dataset == 100.0 for r in reports)


def test_toy_set_known_median(tmp_path):
    write_set(tmp_path / "ref", ["a", "b", "c"])
    est = tmp_path / "est"
    write_set(est, ["a", "b", "c"])
    # overwrite with scaled references: SDR = -20 log10|1 - alpha|
    from melsep.data_io import read_wav
    alphas = {"a": 0.5, "b": 0.9, "c": 0.0}
    for t, a in alphas.items():
        for stem in ("vocals", "bass"):
            x, _ = read_wav(tmp_path / "ref" / t / f"{stem}.wav")
            write_wav(est / t / f"{stem}.wav", (a * x.astype(np.float64)), SR)
    reports = {r.stem: r for r in evaluate_dirs(tmp_path / "ref", est)}
    hand = np.median([-20 * np.log10(1 - a) for a in alphas.values()])
    assert reports["vocals"].dataset == pytest.approx(hand, abs=1e-4)


def test_name_mismatch(tmp_path):
    write_set(tmp_path / "ref", ["a", "b"])
    write_set(tmp_path / "est", ["a", "c"])
    with pytest.raises(NameMismatch) as err:
        evaluate_dirs(tmp_path / "ref", tmp_path / "est")
    assert "b/vocals" in err.value.offenders and "c/bass" in err.value.offenders


def test_report_files(tmp_path):
    report = SdrReport("vocals", {"x": TrackSdr(5.0, [4.0, 5.0, 6.0]), "y": TrackSdr(7.0, [7.0])})
    write_reports([report], tmp_path / "r.json", tmp_path / "r.csv")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc[0]["dataset"] == 6.0
    rows = (tmp_path / "r.csv").read_text().splitlines()
    assert rows[0] == "track,stem,sdr_db" and rows[-1] == "__dataset__,vocals,6.000000"
