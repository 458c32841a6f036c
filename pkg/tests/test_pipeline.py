import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from melsep.model import ComplexMask, MelRoformer
from melsep.pipeline import ChunkPlan, PipelineError, chunk, deframe, separate_chunk, separate_track
from melsep.spectral import WindowConfig, stft, istft
from melsep.trainer import overfit_model_config

from conftest import randomize

WIN = WindowConfig(512, 128, sample_rate=8000)


class ConstantMask:
    def __init__(self, real, imag=0.0):
        self.real, self.imag = real, imag

    def __call__(self, spec):
        return ComplexMask(torch.full_like(spec.real, self.real), torch.full_like(spec.imag, self.imag))


def test_plan_hop_is_half():
    assert ChunkPlan(1000).hop == 500
    with pytest.raises(PipelineError):
        ChunkPlan(1001)
    with pytest.raises(PipelineError):
        ChunkPlan(1000, pad_policy="mirror")


def test_single_chunk():
    x = np.arange(1000.0)[:, None]
    chunks, pos = chunk(x, ChunkPlan(1000))
    assert chunks.shape == (1, 1000, 1) and pos == [0]


def test_one_and_a_half_chunks():
    x = np.ones((1500, 2))
    chunks, pos = chunk(x, ChunkPlan(1000))
    assert pos == [0, 500]
    assert chunks.shape == (2, 1000, 2)
    assert np.all(chunks[1, :1000] == 1)


def test_tail_is_zero_padded():
    x = np.ones((1700, 1))
    chunks, pos = chunk(x, ChunkPlan(1000))
    assert pos == [0, 500, 1000]
    assert np.all(chunks[2, :700] == 1) and np.all(chunks[2, 700:] == 0)


def test_short_track_policies():
    x = np.ones((300, 1))
    assert chunk(x, ChunkPlan(1000))[0].shape == (1, 300, 1)
    padded = chunk(x, ChunkPlan(1000, pad_policy="zero"))[0]
    assert padded.shape == (1, 1000, 1) and padded[0, 300:].sum() == 0


def count_by_enumeration(n, chunk_len):
    hop = chunk_len // 2
    count, start = 0, 0
    while True:
        count += 1
        if start + chunk_len >= n:
            return count
        start += hop


@given(st.integers(1, 20000), st.integers(1, 3000))
def test_chunk_count(n, half):
    plan = ChunkPlan(2 * half, pad_policy="zero")
    assert plan.n_chunks(n) == math.ceil(max(n - plan.chunk_len, 0) / plan.hop) + 1
    assert plan.n_chunks(n) == count_by_enumeration(n, plan.chunk_len)


def test_deframe_single_chunk_identity():
    x = np.random.default_rng(0).standard_normal((1000, 2))
    chunks, pos = chunk(x, ChunkPlan(1000))
    assert np.array_equal(deframe(chunks, pos, 1000), x)


@settings(deadline=None)
@given(st.integers(1, 30000), st.integers(1, 2000), st.integers(0, 99))
def test_deframe_inverts_chunk(n, half, seed):
    x = np.random.default_rng(seed).standard_normal((n, 2))
    plan = ChunkPlan(2 * half)
    chunks, pos = chunk(x, plan)
    assert np.max(np.abs(deframe(chunks, pos, n) - x)) <= 1e-12


def test_deframe_averages_overlap():
    chunks = np.stack([np.full((4, 1), 2.0), np.full((4, 1), 5.0)])
    out = deframe(chunks, [0, 2], 6)
    assert out[:, 0].tolist() == [2.0, 2.0, 3.5, 3.5, 5.0, 5.0]


def test_deframe_gap():
    with pytest.raises(PipelineError, match="coverage gap"):
        deframe(np.ones((2, 4, 1)), [0, 6], 10)


# -- separation -------------------------------------------------------------------

@pytest.fixture
def track():
    return np.random.default_rng(1).standard_normal((8000 * 3 + 123, 2))


def test_ones_mask_reproduces_input(track):
    plan = ChunkPlan(4000)
    y = separate_track(track, ConstantMask(1.0), plan, WIN)
    assert y.shape == track.shape
    assert np.linalg.norm(y - track) / np.linalg.norm(track) <= 1e-6


def test_zero_mask_is_silence(track):
    y = separate_track(track, ConstantMask(0.0), ChunkPlan(4000), WIN)
    assert np.all(y == 0)


def test_no_boundary_discontinuity(track):
    plan = ChunkPlan(4000)
    y = separate_track(track, ConstantMask(1.0), plan, WIN)
    err = np.abs(y - track)[:, 0]
    for k in range(1, plan.n_chunks(len(track))):
        boundary = k * plan.hop
        assert err[boundary - 64:boundary + 64].max() <= 1e-9


def test_parallel_matches_serial(track):
    plan = ChunkPlan(4000)
    model = randomize(MelRoformer(overfit_model_config(window=WIN, n_bands=16)), scale=0.05)
    a = separate_track(track, model, plan, WIN, jobs=1)
    b = separate_track(track, model, plan, WIN, jobs=3)
    assert np.array_equal(a, b)


def test_short_track_matches_single_pass():
    model = randomize(MelRoformer(overfit_model_config(window=WIN, n_bands=16)), scale=0.05)
    x = np.random.default_rng(2).standard_normal((3000, 2))
    chunked = separate_track(x, model, ChunkPlan(4000), WIN)
    single = separate_chunk(x, model, WIN)
    assert np.max(np.abs(chunked - single)) <= 1e-6


def test_rotating_mask_matches_direct_computation(track):
    # mask = i rotates every bin by 90 degrees; check against istft of the rotated spectrogram
    x = track[:4000]
    y = separate_track(x, ConstantMask(0.0, 1.0), ChunkPlan(4000), WIN)
    spec = stft(x, WIN)
    expected = istft(spec.with_planes(-spec.imag, spec.real)).numpy()
    np.testing.assert_allclose(y, expected, atol=1e-12)


def test_chunk_shorter_than_fft_rejected(track):
    with pytest.raises(PipelineError):
        separate_track(track, ConstantMask(1.0), ChunkPlan(256), WIN)
