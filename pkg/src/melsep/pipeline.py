"""Full-track separation by half-overlapping chunks.

Chunks are taken every ``chunk_len / 2`` samples, separated independently and
glued back by plain averaging: each output sample is the mean of every chunk
sample that covers it.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import torch

from .model import ComplexMask, apply_mask
from .spectral import WindowConfig, as_waveform, istft, stft

PAD_POLICIES = ("zero", "shrink")


class PipelineError(ValueError):
    pass


@dataclass(frozen=True)
class ChunkPlan:
    chunk_len: int
    # "zero": always emit chunk_len chunks, zero-padding the tail.
    # "shrink": a track shorter than one chunk becomes a single unpadded chunk.
    pad_policy: str = "shrink"

    def __post_init__(self):
        if self.chunk_len < 2 or self.chunk_len % 2:
            raise PipelineError(f"chunk_len must be even and >= 2, got {self.chunk_len}")
        if self.pad_policy not in PAD_POLICIES:
            raise PipelineError(f"pad_policy must be one of {PAD_POLICIES}")

    @property
    def hop(self) -> int:
        return self.chunk_len // 2

    @classmethod
    def from_seconds(cls, seconds: float, sample_rate: int, **kw) -> "ChunkPlan":
        n = int(round(seconds * sample_rate))
        return cls(n + n % 2, **kw)

    def n_chunks(self, length: int) -> int:
        return math.ceil(max(length - self.chunk_len, 0) / self.hop) + 1


def chunk(waveform, plan: ChunkPlan):
    """Split ``(n, C)`` audio into ``(K, L, C)`` chunks and their start offsets."""
    x = np.asarray(waveform)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if n == 0:
        raise PipelineError("empty waveform")
    if plan.pad_policy == "shrink" and n < plan.chunk_len:
        return x[None].copy(), [0]
    positions = [k * plan.hop for k in range(plan.n_chunks(n))]
    chunks = np.zeros((len(positions), plan.chunk_len, x.shape[1]), dtype=x.dtype)
    for k, start in enumerate(positions):
        seg = x[start:start + plan.chunk_len]
        chunks[k, : len(seg)] = seg
    return chunks, positions


def deframe(chunks, positions, out_len: int) -> np.ndarray:
    """Overlap & average: mean of every chunk sample covering each output sample."""
    chunks = np.asarray(chunks)
    if len(chunks) != len(positions):
        raise PipelineError(f"{len(chunks)} chunks but {len(positions)} positions")
    total = np.zeros((out_len, chunks.shape[2]), dtype=np.float64)
    count = np.zeros(out_len, dtype=np.int64)
    for c, start in zip(chunks, positions):
        stop = min(start + len(c), out_len)
        if stop <= start:
            continue
        total[start:stop] += c[: stop - start]
        count[start:stop] += 1
    if np.any(count == 0):
        gap = np.flatnonzero(count == 0)
        raise PipelineError(f"coverage gap: samples {gap[0]}..{gap[-1]} not covered by any chunk")
    return total / count[:, None]


def separate_chunk(x: np.ndarray, estimator, window: WindowConfig) -> np.ndarray:
    spec = stft(x, window)
    with torch.no_grad():
        mask: ComplexMask = estimator(spec)
        return istft(apply_mask(spec, mask)).numpy()


def separate_track(waveform, estimator, plan: ChunkPlan | None = None,
                   window: WindowConfig | None = None, jobs: int = 1) -> np.ndarray:
    """stft -> mask -> istft per chunk, then overlap & average.

    ``estimator`` maps a :class:`ComplexSpectrogram` to a :class:`ComplexMask`
    (a ``MelRoformer`` or any callable with that contract). ``plan`` and
    ``window`` default to the estimator's config when it has one.
    """
    config = getattr(estimator, "config", None)
    if window is None:
        window = config.stft if config is not None else WindowConfig()
    if plan is None:
        seconds = config.chunk_seconds if config is not None else 4.0
        plan = ChunkPlan.from_seconds(seconds, window.sample_rate)
    if plan.chunk_len < window.fft_size:
        raise PipelineError(f"chunk_len {plan.chunk_len} shorter than fft_size {window.fft_size}")
    x = as_waveform(waveform).numpy().astype(np.float64)
    chunks, positions = chunk(x, plan)

    def work(c):
        return separate_chunk(c, estimator, window)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            outs = list(pool.map(work, chunks))  # map preserves order
    else:
        outs = [work(c) for c in chunks]
    return deframe(np.stack(outs), positions, len(x))
