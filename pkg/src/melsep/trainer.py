"""Desk-scale training: L1 spectral + waveform loss, Adam updates, overfit harness."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from . import bandmap
from .data_io import TrackBundle, synth_fixture
from .evaluation import chunked_track_sdr
from .model import MelRoformer, ModelConfig, NumericalError, apply_mask
from .pipeline import ChunkPlan, separate_track
from .spectral import ComplexSpectrogram, WindowConfig, istft, stft

log = logging.getLogger(__name__)


class TrainingDiverged(NumericalError):
    pass


@dataclass(frozen=True)
class LossWeights:
    spectral: float = 1.0
    waveform: float = 1.0

    def __post_init__(self):
        if self.spectral < 0 or self.waveform < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.spectral == 0 and self.waveform == 0:
            raise ValueError("loss weights cannot both be zero")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    lr: float = 1e-3
    batch_size: int = 1
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    precision: str = "single"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def _planes(x):
    if isinstance(x, ComplexSpectrogram):
        return x.real, x.imag
    return x


def loss(est_spec, ref_spec, est_wave, ref_wave, weights: LossWeights = LossWeights()) -> torch.Tensor:
    """``spectral * mean|est - ref|`` over real and imag planes plus ``waveform * mean|est - ref|``."""
    total = 0.0
    if weights.spectral:
        (er, ei), (rr, ri) = _planes(est_spec), _planes(ref_spec)
        if er.shape != rr.shape or ei.shape != ri.shape:
            raise ValueError(f"spectrogram shape mismatch: {tuple(er.shape)} vs {tuple(rr.shape)}")
        spectral = torch.cat(((er - rr).flatten(), (ei - ri).flatten())).abs().mean()
        total = total + weights.spectral * spectral
    if weights.waveform:
        if est_wave.shape != ref_wave.shape:
            raise ValueError(f"waveform shape mismatch: {tuple(est_wave.shape)} vs {tuple(ref_wave.shape)}")
        total = total + weights.waveform * (est_wave - ref_wave).abs().mean()
    return total


@dataclass
class Example:
    """A training pair with the mixture spectrogram precomputed."""

    mixture: ComplexSpectrogram
    target_spec: ComplexSpectrogram
    target: torch.Tensor  # (n, C)

    @classmethod
    def from_waves(cls, mixture, target, window: WindowConfig, dtype=torch.float32) -> "Example":
        mix = torch.as_tensor(np.asarray(mixture), dtype=dtype)
        tgt = torch.as_tensor(np.asarray(target), dtype=dtype)
        return cls(stft(mix, window), stft(tgt, window), tgt)


def example_loss(model: MelRoformer, ex: Example, weights: LossWeights) -> torch.Tensor:
    est_spec = apply_mask(ex.mixture, model(ex.mixture))
    est_wave = istft(est_spec) if weights.waveform else None
    return loss(est_spec, ex.target_spec, est_wave, ex.target, weights)


def batch_loss(model, batch, weights) -> torch.Tensor:
    return sum(example_loss(model, ex, weights) for ex in batch) / len(batch)


def make_optimizer(model, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=config.lr)


def train_step(model: MelRoformer, optimizer, batch, config: TrainConfig) -> float:
    """One Adam update on ``batch`` (a list of :class:`Example`); returns the pre-update loss."""
    optimizer.zero_grad()
    try:
        value = batch_loss(model, batch, config.weights)
    except TrainingDiverged:
        raise
    except NumericalError as err:
        raise TrainingDiverged(f"diverged: {err}") from err
    if not torch.isfinite(value):
        raise TrainingDiverged(f"diverged: loss {value.item()}")
    value.backward()
    for p in model.parameters():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise TrainingDiverged("diverged: non-finite gradient")
    optimizer.step()
    return value.item()


def train(model: MelRoformer, examples: list[Example], config: TrainConfig, on_step=None) -> list[float]:
    """Run ``config.steps`` updates; batches are drawn with a seeded shuffle."""
    optimizer = make_optimizer(model, config)
    rng = np.random.default_rng(config.seed)
    order: list[int] = []
    losses = []
    for step in range(config.steps):
        batch = []
        while len(batch) < config.batch_size:
            if not order:
                order = rng.permutation(len(examples)).tolist()
            batch.append(examples[order.pop()])
        value = train_step(model, optimizer, batch, config)
        losses.append(value)
        if on_step is not None:
            on_step(step, value)
    return losses


def write_loss_csv(path, losses) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        w.writerows((i, f"{v:.9g}") for i, v in enumerate(losses))


def overfit_model_config(mode: str = "mel", window: WindowConfig = WindowConfig(), n_bands: int = 60,
                         precision: str = "single", stem: str = "vocals") -> ModelConfig:
    """The tiny configuration used by the overfit harness."""
    if mode == "mel":
        mapping = bandmap.mel_mapping(window.sample_rate, window.fft_size, n_bands)
    elif mode == "bandsplit":
        mapping = bandmap.bandsplit_mapping(bandmap.default_bandsplit_boundaries(), window.n_bins,
                                            window.sample_rate, window.fft_size)
    else:
        raise ValueError(f"mode must be 'mel' or 'bandsplit', got {mode!r}")
    return ModelConfig(mapping, embed_dim=32, heads=2, blocks=1, ffn_multiplier=2, mask_multiplier=2,
                       channels=2, precision=precision, stft=window, chunk_seconds=4.0, stem=stem)


@dataclass
class OverfitReport:
    mode: str
    initial_loss: float
    final_loss: float
    sdr: float
    losses: list[float]
    seconds: float
    model: MelRoformer | None = field(default=None, repr=False)

    @property
    def loss_ratio(self) -> float:
        return self.final_loss / self.initial_loss


def evaluate_on(model: MelRoformer, bundle: TrackBundle, stem: str) -> float:
    plan = ChunkPlan.from_seconds(model.config.chunk_seconds, bundle.sample_rate)
    est = separate_track(bundle.mixture, model, plan)
    return chunked_track_sdr(bundle.stems[stem], est, bundle.sample_rate).per_track


def overfit_fixture(config: TrainConfig = TrainConfig(), model_config: ModelConfig | None = None,
                    bundle: TrackBundle | None = None, mode: str = "mel", on_step=None) -> OverfitReport:
    """Fit one model to one synthetic 1 s mixture and score it on that mixture.

    The reported loss is the full-batch loss evaluated after training, so it is
    directly comparable with the loss of the untouched model.
    """
    bundle = bundle if bundle is not None else synth_fixture(config.seed)
    model_config = model_config or overfit_model_config(mode, precision=config.precision)
    dtype = model_config.dtype
    model = MelRoformer(model_config, seed=config.seed)
    ex = Example.from_waves(bundle.mixture, bundle.stems[model_config.stem], model_config.stft, dtype)

    started = time.perf_counter()
    with torch.no_grad():
        initial = batch_loss(model, [ex], config.weights).item()
    losses = train(model, [ex], config, on_step)
    with torch.no_grad():
        final = batch_loss(model, [ex], config.weights).item()
    if not np.isfinite(final):
        raise TrainingDiverged(f"diverged: final loss {final}")
    score = evaluate_on(model, bundle, model_config.stem)
    elapsed = time.perf_counter() - started
    log.info("overfit %s: loss %.4g -> %.4g, SDR %.2f dB, %.1f s", mode, initial, final, score, elapsed)
    return OverfitReport(mode, initial, final, score, losses, elapsed, model)


def ab_compare(config: TrainConfig = TrainConfig(), modes=("mel", "bandsplit")) -> dict[str, OverfitReport]:
    """Train one model per mapping mode on the same fixture and collect both reports."""
    bundle = synth_fixture(config.seed)
    return {mode: overfit_fixture(config, bundle=bundle, mode=mode) for mode in modes}
