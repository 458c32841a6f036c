"""STFT / iSTFT front-end.

Waveforms are ``(samples, channels)`` arrays; spectrograms keep real and
imaginary planes as separate ``(F, T, C)`` tensors so that both can be fed
to the band projection. Everything stays in torch so gradients flow through
the resynthesis used by the waveform loss.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

WINDOWS = ("hann", "boxcar")


class SpectralError(ValueError):
    pass


def make_window(name: str, size: int, dtype=torch.float64) -> torch.Tensor:
    if name == "hann":
        return torch.hann_window(size, periodic=True, dtype=dtype)
    if name == "boxcar":
        return torch.ones(size, dtype=dtype)
    raise SpectralError(f"unknown window {name!r}; expected one of {WINDOWS}")


def cola_deviation(window: np.ndarray, hop: int) -> float:
    """Max relative deviation of the shifted window sum from its mean."""
    n = len(window)
    acc = np.zeros(hop)
    for start in range(0, n, hop):
        seg = window[start:start + hop]
        acc[: len(seg)] += seg
    return float(np.max(np.abs(acc - acc.mean())) / acc.mean())


@dataclass(frozen=True)
class WindowConfig:
    fft_size: int = 2048
    hop: int = 512
    window: str = "hann"
    sample_rate: int = 44100
    # Drop the Nyquist bin so F = fft_size/2 (1024 for a 2048 FFT). Lossy.
    drop_nyquist: bool = False

    def __post_init__(self):
        if self.fft_size < 2 or self.fft_size & (self.fft_size - 1):
            raise SpectralError(f"fft_size must be a power of two >= 2, got {self.fft_size}")
        if not 0 < self.hop <= self.fft_size:
            raise SpectralError(f"hop must be in (0, fft_size], got {self.hop}")
        w = make_window(self.window, self.fft_size).numpy()
        if np.any(w < 0):
            raise SpectralError("window weights must be nonnegative")
        if cola_deviation(w, self.hop) > 1e-10:
            raise SpectralError(f"{self.window} window with hop {self.hop} violates COLA")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + (0 if self.drop_nyquist else 1)

    def n_frames(self, length: int) -> int:
        # centered framing pads fft_size//2 on each side
        return length // self.hop + 1

    def to_dict(self) -> dict:
        return {
            "fft_size": self.fft_size,
            "hop": self.hop,
            "window": self.window,
            "sample_rate": self.sample_rate,
            "drop_nyquist": self.drop_nyquist,
        }


@dataclass(frozen=True)
class ComplexSpectrogram:
    real: torch.Tensor  # (F, T, C)
    imag: torch.Tensor  # (F, T, C)
    config: WindowConfig = field(default_factory=WindowConfig)
    length: int | None = None  # source waveform length, for exact istft

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise SpectralError(f"real/imag shape mismatch: {tuple(self.real.shape)} vs {tuple(self.imag.shape)}")
        if self.real.ndim != 3:
            raise SpectralError(f"expected (F, T, C) planes, got shape {tuple(self.real.shape)}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.real.shape)

    def complex(self) -> torch.Tensor:
        return torch.complex(self.real, self.imag)

    def with_planes(self, real: torch.Tensor, imag: torch.Tensor) -> "ComplexSpectrogram":
        return ComplexSpectrogram(real, imag, self.config, self.length)


def as_waveform(waveform, dtype=torch.float64) -> torch.Tensor:
    """Coerce to a ``(samples, channels)`` tensor. 1-D input is one channel."""
    x = waveform if isinstance(waveform, torch.Tensor) else torch.as_tensor(np.asarray(waveform))
    if not x.is_floating_point():
        x = x.to(dtype)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise SpectralError(f"waveform must be (samples,) or (samples, channels), got {tuple(x.shape)}")
    return x


def stft(waveform, config: WindowConfig = WindowConfig()) -> ComplexSpectrogram:
    x = as_waveform(waveform)
    if x.shape[0] < config.fft_size:
        raise SpectralError(f"input too short: {x.shape[0]} samples < fft_size {config.fft_size}")
    if not torch.isfinite(x).all():
        raise SpectralError("non-finite input")
    window = make_window(config.window, config.fft_size, dtype=x.dtype)
    spec = torch.stft(
        x.T,
        n_fft=config.fft_size,
        hop_length=config.hop,
        window=window,
        center=True,
        pad_mode="reflect",
        return_complex=True,
    )  # (C, F, T)
    spec = spec.permute(1, 2, 0)
    if config.drop_nyquist:
        spec = spec[:-1]
    return ComplexSpectrogram(spec.real.contiguous(), spec.imag.contiguous(), config, x.shape[0])


def istft(spec: ComplexSpectrogram, length: int | None = None) -> torch.Tensor:
    """Inverse of :func:`stft`; returns ``(samples, channels)``."""
    config = spec.config
    if spec.shape[0] != config.n_bins:
        raise SpectralError(f"spectrogram has {spec.shape[0]} bins, config expects {config.n_bins}")
    z = spec.complex()
    if config.drop_nyquist:
        z = torch.cat([z, torch.zeros_like(z[:1])], dim=0)
    length = length if length is not None else spec.length
    window = make_window(config.window, config.fft_size, dtype=spec.real.dtype)
    y = torch.istft(
        z.permute(2, 0, 1),
        n_fft=config.fft_size,
        hop_length=config.hop,
        window=window,
        center=True,
        length=length,
    )
    return y.T


def spectral_energy(spec: ComplexSpectrogram) -> torch.Tensor:
    """Signal energy estimated from the spectrogram.

    Exact for COLA configs when the signal vanishes within half a window of
    both ends (reflect padding then contributes nothing).
    """
    config = spec.config
    mag2 = spec.real**2 + spec.imag**2
    # one-sided spectrum: interior bins stand for two conjugate bins
    weight = torch.full((mag2.shape[0],), 2.0, dtype=mag2.dtype)
    weight[0] = 1.0
    if not config.drop_nyquist:
        weight[-1] = 1.0
    w = make_window(config.window, config.fft_size, dtype=mag2.dtype)
    overlap_gain = (w**2).sum() / config.hop
    return (weight[:, None, None] * mag2).sum() / (config.fft_size * overlap_gain)
