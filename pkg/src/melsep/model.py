"""Band-projection RoFormer for complex-mask source separation.

Pipeline of a forward pass on one ``(F, T, C)`` complex spectrogram:

1. ``BandProjection``: every band gathers its bins (real and imaginary, all
   channels), normalizes the vector and maps it to ``embed_dim`` with its own
   affine layer. Bands may overlap.
2. ``blocks`` x ``HierarchicalBlock``: a RoPE Transformer layer along time
   for each band, then one along the band axis for each frame.
3. ``MaskEstimator``: a per-band gated MLP maps each embedding back to that
   band's real/imag mask values.
4. ``merge_masks``: bins that belong to several bands receive the mean of
   the band estimates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .bandmap import BandMapping
from .spectral import ComplexSpectrogram, WindowConfig

PRECISIONS = {"single": torch.float32, "double": torch.float64}


class ModelError(ValueError):
    pass


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    mapping: BandMapping
    embed_dim: int = 64
    heads: int = 4
    blocks: int = 2
    ffn_multiplier: int = 4
    mask_multiplier: int = 4
    channels: int = 2
    precision: str = "single"
    norm_input: bool = True
    rope_base: float = 10000.0
    stft: WindowConfig = field(default_factory=WindowConfig)
    chunk_seconds: float = 4.0
    stem: str = "vocals"

    def __post_init__(self):
        if self.embed_dim % (2 * self.heads):
            raise ModelError(f"embed_dim {self.embed_dim} must be divisible by 2 * heads ({2 * self.heads})")
        if self.blocks < 1:
            raise ModelError("need at least one block")
        if self.precision not in PRECISIONS:
            raise ModelError(f"precision must be one of {sorted(PRECISIONS)}")
        if self.channels < 1:
            raise ModelError("need at least one channel")

    @property
    def n_bands(self) -> int:
        return self.mapping.n_bands

    @property
    def dtype(self) -> torch.dtype:
        return PRECISIONS[self.precision]

    def to_dict(self) -> dict:
        return {
            "mapping": self.mapping.to_dict(),
            "embed_dim": self.embed_dim,
            "heads": self.heads,
            "blocks": self.blocks,
            "ffn_multiplier": self.ffn_multiplier,
            "mask_multiplier": self.mask_multiplier,
            "channels": self.channels,
            "precision": self.precision,
            "norm_input": self.norm_input,
            "rope_base": self.rope_base,
            "stft": self.stft.to_dict(),
            "chunk_seconds": self.chunk_seconds,
            "stem": self.stem,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        doc = dict(doc)
        doc["mapping"] = BandMapping.from_dict(doc["mapping"])
        doc["stft"] = WindowConfig(**doc["stft"])
        return cls(**doc)

    def replace(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


@dataclass
class ComplexMask:
    real: torch.Tensor  # (F, T, C)
    imag: torch.Tensor

    @property
    def shape(self):
        return tuple(self.real.shape)


class RMSNorm(nn.Module):
    def __init__(self, dim: int, eps: float = 1e-8):
        super().__init__()
        self.eps = eps
        self.gain = nn.Parameter(torch.ones(dim))

    def forward(self, x):
        return x * torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + self.eps) * self.gain


def rope_angles(positions, dim: int, base: float = 10000.0) -> torch.Tensor:
    """``(T, dim/2)`` rotation angles, computed in double precision."""
    if dim % 2:
        raise ModelError(f"RoPE needs an even head dimension, got {dim}")
    pos = torch.as_tensor(positions, dtype=torch.float64)
    inv_freq = base ** (-torch.arange(0, dim, 2, dtype=torch.float64) / dim)
    return pos[:, None] * inv_freq[None, :]


def rope_rotate(x: torch.Tensor, positions, base: float = 10000.0) -> torch.Tensor:
    """Rotate interleaved pairs ``(x[2i], x[2i+1])`` of ``x[..., t, :]`` by ``positions[t] * theta_i``."""
    angles = rope_angles(positions, x.shape[-1], base)
    cos = torch.cos(angles).to(x.dtype)
    sin = torch.sin(angles).to(x.dtype)
    even, odd = x[..., 0::2], x[..., 1::2]
    out = torch.stack((even * cos - odd * sin, even * sin + odd * cos), dim=-1)
    return out.flatten(-2)


class AttentionBlock(nn.Module):
    """Pre-norm RoPE self-attention + pre-norm FFN, both residual.

    Operates on ``(..., T, D)``; all leading dims are independent sequences.
    """

    def __init__(self, dim: int, heads: int, ffn_multiplier: int = 4, rope_base: float = 10000.0):
        super().__init__()
        self.heads = heads
        self.rope_base = rope_base
        self.attn_norm = RMSNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim, bias=False)
        self.out = nn.Linear(dim, dim, bias=False)
        self.ffn_norm = RMSNorm(dim)
        self.ffn = nn.Sequential(
            nn.Linear(dim, ffn_multiplier * dim),
            nn.GELU(),
            nn.Linear(ffn_multiplier * dim, dim),
        )
        nn.init.zeros_(self.out.weight)

    def attention(self, x):
        *lead, t, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        # (..., T, D) -> (..., H, T, D/H)
        q, k, v = (z.reshape(*lead, t, self.heads, d // self.heads).transpose(-3, -2) for z in (q, k, v))
        positions = torch.arange(t)
        q = rope_rotate(q, positions, self.rope_base)
        k = rope_rotate(k, positions, self.rope_base)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // self.heads)
        o = scores.softmax(dim=-1) @ v
        return self.out(o.transpose(-3, -2).reshape(*lead, t, d))

    def forward(self, x):
        x = x + self.attention(self.attn_norm(x))
        x = x + self.ffn(self.ffn_norm(x))
        if not torch.isfinite(x).all():
            raise NumericalError("numerical blow-up")
        return x


class HierarchicalBlock(nn.Module):
    """Inner-band (time axis) then inter-band (band axis) attention on ``(B, T, D)``."""

    def __init__(self, dim: int, heads: int, ffn_multiplier: int = 4, rope_base: float = 10000.0):
        super().__init__()
        self.time = AttentionBlock(dim, heads, ffn_multiplier, rope_base)
        self.band = AttentionBlock(dim, heads, ffn_multiplier, rope_base)

    def forward(self, e):
        e = self.time(e)
        return self.band(e.transpose(0, 1)).transpose(0, 1)


def band_features(real: torch.Tensor, imag: torch.Tensor, bins: torch.Tensor) -> torch.Tensor:
    """``(T, 2 * nbins * C)`` input vectors of one band, laid out as (plane, bin, channel)."""
    planes = torch.stack((real[bins], imag[bins]))  # (2, nb, T, C)
    return planes.permute(2, 0, 1, 3).flatten(1)


class BandProjection(nn.Module):
    def __init__(self, mapping: BandMapping, channels: int, dim: int, norm_input: bool = True):
        super().__init__()
        widths = [2 * len(b) * channels for b in mapping.bins_per_band]
        self.norms = nn.ModuleList(RMSNorm(w) if norm_input else nn.Identity() for w in widths)
        self.projections = nn.ModuleList(nn.Linear(w, dim) for w in widths)

    def forward(self, real, imag, bins_per_band):
        out = [
            proj(norm(band_features(real, imag, bins)))
            for norm, proj, bins in zip(self.norms, self.projections, bins_per_band)
        ]
        return torch.stack(out)  # (B, T, D)


class MaskEstimator(nn.Module):
    """Per-band gated MLP: D -> hidden -> tanh -> 2 * out -> GLU."""

    def __init__(self, mapping: BandMapping, channels: int, dim: int, multiplier: int = 4):
        super().__init__()
        self.widths = [2 * len(b) * channels for b in mapping.bins_per_band]
        self.channels = channels
        self.mlps = nn.ModuleList()
        for w in self.widths:
            final = nn.Linear(multiplier * dim, 2 * w)
            nn.init.zeros_(final.weight)
            nn.init.zeros_(final.bias)
            self.mlps.append(nn.Sequential(RMSNorm(dim), nn.Linear(dim, multiplier * dim), nn.Tanh(), final))

    def forward(self, e):
        """``(B, T, D)`` -> list of ``(2, nbins, T, C)`` band masks."""
        masks = []
        for mlp, band_e in zip(self.mlps, e):
            t = band_e.shape[0]
            m = F.glu(mlp(band_e), dim=-1)  # (T, 2 * nb * C)
            masks.append(m.reshape(t, 2, -1, self.channels).permute(1, 2, 0, 3))
        return masks


def merge_masks(band_masks, mapping: BandMapping) -> ComplexMask:
    """Average band estimates over every band that contains a bin."""
    counts = mapping.coverage
    if np.any(counts == 0):
        raise ModelError(f"bin without band: {np.flatnonzero(counts == 0).tolist()}")
    stacked = torch.cat(list(band_masks), dim=1)  # (2, sum nb, T, C)
    index = torch.as_tensor(np.concatenate(mapping.bins_per_band))
    total = stacked.new_zeros((2, mapping.n_bins, *stacked.shape[2:]))
    total = total.index_add(1, index, stacked)
    total = total / torch.as_tensor(counts, dtype=stacked.dtype)[None, :, None, None]
    return ComplexMask(total[0], total[1])


def apply_mask(spec: ComplexSpectrogram, mask: ComplexMask) -> ComplexSpectrogram:
    if tuple(spec.shape) != tuple(mask.shape):
        raise ModelError(f"mask shape {mask.shape} does not match spectrogram {spec.shape}")
    a, b = spec.real, spec.imag
    c, d = mask.real.to(a.dtype), mask.imag.to(a.dtype)
    return spec.with_planes(a * c - b * d, a * d + b * c)


class MelRoformer(nn.Module):
    """Complex-mask estimator over an arbitrary (overlapping or disjoint) band mapping."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config
        mapping = config.mapping
        self._bins = [torch.as_tensor(b) for b in mapping.bins_per_band]
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.projection = BandProjection(mapping, config.channels, config.embed_dim, config.norm_input)
            self.layers = nn.ModuleList(
                HierarchicalBlock(config.embed_dim, config.heads, config.ffn_multiplier, config.rope_base)
                for _ in range(config.blocks)
            )
            self.masks = MaskEstimator(mapping, config.channels, config.embed_dim, config.mask_multiplier)
        self.to(config.dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.config.dtype

    def _planes(self, spec, imag=None):
        if isinstance(spec, ComplexSpectrogram):
            real, imag = spec.real, spec.imag
        else:
            real = spec
        real, imag = real.to(self.dtype), imag.to(self.dtype)
        want = (self.config.mapping.n_bins, self.config.channels)
        if real.ndim != 3 or (real.shape[0], real.shape[2]) != want or real.shape != imag.shape:
            raise ModelError(f"expected (F={want[0]}, T, C={want[1]}) planes, got {tuple(real.shape)}")
        return real, imag

    def band_project(self, spec, imag=None) -> torch.Tensor:
        real, imag = self._planes(spec, imag)
        return self.projection(real, imag, self._bins)

    def estimate_band_masks(self, e: torch.Tensor):
        if e.ndim != 3 or e.shape[0] != self.config.n_bands or e.shape[2] != self.config.embed_dim:
            raise ModelError(f"expected (B={self.config.n_bands}, T, D={self.config.embed_dim}), got {tuple(e.shape)}")
        return self.masks(e)

    def forward(self, spec, imag=None) -> ComplexMask:
        e = self.band_project(spec, imag)
        for layer in self.layers:
            e = layer(e)
        return merge_masks(self.estimate_band_masks(e), self.config.mapping)

    def set_identity_mask(self) -> None:
        """Debug helper: make the model emit the all-ones mask for any input."""
        with torch.no_grad():
            for mlp, w in zip(self.masks.mlps, self.masks.widths):
                final = mlp[-1]
                final.weight.zero_()
                final.bias.zero_()
                # GLU halves: values, then gates; real plane is the first half of values
                final.bias[: w // 2] = 1.0
                final.bias[w:] = 40.0  # sigmoid(40) == 1.0 in double and single
