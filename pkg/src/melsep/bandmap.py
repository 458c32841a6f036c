"""Frequency-bin to band mappings.

Two schemes are supported:

* ``mel``: overlapping bands taken from the support of a Slaney-style mel
  triangle filterbank. Each band spans from the previous band's center to
  the next band's center, so adjacent bands share roughly half their bins.
* ``bandsplit``: a disjoint partition of the bins given by explicit
  boundaries (the classic band-split front-end).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MEL = "mel-overlapping"
BANDSPLIT = "bandsplit-disjoint"
MAPPING_VERSION = 1

# Slaney / Auditory Toolbox constants
_F_SP = 200.0 / 3
_MIN_LOG_HZ = 1000.0
_MIN_LOG_MEL = _MIN_LOG_HZ / _F_SP
_LOGSTEP = np.log(6.4) / 27.0


class BandMapError(ValueError):
    pass


def hz_to_mel(freq):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(freq, dtype=np.float64)
    if np.any(f < 0):
        raise BandMapError("negative frequency")
    linear = f / _F_SP
    with np.errstate(divide="ignore"):
        log = _MIN_LOG_MEL + np.log(np.maximum(f, _MIN_LOG_HZ) / _MIN_LOG_HZ) / _LOGSTEP
    mel = np.where(f >= _MIN_LOG_HZ, log, linear)
    return mel.item() if mel.ndim == 0 else mel


def mel_to_hz(mel):
    m = np.asarray(mel, dtype=np.float64)
    if np.any(m < 0):
        raise BandMapError("negative mel value")
    linear = _F_SP * m
    log = _MIN_LOG_HZ * np.exp(_LOGSTEP * (np.maximum(m, _MIN_LOG_MEL) - _MIN_LOG_MEL))
    hz = np.where(m >= _MIN_LOG_MEL, log, linear)
    return hz.item() if hz.ndim == 0 else hz


@dataclass(frozen=True)
class FilterbankWeights:
    weights: np.ndarray  # (B, F)
    sample_rate: int
    n_bands: int
    n_bins: int

    @property
    def center_hz(self) -> np.ndarray:
        edges = mel_edges_hz(self.sample_rate, self.n_bands)
        return edges[1:-1]


def mel_edges_hz(sample_rate: float, n_bands: int, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    fmax = sample_rate / 2 if fmax is None else fmax
    mels = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_bands + 2)
    return mel_to_hz(mels)


def mel_filterbank(sample_rate: int, fft_size: int, n_bands: int, norm: str | None = "slaney") -> FilterbankWeights:
    """Triangle filters with centers evenly spaced in mel from 0 Hz to Nyquist.

    Band ``b`` rises from edge ``b`` to its center ``b + 1`` and falls to zero
    at edge ``b + 2``. With ``norm="slaney"`` each triangle is scaled to unit
    area in Hz; the scaling does not change the support.
    """
    if fft_size % 2:
        raise BandMapError(f"fft_size must be even, got {fft_size}")
    n_bins = fft_size // 2 + 1
    if n_bands < 2:
        raise BandMapError(f"need at least 2 bands, got {n_bands}")
    if n_bands >= n_bins:
        raise BandMapError(f"more bands than bins: {n_bands} >= {n_bins}")

    fft_hz = np.fft.rfftfreq(fft_size, d=1.0 / sample_rate)
    edges = mel_edges_hz(sample_rate, n_bands)
    widths = np.diff(edges)
    ramps = edges[:, None] - fft_hz[None, :]

    weights = np.zeros((n_bands, n_bins))
    for b in range(n_bands):
        rising = -ramps[b] / widths[b]
        falling = ramps[b + 2] / widths[b + 1]
        weights[b] = np.maximum(0.0, np.minimum(rising, falling))
    if norm == "slaney":
        weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    elif norm is not None:
        raise BandMapError(f"unsupported norm {norm!r}")
    return FilterbankWeights(weights, sample_rate, n_bands, n_bins)


@dataclass(frozen=True, eq=False)
class BandMapping:
    """Binary ``(B, F)`` incidence plus contiguous per-band bin ranges."""

    incidence: np.ndarray
    mode: str = MEL
    sample_rate: int | None = None
    fft_size: int | None = None

    def __post_init__(self):
        inc = np.asarray(self.incidence).astype(bool)
        inc.setflags(write=False)
        object.__setattr__(self, "incidence", inc)
        if self.mode not in (MEL, BANDSPLIT):
            raise BandMapError(f"unknown mode {self.mode!r}")
        for b, row in enumerate(inc):
            idx = np.flatnonzero(row)
            if len(idx) == 0:
                raise BandMapError(f"band {b} is empty")
            if idx[-1] - idx[0] + 1 != len(idx):
                raise BandMapError(f"band {b} is not contiguous")
        if self.mode == BANDSPLIT and np.any(inc.sum(axis=0) != 1):
            raise BandMapError("bandsplit mapping must assign every bin to exactly one band")

    @property
    def n_bands(self) -> int:
        return self.incidence.shape[0]

    @property
    def n_bins(self) -> int:
        return self.incidence.shape[1]

    @property
    def bins_per_band(self) -> list[np.ndarray]:
        return [np.flatnonzero(row) for row in self.incidence]

    @property
    def ranges(self) -> list[tuple[int, int]]:
        """Inclusive ``(start, end)`` bin range of each band."""
        return [(int(i[0]), int(i[-1])) for i in self.bins_per_band]

    @property
    def widths(self) -> np.ndarray:
        return self.incidence.sum(axis=1)

    @property
    def coverage(self) -> np.ndarray:
        """Number of bands each bin belongs to."""
        return self.incidence.sum(axis=0)

    def __eq__(self, other):
        if not isinstance(other, BandMapping):
            return NotImplemented
        return self.mode == other.mode and np.array_equal(self.incidence, other.incidence)

    def __hash__(self):
        return hash((self.mode, self.incidence.tobytes()))

    @classmethod
    def from_ranges(cls, ranges, n_bins: int, mode: str = MEL, **meta) -> "BandMapping":
        inc = np.zeros((len(ranges), n_bins), dtype=bool)
        for b, (start, end) in enumerate(ranges):
            if not 0 <= start <= end < n_bins:
                raise BandMapError(f"band {b} range [{start}, {end}] outside 0..{n_bins - 1}")
            inc[b, start:end + 1] = True
        return cls(inc, mode, **meta)

    def to_dict(self) -> dict:
        return {
            "version": MAPPING_VERSION,
            "mode": self.mode,
            "sample_rate": self.sample_rate,
            "fft_size": self.fft_size,
            "n_bands": self.n_bands,
            "n_bins": self.n_bins,
            "bands": [list(r) for r in self.ranges],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BandMapping":
        if doc.get("version") != MAPPING_VERSION:
            raise BandMapError(f"unsupported mapping version {doc.get('version')!r}")
        n_bins = doc.get("n_bins") or doc["fft_size"] // 2 + 1
        mapping = cls.from_ranges(
            doc["bands"], n_bins, doc["mode"], sample_rate=doc.get("sample_rate"), fft_size=doc.get("fft_size")
        )
        if mapping.n_bands != doc["n_bands"]:
            raise BandMapError(f"n_bands {doc['n_bands']} does not match {mapping.n_bands} listed bands")
        return mapping

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "BandMapping":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(self.incidence.astype(int).tolist())


def binarize(weights) -> np.ndarray | BandMapping:
    """Set every nonzero filter weight to one.

    Accepts :class:`FilterbankWeights` (returns an unpatched mel mapping's
    incidence wrapped as :class:`BandMapping`) or a plain array (returns a
    0/1 array), so the rule can be applied to arbitrary matrices.
    """
    if isinstance(weights, FilterbankWeights):
        fft_size = (weights.n_bins - 1) * 2
        return BandMapping(weights.weights > 0, MEL, weights.sample_rate, fft_size)
    w = np.asarray(weights)
    return (w != 0).astype(np.uint8)


def patch_coverage(mapping: BandMapping) -> BandMapping:
    """Append uncovered bins to the nearest band (ties go to the lower band)."""
    uncovered = np.flatnonzero(mapping.coverage == 0)
    if len(uncovered) == 0:
        return mapping
    ranges = [list(r) for r in mapping.ranges]
    for f in uncovered:
        dist = [0 if s <= f <= e else min(abs(f - s), abs(f - e)) for s, e in ranges]
        b = int(np.argmin(dist))
        ranges[b][0] = min(ranges[b][0], f)
        ranges[b][1] = max(ranges[b][1], f)
    # extending a band to an uncovered bin may sweep over bins between; they
    # were covered already so contiguity is all we change
    return BandMapping.from_ranges(ranges, mapping.n_bins, mapping.mode,
                                   sample_rate=mapping.sample_rate, fft_size=mapping.fft_size)


def mel_mapping(sample_rate: int, fft_size: int, n_bands: int, patch: bool = True) -> BandMapping:
    mapping = binarize(mel_filterbank(sample_rate, fft_size, n_bands))
    return patch_coverage(mapping) if patch else mapping


def bandsplit_mapping(boundaries, n_bins: int | None = None, sample_rate: int | None = None,
                      fft_size: int | None = None) -> BandMapping:
    """Disjoint bands ``[boundaries[b], boundaries[b + 1])``."""
    bounds = [int(x) for x in boundaries]
    if n_bins is None:
        n_bins = bounds[-1] if bounds else 0
    if len(bounds) < 2:
        raise BandMapError("need at least two boundaries")
    if bounds[0] != 0 or bounds[-1] != n_bins:
        raise BandMapError(f"boundaries must start at 0 and end at {n_bins}, got {bounds[0]}..{bounds[-1]}")
    if any(a <= b for b, a in zip(bounds, bounds[1:])):
        raise BandMapError("boundaries must be strictly increasing")
    ranges = [(s, e - 1) for s, e in zip(bounds, bounds[1:])]
    return BandMapping.from_ranges(ranges, n_bins, BANDSPLIT, sample_rate=sample_rate, fft_size=fft_size)


def widths_to_boundaries(widths) -> list[int]:
    return [0, *np.cumsum(widths).tolist()]


def load_boundaries(path) -> list[int]:
    """Read band-split boundaries from JSON.

    Either ``{"boundaries": [...]}`` or ``{"widths": [...]}`` is accepted.
    """
    doc = json.loads(Path(path).read_text())
    if "boundaries" in doc:
        return [int(x) for x in doc["boundaries"]]
    if "widths" in doc:
        return widths_to_boundaries(doc["widths"])
    raise BandMapError(f"{path}: expected 'boundaries' or 'widths'")


def default_bandsplit_boundaries() -> list[int]:
    """Heuristic 62-band partition of 1025 bins bundled with the package."""
    return load_boundaries(Path(__file__).with_name("data") / "bandsplit62.json")


def overlap_stats(mapping: BandMapping) -> np.ndarray:
    """Shared-bin count of each adjacent band pair."""
    if mapping.mode != MEL:
        raise BandMapError("no overlap stats for partition")
    inc = mapping.incidence
    return (inc[:-1] & inc[1:]).sum(axis=1)


def deduplicate(mapping: BandMapping) -> BandMapping:
    """Experimental: hand every shared bin to the lowest band containing it."""
    mapping = patch_coverage(mapping)
    seen = np.zeros(mapping.n_bins, dtype=bool)
    rows = []
    for b, row in enumerate(mapping.incidence):
        kept = row & ~seen
        if not kept.any():
            raise BandMapError(f"band {b} vanishes after deduplication")
        rows.append(kept)
        seen |= row
    return BandMapping(np.array(rows), BANDSPLIT, mapping.sample_rate, mapping.fft_size)
