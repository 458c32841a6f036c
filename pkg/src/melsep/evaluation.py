"""Signal-to-distortion ratio with museval-style aggregation.

A track's score is the median of its per-second SDRs; a dataset's score is
the median of the track scores. Medians of even-length lists are the mean
of the two middle values (``np.median``).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_io import read_wav

DEFAULT_CEILING = 100.0
SILENCE_ENERGY = 1e-12


class SdrError(ValueError):
    pass


def sdr(ref, est, ceiling: float = DEFAULT_CEILING) -> float:
    """``10 log10(|ref|^2 / |ref - est|^2)`` in dB, capped at ``ceiling``."""
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape:
        raise SdrError(f"shape mismatch: {ref.shape} vs {est.shape}")
    signal = np.sum(ref**2)
    if signal == 0:
        raise SdrError("undefined SDR: all-zero reference")
    noise = np.sum((ref - est) ** 2)
    if noise == 0:
        return ceiling
    return float(min(10 * np.log10(signal / noise), ceiling))


@dataclass
class TrackSdr:
    per_track: float
    per_chunk: list[float]


def chunked_track_sdr(ref, est, sample_rate: int, chunk_seconds: float = 1.0,
                      ceiling: float = DEFAULT_CEILING) -> TrackSdr:
    """Median SDR over non-overlapping chunks starting at sample 0.

    The sub-chunk tail is dropped and chunks whose reference energy is below
    ``SILENCE_ENERGY`` are skipped.
    """
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape:
        raise SdrError(f"shape mismatch: {ref.shape} vs {est.shape}")
    win = int(round(chunk_seconds * sample_rate))
    n_chunks = len(ref) // win
    if n_chunks == 0:
        raise SdrError(f"track shorter than one {chunk_seconds} s chunk")
    scores = []
    for i in range(n_chunks):
        r = ref[i * win:(i + 1) * win]
        if np.sum(r**2) < SILENCE_ENERGY:
            continue
        scores.append(sdr(r, est[i * win:(i + 1) * win], ceiling))
    if not scores:
        raise SdrError("all chunks silent")
    return TrackSdr(float(np.median(scores)), scores)


def dataset_sdr(track_scores) -> float:
    scores = list(track_scores)
    if not scores:
        raise SdrError("no tracks to aggregate")
    return float(np.median(scores))


@dataclass
class SdrReport:
    stem: str
    tracks: dict[str, TrackSdr] = field(default_factory=dict)

    @property
    def per_track(self) -> dict[str, float]:
        return {name: t.per_track for name, t in self.tracks.items()}

    @property
    def dataset(self) -> float:
        return dataset_sdr(self.per_track.values())

    def to_dict(self) -> dict:
        return {
            "stem": self.stem,
            "dataset": self.dataset,
            "tracks": {name: {"per_track": t.per_track, "per_chunk": t.per_chunk} for name, t in self.tracks.items()},
        }


def write_reports(reports: list[SdrReport], json_path=None, csv_path=None) -> None:
    if json_path is not None:
        Path(json_path).write_text(json.dumps([r.to_dict() for r in reports], indent=1))
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["track", "stem", "sdr_db"])
            for r in reports:
                for name, score in r.per_track.items():
                    w.writerow([name, r.stem, f"{score:.6f}"])
            for r in reports:
                w.writerow(["__dataset__", r.stem, f"{r.dataset:.6f}"])


class NameMismatch(SdrError):
    def __init__(self, offenders):
        self.offenders = sorted(offenders)
        super().__init__("reference/estimate mismatch: " + ", ".join(self.offenders))


def _stem_files(root: Path) -> set[str]:
    return {f"{p.parent.name}/{p.stem}" for p in root.glob("*/*.wav") if p.stem != "mixture"}


def evaluate_dirs(ref_root, est_root, chunk_seconds: float = 1.0,
                  ceiling: float = DEFAULT_CEILING) -> list[SdrReport]:
    """Score ``<est_root>/<track>/<stem>.wav`` against the same layout under ``ref_root``.

    Every estimate must have a reference and vice versa; ``mixture.wav`` is ignored.
    """
    ref_root, est_root = Path(ref_root), Path(est_root)
    refs, ests = _stem_files(ref_root), _stem_files(est_root)
    if refs != ests or not refs:
        raise NameMismatch(refs ^ ests or {"<no stems found>"})
    reports: dict[str, SdrReport] = {}
    for key in sorted(refs):
        track, stem = key.split("/")
        ref, sr = read_wav(ref_root / track / f"{stem}.wav")
        est, est_sr = read_wav(est_root / track / f"{stem}.wav")
        if sr != est_sr or ref.shape != est.shape:
            raise NameMismatch({f"{key} (shape/rate differs)"})
        report = reports.setdefault(stem, SdrReport(stem))
        report.tracks[track] = chunked_track_sdr(ref, est, sr, chunk_seconds, ceiling)
    return list(reports.values())
