"""WAV I/O, MUSDB-style track folders and a deterministic synthetic fixture."""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE
SUBTYPES = {"pcm16": (WAVE_FORMAT_PCM, 16), "pcm24": (WAVE_FORMAT_PCM, 24), "float32": (WAVE_FORMAT_IEEE_FLOAT, 32)}
MUSDB_SAMPLE_RATE = 44100


class WavError(ValueError):
    pass


def _decode_pcm24(raw: bytes) -> np.ndarray:
    b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
    v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
    return np.where(v >= 1 << 23, v - (1 << 24), v)


def read_wav(path):
    """Return ``(samples, sample_rate)``; samples are ``(n, channels)`` floats in [-1, 1]."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavError(f"{path}: not a RIFF/WAVE file")
    fmt = payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack("<4sI", data[pos:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            payload = body
        pos += 8 + size + (size & 1)
    if fmt is None or len(fmt) < 16:
        raise WavError(f"{path}: corrupt header (no fmt chunk)")
    if payload is None:
        raise WavError(f"{path}: corrupt header (no data chunk)")
    tag, channels, sr, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 26:
            raise WavError(f"{path}: truncated extensible fmt chunk")
        tag = struct.unpack("<H", fmt[24:26])[0]
    if channels < 1 or block_align != channels * bits // 8:
        raise WavError(f"{path}: corrupt header (block align {block_align}, {channels} ch, {bits} bit)")
    payload = payload[: len(payload) - len(payload) % block_align]

    if tag == WAVE_FORMAT_PCM and bits == 16:
        x = np.frombuffer(payload, dtype="<i2").astype(np.float32) / 32768.0
    elif tag == WAVE_FORMAT_PCM and bits == 24:
        x = _decode_pcm24(payload).astype(np.float32) / float(1 << 23)
    elif tag == WAVE_FORMAT_PCM and bits == 32:
        x = np.frombuffer(payload, dtype="<i4").astype(np.float64) / float(1 << 31)
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        x = np.frombuffer(payload, dtype="<f4").copy()
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 64:
        x = np.frombuffer(payload, dtype="<f8").copy()
    else:
        raise WavError(f"{path}: unsupported codec (format tag {tag:#x}, {bits} bit)")
    if not np.isfinite(x).all():
        raise WavError(f"{path}: non-finite samples")
    return x.reshape(-1, channels), sr


def write_wav(path, samples, sample_rate: int, subtype: str = "float32") -> None:
    x = np.asarray(samples)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise WavError(f"samples must be (n,) or (n, channels), got {x.shape}")
    if not np.isfinite(x).all():
        raise WavError("refusing to write non-finite samples")
    if subtype not in SUBTYPES:
        raise WavError(f"unknown subtype {subtype!r}; expected one of {sorted(SUBTYPES)}")
    tag, bits = SUBTYPES[subtype]
    if subtype == "float32":
        raw = x.astype("<f4").tobytes()
    else:
        full = 1 << (bits - 1)
        q = np.clip(np.round(x.astype(np.float64) * full), -full, full - 1).astype("<i4")
        if bits == 16:
            raw = q.astype("<i2").tobytes()
        else:
            raw = q.view(np.uint8).reshape(-1, 4)[:, :3].tobytes()
    channels = x.shape[1]
    block_align = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, sample_rate, sample_rate * block_align, block_align, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(raw)) + raw
    if len(raw) & 1:
        body += b"\x00"
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


load_wav = read_wav


@dataclass
class TrackBundle:
    name: str
    mixture: np.ndarray  # (n, channels)
    stems: dict[str, np.ndarray]
    sample_rate: int
    warnings: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.mixture)

    def save(self, root) -> Path:
        """Write ``<root>/<name>/{mixture,<stem>}.wav`` (float32)."""
        folder = Path(root) / self.name
        folder.mkdir(parents=True, exist_ok=True)
        write_wav(folder / "mixture.wav", self.mixture, self.sample_rate)
        for stem, x in self.stems.items():
            write_wav(folder / f"{stem}.wav", x, self.sample_rate)
        return folder


def load_track_dir(path, sample_rate: int | None = MUSDB_SAMPLE_RATE) -> TrackBundle:
    folder = Path(path)
    mix_path = folder / "mixture.wav"
    if not mix_path.is_file():
        raise FileNotFoundError(f"{folder}: missing mixture.wav")
    mixture, sr = read_wav(mix_path)
    if sample_rate is not None and sr != sample_rate:
        raise WavError(f"{mix_path}: sample rate {sr} != {sample_rate}; resample beforehand")
    stems = {}
    for p in sorted(folder.glob("*.wav")):
        if p.name == "mixture.wav":
            continue
        x, stem_sr = read_wav(p)
        if stem_sr != sr:
            raise WavError(f"{p}: sample rate {stem_sr} != mixture {sr}")
        stems[p.stem] = x
    if not stems:
        raise WavError(f"{folder}: no stem files next to mixture.wav")

    warnings = []
    n = min(len(mixture), *(len(x) for x in stems.values()))
    for name, x in [("mixture", mixture), *stems.items()]:
        if len(x) != n:
            msg = f"{folder.name}/{name}: truncated {len(x)} -> {n} samples"
            log.warning(msg)
            warnings.append(msg)
    return TrackBundle(folder.name, mixture[:n], {k: v[:n] for k, v in stems.items()}, sr, warnings)


def list_tracks(root) -> list[Path]:
    return sorted(p for p in Path(root).iterdir() if p.is_dir())


def _periodic_hz(freq, duration):
    # whole cycles over the clip keep each component on exact DFT bins
    return np.round(np.asarray(freq) * duration) / duration


def _band_noise(rng, n, sr, lo, hi):
    spec = np.zeros(n // 2 + 1, dtype=complex)
    hz = np.fft.rfftfreq(n, 1.0 / sr)
    band = (hz >= lo) & (hz <= hi)
    spec[band] = rng.standard_normal(band.sum()) + 1j * rng.standard_normal(band.sum())
    x = np.fft.irfft(spec, n)
    return x / np.sqrt(np.mean(x**2))


def synth_fixture(seed: int = 0, sample_rate: int = MUSDB_SAMPLE_RATE, duration: float = 1.0,
                  channels: int = 2, level: float = 0.1) -> TrackBundle:
    """Two spectrally disjoint stems plus their sum.

    ``bass``: a tone cluster between 40 Hz and 1 kHz with a slow amplitude
    swell. ``vocals``: harmonics above 2 kHz plus tremolo-modulated noise
    between 2.5 and 8 kHz. Both stems are scaled to the same RMS, so the
    mixture is a 0 dB estimate of either one.
    """
    if duration < 1.0:
        raise ValueError(f"fixture duration must be >= 1 s, got {duration}")
    rng = np.random.default_rng(seed)
    n = int(round(sample_rate * duration))
    dur = n / sample_rate
    t = np.arange(n) / sample_rate

    f0 = rng.uniform(45.0, 90.0)
    bass = np.zeros(n)
    for k in range(1, 8):
        if k * f0 > 900:
            break
        f = _periodic_hz(k * f0, dur)
        bass += rng.uniform(0.3, 1.0) / k * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    bass *= 0.75 + 0.25 * np.cos(2 * np.pi * _periodic_hz(2.0, dur) * t)

    v0 = rng.uniform(2100.0, 2600.0)
    vocals = np.zeros(n)
    for k in range(1, 4):
        f = _periodic_hz(k * v0, dur)
        vocals += rng.uniform(0.4, 1.0) / k * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    vocals += 0.5 * _band_noise(rng, n, sample_rate, 2500.0, 8000.0)
    vocals *= 0.7 + 0.3 * np.sin(2 * np.pi * _periodic_hz(5.0, dur) * t)

    stems = {}
    for name, x in (("bass", bass), ("vocals", vocals)):
        x = level * x / np.sqrt(np.mean(x**2))
        pan = rng.uniform(0.6, 1.0, size=channels)
        stems[name] = x[:, None] * pan[None, :]
    mixture = stems["bass"] + stems["vocals"]
    return TrackBundle(f"fixture{seed}", mixture, stems, sample_rate)
