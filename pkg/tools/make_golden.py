"""Regenerate the reference filterbank fixtures under tests/data.

Requires librosa, which is not a runtime dependency of melsep. The files this
writes are committed; tests never import librosa.

    python tools/make_golden.py
"""
from pathlib import Path

import librosa
import numpy as np

OUT = Path(__file__).resolve().parents[1] / "tests" / "data"
SR, N_FFT = 44100, 2048


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for n_mels in (16, 60):
        weights = librosa.filters.mel(sr=SR, n_fft=N_FFT, n_mels=n_mels, dtype=np.float64)
        np.save(OUT / f"mel{n_mels}_weights.npy", weights)
        binary = (weights > 0).astype(np.uint8)
        np.savetxt(OUT / f"mel{n_mels}_binary.csv", binary, fmt="%d", delimiter=",")
        print(f"{n_mels} bands -> {binary.shape}, librosa {librosa.__version__}")


if __name__ == "__main__":
    main()
