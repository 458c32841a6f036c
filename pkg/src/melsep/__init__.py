"""Mel-band projection RoFormer for music source separation, at desk scale."""
from .bandmap import BandMapping, bandsplit_mapping, mel_filterbank, mel_mapping
from .model import ComplexMask, MelRoformer, ModelConfig, apply_mask, merge_masks
from .pipeline import ChunkPlan, separate_track
from .spectral import ComplexSpectrogram, WindowConfig, istft, stft

__version__ = "0.1.0"
