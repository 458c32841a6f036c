import numpy as np
import pytest
import torch

from melsep.bandmap import BandMapping
from melsep.model import MelRoformer, ModelConfig

TINY_RANGES = [(0, 5), (3, 9), (7, 12), (10, 15)]


def tiny_config(**kw):
    """B=4, D=8, H=2, L=1 over F=16 bins, double precision."""
    opts = dict(embed_dim=8, heads=2, blocks=1, ffn_multiplier=4, mask_multiplier=4, channels=2,
                precision="double")
    opts.update(kw)
    mapping = opts.pop("mapping", BandMapping.from_ranges(TINY_RANGES, 16))
    return ModelConfig(mapping, **opts)


def randomize(model, scale=0.3, seed=0):
    """Overwrite every parameter (including zero-initialized ones) with noise."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * scale)
    return model


def band_values_for(mapping, t, c, seed):
    rng = np.random.default_rng(seed)
    return [rng.standard_normal((2, len(b), t, c)) for b in mapping.bins_per_band]


def random_overlap_mapping(rng, max_overlap=3):
    """Random contiguous bands covering every bin, each bin in at most ``max_overlap`` bands."""
    n_bands = int(rng.integers(2, 10))
    widths = rng.integers(1, 8, size=n_bands)
    bounds = np.concatenate([[0], np.cumsum(widths)])
    n_bins = int(bounds[-1])
    while True:
        ranges = [(max(0, int(s - rng.integers(0, 5))), min(n_bins - 1, int(e - 1 + rng.integers(0, 5))))
                  for s, e in zip(bounds[:-1], bounds[1:])]
        mapping = BandMapping.from_ranges(ranges, n_bins)
        if mapping.coverage.max() <= max_overlap:
            return mapping


@pytest.fixture
def tiny_model():
    return randomize(MelRoformer(tiny_config()))


@pytest.fixture
def tiny_spec():
    gen = torch.Generator().manual_seed(1)
    return (torch.randn(16, 5, 2, generator=gen, dtype=torch.float64),
            torch.randn(16, 5, 2, generator=gen, dtype=torch.float64))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
