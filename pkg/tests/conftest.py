"""Shared fixtures. Expensive artifacts (trained encoder, trained policies)
are cached under .cache/ keyed by their config hash so reruns skip the
training; delete .cache to force a cold run."""

import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

CACHE_DIR = Path(__file__).resolve().parent.parent / ".cache"

torch.set_num_threads(2)


def cache_path(name: str) -> Path:
    CACHE_DIR.mkdir(exist_ok=True)
    return CACHE_DIR / name


@pytest.fixture(scope="session")
def small_ae():
    """Small depth autoencoder trained on a reduced synthetic dataset."""
    from aeronav.autoencoder import (DepthAutoencoder, load_autoencoder,
                                     pretrain, save_autoencoder,
                                     synthesize_dataset)

    path = cache_path("ae_small_v2.anrl")
    if path.exists():
        return load_autoencoder(path)
    rng = np.random.default_rng([1234, 11])
    ds = synthesize_dataset(1500, rng)
    ae = DepthAutoencoder()
    pretrain(ae, ds, epochs=14, lr=1e-3, seed=1234, stop_at_val=0.005,
             log=lambda m: print(m, flush=True))
    save_autoencoder(path, ae)
    return ae


@pytest.fixture(scope="session")
def tiny_policy(small_ae):
    """Untrained policy around the trained encoder (for plumbing tests)."""
    from aeronav.ppo import PerceptionEncoder, PolicyNet

    torch.manual_seed(7)
    enc = PerceptionEncoder.from_autoencoder(small_ae)
    return PolicyNet(enc)
