import numpy as np
import pytest

from latentbo.trajectory import Family, FamilySpec, TrajectorySet, generate, rescale_set
from latentbo.vae import TvaeConfig, init_model, train


def two_family_set(n_epochs, count_per_family, seed_base=0, value_range=(0.05, 5.0)):
    """Cooldown + segmented-random corpus rescaled to a common range."""
    specs = [
        FamilySpec(Family.LINEAR_COOLDOWN, n_epochs, value_range=value_range,
                   seed=seed_base + 1000 + i)
        for i in range(count_per_family)
    ]
    specs += [
        FamilySpec(Family.SEGMENTED_RANDOM, n_epochs, value_range=value_range,
                   segments=6, noise_sd=0.1, seed=seed_base + 2000 + i)
        for i in range(count_per_family)
    ]
    tset = TrajectorySet([generate(s) for s in specs], specs)
    labels = np.array([0] * count_per_family + [1] * count_per_family)
    return rescale_set(tset, value_range), labels


@pytest.fixture(scope="session")
def small_trained():
    """Small but genuinely trained model for fast loop/integration tests."""
    tset, labels = two_family_set(n_epochs=16, count_per_family=30)
    config = TvaeConfig(input_dim=16, hidden_sizes=(16, 16), learning_rate=3e-3,
                        epochs=300, seed=11)
    model, _ = train(init_model(config, seed=11), tset, config)
    return model, tset, labels


@pytest.fixture(scope="session")
def paper_scale_trained():
    """200 trajectories x 120 epochs, two families, 1000 training epochs.

    Shared by the TVAE acceptance criterion and the end-to-end recovery
    criterion so the 1000-epoch training cost is paid once.
    """
    tset, labels = two_family_set(n_epochs=120, count_per_family=100)
    config = TvaeConfig(input_dim=120, epochs=1000, seed=7)
    import time
    t0 = time.monotonic()
    model, report = train(init_model(config, seed=7), tset, config)
    elapsed = time.monotonic() - t0
    return model, report, tset, labels, elapsed
