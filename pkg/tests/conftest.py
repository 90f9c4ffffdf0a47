import numpy as np
import pytest

from modalrec.dataio import load_task_dataset
from modalrec.intent import IntentConfig
from modalrec.irl import IrlConfig
from modalrec.synth import SynthConfig, generate_synthetic_suite
from modalrec.training import TrainConfig


def tiny_irl_cfg(**kw):
    base = dict(d=8, n_h=2, d_p=4, omega=100.0, beta=0.3)
    base.update(kw)
    return IrlConfig(**base)


def tiny_intent_cfg(**kw):
    base = dict(d=8, n_layers=1, n_heads=1, max_seq_len=20, dropout=0.1)
    base.update(kw)
    return IntentConfig(**base)


def tiny_train_cfg(**kw):
    base = dict(learning_rate=1e-3, batch_size=64, n_epochs=2, tau=0.07,
                lambda_=1e-3, seed=0)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def mini_suite(tmp_path_factory):
    """Three small tasks (last one target) loaded and ready."""
    cfg = SynthConfig(
        n_tasks=3, n_items_per_task=30, n_users_per_task=40, latent_dim=4,
        shared_structure=0.8, seq_len_range=(5, 10), d_text=8, d_image=8,
        noise_scale=0.1, seed=42,
    )
    root = tmp_path_factory.mktemp("mini_suite")
    paths = generate_synthetic_suite(cfg, root)
    return [load_task_dataset(p, max_seq_len=20) for p in paths]


@pytest.fixture(scope="session")
def mini_suite_dir(tmp_path_factory):
    cfg = SynthConfig(
        n_tasks=2, n_items_per_task=24, n_users_per_task=30, latent_dim=4,
        shared_structure=0.8, seq_len_range=(5, 9), d_text=6, d_image=6,
        noise_scale=0.1, seed=7,
    )
    root = tmp_path_factory.mktemp("mini_suite_dir")
    generate_synthetic_suite(cfg, root)
    return root


def seeded_rng(seed=0):
    return np.random.default_rng(seed)
