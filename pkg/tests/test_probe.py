import numpy as np
import pytest

from modalrec import probe
from modalrec.errors import ConfigError, DataError
from modalrec.probe import ProbeDataset, build_probe_dataset, train_linear_probe
from modalrec.training import pretrain

from conftest import tiny_intent_cfg, tiny_irl_cfg, tiny_train_cfg


@pytest.fixture(scope="module")
def pre(mini_suite):
    return pretrain(mini_suite[:2], tiny_train_cfg(n_epochs=1, seed=13),
                    tiny_irl_cfg(), tiny_intent_cfg())


def synthetic_probe_dataset(offset, n=200, d=6, seed=0, noise=0.5):
    """Two gaussian clouds separated by `offset` along the first axis."""
    rng = np.random.default_rng(seed)

    def cloud(center, label):
        x = rng.standard_normal((n, d)) * noise
        x[:, 0] += center
        return x, np.full(n, label)

    ax, ay = cloud(+offset / 2, 1.0)
    bx, by = cloud(-offset / 2, 0.0)
    n_train, n_val = int(0.7 * n), int(0.1 * n)

    def split(x, y):
        return ((x[:n_train], y[:n_train]),
                (x[n_train:n_train + n_val], y[n_train:n_train + n_val]),
                (x[n_train + n_val:], y[n_train + n_val:]))

    (atr, avl, ats), (btr, bvl, bts) = split(ax, ay), split(bx, by)
    return ProbeDataset(
        "text",
        np.concatenate([atr[0], btr[0]]), np.concatenate([atr[1], btr[1]]),
        np.concatenate([avl[0], bvl[0]]), np.concatenate([avl[1], bvl[1]]),
        np.concatenate([ats[0], bts[0]]), np.concatenate([ats[1], bts[1]]),
        n, seed,
    )


def test_separable_clouds_high_accuracy():
    ds = synthetic_probe_dataset(offset=20.0, noise=0.3)
    res = train_linear_probe(ds, max_epochs=300)
    assert res.test_accuracy >= 0.95


def test_identical_distributions_chance_band():
    accs = []
    for seed in range(20):
        ds = synthetic_probe_dataset(offset=0.0, n=200, seed=seed)
        accs.append(train_linear_probe(ds, max_epochs=120).test_accuracy)
    mean_acc = float(np.mean(accs))
    assert 0.40 <= mean_acc <= 0.62
    assert all(0.3 <= a <= 0.72 for a in accs)


def test_nonlinear_probe_runs():
    ds = synthetic_probe_dataset(offset=6.0, noise=0.5)
    res = train_linear_probe(ds, max_epochs=150, hidden=32)
    assert res.test_accuracy >= 0.9


def test_rescaling_features_barely_moves_accuracy():
    deltas = []
    for seed in range(5):
        ds = synthetic_probe_dataset(offset=3.0, noise=1.0, seed=seed)
        base = train_linear_probe(ds, max_epochs=200).test_accuracy
        scaled = ProbeDataset(ds.modality, ds.train_x * 2, ds.train_y,
                              ds.val_x * 2, ds.val_y, ds.test_x * 2, ds.test_y,
                              ds.n_per_class, ds.seed)
        deltas.append(abs(train_linear_probe(scaled, max_epochs=200).test_accuracy
                          - base))
    assert float(np.mean(deltas)) < 0.02


def test_degenerate_split_rejected():
    ds = synthetic_probe_dataset(offset=1.0)
    bad = ProbeDataset(ds.modality, ds.train_x, np.ones_like(ds.train_y),
                       ds.val_x, ds.val_y, ds.test_x, ds.test_y,
                       ds.n_per_class, ds.seed)
    with pytest.raises(DataError):
        train_linear_probe(bad)


# ------------------------------------------------------- dataset construction


def test_build_probe_dataset_split_sizes(pre, mini_suite):
    target, aux = mini_suite[2], mini_suite[0]
    n = len(target.items)  # 30 per class
    ds = build_probe_dataset(target, aux, "text", pre, seed=3)
    assert ds.n_per_class == n
    assert len(ds.train_x) == 2 * int(0.7 * n)
    assert len(ds.val_x) == 2 * int(0.1 * n)
    assert len(ds.test_x) == 2 * n - len(ds.train_x) - len(ds.val_x)


def test_build_probe_dataset_balanced_per_split(pre, mini_suite):
    ds = build_probe_dataset(mini_suite[2], mini_suite[0], "image", pre, seed=4)
    for y in (ds.train_y, ds.val_y, ds.test_y):
        pos, neg = int(np.sum(y == 1)), int(np.sum(y == 0))
        assert abs(pos - neg) <= 1


def test_build_probe_dataset_deterministic(pre, mini_suite):
    a = build_probe_dataset(mini_suite[2], mini_suite[0], "price", pre, seed=5)
    b = build_probe_dataset(mini_suite[2], mini_suite[0], "price", pre, seed=5)
    assert np.array_equal(a.train_x, b.train_x)
    assert np.array_equal(a.test_y, b.test_y)
    c = build_probe_dataset(mini_suite[2], mini_suite[0], "price", pre, seed=6)
    assert not np.array_equal(a.train_x, c.train_x)


def test_build_probe_dataset_errors(pre, mini_suite):
    with pytest.raises(ConfigError):
        build_probe_dataset(mini_suite[2], mini_suite[0], "audio", pre, 0)
    # aux smaller than target
    small = mini_suite[0]
    from modalrec.dataio import TaskDataset

    few = dict(list(small.items.items())[:5])
    tiny = TaskDataset("tiny", few, [], "auxiliary")
    with pytest.raises(DataError):
        build_probe_dataset(mini_suite[2], tiny, "text", pre, 0)


def test_probe_requires_pretrained_stage(pre, mini_suite):
    from modalrec.adaptation import AdaptSpec, adapt

    adapted = adapt(pre, mini_suite[2],
                    AdaptSpec(mode="relearn", train=tiny_train_cfg(n_epochs=1)),
                    tiny_irl_cfg(), tiny_intent_cfg())
    with pytest.raises(ConfigError):
        build_probe_dataset(mini_suite[2], mini_suite[0], "text", adapted, 0)
    # flag-controlled override
    ds = build_probe_dataset(mini_suite[2], mini_suite[0], "text", adapted, 0,
                             require_pretrained=False)
    assert ds.train_x.shape[1] == tiny_irl_cfg().d


def test_probe_matrix_json(pre, mini_suite):
    import json

    doc = probe.probe_matrix(mini_suite[2], [mini_suite[0]], pre, seed=1,
                             max_epochs=30)
    data = json.loads(doc)
    assert data["target_id"] == mini_suite[2].task_id
    assert len(data["results"]) == 3  # one per modality
    for row in data["results"]:
        assert 0.0 <= row["test_accuracy"] <= 1.0
