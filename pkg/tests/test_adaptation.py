import numpy as np
import pytest

from modalrec import training
from modalrec.autodiff import Tensor
from modalrec.adaptation import AdaptSpec, adapt, score_all_items
from modalrec.checkpoint import InteractionEmb
from modalrec.dataio import ItemRecord, TaskDataset
from modalrec.errors import ConfigError, DataError
from modalrec.training import pretrain

from conftest import tiny_intent_cfg, tiny_irl_cfg, tiny_train_cfg


@pytest.fixture(scope="module")
def pretrained(mini_suite):
    aux = mini_suite[:2]
    return pretrain(aux, tiny_train_cfg(n_epochs=2, seed=11), tiny_irl_cfg(),
                    tiny_intent_cfg())


def adapt_spec(mode="relearn", variant="base", **train_kw):
    kw = dict(n_epochs=2, seed=21, batch_size=64)
    kw.update(train_kw)
    return AdaptSpec(mode=mode, variant=variant, train=tiny_train_cfg(**kw))


def backbone_bytes(params):
    return {name: t.data.tobytes() for name, t in params.backbone_tensors()}


def test_relearn_freezes_backbone(pretrained, mini_suite):
    target = mini_suite[2]
    out = adapt(pretrained, target, adapt_spec("relearn"), tiny_irl_cfg(),
                tiny_intent_cfg())
    assert out.stage == "adapted"
    assert backbone_bytes(out.intent_params) == backbone_bytes(pretrained.intent_params)
    # relearned parts differ from the pretrained ones
    assert (out.intent_params.pos_emb.data.tobytes()
            != pretrained.intent_params.pos_emb.data.tobytes())


def test_relearn_initial_params_depend_only_on_seed(pretrained, mini_suite):
    """Relearn re-initializes from the adaptation seed alone."""
    target = mini_suite[2]
    spec = adapt_spec("relearn", n_epochs=0)
    out = adapt(pretrained, target, spec, tiny_irl_cfg(), tiny_intent_cfg())

    rng = np.random.default_rng(spec.train.seed)
    expected_irl = training.init_irl_params(8, 8, tiny_irl_cfg(), rng)
    expected_pos = training.init_position_embedding(tiny_intent_cfg(), rng)
    for (name, got), (_, want) in zip(out.irl_params.named_tensors(),
                                      expected_irl.named_tensors()):
        assert np.array_equal(got.data, want.data), name
    assert np.array_equal(out.intent_params.pos_emb.data, expected_pos.data)


def test_relearn_different_seeds_same_backbone(pretrained, mini_suite):
    target = mini_suite[2]
    a = adapt(pretrained, target, adapt_spec("relearn", seed=1), tiny_irl_cfg(),
              tiny_intent_cfg())
    b = adapt(pretrained, target, adapt_spec("relearn", seed=2), tiny_irl_cfg(),
              tiny_intent_cfg())
    assert backbone_bytes(a.intent_params) == backbone_bytes(b.intent_params)
    diffs = sum(
        not np.array_equal(ta.data, tb.data)
        for (_, ta), (_, tb) in zip(a.irl_params.named_tensors(),
                                    b.irl_params.named_tensors()))
    assert diffs > 0


def test_finetune_starts_from_pretrained_and_freezes_intent(pretrained, mini_suite):
    target = mini_suite[2]
    spec = adapt_spec("finetune", n_epochs=0)
    out = adapt(pretrained, target, spec, tiny_irl_cfg(), tiny_intent_cfg())
    # zero epochs: parameters equal the pretrained values
    for (name, got), (_, want) in zip(out.irl_params.named_tensors(),
                                      pretrained.irl_params.named_tensors()):
        assert np.array_equal(got.data, want.data), name

    out2 = adapt(pretrained, target, adapt_spec("finetune", n_epochs=2),
                 tiny_irl_cfg(), tiny_intent_cfg())
    assert backbone_bytes(out2.intent_params) == backbone_bytes(pretrained.intent_params)
    assert (out2.intent_params.pos_emb.data.tobytes()
            == pretrained.intent_params.pos_emb.data.tobytes())
    moved = sum(
        not np.array_equal(ta.data, tb.data)
        for (_, ta), (_, tb) in zip(out2.irl_params.named_tensors(),
                                    pretrained.irl_params.named_tensors()))
    assert moved > 0


def test_scratch_requires_no_checkpoint(pretrained, mini_suite):
    target = mini_suite[2]
    out = adapt(None, target, adapt_spec("scratch"), tiny_irl_cfg(), tiny_intent_cfg())
    assert out.stage == "scratch"
    with pytest.raises(ConfigError):
        adapt(pretrained, target, adapt_spec("scratch"), tiny_irl_cfg(),
              tiny_intent_cfg())
    with pytest.raises(ConfigError):
        adapt(None, target, adapt_spec("relearn"), tiny_irl_cfg(), tiny_intent_cfg())


def test_adapt_rejects_adapted_checkpoint(pretrained, mini_suite):
    target = mini_suite[2]
    adapted = adapt(pretrained, target, adapt_spec("relearn"), tiny_irl_cfg(),
                    tiny_intent_cfg())
    with pytest.raises(ConfigError):
        adapt(adapted, target, adapt_spec("relearn"), tiny_irl_cfg(),
              tiny_intent_cfg())


def test_ant_t_variant_learns_interaction_table(pretrained, mini_suite):
    target = mini_suite[2]
    out = adapt(pretrained, target, adapt_spec("relearn", "with_interaction_emb"),
                tiny_irl_cfg(), tiny_intent_cfg())
    assert out.interaction_emb is not None
    assert np.array_equal(out.interaction_emb.ids, np.sort(list(target.items)))
    # table received updates (not at its N(0, 0.02^2) init scale everywhere)
    assert out.interaction_emb.table.data.std() > 0


def test_adaptation_deterministic(pretrained, mini_suite):
    target = mini_suite[2]
    a = adapt(pretrained, target, adapt_spec("relearn"), tiny_irl_cfg(),
              tiny_intent_cfg())
    b = adapt(pretrained, target, adapt_spec("relearn"), tiny_irl_cfg(),
              tiny_intent_cfg())
    for (name, ta), (_, tb) in zip(a.named_tensors(), b.named_tensors()):
        assert np.array_equal(ta.data, tb.data), name


def test_dim_mismatch_rejected(pretrained):
    items = {i: ItemRecord(i, np.ones(3), np.ones(8), 1.0) for i in range(5)}
    seqs = [("u", [0, 1, 2, 3])]
    bad = TaskDataset("bad", items, seqs, "target")
    with pytest.raises(DataError):
        adapt(pretrained, bad, adapt_spec("relearn"), tiny_irl_cfg(),
              tiny_intent_cfg())


# ---------------------------------------------------------------- scoring


def test_score_all_items_basic(pretrained, mini_suite):
    target = mini_suite[2]
    ck = adapt(pretrained, target, adapt_spec("relearn"), tiny_irl_cfg(),
               tiny_intent_cfg())
    user, seq = target.sequences[0]
    ranked = score_all_items(ck, seq[:-2], target.items)
    assert len(ranked) == len(target.items)
    ids = [i for i, _ in ranked]
    assert set(ids) == set(target.items)
    scores = np.array([s for _, s in ranked])
    assert (scores <= 1.0 + 1e-12).all() and (scores >= -1.0 - 1e-12).all()
    assert (np.diff(scores) <= 1e-15).all()  # descending


def test_score_zero_shot_item(pretrained, mini_suite):
    """An item never interacted with is still rankable (content-only path)."""
    target = mini_suite[2]
    items = dict(target.items)
    fresh_id = max(items) + 1
    rng = np.random.default_rng(0)
    items[fresh_id] = ItemRecord(fresh_id, rng.standard_normal(8).astype(np.float32),
                                 rng.standard_normal(8).astype(np.float32), 30.0)
    ck = adapt(pretrained, TaskDataset(target.task_id, items, target.sequences,
                                       target.role),
               adapt_spec("relearn"), tiny_irl_cfg(), tiny_intent_cfg())
    _, seq = target.sequences[0]
    ranked = score_all_items(ck, seq[:-2], items)
    got = dict(ranked)
    assert fresh_id in got and np.isfinite(got[fresh_id])


def test_score_ties_broken_by_ascending_id(pretrained, mini_suite):
    target = mini_suite[2]
    # two items with identical record -> identical score, id order stable
    items = dict(target.items)
    base = items[min(items)]
    dup_a, dup_b = max(items) + 1, max(items) + 2
    items[dup_a] = ItemRecord(dup_a, base.text_emb.copy(), base.image_emb.copy(),
                              base.price)
    items[dup_b] = ItemRecord(dup_b, base.text_emb.copy(), base.image_emb.copy(),
                              base.price)
    ck = adapt(pretrained, TaskDataset(target.task_id, items, target.sequences,
                                       target.role),
               adapt_spec("relearn"), tiny_irl_cfg(), tiny_intent_cfg())
    _, seq = target.sequences[0]
    ranked = score_all_items(ck, seq[:-2], items)
    pos = {i: r for r, (i, _) in enumerate(ranked)}
    got = dict(ranked)
    assert got[dup_a] == got[dup_b]
    assert pos[dup_a] < pos[dup_b]


def test_base_scores_ignore_interaction_table(pretrained, mini_suite):
    target = mini_suite[2]
    ck = adapt(pretrained, target, adapt_spec("relearn"), tiny_irl_cfg(),
               tiny_intent_cfg())
    _, seq = target.sequences[0]
    before = score_all_items(ck, seq[:-2], target.items)
    # attach garbage interaction embeddings; content-only path must not read them
    rng = np.random.default_rng(1)
    ck.interaction_emb = InteractionEmb(
        ids=np.sort(list(target.items)),
        table=Tensor(rng.standard_normal((len(target.items), tiny_irl_cfg().d))),
    )
    after = score_all_items(ck, seq[:-2], target.items, use_interaction=False)
    assert before == after
    with_table = score_all_items(ck, seq[:-2], target.items)
    assert with_table != before


def test_score_errors(pretrained, mini_suite):
    target = mini_suite[2]
    with pytest.raises(ConfigError):
        score_all_items(pretrained, [1], target.items)
    ck = adapt(pretrained, target, adapt_spec("relearn"), tiny_irl_cfg(),
               tiny_intent_cfg())
    with pytest.raises(DataError):
        score_all_items(ck, [], target.items)
    with pytest.raises(DataError):
        score_all_items(ck, [999999999], target.items)
