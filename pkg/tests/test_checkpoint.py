import numpy as np
import pytest

from modalrec import training
from modalrec.checkpoint import (Checkpoint, InteractionEmb, load_checkpoint,
                                 save_checkpoint)
from modalrec.errors import CorruptionError, DataError, FormatError

from conftest import tiny_intent_cfg, tiny_irl_cfg


def make_checkpoint(stage="pretrained", with_inter=False, seed=9):
    rng = np.random.default_rng(seed)
    irl_cfg, intent_cfg = tiny_irl_cfg(), tiny_intent_cfg()
    irl_params = training.init_irl_params(6, 5, irl_cfg, rng)
    intent_params = training.init_intent_params(intent_cfg, rng)
    inter = None
    if with_inter:
        inter = training.init_interaction_emb(range(10), irl_cfg.d, rng)
    return Checkpoint(
        irl_params=irl_params, intent_params=intent_params, interaction_emb=inter,
        price_norm=(1.5, 80.25), config_hash=bytes(range(32)), seed=seed,
        stage=stage, irl_cfg=irl_cfg, intent_cfg=intent_cfg,
    )


def test_round_trip_bit_exact(tmp_path):
    ck = make_checkpoint()
    path = tmp_path / "a.antc"
    save_checkpoint(ck, path)
    back = load_checkpoint(path)
    assert back.stage == ck.stage
    assert back.seed == ck.seed
    assert back.config_hash == ck.config_hash
    assert back.price_norm == ck.price_norm
    assert back.irl_cfg == ck.irl_cfg
    assert back.intent_cfg == ck.intent_cfg
    a = dict(ck.named_tensors())
    b = dict(back.named_tensors())
    assert a.keys() == b.keys()
    for name in a:
        assert a[name].data.tobytes() == b[name].data.tobytes(), name


def test_round_trip_with_interaction_table(tmp_path):
    ck = make_checkpoint(stage="adapted", with_inter=True)
    path = tmp_path / "b.antc"
    save_checkpoint(ck, path)
    back = load_checkpoint(path)
    assert np.array_equal(back.interaction_emb.ids, ck.interaction_emb.ids)
    assert (back.interaction_emb.table.data.tobytes()
            == ck.interaction_emb.table.data.tobytes())


def test_save_is_deterministic(tmp_path):
    a, b = tmp_path / "a.antc", tmp_path / "b.antc"
    save_checkpoint(make_checkpoint(), a)
    save_checkpoint(make_checkpoint(), b)
    assert a.read_bytes() == b.read_bytes()


def test_pretrained_cannot_carry_interaction_table(tmp_path):
    ck = make_checkpoint(stage="pretrained", with_inter=True)
    with pytest.raises(DataError):
        save_checkpoint(ck, tmp_path / "x.antc")


def test_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "c.antc"
    save_checkpoint(make_checkpoint(), path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    bad = tmp_path / "bad.antc"
    bad.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_checkpoint(bad)

    trunc = tmp_path / "trunc.antc"
    trunc.write_bytes(path.read_bytes()[:-9])
    with pytest.raises(CorruptionError):
        load_checkpoint(trunc)


def test_interaction_emb_validation():
    with pytest.raises(DataError):
        InteractionEmb(ids=np.array([3, 1, 2]), table=None)
    with pytest.raises(DataError):
        InteractionEmb(ids=np.array([1, 1]), table=None)
