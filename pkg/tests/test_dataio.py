import numpy as np
import pytest

from modalrec import dataio
from modalrec.errors import CorruptionError, DataError, FormatError


def f32(*vals):
    return np.array(vals, dtype=np.float32)


def test_single_record_round_trip(tmp_path):
    path = tmp_path / "x.emb"
    dataio.write_embedding_file(path, 2, {7: f32(1.0, 0.0)})
    dim, table = dataio.read_embedding_file(path)
    assert dim == 2
    assert list(table) == [7]
    assert np.array_equal(table[7], f32(1.0, 0.0))


def test_round_trip_identity_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    table = {int(i): rng.standard_normal(5).astype(np.float32) for i in range(40)}
    path = tmp_path / "x.emb"
    dataio.write_embedding_file(path, 5, table)
    dim, back = dataio.read_embedding_file(path)
    assert dim == 5 and set(back) == set(table)
    for k in table:
        assert back[k].tobytes() == table[k].tobytes()


def test_write_is_deterministic(tmp_path):
    table = {7: f32(1, 0), 3: f32(2, 2)}
    a, b = tmp_path / "a.emb", tmp_path / "b.emb"
    dataio.write_embedding_file(a, 2, table)
    dataio.write_embedding_file(b, 2, dict(reversed(table.items())))
    assert a.read_bytes() == b.read_bytes()


def test_empty_map_valid_file(tmp_path):
    path = tmp_path / "e.emb"
    dataio.write_embedding_file(path, 4, {})
    dim, table = dataio.read_embedding_file(path)
    assert dim == 4 and table == {}


def test_write_dimension_mismatch(tmp_path):
    with pytest.raises(DataError):
        dataio.write_embedding_file(tmp_path / "x.emb", 2, {1: f32(1, 2), 2: f32(3)})


def test_read_bad_magic(tmp_path):
    path = tmp_path / "x.emb"
    dataio.write_embedding_file(path, 2, {1: f32(1, 2)})
    body = bytearray(path.read_bytes())
    body[:4] = b"NOPE"
    path.write_bytes(bytes(body))
    with pytest.raises(FormatError):
        dataio.read_embedding_file(path)


def test_read_bad_version(tmp_path):
    path = tmp_path / "x.emb"
    dataio.write_embedding_file(path, 2, {1: f32(1, 2)})
    body = bytearray(path.read_bytes())
    body[4] = 9
    path.write_bytes(bytes(body))
    with pytest.raises(FormatError):
        dataio.read_embedding_file(path)


def test_read_truncated_payload(tmp_path):
    path = tmp_path / "x.emb"
    dataio.write_embedding_file(path, 3, {1: f32(1, 2, 3), 2: f32(4, 5, 6)})
    body = path.read_bytes()
    path.write_bytes(body[:-5])
    with pytest.raises(CorruptionError):
        dataio.read_embedding_file(path)


def test_read_duplicate_id(tmp_path):
    import struct

    path = tmp_path / "x.emb"
    rec = struct.pack("<Q", 1) + np.zeros(2, dtype="<f4").tobytes()
    path.write_bytes(struct.pack("<4sIQI", b"ANTE", 1, 2, 2) + rec + rec)
    with pytest.raises(DataError):
        dataio.read_embedding_file(path)


# ----------------------------------------------------------------------


def write_task(tmp_path, interactions, items=None, meta=None):
    """interactions: list of (user, item, ts)."""
    if items is None:
        items = sorted({i for _, i, _ in interactions})
    with open(tmp_path / "items.tsv", "w") as f:
        f.write("item_id\tprice\n")
        for i in items:
            f.write(f"{i}\t{float(i) + 0.5}\n")
    with open(tmp_path / "interactions.tsv", "w") as f:
        f.write("user_id\titem_id\ttimestamp\n")
        for u, i, t in interactions:
            f.write(f"{u}\t{i}\t{t}\n")
    table = {i: np.array([i, 1], dtype=np.float32) for i in items}
    dataio.write_embedding_file(tmp_path / "text.emb", 2, table)
    dataio.write_embedding_file(tmp_path / "image.emb", 2, table)
    if meta is not None:
        import json

        (tmp_path / "meta.json").write_text(json.dumps(meta))


def test_load_truncates_to_most_recent(tmp_path):
    write_task(tmp_path, [("u", i, i) for i in range(1, 8)], items=range(1, 8))
    ds = dataio.load_task_dataset(tmp_path, max_seq_len=5)
    assert ds.sequences == [("u", [3, 4, 5, 6, 7])]


def test_load_sorts_by_timestamp(tmp_path):
    write_task(tmp_path, [("u", 1, 30), ("u", 2, 10), ("u", 3, 20)])
    ds = dataio.load_task_dataset(tmp_path, max_seq_len=50)
    assert ds.sequences == [("u", [2, 3, 1])]


def test_load_tie_timestamps_stable_order(tmp_path):
    write_task(tmp_path, [("u", 5, 1), ("u", 4, 1), ("u", 3, 1)])
    ds = dataio.load_task_dataset(tmp_path, max_seq_len=50)
    assert ds.sequences == [("u", [5, 4, 3])]


def test_raw_mode_drops_sparse_users(tmp_path):
    rows = [("big", i % 3 + 1, i) for i in range(15)]
    rows += [("small", 1, 0), ("small", 2, 1), ("small", 3, 2), ("small", 1, 3)]
    write_task(tmp_path, rows)
    ds = dataio.load_task_dataset(tmp_path, max_seq_len=50, raw_mode=True)
    assert [u for u, _ in ds.sequences] == ["big"]


def test_raw_mode_drops_sparse_items(tmp_path):
    rows = [("u%d" % u, 1, 2 * u) for u in range(6)]
    rows += [("u%d" % u, 2, 2 * u + 1) for u in range(6)]
    rows += [("u0", 99, 100)]  # item 99 occurs once
    # give u0 enough kept interactions to survive
    rows += [("u0", 1, 101), ("u0", 2, 102), ("u0", 1, 103)]
    write_task(tmp_path, rows)
    ds = dataio.load_task_dataset(tmp_path, max_seq_len=50, raw_mode=True)
    assert 99 not in ds.items
    for _, seq in ds.sequences:
        assert 99 not in seq


def test_load_missing_file(tmp_path):
    write_task(tmp_path, [("u", 1, 0), ("u", 1, 1), ("u", 1, 2)])
    (tmp_path / "image.emb").unlink()
    with pytest.raises(DataError):
        dataio.load_task_dataset(tmp_path, max_seq_len=50)


def test_load_unknown_item_in_interactions(tmp_path):
    write_task(tmp_path, [("u", 1, 0), ("u", 1, 1), ("u", 1, 2)])
    with open(tmp_path / "interactions.tsv", "a") as f:
        f.write("u\t42\t3\n")
    with pytest.raises(DataError):
        dataio.load_task_dataset(tmp_path, max_seq_len=50)


def test_load_item_missing_modality(tmp_path):
    write_task(tmp_path, [("u", 1, 0), ("u", 1, 1), ("u", 1, 2)], items=[1, 2])
    dataio.write_embedding_file(tmp_path / "image.emb", 2, {1: f32(1, 1)})
    with pytest.raises(DataError):
        dataio.load_task_dataset(tmp_path, max_seq_len=50)


def test_load_short_sequence_error_names_user(tmp_path):
    write_task(tmp_path, [("bob", 1, 0), ("bob", 2, 1)])
    with pytest.raises(DataError, match="bob"):
        dataio.load_task_dataset(tmp_path, max_seq_len=50)


def test_meta_role(tmp_path):
    write_task(
        tmp_path, [("u", 1, 0), ("u", 1, 1), ("u", 1, 2)],
        meta={"task_id": "t", "role": "target"},
    )
    ds = dataio.load_task_dataset(tmp_path, max_seq_len=50)
    assert ds.task_id == "t" and ds.role == "target"


# ----------------------------------------------------------------------


def test_split_basic():
    ds = dataio.TaskDataset("t", {}, [("u", list("abcde"))])
    sp = dataio.split_leave_one_out(ds)
    (u,) = sp.users
    assert u.train == ["a", "b", "c"] and u.val == "d" and u.test == "e"


def test_split_minimum_length():
    ds = dataio.TaskDataset("t", {}, [("u", list("abc"))])
    (u,) = dataio.split_leave_one_out(ds).users
    assert u.train == ["a"] and u.val == "b" and u.test == "c"


def test_split_too_short():
    ds = dataio.TaskDataset("t", {}, [("u", list("ab"))])
    with pytest.raises(DataError, match="u"):
        dataio.split_leave_one_out(ds)


def test_split_reassembly_property():
    rng = np.random.default_rng(4)
    seqs = []
    for u in range(20):
        n = int(rng.integers(3, 12))
        seqs.append((f"u{u}", [int(x) for x in rng.integers(0, 50, n)]))
    sp = dataio.split_leave_one_out(dataio.TaskDataset("t", {}, seqs))
    for (user, seq), split in zip(seqs, sp.users):
        assert split.user_id == user
        assert split.train + [split.val] + [split.test] == seq
