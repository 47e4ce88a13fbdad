import numpy as np
import pytest

from riccikge.errors import CorruptCache, DegenerateGraph, IndexOutOfRange, MalformedLine, UnknownName
from riccikge.kg import (HEAD, TAIL, KnowledgeGraph, Triple, Vocab, build_incident_index, load_dataset,
                         load_graph_cache, load_triples_tsv, sample_negatives, save_graph_cache)


def test_single_line_parse(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("a\tlikes\tb\n")
    triples, vocab = load_triples_tsv(p)
    assert triples == [Triple(0, 0, 1)]
    assert vocab.entity_index == {"a": 0, "b": 1}
    assert vocab.relation_index == {"likes": 0}


def test_empty_file_leaves_vocab(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("")
    vocab = Vocab.from_names(["x"], ["r"])
    triples, out = load_triples_tsv(p, vocab)
    assert triples == [] and out is vocab and vocab.entity_names == ["x"]


def test_blank_lines_skipped_and_order_kept(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("c\tr\ta\n\n  \na\ts\tb\n")
    triples, vocab = load_triples_tsv(p)
    assert vocab.entity_names == ["c", "a", "b"]
    assert triples == [Triple(0, 0, 1), Triple(1, 1, 2)]


@pytest.mark.parametrize("line", ["a\tb\n", "a\tb\tc\td\n", "a b c\n"])
def test_malformed_line_reports_number(tmp_path, line):
    p = tmp_path / "t.txt"
    p.write_text("x\ty\tz\n" + line)
    with pytest.raises(MalformedLine) as exc:
        load_triples_tsv(p)
    assert exc.value.line_number == 2


def test_strict_unknown_name(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("a\tr\tzzz\n")
    with pytest.raises(UnknownName) as exc:
        load_triples_tsv(p, Vocab.from_names(["a"], ["r"]), strict=True)
    assert exc.value.name == "zzz"


def test_load_dataset_strict_splits(toy_dataset):
    graph = load_dataset(toy_dataset)
    assert len(graph.triples) == 30 and len(graph.valid) == 4 and len(graph.test) == 4
    assert graph.array.shape == (30, 3)
    assert len(graph.known) == 38


def test_incident_single_edge():
    inc = build_incident_index([(0, 0, 1)], 2)
    assert inc[0].tolist() == [0] and inc[1].tolist() == [0]


def test_incident_three_triples():
    inc = build_incident_index([(0, 0, 1), (1, 0, 2), (0, 1, 2)], 3)
    assert [x.tolist() for x in inc] == [[0, 2], [0, 1], [1, 2]]


def test_incident_self_loop():
    inc = build_incident_index([(0, 0, 0)], 1)
    assert inc[0].tolist() == [0, 0]


def test_incident_out_of_range():
    with pytest.raises(IndexOutOfRange):
        build_incident_index([(0, 0, 5)], 3)


def test_negative_differs_in_one_slot():
    rng = np.random.default_rng(0)
    neg = sample_negatives(np.array([[0, 0, 1]]), 1, rng, 3)
    diff = neg.triples[0] != np.array([0, 0, 1])
    assert diff.sum() == 1
    assert diff[0] if neg.side[0] == HEAD else diff[2]


def test_negatives_always_corrupt_flagged_side():
    rng = np.random.default_rng(1)
    pos = np.array([[0, 0, 1], [2, 1, 3], [4, 0, 4]])
    neg = sample_negatives(pos, 50, rng, 5)
    src = pos[neg.source]
    col = np.where(neg.side == HEAD, 0, 2)
    other = np.where(neg.side == HEAD, 2, 0)
    rows = np.arange(len(neg))
    assert (neg.triples[rows, col] != src[rows, col]).all()
    assert (neg.triples[rows, other] == src[rows, other]).all()
    assert (neg.triples[:, 1] == src[:, 1]).all()
    assert set(np.unique(neg.side)) == {HEAD, TAIL}


def test_filter_forces_the_only_unknown_head():
    # entities {0,1,2}; head corruption of (0,0,1) can give (1,0,1) or (2,0,1)
    known = {(h, 0, t) for h in range(3) for t in range(3)} - {(2, 0, 1)}
    for seed in range(20):
        rng = np.random.default_rng(seed)
        neg = sample_negatives(np.array([[0, 0, 1]]), 1, rng, 3, filter_set=known)
        if neg.side[0] == HEAD:
            assert tuple(neg.triples[0]) == (2, 0, 1)


def test_filter_gives_up_after_retries():
    known = {(h, 0, t) for h in range(2) for t in range(2)}
    neg = sample_negatives(np.array([[0, 0, 1]]), 3, np.random.default_rng(0), 2, filter_set=known)
    assert len(neg) == 3


def test_negative_count():
    pos = np.zeros((512, 3), dtype=np.int64)
    pos[:, 2] = 1
    neg = sample_negatives(pos, 1024, np.random.default_rng(0), 10)
    assert len(neg) == 524_288


def test_single_entity_graph_cannot_corrupt():
    with pytest.raises(DegenerateGraph):
        sample_negatives(np.array([[0, 0, 0]]), 1, np.random.default_rng(0), 1)


def test_graph_cache_round_trip(tmp_path):
    g = KnowledgeGraph.from_arrays(4, 2, [(0, 0, 1), (1, 1, 2)], [(2, 0, 3)], [(3, 1, 0)])
    path = tmp_path / "g.bin"
    save_graph_cache(g, path)
    back = load_graph_cache(path)
    assert back.triples == g.triples and back.valid == g.valid and back.test == g.test
    assert back.vocab.entity_names == g.vocab.entity_names


def test_graph_cache_corruption(tmp_path):
    g = KnowledgeGraph.from_arrays(3, 1, [(0, 0, 1)])
    path = tmp_path / "g.bin"
    save_graph_cache(g, path)
    raw = bytearray(path.read_bytes())
    raw[12] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CorruptCache):
        load_graph_cache(path)
    path.write_bytes(b"nope")
    with pytest.raises(CorruptCache):
        load_graph_cache(path)
