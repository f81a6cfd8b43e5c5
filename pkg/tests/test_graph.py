import numpy as np
import pytest

from rgat.graph import (ParseError, Triplet, Vocab, VocabError, build_graph, load_triplets,
                        neighbors)
from gradcheck import random_kg


def _write(tmp_path, name, lines):
    p = tmp_path / name
    p.write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    return p


def test_load_small_file(tmp_path):
    path = _write(tmp_path, "train.txt", ["a\tr\tb", "b\tr\tc"])
    triplets, vocab = load_triplets(path)
    assert len(triplets) == 2
    assert vocab.num_entities == 3 and vocab.num_relations == 1
    assert triplets[1] == Triplet(vocab.entity_id("b"), 0, vocab.entity_id("c"))


def test_malformed_line_reports_line_number(tmp_path):
    path = _write(tmp_path, "train.txt", ["a\tr\tb", "a\tr"])
    with pytest.raises(ParseError, match=":2:"):
        load_triplets(path)


def test_unknown_name_in_frozen_vocab(tmp_path):
    _, vocab = load_triplets(_write(tmp_path, "train.txt", ["a\tr\tb"]))
    with pytest.raises(VocabError, match="zzz"):
        load_triplets(_write(tmp_path, "test.txt", ["a\tr\tzzz"]), vocab)
    with pytest.raises(VocabError):
        load_triplets(_write(tmp_path, "valid.txt", ["a\tq\tb"]), vocab)


def test_blank_lines_skipped(tmp_path):
    path = tmp_path / "t.txt"
    path.write_text("a\tr\tb\n\n\nb\tr\ta\n", encoding="utf-8")
    assert len(load_triplets(path)[0]) == 2


def test_vocab_augment_layout():
    v = Vocab(["a", "b"], ["r", "q"]).augment()
    assert v.num_relations == 2 and v.num_aug_relations == 5
    assert v.relation_names == ["r", "q", "r_inv", "q_inv", "self_loop"]
    assert v.inverse(0) == 2 and v.inverse(3) == 1 and v.inverse(4) == 4
    assert v.augment() is v


def test_vocab_augment_avoids_name_clash():
    v = Vocab(["a"], ["r", "r_inv"]).augment()
    assert len(set(v.relation_names)) == 5


def test_vocab_dump():
    v = Vocab(["a"], ["r"]).augment()
    assert "0\ta" in v.dump() and "2\tself_loop" in v.dump()


def test_single_triplet_graph():
    vocab = Vocab.synthetic(2, 1)
    a, b, r, r_inv, r_sp = 0, 1, 0, 1, 2
    g = build_graph([Triplet(a, r, b)], vocab)
    assert neighbors(g, b) == ((a, r), (b, r_sp))
    assert neighbors(g, a) == ((b, r_inv), (a, r_sp))
    assert g.edge_count == 4


def test_self_loops_only():
    g = build_graph([], Vocab.synthetic(3, 2))
    assert [neighbors(g, v) for v in range(3)] == [((v, 4),) for v in range(3)]
    assert g.edge_count == 3


def test_flat_arrays_grouped_by_target():
    rng = np.random.default_rng(0)
    _, triplets, g = random_kg(rng, 12, 3, 40)
    assert np.all(np.diff(g.dst) >= 0)
    assert sum(len(neighbors(g, v)) for v in range(12)) == g.edge_count == 2 * 40 + 12
    flat = [(int(u), int(i)) for u, i in zip(g.src, g.rel)]
    assert flat == [p for v in range(12) for p in neighbors(g, v)]


def test_graph_invariants_random():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        vocab, triplets, g = random_kg(rng, 15, 4, 50)
        R = vocab.num_relations
        # round trip from forward edges
        forward = sorted((u, i, v) for v in range(15) for u, i in neighbors(g, v) if i < R)
        assert forward == sorted(tuple(t) for t in triplets)
        # inverse symmetry
        for v in range(15):
            for u, i in neighbors(g, v):
                if i < R:
                    assert (v, i + R) in neighbors(g, u)
        # exactly one self-loop per entity
        loops = [(u, i) for v in range(15) for u, i in neighbors(g, v) if i == 2 * R]
        assert len(loops) == 15
        assert all(neighbors(g, v).count((v, 2 * R)) == 1 for v in range(15))


def test_duplicates_kept():
    g = build_graph([Triplet(0, 0, 1), Triplet(0, 0, 1)], Vocab.synthetic(2, 1))
    assert g.edge_count == 2 * 2 + 2


def test_out_of_bounds_triplet():
    with pytest.raises(IndexError):
        build_graph([Triplet(0, 0, 5)], Vocab.synthetic(2, 1))
