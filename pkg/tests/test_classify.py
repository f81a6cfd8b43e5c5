import numpy as np
import pytest

from rgat import autodiff as ad
from rgat.classify import LabelError, accuracy, ce_loss, class_logits, load_labels
from rgat.graph import Vocab
from gradcheck import check


def test_zero_weights_give_uniform_rows():
    p = class_logits(ad.Tensor(np.random.default_rng(0).normal(size=(5, 4))), ad.Tensor(np.zeros((3, 4))))
    np.testing.assert_allclose(p.data, 1 / 3, atol=1e-15)


def test_single_class_is_certain():
    p = class_logits(ad.Tensor(np.random.default_rng(1).normal(size=(5, 4))), ad.Tensor(np.ones((1, 4))))
    np.testing.assert_array_equal(p.data, 1.0)


def test_softmax_formula_oracle():
    rng = np.random.default_rng(2)
    e, W = rng.normal(size=(6, 4)) * 3, rng.normal(size=(5, 4))
    z = e @ W.T
    expect = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    got = class_logits(ad.Tensor(e), ad.Tensor(W)).data
    np.testing.assert_allclose(got, expect, rtol=1e-12)
    np.testing.assert_allclose(got.sum(axis=1), 1.0, atol=1e-12)


def test_ce_examples():
    onehot = np.eye(3)[[0, 2, 1]]
    assert float(ce_loss(ad.Tensor(onehot), [0, 1, 2], [0, 2, 1]).data) == 0.0
    uni = np.full((3, 4), 0.25)
    assert float(ce_loss(ad.Tensor(uni), [0, 1], [3, 1]).data) == pytest.approx(np.log(4))
    rng = np.random.default_rng(3)
    p = rng.dirichlet(np.ones(4), size=6)
    ids, cls = np.array([0, 2, 5]), np.array([1, 3, 0])
    expect = -sum(np.log(p[i, c]) for i, c in zip(ids, cls)) / 3
    assert float(ce_loss(ad.Tensor(p), ids, cls).data) == pytest.approx(expect, rel=1e-12)
    with pytest.raises(LabelError):
        ce_loss(ad.Tensor(p), [], [])


def test_accuracy_rules():
    p = np.array([[0.5, 0.5], [0.2, 0.8], [0.9, 0.1]])
    assert accuracy(p, [0], [0]) == 1.0
    assert accuracy(p, [0, 1, 2], [0, 1, 0]) == 1.0
    assert accuracy(p, [1, 2], [0, 0]) == 0.5
    with pytest.raises(LabelError):
        accuracy(p, [], [])


def test_ce_gradient_through_stacked_encoder():
    from gradcheck import random_kg
    from rgat.classify import ClassifierHead
    from rgat.layer import ModelConfig, RgatEncoder

    rng = np.random.default_rng(4)
    vocab, _, g = random_kg(rng)
    mc = ModelConfig.stack(2, 2, 4, attention_dropout=0.0, feature_dropout=0.0)
    enc = RgatEncoder(mc, vocab.num_entities, vocab.num_aug_relations)
    head = ClassifierHead(3, mc.d_out_e)
    store = ad.ParamStore()
    enc.init(store, rng)
    head.init(store, rng)
    ids, cls = np.arange(6), rng.integers(0, 3, size=6)
    err = check(lambda: ce_loss(head(enc(g, store).entities, store), ids, cls), list(store.params.values()))
    assert err < 1e-5


def test_load_labels(tmp_path):
    vocab = Vocab(["a", "b", "c", "d"], ["r"])
    (tmp_path / "l.tsv").write_text("b\tz\na\ty\nc\tz\nd\ty\n")
    (tmp_path / "s.tsv").write_text("a\ttrain\nb\ttrain\nc\ttest\n")
    ls = load_labels(tmp_path / "l.tsv", tmp_path / "s.tsv", vocab)
    assert ls.class_names == ["y", "z"] and ls.num_classes == 2
    ents, cls = ls.split("train")
    assert dict(zip(ents.tolist(), cls.tolist())) == {0: 0, 1: 1}
    with pytest.raises(LabelError):
        ls.split("valid")


@pytest.mark.parametrize("labels,splits", [
    ("a\tx\na\ty\n", "a\ttrain\n"),
    ("a\tx\n", "a\ttrain\na\ttest\n"),
    ("a\tx\n", "a\tholdout\n"),
    ("a\tx\n", "b\ttrain\n"),
])
def test_label_errors(tmp_path, labels, splits):
    (tmp_path / "l.tsv").write_text(labels)
    (tmp_path / "s.tsv").write_text(splits)
    with pytest.raises(LabelError):
        load_labels(tmp_path / "l.tsv", tmp_path / "s.tsv", Vocab(["a", "b"], ["r"]))
