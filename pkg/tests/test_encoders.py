import math

import numpy as np
import pytest
import torch

from gradcheck_util import REL_TOL, max_relative_error, params_of
from weakground.embeddings import load_vectors, save_vectors, synthetic_vectors
from weakground.encoders import (ProposalEncoder, SentenceEncoder, TextClassifier,
                                 build_class_transform, text_cls_loss)
from weakground.vocab import Vocabulary, build_vocabulary


@pytest.fixture(autouse=True)
def double_precision():
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(torch.float32)


def small_proposal_encoder(seed):
    torch.manual_seed(seed)
    return ProposalEncoder(35, 8, init_feature_dim=6, num_layers=2, num_heads=2, coord_scale=0.2).double()


class TestProposalEncoder:
    def test_shape_and_2d_input(self):
        enc = small_proposal_encoder(0)
        x, p = torch.randn(3, 5, 35), torch.rand(3, 5, 6)
        out = enc(x, p)
        assert out.shape == (3, 5, 8)
        torch.testing.assert_close(enc(x[1], p[1]), out[1], rtol=0, atol=1e-12)

    def test_permutation_equivariance(self):
        enc = small_proposal_encoder(1)
        x, p = torch.randn(6, 35), torch.rand(6, 6)
        out = enc(x, p)
        gen = torch.Generator().manual_seed(0)
        for _ in range(100):
            perm = torch.randperm(6, generator=gen)
            assert (enc(x[perm], p[perm]) - out[perm]).abs().max() < 1e-10

    def test_zero_input_zero_bias_projection(self):
        enc = small_proposal_encoder(2)
        with torch.no_grad():
            enc.attr_proj.bias.zero_()
            enc.init_proj.bias.zero_()
        assert torch.count_nonzero(enc.project(torch.zeros(4, 35), torch.zeros(4, 6))) == 0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            small_proposal_encoder(0)(torch.randn(4, 30), torch.rand(4, 6))

    def test_missing_init_features(self):
        with pytest.raises(ValueError):
            small_proposal_encoder(0)(torch.randn(4, 35))

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradients(self, seed):
        enc = small_proposal_encoder(seed)
        x = torch.randn(4, 35, requires_grad=True)
        p = torch.rand(4, 6)
        w = torch.randn(4, 8)
        assert max_relative_error(lambda: (enc(x, p) * w).sum(), [x] + params_of(enc)) < REL_TOL

    def test_finite_outputs(self):
        enc = small_proposal_encoder(3)
        assert torch.isfinite(enc(torch.randn(32, 35) * 10, torch.rand(32, 6))).all()


class TestSentenceEncoder:
    def make(self, seed=0, pooling="last"):
        torch.manual_seed(seed)
        return SentenceEncoder(12, 5, 6, pooling=pooling).double()

    def test_single_token_state(self):
        enc = self.make()
        pooled, states = enc(torch.tensor([4]))
        one_step = enc.cell(enc.embedding(torch.tensor([4])), torch.zeros(1, 6))[0]
        torch.testing.assert_close(pooled, one_step, rtol=0, atol=0)
        assert states.shape == (1, 6)

    def test_padding_is_ignored(self):
        enc = self.make()
        a, _ = enc(torch.tensor([[3, 4, 5]]))
        b, _ = enc(torch.tensor([[3, 4, 5, 0, 0]]), torch.tensor([3]))
        torch.testing.assert_close(a, b, rtol=0, atol=0)

    def test_mean_pooling(self):
        enc = self.make(pooling="mean")
        pooled, states = enc(torch.tensor([[3, 4, 5, 0]]), torch.tensor([3]))
        torch.testing.assert_close(pooled[0], states[0, :3].mean(0))

    def test_distinct_sentences_differ(self):
        enc = self.make()
        rng = np.random.default_rng(0)
        sents = {tuple(rng.integers(2, 12, size=5)) for _ in range(100)}
        pooled, _ = enc(torch.tensor(sorted(sents)))
        assert len({tuple(np.round(r, 12)) for r in pooled.detach().numpy()}) == len(sents)

    @pytest.mark.parametrize("tokens", [torch.zeros((1, 0), dtype=torch.long), torch.tensor([[12]])])
    def test_errors(self, tokens):
        with pytest.raises(ValueError):
            self.make()(tokens)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradients(self, seed):
        enc = self.make(seed)
        tokens = torch.tensor([[2, 5, 7, 3], [4, 4, 9, 0]])
        lengths = torch.tensor([4, 3])
        w = torch.randn(2, 4, 6)

        def loss():
            pooled, states = enc(tokens, lengths)
            return (states * w).sum() + pooled.square().sum()
        assert max_relative_error(loss, params_of(enc)) < REL_TOL

    def test_pretrained_frozen(self):
        table = np.random.default_rng(0).normal(size=(12, 5))
        enc = SentenceEncoder(12, 5, 6, pretrained=table, trainable=False)
        np.testing.assert_array_equal(enc.embedding.weight.detach().numpy(), table)
        assert not enc.embedding.weight.requires_grad


class TestTextClassifier:
    def test_uniform_logits(self):
        assert float(text_cls_loss(torch.zeros(1, 4), [2])) == pytest.approx(math.log(4), abs=1e-12)

    def test_peaked_logit(self):
        logits = torch.tensor([[-50.0, 50.0, -50.0]])
        assert float(text_cls_loss(logits, 1)) < 1e-30

    def test_closed_form_gradient(self):
        logits = torch.randn(5, 6, requires_grad=True)
        labels = torch.tensor([0, 3, 5, 1, 1])
        text_cls_loss(logits, labels).backward()
        expected = (torch.softmax(logits.detach(), -1) - torch.eye(6)[labels]) / 5
        assert (logits.grad - expected).abs().max() < 1e-12

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            text_cls_loss(torch.zeros(2, 4), [0, 4])

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradients(self, seed):
        torch.manual_seed(seed)
        clf = TextClassifier(6, 4).double()
        q = torch.randn(3, 6, requires_grad=True)
        labels = torch.tensor([0, 3, 1])
        assert max_relative_error(lambda: text_cls_loss(clf(q), labels), [q] + params_of(clf)) < REL_TOL


class TestClassTransform:
    def test_identical_names(self):
        vecs = synthetic_vectors(["a", "b", "c"], dim=7, seed=3)
        m = build_class_transform(["a", "b", "c"], ["a", "b", "c"], vecs).matrix
        np.testing.assert_array_equal(np.diag(m), 1.0)

    def test_orthogonal(self):
        vecs = {"x": np.array([1.0, 0, 0]), "y": np.array([0, 2.0, 0]), "z": np.array([0, 0, 3.0])}
        m = build_class_transform(["x", "y", "z"], ["x", "y", "z"], vecs).matrix
        np.testing.assert_array_equal(m, np.eye(3))

    def test_hand_example(self):
        vecs = {"a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0]),
                "c": np.array([1.0, 1.0]) / np.sqrt(2)}
        m = build_class_transform(["a", "b", "c"], ["a", "b", "c"], vecs).matrix
        np.testing.assert_allclose(m[2], [0.70710678, 0.70710678, 1.0], atol=1e-8)

    def test_scale_invariance_and_range(self):
        vecs = synthetic_vectors(["a", "b", "c", "d"], dim=9, seed=1)
        m = build_class_transform(["a", "b"], ["c", "d", "a"], vecs).matrix
        scaled = {k: v * 3.7 for k, v in vecs.items()}
        np.testing.assert_allclose(build_class_transform(["a", "b"], ["c", "d", "a"], scaled).matrix,
                                   m, atol=1e-15)
        assert np.all(np.abs(m) <= 1.0)

    def test_errors(self):
        with pytest.raises(KeyError):
            build_class_transform(["a"], ["b"], {"a": np.ones(2)})
        with pytest.raises(ValueError):
            build_class_transform(["a"], ["b"], {"a": np.ones(2), "b": np.zeros(2)})

    def test_synonyms_are_close(self):
        vecs = synthetic_vectors(["seat", "chair", "desk", "table", "lamp"], dim=32)
        m = build_class_transform(["seat", "desk"], ["chair", "table", "lamp"], vecs).matrix
        assert m[0, 0] > m[0, 1] and m[0, 0] > m[0, 2]
        assert m[1, 1] > m[1, 0] and m[1, 1] > m[1, 2]


class TestEmbeddingsAndVocab:
    def test_vector_file_round_trip(self, tmp_path):
        vecs = synthetic_vectors(["red", "chair"], dim=4)
        save_vectors(tmp_path / "v.json", vecs)
        back = load_vectors(tmp_path / "v.json")
        for k in vecs:
            np.testing.assert_array_equal(back[k], vecs[k])

    def test_vectors_do_not_depend_on_word_order(self):
        a = synthetic_vectors(["red", "chair", "lamp"], dim=4)
        b = synthetic_vectors(["lamp", "red", "chair"], dim=4)
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])

    def test_vocabulary(self):
        vocab = build_vocabulary(["red"], ["chair"], ["left-of"])
        assert vocab.pad_id == 0 and vocab.mask_id == 1
        assert vocab.decode(vocab.encode(["the", "red", "chair"])) == ["the", "red", "chair"]
        assert Vocabulary.from_sidecar(vocab.to_sidecar()) == vocab
        with pytest.raises(KeyError):
            vocab.id("sofa")
