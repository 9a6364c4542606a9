import math

import numpy as np
import pytest

from stackptr import autodiff as ad
from stackptr.autodiff import ParameterStore, Rng, Tensor, grad_check
from stackptr.config import TrainConfig
from stackptr.encoder import (
    attention_scale,
    bilstm_encode,
    char_cnn,
    char_ids,
    create_embedding_params,
    create_encoder_params,
    embed_tokens,
    encode_sentence,
    multi_head_self_attention,
)
from stackptr.treebank import Token, make_tree

from synthetic import corpus


def _setup(tiny_config, toy_vocabs, seed=3):
    store = ParameterStore(seed)
    create_embedding_params(store, tiny_config, len(toy_vocabs["word"]),
                            len(toy_vocabs["char"]), len(toy_vocabs["pos"]))
    create_encoder_params(store, tiny_config)
    return store


class TestCharCnn:
    def test_output_dimension(self, tiny_config, toy_vocabs):
        store = _setup(tiny_config, toy_vocabs)
        out = char_cnn("猫", toy_vocabs["char"], store, tiny_config)
        assert out.shape == (tiny_config.num_filters,)

    def test_single_char_word_padded(self, tiny_config, toy_vocabs):
        ids = char_ids("猫", toy_vocabs["char"], tiny_config.filter_width)
        assert len(ids) == tiny_config.filter_width
        assert ids[1:] == [0, 0]

    def test_order_sensitivity(self, tiny_config, toy_vocabs):
        store = _setup(tiny_config, toy_vocabs)
        ab = char_cnn("猫狗", toy_vocabs["char"], store, tiny_config)
        ba = char_cnn("狗猫", toy_vocabs["char"], store, tiny_config)
        assert not np.allclose(ab.data, ba.data)

    def test_empty_form_rejected(self, tiny_config, toy_vocabs):
        with pytest.raises(ValueError, match="empty character sequence"):
            char_ids("", toy_vocabs["char"], 3)


class TestEmbedTokens:
    def test_row_dimension_is_d_model(self, tiny_config, toy_vocabs, toy_trees):
        store = _setup(tiny_config, toy_vocabs)
        x = embed_tokens(toy_trees[0], toy_vocabs, store, tiny_config)
        assert x.shape == (len(toy_trees[0]) + 1, tiny_config.d_model)
        assert tiny_config.d_model == tiny_config.d_w + tiny_config.num_filters \
            + tiny_config.pos_dim

    def test_identical_tokens_identical_rows(self, tiny_config, toy_vocabs):
        store = _setup(tiny_config, toy_vocabs)
        tree = make_tree([Token("猫", "NN"), Token("睡", "VV"), Token("猫", "NN")],
                         [-1, 2, 0, 2], ["nsubj", "root", "dobj"])
        x = embed_tokens(tree, toy_vocabs, store, tiny_config)
        np.testing.assert_array_equal(x.data[1], x.data[3])

    def test_oov_maps_to_unk_row(self, tiny_config, toy_vocabs):
        store = _setup(tiny_config, toy_vocabs)
        unk = make_tree([Token("夔", "NN")], [-1, 0], ["root"])
        x = embed_tokens(unk, toy_vocabs, store, tiny_config)
        np.testing.assert_array_equal(
            x.data[1, : tiny_config.d_w], store["embeddings.word"].data[1])


def _attention_probs(x, store, config, head):
    q = x @ store[f"encoder.attn.head{head}.Wq"].data.T
    k = x @ store[f"encoder.attn.head{head}.Wk"].data.T
    scores = (q @ k.T) / attention_scale(config)
    e = np.exp(scores - scores.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


class TestAttention:
    def test_rows_normalize(self, tiny_config, toy_vocabs):
        store = _setup(tiny_config, toy_vocabs)
        rng = Rng(5).split("attn-rows")
        for _ in range(50):
            x = rng.random((4, tiny_config.d_model))
            for head in range(tiny_config.r):
                probs = _attention_probs(x, store, tiny_config, head)
                np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_permutation_covariance(self, tiny_config, toy_vocabs):
        store = _setup(tiny_config, toy_vocabs)
        rng = Rng(6).split("perm")
        for _ in range(10):
            x = rng.random((5, tiny_config.d_model))
            perm = rng.permutation(5)
            out = multi_head_self_attention(Tensor(x), store, tiny_config).data
            out_p = multi_head_self_attention(Tensor(x[perm]), store,
                                              tiny_config).data
            np.testing.assert_allclose(out_p, out[perm], atol=1e-8)

    def test_single_row_closed_form(self, tiny_config, toy_vocabs):
        # One position attends only to itself: out = Wm @ concat_h(Wv_h x).
        store = _setup(tiny_config, toy_vocabs)
        x = Rng(7).split("single").random((1, tiny_config.d_model))
        out = multi_head_self_attention(Tensor(x), store, tiny_config).data
        parts = [store[f"encoder.attn.head{h}.Wv"].data @ x[0]
                 for h in range(tiny_config.r)]
        expected = store["encoder.attn.Wm"].data @ np.concatenate(parts)
        np.testing.assert_allclose(out[0], expected, atol=1e-12)

    def test_single_head_matches_unsplit_formula(self, toy_vocabs):
        config = TrainConfig(d_w=6, char_dim=3, pos_dim=3, num_filters=3, r=1,
                             d_h=4, min_word_count=1)
        store = _setup(config, toy_vocabs)
        x = Rng(8).split("r1").random((4, config.d_model))
        out = multi_head_self_attention(Tensor(x), store, config).data
        probs = _attention_probs(x, store, config, 0)
        v = x @ store["encoder.attn.head0.Wv"].data.T
        expected = (probs @ v) @ store["encoder.attn.Wm"].data.T
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_scale_switch(self, tiny_config, toy_vocabs):
        per_head = attention_scale(tiny_config)
        model_dim = attention_scale(tiny_config.replaced(attention_scale="model_dim"))
        assert per_head == math.sqrt(tiny_config.d_model // tiny_config.r)
        assert model_dim == math.sqrt(tiny_config.d_model)


class TestBiLstm:
    def test_output_shape(self, tiny_config, toy_vocabs, toy_trees):
        store = _setup(tiny_config, toy_vocabs)
        states = encode_sentence(toy_trees[0], toy_vocabs, store, tiny_config)
        assert states.shape == (len(toy_trees[0]) + 1, 2 * tiny_config.d_h)

    def test_forward_state_ignores_future(self, tiny_config, toy_vocabs):
        store = _setup(tiny_config, toy_vocabs)
        rng = Rng(9).split("future")
        x = rng.random((5, tiny_config.d_model))
        y = x.copy()
        y[3:] = rng.random((2, tiny_config.d_model))
        out_x = bilstm_encode(Tensor(x), store, tiny_config).data
        out_y = bilstm_encode(Tensor(y), store, tiny_config).data
        d_h = tiny_config.d_h
        np.testing.assert_array_equal(out_x[:3, :d_h], out_y[:3, :d_h])
        assert not np.allclose(out_x[:3, d_h:], out_y[:3, d_h:])

    def test_empty_input_rejected(self, tiny_config, toy_vocabs):
        store = _setup(tiny_config, toy_vocabs)
        with pytest.raises(ValueError, match="empty"):
            bilstm_encode(Tensor(np.zeros((0, tiny_config.d_model))),
                          store, tiny_config)


def test_encoder_end_to_end_gradients(tiny_config, toy_vocabs):
    """Sum of encoder states as the loss; full parameter sweep at 1e-4."""
    store = _setup(tiny_config, toy_vocabs)
    tree = corpus(seed=1, size=3)[0]

    def loss(params):
        return ad.sum_all(encode_sentence(tree, toy_vocabs, params, tiny_config))

    errs = grad_check(loss, store, epsilon=1e-5)
    worst = max(errs, key=errs.get)
    assert errs[worst] < 1e-4, f"{worst}: {errs[worst]}"


def test_shapes_depend_only_on_config(tiny_config, toy_vocabs):
    store = _setup(tiny_config, toy_vocabs)
    for tree in corpus(seed=2, size=5):
        states = encode_sentence(tree, toy_vocabs, store, tiny_config)
        assert states.shape == (len(tree) + 1, 2 * tiny_config.d_h)
