"""The assembled parser: encoder + pointer decoder + biaffine scorers.

One :class:`Parser` owns a parameter store, the vocabularies, and a config.
`sentence_loss` gives the teacher-forced training objective for one tree;
`parse` runs greedy decoding over a bare sentence. Both build the same
scoring closures: the decoder LSTM advances once per transition, fed the
encoder state of the current stack top, and its output is pushed through
small ELU layers before the biaffine arc/label scorers.
"""

from __future__ import annotations

from typing import Sequence

from . import autodiff as ad
from . import decoder as dec
from . import encoder as enc
from .autodiff import ParameterStore, Rng, Tensor
from .config import TrainConfig
from .treebank import DependencyTree, Sentence, Vocabulary, make_tree


def create_parameters(store: ParameterStore, config: TrainConfig,
                      vocabs: dict[str, Vocabulary]) -> None:
    """Register every model tensor. Insertion order is part of the
    determinism contract, so keep this the single registration point."""
    enc.create_embedding_params(store, config, len(vocabs["word"]),
                                len(vocabs["char"]), len(vocabs["pos"]))
    enc.create_encoder_params(store, config)
    dec.create_decoder_params(store, config.decoder_dim)
    dec.create_biaffine_params(store, config.decoder_dim, config.arc_mlp_dim,
                               config.label_mlp_dim, len(vocabs["label"]))


def _mlp(store: ParameterStore, prefix: str, x: Tensor) -> Tensor:
    """One ELU layer; works on a matrix of rows or a single vector."""
    w = store[f"{prefix}.W"]
    b = store[f"{prefix}.b"]
    return ad.elu(ad.add(ad.matmul(x, ad.transpose(w)), b))


class Parser:
    def __init__(self, config: TrainConfig, vocabs: dict[str, Vocabulary],
                 store: ParameterStore):
        self.config = config
        self.vocabs = vocabs
        self.store = store

    @classmethod
    def build(cls, config: TrainConfig, vocabs: dict[str, Vocabulary]) -> "Parser":
        store = ParameterStore(config.seed)
        create_parameters(store, config, vocabs)
        return cls(config, vocabs, store)

    @property
    def label_count(self) -> int:
        return len(self.vocabs["label"])

    # -- scoring closures ---------------------------------------------------

    def _scorers(self, encoder_states: Tensor, training: bool, rng: Rng | None):
        """Build (score_fn, label_score_fn) sharing one decoder LSTM run.

        Each score_fn call advances the LSTM with the encoder state of the
        current stack top; label_score_fn for the same step reuses that
        decoder output, so it must be called before the next score_fn call.
        """
        cfg = self.config
        store = self.store
        drop_rng = rng.split("p_out") if rng is not None else None

        def drop(t: Tensor) -> Tensor:
            return ad.dropout(t, cfg.p_out, training, drop_rng)

        arc_enc = drop(_mlp(store, "biaffine.arc.enc", encoder_states))
        label_enc = drop(_mlp(store, "biaffine.label.enc", encoder_states))
        hidden = Tensor([0.0] * cfg.decoder_dim)
        cell = Tensor([0.0] * cfg.decoder_dim)
        hid_mask: Tensor | None = None
        if training and cfg.p_rnn > 0.0 and rng is not None:
            mask = rng.split("decoder.hid").random((cfg.decoder_dim,))
            hid_mask = Tensor((mask >= cfg.p_rnn) / (1.0 - cfg.p_rnn))
        state_box: dict[str, Tensor] = {}

        def score_fn(state: dec.DecoderState) -> Tensor:
            nonlocal hidden, cell
            top_vec = ad.row(encoder_states, state.top)
            h_in = ad.mul(hidden, hid_mask) if hid_mask is not None else hidden
            hidden, cell = ad.lstm_cell(top_vec, h_in, cell,
                                        store["decoder.lstm.W_ih"],
                                        store["decoder.lstm.W_hh"],
                                        store["decoder.lstm.b"])
            state_box["label_dec"] = drop(_mlp(store, "biaffine.label.dec", hidden))
            arc_dec = drop(_mlp(store, "biaffine.arc.dec", hidden))
            return dec.biaffine_score(arc_dec, arc_enc,
                                      store["biaffine.arc.U"],
                                      store["biaffine.arc.w_dec"],
                                      store["biaffine.arc.w_enc"],
                                      store["biaffine.arc.b"])

        def label_score_fn(state: dec.DecoderState, child: int) -> Tensor:
            d = state_box["label_dec"]
            e = ad.row(label_enc, child)
            bilin = ad.bilinear_vec(d, store["biaffine.label.U"], e)
            lin = ad.add(ad.matmul(store["biaffine.label.w_dec"], d),
                         ad.matmul(store["biaffine.label.w_enc"], e))
            return ad.add(ad.add(bilin, lin), store["biaffine.label.b"])

        return score_fn, label_score_fn

    # -- training and inference entry points ---------------------------------

    def sentence_loss(self, tree: DependencyTree, training: bool = False,
                      rng: Rng | None = None) -> Tensor:
        """Length-normalized negative log-likelihood of the gold path."""
        states = enc.encode_sentence(tree, self.vocabs, self.store, self.config,
                                     training=training, rng=rng)
        score_fn, label_score_fn = self._scorers(states, training, rng)
        label_ids = [self.vocabs["label"].index(lbl) for lbl in tree.labels]
        ll = dec.path_log_likelihood(tree, label_ids, score_fn, label_score_fn,
                                     self.label_count,
                                     single_root=self.config.single_root,
                                     child_order=self.config.child_order)
        return ad.scale(ad.neg(ll), 1.0 / len(tree))

    def parse(self, sent: Sentence | DependencyTree) -> DependencyTree:
        """Greedy-decode one sentence into a predicted tree."""
        states = enc.encode_sentence(sent, self.vocabs, self.store, self.config,
                                     training=False, rng=None)
        score_fn, label_score_fn = self._scorers(states, training=False, rng=None)
        heads, label_ids = dec.decode_greedy(len(sent.tokens), score_fn,
                                             label_score_fn,
                                             single_root=self.config.single_root)
        labels = [self.vocabs["label"].symbol(i) for i in label_ids]
        return make_tree(sent.tokens, heads, labels, allow_multiple_roots=True)

    def parse_corpus(self, sents: Sequence[Sentence | DependencyTree]
                     ) -> list[DependencyTree]:
        return [self.parse(s) for s in sents]
