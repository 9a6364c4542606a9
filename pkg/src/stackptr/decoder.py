"""Top-down pointer decoder: transition system, legality, biaffine scoring.

The machine starts with ROOT alone on an internal stack. At every step it
"points" from the stack top t to a position p:

* p == t  pops t (its subtree is finished);
* p != t  attaches p to t (new arc t -> p) and pushes p.

A run over an n-token sentence always takes exactly 2n+1 steps: each real
token is pushed once (n arc steps) and every position including ROOT is
popped once (n+1 self-points). The stack emptying is the terminal state.

Legality has two flavors. In ``decode`` mode the self-point on ROOT is
forbidden while tokens remain unattached, since popping ROOT then would
strand them. In ``likelihood`` mode the self-point is always part of the
normalizer — training scores the pop option even where the executor would
refuse it — so probabilities over legal actions stay comparable across
steps. The two masks are identical everywhere else.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .treebank import DependencyTree

ScoreFn = Callable[["DecoderState"], Tensor]
LabelScoreFn = Callable[["DecoderState", int], Tensor]


@dataclass(frozen=True)
class DecoderState:
    """Immutable snapshot of the pointer machine.

    ``heads[i] == -1`` means unattached; position 0 (ROOT) keeps -1 forever.
    """

    n: int
    stack: tuple[int, ...]
    heads: tuple[int, ...]
    step_count: int

    @property
    def top(self) -> int:
        if not self.stack:
            raise ValueError("empty stack has no top")
        return self.stack[-1]

    def is_terminal(self) -> bool:
        return not self.stack

    def unattached(self) -> list[int]:
        return [i for i in range(1, self.n + 1) if self.heads[i] == -1]


def initial_state(n: int) -> DecoderState:
    if n < 1:
        raise ValueError(f"sentence length must be >= 1, got {n}")
    return DecoderState(n=n, stack=(0,), heads=(-1,) * (n + 1), step_count=0)


def legal_mask(state: DecoderState, mode: str = "decode",
               single_root: bool = False) -> np.ndarray:
    """Boolean mask over pointer targets 0..n for the current stack top."""
    if mode not in ("decode", "likelihood"):
        raise ValueError(f"unknown legality mode: {mode!r}")
    if state.is_terminal():
        raise ValueError("no legal actions in a terminal state")
    t = state.top
    on_stack = set(state.stack)
    any_unattached = any(state.heads[p] == -1 for p in range(1, state.n + 1))
    # Self-point: always available off ROOT; on ROOT only once everything is
    # attached (decode) or unconditionally in the likelihood normalizer.
    self_ok = t != 0 or not any_unattached or mode == "likelihood"
    mask = np.zeros(state.n + 1, dtype=bool)
    for p in range(1, state.n + 1):
        mask[p] = state.heads[p] == -1 and p not in on_stack
    if single_root and t == 0 and any(h == 0 for h in state.heads[1:]) and self_ok:
        # A second root child is excluded whenever some other action exists;
        # if pointing is the machine's only way forward, the restriction yields.
        mask[1:] = False
    mask[t] = self_ok
    return mask


def step(state: DecoderState, target: int, single_root: bool = False) -> DecoderState:
    """Apply one pointer action under decode-mode legality."""
    mask = legal_mask(state, mode="decode", single_root=single_root)
    if not 0 <= target <= state.n or not mask[target]:
        raise ValueError(
            f"illegal pointer target {target} at step {state.step_count} "
            f"(stack top {state.top})"
        )
    t = state.top
    if target == t:
        return DecoderState(n=state.n, stack=state.stack[:-1], heads=state.heads,
                            step_count=state.step_count + 1)
    heads = list(state.heads)
    heads[target] = t
    return DecoderState(n=state.n, stack=state.stack + (target,),
                        heads=tuple(heads), step_count=state.step_count + 1)


def _child_key(order: str, head: int):
    if order == "inside_out":
        return lambda c: (abs(c - head), c)
    if order == "left2right":
        return lambda c: c
    if order == "right2left":
        return lambda c: -c
    raise ValueError(f"unknown child_order: {order!r}")


def gold_path(tree: DependencyTree, child_order: str = "inside_out") -> list[int]:
    """Canonical action sequence producing ``tree``.

    Depth-first from ROOT, each visit closed by a self-point; a head's
    children are emitted nearest-first ("inside_out", ties to the left) or in
    strict linear order ("left2right" / "right2left").
    """
    children: dict[int, list[int]] = {}
    for i in range(1, len(tree) + 1):
        children.setdefault(tree.heads[i], []).append(i)
    targets: list[int] = []

    def visit(node: int) -> None:
        for child in sorted(children.get(node, []), key=_child_key(child_order, node)):
            targets.append(child)
            visit(child)
        targets.append(node)

    visit(0)
    return targets


def replay(n: int, targets: Sequence[int], single_root: bool = False) -> DecoderState:
    """Run a full action sequence from the initial state; must end terminal."""
    state = initial_state(n)
    for target in targets:
        state = step(state, target, single_root=single_root)
    if not state.is_terminal():
        raise ValueError(f"action sequence left {len(state.stack)} items on the stack")
    return state


# ---------------------------------------------------------------------------
# Biaffine scoring
# ---------------------------------------------------------------------------


def biaffine_score(decoder_vec: Tensor, encoder_mat: Tensor, weight: Tensor,
                   w_dec: Tensor, w_enc: Tensor, bias: Tensor,
                   mask: np.ndarray | None = None) -> Tensor:
    """score_i = d'Ue_i + w_dec.d + w_enc.e_i + b, over all candidate rows.

    ``decoder_vec`` is (d_dec,), ``encoder_mat`` is (n+1, d_enc), ``weight``
    is (d_dec, d_enc); output is (n+1,). With ``mask`` given, illegal
    positions come back as -inf so the downstream softmax assigns them
    exactly zero.
    """
    through = ad.matmul(encoder_mat, ad.matmul(ad.transpose(weight), decoder_vec))
    enc_term = ad.matmul(encoder_mat, w_enc)
    dec_term = ad.add(ad.matmul(w_dec, decoder_vec), bias)
    scores = ad.add(ad.add(through, enc_term), dec_term)
    if mask is not None:
        scores = ad.mask_fill(scores, mask)
    return scores


def create_decoder_params(store: ad.ParameterStore, decoder_dim: int) -> None:
    """Single-layer unidirectional LSTM; input = encoder state of stack top."""
    store.create("decoder.lstm.W_ih", (4 * decoder_dim, decoder_dim))
    store.create("decoder.lstm.W_hh", (4 * decoder_dim, decoder_dim))
    store.create("decoder.lstm.b", (4 * decoder_dim,), init="zeros")


def create_biaffine_params(store: ad.ParameterStore, encoder_dim: int,
                           arc_mlp_dim: int, label_mlp_dim: int,
                           label_count: int) -> None:
    """Register the arc and label scoring heads (the "biaffine." namespace).

    Vectors and biases get small-uniform values rather than zeros: the
    dec-side linear term and the scalar bias shift all arc scores equally,
    so their gradients vanish and zeros would persist — a reinitialized
    head must be distinguishable from a retained one.
    """
    store.create("biaffine.arc.dec.W", (arc_mlp_dim, encoder_dim))
    store.create("biaffine.arc.dec.b", (arc_mlp_dim,), init="embedding")
    store.create("biaffine.arc.enc.W", (arc_mlp_dim, encoder_dim))
    store.create("biaffine.arc.enc.b", (arc_mlp_dim,), init="embedding")
    store.create("biaffine.arc.U", (arc_mlp_dim, arc_mlp_dim))
    store.create("biaffine.arc.w_dec", (arc_mlp_dim,), init="embedding")
    store.create("biaffine.arc.w_enc", (arc_mlp_dim,), init="embedding")
    store.create("biaffine.arc.b", (), init="embedding")
    store.create("biaffine.label.dec.W", (label_mlp_dim, encoder_dim))
    store.create("biaffine.label.dec.b", (label_mlp_dim,), init="embedding")
    store.create("biaffine.label.enc.W", (label_mlp_dim, encoder_dim))
    store.create("biaffine.label.enc.b", (label_mlp_dim,), init="embedding")
    store.create("biaffine.label.U", (label_count, label_mlp_dim, label_mlp_dim))
    store.create("biaffine.label.w_dec", (label_count, label_mlp_dim))
    store.create("biaffine.label.w_enc", (label_count, label_mlp_dim))
    store.create("biaffine.label.b", (label_count,), init="embedding")


# ---------------------------------------------------------------------------
# Likelihood and greedy search, generic over the scorer
# ---------------------------------------------------------------------------


def path_log_likelihood(tree: DependencyTree, label_ids: Sequence[int],
                        score_fn: ScoreFn, label_score_fn: LabelScoreFn,
                        label_count: int, single_root: bool = False,
                        child_order: str = "inside_out") -> Tensor:
    """Sum of log P(action) + log P(label) along the canonical gold path.

    ``score_fn`` is called once per step, in path order, and may carry its
    own recurrent state; it returns raw (unmasked) scores over 0..n.
    """
    state = initial_state(len(tree))
    total: Tensor | None = None
    for target in gold_path(tree, child_order=child_order):
        mask = legal_mask(state, mode="likelihood", single_root=single_root)
        scores = ad.mask_fill(score_fn(state), mask)
        term = ad.pick(ad.log_softmax(scores), target)
        if target != state.top:  # arc step: score the relation too
            label_scores = label_score_fn(state, target)
            if label_scores.shape != (label_count,):
                raise ValueError(
                    f"label scorer returned {label_scores.shape}, "
                    f"expected ({label_count},)"
                )
            term = ad.add(term, ad.pick(ad.log_softmax(label_scores), label_ids[target - 1]))
        total = term if total is None else ad.add(total, term)
        state = step(state, target, single_root=single_root)
    assert state.is_terminal()
    assert total is not None
    return total


def decode_greedy(n: int, score_fn: ScoreFn, label_score_fn: LabelScoreFn,
                  single_root: bool = False) -> tuple[list[int], list[int]]:
    """Greedy argmax decoding. Returns (heads, label id per real token).

    Ties break toward the lowest position index. The transition system
    guarantees termination in exactly 2n+1 steps.
    """
    state = initial_state(n)
    label_ids = [-1] * n
    while not state.is_terminal():
        mask = legal_mask(state, mode="decode", single_root=single_root)
        raw = score_fn(state).data
        if not np.isfinite(raw[mask]).all():
            raise ValueError("non-finite arc scores during decoding")
        scores = np.where(mask, raw, -np.inf)
        target = int(scores.argmax())
        if target != state.top:
            label_ids[target - 1] = int(label_score_fn(state, target).data.argmax())
        state = step(state, target, single_root=single_root)
    assert state.step_count == 2 * n + 1
    return list(state.heads), label_ids
