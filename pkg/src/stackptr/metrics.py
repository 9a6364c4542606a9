"""Attachment-score evaluation and cross-domain averaging."""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Sequence

from .treebank import DependencyTree


@dataclass(frozen=True)
class DomainScore:
    token_count: int
    correct_heads: int
    correct_heads_and_labels: int

    @property
    def uas(self) -> float:
        return 100.0 * self.correct_heads / self.token_count if self.token_count else 0.0

    @property
    def las(self) -> float:
        return (100.0 * self.correct_heads_and_labels / self.token_count
                if self.token_count else 0.0)


@dataclass(frozen=True)
class EvalReport:
    domains: dict[str, DomainScore]

    @property
    def average_las(self) -> float:
        return average_domains([score.las for score in self.domains.values()])

    def as_text(self) -> str:
        rows = [f"{'domain':<12} {'tokens':>8} {'UAS':>7} {'LAS':>7}"]
        for name, s in self.domains.items():
            rows.append(f"{name:<12} {s.token_count:>8} {s.uas:>7.2f} {s.las:>7.2f}")
        rows.append(f"average LAS: {self.average_las}")
        return "\n".join(rows)

    def as_records(self) -> str:
        """Machine-readable key=value block."""
        lines = []
        for name, s in self.domains.items():
            lines.append(f"domain={name} tokens={s.token_count} "
                         f"uas={s.uas:.6f} las={s.las:.6f}")
        lines.append(f"average_las={self.average_las}")
        return "\n".join(lines)


def count_attachments(gold: Sequence[DependencyTree],
                      predicted: Sequence[DependencyTree],
                      exclude_pos: Iterable[str] | None = None) -> DomainScore:
    if len(gold) != len(predicted):
        raise ValueError(
            f"corpus size mismatch: {len(gold)} gold vs {len(predicted)} predicted"
        )
    excluded = frozenset(exclude_pos or ())
    tokens = heads_ok = both_ok = 0
    for idx, (g, p) in enumerate(zip(gold, predicted)):
        if len(g) != len(p):
            raise ValueError(
                f"sentence {idx}: length mismatch ({len(g)} gold vs {len(p)} predicted)"
            )
        for i in range(1, len(g) + 1):
            if g.tokens[i - 1].pos in excluded:
                continue
            tokens += 1
            if p.heads[i] == g.heads[i]:
                heads_ok += 1
                if p.labels[i - 1] == g.labels[i - 1]:
                    both_ok += 1
    return DomainScore(tokens, heads_ok, both_ok)


def attachment_scores(gold: Sequence[DependencyTree],
                      predicted: Sequence[DependencyTree],
                      exclude_pos: Iterable[str] | None = None) -> tuple[float, float]:
    """(UAS %, LAS %) over aligned corpora; ROOT is never counted.

    Every real token counts unless its gold POS is in ``exclude_pos``.
    """
    score = count_attachments(gold, predicted, exclude_pos)
    return score.uas, score.las


def average_domains(las_by_domain: Sequence[float]) -> float:
    """Unweighted mean, reported half-up at one decimal."""
    if not las_by_domain:
        raise ValueError("no domains to average")
    mean = sum(las_by_domain) / len(las_by_domain)
    return float(Decimal(repr(mean)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def evaluate_domains(pairs: dict[str, tuple[Sequence[DependencyTree],
                                            Sequence[DependencyTree]]],
                     exclude_pos: Iterable[str] | None = None) -> EvalReport:
    return EvalReport({name: count_attachments(g, p, exclude_pos)
                       for name, (g, p) in pairs.items()})
