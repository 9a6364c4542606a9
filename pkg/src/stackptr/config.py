"""Model and training hyperparameters, plus flat config-file I/O."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

CHILD_ORDERS = ("inside_out", "left2right", "right2left")
ATTENTION_SCALES = ("per_head", "model_dim")


@dataclass(frozen=True)
class TrainConfig:
    """Every knob the parser and trainer read.

    Defaults are the full-size configuration; tests shrink the dimension
    fields to keep runtimes sane. ``d_model`` is derived (word + char-CNN +
    POS widths) and must stay divisible by the head count ``r``.
    """

    # token representation
    d_w: int = 300                 # word embedding size
    char_dim: int = 50
    pos_dim: int = 50
    num_filters: int = 50          # char-CNN output size
    filter_width: int = 3
    # encoder / decoder
    r: int = 4                     # attention heads
    d_h: int = 256                 # LSTM hidden units per direction
    arc_mlp_dim: int = 512
    label_mlp_dim: int = 128
    attention_scale: str = "per_head"
    child_order: str = "inside_out"
    single_root: bool = False
    # optimization
    learning_rate: float = 0.001
    decay_rate: float = 0.75
    decay_patience: int = 5        # non-improving epochs per LR decay
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    clip_norm: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    # regularization
    p_in: float = 0.5
    p_rnn: float = 0.5
    p_out: float = 0.5
    # data / bookkeeping
    min_word_count: int = 2
    seed: int = 1

    def __post_init__(self) -> None:
        if self.d_model % self.r != 0:
            raise ValueError(f"d_model={self.d_model} not divisible by r={self.r}")
        if self.attention_scale not in ATTENTION_SCALES:
            raise ValueError(f"unknown attention_scale: {self.attention_scale!r}")
        if self.child_order not in CHILD_ORDERS:
            raise ValueError(f"unknown child_order: {self.child_order!r}")
        for name in ("p_in", "p_rnn", "p_out"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"{name} must be in [0, 1): {rate}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive: {self.learning_rate}")
        if min(self.batch_size, self.patience, self.decay_patience) < 1:
            raise ValueError("batch_size, patience and decay_patience must be >= 1")
        if self.max_epochs < 0:  # 0 = evaluate-only, legal for fine-tuning
            raise ValueError("max_epochs must be >= 0")

    @property
    def d_model(self) -> int:
        # The char-CNN contributes num_filters dims to each token row (its
        # output size), not char_dim; the two coincide at full scale (50).
        return self.d_w + self.num_filters + self.pos_dim

    @property
    def decoder_dim(self) -> int:
        """Decoder LSTM width == encoder state width (2 directions x d_h)."""
        return 2 * self.d_h

    def replaced(self, **changes) -> "TrainConfig":
        merged = asdict(self)
        merged.update(changes)
        return TrainConfig(**merged)

    # -- flat key=value text, used for config files and checkpoint manifests --

    def to_flat(self) -> dict[str, str]:
        out: dict[str, str] = {}
        for key, value in asdict(self).items():
            if isinstance(value, bool):
                out[key] = "true" if value else "false"
            else:
                out[key] = repr(value) if isinstance(value, float) else str(value)
        return out

    @classmethod
    def from_flat(cls, raw: dict[str, str]) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        unknown = set(raw) - set(types)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs: dict[str, object] = {}
        for key, text in raw.items():
            kind = types[key]
            if kind == "int":
                kwargs[key] = int(text)
            elif kind == "float":
                kwargs[key] = float(text)
            elif kind == "bool":
                if text not in ("true", "false"):
                    raise ValueError(f"{key} must be true or false, got {text!r}")
                kwargs[key] = text == "true"
            else:
                kwargs[key] = text
        return cls(**kwargs)

    def to_file(self, path: str | Path) -> None:
        lines = [f"{k}={v}" for k, v in self.to_flat().items()]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        raw: dict[str, str] = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            raw[key.strip()] = value.strip()
        return cls.from_flat(raw)
