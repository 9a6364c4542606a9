"""Checkpoint serialization: text manifest + little-endian float32 blob.

Layout (UTF-8 until the blob marker, then raw bytes):

    stackptr-ckpt/1
    [config N]      N key=value lines, dataclass field order
    [store]         one rng_seed=... line
    [provenance N]  N lines, each prefixed "- "
    [vocab.word N]  N symbol lines   (same for char / pos / label)
    [tensors N]     N lines: name<TAB>dim,dim,...<TAB>byte-offset
    [blob]
    <float32 data>

Section counts make the parse unambiguous — a vocabulary symbol that happens
to look like a section header is just a line to consume. Values are stored
as 32-bit floats (training math stays 64-bit); loading then saving a file
reproduces it byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import ParameterStore
from .config import TrainConfig
from .treebank import Vocabulary

FORMAT_VERSION = "stackptr-ckpt/1"
VOCAB_KEYS = ("word", "char", "pos", "label")
PARAM_PREFIXES = ("embeddings.", "encoder.", "decoder.", "biaffine.")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: ParameterStore
    vocabs: dict[str, Vocabulary]
    config: TrainConfig
    provenance: list[str] = field(default_factory=list)
    format_version: str = FORMAT_VERSION

    def with_note(self, note: str) -> "Checkpoint":
        return replace(self, provenance=self.provenance + [note])


def _check_names(params: ParameterStore) -> None:
    for name in params.names():
        if not name.startswith(PARAM_PREFIXES):
            raise CheckpointError(f"parameter {name!r} outside the checkpoint namespaces")


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    _check_names(ckpt.params)
    lines: list[str] = [ckpt.format_version]
    flat = ckpt.config.to_flat()
    lines.append(f"[config {len(flat)}]")
    lines.extend(f"{k}={v}" for k, v in flat.items())
    lines.append("[store]")
    lines.append(f"rng_seed={ckpt.params.rng_seed}")
    lines.append(f"[provenance {len(ckpt.provenance)}]")
    for note in ckpt.provenance:
        lines.append("- " + note.replace("\n", " "))
    for key in VOCAB_KEYS:
        vocab = ckpt.vocabs[key]
        lines.append(f"[vocab.{key} {len(vocab)}]")
        lines.extend(vocab.symbols)
    blobs: list[bytes] = []
    offset = 0
    tensor_lines: list[str] = []
    for name, tensor in ckpt.params.items():
        raw = np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()
        shape_text = ",".join(str(d) for d in tensor.data.shape)
        tensor_lines.append(f"{name}\t{shape_text}\t{offset}")
        blobs.append(raw)
        offset += len(raw)
    lines.append(f"[tensors {len(tensor_lines)}]")
    lines.extend(tensor_lines)
    lines.append("[blob]")
    payload = "\n".join(lines).encode("utf-8") + b"\n" + b"".join(blobs)
    Path(path).write_bytes(payload)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def line(self) -> str:
        nl = self.data.find(b"\n", self.pos)
        if nl < 0:
            raise CheckpointError("truncated manifest")
        out = self.data[self.pos:nl].decode("utf-8")
        self.pos = nl + 1
        return out

    def section(self, name: str) -> int:
        """Consume a '[name N]' header (or bare '[name]'), return N."""
        text = self.line()
        if not (text.startswith(f"[{name}") and text.endswith("]")):
            raise CheckpointError(f"expected [{name} ...] section, got {text!r}")
        body = text[1:-1]
        if body == name:
            return 0
        count = body[len(name):].strip()
        if not count.isdigit():
            raise CheckpointError(f"bad section count in {text!r}")
        return int(count)

    def rest(self) -> bytes:
        return self.data[self.pos:]


def load_checkpoint(path: str | Path) -> Checkpoint:
    reader = _Reader(Path(path).read_bytes())
    version = reader.line()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version!r}")
    flat: dict[str, str] = {}
    for _ in range(reader.section("config")):
        key, sep, value = reader.line().partition("=")
        if not sep:
            raise CheckpointError(f"malformed config line {key!r}")
        flat[key] = value
    config = TrainConfig.from_flat(flat)
    reader.section("store")
    seed_line = reader.line()
    if not seed_line.startswith("rng_seed="):
        raise CheckpointError(f"expected rng_seed line, got {seed_line!r}")
    rng_seed = int(seed_line.removeprefix("rng_seed="))
    provenance = []
    for _ in range(reader.section("provenance")):
        note = reader.line()
        if not note.startswith("- "):
            raise CheckpointError(f"malformed provenance line {note!r}")
        provenance.append(note[2:])
    vocabs: dict[str, Vocabulary] = {}
    for key in VOCAB_KEYS:
        symbols = tuple(reader.line() for _ in range(reader.section(f"vocab.{key}")))
        vocabs[key] = Vocabulary(symbols, reserved=key != "label")
    entries: list[tuple[str, tuple[int, ...], int]] = []
    for _ in range(reader.section("tensors")):
        parts = reader.line().split("\t")
        if len(parts) != 3:
            raise CheckpointError(f"malformed tensor line {parts!r}")
        name, shape_text, offset_text = parts
        shape = tuple(int(d) for d in shape_text.split(",")) if shape_text else ()
        entries.append((name, shape, int(offset_text)))
    reader.section("blob")
    blob = reader.rest()
    params = ParameterStore(rng_seed)
    for name, shape, offset in entries:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        values = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        params.put(name, values.reshape(shape).astype(np.float64))
    _check_names(params)
    return Checkpoint(params=params, vocabs=vocabs, config=config,
                      provenance=provenance, format_version=version)
