"""Model configuration and the canonical parameter-shape table.

param_shapes() is the single description of every tensor the model owns.
init_model materializes exactly these shapes and the cost estimator sums
them, so "parameter count" always means the same thing everywhere.

Head kinds:
  standard  tied softmax over the target vocabulary (output weights are the
            decoder embedding)
  atomic    one output row per document and no decoder embedding at all;
            decoding is a single step
  pawa      prefix-aware weights: an auxiliary decoder-only stack reads the
            already-generated prefix and emits, through a linear adapter, a
            d x d transform applied to the decoder state before the tied
            projection
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from genir.errors import ConfigError

HEAD_KINDS = ("standard", "atomic", "pawa")


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int
    d_model: int
    num_heads: int
    d_ff: int
    input_vocab_size: int
    target_vocab_size: int
    max_input_len: int = 128
    max_target_len: int = 32
    head_kind: str = "standard"
    dropout_rate: float = 0.1
    shared_vocab: bool = False
    pawa_layers: int = 0  # 0 means num_layers

    def __post_init__(self) -> None:
        if self.num_layers < 1:
            raise ConfigError("num_layers must be >= 1")
        if self.d_model % self.num_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by num_heads {self.num_heads}"
            )
        if self.head_kind not in HEAD_KINDS:
            raise ConfigError(f"head_kind must be one of {HEAD_KINDS}")
        if self.input_vocab_size < 1 or self.target_vocab_size < 1:
            raise ConfigError("vocabulary sizes must be positive")
        if self.shared_vocab and self.input_vocab_size != self.target_vocab_size:
            raise ConfigError("shared_vocab requires equal input/target vocab sizes")
        if self.shared_vocab and self.head_kind == "atomic":
            raise ConfigError("atomic head has no decoder embedding to share")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def effective_pawa_layers(self) -> int:
        return self.pawa_layers or self.num_layers

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


def _self_block_shapes(prefix: str, d: int, d_ff: int) -> dict[str, tuple[int, ...]]:
    return {
        f"{prefix}.ln1.scale": (d,),
        f"{prefix}.ln1.offset": (d,),
        f"{prefix}.attn.wq": (d, d),
        f"{prefix}.attn.wk": (d, d),
        f"{prefix}.attn.wv": (d, d),
        f"{prefix}.attn.wo": (d, d),
        f"{prefix}.ln2.scale": (d,),
        f"{prefix}.ln2.offset": (d,),
        f"{prefix}.ff.w1": (d, d_ff),
        f"{prefix}.ff.b1": (d_ff,),
        f"{prefix}.ff.w2": (d_ff, d),
        f"{prefix}.ff.b2": (d,),
    }


def _dec_block_shapes(prefix: str, d: int, d_ff: int) -> dict[str, tuple[int, ...]]:
    return {
        f"{prefix}.ln1.scale": (d,),
        f"{prefix}.ln1.offset": (d,),
        f"{prefix}.self.wq": (d, d),
        f"{prefix}.self.wk": (d, d),
        f"{prefix}.self.wv": (d, d),
        f"{prefix}.self.wo": (d, d),
        f"{prefix}.ln2.scale": (d,),
        f"{prefix}.ln2.offset": (d,),
        f"{prefix}.cross.wq": (d, d),
        f"{prefix}.cross.wk": (d, d),
        f"{prefix}.cross.wv": (d, d),
        f"{prefix}.cross.wo": (d, d),
        f"{prefix}.ln3.scale": (d,),
        f"{prefix}.ln3.offset": (d,),
        f"{prefix}.ff.w1": (d, d_ff),
        f"{prefix}.ff.b1": (d_ff,),
        f"{prefix}.ff.w2": (d_ff, d),
        f"{prefix}.ff.b2": (d,),
    }


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter tensor, in the fixed order init and IO use."""
    d, d_ff = cfg.d_model, cfg.d_ff
    shapes: dict[str, tuple[int, ...]] = {"embed.enc": (cfg.input_vocab_size, d)}
    if cfg.head_kind != "atomic" and not cfg.shared_vocab:
        shapes["embed.dec"] = (cfg.target_vocab_size, d)
    for i in range(cfg.num_layers):
        shapes.update(_self_block_shapes(f"enc.{i}", d, d_ff))
    shapes["enc.final.scale"] = (d,)
    shapes["enc.final.offset"] = (d,)
    for i in range(cfg.num_layers):
        shapes.update(_dec_block_shapes(f"dec.{i}", d, d_ff))
    shapes["dec.final.scale"] = (d,)
    shapes["dec.final.offset"] = (d,)
    if cfg.head_kind == "atomic":
        shapes["head.atomic"] = (cfg.target_vocab_size, d)
    if cfg.head_kind == "pawa":
        for i in range(cfg.effective_pawa_layers):
            shapes.update(_self_block_shapes(f"pawa.{i}", d, d_ff))
        shapes["pawa.final.scale"] = (d,)
        shapes["pawa.final.offset"] = (d,)
        shapes["pawa.adapt.w"] = (d, d * d)
        shapes["pawa.adapt.b"] = (d * d,)
    return shapes


def dec_embed_name(cfg: ModelConfig) -> str:
    """Which tensor acts as decoder embedding / tied output projection."""
    if cfg.head_kind == "atomic":
        raise ConfigError("atomic head has no decoder embedding")
    return "embed.enc" if cfg.shared_vocab else "embed.dec"
