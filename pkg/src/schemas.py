"""
Validated data models shared across the engine (pydantic v2).
"""
from enum import Enum
from typing import Any, Dict, List, Literal, Optional, Type, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError, SkipRunError

M = TypeVar("M", bound=BaseModel)


def validated(model_cls: Type[M], data: Dict[str, Any], error_cls: Type[SkipRunError] = ConfigError) -> M:
    """Build model_cls from data, re-raising pydantic failures as error_cls."""
    try:
        return model_cls.model_validate(data)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or model_cls.__name__}: {err['msg']}"
            for err in e.errors()
        )
        raise error_cls(f"invalid {model_cls.__name__}: {problems}") from e


class ModelConfig(BaseModel):
    """Llama-style architecture hyperparameters."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_layers: int = Field(..., gt=0, description="number of transformer blocks L")
    d_model: int = Field(..., gt=0)
    n_heads: int = Field(..., gt=0)
    n_kv_heads: int = Field(..., gt=0)
    d_ff: int = Field(..., gt=0)
    vocab_size: int = Field(..., gt=0)
    max_seq_len: int = Field(..., gt=0)
    rope_theta_base: float = Field(10000.0, gt=1.0)
    norm_eps: float = Field(1e-5, ge=0.0)

    @model_validator(mode="after")
    def _check_divisibility(self) -> "ModelConfig":
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.n_heads % self.n_kv_heads != 0:
            raise ValueError(f"n_heads {self.n_heads} not divisible by n_kv_heads {self.n_kv_heads}")
        if (self.d_model // self.n_heads) % 2 != 0:
            raise ValueError(f"head dim {self.d_model // self.n_heads} must be even for rotary embeddings")
        return self

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def kv_dim(self) -> int:
        return self.n_kv_heads * self.head_dim

    @classmethod
    def create(cls, **fields) -> "ModelConfig":
        return validated(cls, fields)


class SkipMode(str, Enum):
    BLOCK = "block"
    ATTENTION = "attn"
    MLP = "mlp"


class Sublayer(str, Enum):
    ATTENTION = "attention"
    MLP = "mlp"
    BOTH = "both"


class SkipSpec(BaseModel):
    """
    User-level skip request. Exactly one of k / keep_fraction; when neither
    is given the request is the full model (k = 0).
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: SkipMode = SkipMode.BLOCK
    k: Optional[int] = Field(None, ge=0)
    keep_fraction: Optional[float] = Field(None, gt=0.0, le=1.0)
    keep_last: bool = False

    @model_validator(mode="after")
    def _one_amount(self) -> "SkipSpec":
        if self.k is not None and self.keep_fraction is not None:
            raise ValueError("give either k or keep_fraction, not both")
        return self

    @classmethod
    def full(cls) -> "SkipSpec":
        return cls(mode=SkipMode.BLOCK, k=0)

    @classmethod
    def create(cls, **fields) -> "SkipSpec":
        return validated(cls, fields)


class BenchConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    prompt_len: int = Field(50, gt=0)
    n_sequences: int = Field(1000, gt=0)
    warmup_runs: int = Field(10, ge=0)
    seed: int = 0


class McItem(BaseModel):
    model_config = ConfigDict(frozen=True)

    context: List[int] = Field(..., min_length=1)
    choices: List[List[int]] = Field(..., min_length=2)
    gold: int = Field(..., ge=0)

    @model_validator(mode="after")
    def _check_item(self) -> "McItem":
        if self.gold >= len(self.choices):
            raise ValueError(f"gold index {self.gold} out of range for {len(self.choices)} choices")
        if any(t < 0 for t in self.context) or any(t < 0 for c in self.choices for t in c):
            raise ValueError("token ids must be non-negative")
        return self


class McTask(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = "task"
    items: List[McItem] = Field(default_factory=list)


class SynthSource(BaseModel):
    config: ModelConfig
    seed: int = 0


class RunConfig(BaseModel):
    """Everything a CLI command needs; built from INI defaults, a JSON file and flags."""
    model_config = ConfigDict(extra="forbid")

    checkpoint: Optional[str] = None
    synth: Optional[SynthSource] = None
    skip: List[str] = Field(default_factory=list)
    sweep: bool = False
    out: Optional[str] = None
    format: Literal["csv", "table"] = "table"
    quiet: bool = False
    # bench
    prompt_len: int = Field(50, gt=0)
    n_sequences: int = Field(1000, gt=0)
    warmup_runs: int = Field(10, ge=0)
    seed: int = 0
    # eval
    tasks: List[str] = Field(default_factory=list)
    corpus: Optional[str] = None
    normalization: Literal["sum", "mean"] = "sum"
    workers: int = Field(1, gt=0)
    # profile
    prompts: Optional[str] = None
    n_prompts: int = Field(16, gt=0)

    @model_validator(mode="after")
    def _one_model_source(self) -> "RunConfig":
        if self.checkpoint and self.synth:
            raise ValueError("give either checkpoint or synth, not both")
        return self

    def require_model_source(self) -> None:
        if not self.checkpoint and not self.synth:
            raise ConfigError("a checkpoint path or a synth spec is required")

    def bench_config(self) -> BenchConfig:
        return BenchConfig(prompt_len=self.prompt_len, n_sequences=self.n_sequences,
                           warmup_runs=self.warmup_runs, seed=self.seed)
