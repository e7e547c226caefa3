"""
Llama-architecture decoder-only transformer on numpy.

Pre-norm residual blocks (RMSNorm -> grouped-query attention with rotary
embeddings; RMSNorm -> SwiGLU MLP). The forward pass consults a SkipSet and
omits skipped residual branches entirely, pre-norm included, so a skipped
sublayer's weights are never read.
"""
import hashlib
import logging
import math
from dataclasses import dataclass, fields, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import CapacityError, ConfigError, InputError, ShapeError
from .numerics import DTYPE, matmul, rms_norm, rope_apply, silu, softmax
from .schemas import ModelConfig, SkipSpec, Sublayer
from .skip_engine import SkipSet, as_skip_set

logger = logging.getLogger(__name__)

ATTENTION_TENSORS = ("wq", "wk", "wv", "wo", "norm")
MLP_TENSORS = ("gate", "up", "down", "norm")


def tensor_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Canonical tensor names and shapes, in checkpoint order."""
    d, kv = config.d_model, config.kv_dim
    shapes: Dict[str, Tuple[int, ...]] = {"embed": (config.vocab_size, d)}
    for i in range(config.n_layers):
        shapes[f"layers.{i}.attn.wq"] = (d, config.n_heads * config.head_dim)
        shapes[f"layers.{i}.attn.wk"] = (d, kv)
        shapes[f"layers.{i}.attn.wv"] = (d, kv)
        shapes[f"layers.{i}.attn.wo"] = (config.n_heads * config.head_dim, d)
        shapes[f"layers.{i}.attn.norm"] = (d,)
        shapes[f"layers.{i}.mlp.gate"] = (d, config.d_ff)
        shapes[f"layers.{i}.mlp.up"] = (d, config.d_ff)
        shapes[f"layers.{i}.mlp.down"] = (config.d_ff, d)
        shapes[f"layers.{i}.mlp.norm"] = (d,)
    shapes["final_norm"] = (d,)
    shapes["lm_head"] = (d, config.vocab_size)
    return shapes


def sublayer_tensor_names(layer: int, sublayer: Union[Sublayer, str]) -> List[str]:
    """Checkpoint names of the tensors owned by a (1-based) layer's sublayer."""
    sub = Sublayer(sublayer)
    names = []
    if sub in (Sublayer.ATTENTION, Sublayer.BOTH):
        names += [f"layers.{layer - 1}.attn.{t}" for t in ATTENTION_TENSORS]
    if sub in (Sublayer.MLP, Sublayer.BOTH):
        names += [f"layers.{layer - 1}.mlp.{t}" for t in MLP_TENSORS]
    return names


def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.require(array, dtype=DTYPE, requirements="C")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class AttentionWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    norm: np.ndarray


@dataclass(frozen=True)
class MlpWeights:
    gate: np.ndarray
    up: np.ndarray
    down: np.ndarray
    norm: np.ndarray


@dataclass(frozen=True)
class LayerWeights:
    attn: AttentionWeights
    mlp: MlpWeights


@dataclass(frozen=True)
class ModelWeights:
    """All learned tensors of a model; arrays are read-only after construction."""
    config: ModelConfig
    embed: np.ndarray
    layers: Tuple[LayerWeights, ...]
    final_norm: np.ndarray
    lm_head: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.layers) != self.config.n_layers:
            raise ShapeError(f"config declares {self.config.n_layers} layers, got {len(self.layers)}")
        expected = tensor_shapes(self.config)
        for name, array in self._iter_raw():
            if tuple(array.shape) != expected[name]:
                raise ShapeError(f"tensor {name} has shape {tuple(array.shape)}, expected {expected[name]}")
        object.__setattr__(self, "embed", _frozen(self.embed))
        object.__setattr__(self, "final_norm", _frozen(self.final_norm))
        object.__setattr__(self, "lm_head", _frozen(self.lm_head))
        for layer in self.layers:
            for part in (layer.attn, layer.mlp):
                for f in fields(part):
                    object.__setattr__(part, f.name, _frozen(getattr(part, f.name)))

    def _iter_raw(self):
        yield "embed", self.embed
        for i, layer in enumerate(self.layers):
            for t in ATTENTION_TENSORS:
                yield f"layers.{i}.attn.{t}", getattr(layer.attn, t)
            for t in MLP_TENSORS:
                yield f"layers.{i}.mlp.{t}", getattr(layer.mlp, t)
        yield "final_norm", self.final_norm
        yield "lm_head", self.lm_head

    def named_tensors(self) -> Dict[str, np.ndarray]:
        """Name -> tensor in canonical checkpoint order."""
        return dict(self._iter_raw())

    @classmethod
    def from_named_tensors(cls, config: ModelConfig, tensors: Mapping[str, np.ndarray]) -> "ModelWeights":
        expected = tensor_shapes(config)
        missing = [n for n in expected if n not in tensors]
        if missing:
            raise ShapeError(f"missing tensors: {', '.join(missing[:5])}{' ...' if len(missing) > 5 else ''}")
        extra = [n for n in tensors if n not in expected]
        if extra:
            raise ShapeError(f"unexpected tensors: {', '.join(extra[:5])}")
        layers = tuple(
            LayerWeights(
                attn=AttentionWeights(*(tensors[f"layers.{i}.attn.{t}"] for t in ATTENTION_TENSORS)),
                mlp=MlpWeights(*(tensors[f"layers.{i}.mlp.{t}"] for t in MLP_TENSORS)),
            )
            for i in range(config.n_layers)
        )
        return cls(config, tensors["embed"], layers, tensors["final_norm"], tensors["lm_head"])

    def with_tensors(self, updates: Mapping[str, np.ndarray]) -> "ModelWeights":
        """Copy of these weights with some tensors replaced by name."""
        tensors = self.named_tensors()
        unknown = [n for n in updates if n not in tensors]
        if unknown:
            raise ShapeError(f"unknown tensor names: {', '.join(unknown)}")
        tensors.update(updates)
        return ModelWeights.from_named_tensors(self.config, tensors)

    @property
    def n_parameters(self) -> int:
        return sum(int(a.size) for a in self.named_tensors().values())

    def checksum(self) -> str:
        """sha256 over names and raw little-endian payloads of every tensor."""
        digest = hashlib.sha256()
        for name, array in self._iter_raw():
            digest.update(name.encode("utf-8"))
            digest.update(array.astype("<f4", copy=False).tobytes())
        return digest.hexdigest()


def init_random(config: Union[ModelConfig, Mapping], seed: int) -> ModelWeights:
    """
    Synthesize weights: matrices ~ N(0, 1) / sqrt(d_model) from
    numpy.random.default_rng(seed), in canonical tensor order; norm weights are
    ones. Same (config, seed) gives bit-identical weights.
    """
    if not isinstance(config, ModelConfig):
        config = ModelConfig.create(**dict(config))
    rng = np.random.default_rng(seed)
    scale = DTYPE(1.0 / math.sqrt(config.d_model))
    tensors = {}
    for name, shape in tensor_shapes(config).items():
        if name.endswith("norm"):
            tensors[name] = np.ones(shape, dtype=DTYPE)
        else:
            tensors[name] = rng.standard_normal(shape, dtype=DTYPE) * scale
    logger.debug(f"Initialised {len(tensors)} tensors with seed {seed}")
    return ModelWeights.from_named_tensors(config, tensors)


class KvCache:
    """
    Per-session key/value store for layers whose attention is retained.

    Storage is preallocated to `capacity` positions (<= max_seq_len); layers
    whose attention is skipped get no storage at all.
    """

    def __init__(self, config: ModelConfig, skip: Union[None, SkipSpec, SkipSet] = None,
                 capacity: Optional[int] = None):
        self.config = config
        self.skip_set = as_skip_set(skip, config.n_layers)
        self.capacity = config.max_seq_len if capacity is None else capacity
        if not 0 < self.capacity <= config.max_seq_len:
            raise CapacityError(f"cache capacity {self.capacity} outside 1..{config.max_seq_len}")
        shape = (self.capacity, config.n_kv_heads, config.head_dim)
        self._keys: Dict[int, np.ndarray] = {}
        self._values: Dict[int, np.ndarray] = {}
        for layer in range(1, config.n_layers + 1):
            if not self.skip_set.skips_attention(layer):
                self._keys[layer] = np.zeros(shape, dtype=DTYPE)
                self._values[layer] = np.zeros(shape, dtype=DTYPE)
        self.position = 0

    @property
    def layers(self) -> Tuple[int, ...]:
        """1-based layers holding storage."""
        return tuple(sorted(self._keys))

    def has_layer(self, layer: int) -> bool:
        return layer in self._keys

    @property
    def nbytes(self) -> int:
        return sum(a.nbytes for a in self._keys.values()) + sum(a.nbytes for a in self._values.values())

    @property
    def remaining(self) -> int:
        return self.capacity - self.position

    def write(self, layer: int, keys: np.ndarray, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Store keys/values for positions [position, position + n) and return the views up to there."""
        if layer not in self._keys:
            raise ConfigError(f"cache holds no storage for layer {layer}; it was built for another skip plan")
        end = self.position + keys.shape[0]
        if end > self.capacity:
            raise CapacityError(f"cache overflow: {end} positions > capacity {self.capacity}")
        self._keys[layer][self.position:end] = keys
        self._values[layer][self.position:end] = values
        return self._keys[layer][:end], self._values[layer][:end]

    def advance(self, n: int) -> None:
        if self.position + n > self.capacity:
            raise CapacityError(f"cache overflow: {self.position + n} positions > capacity {self.capacity}")
        self.position += n


@dataclass
class ForwardResult:
    logits: np.ndarray
    hidden_states: Optional[List[np.ndarray]] = None


def _attention(attn: AttentionWeights, h: np.ndarray, positions: np.ndarray,
               cache: KvCache, layer: int, config: ModelConfig) -> np.ndarray:
    seq = h.shape[0]
    hd = config.head_dim
    q = matmul(h, attn.wq).reshape(seq, config.n_heads, hd)
    k = matmul(h, attn.wk).reshape(seq, config.n_kv_heads, hd)
    v = matmul(h, attn.wv).reshape(seq, config.n_kv_heads, hd)
    q = rope_apply(q, positions, config.rope_theta_base)
    k = rope_apply(k, positions, config.rope_theta_base)
    keys, values = cache.write(layer, k, v)

    group = config.n_heads // config.n_kv_heads
    if group > 1:
        keys = np.repeat(keys, group, axis=1)
        values = np.repeat(values, group, axis=1)
    # (heads, seq, total) scores
    scores = matmul(q.transpose(1, 0, 2), keys.transpose(1, 2, 0)) * DTYPE(1.0 / math.sqrt(hd))
    total = keys.shape[0]
    causal = np.arange(total)[None, :] > positions[:, None]
    scores = np.where(causal[None, :, :], -np.inf, scores)
    probs = softmax(scores, axis=-1)
    out = matmul(probs, values.transpose(1, 0, 2))
    return matmul(out.transpose(1, 0, 2).reshape(seq, config.n_heads * hd), attn.wo)


def _mlp(mlp: MlpWeights, h: np.ndarray) -> np.ndarray:
    return matmul(silu(matmul(h, mlp.gate)) * matmul(h, mlp.up), mlp.down)


def forward(weights: ModelWeights, tokens: Sequence[int],
            skip: Union[None, SkipSpec, SkipSet, str] = None,
            cache: Optional[KvCache] = None, capture: bool = False) -> ForwardResult:
    """
    Run tokens through the model, continuing from cache.position.

    Returns logits of shape (len(tokens), vocab_size). With capture set,
    hidden_states holds L + 1 arrays of shape (len(tokens), d_model): the
    embedding output and the residual stream after every block, skipped or not.
    Without a cache a temporary one sized to the input is used.
    """
    config = weights.config
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise InputError("forward needs a non-empty 1-D token sequence")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise InputError(f"token id out of range 0..{config.vocab_size - 1}")
    skip_set = as_skip_set(skip, config.n_layers)
    if cache is None:
        cache = KvCache(config, skip_set, capacity=min(ids.size, config.max_seq_len))
    if cache.position + ids.size > min(cache.capacity, config.max_seq_len):
        raise CapacityError(
            f"cache position {cache.position} + {ids.size} tokens exceeds capacity {cache.capacity}"
        )

    positions = np.arange(cache.position, cache.position + ids.size)
    x = weights.embed[ids]
    hidden = [x] if capture else None
    for layer_no, layer in enumerate(weights.layers, start=1):
        if not skip_set.skips_attention(layer_no):
            h = rms_norm(x, layer.attn.norm, config.norm_eps)
            x = x + _attention(layer.attn, h, positions, cache, layer_no, config)
        if not skip_set.skips_mlp(layer_no):
            h = rms_norm(x, layer.mlp.norm, config.norm_eps)
            x = x + _mlp(layer.mlp, h)
        if capture:
            hidden.append(x)
    cache.advance(ids.size)

    logits = matmul(rms_norm(x, weights.final_norm, config.norm_eps), weights.lm_head)
    return ForwardResult(logits=logits, hidden_states=hidden)


def generate(weights: ModelWeights, prompt: Sequence[int], n_new: int,
             skip: Union[None, SkipSpec, SkipSet, str] = None,
             cache: Optional[KvCache] = None) -> List[int]:
    """
    Greedy decoding: prefill the prompt, then n_new argmax steps. Each chosen
    token is fed back through the model, so the cache ends at
    len(prompt) + n_new. Ties go to the lowest token id.
    """
    config = weights.config
    if len(prompt) == 0:
        raise InputError("prompt must be non-empty")
    if n_new < 0:
        raise InputError(f"n_new must be >= 0, got {n_new}")
    skip_set = as_skip_set(skip, config.n_layers)
    needed = len(prompt) + n_new
    if cache is None:
        if needed > config.max_seq_len:
            raise CapacityError(f"prompt + n_new = {needed} exceeds max_seq_len {config.max_seq_len}")
        cache = KvCache(config, skip_set, capacity=needed)
    elif cache.position + needed > cache.capacity:
        raise CapacityError(f"cache has room for {cache.remaining} positions, need {needed}")

    logits = forward(weights, prompt, skip_set, cache).logits
    new_tokens: List[int] = []
    for _ in range(n_new):
        token = int(np.argmax(logits[-1]))
        new_tokens.append(token)
        logits = forward(weights, [token], skip_set, cache).logits
    return new_tokens
