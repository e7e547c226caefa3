"""
Skip plans: turn a user-level request (mode, k or keep fraction, keep-last
flag) into the exact set of (layer, sublayer) pairs the forward pass omits.

Layers are numbered 1..L everywhere in this module and in everything it
reports; the last k layers of an L-layer model are L-k+1..L.
"""
import logging
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .errors import ConfigError, SpecParseError
from .schemas import SkipMode, SkipSpec, Sublayer, validated

logger = logging.getLogger(__name__)

MODE_ALIASES = {
    "attn": SkipMode.ATTENTION,
    "attention": SkipMode.ATTENTION,
    "mlp": SkipMode.MLP,
    "ffwd": SkipMode.MLP,
    "ffn": SkipMode.MLP,
    "block": SkipMode.BLOCK,
    "blocks": SkipMode.BLOCK,
    "full": None,
    "none": None,
    "baseline": None,
}

TRUE_WORDS = ("true", "yes", "1", "on")
FALSE_WORDS = ("false", "no", "0", "off")

DEFAULT_KEEP_LEVELS = (0.66, 0.75, 0.90)

_MODE_SUBLAYER = {
    SkipMode.BLOCK: Sublayer.BOTH,
    SkipMode.ATTENTION: Sublayer.ATTENTION,
    SkipMode.MLP: Sublayer.MLP,
}


@dataclass(frozen=True)
class SkipEntry:
    layer: int
    sublayer: Sublayer


@dataclass(frozen=True)
class SkipSet:
    """Resolved, immutable collection of omitted sublayers of an L-layer model."""
    n_layers: int
    entries: Tuple[SkipEntry, ...] = ()
    keep_last: bool = False
    mode: Optional[SkipMode] = None
    _by_layer: Dict[int, Sublayer] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_layers < 1:
            raise ConfigError(f"a skip set needs L >= 1, got {self.n_layers}")
        by_layer: Dict[int, Sublayer] = {}
        for entry in self.entries:
            if not 1 <= entry.layer <= self.n_layers:
                raise ConfigError(f"layer {entry.layer} outside 1..{self.n_layers}")
            if entry.layer in by_layer:
                raise ConfigError(f"layer {entry.layer} appears twice in skip set")
            by_layer[entry.layer] = Sublayer(entry.sublayer)
        if self.keep_last and self.n_layers in by_layer:
            raise ConfigError(f"keep-last skip set must not contain layer {self.n_layers}")
        object.__setattr__(self, "entries", tuple(sorted(self.entries, key=lambda e: e.layer)))
        object.__setattr__(self, "_by_layer", by_layer)

    @classmethod
    def empty(cls, n_layers: int) -> "SkipSet":
        return cls(n_layers=n_layers)

    @classmethod
    def of(cls, n_layers: int, layers: Iterable[int], sublayer: Union[Sublayer, str],
           keep_last: bool = False, mode: Optional[SkipMode] = None) -> "SkipSet":
        sub = Sublayer(sublayer)
        return cls(n_layers, tuple(SkipEntry(i, sub) for i in layers), keep_last, mode)

    def skips_attention(self, layer: int) -> bool:
        return self._by_layer.get(layer) in (Sublayer.ATTENTION, Sublayer.BOTH)

    def skips_mlp(self, layer: int) -> bool:
        return self._by_layer.get(layer) in (Sublayer.MLP, Sublayer.BOTH)

    def attention_layers(self) -> Tuple[int, ...]:
        return tuple(e.layer for e in self.entries if e.sublayer in (Sublayer.ATTENTION, Sublayer.BOTH))

    def mlp_layers(self) -> Tuple[int, ...]:
        return tuple(e.layer for e in self.entries if e.sublayer in (Sublayer.MLP, Sublayer.BOTH))

    def layers(self) -> Tuple[int, ...]:
        return tuple(e.layer for e in self.entries)

    @property
    def size(self) -> int:
        return len(self.entries)

    @property
    def is_empty(self) -> bool:
        return not self.entries

    def union(self, other: "SkipSet") -> "SkipSet":
        """Merge two sets over the same L; attention + mlp on one layer becomes both."""
        if other.n_layers != self.n_layers:
            raise ConfigError(f"cannot merge skip sets for L={self.n_layers} and L={other.n_layers}")
        merged: Dict[int, set] = {}
        for entry in self.entries + other.entries:
            parts = merged.setdefault(entry.layer, set())
            if entry.sublayer == Sublayer.BOTH:
                parts.update((Sublayer.ATTENTION, Sublayer.MLP))
            else:
                parts.add(entry.sublayer)
        entries = tuple(
            SkipEntry(layer, Sublayer.BOTH if len(parts) == 2 else next(iter(parts)))
            for layer, parts in merged.items()
        )
        return SkipSet(self.n_layers, entries, self.keep_last and other.keep_last)


@dataclass(frozen=True)
class SkipSummary:
    n_layers: int
    k: int
    n_attention: int
    n_mlp: int
    retained_pct: int
    layers: Tuple[int, ...]

    @property
    def label(self) -> str:
        return f"{self.retained_pct}%"


def _round_half_up(value: Decimal) -> int:
    return int(value.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def resolve_k(spec: SkipSpec, n_layers: int) -> int:
    """Number of layers the spec affects in an L-layer model."""
    if n_layers < 1:
        raise ConfigError(f"L must be >= 1, got {n_layers}")
    if spec.keep_fraction is not None:
        if not 0.0 < spec.keep_fraction <= 1.0:
            raise ConfigError(f"keep fraction {spec.keep_fraction} outside (0, 1]")
        k = _round_half_up(Decimal(n_layers) * (Decimal(1) - Decimal(str(spec.keep_fraction))))
    else:
        k = spec.k or 0
    limit = n_layers - 1 if spec.keep_last else n_layers
    if not 0 <= k <= limit:
        raise ConfigError(
            f"k={k} out of range 0..{limit} for L={n_layers}"
            + (" with keep_last" if spec.keep_last else "")
        )
    return k


def resolve(spec: SkipSpec, n_layers: int) -> SkipSet:
    """
    Resolve a skip request against L layers.

    Without keep_last the skipped window is L-k+1..L. With keep_last the
    window moves up by one (L-k..L-1) so the final block stays whole and k is
    unchanged.
    """
    k = resolve_k(spec, n_layers)
    if spec.keep_last:
        layers = range(n_layers - k, n_layers)
    else:
        layers = range(n_layers - k + 1, n_layers + 1)
    skip_set = SkipSet.of(n_layers, layers, _MODE_SUBLAYER[spec.mode], spec.keep_last, spec.mode)
    logger.debug(f"Resolved {format_skip_spec(spec)} for L={n_layers}: layers {skip_set.layers()}")
    return skip_set


def retained_pct(k: int, n_layers: int) -> int:
    return _round_half_up(Decimal(100) * (Decimal(1) - Decimal(k) / Decimal(n_layers)))


def describe(skip_set: SkipSet, n_layers: Optional[int] = None) -> SkipSummary:
    """Counts and the retained-percentage label (e.g. '75%') of a resolved set."""
    n_layers = n_layers or skip_set.n_layers
    if n_layers != skip_set.n_layers:
        raise ConfigError(f"skip set was resolved for L={skip_set.n_layers}, not {n_layers}")
    k = skip_set.size
    return SkipSummary(
        n_layers=n_layers,
        k=k,
        n_attention=len(skip_set.attention_layers()),
        n_mlp=len(skip_set.mlp_layers()),
        retained_pct=retained_pct(k, n_layers),
        layers=skip_set.layers(),
    )


def format_layers(layers: Sequence[int]) -> str:
    """'8,9,10' style list; '-' when empty."""
    return ",".join(str(i) for i in layers) if layers else "-"


def format_range(layers: Sequence[int]) -> str:
    """'25..32' for a contiguous run, the plain list otherwise."""
    if not layers:
        return "-"
    if len(layers) > 1 and list(layers) == list(range(layers[0], layers[-1] + 1)):
        return f"{layers[0]}..{layers[-1]}"
    return format_layers(layers)


def _parse_bool(token: str, value: str) -> bool:
    if value in TRUE_WORDS:
        return True
    if value in FALSE_WORDS:
        return False
    raise SpecParseError(f"expected true/false in '{token}'", token)


def parse_skip_spec(text: str) -> SkipSpec:
    """
    Parse the textual form, e.g. 'attn,keep=0.66,keep_last=false',
    'mode=block,k=3' or 'full'.
    """
    if not text or not text.strip():
        raise SpecParseError("empty skip spec", text or "")
    fields: Dict[str, object] = {}
    full = False
    for raw in text.split(","):
        token = raw.strip()
        lowered = token.lower()
        if not token:
            raise SpecParseError(f"empty token in skip spec '{text}'", raw)
        key, sep, value = lowered.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            if key not in MODE_ALIASES:
                raise SpecParseError(f"unknown skip mode '{token}'", token)
            mode = MODE_ALIASES[key]
            if mode is None:
                full = True
            else:
                fields["mode"] = mode
        elif key == "mode":
            if value not in MODE_ALIASES or MODE_ALIASES[value] is None:
                raise SpecParseError(f"unknown skip mode '{token}'", token)
            fields["mode"] = MODE_ALIASES[value]
        elif key == "k":
            try:
                fields["k"] = int(value)
            except ValueError:
                raise SpecParseError(f"k must be an integer in '{token}'", token) from None
        elif key in ("keep", "keep_fraction"):
            try:
                fields["keep_fraction"] = float(value)
            except ValueError:
                raise SpecParseError(f"keep must be a number in '{token}'", token) from None
        elif key == "keep_last":
            fields["keep_last"] = _parse_bool(token, value)
        else:
            raise SpecParseError(f"unknown skip spec key '{token}'", token)
    if full:
        if "k" in fields or "keep_fraction" in fields:
            raise SpecParseError(f"'full' takes no amount in '{text}'", text)
        fields["k"] = 0
    return validated(SkipSpec, fields)


def format_skip_spec(spec: SkipSpec) -> str:
    """Inverse of parse_skip_spec."""
    if spec.keep_fraction is not None:
        amount = f"keep={spec.keep_fraction:g}"
    else:
        amount = f"k={spec.k or 0}"
    return f"{spec.mode.value},{amount},keep_last={'true' if spec.keep_last else 'false'}"


def spec_label(spec: SkipSpec, n_layers: int) -> str:
    """Report label: '100%' for the full model, else e.g. '75% attn' or '75% block keep-last'."""
    k = resolve_k(spec, n_layers)
    if k == 0:
        return "100%"
    label = f"{retained_pct(k, n_layers)}% {spec.mode.value}"
    return f"{label} keep-last" if spec.keep_last else label


def sweep_specs(keep_levels: Sequence[float] = DEFAULT_KEEP_LEVELS,
                modes: Sequence[SkipMode] = (SkipMode.BLOCK, SkipMode.ATTENTION, SkipMode.MLP),
                keep_last_options: Sequence[bool] = (False, True)) -> List[SkipSpec]:
    """Full model followed by every mode x keep-last x keep-level combination."""
    specs = [SkipSpec.full()]
    for keep_last in keep_last_options:
        for mode in modes:
            for keep in keep_levels:
                specs.append(SkipSpec(mode=mode, keep_fraction=keep, keep_last=keep_last))
    return specs


def as_skip_set(skip: Union[None, SkipSpec, SkipSet, str], n_layers: int) -> SkipSet:
    """Accept whatever callers pass as a skip argument and return a SkipSet for L layers."""
    if skip is None:
        return SkipSet.empty(n_layers)
    if isinstance(skip, str):
        skip = parse_skip_spec(skip)
    if isinstance(skip, SkipSpec):
        return resolve(skip, n_layers)
    if isinstance(skip, SkipSet):
        if skip.n_layers != n_layers:
            raise ConfigError(f"skip set resolved for L={skip.n_layers} used with L={n_layers}")
        return skip
    raise ConfigError(f"unsupported skip argument {type(skip).__name__}")
