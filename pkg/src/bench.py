"""
Single-token latency benchmark over skip configurations.

Each configuration times prefill + one greedy decode step per sequence on the
same seeded prompt set; the full model is re-measured in the same run and
every other row reports its improvement against it.
"""
import logging
import time
from dataclasses import dataclass, field
from decimal import Decimal, ROUND_HALF_UP
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import pinned_threads
from .data_files import random_prompts
from .errors import CapacityError, DomainError, InputError
from .model import KvCache, ModelWeights, generate
from .schemas import BenchConfig, SkipMode, SkipSpec
from .skip_engine import describe, resolve, resolve_k, spec_label

logger = logging.getLogger(__name__)

COARSE_CLOCK_FRACTION = 0.01
_MODE_COLUMNS = ((SkipMode.BLOCK, "Full"), (SkipMode.ATTENTION, "Attention"), (SkipMode.MLP, "MLP"))


def improvement_pct(t_base: float, t: float) -> float:
    """100 * (t_base - t) / t_base, rounded half-up to 2 decimal places."""
    if t_base <= 0:
        raise DomainError(f"baseline time must be > 0, got {t_base}")
    base = Decimal(str(t_base))
    value = Decimal(100) * (base - Decimal(str(t))) / base
    return float(value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def make_prompts(cfg: BenchConfig, vocab_size: int) -> np.ndarray:
    return random_prompts(cfg.n_sequences, cfg.prompt_len, vocab_size, cfg.seed)


@dataclass(frozen=True)
class BenchRow:
    label: str
    mode: str
    k: int
    keep_last: bool
    retained_pct: int
    mean_s: float
    std_s: float
    improvement_pct: float
    speedup: float
    kv_cache_bytes: int
    kv_bytes_saved: int
    n_attention_skipped: int
    n_mlp_skipped: int


@dataclass
class BenchReport:
    rows: List[BenchRow]
    config: BenchConfig
    threads: Optional[int] = None
    clock_resolution_s: float = 0.0
    coarse_clock: bool = False
    warnings: List[str] = field(default_factory=list)

    @property
    def baseline(self) -> BenchRow:
        return self.rows[0]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "label": [r.label for r in self.rows],
            "mode": [r.mode for r in self.rows],
            "k": np.asarray([r.k for r in self.rows], dtype=np.int64),
            "keep_last": np.asarray([r.keep_last for r in self.rows], dtype=bool),
            "mean_s": np.asarray([r.mean_s for r in self.rows], dtype=np.float64),
            "std_s": np.asarray([r.std_s for r in self.rows], dtype=np.float64),
            "improvement_pct": np.asarray([r.improvement_pct for r in self.rows], dtype=np.float64),
        })

    def to_table(self) -> str:
        """
        Retained level x mode grid of 'Time(s) x10^2 | (%)' cells, one grid per
        keep-last setting, followed by the per-row accounting lines.
        """
        base = self.baseline
        lines: List[str] = []
        for keep_last in (False, True):
            rows = [r for r in self.rows[1:] if r.keep_last == keep_last]
            if not rows:
                continue
            lines.append(f"prompt_len={self.config.prompt_len}, "
                         f"{'keep last layer' if keep_last else 'drop last layer'}")
            header = f"{'Model':<8}" + "".join(f" | {name:>17}" for _, name in _MODE_COLUMNS)
            lines.append(header)
            lines.append("-" * len(header))
            base_cell = f"{base.mean_s * 100:8.2f} | {'-':>6}"
            lines.append(f"{'100%':<8}" + "".join(f" | {base_cell:>17}" for _ in _MODE_COLUMNS))
            for pct in sorted({r.retained_pct for r in rows}):
                cells = []
                for mode, _ in _MODE_COLUMNS:
                    match = [r for r in rows if r.retained_pct == pct and r.mode == mode.value]
                    if match:
                        r = match[0]
                        cells.append(f"{r.mean_s * 100:8.2f} | {r.improvement_pct:6.2f}")
                    else:
                        cells.append("")
                lines.append(f"{str(pct) + '%':<8}" + "".join(f" | {c:>17}" for c in cells))
            lines.append("")

        lines.append(f"{'label':<24} {'k':>3} {'attn':>4} {'mlp':>4} {'kv bytes':>12} {'saved':>12} {'speedup':>8}")
        for r in self.rows:
            lines.append(f"{r.label:<24} {r.k:>3} {r.n_attention_skipped:>4} {r.n_mlp_skipped:>4} "
                         f"{r.kv_cache_bytes:>12} {r.kv_bytes_saved:>12} {r.speedup:>7.3f}x")
        lines.append(f"threads={self.threads if self.threads is not None else 'unpinned'}, "
                     f"sequences={self.config.n_sequences}, warmup={self.config.warmup_runs}, "
                     f"clock resolution={self.clock_resolution_s:.3g}s")
        for warning in self.warnings:
            lines.append(f"WARNING: {warning}")
        return "\n".join(lines)


def _time_spec(weights: ModelWeights, skip_set, prompts: np.ndarray, warmup_runs: int,
               desc: str, progress: bool) -> np.ndarray:
    config = weights.config
    capacity = prompts.shape[1] + 1
    for i in range(warmup_runs):
        generate(weights, prompts[i % len(prompts)], 1, skip_set,
                 KvCache(config, skip_set, capacity=capacity))

    times = np.empty(len(prompts), dtype=np.float64)
    for i in tqdm(range(len(prompts)), desc=desc, unit="seq", disable=not progress):
        cache = KvCache(config, skip_set, capacity=capacity)
        start = time.perf_counter()
        generate(weights, prompts[i], 1, skip_set, cache)
        times[i] = time.perf_counter() - start
    return times


def run_bench(weights: ModelWeights, specs: Sequence[SkipSpec], cfg: BenchConfig,
              progress: bool = False) -> BenchReport:
    """
    Time every spec; the first spec resolving to k = 0 is the baseline, and
    one is measured implicitly when none is given. Rows keep the input order
    after the baseline.
    """
    if not specs:
        raise InputError("bench needs at least one skip spec")
    config = weights.config
    if cfg.prompt_len + 1 > config.max_seq_len:
        raise CapacityError(f"prompt_len + 1 = {cfg.prompt_len + 1} exceeds max_seq_len {config.max_seq_len}")

    n_layers = config.n_layers
    baseline = next((s for s in specs if resolve_k(s, n_layers) == 0), SkipSpec.full())
    ordered = [baseline] + [s for s in specs if resolve_k(s, n_layers) != 0]

    prompts = make_prompts(cfg, config.vocab_size)
    logger.info(f"Benchmarking {len(ordered)} configurations on {cfg.n_sequences} prompts "
                f"of length {cfg.prompt_len}")

    measured = []
    for spec in ordered:
        skip_set = resolve(spec, n_layers)
        label = spec_label(spec, n_layers)
        times = _time_spec(weights, skip_set, prompts, cfg.warmup_runs, label, progress)
        mean = float(times.mean())
        std = float(times.std(ddof=1)) if len(times) > 1 else 0.0
        kv_bytes = KvCache(config, skip_set, capacity=cfg.prompt_len + 1).nbytes
        measured.append((spec, skip_set, label, mean, std, kv_bytes))
        logger.info(f"{label}: mean {mean * 1e3:.3f} ms, std {std * 1e3:.3f} ms")

    base_mean = measured[0][3]
    base_bytes = measured[0][5]
    rows = []
    for index, (spec, skip_set, label, mean, std, kv_bytes) in enumerate(measured):
        summary = describe(skip_set)
        rows.append(BenchRow(
            label=label,
            mode=spec.mode.value,
            k=summary.k,
            keep_last=spec.keep_last,
            retained_pct=summary.retained_pct,
            mean_s=mean,
            std_s=std,
            improvement_pct=0.0 if index == 0 else improvement_pct(base_mean, mean),
            speedup=1.0 if index == 0 else (base_mean / mean if mean > 0 else float("inf")),
            kv_cache_bytes=kv_bytes,
            kv_bytes_saved=base_bytes - kv_bytes,
            n_attention_skipped=summary.n_attention,
            n_mlp_skipped=summary.n_mlp,
        ))

    resolution = time.get_clock_info("perf_counter").resolution
    report = BenchReport(rows=rows, config=cfg, threads=pinned_threads(), clock_resolution_s=resolution)
    coarse = [r.label for r in rows if resolution > COARSE_CLOCK_FRACTION * r.mean_s]
    if coarse:
        report.coarse_clock = True
        message = (f"clock resolution {resolution:.3g}s is coarser than 1% of the mean for "
                   f"{', '.join(coarse)}")
        report.warnings.append(message)
        logger.warning(message)
    return report
