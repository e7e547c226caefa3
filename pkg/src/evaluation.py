"""
Quality evaluation of skip variants: corpus perplexity and multiple-choice
accuracy by log-likelihood ranking of the choices.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal, ROUND_HALF_UP
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from .errors import ConfigError, InputError
from .model import ModelWeights, forward
from .numerics import log_softmax
from .schemas import McItem, McTask, SkipSpec
from .skip_engine import SkipSet, as_skip_set, describe, spec_label

logger = logging.getLogger(__name__)

NORMALIZATIONS = ("sum", "mean")
SkipArg = Union[None, SkipSpec, SkipSet, str]


def _round(value: float, places: str) -> float:
    return float(Decimal(str(value)).quantize(Decimal(places), rounding=ROUND_HALF_UP))


def row_average(values: Sequence[float], places: Optional[int] = 1) -> float:
    """
    Arithmetic mean of a row's metrics in decimal arithmetic on the printed
    values, rounded half-up to `places` (unrounded when places is None).
    """
    if not values:
        raise InputError("cannot average an empty row")
    total = sum((Decimal(str(v)) for v in values), Decimal(0))
    mean = total / Decimal(len(values))
    if places is None:
        return float(mean)
    return float(mean.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP))


def _token_logprobs(weights: ModelWeights, tokens: np.ndarray, skip_set: SkipSet) -> np.ndarray:
    """log p(tokens[j] | tokens[:j]) for j = 1 .. len(tokens) - 1."""
    logits = forward(weights, tokens[:-1], skip_set).logits
    lp = log_softmax(logits, axis=-1)
    return lp[np.arange(len(tokens) - 1), tokens[1:]]


def perplexity(weights: ModelWeights, skip: SkipArg, corpus: Sequence[int]) -> float:
    """
    exp of the mean next-token negative log-likelihood over positions t >= 1.

    Corpora longer than max_seq_len are scored in windows of max_seq_len that
    overlap by one token, so every position is predicted exactly once.
    """
    tokens = np.asarray(corpus, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size < 2:
        raise InputError(f"perplexity needs a corpus of at least 2 tokens, got {tokens.size}")
    window = weights.config.max_seq_len + 1
    skip_set = as_skip_set(skip, weights.config.n_layers)

    total = 0.0
    count = 0
    start = 0
    while start < tokens.size - 1:
        chunk = tokens[start:start + window]
        lp = _token_logprobs(weights, chunk, skip_set)
        total -= float(lp.sum())
        count += lp.size
        start += window - 1
    return math.exp(total / count)


def score_choices(weights: ModelWeights, skip: SkipArg, item: McItem,
                  normalization: str = "sum") -> List[float]:
    """
    Log-likelihood of each choice given the context. Contexts are truncated
    from the left when context + choice would exceed max_seq_len.
    """
    if normalization not in NORMALIZATIONS:
        raise ConfigError(f"normalization must be one of {NORMALIZATIONS}, got '{normalization}'")
    max_len = weights.config.max_seq_len
    skip_set = as_skip_set(skip, weights.config.n_layers)
    scores = []
    for index, choice in enumerate(item.choices):
        if not choice:
            raise InputError(f"choice {index} is empty")
        if len(choice) >= max_len + 1:
            raise InputError(f"choice {index} has {len(choice)} tokens; max_seq_len is {max_len}")
        context = item.context[-(max_len + 1 - len(choice)):]
        # the last choice token is only a target, so the model sees max_len tokens
        tokens = np.asarray(context + choice, dtype=np.int64)
        lp = _token_logprobs(weights, tokens, skip_set)[len(context) - 1:]
        score = float(lp.sum())
        scores.append(score / len(choice) if normalization == "mean" else score)
    return scores


@dataclass(frozen=True)
class McResult:
    task: str
    n_items: int
    n_scored: int
    n_correct: int
    n_skipped: int
    accuracy: float
    predictions: List[int] = field(default_factory=list)


def mc_result(weights: ModelWeights, skip: SkipArg, task: McTask, normalization: str = "sum",
              workers: int = 1, progress: bool = False) -> McResult:
    """Score every item; items with an empty choice are skipped and counted."""
    if not task.items:
        raise InputError(f"task '{task.name}' has no items")
    skip_set = as_skip_set(skip, weights.config.n_layers)
    predictions: List[int] = [-1] * len(task.items)

    def run(index: int) -> None:
        item = task.items[index]
        if any(len(c) == 0 for c in item.choices):
            return
        scores = score_choices(weights, skip_set, item, normalization)
        # np.argmax returns the first maximum: ties go to the lowest choice index
        predictions[index] = int(np.argmax(scores))

    indices = range(len(task.items))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(tqdm(pool.map(run, indices), total=len(task.items), desc=task.name,
                      unit="item", disable=not progress))
    else:
        for index in tqdm(indices, desc=task.name, unit="item", disable=not progress):
            run(index)

    skipped = sum(1 for p in predictions if p < 0)
    scored = len(task.items) - skipped
    if skipped:
        logger.warning(f"Skipped {skipped} items with an empty choice in task '{task.name}'")
    if scored == 0:
        raise InputError(f"task '{task.name}' has no scorable items")
    correct = sum(1 for item, p in zip(task.items, predictions) if p >= 0 and p == item.gold)
    return McResult(
        task=task.name,
        n_items=len(task.items),
        n_scored=scored,
        n_correct=correct,
        n_skipped=skipped,
        accuracy=100.0 * correct / scored,
        predictions=predictions,
    )


def mc_score(weights: ModelWeights, skip: SkipArg, task: McTask, normalization: str = "sum",
             workers: int = 1) -> float:
    """Multiple-choice accuracy in percent."""
    return mc_result(weights, skip, task, normalization, workers).accuracy


@dataclass(frozen=True)
class EvalRow:
    label: str
    mode: str
    k: int
    keep_last: bool
    accuracies: Dict[str, float]
    perplexity: Optional[float] = None
    skipped_items: int = 0

    @property
    def average(self) -> Optional[float]:
        if not self.accuracies:
            return None
        return row_average([_round(v, "0.1") for v in self.accuracies.values()])


@dataclass
class EvalReport:
    rows: List[EvalRow]
    task_names: List[str]
    has_perplexity: bool

    def to_frame(self) -> pd.DataFrame:
        data = {
            "label": [r.label for r in self.rows],
            "mode": [r.mode for r in self.rows],
            "k": np.asarray([r.k for r in self.rows], dtype=np.int64),
            "keep_last": np.asarray([r.keep_last for r in self.rows], dtype=bool),
        }
        for name in self.task_names:
            data[name] = [_round(r.accuracies[name], "0.1") for r in self.rows]
        if self.task_names:
            data["average"] = [r.average for r in self.rows]
            data["skipped_items"] = np.asarray([r.skipped_items for r in self.rows], dtype=np.int64)
        if self.has_perplexity:
            data["perplexity"] = [_round(r.perplexity, "0.001") for r in self.rows]
        return pd.DataFrame(data)

    def to_table(self) -> str:
        """Model | task accuracies | Average (| Skipped) (| Perplexity) rows."""
        columns = list(self.task_names) + (["Average"] if self.task_names else [])
        show_skipped = any(r.skipped_items for r in self.rows)
        if show_skipped:
            columns.append("Skipped")
        if self.has_perplexity:
            columns.append("Perplexity")
        width = max([12] + [len(c) for c in columns])
        label_width = max([8] + [len(r.label) for r in self.rows])
        header = f"{'Model':<{label_width}}" + "".join(f" | {c:>{width}}" for c in columns)
        lines = [header, "-" * len(header)]
        for r in self.rows:
            cells = [f"{r.accuracies[name]:.1f}" for name in self.task_names]
            if self.task_names:
                cells.append(f"{r.average:.1f}")
            if show_skipped:
                cells.append(str(r.skipped_items))
            if self.has_perplexity:
                cells.append(f"{r.perplexity:.3f}")
            lines.append(f"{r.label:<{label_width}}" + "".join(f" | {c:>{width}}" for c in cells))
        return "\n".join(lines)


def eval_sweep(weights: ModelWeights, specs: Sequence[SkipSpec], tasks: Sequence[McTask] = (),
               corpus: Optional[Sequence[int]] = None, normalization: str = "sum",
               workers: int = 1, progress: bool = False) -> EvalReport:
    """One row per spec: accuracy per task, their average, and corpus perplexity when given."""
    if not specs:
        raise InputError("eval needs at least one skip spec")
    if not tasks and corpus is None:
        raise InputError("eval needs at least one task or a corpus")
    names = [t.name for t in tasks]
    if len(set(names)) != len(names):
        raise InputError(f"task names must be unique, got {names}")

    n_layers = weights.config.n_layers
    rows = []
    for spec in specs:
        skip_set = as_skip_set(spec, n_layers)
        label = spec_label(spec, n_layers)
        accuracies = {}
        skipped = 0
        for task in tasks:
            result = mc_result(weights, skip_set, task, normalization, workers, progress)
            accuracies[task.name] = result.accuracy
            skipped += result.n_skipped
        ppl = perplexity(weights, skip_set, corpus) if corpus is not None else None
        rows.append(EvalRow(
            label=label,
            mode=spec.mode.value,
            k=describe(skip_set).k,
            keep_last=spec.keep_last,
            accuracies=accuracies,
            perplexity=ppl,
            skipped_items=skipped,
        ))
        logger.info(f"Evaluated {label}: "
                    + ", ".join(f"{n}={a:.1f}" for n, a in accuracies.items())
                    + (f", perplexity={ppl:.3f}" if ppl is not None else ""))
    return EvalReport(rows=rows, task_names=names, has_perplexity=corpus is not None)
