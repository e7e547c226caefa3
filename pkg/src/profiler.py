"""
Layer-redundancy profiling: mean cosine similarity between each block's
output features and the previous block's (block 0 = embedding output).

Features are the post-block residual-stream states captured by
model.forward(capture=True). Cosines are taken per token and averaged over
all positions of all prompts (mean of cosines, not cosine of means).
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from .errors import InputError, ShapeError, UndefinedSimilarityError
from .model import ModelWeights, forward

logger = logging.getLogger(__name__)

MIN_NORM = 1e-12


def cosine(u, v) -> float:
    """u.v / (|u| |v|); raises UndefinedSimilarityError when either norm < 1e-12."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ShapeError(f"cosine needs equal lengths, got {u.shape} and {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < MIN_NORM or nv < MIN_NORM:
        raise UndefinedSimilarityError(f"cosine undefined for norms {nu:.3g}, {nv:.3g}")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def row_cosines(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Row-wise cosine of two (n, d) arrays in float64.

    Returns (cosines of the valid rows, validity mask); rows where either norm
    is below MIN_NORM are excluded.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"row_cosines needs equal shapes, got {a.shape} and {b.shape}")
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    valid = (na >= MIN_NORM) & (nb >= MIN_NORM)
    dots = np.einsum("ij,ij->i", a[valid], b[valid])
    return np.clip(dots / (na[valid] * nb[valid]), -1.0, 1.0), valid


@dataclass(frozen=True)
class SimilarityProfile:
    """values[i - 1] is s_i, the similarity of layer i with layer i - 1."""
    values: Tuple[float, ...]
    n_samples: Tuple[int, ...]
    n_prompts: int
    n_tokens: int
    n_excluded: int = 0

    @property
    def n_layers(self) -> int:
        return len(self.values)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "layer": np.arange(1, self.n_layers + 1, dtype=np.int64),
            "cosine_sim": np.round(np.asarray(self.values, dtype=np.float64), 6),
            "n_samples": np.asarray(self.n_samples, dtype=np.int64),
        })

    def ranked_layers(self) -> List[int]:
        """1-based layers ordered most-redundant first (highest similarity, ties by index)."""
        order = sorted(range(self.n_layers), key=lambda i: (-self.values[i], i))
        return [i + 1 for i in order]

    def last_layer_is_outlier(self) -> bool:
        """True when the final layer changes its input the most (lowest similarity)."""
        if self.n_layers < 2:
            return False
        return self.values[-1] < min(self.values[:-1])


def _prompt_sums(weights: ModelWeights, prompt: Sequence[int]) -> Tuple[np.ndarray, np.ndarray, int]:
    hidden = forward(weights, prompt, capture=True).hidden_states
    n_layers = weights.config.n_layers
    sums = np.zeros(n_layers, dtype=np.float64)
    counts = np.zeros(n_layers, dtype=np.int64)
    excluded = 0
    for i in range(1, n_layers + 1):
        cos, valid = row_cosines(hidden[i], hidden[i - 1])
        sums[i - 1] = cos.sum()
        counts[i - 1] = int(valid.sum())
        excluded += int((~valid).sum())
    return sums, counts, excluded


def profile(weights: ModelWeights, prompts: Sequence[Sequence[int]], workers: int = 1,
            progress: bool = False) -> SimilarityProfile:
    """Similarity profile of the full (unskipped) model over prompts."""
    prompts = [list(p) for p in prompts]
    if not prompts:
        raise InputError("profile needs at least one prompt")
    if any(len(p) == 0 for p in prompts):
        raise InputError("profile prompts must be non-empty")

    bar = tqdm(total=len(prompts), desc="Profiling", unit="prompt", disable=not progress)
    results: List[Optional[Tuple[np.ndarray, np.ndarray, int]]] = [None] * len(prompts)

    def run(index: int) -> None:
        results[index] = _prompt_sums(weights, prompts[index])
        bar.update(1)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, range(len(prompts))))
    else:
        for index in range(len(prompts)):
            run(index)
    bar.close()

    n_layers = weights.config.n_layers
    sums = np.zeros(n_layers, dtype=np.float64)
    counts = np.zeros(n_layers, dtype=np.int64)
    excluded = 0
    for prompt_sums, prompt_counts, prompt_excluded in results:
        sums += prompt_sums
        counts += prompt_counts
        excluded += prompt_excluded
    if excluded:
        logger.warning(f"Excluded {excluded} near-zero-norm feature pairs from the profile")
    empty = [i + 1 for i in range(n_layers) if counts[i] == 0]
    if empty:
        raise UndefinedSimilarityError(
            f"every feature pair of layer(s) {', '.join(map(str, empty))} has near-zero norm; similarity is undefined")
    values = sums / counts

    result = SimilarityProfile(
        values=tuple(float(v) for v in values),
        n_samples=tuple(int(c) for c in counts),
        n_prompts=len(prompts),
        n_tokens=sum(len(p) for p in prompts),
        n_excluded=excluded,
    )
    logger.info(f"Profiled {result.n_prompts} prompts ({result.n_tokens} tokens) over {n_layers} layers")
    return result
