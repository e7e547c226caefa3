"""
Readers for the token-level input files, plus seeded synthetic prompts.

Corpus / prompt files hold whitespace-separated integer token ids (a prompt
file has one prompt per line). Task files are JSON lines:
{"context": [ints], "choices": [[ints], ...], "gold": int}.
"""
import json
import logging
import os
from typing import List, Optional

import numpy as np

from .errors import ConfigError, InputError
from .schemas import McItem, McTask, ModelConfig, validated

logger = logging.getLogger(__name__)


def _parse_ints(text: str, where: str) -> List[int]:
    try:
        return [int(tok) for tok in text.split()]
    except ValueError as e:
        raise InputError(f"non-integer token in {where}: {e}") from None


def load_corpus(path: str) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as f:
        ids = _parse_ints(f.read(), path)
    logger.info(f"Loaded corpus of {len(ids)} tokens from {path}")
    return np.asarray(ids, dtype=np.int64)


def load_prompts(path: str) -> List[List[int]]:
    prompts = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if line.strip():
                prompts.append(_parse_ints(line, f"{path}:{line_no}"))
    if not prompts:
        raise InputError(f"no prompts in {path}")
    logger.info(f"Loaded {len(prompts)} prompts from {path}")
    return prompts


def load_task(path: str, name: Optional[str] = None) -> McTask:
    """Read a JSON-lines multiple-choice task; the name defaults to the file stem."""
    name = name or os.path.splitext(os.path.basename(path))[0]
    items = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise InputError(f"{path}:{line_no}: bad JSON: {e}") from None
            if not isinstance(record, dict):
                raise InputError(f"{path}:{line_no}: expected a JSON object")
            items.append(validated(McItem, record, InputError))
    logger.info(f"Loaded task '{name}' with {len(items)} items from {path}")
    return McTask(name=name, items=items)


def save_task(task: McTask, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for item in task.items:
            f.write(json.dumps(item.model_dump()) + "\n")


def load_model_config(path: str) -> ModelConfig:
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"bad JSON in {path}: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a JSON object of model config fields")
    return ModelConfig.create(**data)


def random_prompts(n: int, length: int, vocab_size: int, seed: int) -> np.ndarray:
    """n x length uniform token ids from numpy.random.default_rng(seed)."""
    if n < 1 or length < 1:
        raise InputError(f"need n >= 1 and length >= 1, got {n} x {length}")
    rng = np.random.default_rng(seed)
    return rng.integers(0, vocab_size, size=(n, length), dtype=np.int64)
