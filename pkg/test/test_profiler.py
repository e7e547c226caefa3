import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import math

import numpy as np
import pytest

from src.errors import InputError, UndefinedSimilarityError
from src.model import forward, init_random
from src.profiler import SimilarityProfile, cosine, profile
from src.schemas import ModelConfig


def tiny_config(**overrides):
    fields = dict(n_layers=5, d_model=16, n_heads=4, n_kv_heads=2, d_ff=32, vocab_size=40, max_seq_len=32)
    fields.update(overrides)
    return ModelConfig.create(**fields)


def zero_update_weights(config, seed=0):
    weights = init_random(config, seed)
    updates = {}
    for i in range(config.n_layers):
        updates[f"layers.{i}.attn.wo"] = np.zeros((config.d_model, config.d_model), dtype=np.float32)
        updates[f"layers.{i}.mlp.down"] = np.zeros((config.d_ff, config.d_model), dtype=np.float32)
    return weights.with_tensors(updates)


def test_cosine_examples():
    x = np.array([0.3, -2.0, 5.0])
    assert abs(cosine(x, x) - 1.0) < 1e-12
    assert cosine([1, 0], [0, 1]) == 0.0
    assert abs(cosine([1, 1], [1, 0]) - 1 / math.sqrt(2)) < 1e-12


def test_cosine_of_zero_vector_is_undefined():
    with pytest.raises(UndefinedSimilarityError):
        cosine([0.0, 0.0], [1.0, 0.0])


def test_zero_update_model_profile_is_all_ones():
    config = tiny_config()
    result = profile(zero_update_weights(config), [[1, 2, 3], [4, 5]])
    assert result.n_layers == config.n_layers
    assert np.allclose(result.values, 1.0, atol=1e-6)
    assert result.n_samples == (5,) * config.n_layers


def test_single_token_prompt_gives_one_sample_per_layer():
    config = tiny_config()
    result = profile(init_random(config, 1), [[7]])
    assert result.n_samples == (1,) * config.n_layers
    assert result.n_tokens == 1 and result.n_prompts == 1


def test_profile_matches_two_pass_oracle():
    config = tiny_config()
    weights = init_random(config, 2)
    prompts = [np.random.default_rng(s).integers(0, config.vocab_size, size=6 + s).tolist() for s in range(4)]
    result = profile(weights, prompts)

    sums = np.zeros(config.n_layers)
    count = 0
    for prompt in prompts:
        hidden = forward(weights, prompt, capture=True).hidden_states
        for pos in range(len(prompt)):
            for i in range(1, config.n_layers + 1):
                u = hidden[i][pos].astype(np.float64)
                v = hidden[i - 1][pos].astype(np.float64)
                sums[i - 1] += u @ v / (np.linalg.norm(u) * np.linalg.norm(v))
        count += len(prompt)
    assert np.max(np.abs(np.asarray(result.values) - sums / count)) < 1e-5
    assert all(-1.0 <= v <= 1.0 for v in result.values)


def test_profile_is_order_independent_and_parallel_safe():
    config = tiny_config()
    weights = init_random(config, 3)
    prompts = [[1, 2, 3, 4], [5, 6], [7, 8, 9], [10]]
    forward_order = profile(weights, prompts)
    reversed_order = profile(weights, prompts[::-1])
    threaded = profile(weights, prompts, workers=3)
    assert np.allclose(forward_order.values, reversed_order.values, atol=1e-6)
    assert np.allclose(forward_order.values, threaded.values, atol=1e-6)


def test_profile_needs_prompts():
    weights = init_random(tiny_config(), 0)
    with pytest.raises(InputError):
        profile(weights, [])
    with pytest.raises(InputError):
        profile(weights, [[1], []])


def test_profile_frame_and_ranking():
    result = SimilarityProfile(values=(0.5, 0.9, 0.8, 0.2), n_samples=(3, 3, 3, 3), n_prompts=1, n_tokens=3)
    frame = result.to_frame()
    assert list(frame.columns) == ["layer", "cosine_sim", "n_samples"]
    assert frame["layer"].tolist() == [1, 2, 3, 4]
    assert result.ranked_layers() == [2, 3, 1, 4]
    assert result.last_layer_is_outlier()
    assert not SimilarityProfile((0.2, 0.9), (1, 1), 1, 1).last_layer_is_outlier()


def test_all_zero_features_raise_instead_of_nan():
    config = tiny_config(n_layers=2)
    weights = init_random(config, 0)
    weights = weights.with_tensors({"embed": np.zeros((config.vocab_size, config.d_model), dtype=np.float32)})
    with pytest.raises(UndefinedSimilarityError, match="1, 2"):
        profile(weights, [[1, 2, 3]])
