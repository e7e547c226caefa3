import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import math
from decimal import Decimal

import numpy as np
import pytest

from src.errors import InputError
from src.evaluation import eval_sweep, mc_result, mc_score, perplexity, row_average, score_choices
from src.model import forward, init_random
from src.numerics import log_softmax
from src.schemas import McItem, McTask, ModelConfig, SkipSpec

# accuracy tables: ARC, HellaSwag, TruthfulQA, MMLU -> reference Average
ACCURACY_TABLES = {
    "mlp skip, drop last": [
        ((35.2, 46.8, 46.2, 40.3), 42.1), ((38.3, 53.0, 45.1, 45.9), 45.6), ((47.7, 69.3, 39.6, 46.4), 50.8),
        ((53.1, 78.6, 38.8, 46.6), 54.3), ((37.8, 46.8, 45.3, 51.8), 45.4), ((40.9, 53.6, 42.5, 53.2), 47.6),
        ((51.3, 71.3, 37.1, 54.8), 53.6), ((59.6, 82.1, 36.9, 55.4), 58.5),
    ],
    "attention skip, drop last": [
        ((51.2, 77.0, 42.2, 39.4), 52.5), ((52.5, 78.3, 42.3, 41.4), 53.6), ((52.8, 78.9, 40.0, 44.0), 53.9),
        ((53.1, 78.6, 38.8, 46.6), 54.3), ((55.6, 80.1, 40.1, 51.3), 56.8), ((55.9, 79.7, 39.9, 52.1), 56.9),
        ((57.0, 81.3, 38.2, 54.8), 57.8), ((59.6, 82.1, 36.9, 55.4), 58.5),
    ],
    "block skip, drop last": [
        ((35.1, 52.5, 42.2, 43.9), 43.4), ((40.4, 60.3, 39.2, 46.3), 46.6), ((48.5, 71.4, 38.0, 46.1), 51.0),
        ((53.1, 78.6, 38.8, 46.6), 54.3), ((41.6, 56.9, 40.7, 53.4), 48.2), ((47.3, 65.2, 40.0, 53.2), 51.4),
        ((54.2, 75.8, 38.3, 54.7), 55.8), ((59.6, 82.1, 36.9, 55.4), 58.5),
    ],
    "mlp skip, keep last": [
        ((32.0, 45.8, 46.9, 40.7), 41.3), ((34.5, 49.4, 45.9, 38.3), 42.0), ((46.5, 73.1, 41.8, 41.4), 50.7),
        ((53.1, 78.6, 38.8, 46.6), 54.3), ((35.1, 50.0, 46.9, 19.1), 37.8), ((38.7, 56.6, 43.7, 25.2), 41.1),
        ((51.2, 78.1, 38.0, 27.1), 47.9), ((59.6, 82.1, 36.9, 55.4), 58.5),
    ],
    "attention skip, keep last": [
        ((49.3, 77.1, 40.5, 42.5), 52.4), ((51.8, 78.3, 41.1, 44.1), 53.8), ((51.9, 78.7, 39.4, 45.7), 53.9),
        ((53.1, 78.6, 38.8, 46.6), 54.3), ((56.8, 82.1, 38.0, 50.3), 56.8), ((57.5, 82.1, 37.0, 51.4), 57.0),
        ((58.9, 82.4, 36.6, 54.5), 58.1), ((59.6, 82.1, 36.9, 55.4), 58.5),
    ],
    "block skip, keep last": [
        ((32.0, 45.8, 46.9, 39.4), 41.0), ((34.5, 49.4, 45.9, 40.2), 42.5), ((46.5, 73.1, 41.8, 40.2), 50.4),
        ((53.1, 78.6, 38.8, 46.6), 54.3), ((35.1, 50.0, 46.9, 20.4), 38.1), ((38.7, 56.6, 43.7, 33.6), 43.2),
        ((51.2, 78.1, 38.0, 34.4), 50.4), ((59.6, 82.1, 36.9, 55.4), 58.5),
    ],
}

# reference Average that does not match its own row (the row mean is 48.6)
INCONSISTENT_AVERAGES = {("mlp skip, keep last", 6)}


def average_cells():
    for table, rows in ACCURACY_TABLES.items():
        for index, (values, average) in enumerate(rows):
            yield pytest.param(table, index, values, average, id=f"{table}-{index}")


@pytest.mark.parametrize("table,index,values,average", list(average_cells()))
def test_row_average_reproduces_reference_averages(table, index, values, average):
    mean = Decimal(str(row_average(values, places=None)))
    if (table, index) in INCONSISTENT_AVERAGES:
        assert abs(mean - Decimal(str(average))) > Decimal("0.5")
    else:
        assert abs(mean - Decimal(str(average))) <= Decimal("0.05")


def test_row_average_rounding_examples():
    assert row_average([35.2, 46.8, 46.2, 40.3]) == 42.1
    assert row_average([51.2, 77.0, 42.2, 39.4]) == 52.5
    assert row_average([51.2, 78.1, 38.0, 27.1]) == 48.6


def tiny_config(**overrides):
    fields = dict(n_layers=3, d_model=8, n_heads=2, n_kv_heads=1, d_ff=16, vocab_size=20, max_seq_len=16)
    fields.update(overrides)
    return ModelConfig.create(**fields)


def uniform_weights(config):
    weights = init_random(config, 0)
    return weights.with_tensors({"lm_head": np.zeros((config.d_model, config.vocab_size), dtype=np.float32)})


def test_uniform_model_perplexity_is_vocab_size():
    config = tiny_config()
    ppl = perplexity(uniform_weights(config), None, [1, 2, 3, 4, 5, 6])
    assert abs(ppl - config.vocab_size) / config.vocab_size < 1e-3


def nll_oracle(weights, corpus):
    total = 0.0
    for t in range(1, len(corpus)):
        logits = forward(weights, corpus[:t]).logits[-1].astype(np.float64)
        logits -= logits.max()
        total -= logits[corpus[t]] - math.log(np.exp(logits).sum())
    return math.exp(total / (len(corpus) - 1))


def test_perplexity_matches_per_token_oracle():
    config = tiny_config()
    weights = init_random(config, 4)
    corpus = np.random.default_rng(0).integers(0, config.vocab_size, size=12).tolist()
    ppl = perplexity(weights, None, corpus)
    assert abs(ppl - nll_oracle(weights, corpus)) / ppl < 1e-4
    assert ppl >= 1.0


def test_long_corpus_is_scored_in_overlapping_windows():
    config = tiny_config(max_seq_len=4)
    weights = init_random(config, 5)
    corpus = np.random.default_rng(1).integers(0, config.vocab_size, size=11).tolist()
    expected_nll = 0.0
    for start in (0, 4, 8):
        window = corpus[start:start + 5]
        lp = log_softmax(forward(weights, window[:-1]).logits)
        expected_nll -= sum(lp[j, window[j + 1]] for j in range(len(window) - 1))
    assert abs(perplexity(weights, None, corpus) - math.exp(expected_nll / 10)) < 1e-6


def test_perplexity_needs_two_tokens():
    with pytest.raises(InputError):
        perplexity(init_random(tiny_config(), 0), None, [3])


def test_empty_skip_leaves_metrics_unchanged():
    config = tiny_config()
    weights = init_random(config, 6)
    corpus = list(range(10))
    task = McTask(name="t", items=[McItem(context=[1, 2], choices=[[3], [4, 5], [6]], gold=1),
                                   McItem(context=[7], choices=[[8, 9], [10]], gold=0)])
    for mode in ("block", "attn", "mlp"):
        spec = SkipSpec.create(mode=mode, k=0)
        assert perplexity(weights, spec, corpus) == perplexity(weights, None, corpus)
        assert mc_score(weights, spec, task) == mc_score(weights, None, task)


def test_identical_choices_tie_to_first():
    weights = init_random(tiny_config(), 7)
    items = [McItem(context=[i + 1], choices=[[2, 3], [2, 3], [2, 3]], gold=2) for i in range(5)]
    result = mc_result(weights, None, McTask(name="ties", items=items))
    assert result.predictions == [0] * 5
    assert result.accuracy == 0.0


def biased_weights():
    """Vocab-2 model whose next-token distribution is p(1) = 0.9 whatever the input."""
    config = tiny_config(vocab_size=2, norm_eps=0.0)
    weights = init_random(config, 0)
    updates = {"embed": np.ones((2, config.d_model), dtype=np.float32)}
    for i in range(config.n_layers):
        updates[f"layers.{i}.attn.wo"] = np.zeros((config.d_model, config.d_model), dtype=np.float32)
        updates[f"layers.{i}.mlp.down"] = np.zeros((config.d_ff, config.d_model), dtype=np.float32)
    head = np.zeros((config.d_model, 2), dtype=np.float32)
    head[:, 1] = math.log(9.0) / config.d_model
    updates["lm_head"] = head
    return weights.with_tensors(updates)


def test_hand_built_model_prefers_ones():
    weights = biased_weights()
    items = [McItem(context=[0], choices=[[1, 1], [0, 0]], gold=0),
             McItem(context=[1, 0], choices=[[0, 0, 0], [1, 1, 1]], gold=1)]
    assert mc_score(weights, None, McTask(name="ones", items=items)) == 100.0
    scores = score_choices(weights, None, items[0])
    assert abs(scores[0] - 2 * math.log(0.9)) < 1e-5
    assert abs(scores[1] - 2 * math.log(0.1)) < 1e-5


def test_mean_normalization_divides_by_choice_length():
    weights = biased_weights()
    item = McItem(context=[0], choices=[[1, 1, 1, 1], [1]], gold=0)
    summed = score_choices(weights, None, item, "sum")
    averaged = score_choices(weights, None, item, "mean")
    assert abs(averaged[0] - summed[0] / 4) < 1e-9
    assert abs(averaged[1] - summed[1]) < 1e-9


def test_mc_score_is_order_invariant_and_thread_safe():
    config = tiny_config()
    weights = init_random(config, 8)
    rng = np.random.default_rng(2)
    items = [McItem(context=rng.integers(0, 20, size=3).tolist(),
                    choices=[rng.integers(0, 20, size=2).tolist() for _ in range(3)], gold=int(rng.integers(0, 3)))
             for _ in range(12)]
    forward_order = mc_score(weights, None, McTask(name="a", items=items))
    assert mc_score(weights, None, McTask(name="b", items=items[::-1])) == forward_order
    assert mc_score(weights, None, McTask(name="c", items=items), workers=4) == forward_order


def test_items_with_empty_choices_are_skipped():
    weights = init_random(tiny_config(), 9)
    items = [McItem(context=[1], choices=[[2], []], gold=0), McItem(context=[1], choices=[[2], [2]], gold=0)]
    result = mc_result(weights, None, McTask(name="gaps", items=items))
    assert result.n_skipped == 1 and result.n_scored == 1
    assert result.accuracy == 100.0

    report = eval_sweep(weights, [SkipSpec.full()], [McTask(name="gaps", items=items)])
    assert report.to_frame()["skipped_items"].tolist() == [1]
    assert "Skipped" in report.to_table().splitlines()[0]


def test_long_context_is_truncated_from_the_left():
    config = tiny_config(max_seq_len=6)
    weights = init_random(config, 10)
    long_item = McItem(context=list(range(1, 15)), choices=[[3, 4], [5, 6]], gold=0)
    short_item = McItem(context=list(range(1, 15))[-5:], choices=[[3, 4], [5, 6]], gold=0)
    assert score_choices(weights, None, long_item) == score_choices(weights, None, short_item)


def test_eval_sweep_layout():
    config = tiny_config(n_layers=4)
    weights = init_random(config, 11)
    task = McTask(name="toy", items=[McItem(context=[1, 2], choices=[[3], [4]], gold=0)])
    specs = [SkipSpec.create(mode="mlp", keep_fraction=keep) for keep in (0.5, 0.75, 1.0)] + [SkipSpec.full()]
    report = eval_sweep(weights, specs, [task], corpus=list(range(12)))
    frame = report.to_frame()
    assert len(frame) == 4
    assert list(frame.columns) == ["label", "mode", "k", "keep_last", "toy", "average", "skipped_items", "perplexity"]
    assert (frame["toy"] == frame["average"]).all()
    assert frame["k"].tolist() == [2, 1, 0, 0]
    assert "Average" in report.to_table()


def test_eval_sweep_needs_specs_and_inputs():
    weights = init_random(tiny_config(), 0)
    with pytest.raises(InputError):
        eval_sweep(weights, [], corpus=[1, 2, 3])
    with pytest.raises(InputError):
        eval_sweep(weights, [SkipSpec.full()])
