import json
import math
from dataclasses import replace

import numpy as np
import pytest

from multiturn.contrast import build_mask_finetune, multiturn_infonce
from multiturn.core import MultiTurnSample, TurnPair, ValidationError
from multiturn.encoder import EncoderConfig, init
from multiturn.harness import (
    EmptyEvalSet,
    LossVariant,
    OptimizerKind,
    TrainConfig,
    batch_loss,
    compare_scaling,
    evaluate,
    load_corpus_jsonl,
    load_eval_pairs_jsonl,
    make_separable_corpus,
    published_learning_rate,
    train,
)
from multiturn.template import AttentionMode, ByteTokenizer, ChatMarkup

MARKUP = ChatMarkup()
TOK = ByteTokenizer(MARKUP)


def tiny_cfg(**overrides):
    base = dict(
        batch_images=4,
        turns_per_image=3,
        steps=5,
        seed=0,
        dim=16,
        heads=2,
        layers=1,
        max_seq=192,
    )
    base.update(overrides)
    return TrainConfig(**base)


# ---------------------------------------------------------------------------
# config

def test_steps_zero_forbidden():
    with pytest.raises(ValidationError):
        tiny_cfg(steps=0)


def test_published_learning_rate_schedule():
    assert published_learning_rate(1024) == 5e-5
    assert published_learning_rate(2048) == 5e-5
    assert published_learning_rate(4096) == 1e-4
    assert published_learning_rate(7168) == 2e-4
    assert published_learning_rate(8192) == 2e-4


def test_published_preset_overrides_toy_rate():
    cfg = tiny_cfg(batch_images=4, lr_preset="published")
    assert cfg.effective_learning_rate == 5e-5
    assert tiny_cfg().effective_learning_rate == 1e-3


# ---------------------------------------------------------------------------
# training

def test_train_deterministic_trajectories():
    corpus, _ = make_separable_corpus(n_images=8, pairs_per_image=3, seed=0)
    _, losses_a = train(corpus, tiny_cfg())
    _, losses_b = train(corpus, tiny_cfg())
    assert losses_a == losses_b


def test_train_multiturn_turns1_identical_to_single_turn():
    corpus, _ = make_separable_corpus(n_images=8, pairs_per_image=3, seed=1)
    cfg_multi = tiny_cfg(turns_per_image=1, loss_variant=LossVariant.MULTI_TURN)
    cfg_single = tiny_cfg(turns_per_image=1, loss_variant=LossVariant.SINGLE_TURN)
    state_a, losses_a = train(corpus, cfg_multi)
    state_b, losses_b = train(corpus, cfg_single)
    assert losses_a == losses_b
    assert np.array_equal(state_a.params, state_b.params)


def test_train_loss_decreases_across_seeds():
    corpus, _ = make_separable_corpus(n_images=16, pairs_per_image=4, seed=0)
    for seed in (0, 1, 2):
        cfg = tiny_cfg(steps=25, seed=seed, turns_per_image=4, batch_images=8)
        _, losses = train(corpus, cfg)
        assert losses[-1] < losses[0]


def test_train_sgd_variant_runs():
    corpus, _ = make_separable_corpus(n_images=4, pairs_per_image=2, seed=0)
    cfg = tiny_cfg(steps=3, optimizer=OptimizerKind.SGD, turns_per_image=2)
    _, losses = train(corpus, cfg)
    assert len(losses) == 3


def test_train_finetune_adapted_variant():
    corpus, _ = make_separable_corpus(n_images=6, pairs_per_image=2, seed=0)
    cfg = tiny_cfg(
        steps=4, loss_variant=LossVariant.FINETUNE_ADAPTED, batch_images=3
    )
    _, losses = train(corpus, cfg)
    assert len(losses) == 4 and all(math.isfinite(l) for l in losses)


def test_train_isolated_attention_mode():
    corpus, _ = make_separable_corpus(n_images=4, pairs_per_image=3, seed=0)
    cfg = tiny_cfg(steps=3, attention_mode=AttentionMode.ISOLATED_TURNS)
    _, losses = train(corpus, cfg)
    assert len(losses) == 3


# ---------------------------------------------------------------------------
# fine-tuning augmentation mechanics

def _adapted_batch_report(mask_counterpart: bool):
    corpus, _ = make_separable_corpus(n_images=4, pairs_per_image=2, seed=3)
    cfg = tiny_cfg(
        loss_variant=LossVariant.FINETUNE_ADAPTED,
        mask_counterpart=mask_counterpart,
        batch_images=4,
    )
    state = init(
        EncoderConfig(
            vocab_size=TOK.vocab_size, dim=cfg.dim, heads=cfg.heads,
            layers=cfg.layers, max_seq=cfg.max_seq, seed=0,
        )
    )
    batch = [corpus[i] for i in range(4)]
    report, _ = batch_loss(state, batch, cfg, MARKUP, TOK, adapt_seeds=[9, 9, 9, 9])
    return report


def test_augmented_batch_has_four_terms_per_sample():
    report = _adapted_batch_report(mask_counterpart=True)
    assert len(report.per_term) == 4 * 4


def test_counterpart_masking_off_raises_loss():
    masked = _adapted_batch_report(mask_counterpart=True)
    unmasked = _adapted_batch_report(mask_counterpart=False)
    assert unmasked.total > masked.total


# ---------------------------------------------------------------------------
# evaluation

def test_evaluate_perfect_after_training():
    corpus, eval_set = make_separable_corpus(n_images=8, pairs_per_image=4, seed=0)
    cfg = tiny_cfg(steps=40, batch_images=8, turns_per_image=4, dim=32, heads=4)
    state, _ = train(corpus, cfg)
    report = evaluate(state, eval_set)
    assert report.precision_at_1 == 1.0
    assert report.recall_at_k[report.candidates] == 1.0


def test_evaluate_recall_monotone_and_p1_equals_r1():
    corpus, eval_set = make_separable_corpus(n_images=10, pairs_per_image=2, seed=0)
    state = init(
        EncoderConfig(vocab_size=TOK.vocab_size, dim=8, heads=2, layers=1,
                      max_seq=192, seed=3)
    )
    report = evaluate(state, eval_set, MARKUP, TOK, ks=(1, 2, 5, 10))
    values = [report.recall_at_k[k] for k in sorted(report.recall_at_k)]
    assert values == sorted(values)
    assert report.precision_at_1 == report.recall_at_k[1]
    assert report.recall_at_k[report.candidates] == 1.0


def test_evaluate_empty_set():
    state = init(
        EncoderConfig(vocab_size=TOK.vocab_size, dim=8, heads=2, layers=1,
                      max_seq=64, seed=0)
    )
    with pytest.raises(EmptyEvalSet):
        evaluate(state, [])


def test_untrained_precision_near_chance_monte_carlo():
    # 50 random encoders, 8 candidates each: aggregate top-1 rate within
    # 3 sigma of the binomial chance rate
    words = ["lamp", "pear", "vote", "milk", "iron", "dune",
             "knot", "wave", "moss", "grid", "fern", "clay"]
    candidates = 8
    hits = 0.0
    trials = 0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        samples = []
        for i in range(candidates):
            q = " ".join(rng.choice(words, size=6))
            t = " ".join(rng.choice(words, size=6))
            samples.append(MultiTurnSample(f"s{i}", 2, (TurnPair(q, t),)))
        state = init(
            EncoderConfig(vocab_size=TOK.vocab_size, dim=8, heads=2, layers=1,
                          max_seq=64, seed=seed)
        )
        report = evaluate(state, samples, MARKUP, TOK)
        hits += report.precision_at_1 * candidates
        trials += candidates
    rate = hits / trials
    p = 1.0 / candidates
    sigma = math.sqrt(p * (1 - p) / trials)
    assert abs(rate - p) < 3 * sigma, (rate, p, sigma)


def test_evaluate_tie_break_is_lower_index():
    sims = np.array([[0.5, 0.5, 0.1]])
    order = np.argsort(-sims, axis=1, kind="stable")
    assert order[0].tolist() == [0, 1, 2]


# ---------------------------------------------------------------------------
# scaling comparison

def test_compare_scaling_report_structure():
    corpus, eval_set = make_separable_corpus(n_images=8, pairs_per_image=3, seed=0)
    cfg = tiny_cfg(steps=10, turns_per_image=3, batch_images=4)
    report = compare_scaling(corpus, eval_set, cfg)
    rows = report["rows"]
    assert [r["turns"] for r in rows] == [1, 3, 1]
    single, multi, scaled = rows
    assert multi["effective_batch"] == 3 * single["effective_batch"]
    assert scaled["batch_images"] == 3 * single["batch_images"]
    # default-calibrated cost: multi-turn within 5% of single-turn cost,
    # batch-scaled baseline at ~turns x
    assert multi["flops"] / single["flops"] < 1.05
    assert scaled["flops"] / single["flops"] == pytest.approx(3.0, rel=1e-12)
    for row in (single, multi):
        assert 0.0 <= row["precision_at_1"] <= 1.0


def test_compare_scaling_needs_multiple_turns():
    corpus, eval_set = make_separable_corpus(n_images=4, pairs_per_image=2, seed=0)
    with pytest.raises(ValidationError):
        compare_scaling(corpus, eval_set, tiny_cfg(turns_per_image=1))


# ---------------------------------------------------------------------------
# corpus files

def test_corpus_jsonl_loaders(tmp_path):
    from multiturn.datagen import MockProvider, ProviderConfig, run_pipeline

    inp = tmp_path / "in.jsonl"
    out = tmp_path / "out.jsonl"
    with open(inp, "w") as fh:
        for i in range(3):
            fh.write(json.dumps({"image_id": f"i{i}", "width": 600, "height": 600}) + "\n")
    run_pipeline(str(inp), str(out), MockProvider(), ProviderConfig(backoff_base=0.0))
    samples = load_corpus_jsonl(str(out))
    assert len(samples) == 3
    assert all(s.num_turns == 7 for s in samples)

    pairs_path = tmp_path / "pairs.jsonl"
    with open(pairs_path, "w") as fh:
        fh.write(json.dumps({"image_id": "a", "query": "q1", "target": "t1"}) + "\n")
        fh.write(json.dumps({"image_id": "b", "query": "q2", "target": "t2"}) + "\n")
    eval_set = load_eval_pairs_jsonl(str(pairs_path))
    assert len(eval_set) == 2 and eval_set[0].pairs[0].query_text == "q1"
