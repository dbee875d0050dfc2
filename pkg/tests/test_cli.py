import json
import math

import numpy as np
import pytest

from multiturn.cli import _load_flat_toml, main
from multiturn.template import mask_words


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


def test_flat_toml_parsing(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text(
        '# comment\n[section]\nsteps = 3\nlearning_rate = 0.5\n'
        'optimizer = "sgd"\nmask_same_image = true\n',
        encoding="utf-8",
    )
    kv = _load_flat_toml(str(path))
    assert kv == {
        "steps": 3,
        "learning_rate": 0.5,
        "optimizer": "sgd",
        "mask_same_image": True,
    }


def test_cost_command(capsys):
    code, out = run_cli(capsys, "cost", "--batch", "1024", "--turns", "7")
    assert code == 0
    payload = json.loads(out)
    assert payload["effective_batch"] == 7168
    assert payload["ratio"] <= 1.05
    assert payload["pflops"] == pytest.approx(18.0, rel=0.02)


def test_cost_fit_from_csv(tmp_path, capsys):
    csv = tmp_path / "rows.csv"
    csv.write_text(
        "turns,batch,pflops\n"
        "1,1024,17.5\n1,2048,35.1\n1,4096,70.2\n1,7168,122.7\n"
        "1,8192,140.4\n2,1024,17.6\n4,1024,17.7\n7,1024,18.0\n"
    )
    code, out = run_cli(
        capsys, "cost", "--batch", "1024", "--turns", "7", "--fit-scaling", str(csv)
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["max_relative_residual"] < 0.02


def test_gradcheck_command(capsys):
    code, out = run_cli(
        capsys, "gradcheck", "--dim", "6", "--images", "2", "--turns", "2",
        "--seed", "3", "--tol", "1e-6",
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["passed"] is True
    assert payload["max_rel_error_q"] < 1e-6


def test_mask_demo_masking(capsys):
    code, out = run_cli(
        capsys, "mask-demo", "--text", "a b c d", "--mask-ratio", "0.5",
        "--seed", "7",
    )
    assert code == 0
    assert out.strip() == mask_words("a b c d", 0.5, 7, "<|mask|>")


def test_mask_demo_adapted_pair(capsys):
    code, out = run_cli(
        capsys, "mask-demo", "--text", "what is this?", "--target", "a red kite",
        "--template-variant", "rephrasing", "--seed", "0",
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["query_subsequent"] == (
        "Please rephrase your last response in embedding space"
    )


def test_synth_command_mock(tmp_path, capsys):
    inp = tmp_path / "in.jsonl"
    with open(inp, "w") as fh:
        for i in range(5):
            fh.write(
                json.dumps({"image_id": f"i{i}", "width": 600, "height": 600}) + "\n"
            )
    out_path = tmp_path / "out.jsonl"
    code, out = run_cli(
        capsys, "synth", "--in", str(inp), "--out", str(out_path),
        "--concurrency", "2", "--mock",
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["written"] == 5
    assert payload["corpus"]["pairs"] == 35


def test_train_eval_roundtrip(tmp_path, capsys):
    # synthesize a corpus, train briefly, checkpoint, evaluate
    inp = tmp_path / "in.jsonl"
    with open(inp, "w") as fh:
        for i in range(6):
            fh.write(
                json.dumps({"image_id": f"i{i}", "width": 600, "height": 600}) + "\n"
            )
    corpus_path = tmp_path / "corpus.jsonl"
    run_cli(capsys, "synth", "--in", str(inp), "--out", str(corpus_path), "--mock")

    cfg = tmp_path / "train.toml"
    cfg.write_text(
        "batch_images = 3\nturns_per_image = 2\nsteps = 2\ndim = 8\nheads = 2\n"
        "layers = 1\nmax_seq = 512\nseed = 0\n"
    )
    ckpt = tmp_path / "model.ckpt"
    losses_csv = tmp_path / "losses.csv"
    code, _ = run_cli(
        capsys, "train", "--corpus", str(corpus_path), "--config", str(cfg),
        "--ckpt", str(ckpt), "--losses", str(losses_csv),
    )
    assert code == 0
    lines = losses_csv.read_text().strip().splitlines()
    assert lines[0] == "step,loss"
    assert len(lines) == 3
    for line in lines[1:]:
        step, loss = line.split(",")
        assert math.isfinite(float(loss))

    pairs = tmp_path / "pairs.jsonl"
    with open(pairs, "w") as fh:
        fh.write(json.dumps({"image_id": "a", "query": "dog", "target": "a dog"}) + "\n")
        fh.write(json.dumps({"image_id": "b", "query": "cat", "target": "a cat"}) + "\n")
    code, out = run_cli(capsys, "eval", "--ckpt", str(ckpt), "--pairs", str(pairs))
    assert code == 0
    payload = json.loads(out)
    assert payload["queries"] == 2
    assert 0.0 <= payload["precision_at_1"] <= 1.0


def test_compare_scaling_command(tmp_path, capsys):
    cfg = tmp_path / "train.toml"
    cfg.write_text(
        "batch_images = 3\nturns_per_image = 2\nsteps = 2\ndim = 8\nheads = 2\n"
        "layers = 1\nmax_seq = 192\nseed = 0\n"
    )
    code, out = run_cli(
        capsys, "compare-scaling", "--config", str(cfg), "--images", "6"
    )
    assert code == 0
    payload = json.loads(out)
    assert len(payload["rows"]) == 3


def test_cli_error_paths(capsys, tmp_path):
    code, _ = run_cli(capsys, "eval", "--ckpt", str(tmp_path / "nope"), "--pairs", "x")
    assert code == 2
