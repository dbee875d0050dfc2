"""Generate the cross-language parity fixtures consumed by the TypeScript
test suite.

Loss cases ship the embedding buffers and expected gradients in the shared
flat-buffer format (UTF-8 header line + little-endian float64); labels,
configs, and expected scalars ride in JSON sidecars.  Text and cost cases
are plain JSON.  Regenerate after changing any mirrored kernel:

    python3 scripts/make_fixtures.py
"""

import json
import pathlib
import sys

import numpy as np

from multiturn.bufferio import write_buffer
from multiturn.contrast import build_mask_from_labels, multiturn_infonce
from multiturn.core import EmbeddingMatrix, LossConfig, Role, RowLabel, Variant
from multiturn.costmodel import (
    REFERENCE_SCALING_ROWS,
    CostConfig,
    efficiency_ratio,
    fit_scaling,
    iteration_cost,
)
from multiturn.template import (
    ChatMarkup,
    PromptConfig,
    TemplateVariant,
    build_adapted_pair,
    mask_words,
)

ROOT = pathlib.Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"


def unit_rows(rng, n, dim):
    values = rng.standard_normal((n, dim))
    return values / np.linalg.norm(values, axis=1, keepdims=True)


def label_json(label):
    return {
        "imageIndex": label.image_index,
        "turnIndex": label.turn_index,
        "role": label.role.value,
        "variant": label.variant.value,
    }


def pretrain_labels(images, turns):
    q = [RowLabel(i, j, Role.QUERY) for i in range(images) for j in range(turns)]
    t = [RowLabel(i, j, Role.TARGET) for i in range(images) for j in range(turns)]
    return q, t


def variant_labels(samples):
    q, t = [], []
    for i in range(samples):
        for variant in (Variant.ORIGINAL, Variant.AUGMENTED):
            q.append(RowLabel(i, 0, Role.QUERY, variant))
            t.append(RowLabel(i, 0, Role.TARGET, variant))
    return q, t


def write_loss_cases():
    out = FIXTURES / "loss"
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(77)
    cases = []
    # the canonical 2-image x 4-turn grid first, then random shapes
    plans = [("pretrain", 2, 4, 16, 0.02, True, True)]
    for n in range(1, 100):
        if n % 10 == 9:
            plans.append(
                ("variant", int(rng.integers(1, 4)), 1, int(rng.integers(2, 17)),
                 0.02 if n % 2 else 1.0, True, True)
            )
        elif n % 10 == 4:
            plans.append(
                ("pretrain", int(rng.integers(2, 5)), int(rng.integers(2, 5)),
                 int(rng.integers(2, 17)), 0.02 if n % 2 else 1.0, False, True)
            )
        elif n % 10 == 7:
            plans.append(
                ("pretrain", int(rng.integers(2, 5)), 1, int(rng.integers(2, 17)),
                 0.02 if n % 2 else 1.0, True, True)
            )
        else:
            plans.append(
                ("pretrain", int(rng.integers(1, 5)), int(rng.integers(1, 5)),
                 int(rng.integers(2, 17)), 0.02 if n % 2 else 1.0, True, True)
            )

    for idx, (kind, a, b, dim, tau, mask_same, mask_cp) in enumerate(plans):
        if kind == "variant":
            q_labels, t_labels = variant_labels(a)
        else:
            q_labels, t_labels = pretrain_labels(a, b)
        cfg = LossConfig(
            temperature=tau, mask_same_image=mask_same, mask_counterpart=mask_cp
        )
        q = EmbeddingMatrix(tuple(q_labels), unit_rows(rng, len(q_labels), dim))
        t = EmbeddingMatrix(tuple(t_labels), unit_rows(rng, len(t_labels), dim))
        spec = build_mask_from_labels(q_labels, t_labels, cfg)
        report, grad_q, grad_t = multiturn_infonce(q, t, spec, cfg)

        stem = f"case_{idx:03d}"
        rows_seg = lambda m: [(f"row{r}", m.shape[1]) for r in range(m.shape[0])]
        write_buffer(str(out / f"{stem}_q.buf"), q.values, rows_seg(q.values),
                     {"rows": str(q.values.shape[0]), "dim": str(dim)})
        write_buffer(str(out / f"{stem}_t.buf"), t.values, rows_seg(t.values),
                     {"rows": str(t.values.shape[0]), "dim": str(dim)})
        write_buffer(str(out / f"{stem}_gq.buf"), grad_q, rows_seg(grad_q),
                     {"rows": str(grad_q.shape[0]), "dim": str(dim)})
        write_buffer(str(out / f"{stem}_gt.buf"), grad_t, rows_seg(grad_t),
                     {"rows": str(grad_t.shape[0]), "dim": str(dim)})
        meta = {
            "kind": kind,
            "dim": dim,
            "config": {
                "temperature": tau,
                "maskSameImage": mask_same,
                "maskCounterpart": mask_cp,
            },
            "queryLabels": [label_json(l) for l in q_labels],
            "targetLabels": [label_json(l) for l in t_labels],
            "expectedLoss": report.total,
            "effectiveNegativesPerQuery": report.effective_negatives_per_query,
        }
        (out / f"{stem}.json").write_text(json.dumps(meta, indent=1), "utf-8")
    return len(plans)


def write_text_cases():
    markup = ChatMarkup()
    rng = np.random.default_rng(123)
    words = ["amber", "kite", "river", "stone", "gull", "lamp", "moss", "tide",
             "crate", "vane", "sill", "fen", "oak", "pier", "dune", "wisp"]
    mask_cases = []
    for i in range(100):
        n = int(rng.integers(1, 14))
        text = " ".join(rng.choice(words, size=n))
        ratio = float(rng.choice([0.0, 0.25, 0.5, 0.75, 1.0]))
        seed = int(rng.integers(0, 10_000))
        token = "<|mask|>" if i % 3 else "___"
        mask_cases.append(
            {
                "text": text,
                "ratio": ratio,
                "seed": seed,
                "maskToken": token,
                "expected": mask_words(text, ratio, seed, token),
            }
        )

    adapted_cases = []
    for i, variant in enumerate(
        list(TemplateVariant) * 5
    ):
        q = " ".join(rng.choice(words, size=int(rng.integers(2, 9))))
        t = " ".join(rng.choice(words, size=int(rng.integers(2, 9))))
        ratio = float(rng.choice([0.25, 0.5, 0.75]))
        seed = int(rng.integers(0, 10_000))
        cfg = PromptConfig(mask_ratio=ratio, template_variant=variant)
        pair = build_adapted_pair(q, t, cfg, markup, seed)
        adapted_cases.append(
            {
                "query": q,
                "target": t,
                "maskRatio": ratio,
                "seed": seed,
                "variant": variant.value,
                "expected": {
                    "queryInitial": pair.query_initial,
                    "querySubsequent": pair.query_subsequent,
                    "targetInitial": pair.target_initial,
                    "targetSubsequent": pair.target_subsequent,
                },
            }
        )
    payload = {"maskWords": mask_cases, "adaptedPairs": adapted_cases}
    (FIXTURES / "text_cases.json").write_text(json.dumps(payload, indent=1), "utf-8")
    return len(mask_cases), len(adapted_cases)


def cost_config_json(cfg):
    return {
        "flopsPerImageToken": cfg.flops_per_image_token,
        "flopsPerTextToken": cfg.flops_per_text_token,
        "backwardMultiplier": cfg.backward_multiplier,
        "imageTokens": cfg.image_tokens,
        "queryTextTokens": cfg.query_text_tokens,
        "targetTextTokens": cfg.target_text_tokens,
        "perExtraPairTokens": cfg.per_extra_pair_tokens,
    }


def write_cost_cases():
    fit = fit_scaling(REFERENCE_SCALING_ROWS)
    configs = {"default": CostConfig(), "fitted": fit.config,
               "custom": CostConfig(backward_multiplier=2.5,
                                    per_extra_pair_tokens=50)}
    cases = []
    for name, cfg in configs.items():
        for row in REFERENCE_SCALING_ROWS:
            cases.append(
                {
                    "configName": name,
                    "batch": row.batch,
                    "turns": row.turns,
                    "expectedFlops": iteration_cost(cfg, row.batch, row.turns),
                    "expectedRatio": efficiency_ratio(cfg, row.batch, row.turns),
                }
            )
    payload = {
        "configs": {name: cost_config_json(cfg) for name, cfg in configs.items()},
        "cases": cases,
    }
    (FIXTURES / "cost_cases.json").write_text(json.dumps(payload, indent=1), "utf-8")
    return len(cases)


def main():
    FIXTURES.mkdir(parents=True, exist_ok=True)
    n_loss = write_loss_cases()
    n_mask, n_adapted = write_text_cases()
    n_cost = write_cost_cases()
    print(f"wrote {n_loss} loss cases, {n_mask} mask cases, "
          f"{n_adapted} adapted cases, {n_cost} cost cases to {FIXTURES}")


if __name__ == "__main__":
    sys.exit(main())
