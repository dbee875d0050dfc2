"""Walkthrough of the contrastive loss family and logit masking.

Builds a small multi-turn batch, shows the (terms x targets) pair grid,
and contrasts the masked multi-turn loss against the naive variant that
treats same-image targets as negatives.
"""

import numpy as np

from multiturn import (
    EmbeddingMatrix,
    LossConfig,
    PairKind,
    Role,
    RowLabel,
    build_mask_pretrain,
    build_mask_finetune,
    effective_negatives,
    multiturn_infonce,
    naive_multipair_loss,
)

rng = np.random.default_rng(0)

# --- a batch of 2 images x 4 turns -----------------------------------------
images, turns, dim = 2, 4, 16
q_labels = tuple(RowLabel(i, j, Role.QUERY) for i in range(images) for j in range(turns))
t_labels = tuple(RowLabel(i, j, Role.TARGET) for i in range(images) for j in range(turns))

def unit(n):
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)

queries = EmbeddingMatrix(q_labels, unit(len(q_labels)))
targets = EmbeddingMatrix(t_labels, unit(len(t_labels)))

# The pretraining mask: the aligned target is the positive, other targets of
# the same image are excluded from the softmax entirely, everything else is
# a negative.
spec = build_mask_pretrain(list(q_labels), list(t_labels))
symbols = {PairKind.POSITIVE.value: "+", PairKind.NEGATIVE.value: "-",
           PairKind.MASKED.value: "."}
print("pair grid for 2 images x 4 turns  (+ positive, - negative, . masked)")
for row in spec.kind:
    print("  " + " ".join(symbols[int(v)] for v in row))

print("\nnegatives per query:", int(spec.negatives_per_row()[0]))
print("effective_negatives(2, 4)       =", effective_negatives(2, 4))
print("effective_negatives(1024, 7)    =", effective_negatives(1024, 7))

# --- masked vs naive --------------------------------------------------------
cfg = LossConfig(temperature=0.02)
masked_report, grad_q, grad_t = multiturn_infonce(queries, targets, spec, cfg)
naive_report, _, _ = naive_multipair_loss(queries, targets, cfg)
print(f"\nmasked multi-turn loss : {masked_report.total:.4f}")
print(f"naive multi-pair loss  : {naive_report.total:.4f}")
print("the naive loss is higher: same-image targets act as false negatives")

# --- the fine-tuning grid ---------------------------------------------------
# each sample contributes original and augmented forms of both sides; every
# term masks the counterpart form of its positive
ft = build_mask_finetune([0, 1, 2])
print(f"\nfine-tuning grid: {len(ft.queries)} terms x {len(ft.targets)} targets "
      f"(4 terms per sample)")
for row in ft.kind:
    print("  " + " ".join(symbols[int(v)] for v in row))
