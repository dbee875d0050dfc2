"""Dialogue templating: how samples become token sequences.

Shows the multi-turn packing layout (one image prefix, then per-turn user
query + assistant embedding token), seeded turn shuffling, word masking,
and the adapted two-turn construction for single-pair data.
"""

from multiturn import (
    ByteTokenizer,
    ChatMarkup,
    MultiTurnSample,
    PromptConfig,
    TemplateVariant,
    TurnPair,
    build_adapted_pair,
    mask_words,
    pack_multiturn,
    shuffle_turns,
)

markup = ChatMarkup()
tok = ByteTokenizer(markup)

sample = MultiTurnSample(
    image_id="demo-image",
    image_tokens=4,
    pairs=(
        TurnPair("what color is the kite?", "bright red"),
        TurnPair("where is it flying?", "over the beach"),
        TurnPair("how many people hold it?", "two people"),
    ),
)

query_seq, target_seq = pack_multiturn(sample, markup, tok)
print(f"query side : {len(query_seq)} tokens, emb positions "
      f"{query_seq.emb_positions.tolist()}")
print(f"target side: {len(target_seq)} tokens, emb positions "
      f"{target_seq.emb_positions.tolist()}")
print(f"image prefix length: {query_seq.image_prefix_len} "
      f"(markup + placeholder + {sample.image_tokens} pseudo-visual tokens)")
print("turn of each query-side position:", query_seq.turn_ids.tolist())

# --- per-batch turn shuffling ------------------------------------------------
shuffled = shuffle_turns(sample, seed=7)
print("\nshuffled turn order (seed 7):",
      [p.query_text[:12] for p in shuffled.pairs])
print("same seed shuffles identically:",
      shuffle_turns(sample, seed=7).pairs == shuffled.pairs)

# --- word masking ------------------------------------------------------------
text = "a tall red kite above the crowded beach"
for ratio in (0.25, 0.5, 0.75):
    print(f"mask ratio {ratio}: {mask_words(text, ratio, seed=3, mask_token='_')}")

# --- adapted pair for single-turn data ----------------------------------------
cfg = PromptConfig(mask_ratio=0.5)
pair = build_adapted_pair(
    "what color is the kite?", "bright red above the beach", cfg, markup, seed=1
)
print("\nadapted query side, initial turn   :", pair.query_initial)
print("adapted query side, subsequent turn:")
for line in pair.query_subsequent.splitlines():
    print("   ", line)

rephrase = build_adapted_pair(
    "what color is the kite?", "bright red above the beach",
    PromptConfig(template_variant=TemplateVariant.REPHRASING), markup, seed=1,
)
print("\nrephrasing variant subsequent turn:", rephrase.query_subsequent)
