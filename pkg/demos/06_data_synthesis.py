"""The two-stage synthesis pipeline with the deterministic mock provider.

Stage 1 dense-captions each image record; stage 2 turns each caption into
seven tagged query-target pairs in one call.  Raw responses are cached in
sidecar files, so re-running is free and the output is byte-identical.
"""

import json
import tempfile
from pathlib import Path

from multiturn.datagen import (
    MockProvider,
    ProviderConfig,
    run_pipeline,
    validate_corpus,
)

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    inp = tmp / "images.jsonl"
    out = tmp / "synth.jsonl"
    with open(inp, "w", encoding="utf-8") as fh:
        for i in range(12):
            fh.write(json.dumps(
                {"image_id": f"img{i:04d}", "width": 640, "height": 480}) + "\n")
        # one record below the resolution floor, skipped by the filter
        fh.write(json.dumps(
            {"image_id": "tiny", "width": 150, "height": 200}) + "\n")

    provider = MockProvider()
    cfg = ProviderConfig(backoff_base=0.0)
    stats = run_pipeline(str(inp), str(out), provider, cfg, concurrency=4)
    print("pipeline stats:", stats)
    print("provider calls:", provider.calls, "(caption + pair call per image)")

    stats2 = run_pipeline(str(inp), str(out), provider, cfg, concurrency=4)
    print("re-run provider calls:", provider.calls, "(unchanged: cache hit)")

    corpus = validate_corpus(str(out))
    print("\ncorpus statistics")
    print("  records        :", corpus["records"])
    print("  pairs          :", corpus["pairs"])
    print("  per tag        :", corpus["per_tag"])
    print("  query tokens   :", corpus["query_tokens"])
    print("  pairs per image:", corpus["pairs_per_image"])

    record = json.loads(out.read_text().splitlines()[0])
    print("\nfirst record caption:", record["dense_caption"])
    for p in record["pairs"][:3]:
        print(f"  [{p['task']}] {p['query']}  ->  {p['positive'][:60]}")
