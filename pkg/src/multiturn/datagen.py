"""Two-stage synthesis pipeline: dense captioning then seven query-target
pairs per image, through a chat-completion provider.

Both stages persist raw provider responses to sidecar caches so re-runs make
no calls for already-processed records.  A deterministic mock provider makes
the whole pipeline reproducible at desk scale.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable

import requests

from .core import TaskTag, TurnPair, ValidationError
from .template import ByteTokenizer, ChatMarkup

MIN_RESOLUTION = 512

# Required task-tag multiset for one record: 1 classification, 1 retrieval,
# 2 global + 2 local + 1 creative VQA.
PAIR_TAG_COUNTS = {
    TaskTag.CLS: 1,
    TaskTag.RET: 1,
    TaskTag.GLOBAL_VQA: 2,
    TaskTag.LOCAL_VQA: 2,
    TaskTag.CREATIVE_VQA: 1,
}
PAIRS_PER_IMAGE = sum(PAIR_TAG_COUNTS.values())

_TAG_ALIASES = {
    "classification": TaskTag.CLS,
    "cls": TaskTag.CLS,
    "retrieval": TaskTag.RET,
    "ret": TaskTag.RET,
    "global_vqa": TaskTag.GLOBAL_VQA,
    "local_vqa": TaskTag.LOCAL_VQA,
    "creative_vqa": TaskTag.CREATIVE_VQA,
}


class ProviderUnavailable(RuntimeError):
    pass


class EmptyResponse(RuntimeError):
    pass


class ParseFailure(ValueError):
    pass


class CardinalityViolation(ValueError):
    pass


class ResolutionTooLow(ValueError):
    pass


class SchemaViolation(ValueError):
    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    width: int
    height: int
    dense_caption: str | None = None

    def passes_resolution_filter(self) -> bool:
        return max(self.width, self.height) >= MIN_RESOLUTION


@dataclass(frozen=True)
class SynthRecord:
    image_id: str
    dense_caption: str
    pairs: tuple[TurnPair, ...]

    def __post_init__(self):
        if len(self.pairs) != PAIRS_PER_IMAGE:
            raise CardinalityViolation(
                f"expected {PAIRS_PER_IMAGE} pairs, got {len(self.pairs)}"
            )
        counts: dict[TaskTag, int] = {}
        for p in self.pairs:
            counts[p.task_tag] = counts.get(p.task_tag, 0) + 1
        if counts != PAIR_TAG_COUNTS:
            raise CardinalityViolation(f"task tag counts {counts} are wrong")
        ret = next(p for p in self.pairs if p.task_tag is TaskTag.RET)
        if ret.target_text != self.dense_caption:
            raise ValidationError("retrieval positive must equal the dense caption")
        queries = [p.query_text for p in self.pairs]
        if len(set(queries)) != len(queries):
            raise ValidationError("queries must be pairwise distinct")


def _default_prompt(name: str) -> str:
    return resources.files("multiturn.prompts").joinpath(name).read_text("utf-8")


@dataclass(frozen=True)
class ProviderConfig:
    endpoint: str = "http://localhost:8080/v1/chat"
    model_name: str = "mock"
    caption_prompt: str = field(default_factory=lambda: _default_prompt("caption_prompt.txt"))
    pairgen_prompt: str = field(default_factory=lambda: _default_prompt("pairgen_prompt.txt"))
    max_retries: int = 3
    timeout: float = 30.0
    backoff_base: float = 0.5

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValidationError("max_retries must be >= 0")


def provider_config_from_file(path: str) -> ProviderConfig:
    from .template import load_keyvalue_config

    kv = load_keyvalue_config(path)
    kwargs: dict = {}
    for key in ("endpoint", "model_name"):
        if key in kv:
            kwargs[key] = kv[key]
    if "caption_prompt_file" in kv:
        with open(kv["caption_prompt_file"], encoding="utf-8") as fh:
            kwargs["caption_prompt"] = fh.read()
    if "pairgen_prompt_file" in kv:
        with open(kv["pairgen_prompt_file"], encoding="utf-8") as fh:
            kwargs["pairgen_prompt"] = fh.read()
    if "max_retries" in kv:
        kwargs["max_retries"] = int(kv["max_retries"])
    if "timeout" in kv:
        kwargs["timeout"] = float(kv["timeout"])
    if "backoff_base" in kv:
        kwargs["backoff_base"] = float(kv["backoff_base"])
    return ProviderConfig(**kwargs)


class HttpProvider:
    """Chat-completion client: POST {model, messages} -> {content}.

    Retries with exponential backoff on 5xx, timeouts, connection errors,
    and empty content.
    """

    def __init__(self, cfg: ProviderConfig, session: requests.Session | None = None):
        self.cfg = cfg
        self.session = session or requests.Session()
        self.calls = 0

    def complete(self, messages: list[dict[str, str]]) -> str:
        last_error: Exception | None = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt:
                time.sleep(self.cfg.backoff_base * 2 ** (attempt - 1))
            self.calls += 1
            try:
                resp = self.session.post(
                    self.cfg.endpoint,
                    json={"model": self.cfg.model_name, "messages": messages},
                    timeout=self.cfg.timeout,
                )
            except (requests.Timeout, requests.ConnectionError) as exc:
                last_error = exc
                continue
            if resp.status_code >= 500:
                last_error = ProviderUnavailable(f"HTTP {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise ProviderUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
            content = resp.json().get("content", "")
            if not content.strip():
                last_error = EmptyResponse("provider returned empty content")
                continue
            return content
        if isinstance(last_error, EmptyResponse):
            raise last_error
        raise ProviderUnavailable(str(last_error))


_MOCK_SUBJECTS = ("bicycle", "lighthouse", "orchard", "market stall", "canal boat",
                  "observatory", "greenhouse", "tram", "fountain", "windmill")
_MOCK_SETTINGS = ("at dusk", "under heavy clouds", "in morning fog", "beside a brick wall",
                  "on a cobbled square", "near the waterline", "framed by pines",
                  "behind a wire fence", "along a gravel path", "under string lights")
_MOCK_DETAILS = ("peeling paint", "a hand-lettered sign", "rust along the seams",
                 "fresh snow on top", "two pigeons nearby", "reflections in a puddle",
                 "a stack of crates", "faded bunting", "moss on the stones",
                 "a parked red scooter")


class MockProvider:
    """Deterministic stand-in: output is a pure function of the messages."""

    def __init__(self):
        self.calls = 0

    def complete(self, messages: list[dict[str, str]]) -> str:
        self.calls += 1
        system = messages[0]["content"]
        payload = messages[-1]["content"]
        h = hashlib.sha256(payload.encode("utf-8")).digest()
        if "query-target" in system or "pairs" in system.lower():
            return self._pairs(payload, h)
        return self._caption(h)

    @staticmethod
    def _caption(h: bytes) -> str:
        subject = _MOCK_SUBJECTS[h[0] % len(_MOCK_SUBJECTS)]
        setting = _MOCK_SETTINGS[h[1] % len(_MOCK_SETTINGS)]
        detail = _MOCK_DETAILS[h[2] % len(_MOCK_DETAILS)]
        extra = _MOCK_DETAILS[(h[2] + 1 + h[3] % (len(_MOCK_DETAILS) - 1)) % len(_MOCK_DETAILS)]
        return (
            f"A {subject} {setting}, showing {detail} and {extra}; "
            f"scene code {h[4:8].hex()}."
        )

    @staticmethod
    def _pairs(caption: str, h: bytes) -> str:
        subject = caption.split()[1] if len(caption.split()) > 1 else "scene"
        code = h[4:8].hex()
        blocks = [
            ("classification", f"What category best describes this image? [{code}]",
             f"{subject}"),
            ("retrieval", f"Find the image matching this description. [{code}]",
             "(dense caption)"),
            ("global_vqa", f"What is the overall setting shown here? [{code}]",
             f"The scene is set {_MOCK_SETTINGS[h[5] % len(_MOCK_SETTINGS)]}."),
            ("global_vqa", f"What mood does the whole picture convey? [{code}]",
             f"A quiet mood, {_MOCK_SETTINGS[h[6] % len(_MOCK_SETTINGS)]}."),
            ("local_vqa", f"What small detail stands out near the {subject}? [{code}]",
             f"There is {_MOCK_DETAILS[h[7] % len(_MOCK_DETAILS)]}."),
            ("local_vqa", f"What texture is visible up close? [{code}]",
             f"Close up one sees {_MOCK_DETAILS[h[8] % len(_MOCK_DETAILS)]}."),
            ("creative_vqa", f"What might happen here an hour later? [{code}]",
             f"Perhaps the {subject} would be gone by then."),
        ]
        lines = []
        for i, (task, query, positive) in enumerate(blocks, 1):
            lines += [f"### pair {i}", f"task: {task}", f"query: {query}",
                      f"positive: {positive}", ""]
        return "\n".join(lines)


def caption(record: ImageRecord, provider, cfg: ProviderConfig) -> str:
    """Dense-caption one image record through the provider."""
    if not record.passes_resolution_filter():
        raise ResolutionTooLow(
            f"{record.image_id}: max({record.width}, {record.height}) < {MIN_RESOLUTION}"
        )
    messages = [
        {"role": "system", "content": cfg.caption_prompt},
        {
            "role": "user",
            "content": f"[image:{record.image_id}] ({record.width}x{record.height})",
        },
    ]
    text = provider.complete(messages)
    if not text.strip():
        raise EmptyResponse(f"empty caption for {record.image_id}")
    return text.strip()


def parse_pair_blocks(raw: str) -> list[tuple[TaskTag, str, str]]:
    """Parse the labeled-block provider output into (tag, query, positive)
    triples.  Tolerates blank lines and block headers; rejects anything that
    does not form complete blocks."""
    parsed: list[tuple[TaskTag, str, str]] = []
    current: dict[str, str] = {}

    def flush():
        if not current:
            return
        missing = {"task", "query", "positive"} - set(current)
        if missing:
            raise ParseFailure(f"block missing fields: {sorted(missing)}")
        tag = _TAG_ALIASES.get(current["task"].strip().lower())
        if tag is None:
            raise ParseFailure(f"unknown task tag {current['task']!r}")
        parsed.append((tag, current["query"].strip(), current["positive"].strip()))
        current.clear()

    for line in raw.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            flush()
            continue
        key, sep, value = line.partition(":")
        if not sep or key.strip().lower() not in ("task", "query", "positive"):
            raise ParseFailure(f"unparseable line {line!r}")
        current[key.strip().lower()] = value.strip()
    flush()
    return parsed


def synth_pairs(
    image_id: str, dense_caption: str, provider, cfg: ProviderConfig
) -> SynthRecord:
    """One provider call producing the seven tagged pairs for a caption.

    The retrieval positive is set to the dense caption itself rather than
    trusting the provider output for it."""
    if not dense_caption.strip():
        raise ValidationError("caption must be non-empty")
    messages = [
        {"role": "system", "content": cfg.pairgen_prompt},
        {"role": "user", "content": dense_caption},
    ]
    raw = provider.complete(messages)
    parsed = parse_pair_blocks(raw)
    if len(parsed) != PAIRS_PER_IMAGE:
        raise CardinalityViolation(
            f"{image_id}: provider returned {len(parsed)} pairs, "
            f"expected {PAIRS_PER_IMAGE}"
        )
    pairs = tuple(
        TurnPair(
            query_text=query,
            target_text=dense_caption if tag is TaskTag.RET else positive,
            task_tag=tag,
        )
        for tag, query, positive in parsed
    )
    return SynthRecord(image_id=image_id, dense_caption=dense_caption, pairs=pairs)


def record_to_json(record: SynthRecord) -> str:
    return json.dumps(
        {
            "image_id": record.image_id,
            "dense_caption": record.dense_caption,
            "pairs": [
                {"task": p.task_tag.value, "query": p.query_text, "positive": p.target_text}
                for p in record.pairs
            ],
        },
        ensure_ascii=False,
        sort_keys=False,
    )


def record_from_json(line: str, line_number: int = 0) -> SynthRecord:
    try:
        obj = json.loads(line)
        pairs = tuple(
            TurnPair(
                query_text=p["query"],
                target_text=p["positive"],
                task_tag=TaskTag(p["task"]),
            )
            for p in obj["pairs"]
        )
        return SynthRecord(
            image_id=obj["image_id"], dense_caption=obj["dense_caption"], pairs=pairs
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaViolation(line_number, str(exc)) from exc


def read_image_records(path: str) -> list[ImageRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(
                    ImageRecord(
                        image_id=str(obj["image_id"]),
                        width=int(obj["width"]),
                        height=int(obj["height"]),
                        dense_caption=obj.get("dense_caption"),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaViolation(lineno, str(exc)) from exc
    return records


class _JsonlCache:
    """Append-only image_id -> payload sidecar used for resumability."""

    def __init__(self, path: str):
        self.path = path
        self.entries: dict[str, str] = {}
        if os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        obj = json.loads(line)
                        self.entries[obj["image_id"]] = obj["payload"]

    def get(self, image_id: str) -> str | None:
        return self.entries.get(image_id)

    def put(self, image_id: str, payload: str) -> None:
        self.entries[image_id] = payload
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"image_id": image_id, "payload": payload}) + "\n")


def run_pipeline(
    in_path: str,
    out_path: str,
    provider,
    cfg: ProviderConfig,
    concurrency: int = 1,
    skip_low_resolution: bool = True,
) -> dict:
    """Caption + pair-synthesize a JSONL corpus of image records.

    Raw provider responses are cached in `<out>.captions.jsonl` and
    `<out>.pairs.jsonl`; the output file is (re)written in input order, so
    re-runs are byte-identical and make no provider calls for cached
    records.  Records failing validation are skipped and counted.
    """
    records = read_image_records(in_path)
    captions = _JsonlCache(out_path + ".captions.jsonl")
    raw_pairs = _JsonlCache(out_path + ".pairs.jsonl")
    skipped_resolution = 0
    eligible: list[ImageRecord] = []
    for rec in records:
        if rec.dense_caption is None and not rec.passes_resolution_filter():
            if skip_low_resolution:
                skipped_resolution += 1
                continue
            raise ResolutionTooLow(rec.image_id)
        eligible.append(rec)

    def get_caption(rec: ImageRecord) -> str:
        if rec.dense_caption is not None:
            return rec.dense_caption
        cached = captions.get(rec.image_id)
        if cached is not None:
            return cached
        return caption(rec, provider, cfg)

    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        caps = list(pool.map(get_caption, eligible))
    for rec, cap in zip(eligible, caps):
        if captions.get(rec.image_id) is None and rec.dense_caption is None:
            captions.put(rec.image_id, cap)

    def get_raw_pairs(arg: tuple[ImageRecord, str]) -> str:
        rec, cap = arg
        cached = raw_pairs.get(rec.image_id)
        if cached is not None:
            return cached
        messages = [
            {"role": "system", "content": cfg.pairgen_prompt},
            {"role": "user", "content": cap},
        ]
        return provider.complete(messages)

    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        raws = list(pool.map(get_raw_pairs, list(zip(eligible, caps))))
    for rec, raw in zip(eligible, raws):
        if raw_pairs.get(rec.image_id) is None:
            raw_pairs.put(rec.image_id, raw)

    written = 0
    rejected = 0
    with open(out_path, "w", encoding="utf-8") as out:
        for rec, cap, raw in zip(eligible, caps, raws):
            try:
                parsed = parse_pair_blocks(raw)
                if len(parsed) != PAIRS_PER_IMAGE:
                    raise CardinalityViolation(
                        f"{len(parsed)} pairs, expected {PAIRS_PER_IMAGE}"
                    )
                pairs = tuple(
                    TurnPair(
                        query_text=q,
                        target_text=cap if tag is TaskTag.RET else pos,
                        task_tag=tag,
                    )
                    for tag, q, pos in parsed
                )
                record = SynthRecord(rec.image_id, cap, pairs)
            except (ParseFailure, CardinalityViolation, ValidationError):
                rejected += 1
                continue
            out.write(record_to_json(record) + "\n")
            written += 1
    return {
        "input_records": len(records),
        "skipped_resolution": skipped_resolution,
        "written": written,
        "rejected": rejected,
    }


def validate_corpus(path: str, tokenizer: Callable[[str], list[int]] | None = None) -> dict:
    """Validate a SynthRecord JSONL corpus and report statistics.

    Raises SchemaViolation (with line number) on the first invalid record.
    """
    if tokenizer is None:
        tokenizer = ByteTokenizer(ChatMarkup()).encode
    tag_counts = {tag: 0 for tag in PAIR_TAG_COUNTS}
    query_tokens: list[int] = []
    target_tokens: list[int] = []
    pairs_per_image: dict[int, int] = {}
    n_records = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            record = record_from_json(line, lineno)
            n_records += 1
            pairs_per_image[len(record.pairs)] = (
                pairs_per_image.get(len(record.pairs), 0) + 1
            )
            for p in record.pairs:
                tag_counts[p.task_tag] += 1
                query_tokens.append(len(tokenizer(p.query_text)))
                target_tokens.append(len(tokenizer(p.target_text)))

    def dist(values: list[int]) -> dict:
        if not values:
            return {"count": 0, "min": 0, "mean": 0.0, "max": 0}
        return {
            "count": len(values),
            "min": min(values),
            "mean": sum(values) / len(values),
            "max": max(values),
        }

    return {
        "records": n_records,
        "pairs": sum(tag_counts.values()),
        "per_tag": {tag.value: count for tag, count in tag_counts.items()},
        "query_tokens": dist(query_tokens),
        "target_tokens": dist(target_tokens),
        "pairs_per_image": pairs_per_image,
    }
