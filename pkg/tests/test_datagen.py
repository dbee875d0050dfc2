import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from multiturn.core import TaskTag, ValidationError
from multiturn.datagen import (
    CardinalityViolation,
    EmptyResponse,
    HttpProvider,
    ImageRecord,
    MockProvider,
    PAIRS_PER_IMAGE,
    ParseFailure,
    ProviderConfig,
    ProviderUnavailable,
    ResolutionTooLow,
    SchemaViolation,
    SynthRecord,
    caption,
    parse_pair_blocks,
    record_from_json,
    record_to_json,
    run_pipeline,
    synth_pairs,
    validate_corpus,
)

CFG = ProviderConfig(max_retries=2, backoff_base=0.0)


def make_record(i=0, width=640, height=480):
    return ImageRecord(image_id=f"img{i:04d}", width=width, height=height)


def write_input(path, n, width=640, height=480):
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(n):
            fh.write(
                json.dumps(
                    {"image_id": f"img{i:04d}", "width": width, "height": height}
                )
                + "\n"
            )


# ---------------------------------------------------------------------------
# captioning

def test_mock_caption_deterministic():
    provider = MockProvider()
    a = caption(make_record(), provider, CFG)
    b = caption(make_record(), provider, CFG)
    assert a == b
    assert caption(make_record(1), provider, CFG) != a


def test_resolution_filter():
    with pytest.raises(ResolutionTooLow):
        caption(make_record(width=500, height=300), MockProvider(), CFG)
    # one large dimension suffices
    caption(make_record(width=512, height=100), MockProvider(), CFG)


# ---------------------------------------------------------------------------
# pair synthesis and parsing

def test_synth_pairs_mock_distribution():
    provider = MockProvider()
    cap = caption(make_record(), provider, CFG)
    record = synth_pairs("img0000", cap, provider, CFG)
    tags = [p.task_tag for p in record.pairs]
    assert len(record.pairs) == PAIRS_PER_IMAGE
    assert tags.count(TaskTag.CLS) == 1
    assert tags.count(TaskTag.RET) == 1
    assert tags.count(TaskTag.GLOBAL_VQA) == 2
    assert tags.count(TaskTag.LOCAL_VQA) == 2
    assert tags.count(TaskTag.CREATIVE_VQA) == 1


def test_ret_positive_equals_caption_verbatim():
    provider = MockProvider()
    cap = caption(make_record(3), provider, CFG)
    record = synth_pairs("img0003", cap, provider, CFG)
    ret = next(p for p in record.pairs if p.task_tag is TaskTag.RET)
    assert ret.target_text == cap


def test_parse_tolerates_blanks_and_headers():
    raw = "\n### pair 1\ntask: classification\nquery: q?\npositive: a\n\n"
    parsed = parse_pair_blocks(raw)
    assert parsed == [(TaskTag.CLS, "q?", "a")]


def test_parse_rejects_malformed():
    with pytest.raises(ParseFailure):
        parse_pair_blocks("task: classification\nquery only no positive")
    with pytest.raises(ParseFailure):
        parse_pair_blocks("### pair 1\ntask: sorcery\nquery: q\npositive: a")


class SixPairProvider:
    def complete(self, messages):
        if "pairs" in messages[0]["content"].lower():
            blocks = MockProvider._pairs("A canal boat at dusk.", b"\x00" * 32)
            lines = blocks.splitlines()
            # drop the final block (5 lines per block)
            return "\n".join(lines[:-5])
        return "A canal boat at dusk."


def test_six_pairs_is_cardinality_violation():
    with pytest.raises(CardinalityViolation):
        synth_pairs("x", "A canal boat at dusk.", SixPairProvider(), CFG)


def test_synth_record_invariants():
    provider = MockProvider()
    cap = caption(make_record(), provider, CFG)
    record = synth_pairs("img0000", cap, provider, CFG)
    with pytest.raises(ValidationError):
        SynthRecord(record.image_id, "a different caption", record.pairs)
    with pytest.raises(CardinalityViolation):
        SynthRecord(record.image_id, cap, record.pairs[:6])


# ---------------------------------------------------------------------------
# pipeline

def test_pipeline_counts_and_determinism(tmp_path):
    inp = tmp_path / "images.jsonl"
    out = tmp_path / "synth.jsonl"
    write_input(inp, 10)
    provider = MockProvider()
    stats = run_pipeline(str(inp), str(out), provider, CFG, concurrency=4)
    assert stats["written"] == 10
    first = out.read_bytes()
    stats2 = run_pipeline(str(inp), str(out), provider, CFG, concurrency=4)
    assert out.read_bytes() == first
    assert stats2["written"] == 10


def test_pipeline_resumability_no_duplicate_calls(tmp_path):
    inp = tmp_path / "images.jsonl"
    out = tmp_path / "synth.jsonl"
    write_input(inp, 6)
    provider = MockProvider()
    run_pipeline(str(inp), str(out), provider, CFG)
    calls_first = provider.calls
    assert calls_first == 12  # one caption + one pair call per image
    run_pipeline(str(inp), str(out), provider, CFG)
    assert provider.calls == calls_first  # all served from the sidecar caches


def test_pipeline_skips_low_resolution(tmp_path):
    inp = tmp_path / "images.jsonl"
    out = tmp_path / "synth.jsonl"
    with open(inp, "w") as fh:
        fh.write(json.dumps({"image_id": "big", "width": 600, "height": 600}) + "\n")
        fh.write(json.dumps({"image_id": "tiny", "width": 100, "height": 100}) + "\n")
    stats = run_pipeline(str(inp), str(out), MockProvider(), CFG)
    assert stats["skipped_resolution"] == 1
    assert stats["written"] == 1


def test_record_json_roundtrip():
    provider = MockProvider()
    cap = caption(make_record(), provider, CFG)
    record = synth_pairs("img0000", cap, provider, CFG)
    line = record_to_json(record)
    assert record_from_json(line, 1) == record


def test_validate_corpus_stats(tmp_path):
    inp = tmp_path / "images.jsonl"
    out = tmp_path / "synth.jsonl"
    write_input(inp, 8)
    run_pipeline(str(inp), str(out), MockProvider(), CFG)
    stats = validate_corpus(str(out))
    assert stats["records"] == 8
    assert stats["pairs"] == 56
    assert stats["per_tag"] == {
        "cls": 8, "ret": 8, "global_vqa": 16, "local_vqa": 16, "creative_vqa": 8
    }
    assert stats["pairs_per_image"] == {7: 8}
    assert stats["query_tokens"]["count"] == 56
    assert stats["query_tokens"]["min"] >= 1


def test_validate_corpus_reports_line_number(tmp_path):
    inp = tmp_path / "images.jsonl"
    out = tmp_path / "synth.jsonl"
    write_input(inp, 2)
    run_pipeline(str(inp), str(out), MockProvider(), CFG)
    lines = out.read_text().splitlines()
    broken = json.loads(lines[1])
    broken["pairs"] = broken["pairs"][:6]
    lines[1] = json.dumps(broken)
    out.write_text("\n".join(lines) + "\n")
    with pytest.raises(SchemaViolation) as err:
        validate_corpus(str(out))
    assert err.value.line_number == 2


def test_validate_corpus_empty_file(tmp_path):
    out = tmp_path / "empty.jsonl"
    out.write_text("")
    stats = validate_corpus(str(out))
    assert stats["records"] == 0 and stats["pairs"] == 0


# ---------------------------------------------------------------------------
# HTTP provider

class _ChatHandler(BaseHTTPRequestHandler):
    failures_remaining = 0
    empty_replies = 0

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        cls = type(self)
        if cls.failures_remaining > 0:
            cls.failures_remaining -= 1
            self.send_response(503)
            self.end_headers()
            return
        if cls.empty_replies > 0:
            cls.empty_replies -= 1
            payload = {"content": ""}
        else:
            payload = {"content": f"echo: {body['messages'][-1]['content'][:40]}"}
        data = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture()
def chat_server():
    server = HTTPServer(("127.0.0.1", 0), _ChatHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/v1/chat"
    server.shutdown()


def test_http_provider_roundtrip(chat_server):
    cfg = ProviderConfig(endpoint=chat_server, max_retries=0, backoff_base=0.0)
    provider = HttpProvider(cfg)
    out = provider.complete([{"role": "user", "content": "hello"}])
    assert out.startswith("echo: hello")


def test_http_provider_retries_5xx(chat_server):
    _ChatHandler.failures_remaining = 2
    cfg = ProviderConfig(endpoint=chat_server, max_retries=3, backoff_base=0.0)
    provider = HttpProvider(cfg)
    out = provider.complete([{"role": "user", "content": "retry me"}])
    assert out.startswith("echo:")
    assert provider.calls == 3


def test_http_provider_unavailable_after_retries(chat_server):
    _ChatHandler.failures_remaining = 10
    cfg = ProviderConfig(endpoint=chat_server, max_retries=2, backoff_base=0.0)
    with pytest.raises(ProviderUnavailable):
        HttpProvider(cfg).complete([{"role": "user", "content": "x"}])
    _ChatHandler.failures_remaining = 0


def test_http_provider_empty_after_retries(chat_server):
    _ChatHandler.empty_replies = 10
    cfg = ProviderConfig(endpoint=chat_server, max_retries=1, backoff_base=0.0)
    with pytest.raises(EmptyResponse):
        HttpProvider(cfg).complete([{"role": "user", "content": "x"}])
    _ChatHandler.empty_replies = 0
