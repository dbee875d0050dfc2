"""Dialogue templating: chat markup, byte-level tokenizer, sequence packing,
seeded word masking, per-batch turn shuffling, and the single-pair adaptation
templates.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .core import MultiTurnSample, TurnPair, ValidationError


class TokenizerFailure(ValueError):
    pass


class ReservedTokenInText(ValueError):
    pass


class AttentionMode(str, Enum):
    CAUSAL = "causal"
    ISOLATED_TURNS = "isolated_turns"


class TemplateVariant(str, Enum):
    RECONSTRUCTION = "reconstruction"
    REPHRASING = "rephrasing"
    SELF_RECONSTRUCTION = "self_reconstruction"
    NO_GUIDANCE = "no_guidance"


@dataclass(frozen=True)
class ChatMarkup:
    """Role-tag scheme plus the reserved embedding/mask tokens."""

    user_open: str = "<|user|>"
    user_close: str = "<|/user|>"
    assistant_open: str = "<|assistant|>"
    assistant_close: str = "<|/assistant|>"
    emb_token: str = "<|emb|>"
    mask_token: str = "<|mask|>"
    image_placeholder: str = "<|image|>"

    def __post_init__(self):
        tokens = self.all_tokens()
        if any(not t for t in tokens):
            raise ValidationError("markup tokens must be non-empty")
        if len(set(tokens)) != len(tokens):
            raise ValidationError("markup tokens must be pairwise distinct")

    def all_tokens(self) -> tuple[str, ...]:
        return (
            self.user_open,
            self.user_close,
            self.assistant_open,
            self.assistant_close,
            self.emb_token,
            self.mask_token,
            self.image_placeholder,
        )

    def check_reserved(self, text: str, allow_mask: bool = False) -> None:
        """Reject user-provided text containing the emb (and mask) token."""
        if self.emb_token in text:
            raise ReservedTokenInText(f"text contains reserved {self.emb_token!r}")
        if not allow_mask and self.mask_token in text:
            raise ReservedTokenInText(f"text contains reserved {self.mask_token!r}")


# Default prompt texts for the adaptation templates.  PI1 asks the model to
# restate its embedding-space response; PI2 asks for a new embedding that
# reconstructs and integrates the dialogue.
PI1_DEFAULT = "Please rewrite your last response in human-readable language"
PI2_DEFAULT = (
    "Reconstruct the previous response, acknowledge my query, "
    "and seamlessly integrate the answer"
)
REPHRASE_REQUEST = "Please rephrase your last response in embedding space"
PLAIN_EMBED_REQUEST = "Please respond to my query in embedding space"


@dataclass(frozen=True)
class PromptConfig:
    pi1: str = PI1_DEFAULT
    pi2: str = PI2_DEFAULT
    mask_ratio: float = 0.5
    template_variant: TemplateVariant = TemplateVariant.RECONSTRUCTION
    plain_request: str = PLAIN_EMBED_REQUEST

    def __post_init__(self):
        if not (0.0 <= self.mask_ratio <= 1.0):
            raise ValidationError("mask_ratio must be in [0, 1]")


class ByteTokenizer:
    """Reference desk-scale tokenizer: one id per UTF-8 byte plus reserved ids.

    Reserved ids start at 256 and cover the markup tokens followed by a pool
    of pseudo-visual ids used to stand in for image patch tokens.  encode()
    scans for reserved token strings (longest first) so tokenizing a
    concatenation of segments equals the concatenation of the segment
    tokenizations.
    """

    NUM_BYTES = 256

    def __init__(self, markup: ChatMarkup, visual_pool: int = 64):
        self.markup = markup
        self._special_ids: dict[str, int] = {}
        for i, tok in enumerate(markup.all_tokens()):
            self._special_ids[tok] = self.NUM_BYTES + i
        self._specials_sorted = sorted(self._special_ids, key=len, reverse=True)
        self.visual_pool = int(visual_pool)
        self.visual_start = self.NUM_BYTES + len(self._special_ids)

    @property
    def vocab_size(self) -> int:
        return self.visual_start + self.visual_pool

    def special_id(self, token: str) -> int:
        return self._special_ids[token]

    @property
    def emb_id(self) -> int:
        return self._special_ids[self.markup.emb_token]

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        i = 0
        while i < len(text):
            matched = None
            for tok in self._specials_sorted:
                if text.startswith(tok, i):
                    matched = tok
                    break
            if matched is not None:
                ids.append(self._special_ids[matched])
                i += len(matched)
            else:
                ids.extend(text[i].encode("utf-8"))
                i += 1
        return ids

    def __call__(self, text: str) -> list[int]:
        return self.encode(text)

    def visual_ids(self, image_id: str, count: int) -> list[int]:
        """Deterministic pseudo-visual token ids derived from the image id."""
        if count == 0:
            return []
        if self.visual_pool <= 0:
            raise TokenizerFailure("tokenizer has no visual pool")
        digest = hashlib.sha256(image_id.encode("utf-8")).digest()
        ids = []
        stream = digest
        while len(stream) < 2 * count:
            stream += hashlib.sha256(stream).digest()
        for j in range(count):
            v = int.from_bytes(stream[2 * j : 2 * j + 2], "big")
            ids.append(self.visual_start + v % self.visual_pool)
        return ids


@dataclass(frozen=True)
class PackedSequence:
    """Tokenized dialogue with embedding-token positions and turn structure.

    turn_ids assigns every position to a turn (-1 for the image prefix); the
    isolated-turns attention mask is derived from it.
    """

    token_ids: np.ndarray  # (n,) int64
    emb_positions: np.ndarray  # strictly increasing indices into token_ids
    turn_of_position: dict[int, int]  # emb position -> turn index
    attention_mode: AttentionMode
    image_prefix_len: int
    turn_ids: np.ndarray  # (n,) int64, -1 = image prefix
    emb_token_id: int

    def __post_init__(self):
        token_ids = np.asarray(self.token_ids, dtype=np.int64)
        emb_positions = np.asarray(self.emb_positions, dtype=np.int64)
        turn_ids = np.asarray(self.turn_ids, dtype=np.int64)
        object.__setattr__(self, "token_ids", token_ids)
        object.__setattr__(self, "emb_positions", emb_positions)
        object.__setattr__(self, "turn_ids", turn_ids)
        if turn_ids.shape != token_ids.shape:
            raise ValidationError("turn_ids must parallel token_ids")
        if np.any(np.diff(emb_positions) <= 0):
            raise ValidationError("emb_positions must be strictly increasing")
        if not (0 <= self.image_prefix_len <= len(token_ids)):
            raise ValidationError("image_prefix_len out of range")
        if set(self.turn_of_position) != set(int(p) for p in emb_positions):
            raise ValidationError("turn_of_position must cover emb positions exactly")
        for p in emb_positions:
            if token_ids[p] != self.emb_token_id:
                raise ValidationError(f"position {p} does not hold the emb token")

    def __len__(self) -> int:
        return int(self.token_ids.shape[0])

    @property
    def num_turns(self) -> int:
        return len(self.emb_positions)


def _pack(
    segments: list[tuple[list[int], int]],
    emb_flags: list[bool],
    mode: AttentionMode,
    image_prefix_len: int,
    emb_id: int,
) -> PackedSequence:
    """Assemble (ids, turn) segments into a PackedSequence.

    segments is a list of (token_ids, turn_index); emb_flags marks segments
    that consist of the single emb token.
    """
    ids: list[int] = []
    turns: list[int] = []
    emb_positions: list[int] = []
    turn_of_position: dict[int, int] = {}
    for (seg_ids, turn), is_emb in zip(segments, emb_flags):
        if is_emb:
            emb_positions.append(len(ids))
            turn_of_position[len(ids)] = turn
        ids.extend(seg_ids)
        turns.extend([turn] * len(seg_ids))
    return PackedSequence(
        token_ids=np.array(ids, dtype=np.int64),
        emb_positions=np.array(emb_positions, dtype=np.int64),
        turn_of_position=turn_of_position,
        attention_mode=mode,
        image_prefix_len=image_prefix_len,
        turn_ids=np.array(turns, dtype=np.int64),
        emb_token_id=emb_id,
    )


def pack_multiturn(
    sample: MultiTurnSample,
    markup: ChatMarkup,
    tokenizer: ByteTokenizer,
    mode: AttentionMode = AttentionMode.CAUSAL,
) -> tuple[PackedSequence, PackedSequence]:
    """Lay a sample out as two dialogue token sequences (query side, target side).

    Query side: one image prefix, then per turn the user query followed by an
    assistant emb token.  Target side: per turn the target text followed by an
    emb token.  The emb token is the final token of each turn, so the j-th
    embedding is conditioned on everything up to and including turn j.
    """
    for pair in sample.pairs:
        markup.check_reserved(pair.query_text)
        markup.check_reserved(pair.target_text)

    emb_id = tokenizer.emb_id
    uo = tokenizer.encode(markup.user_open)
    uc = tokenizer.encode(markup.user_close)
    ao = tokenizer.encode(markup.assistant_open)
    img = tokenizer.encode(markup.image_placeholder)

    q_segments: list[tuple[list[int], int]] = []
    q_emb_flags: list[bool] = []
    vis = tokenizer.visual_ids(sample.image_id, sample.image_tokens)
    prefix = uo + img + vis + uc
    q_segments.append((prefix, -1))
    q_emb_flags.append(False)
    for j, pair in enumerate(sample.pairs):
        q_text = tokenizer.encode(pair.query_text)
        q_segments.append((uo + q_text + uc + ao, j))
        q_emb_flags.append(False)
        q_segments.append(([emb_id], j))
        q_emb_flags.append(True)
    query_seq = _pack(q_segments, q_emb_flags, mode, len(prefix), emb_id)

    t_segments: list[tuple[list[int], int]] = []
    t_emb_flags: list[bool] = []
    for j, pair in enumerate(sample.pairs):
        t_text = tokenizer.encode(pair.target_text)
        t_segments.append((ao + t_text, j))
        t_emb_flags.append(False)
        t_segments.append(([emb_id], j))
        t_emb_flags.append(True)
    target_seq = _pack(t_segments, t_emb_flags, mode, 0, emb_id)
    return query_seq, target_seq


def pack_adapted(
    initial_text: str,
    subsequent_text: str,
    markup: ChatMarkup,
    tokenizer: ByteTokenizer,
    mode: AttentionMode = AttentionMode.CAUSAL,
    image_id: str | None = None,
    image_tokens: int = 0,
) -> PackedSequence:
    """Pack a two-turn adapted dialogue: the initial text then the augmented
    continuation, each ending in an emb token.  The subsequent turn may
    contain mask tokens; the emb token stays reserved.
    """
    markup.check_reserved(initial_text)
    markup.check_reserved(subsequent_text, allow_mask=True)
    emb_id = tokenizer.emb_id
    uo = tokenizer.encode(markup.user_open)
    uc = tokenizer.encode(markup.user_close)
    ao = tokenizer.encode(markup.assistant_open)
    img = tokenizer.encode(markup.image_placeholder)

    segments: list[tuple[list[int], int]] = []
    flags: list[bool] = []
    prefix_len = 0
    if image_id is not None and image_tokens > 0:
        prefix = uo + img + tokenizer.visual_ids(image_id, image_tokens) + uc
        segments.append((prefix, -1))
        flags.append(False)
        prefix_len = len(prefix)
    for turn, text in enumerate((initial_text, subsequent_text)):
        segments.append((uo + tokenizer.encode(text) + uc + ao, turn))
        flags.append(False)
        segments.append(([emb_id], turn))
        flags.append(True)
    return _pack(segments, flags, mode, prefix_len, emb_id)


def shuffle_turns(sample: MultiTurnSample, seed: int) -> MultiTurnSample:
    """Seeded uniform permutation of a sample's turn pairs."""
    perm = np.random.default_rng(seed).permutation(len(sample.pairs))
    return MultiTurnSample(
        image_id=sample.image_id,
        image_tokens=sample.image_tokens,
        pairs=tuple(sample.pairs[i] for i in perm),
    )


def _mask_indices(word_count: int, count: int, seed: int) -> set[int]:
    """Uniform without-replacement index sample: rank words by a seeded hash
    and take the smallest keys.  Hash-based so it is reproducible across
    languages and runtimes.
    """
    keys = []
    for i in range(word_count):
        digest = hashlib.sha256(f"{seed}:{i}".encode("utf-8")).digest()
        keys.append((int.from_bytes(digest[:8], "big"), i))
    keys.sort()
    return {i for _, i in keys[:count]}


def mask_words(text: str, ratio: float, seed: int, mask_token: str) -> str:
    """Replace floor(ratio * word_count) distinct words with the mask token.

    Words are split on single spaces; unmasked words and word order are
    preserved verbatim.
    """
    if not (0.0 <= ratio <= 1.0):
        raise ValidationError("ratio must be in [0, 1]")
    if text == "":
        return text
    words = text.split(" ")
    count = math.floor(ratio * len(words))
    masked = _mask_indices(len(words), count, seed)
    return " ".join(mask_token if i in masked else w for i, w in enumerate(words))


@dataclass(frozen=True)
class AdaptedPair:
    """Initial and subsequent-turn texts for both sides of an adapted pair."""

    query_initial: str
    query_subsequent: str
    target_initial: str
    target_subsequent: str


def build_adapted_pair(
    query: str,
    target: str,
    cfg: PromptConfig,
    markup: ChatMarkup,
    seed: int,
) -> AdaptedPair:
    """Build the augmented dialogue texts for a single query/target pair.

    Any image content in the counterpart must already be caption text; this
    function only sees strings.  Under the reconstruction variant the
    subsequent turn is (pi1, masked counterpart, pi2); rephrasing swaps in a
    fixed rephrase request; self_reconstruction masks the side's own initial
    text; no_guidance keeps the masked counterpart but drops the
    reconstruction instruction from the closing request.
    """
    markup.check_reserved(query)
    markup.check_reserved(target)
    variant = cfg.template_variant

    def subsequent(own: str, counterpart: str) -> str:
        if variant is TemplateVariant.REPHRASING:
            return REPHRASE_REQUEST
        source = own if variant is TemplateVariant.SELF_RECONSTRUCTION else counterpart
        masked = mask_words(source, cfg.mask_ratio, seed, markup.mask_token)
        closing = (
            cfg.plain_request if variant is TemplateVariant.NO_GUIDANCE else cfg.pi2
        )
        return f"{cfg.pi1}\n{masked}\n{closing}"

    return AdaptedPair(
        query_initial=query,
        query_subsequent=subsequent(query, target),
        target_initial=target,
        target_subsequent=subsequent(target, query),
    )


def load_keyvalue_config(path: str) -> dict[str, str]:
    """Read a UTF-8 `key = value` config file; '#' lines are comments."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def markup_from_config(kv: dict[str, str]) -> ChatMarkup:
    fields = {
        k: kv[k]
        for k in (
            "user_open",
            "user_close",
            "assistant_open",
            "assistant_close",
            "emb_token",
            "mask_token",
            "image_placeholder",
        )
        if k in kv
    }
    return ChatMarkup(**fields)


def prompts_from_config(kv: dict[str, str]) -> PromptConfig:
    kwargs = {}
    if "pi1" in kv:
        kwargs["pi1"] = kv["pi1"]
    if "pi2" in kv:
        kwargs["pi2"] = kv["pi2"]
    if "plain_request" in kv:
        kwargs["plain_request"] = kv["plain_request"]
    if "mask_ratio" in kv:
        kwargs["mask_ratio"] = float(kv["mask_ratio"])
    if "template_variant" in kv:
        kwargs["template_variant"] = TemplateVariant(kv["template_variant"])
    return PromptConfig(**kwargs)
