"""Streaming caption-corpus mining for count phrases and spatial-relation
phrases, with an optional LLM verification pass.

The rule stage is a deliberately simple high-recall filter: lowercase
tokenization, a small lexicon battery for the NEVER-count contexts, and
exact phrase-group matching for relations. Precision filtering belongs to
the LLM stage.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import os
import re
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import IO, Iterable, Optional

import requests

COUNT_MODE = "count"
RELATION_MODE = "relation"

_TOKEN_RE = re.compile(r"[a-z0-9]+|[$€£]")
_VERSION_RE = re.compile(r"\d+\.\d+")


def load_rules(path: Optional[str] = None) -> dict:
    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    return json.loads(
        resources.files("mosaic").joinpath("data/mining_rules.json").read_text("utf-8"))


@dataclass(frozen=True)
class CountMention:
    number_word: str
    value: int
    noun: str
    offset: int  # character offset of the number token


@dataclass
class FrequencyTable:
    mode: str
    counts: dict[str, int]
    total_lines: int = 0
    sampled_lines: int = 0
    skipped_lines: int = 0

    def merge(self, other: "FrequencyTable") -> "FrequencyTable":
        if other.mode != self.mode:
            raise ValueError("cannot merge tables of different modes")
        merged = dict(self.counts)
        for k, v in other.counts.items():
            merged[k] = merged.get(k, 0) + v
        return FrequencyTable(
            mode=self.mode,
            counts=merged,
            total_lines=self.total_lines + other.total_lines,
            sampled_lines=self.sampled_lines + other.sampled_lines,
            skipped_lines=self.skipped_lines + other.skipped_lines,
        )


def _classes_for_mode(mode: str, rules: dict) -> list[str]:
    if mode == COUNT_MODE:
        return [str(v) for v in range(1, 11)]
    if mode == RELATION_MODE:
        return list(rules["relation_groups"])
    raise ValueError(f"unknown mode {mode!r}")


class RuleMatcher:
    """Compiled rule-stage matcher for one rules dictionary."""

    def __init__(self, rules: Optional[dict] = None):
        self.rules = rules or load_rules()
        r = self.rules
        self.number_words = {k: int(v) for k, v in r["number_words"].items()}
        self.stopwords = set(r["stopwords"])
        self.adjectives = set(r["adjectives"])
        self.units = set(r["units"]) | set(r["time_words"])
        self.currency_before = set(r["currency_before"])
        self.currency_after = set(r["currency_after"])
        self.tech = set(r["tech_words"])
        self.abstract = set(r["abstract_nouns"])
        self.compound_prefixes = set(r["compound_number_prefixes"])
        self.group_patterns = {
            cls: [re.compile(r"\b" + re.escape(p).replace(r"\ ", r"\s+") + r"\b")
                  for p in phrases]
            for cls, phrases in r["relation_groups"].items()
        }

    def _number_value(self, token: str) -> Optional[int]:
        if token in self.number_words:
            return self.number_words[token]
        if token.isdigit():
            value = int(token)
            if 1 <= value <= 10 and len(token) <= 2:
                return value
        return None

    def extract_count_mentions(self, caption: str) -> list[CountMention]:
        text = caption.lower()
        tokens = [(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]
        version_spans = [m.span() for m in _VERSION_RE.finditer(text)]
        mentions = []
        for i, (tok, start, end) in enumerate(tokens):
            value = self._number_value(tok)
            if value is None:
                continue
            if any(s <= start and end <= e for s, e in version_spans):
                continue  # decimal version / spec pattern
            prev = tokens[i - 1][0] if i > 0 else None
            if prev in self.currency_before or prev in self.tech \
                    or prev in self.compound_prefixes:
                continue
            nxt = tokens[i + 1][0] if i + 1 < len(tokens) else None
            if nxt in self.currency_after:
                continue
            noun = self._find_noun(tokens, i)
            if noun is not None:
                mentions.append(CountMention(number_word=tok, value=value,
                                             noun=noun, offset=start))
        return mentions

    def _find_noun(self, tokens, i) -> Optional[str]:
        # First candidate within two tokens that is not filler; a candidate
        # from an excluded category poisons the whole mention.
        for j in (i + 1, i + 2):
            if j >= len(tokens):
                return None
            tok = tokens[j][0]
            if tok in self.stopwords or tok in self.adjectives:
                continue
            if tok in self.units or tok in self.abstract or tok in self.currency_after \
                    or tok in self.tech or self._number_value(tok) is not None:
                return None
            if tok.isalpha():
                return tok
            return None
        return None

    def extract_relation_mentions(self, caption: str) -> dict[str, int]:
        """Non-overlapping exact phrase-group matches per relation class."""
        text = caption.lower()
        out: dict[str, int] = {}
        for cls, patterns in self.group_patterns.items():
            spans = []
            for pat in patterns:
                spans.extend(m.span() for m in pat.finditer(text))
            spans.sort(key=lambda s: (s[0], -(s[1] - s[0])))
            count, last_end = 0, -1
            for s, e in spans:
                if s >= last_end:
                    count += 1
                    last_end = e
            if count:
                out[cls] = count
        return out


def sampling_hash(seed: int, line_number: int) -> float:
    """Deterministic per-line uniform variate in [0, 1)."""
    digest = hashlib.blake2b(struct.pack("<qq", seed, line_number),
                             digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2 ** 64


def _open_stream(path) -> IO[bytes]:
    f = open(path, "rb")
    magic = f.read(2)
    f.seek(0)
    if magic == b"\x1f\x8b":
        return gzip.open(f)
    return f


def mine_corpus(path, mode: str, sample_rate: float = 1.0, seed: int = 0,
                matcher: Optional[RuleMatcher] = None) -> FrequencyTable:
    """Single-pass frequency mining with deterministic Bernoulli line sampling."""
    if not 0 < sample_rate <= 1:
        raise ValueError("sample_rate must be in (0, 1]")
    matcher = matcher or RuleMatcher()
    counts = {cls: 0 for cls in _classes_for_mode(mode, matcher.rules)}
    total = sampled = skipped = 0
    with _open_stream(path) as stream:
        for line_number, raw in enumerate(stream):
            total += 1
            if sampling_hash(seed, line_number) >= sample_rate:
                continue
            sampled += 1
            try:
                caption = raw.decode("utf-8").strip()
            except UnicodeDecodeError:
                skipped += 1
                continue
            if mode == COUNT_MODE:
                for mention in matcher.extract_count_mentions(caption):
                    counts[str(mention.value)] += 1
            else:
                for cls, c in matcher.extract_relation_mentions(caption).items():
                    counts[cls] += c
    return FrequencyTable(mode=mode, counts=counts, total_lines=total,
                          sampled_lines=sampled, skipped_lines=skipped)


# --- LLM verification stage ---------------------------------------------------


@dataclass(frozen=True)
class LlmEndpoint:
    url: str
    model: str
    key_env: Optional[str] = None
    timeout: float = 30.0
    max_attempts: int = 3
    backoff: float = 0.5
    max_in_flight: int = 4


@dataclass
class Verification:
    caption: str
    verified: bool
    counts: dict[str, int] = field(default_factory=dict)
    error: Optional[str] = None


def _post_chat(endpoint: LlmEndpoint, prompt: str, caption: str) -> str:
    headers = {"Content-Type": "application/json"}
    if endpoint.key_env:
        key = os.environ.get(endpoint.key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
    payload = {
        "model": endpoint.model,
        "messages": [{"role": "user", "content": f"{prompt}\n\nCaption: {caption}"}],
    }
    last_error = None
    for attempt in range(endpoint.max_attempts):
        try:
            resp = requests.post(endpoint.url, json=payload, headers=headers,
                                 timeout=endpoint.timeout)
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
            last_error = exc
            time.sleep(endpoint.backoff * 2 ** attempt)
    raise RuntimeError(f"endpoint failed after {endpoint.max_attempts} attempts: {last_error}")


def _parse_reply(mode: str, content: str) -> dict[str, int]:
    """The endpoint must answer with a JSON object: {"mentions": [...]} for
    count mode or {"counts": {class: n}} for relation mode."""
    data = json.loads(content)
    if mode == COUNT_MODE:
        mentions = data["mentions"]
        counts: dict[str, int] = {}
        for m in mentions:
            key = str(int(m["number"]))
            counts[key] = counts.get(key, 0) + 1
        return counts
    return {str(k): int(v) for k, v in data["counts"].items()}


def llm_verify(captions: Iterable[str], mode: str, endpoint: LlmEndpoint,
               matcher: Optional[RuleMatcher] = None) -> list[Verification]:
    """Verify rule-stage candidates against a chat-completion endpoint.

    Failures never abort the run: a candidate whose request or reply cannot
    be completed is reported unverified.
    """
    matcher = matcher or RuleMatcher()
    prompt = matcher.rules["count_prompt" if mode == COUNT_MODE else "relation_prompt"]

    def attempt(caption: str) -> Verification:
        content = _post_chat(endpoint, prompt, caption)
        return Verification(caption=caption, verified=True,
                            counts=_parse_reply(mode, content))

    def verify_one(caption: str) -> Verification:
        try:
            return attempt(caption)
        except RuntimeError as exc:
            return Verification(caption=caption, verified=False, error=str(exc))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            pass
        try:  # one retry on a malformed reply
            return attempt(caption)
        except RuntimeError as exc:
            return Verification(caption=caption, verified=False, error=str(exc))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            return Verification(caption=caption, verified=False, error="malformed reply")

    captions = list(captions)
    with ThreadPoolExecutor(max_workers=endpoint.max_in_flight) as pool:
        return list(pool.map(verify_one, captions))


def verified_table(verifications: Iterable[Verification], mode: str,
                   matcher: Optional[RuleMatcher] = None) -> FrequencyTable:
    """Aggregate verified counts; unverified candidates contribute nothing."""
    matcher = matcher or RuleMatcher()
    counts = {cls: 0 for cls in _classes_for_mode(mode, matcher.rules)}
    n = 0
    for v in verifications:
        n += 1
        if not v.verified:
            continue
        for cls, c in v.counts.items():
            if cls in counts:
                counts[cls] += c
    return FrequencyTable(mode=mode, counts=counts, total_lines=n, sampled_lines=n)
