import gzip
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from mosaic.mining import (
    COUNT_MODE,
    RELATION_MODE,
    FrequencyTable,
    LlmEndpoint,
    RuleMatcher,
    llm_verify,
    load_rules,
    mine_corpus,
    sampling_hash,
    verified_table,
)

DATA = Path(__file__).parent / "data"
CORPUS = DATA / "miner_corpus.txt"

# Frozen hand tally of the 40-line fixture corpus.
EXPECTED_COUNTS = {"1": 2, "2": 3, "3": 2, "4": 1, "5": 1,
                   "6": 1, "7": 1, "8": 1, "9": 1, "10": 1}
EXPECTED_RELATIONS = {"right-of": 2, "left-of": 2, "above": 2, "below": 2,
                      "next-to": 5, "behind": 2, "in-front-of": 1}


@pytest.fixture(scope="module")
def matcher():
    return RuleMatcher()


# --- rule stage -----------------------------------------------------------------


@pytest.mark.parametrize("caption,expected", [
    ("two dogs playing in a park", [(2, "dogs")]),
    ("one red car parked outside", [(1, "car")]),
    ("three small boxes arrived", [(3, "boxes")]),
    ("four tall buildings at dusk", [(4, "buildings")]),
    ("two large ships in the harbor", [(2, "ships")]),
    ("one year ago, three small boxes arrived", [(3, "boxes")]),
])
def test_positive_count_exemplars(matcher, caption, expected):
    got = [(m.value, m.noun) for m in matcher.extract_count_mentions(caption)]
    assert got == expected


@pytest.mark.parametrize("caption", [
    "USB 3.0 cable and iPhone 5",
    "Price: 1 Credit",
    "$5 discount on all items",
    "USD 2 per piece",
    "built in 2019",
    "one year ago everything changed",
    "1st place trophy",
    "third grade classroom",
    "5 inches of snow",
    "10 pounds of flour",
    "3 meters long",
    "one idea worth sharing",
    "two reasons to smile",
    "4K resolution display",
])
def test_never_count_exemplars(matcher, caption):
    assert matcher.extract_count_mentions(caption) == []


@pytest.mark.parametrize("caption,expected", [
    ("the cat sits to the left of the sofa", {"left-of": 1}),
    ("a sunny beach", {}),
    ("box behind the chair, near the door", {"behind": 1, "next-to": 1}),
    ("a lamp on top of the table", {"above": 1}),
    ("keys hidden under a book", {"behind": 1}),
    ("a dog in front of the gate", {"in-front-of": 1}),
    ("a bench on side of the path", {"next-to": 1}),
])
def test_relation_exemplars(matcher, caption, expected):
    assert matcher.extract_relation_mentions(caption) == expected


def test_overlapping_phrases_in_one_class_count_once(matcher):
    # "the left" and "left of" overlap; one physical phrase, one count
    assert matcher.extract_relation_mentions("to the left of the box") == {"left-of": 1}


def test_count_mention_offset(matcher):
    mention = matcher.extract_count_mentions("I saw two dogs")[0]
    assert mention.offset == len("I saw ")
    assert mention.number_word == "two"


# --- corpus mining -----------------------------------------------------------------


def test_fixture_corpus_count_tally():
    table = mine_corpus(CORPUS, COUNT_MODE, sample_rate=1.0, seed=0)
    assert table.counts == EXPECTED_COUNTS
    assert table.total_lines == 40
    assert table.sampled_lines == 40
    assert table.skipped_lines == 0


def test_fixture_corpus_relation_tally():
    table = mine_corpus(CORPUS, RELATION_MODE, sample_rate=1.0, seed=0)
    assert table.counts == EXPECTED_RELATIONS


def test_mining_determinism():
    a = mine_corpus(CORPUS, COUNT_MODE, sample_rate=1.0, seed=3)
    b = mine_corpus(CORPUS, COUNT_MODE, sample_rate=1.0, seed=3)
    assert a == b


def test_shard_merge_equals_single_stream(tmp_path):
    lines = CORPUS.read_text(encoding="utf-8").splitlines()
    shard_a = tmp_path / "a.txt"
    shard_b = tmp_path / "b.txt"
    shard_a.write_text("\n".join(lines[:23]) + "\n", encoding="utf-8")
    shard_b.write_text("\n".join(lines[23:]) + "\n", encoding="utf-8")
    merged = mine_corpus(shard_a, COUNT_MODE, 1.0, 0).merge(
        mine_corpus(shard_b, COUNT_MODE, 1.0, 0))
    single = mine_corpus(CORPUS, COUNT_MODE, 1.0, 0)
    assert merged.counts == single.counts
    assert merged.total_lines == single.total_lines


def test_empty_stream(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_text("", encoding="utf-8")
    table = mine_corpus(path, COUNT_MODE, 1.0, 0)
    assert all(v == 0 for v in table.counts.values())
    assert table.total_lines == 0


def test_gzip_input(tmp_path):
    gz = tmp_path / "corpus.txt.gz"
    with gzip.open(gz, "wb") as f:
        f.write(CORPUS.read_bytes())
    assert mine_corpus(gz, COUNT_MODE, 1.0, 0).counts == EXPECTED_COUNTS


def test_unreadable_lines_counted_and_skipped(tmp_path):
    path = tmp_path / "bad.txt"
    with open(path, "wb") as f:
        f.write(b"two dogs outside\n")
        f.write(b"\xff\xfe broken bytes \xff\n")
        f.write(b"three cats inside\n")
    table = mine_corpus(path, COUNT_MODE, 1.0, 0)
    assert table.total_lines == 3
    assert table.skipped_lines == 1
    assert table.counts["2"] == 1 and table.counts["3"] == 1


def test_bernoulli_sampling_is_keyed_and_deterministic(tmp_path):
    assert sampling_hash(1, 5) == sampling_hash(1, 5)
    assert sampling_hash(1, 5) != sampling_hash(2, 5)
    half_a = mine_corpus(CORPUS, COUNT_MODE, 0.5, seed=11)
    half_b = mine_corpus(CORPUS, COUNT_MODE, 0.5, seed=11)
    assert half_a == half_b
    assert 0 < half_a.sampled_lines < 40


def test_sample_rate_bounds():
    with pytest.raises(ValueError):
        mine_corpus(CORPUS, COUNT_MODE, 0.0, 0)
    with pytest.raises(ValueError):
        mine_corpus(CORPUS, COUNT_MODE, 1.5, 0)


def test_rules_file_is_loadable_and_overridable(tmp_path, matcher):
    rules = load_rules()
    rules["relation_groups"] = {"left-of": ["left of"]}
    override = tmp_path / "rules.json"
    override.write_text(json.dumps(rules), encoding="utf-8")
    custom = RuleMatcher(load_rules(str(override)))
    assert custom.extract_relation_mentions("near the door") == {}
    assert custom.extract_relation_mentions("left of the door") == {"left-of": 1}


# --- LLM verification stage -----------------------------------------------------------


class _ScriptedHandler(BaseHTTPRequestHandler):
    script = {}  # caption substring -> list of behaviors, consumed left to right

    def log_message(self, *args):
        pass

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        caption = body["messages"][0]["content"].rsplit("Caption: ", 1)[1]
        behaviors = self.script.get(caption, ["ok"])
        behavior = behaviors.pop(0) if len(behaviors) > 1 else behaviors[0]
        if behavior == "error":
            self.send_response(500)
            self.end_headers()
            return
        if behavior == "malformed":
            content = "not json at all"
        else:
            matcher = RuleMatcher()
            mentions = matcher.extract_count_mentions(caption)
            content = json.dumps({"mentions": [
                {"number": m.value, "noun": m.noun} for m in mentions]})
        reply = {"choices": [{"message": {"content": content}}]}
        data = json.dumps(reply).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


@pytest.fixture()
def stub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _ScriptedHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()
    thread.join()


def _endpoint(server):
    return LlmEndpoint(url=f"http://127.0.0.1:{server.server_address[1]}/v1/chat",
                       model="stub", backoff=0.01, timeout=5.0)


def test_llm_verify_canned_response(stub_server):
    _ScriptedHandler.script = {}
    results = llm_verify(["two dogs playing"], COUNT_MODE, _endpoint(stub_server))
    assert results[0].verified
    assert results[0].counts == {"2": 1}


def test_llm_verify_http_failure_injection(stub_server):
    _ScriptedHandler.script = {"always broken": ["error"]}
    results = llm_verify(["always broken", "two dogs playing"], COUNT_MODE,
                         _endpoint(stub_server))
    assert not results[0].verified and results[0].error
    assert results[1].verified  # the run continues past failures


def test_llm_verify_malformed_reply_retries_once(stub_server):
    _ScriptedHandler.script = {
        "one malformed then fine": ["malformed", "ok"],
        "always malformed": ["malformed"],
    }
    results = llm_verify(["one malformed then fine", "always malformed"],
                         COUNT_MODE, _endpoint(stub_server))
    assert results[0].verified
    assert not results[1].verified


def test_llm_verified_split_matches_script(stub_server):
    _ScriptedHandler.script = {
        "bad line one": ["error"],
        "bad line two": ["malformed"],
    }
    captions = ["two dogs playing", "bad line one", "three cats here", "bad line two"]
    results = llm_verify(captions, COUNT_MODE, _endpoint(stub_server))
    assert [r.verified for r in results] == [True, False, True, False]
    table = verified_table(results, COUNT_MODE)
    assert table.counts["2"] == 1 and table.counts["3"] == 1
    assert sum(table.counts.values()) == 2


def test_verified_table_merges_counts():
    results = [
        type("V", (), {"verified": True, "counts": {"2": 2}})(),
        type("V", (), {"verified": False, "counts": {"3": 9}})(),
    ]
    table = verified_table(results, COUNT_MODE)
    assert table.counts["2"] == 2
    assert table.counts["3"] == 0
