"""Dataset readers for the three supported annotation shapes.

Every reader yields Candidate objects and counts lines it could not parse
instead of failing the whole job. Token-level kinds (event mentions,
NER-style tsv) mark spans over a token list; the pair kind carries two
spans per record.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

log = logging.getLogger(__name__)

OTHER = "Other"
KINDS = ("events", "ner", "pairs")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Candidate:
    """One featurizable unit: a span (or span pair) in a tokenized sentence."""

    id: str
    tokens: tuple[str, ...]
    span: tuple[int, int]  # token range, end exclusive
    tail_span: tuple[int, int] | None  # second span for pair candidates
    label: str  # positive type or OTHER


@dataclass
class ReadResult:
    candidates: list[Candidate]
    skipped: int


def _span_ok(span, n) -> bool:
    s, e = span
    return 0 <= s < e <= n


def read_events(path: str | Path, max_negatives: int | None = None) -> ReadResult:
    """JSONL event mentions: {"id", "tokens": [...], "mentions": [{"type","start","end"}]}.

    Unannotated single tokens become OTHER candidates, capped in file order.
    """
    out: list[Candidate] = []
    skipped = 0
    negatives_left = max_negatives if max_negatives is not None else float("inf")
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                sent_id = str(rec.get("id", lineno))
                tokens = tuple(str(t) for t in rec["tokens"])
                if not tokens:
                    raise KeyError("tokens")
                covered = set()
                mentions = []
                for m in rec.get("mentions", []):
                    span = (int(m["start"]), int(m["end"]))
                    if not _span_ok(span, len(tokens)):
                        raise ValueError(f"span {span} outside sentence")
                    mentions.append((str(m["type"]), span))
                    covered.update(range(*span))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError):
                skipped += 1
                continue
            for typ, span in mentions:
                out.append(Candidate(f"{sent_id}:{span[0]}-{span[1]}", tokens, span, None, typ))
            for i in range(len(tokens)):
                if i in covered or negatives_left <= 0:
                    continue
                out.append(Candidate(f"{sent_id}:{i}-{i + 1}", tokens, (i, i + 1), None, OTHER))
                negatives_left -= 1
    return ReadResult(out, skipped)


def read_ner(path: str | Path, max_negatives: int | None = None) -> ReadResult:
    """Token-per-line tsv with blank-line sentence breaks; label O is unannotated.

    Maximal runs of one label form mentions, mirroring fine-grained NER
    releases that tag tokens directly.
    """
    sentences: list[tuple[list[str], list[str]]] = []
    tokens: list[str] = []
    labels: list[str] = []
    skipped = 0
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line.strip():
                if tokens:
                    sentences.append((tokens, labels))
                    tokens, labels = [], []
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0]:
                skipped += 1
                continue
            tokens.append(parts[0])
            labels.append(parts[1])
    if tokens:
        sentences.append((tokens, labels))

    out: list[Candidate] = []
    negatives_left = max_negatives if max_negatives is not None else float("inf")
    for sid, (toks, labs) in enumerate(sentences):
        toks_t = tuple(toks)
        i = 0
        while i < len(labs):
            if labs[i] == "O":
                if negatives_left > 0:
                    out.append(Candidate(f"s{sid}:{i}-{i + 1}", toks_t, (i, i + 1), None, OTHER))
                    negatives_left -= 1
                i += 1
                continue
            j = i + 1
            while j < len(labs) and labs[j] == labs[i]:
                j += 1
            out.append(Candidate(f"s{sid}:{i}-{j}", toks_t, (i, j), None, labs[i]))
            i = j
    return ReadResult(out, skipped)


def read_pairs(path: str | Path, max_negatives: int | None = None) -> ReadResult:
    """JSONL entity pairs with inclusive span ends and no_relation negatives."""
    out: list[Candidate] = []
    skipped = 0
    negatives_left = max_negatives if max_negatives is not None else float("inf")
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                rec_id = str(rec.get("id", lineno))
                tokens = tuple(str(t) for t in rec["token"])
                head = (int(rec["subj_start"]), int(rec["subj_end"]) + 1)
                tail = (int(rec["obj_start"]), int(rec["obj_end"]) + 1)
                if not (_span_ok(head, len(tokens)) and _span_ok(tail, len(tokens))):
                    raise ValueError("entity span outside sentence")
                relation = str(rec["relation"])
            except (KeyError, TypeError, ValueError, json.JSONDecodeError):
                skipped += 1
                continue
            label = OTHER if relation == "no_relation" else relation
            if label == OTHER:
                if negatives_left <= 0:
                    continue
                negatives_left -= 1
            out.append(Candidate(rec_id, tokens, head, tail, label))
    return ReadResult(out, skipped)


_READERS = {"events": read_events, "ner": read_ner, "pairs": read_pairs}


def read_dataset(path: str | Path, kind: str, max_negatives: int | None = None) -> ReadResult:
    if kind not in _READERS:
        raise DatasetError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")
    result = _READERS[kind](path, max_negatives)
    if result.skipped:
        log.warning("%s: skipped %d unparseable records", path, result.skipped)
    return result
