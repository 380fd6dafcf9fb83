"""Caption-corpus retrieval by string matching, ranked by embedding similarity.

Matching is deliberately dumb: a record matches a class when the class name
appears in the caption as a whole-word token sequence, case-insensitively.
Multi-word names must appear contiguously. "cat" never matches "category",
but it happily matches "a cat and a dog" (and so does "dog": records may
match several classes and are retrieved independently for each).

Within a class, candidates are ranked by cosine similarity between the
caption embedding and the class anchor prompt, ties broken by corpus order,
then truncated to the per-class cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import tokenize


class CorpusError(ValueError):
    """Malformed corpus or retrieved-set file; message carries the line number."""


@dataclass(frozen=True)
class CorpusRecord:
    id: str
    caption: str
    payload_ref: str


class Corpus:
    """An ordered caption collection with an optional payload-vector table."""

    def __init__(self, records, payloads=None):
        self.records = list(records)
        seen = set()
        for rec in self.records:
            if rec.id in seen:
                raise CorpusError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)
        self.payloads = dict(payloads) if payloads is not None else None
        self._tokens = [tuple(tokenize(rec.caption)) for rec in self.records]

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def tokens(self, index: int):
        return self._tokens[index]

    def payload_vector(self, payload_ref: str) -> np.ndarray:
        if self.payloads is None:
            raise CorpusError("corpus has no payload table")
        try:
            return self.payloads[payload_ref]
        except KeyError:
            raise CorpusError(f"unknown payload ref {payload_ref!r}") from None


def _contains_subsequence(haystack: tuple, needle: tuple) -> bool:
    if not needle or len(needle) > len(haystack):
        return False
    first = needle[0]
    span = len(needle)
    for i, tok in enumerate(haystack[:len(haystack) - span + 1]):
        if tok == first and haystack[i:i + span] == needle:
            return True
    return False


def match_class(corpus: Corpus, class_name: str, synonyms=()) -> list[CorpusRecord]:
    """Records whose caption contains the class name (or a synonym) whole-word.

    Results keep corpus order. Synonyms widen the match but never change the
    class the record is assigned to.
    """
    needles = [tuple(tokenize(class_name))]
    needles += [tuple(tokenize(s)) for s in synonyms]
    needles = [n for n in needles if n]
    if not needles:
        raise ValueError(f"class name {class_name!r} has no tokens")
    out = []
    for i, rec in enumerate(corpus.records):
        toks = corpus.tokens(i)
        if any(_contains_subsequence(toks, n) for n in needles):
            out.append(rec)
    return out


def rank_and_cap(records, scores, cap):
    """Sort records by descending score (stable: ties keep input order), truncate.

    ``cap=None`` (or infinity) keeps everything; otherwise cap must be >= 1.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) != len(records):
        raise ValueError("scores and records must align")
    if np.isnan(scores).any():
        raise ValueError("scores contain NaN")
    if cap is not None and not math.isinf(cap):
        cap = int(cap)
        if cap < 1:
            raise ValueError(f"cap must be >= 1, got {cap}")
    else:
        cap = len(records)
    order = np.argsort(-scores, kind="stable")[:cap]
    return [(records[i], float(scores[i])) for i in order]


@dataclass(frozen=True)
class RetrievedItem:
    record: CorpusRecord
    class_name: str
    label: int
    score: float


@dataclass
class RetrievedDataset:
    """Per-class retrieval results, ordered by class then descending score."""

    items: list
    class_names: tuple
    cap: int | None = None
    per_class_counts: dict = field(init=False)

    def __post_init__(self):
        self.class_names = tuple(self.class_names)
        counts = {name: 0 for name in self.class_names}
        prev = None
        for it in self.items:
            if it.class_name not in counts:
                raise ValueError(f"item class {it.class_name!r} not in class list")
            if it.label != self.class_names.index(it.class_name):
                raise ValueError(f"label {it.label} disagrees with class {it.class_name!r}")
            if not math.isfinite(it.score):
                raise ValueError(f"non-finite score for record {it.record.id!r}")
            if prev is not None and prev.class_name == it.class_name and it.score > prev.score:
                raise ValueError(f"scores not descending within class {it.class_name!r}")
            counts[it.class_name] += 1
            prev = it
        if self.cap is not None:
            over = {n: c for n, c in counts.items() if c > self.cap}
            if over:
                raise ValueError(f"per-class cap {self.cap} exceeded: {over}")
        self.per_class_counts = counts

    def __len__(self):
        return len(self.items)

    def histogram(self) -> dict:
        """Per-class match counts, zeros included; shows the long tail."""
        return dict(self.per_class_counts)

    def to_arrays(self, corpus: Corpus):
        """Payload vectors + integer labels, ready to batch alongside ID data."""
        if not self.items:
            raise ValueError("retrieved set is empty")
        feats = np.stack([corpus.payload_vector(it.record.payload_ref)
                          for it in self.items])
        labels = np.array([it.label for it in self.items], dtype=np.int64)
        return feats, labels


def retrieve_all(corpus: Corpus, class_names, model, cap=500, synonyms=None,
                 templates=None) -> RetrievedDataset:
    """Match, rank, and cap the corpus for every class.

    The ranking anchor for a class is the embedding of its first prompt
    template; caption embeddings are scored against it by dot product (both
    are unit-norm, so this is cosine similarity). Classes with no matching
    caption simply contribute zero items.
    """
    from .model import DEFAULT_PROMPT_TEMPLATES
    templates = templates or DEFAULT_PROMPT_TEMPLATES
    synonyms = synonyms or {}
    class_names = list(class_names)
    anchor = model.encode_text([templates[0].format(n) for n in class_names])
    emb_cache: dict[str, np.ndarray] = {}
    items = []
    for label, name in enumerate(class_names):
        matches = match_class(corpus, name, synonyms.get(name, ()))
        if not matches:
            continue
        todo = [r for r in matches if r.id not in emb_cache]
        if todo:
            embs = model.encode_text([r.caption for r in todo])
            emb_cache.update({r.id: e for r, e in zip(todo, embs)})
        scores = [float(emb_cache[r.id] @ anchor[label]) for r in matches]
        for rec, score in rank_and_cap(matches, scores, cap):
            items.append(RetrievedItem(rec, name, label, score))
    eff_cap = None if cap is None or math.isinf(cap) else int(cap)
    return RetrievedDataset(items=items, class_names=tuple(class_names), cap=eff_cap)


# -- serialization ------------------------------------------------------------
#
# All floats are written with %.17g so that write(read(x)) is byte-identical
# and float64 values round-trip exactly.


def _split_line(line: str, n_cols: int, lineno: int, path):
    parts = line.rstrip("\n").split("\t")
    if len(parts) != n_cols:
        raise CorpusError(
            f"{path}:{lineno}: expected {n_cols} tab-separated columns, got {len(parts)}")
    return parts


def read_corpus_tsv(path, payloads_path=None) -> Corpus:
    """Load ``id<TAB>caption<TAB>payload_ref`` records, one per line, no header."""
    records = []
    ids = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rid, caption, ref = _split_line(line, 3, lineno, path)
            if not rid:
                raise CorpusError(f"{path}:{lineno}: empty record id")
            if rid in ids:
                raise CorpusError(f"{path}:{lineno}: duplicate record id {rid!r}")
            ids.add(rid)
            records.append(CorpusRecord(rid, caption, ref))
    payloads = read_payloads_tsv(payloads_path) if payloads_path else None
    return Corpus(records, payloads)


def write_corpus_tsv(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in corpus.records:
            fh.write(f"{rec.id}\t{rec.caption}\t{rec.payload_ref}\n")


def read_payloads_tsv(path) -> dict:
    payloads = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            ref, blob = _split_line(line, 2, lineno, path)
            if ref in payloads:
                raise CorpusError(f"{path}:{lineno}: duplicate payload ref {ref!r}")
            try:
                payloads[ref] = np.array([float(x) for x in blob.split(",")])
            except ValueError as exc:
                raise CorpusError(f"{path}:{lineno}: bad payload vector: {exc}") from None
    return payloads


def write_payloads_tsv(payloads: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ref, vec in payloads.items():
            blob = ",".join(f"{x:.17g}" for x in np.asarray(vec).ravel())
            fh.write(f"{ref}\t{blob}\n")


def write_retrieved_tsv(ds: RetrievedDataset, path) -> None:
    """Columns: id, caption, payload_ref, class, score (score as %.17g)."""
    with open(path, "w", encoding="utf-8") as fh:
        for it in ds.items:
            fh.write(f"{it.record.id}\t{it.record.caption}\t{it.record.payload_ref}"
                     f"\t{it.class_name}\t{it.score:.17g}\n")


def read_retrieved_tsv(path, class_names, cap=None) -> RetrievedDataset:
    class_names = tuple(class_names)
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rid, caption, ref, cls, score = _split_line(line, 5, lineno, path)
            if cls not in class_names:
                raise CorpusError(f"{path}:{lineno}: unknown class {cls!r}")
            try:
                score_f = float(score)
            except ValueError:
                raise CorpusError(f"{path}:{lineno}: bad score {score!r}") from None
            items.append(RetrievedItem(CorpusRecord(rid, caption, ref),
                                       cls, class_names.index(cls), score_f))
    return RetrievedDataset(items=items, class_names=class_names, cap=cap)
