"""SemEval ABSA data: XML parsing, per-aspect instances, hard subsets, the
Restaurant-Large merge, vocabularies, embeddings and the JSON-lines format."""
from __future__ import annotations

import json
import logging
import re
import xml.etree.ElementTree as ET
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class Polarity(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    NEUTRAL = "neutral"
    CONFLICT = "conflict"


# class index order used everywhere
POLARITIES = tuple(Polarity)

LARGE_ASPECTS = ("restaurant", "food", "drinks", "ambience", "service", "price", "misc", "location")

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase, split punctuation off as standalone tokens, split on whitespace."""
    return _TOKEN_RE.findall(text.lower())


class SemEvalParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line, self.column = line, column
        where = f" at line {line}, column {column}" if line is not None else ""
        super().__init__(f"{message}{where}")


@dataclass
class AnnotatedSentence:
    text: str
    tokens: list[str]
    category_labels: list[tuple[str, Polarity]] = field(default_factory=list)
    term_labels: list[tuple[str, tuple[int, int], Polarity]] = field(default_factory=list)
    sid: str | None = None


@dataclass
class LabeledInstance:
    tokens: list[str]
    aspect: str | list[str]  # category name (ACSA) or term tokens (ATSA)
    polarity: Polarity
    source_text: str

    def to_json(self) -> dict:
        return {
            "tokens": self.tokens,
            "aspect": self.aspect,
            "polarity": self.polarity.value,
            "source_text": self.source_text,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LabeledInstance":
        return cls(list(obj["tokens"]), obj["aspect"], Polarity(obj["polarity"]), obj["source_text"])


def _polarity(value: str | None) -> Polarity:
    if value is None:
        raise ValueError("missing polarity attribute")
    try:
        return Polarity(value.strip().lower())
    except ValueError:
        raise ValueError(f"unknown polarity {value!r}") from None


def _parse_root(data: bytes | str) -> ET.Element:
    if isinstance(data, str):
        data = data.encode("utf-8")
    try:
        return ET.fromstring(data)
    except ET.ParseError as exc:
        line, col = exc.position
        raise SemEvalParseError(f"malformed XML: {exc}", line, col) from exc


def parse_semeval_xml(data: bytes | str, task: str, schema: str = "2014", errors: list | None = None):
    """Parse a SemEval ABSA file into :class:`AnnotatedSentence` objects.

    ``schema`` is ``"2014"`` (aspectTerms / aspectCategories) or ``"2015"``
    (the Opinions schema shared by 2015 and 2016). Sentences with a missing or
    unknown polarity are dropped and described in ``errors`` if given.
    """
    task = task.lower()
    if task not in ("acsa", "atsa"):
        raise ValueError(f"task must be acsa or atsa, got {task!r}")
    if str(schema) not in ("2014", "2015", "2016"):
        raise ValueError(f"schema must be 2014 or 2015, got {schema!r}")
    root = _parse_root(data)
    out = []
    for sent in root.iter("sentence"):
        sid = sent.get("id")
        text_el = sent.find("text")
        text = text_el.text if text_el is not None and text_el.text is not None else ""
        try:
            if str(schema) == "2014":
                cats, terms = _labels_2014(sent, text)
            else:
                cats, terms = _labels_2015(sent, text)
        except ValueError as exc:
            msg = f"sentence {sid}: {exc}"
            if errors is None:
                logger.warning(msg)
            else:
                errors.append(msg)
            continue
        out.append(
            AnnotatedSentence(
                text,
                tokenize(text),
                cats if task == "acsa" else [],
                terms if task == "atsa" else [],
                sid,
            )
        )
    return out


def _span(text: str, start, end, term: str) -> tuple[int, int]:
    span = (int(start), int(end))
    if not 0 <= span[0] <= span[1] <= len(text):
        raise ValueError(f"span {span} outside text of length {len(text)}")
    if text[span[0] : span[1]] != term:
        logger.warning("span %s selects %r, not %r", span, text[span[0] : span[1]], term)
    return span


def _labels_2014(sent: ET.Element, text: str):
    cats = [(c.get("category"), _polarity(c.get("polarity"))) for c in sent.iter("aspectCategory")]
    terms = []
    for t in sent.iter("aspectTerm"):
        term = t.get("term")
        terms.append((term, _span(text, t.get("from"), t.get("to"), term), _polarity(t.get("polarity"))))
    return cats, terms


def _labels_2015(sent: ET.Element, text: str):
    cats, terms = [], []
    for op in sent.iter("Opinion"):
        pol = _polarity(op.get("polarity"))
        if op.get("category") is not None:
            cats.append((op.get("category"), pol))
        target = op.get("target")
        if target is not None and target != "NULL":
            terms.append((target, _span(text, op.get("from"), op.get("to"), target), pol))
    return cats, terms


def to_semeval_xml(sentences: Sequence[AnnotatedSentence], schema: str = "2014") -> bytes:
    """Inverse of :func:`parse_semeval_xml` (up to attribute order and whitespace)."""
    if str(schema) == "2014":
        root = ET.Element("sentences")
        for i, s in enumerate(sentences):
            el = ET.SubElement(root, "sentence", id=s.sid or str(i))
            ET.SubElement(el, "text").text = s.text
            if s.term_labels:
                terms = ET.SubElement(el, "aspectTerms")
                for term, (a, b), pol in s.term_labels:
                    ET.SubElement(terms, "aspectTerm", term=term, polarity=pol.value, **{"from": str(a), "to": str(b)})
            if s.category_labels:
                cats = ET.SubElement(el, "aspectCategories")
                for cat, pol in s.category_labels:
                    ET.SubElement(cats, "aspectCategory", category=cat, polarity=pol.value)
    else:
        root = ET.Element("Reviews")
        review = ET.SubElement(ET.SubElement(root, "Review", rid="0"), "sentences")
        for i, s in enumerate(sentences):
            el = ET.SubElement(review, "sentence", id=s.sid or str(i))
            ET.SubElement(el, "text").text = s.text
            ops = ET.SubElement(el, "Opinions")
            for cat, pol in s.category_labels:
                ET.SubElement(ops, "Opinion", target="NULL", category=cat, polarity=pol.value, **{"from": "0", "to": "0"})
            for term, (a, b), pol in s.term_labels:
                ET.SubElement(ops, "Opinion", target=term, polarity=pol.value, **{"from": str(a), "to": str(b)})
    return ET.tostring(root, encoding="utf-8")


def explode_instances(sentences: Iterable[AnnotatedSentence], task: str) -> list[LabeledInstance]:
    """One instance per (sentence, aspect annotation), in document order."""
    out = []
    for s in sentences:
        if task == "acsa":
            for cat, pol in s.category_labels:
                out.append(LabeledInstance(list(s.tokens), cat, pol, s.text))
        else:
            for term, _, pol in s.term_labels:
                out.append(LabeledInstance(list(s.tokens), tokenize(term), pol, s.text))
    return out


def build_hard_subset(instances: Sequence[LabeledInstance]) -> list[LabeledInstance]:
    """Instances whose source sentence carries at least two distinct polarities."""
    seen = defaultdict(set)
    for inst in instances:
        seen[inst.source_text].add(inst.polarity)
    return [inst for inst in instances if len(seen[inst.source_text]) >= 2]


def majority_polarity(polarities: Iterable[Polarity]) -> Polarity:
    """Positive if #positive > #negative, negative if fewer, otherwise neutral."""
    counts = Counter(polarities)
    p = counts[Polarity.POSITIVE] - counts[Polarity.NEGATIVE]
    if p > 0:
        return Polarity.POSITIVE
    if p < 0:
        return Polarity.NEGATIVE
    return Polarity.NEUTRAL


_CATEGORY_2014 = {"anecdotes/miscellaneous": "misc"}


def large_category(raw: str) -> str | None:
    """Map a 2014 category or a 2015/16 ``ENTITY#ATTRIBUTE`` label onto the eight
    Restaurant-Large aspects; ``None`` when it has no counterpart."""
    raw = raw.strip().lower()
    if "#" not in raw:
        name = _CATEGORY_2014.get(raw, raw)
        return name if name in LARGE_ASPECTS else None
    entity, attribute = raw.split("#", 1)
    if attribute == "prices":
        return "price"
    if entity == "restaurant":
        return "misc" if attribute == "miscellaneous" else "restaurant"
    return entity if entity in LARGE_ASPECTS else None


def merge_restaurant_large(d2014, d2015, d2016, warnings: list | None = None) -> list[AnnotatedSentence]:
    """Merge three ACSA restaurant datasets into one eight-aspect, three-class set.

    2014 conflict labels become neutral. In 2015/2016 each (sentence, category)
    group is collapsed by :func:`majority_polarity`. Exact duplicate
    (text, category, polarity) triples are kept once.
    """
    warnings = [] if warnings is None else warnings
    triples: dict[tuple[str, str, Polarity], None] = {}
    tokens: dict[str, list[str]] = {}

    def mapped(s: AnnotatedSentence, raw: str):
        name = large_category(raw)
        if name is None:
            warnings.append(f"unknown category {raw!r} in sentence {s.sid!r}; dropped")
        return name

    for s in d2014:
        tokens.setdefault(s.text, s.tokens)
        for raw, pol in s.category_labels:
            name = mapped(s, raw)
            if name is not None:
                pol = Polarity.NEUTRAL if pol is Polarity.CONFLICT else pol
                triples.setdefault((s.text, name, pol), None)
    for dataset in (d2015, d2016):
        for s in dataset:
            tokens.setdefault(s.text, s.tokens)
            groups: dict[str, list[Polarity]] = {}
            for raw, pol in s.category_labels:
                name = mapped(s, raw)
                if name is not None:
                    groups.setdefault(name, []).append(pol)
            for name, pols in groups.items():
                triples.setdefault((s.text, name, majority_polarity(pols)), None)

    merged: dict[str, AnnotatedSentence] = {}
    for text, name, pol in triples:
        if text not in merged:
            merged[text] = AnnotatedSentence(text, list(tokens[text]), sid=str(len(merged)))
        merged[text].category_labels.append((name, pol))
    return list(merged.values())


class Vocabulary:
    def __init__(self, itos: Sequence[str]):
        if list(itos[:2]) != [PAD, UNK]:
            raise ValueError("vocabulary must start with <pad>, <unk>")
        self.itos = list(itos)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int], strip_pad: bool = True) -> list[str]:
        return [self.itos[i] for i in ids if not (strip_pad and i == PAD_ID)]


def build_vocab(instances: Iterable[LabeledInstance], min_count: int = 1) -> Vocabulary:
    """Ids from 2 upward, ordered by descending count then lexicographically."""
    counts: Counter = Counter()
    for inst in instances:
        counts.update(inst.tokens)
        if isinstance(inst.aspect, list):
            counts.update(inst.aspect)
    ranked = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary([PAD, UNK] + ranked)


@dataclass
class EmbeddingTable:
    matrix: np.ndarray
    found: int
    skipped_lines: int


def load_embeddings(path, vocab: Vocabulary, dim: int = 300, seed: int = 0) -> EmbeddingTable:
    """Read ``token f1 ... fD`` lines; vocabulary words missing from the file are
    drawn from U(-0.25, 0.25). The pad row is zeroed last."""
    rng = np.random.default_rng(seed)
    matrix = rng.uniform(-0.25, 0.25, size=(len(vocab), dim))
    found, skipped = set(), 0
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip().split(" ")
            if lineno == 1 and len(parts) - 1 != dim:
                raise ValueError(f"{path}: expected {dim} values per line, got {len(parts) - 1}")
            if len(parts) - 1 < dim:
                skipped += 1
                continue
            # a few GloVe entries contain spaces inside the token
            token, values = " ".join(parts[:-dim]), parts[-dim:]
            idx = vocab.stoi.get(token)
            if idx is None or idx in found:
                continue
            try:
                matrix[idx] = np.array(values, dtype=np.float64)
            except ValueError:
                skipped += 1
                continue
            found.add(idx)
    if skipped:
        logger.warning("%s: skipped %d malformed lines", path, skipped)
    matrix[PAD_ID] = 0.0
    return EmbeddingTable(matrix, len(found), skipped)


def pad_ids(ids: Sequence[int], min_len: int) -> list[int]:
    ids = list(ids)
    return ids + [PAD_ID] * max(0, min_len - len(ids))


def encode_and_pad(instance: LabeledInstance | Sequence[str], vocab: Vocabulary, min_len: int) -> list[int]:
    tokens = instance.tokens if isinstance(instance, LabeledInstance) else instance
    return pad_ids(vocab.encode(tokens), min_len)


def dataset_stats(instances: Iterable[LabeledInstance]) -> dict[str, int]:
    counts = {p.value: 0 for p in POLARITIES}
    for inst in instances:
        counts[inst.polarity.value] += 1
    return counts


def aspect_names(instances: Iterable[LabeledInstance]) -> list[str]:
    return sorted({inst.aspect for inst in instances if isinstance(inst.aspect, str)})


class Example(NamedTuple):
    """An instance encoded for the model."""

    token_ids: np.ndarray
    aspect: int | np.ndarray | None
    label: int


def encode_dataset(
    instances: Sequence[LabeledInstance],
    vocab: Vocabulary,
    min_len: int,
    aspects: Sequence[str] | None = None,
    term_min_len: int = 3,
    n_classes: int = 4,
) -> list[Example]:
    classes = POLARITIES[:n_classes]
    aspect_index = {a: i for i, a in enumerate(aspects or [])}
    out = []
    for inst in instances:
        if inst.polarity not in classes:
            raise ValueError(f"polarity {inst.polarity.value} not among the {n_classes} configured classes")
        if isinstance(inst.aspect, str):
            if inst.aspect not in aspect_index:
                raise KeyError(f"unknown aspect {inst.aspect!r}; known: {sorted(aspect_index)}")
            aspect = aspect_index[inst.aspect]
        else:
            aspect = np.array(encode_and_pad(inst.aspect, vocab, term_min_len), dtype=np.int64)
        ids = np.array(encode_and_pad(inst, vocab, min_len), dtype=np.int64)
        out.append(Example(ids, aspect, classes.index(inst.polarity)))
    return out


def write_jsonl(path, instances: Iterable[LabeledInstance]) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
    return path


def read_jsonl(path) -> list[LabeledInstance]:
    with open(path, encoding="utf-8") as fh:
        return [LabeledInstance.from_json(json.loads(line)) for line in fh if line.strip()]
