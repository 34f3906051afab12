"""Template corpus where every sentence praises one aspect and pans another.

Each sentence holds two clauses about two different aspect categories with
opposite polarities, so the text alone never determines the label.
"""
from __future__ import annotations

import numpy as np

from .data import (
    AnnotatedSentence,
    Polarity,
    aspect_names,
    build_hard_subset,
    build_vocab,
    encode_dataset,
    explode_instances,
    tokenize,
)

ASPECT_NOUNS = {
    "food": ("food", "pizza", "pasta", "sushi"),
    "service": ("service", "waiter", "staff"),
    "price": ("price", "bill", "cost"),
    "ambience": ("ambience", "decor", "music", "atmosphere"),
    "delivery": ("delivery", "driver", "courier"),
}
POSITIVE = ("great", "delicious", "excellent", "friendly", "lovely", "good", "amazing", "fantastic")
NEGATIVE = ("terrible", "awful", "rude", "bad", "slow", "horrible", "bland", "poor")
ADVERBS = ("", "really", "very", "quite", "so", "fairly", "pretty")
VERBS = ("was", "is")
JOINERS = ("but", "while", "although", ", but", "; however ,")


def _clause(rng: np.random.Generator, noun: str, adjective: str) -> str:
    adverb = ADVERBS[rng.integers(len(ADVERBS))]
    words = ["the", noun, VERBS[rng.integers(len(VERBS))], adverb, adjective]
    return " ".join(w for w in words if w)


def make_sentence(rng: np.random.Generator) -> AnnotatedSentence:
    cats = list(ASPECT_NOUNS)
    first, second = rng.choice(len(cats), size=2, replace=False)
    a1, a2 = cats[first], cats[second]
    n1 = ASPECT_NOUNS[a1][rng.integers(len(ASPECT_NOUNS[a1]))]
    n2 = ASPECT_NOUNS[a2][rng.integers(len(ASPECT_NOUNS[a2]))]
    p1 = Polarity.POSITIVE if rng.random() < 0.5 else Polarity.NEGATIVE
    p2 = Polarity.NEGATIVE if p1 is Polarity.POSITIVE else Polarity.POSITIVE

    def adj(p):
        pool = POSITIVE if p is Polarity.POSITIVE else NEGATIVE
        return pool[rng.integers(len(pool))]

    c1 = _clause(rng, n1, adj(p1))
    joiner = JOINERS[rng.integers(len(JOINERS))]
    c2 = _clause(rng, n2, adj(p2))
    text = f"{c1} {joiner} {c2} ."
    i1 = text.index(f" {n1} ") + 1
    i2 = text.index(f" {n2} ", len(c1)) + 1
    return AnnotatedSentence(
        text,
        tokenize(text),
        category_labels=[(a1, p1), (a2, p2)],
        term_labels=[(n1, (i1, i1 + len(n1)), p1), (n2, (i2, i2 + len(n2)), p2)],
    )


def make_corpus(n_sentences: int, seed: int = 0) -> list[AnnotatedSentence]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_sentences):
        s = make_sentence(rng)
        s.sid = f"syn-{seed}-{i}"
        out.append(s)
    return out


def lexicon() -> set[str]:
    words = {"the", ".", ",", ";", "however"} | set(VERBS) | set(POSITIVE) | set(NEGATIVE)
    words |= {a for a in ADVERBS if a} | {w for j in JOINERS for w in j.split()}
    for nouns in ASPECT_NOUNS.values():
        words |= set(nouns)
    return words


def synthetic_splits(n_train: int, n_test: int, seed: int = 0, task: str = "acsa", min_len: int = 5):
    """Encoded ``train``/``test``/``hard`` splits plus ``(vocab, aspects)``.

    Labels are positive/negative only, so encode with two classes. Every test
    sentence is mixed-polarity, hence ``hard`` equals ``test``.
    """
    train = explode_instances(make_corpus(n_train, seed), task)
    test = explode_instances(make_corpus(n_test, seed + 1_000_003), task)
    vocab = build_vocab(train)
    aspects = aspect_names(train) if task == "acsa" else None
    enc = lambda xs: encode_dataset(xs, vocab, min_len, aspects, n_classes=2)
    splits = {"train": enc(train), "test": enc(test), "hard": enc(build_hard_subset(test))}
    return splits, vocab, aspects
