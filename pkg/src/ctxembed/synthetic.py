"""Synthetic paraphrase corpora for desk-scale training and evaluation.

A *lexicon* holds concepts grouped into topics; each concept has several
synonymous pseudo-words. A text realizes a handful of concepts from one
topic, in random order, with random synonyms and filler words. Two
independent realizations of the same concept set are paraphrases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TrainingExample

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "gl", "kr", "pl", "st", "tr", "sn"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou"]
_CODAS = ["", "", "n", "r", "s", "l", "m"]

PARAPHRASE_INSTRUCTION = "Retrieve a paraphrase of the text."


@dataclass
class Lexicon:
    topics: list[list[list[str]]]  # topic -> concept -> synonyms
    fillers: list[str]

    @property
    def n_topics(self) -> int:
        return len(self.topics)


def _pseudo_words(rng: np.random.Generator, count: int) -> list[str]:
    seen: set[str] = set()
    out: list[str] = []
    while len(out) < count:
        n_syl = int(rng.integers(2, 4))
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    + _CODAS[rng.integers(len(_CODAS))] for _ in range(n_syl))
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def make_lexicon(n_topics: int = 8, concepts_per_topic: int = 16, synonyms: int = 2,
                 n_fillers: int = 24, seed: int = 0) -> Lexicon:
    rng = np.random.default_rng(seed)
    words = _pseudo_words(rng, n_topics * concepts_per_topic * synonyms + n_fillers)
    it = iter(words)
    topics = [[[next(it) for _ in range(synonyms)] for _ in range(concepts_per_topic)]
              for _ in range(n_topics)]
    return Lexicon(topics, [next(it) for _ in range(n_fillers)])


def realize(lex: Lexicon, topic: int, concepts, rng: np.random.Generator, n_fillers: int = 4) -> str:
    """One surface text for a concept set: shuffled synonyms plus fillers."""
    words = [lex.topics[topic][c][rng.integers(len(lex.topics[topic][c]))] for c in concepts]
    words += [lex.fillers[rng.integers(len(lex.fillers))] for _ in range(n_fillers)]
    rng.shuffle(words)
    return " ".join(words)


def sample_concepts(lex: Lexicon, rng: np.random.Generator, k: int = 4) -> tuple[int, list[int]]:
    topic = int(rng.integers(lex.n_topics))
    concepts = rng.choice(len(lex.topics[topic]), size=k, replace=False).tolist()
    return topic, concepts


def paraphrase_pairs(lex: Lexicon, n_pairs: int, seed: int = 0, concepts_per_text: int = 4,
                     n_fillers: int = 4, task: str = "paraphrase") -> list[TrainingExample]:
    """Query/positive paraphrase pairs; no hard negatives (in-batch negatives do the work)."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_pairs):
        topic, concepts = sample_concepts(lex, rng, concepts_per_text)
        out.append(TrainingExample(realize(lex, topic, concepts, rng, n_fillers),
                                   realize(lex, topic, concepts, rng, n_fillers), [], task))
    return out


def labeled_texts(lex: Lexicon, n: int, seed: int = 0, concepts_per_text: int = 4,
                  n_fillers: int = 4) -> tuple[list[str], list[int]]:
    """Texts labeled by topic (classification and clustering)."""
    rng = np.random.default_rng(seed)
    texts, labels = [], []
    for _ in range(n):
        topic, concepts = sample_concepts(lex, rng, concepts_per_text)
        texts.append(realize(lex, topic, concepts, rng, n_fillers))
        labels.append(topic)
    return texts, labels


def scored_pairs(lex: Lexicon, n: int, seed: int = 0, concepts_per_text: int = 4,
                 n_fillers: int = 4) -> list[tuple[str, str, float]]:
    """Pairs with a graded similarity: the number of shared concepts."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        topic, concepts = sample_concepts(lex, rng, concepts_per_text)
        shared = int(rng.integers(0, concepts_per_text + 1))
        pool = [c for c in range(len(lex.topics[topic])) if c not in concepts]
        other = concepts[:shared] + rng.choice(pool, size=concepts_per_text - shared, replace=False).tolist()
        out.append((realize(lex, topic, concepts, rng, n_fillers),
                    realize(lex, topic, other, rng, n_fillers), float(shared)))
    return out


def lexicon_corpus(lex: Lexicon, examples=()) -> list[str]:
    """Text for tokenizer training: every word, the example texts and one instruction per query."""
    words = [w for topic in lex.topics for concept in topic for w in concept] + lex.fillers
    texts = [" ".join(words)]
    for e in examples:
        texts.extend([PARAPHRASE_INSTRUCTION, e.query, e.positive, *e.hard_negatives])
    return texts
