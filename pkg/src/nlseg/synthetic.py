"""Pseudo-language text generator for tests, demos and the acceptance runs.

Words are random syllable strings drawn with Zipfian frequencies.  A
sentence has 5-12 words, a capitalised first word, optional internal
commas and semicolons, and ends in '.' with probability ``period_prob``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ONSETS = list("bdfgklmnprstvz") + ["ch", "sh", "tr", "st"]
VOWELS = list("aeiou") + ["ai", "ou"]


@dataclass
class SyntheticLanguage:
    seed: int = 0
    vocab_size: int = 400
    min_words: int = 5
    max_words: int = 12
    period_prob: float = 0.9
    comma_prob: float = 0.06
    semicolon_prob: float = 0.04
    zipf_a: float = 1.1

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        words = set()
        while len(words) < self.vocab_size:
            n = int(rng.integers(1, 4))
            words.add("".join(ONSETS[rng.integers(len(ONSETS))] + VOWELS[rng.integers(len(VOWELS))]
                              for _ in range(n)))
        self.words = sorted(words)
        ranks = np.arange(1, self.vocab_size + 1, dtype=np.float64)
        w = ranks ** -self.zipf_a
        self.word_probs = w / w.sum()

    def clauses(self, rng: np.random.Generator) -> list[str]:
        """One sentence as a list of clauses; every clause but the last ends in ';'."""
        n = int(rng.integers(self.min_words, self.max_words + 1))
        idx = rng.choice(self.vocab_size, size=n, p=self.word_probs)
        words = [self.words[i] for i in idx]
        words[0] = words[0].capitalize()
        clauses, cur = [], []
        for i, word in enumerate(words):
            cur.append(word)
            if i == n - 1:
                break
            r = rng.random()
            if r < self.semicolon_prob and i >= 1 and i <= n - 3:
                cur[-1] += ";"
                clauses.append(" ".join(cur))
                cur = []
            elif r < self.semicolon_prob + self.comma_prob:
                cur[-1] += ","
        last = " ".join(cur)
        if rng.random() < self.period_prob:
            last += "."
        clauses.append(last)
        return clauses

    def sentence(self, rng: np.random.Generator) -> str:
        return " ".join(self.clauses(rng))

    def sentences(self, n: int, rng: np.random.Generator, split_on_semicolon: bool = False) -> list[str]:
        """``n`` sentences; with ``split_on_semicolon`` every ';' also ends a
        sentence (the shifted segmentation convention)."""
        out: list[str] = []
        while len(out) < n:
            if split_on_semicolon:
                out.extend(self.clauses(rng))
            else:
                out.append(self.sentence(rng))
        return out[:n]

    def paragraphs(self, n: int, rng: np.random.Generator, min_sents: int = 1, max_sents: int = 5) -> list[str]:
        return [
            " ".join(self.sentence(rng) for _ in range(int(rng.integers(min_sents, max_sents + 1))))
            for _ in range(n)
        ]
