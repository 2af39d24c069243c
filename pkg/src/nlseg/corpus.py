"""Corpus ingestion: paragraph normalization, sampling, punctuation inventory
and fixed-length training windows.

Text is handled as Python ``str``, so one index is one Unicode codepoint.
"""

from __future__ import annotations

import hashlib
import json
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

NEWLINE = "\n"

# Languages that do not put whitespace between sentences.
NO_WHITESPACE_LANGS = frozenset({"ja", "zh", "yue", "wuu", "my", "bo", "dz"})


@dataclass(frozen=True)
class LanguageProfile:
    lang_id: str
    uses_whitespace: bool = True
    ends_with_punct_ratio_cap: float = 0.10

    def __post_init__(self):
        if not self.lang_id:
            raise ValueError("lang_id must be non-empty")
        if not 0.0 <= self.ends_with_punct_ratio_cap <= 1.0:
            raise ValueError("ends_with_punct_ratio_cap must lie in [0, 1]")


def default_profile(lang_id: str) -> LanguageProfile:
    return LanguageProfile(lang_id, uses_whitespace=lang_id not in NO_WHITESPACE_LANGS)


@dataclass(frozen=True)
class Paragraph:
    text: str
    lang_id: str

    def __post_init__(self):
        if not self.text:
            raise ValueError("paragraph must be non-empty")
        if NEWLINE in self.text:
            raise ValueError("paragraph must not contain a newline")


class PunctuationInventory:
    """Ordered punctuation set with index 0 reserved for the ``none`` class."""

    def __init__(self, chars: Iterable[str]):
        chars = list(chars)
        for ch in chars:
            if len(ch) != 1:
                raise ValueError(f"inventory entries must be single codepoints, got {ch!r}")
        if NEWLINE in chars:
            raise ValueError("newline cannot be a punctuation class")
        if len(set(chars)) != len(chars):
            raise ValueError("duplicate characters in inventory")
        self.chars: tuple[str, ...] = tuple(chars)
        self._index = {ch: i + 1 for i, ch in enumerate(self.chars)}

    def __len__(self) -> int:
        return len(self.chars)

    def __contains__(self, ch) -> bool:
        return ch in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, PunctuationInventory) and self.chars == other.chars

    def __hash__(self):
        return hash(self.chars)

    def __repr__(self) -> str:
        return f"PunctuationInventory({''.join(self.chars)!r})"

    @property
    def num_classes(self) -> int:
        return len(self.chars) + 1

    def index(self, ch: str | None) -> int:
        """Class index of ``ch``; ``None`` is the ``none`` class (index 0)."""
        if ch is None:
            return 0
        try:
            return self._index[ch]
        except KeyError:
            raise KeyError(f"{ch!r} is not in the punctuation inventory") from None

    def char(self, idx: int) -> str | None:
        if idx == 0:
            return None
        return self.chars[idx - 1]

    def to_json(self) -> str:
        return json.dumps([ord(ch) for ch in self.chars])

    @classmethod
    def from_json(cls, s: str) -> "PunctuationInventory":
        return cls(chr(cp) for cp in json.loads(s))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "PunctuationInventory":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


@dataclass
class TrainingWindow:
    codepoints: np.ndarray  # int32, length L, right-padded with 0
    pad_len: int
    lang_id: str = ""

    def __post_init__(self):
        if not 0 <= self.pad_len < len(self.codepoints):
            raise ValueError("pad_len must satisfy 0 <= pad_len < L")

    @property
    def text(self) -> str:
        n = len(self.codepoints) - self.pad_len
        return "".join(map(chr, self.codepoints[:n]))


_NEWLINE_RUN = re.compile(r"\n{2,}")
_NEWLINE_SPACES = re.compile(r"\n *")


def normalize_text(raw: str, profile: LanguageProfile) -> str:
    """Collapse newline runs, strip outer newlines and, for whitespace
    languages, make every newline be followed by exactly one space."""
    text = _NEWLINE_RUN.sub(NEWLINE, raw).strip(NEWLINE)
    if profile.uses_whitespace:
        text = _NEWLINE_SPACES.sub("\n ", text)
    return text


def is_punctuation(ch: str) -> bool:
    return unicodedata.category(ch)[0] in "PS"


def ends_in_punctuation(text: str, inventory: PunctuationInventory) -> bool:
    return bool(text) and text[-1] in inventory


def sample_paragraphs(
    paragraphs: Sequence[Paragraph],
    inventory: PunctuationInventory,
    cap: float,
    rng_seed: int,
) -> list[Paragraph]:
    """Randomly drop paragraphs not ending in punctuation until at most a
    ``cap`` fraction of the output does not end in punctuation.

    Punctuation-ending paragraphs are always kept and order is preserved.
    """
    if not 0.0 <= cap <= 1.0:
        raise ValueError("cap must lie in [0, 1]")
    ending = [ends_in_punctuation(p.text, inventory) for p in paragraphs]
    n_punct = sum(ending)
    other = [i for i, e in enumerate(ending) if not e]
    if not other:
        return list(paragraphs)

    if cap >= 1.0:
        keep_other = len(other)
    elif n_punct == 0:
        keep_other = 1
    else:
        keep_other = min(len(other), int(np.ceil(cap * n_punct / (1.0 - cap))) + 1)
        while keep_other > 0 and keep_other / (n_punct + keep_other) > cap:
            keep_other -= 1

    rng = np.random.default_rng(rng_seed)
    kept = set(rng.choice(other, size=keep_other, replace=False).tolist()) if keep_other else set()
    return [p for i, p in enumerate(paragraphs) if ending[i] or i in kept]


def top_punctuation(text: str, k: int) -> list[str]:
    counts = Counter(ch for ch in text if ch != NEWLINE and is_punctuation(ch))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], ord(kv[0])))
    return [ch for ch, _ in ranked[:k]]


def build_punct_inventory(corpora: Mapping[str, str], k: int = 30) -> PunctuationInventory:
    """Union over languages of each language's ``k`` most frequent
    punctuation/symbol codepoints, ordered by (language order, rank)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    chars: list[str] = []
    seen = set()
    for text in corpora.values():
        for ch in top_punctuation(text, k):
            if ch not in seen:
                seen.add(ch)
                chars.append(ch)
    return PunctuationInventory(chars)


def make_training_windows(text: str, L: int = 512, lang_id: str = "") -> list[TrainingWindow]:
    if L < 2:
        raise ValueError("window length must be >= 2")
    windows = []
    for start in range(0, len(text), L):
        chunk = np.fromiter((ord(ch) for ch in text[start:start + L]), dtype=np.int32)
        pad = L - len(chunk)
        windows.append(TrainingWindow(np.pad(chunk, (0, pad)), pad, lang_id))
    return windows


# -- files ------------------------------------------------------------------


def read_paragraphs(path, lang_id: str) -> list[Paragraph]:
    """One paragraph per line; blank lines are ignored."""
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip()
            if line.strip():
                out.append(Paragraph(line, lang_id))
    return out


@dataclass
class CorpusManifest:
    profiles: list[LanguageProfile]
    paths: dict[str, Path] = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "CorpusManifest":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
            entries = data["languages"]
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ValueError(f"{path}: malformed corpus manifest ({e})") from e
        profiles, paths = [], {}
        for entry in entries:
            lang = entry["lang_id"]
            profiles.append(
                LanguageProfile(
                    lang,
                    uses_whitespace=bool(entry.get("uses_whitespace", True)),
                    ends_with_punct_ratio_cap=float(entry.get("ends_with_punct_ratio_cap", 0.10)),
                )
            )
            p = Path(entry.get("path", f"{lang}.txt"))
            paths[lang] = p if p.is_absolute() else path.parent / p
        return cls(profiles, paths)

    def read(self) -> dict[str, list[Paragraph]]:
        return {p.lang_id: read_paragraphs(self.paths[p.lang_id], p.lang_id) for p in self.profiles}

    def file_hashes(self) -> dict[str, str]:
        return {lang: sha256_file(p) for lang, p in self.paths.items()}


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()
