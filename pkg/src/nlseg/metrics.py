"""Boundary sets and character-level boundary F1."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable


class UndefinedRecallError(ValueError):
    """Raised when there are no gold boundaries to recall."""


@dataclass(frozen=True)
class BoundarySet:
    """Positions ``i`` such that a sentence boundary follows character ``i``."""

    indices: tuple[int, ...]
    text_len: int

    def __init__(self, indices: Iterable[int], text_len: int):
        idx = tuple(sorted({int(i) for i in indices}))
        if idx and (idx[0] < 0 or idx[-1] >= text_len):
            raise ValueError(f"boundary indices must lie in [0, {text_len - 1}]")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "text_len", int(text_len))

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, i) -> bool:
        return i in set(self.indices)

    def interior(self) -> set[int]:
        """Indices without the implicit end-of-text boundary."""
        return {i for i in self.indices if i != self.text_len - 1}


@dataclass(frozen=True)
class F1Report:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "F1Report":
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return cls(p, r, f, tp, fp, fn)

    def __add__(self, other: "F1Report") -> "F1Report":
        return F1Report.from_counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def boundary_counts(pred: BoundarySet, gold: BoundarySet) -> tuple[int, int, int]:
    if pred.text_len != gold.text_len:
        raise ValueError("pred and gold refer to texts of different length")
    p, g = pred.interior(), gold.interior()
    return len(p & g), len(p - g), len(g - p)


def boundary_f1(pred: BoundarySet, gold: BoundarySet) -> F1Report:
    tp, fp, fn = boundary_counts(pred, gold)
    if tp + fn == 0:
        raise UndefinedRecallError("gold has no boundaries (end of text excluded)")
    return F1Report.from_counts(tp, fp, fn)


def pooled_f1(pairs: Iterable[tuple[BoundarySet, BoundarySet]]) -> F1Report:
    """Micro-averaged report over ``(pred, gold)`` pairs."""
    tp = fp = fn = 0
    for pred, gold in pairs:
        a, b, c = boundary_counts(pred, gold)
        tp, fp, fn = tp + a, fp + b, fn + c
    if tp + fn == 0:
        raise UndefinedRecallError("gold has no boundaries (end of text excluded)")
    return F1Report.from_counts(tp, fp, fn)


@dataclass(frozen=True)
class GoldText:
    """A newline-free text with its gold boundaries."""

    text: str
    gold: BoundarySet
    lang_id: str = ""

    def labels(self) -> list[int]:
        interior = self.gold.interior()
        return [int(i in interior) for i in range(len(self.text))]
