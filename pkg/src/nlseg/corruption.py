"""Newline and punctuation corruption with the matching label sequences.

``corrupt_newlines`` deletes every newline and labels each surviving
character with whether a newline followed it.  ``corrupt_with_punct``
additionally deletes inventory punctuation at random and records which
punctuation mark (if any) followed each surviving character, so that
``reconstruct`` can undo the corruption exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .corpus import NEWLINE, PunctuationInventory


@dataclass
class MainSample:
    x: str
    y: np.ndarray  # int8, len(x)

    def __post_init__(self):
        if len(self.y) != len(self.x):
            raise ValueError("label length mismatch")


@dataclass
class AuxSample:
    x_prime: str
    y: np.ndarray  # int8, len(x_prime)
    z: list  # str in the inventory, or None for the `none` class
    removal_mask: np.ndarray  # bool over the ORIGINAL sequence
    literal_labels: bool = False

    def __post_init__(self):
        if not (len(self.y) == len(self.z) == len(self.x_prime)):
            raise ValueError("label length mismatch")

    def z_indices(self, inventory: PunctuationInventory) -> np.ndarray:
        return np.array([inventory.index(v) for v in self.z], dtype=np.int64)

    def to_json(self) -> str:
        return json.dumps(
            {
                "x": self.x_prime,
                "y": self.y.tolist(),
                "z": self.z,
                "mask": self.removal_mask.astype(int).tolist(),
            },
            ensure_ascii=False,
        )


@dataclass(frozen=True)
class RemovalPolicy:
    inventory: PunctuationInventory
    p: float = 0.5
    rng_seed: int = 0
    literal_labels: bool = False

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("removal probability must lie in [0, 1]")


def corrupt_newlines(c: str) -> MainSample:
    chars = []
    y = []
    for ch in c:
        if ch == NEWLINE:
            if y:
                y[-1] = 1
        else:
            chars.append(ch)
            y.append(0)
    return MainSample("".join(chars), np.array(y, dtype=np.int8))


def removal_mask(c: str, policy: RemovalPolicy) -> np.ndarray:
    """Bernoulli removal mask over ``c`` with the adjacency veto applied.

    A punctuation mark is only removable when its original predecessor is a
    retained, non-newline character.  This keeps every removed mark directly
    attached to one surviving character.
    """
    rng = np.random.default_rng(policy.rng_seed)
    draws = rng.random(len(c)) < policy.p
    mask = np.zeros(len(c), dtype=bool)
    inv = policy.inventory
    for i in range(1, len(c)):
        if draws[i] and c[i] in inv and c[i - 1] != NEWLINE and not mask[i - 1]:
            mask[i] = True
    return mask


def corrupt_with_punct(c: str, policy: RemovalPolicy) -> AuxSample:
    mask = removal_mask(c, policy)
    inv = policy.inventory
    n = len(c)
    kept, y, z = [], [], []
    for j, ch in enumerate(c):
        if ch == NEWLINE or mask[j]:
            continue
        kept.append(ch)
        nxt = c[j + 1] if j + 1 < n else None
        z.append(nxt if nxt is not None and nxt in inv else None)
        if policy.literal_labels:
            y.append(int(nxt == NEWLINE))
        else:
            # look through a single removed mark
            k = j + 1
            while k < n and mask[k]:
                k += 1
            y.append(int(k < n and c[k] == NEWLINE))
    return AuxSample(
        "".join(kept),
        np.array(y, dtype=np.int8),
        z,
        mask,
        literal_labels=policy.literal_labels,
    )


def reconstruct(sample: AuxSample, inventory: PunctuationInventory) -> str:
    """Invert ``corrupt_with_punct``; raises ``ValueError`` when the mask and
    labels are inconsistent."""
    if sample.literal_labels:
        raise ValueError("literal labels drop newlines after removed marks; cannot reconstruct")
    mask = sample.removal_mask
    out = []
    k = 0
    for ch, yi, zi in zip(sample.x_prime, sample.y, sample.z):
        if k >= len(mask) or mask[k]:
            raise ValueError(f"removal mask disagrees with x' at original position {k}")
        out.append(ch)
        k += 1
        if k < len(mask) and mask[k]:
            if zi is None or zi not in inventory:
                raise ValueError(f"removed position {k} has no punctuation label")
            out.append(zi)
            k += 1
        if yi:
            if k < len(mask) and mask[k]:
                raise ValueError(f"newline position {k} is marked as removed")
            out.append(NEWLINE)
            k += 1
    if k != len(mask):
        raise ValueError("removal mask length does not match the labelled sequence")
    return "".join(out)
