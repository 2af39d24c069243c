"""Evaluation: boundary F1 over gold-segmented documents, baselines, the
few-shot adaptation curve and punctuation restoration."""

from __future__ import annotations

import csv
import io
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_softmax, softmax

from .corpus import LanguageProfile, default_profile
from .encoder import EncoderModel
from .metrics import (
    BoundarySet,
    F1Report,
    GoldText,
    UndefinedRecallError,
    boundary_f1,
    pooled_f1,
)
from .segmenter import (
    DEFAULT_ALPHA,
    SegmenterConfig,
    SingleClassError,
    adapter_probabilities,
    fit_adapter_features,
    score_text,
    segment,
    tune_threshold_scores,
)

__all__ = [
    "BoundarySet", "F1Report", "boundary_f1", "pooled_f1", "EvalDocument", "evaluate",
    "evaluate_baseline", "fewshot_curve", "rule_segment", "naive_segment", "none_segment",
    "build_paragraphs", "fit_restorer", "eval_restorer",
]

log = logging.getLogger(__name__)


@dataclass
class EvalDocument:
    sentences: list[str]
    lang_id: str = "xx"

    def __post_init__(self):
        if not self.sentences:
            raise ValueError("a document needs at least one sentence")

    def to_gold(self, profile: LanguageProfile | None = None) -> GoldText:
        profile = profile or default_profile(self.lang_id)
        text, gold = join_sentences(self.sentences, profile.uses_whitespace)
        return GoldText(text, gold, self.lang_id)


def join_sentences(sentences: Sequence[str], uses_whitespace: bool = True) -> tuple[str, BoundarySet]:
    """Join with one space (or nothing) and mark the last character of every
    sentence except the final one."""
    sep = " " if uses_whitespace else ""
    gold = []
    pos = 0
    for s in sentences[:-1]:
        pos += len(s)
        if s:
            gold.append(pos - 1)
        pos += len(sep)
    text = sep.join(sentences)
    return text, BoundarySet(gold, len(text))


def _profile(profiles: Mapping[str, LanguageProfile] | None, lang: str) -> LanguageProfile:
    if profiles and lang in profiles:
        return profiles[lang]
    return default_profile(lang)


def load_eval_file(path, lang_id: str | None = None) -> list[EvalDocument]:
    """One sentence per line, a blank line between documents."""
    path = Path(path)
    lang = lang_id or path.stem
    docs, cur = [], []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n").rstrip("\r")
            if line.strip():
                cur.append(line)
            elif cur:
                docs.append(EvalDocument(cur, lang))
                cur = []
    if cur:
        docs.append(EvalDocument(cur, lang))
    return docs


def load_eval_dataset(directory) -> dict[str, list[EvalDocument]]:
    """``<dataset>/<lang_id>.txt`` files, keyed by language."""
    return {p.stem: load_eval_file(p) for p in sorted(Path(directory).glob("*.txt"))}


def write_eval_file(docs: Iterable[EvalDocument], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n\n".join("\n".join(d.sentences) for d in docs) + "\n")


# -- corpus-level evaluation ---------------------------------------------------


def evaluate_predictions(golds: Sequence[GoldText], predict: Callable[[GoldText], BoundarySet]) -> F1Report:
    return pooled_f1((predict(gt), gt.gold) for gt in golds)


def evaluate(model: EncoderModel, cfg: SegmenterConfig, docs: Sequence[EvalDocument],
             profiles: Mapping[str, LanguageProfile] | None = None) -> F1Report:
    """Micro-averaged boundary F1 of the model segmenter over ``docs``."""
    golds = [d.to_gold(_profile(profiles, d.lang_id)) for d in docs]
    return evaluate_predictions(golds, lambda gt: segment(model, gt.text, cfg, gt.lang_id))


def evaluate_baseline(name: str, docs: Sequence[EvalDocument],
                      profiles: Mapping[str, LanguageProfile] | None = None, k: int = 10) -> F1Report:
    golds = [d.to_gold(_profile(profiles, d.lang_id)) for d in docs]
    fns = {
        "rule": lambda gt: rule_segment(gt.text, _profile(profiles, gt.lang_id)),
        "naive": lambda gt: naive_segment(gt.text, k, _profile(profiles, gt.lang_id)),
        "none": lambda gt: none_segment(gt.text),
    }
    if name not in fns:
        raise ValueError(f"unknown baseline {name!r}; expected one of {sorted(fns)}")
    return evaluate_predictions(golds, fns[name])


def format_report(rows: Sequence[tuple[str, F1Report]]) -> str:
    lines = [f"{'system':<12} {'P':>7} {'R':>7} {'F1':>7} {'tp':>6} {'fp':>6} {'fn':>6}"]
    for name, r in rows:
        lines.append(f"{name:<12} {r.precision:7.4f} {r.recall:7.4f} {r.f1:7.4f} {r.tp:6d} {r.fp:6d} {r.fn:6d}")
    return "\n".join(lines) + "\n"


def report_csv(rows: Sequence[tuple[str, F1Report]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["system", "precision", "recall", "f1", "tp", "fp", "fn"])
    for name, r in rows:
        w.writerow([name, f"{r.precision:.6f}", f"{r.recall:.6f}", f"{r.f1:.6f}", r.tp, r.fp, r.fn])
    return buf.getvalue()


# -- baselines -----------------------------------------------------------------

TERMINATORS = frozenset(".!?。！？")
CLOSERS = frozenset("\"')]}»”’」』")
DEFAULT_ABBREVIATIONS = frozenset(
    {"Dr", "Mr", "Mrs", "Ms", "Prof", "St", "Jr", "Sr", "vs", "No", "Fig", "cf", "e.g", "i.e", "approx"}
)


def rule_segment(text: str, profile: LanguageProfile | None = None,
                 abbreviations: Iterable[str] = DEFAULT_ABBREVIATIONS) -> BoundarySet:
    """Split after sentence-final punctuation (and any closing quotes or
    brackets right after it), except after listed abbreviations and for
    periods between two digits."""
    abbreviations = set(abbreviations)
    n = len(text)
    out = []
    i = 0
    while i < n:
        ch = text[i]
        if ch not in TERMINATORS:
            i += 1
            continue
        j = i
        while j + 1 < n and text[j + 1] in TERMINATORS:
            j += 1
        skip = False
        if i == j and ch == ".":
            if 0 < i < n - 1 and text[i - 1].isdigit() and text[i + 1].isdigit():
                skip = True
            else:
                start = i
                while start > 0 and not text[start - 1].isspace():
                    start -= 1
                token = text[start:i].lstrip("\"'([{«“‘")
                if token in abbreviations:
                    skip = True
        while j + 1 < n and text[j + 1] in CLOSERS:
            j += 1
        if not skip:
            out.append(j)
        i = j + 1
    return BoundarySet(out, n)


def naive_segment(text: str, k: int = 10, profile: LanguageProfile | None = None) -> BoundarySet:
    """``k`` contiguous blocks of equal word count (whitespace languages) or
    character count, earlier blocks taking the remainder."""
    if k < 1:
        raise ValueError("k must be >= 1")
    uses_ws = profile.uses_whitespace if profile is not None else True
    if uses_ws:
        unit_ends = [m.end() - 1 for m in re.finditer(r"\S+", text)]
    else:
        unit_ends = list(range(len(text)))
    blocks = min(k, len(unit_ends))
    if blocks <= 1:
        return BoundarySet((), len(text))
    q, r = divmod(len(unit_ends), blocks)
    out = []
    pos = 0
    for b in range(blocks - 1):
        pos += q + (1 if b < r else 0)
        out.append(unit_ends[pos - 1])
    return BoundarySet(out, len(text))


def none_segment(text: str) -> BoundarySet:
    return BoundarySet((), len(text))


def build_paragraphs(docs: Sequence[EvalDocument], k: int = 10,
                     profiles: Mapping[str, LanguageProfile] | None = None) -> list[GoldText]:
    """Regroup the sentences of ``docs`` (per language, in order) into
    paragraphs of ``k`` sentences; a shorter trailing group is kept."""
    if k < 1:
        raise ValueError("k must be >= 1")
    by_lang: dict[str, list[str]] = {}
    for d in docs:
        by_lang.setdefault(d.lang_id, []).extend(d.sentences)
    out = []
    for lang, sents in by_lang.items():
        for i in range(0, len(sents), k):
            out.append(EvalDocument(sents[i:i + k], lang).to_gold(_profile(profiles, lang)))
    return out


# -- few-shot adaptation ---------------------------------------------------------


@dataclass
class FewShotEntry:
    mode: str
    n: int
    mean_f1: float
    std_f1: float
    f1s: list[float] = field(default_factory=list)
    skipped: str = ""


@dataclass
class FewShotReport:
    entries: list[FewShotEntry]
    n_values: list[int]
    repeats: int

    def get(self, mode: str, n: int | None = None) -> FewShotEntry:
        for e in self.entries:
            if e.mode == mode and (n is None or e.n == n):
                return e
        raise KeyError((mode, n))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mode", "n", "mean_f1", "std_f1"])
        for e in self.entries:
            if e.skipped:
                w.writerow([e.mode, e.n, "", ""])
            else:
                w.writerow([e.mode, e.n, f"{e.mean_f1:.6f}", f"{e.std_f1:.6f}"])
        return buf.getvalue()


@dataclass
class _ScoredSentence:
    probs: np.ndarray
    logits: np.ndarray
    labels: np.ndarray


def _scored_sentences(model, docs, cfg, profiles) -> list[_ScoredSentence]:
    """Per-sentence rows (newline prob, punctuation logits, boundary label),
    scored in document context.  The separator after a sentence belongs to it;
    the document-final character is dropped (implicit boundary)."""
    out = []
    for d in docs:
        profile = _profile(profiles, d.lang_id)
        gt = d.to_gold(profile)
        probs, logits = score_text(model, gt.text, cfg, d.lang_id)
        labels = np.array(gt.labels(), dtype=bool)
        sep = 1 if profile.uses_whitespace else 0
        pos = 0
        for j, s in enumerate(d.sentences):
            end = pos + len(s) + (sep if j < len(d.sentences) - 1 else -1)
            out.append(_ScoredSentence(probs[pos:end], logits[pos:end], labels[pos:end]))
            pos = end
    return out


def _scored_test(model, docs, cfg, profiles):
    rows = []
    for d in docs:
        gt = d.to_gold(_profile(profiles, d.lang_id))
        probs, logits = score_text(model, gt.text, cfg, d.lang_id)
        rows.append((gt, probs, logits))
    return rows


def _f1_at(rows, scores_of, threshold) -> float:
    return pooled_f1(
        (BoundarySet(np.flatnonzero(scores_of(r) >= threshold), len(r[0].text)), r[0].gold) for r in rows
    ).f1


def fewshot_curve(model: EncoderModel, train_docs: Sequence[EvalDocument], test_docs: Sequence[EvalDocument],
                  n_list: Sequence[int], repeats: int = 20, seed: int = 0,
                  cfg: SegmenterConfig | None = None,
                  profiles: Mapping[str, LanguageProfile] | None = None) -> FewShotReport:
    """For each ``n``: ``repeats`` times draw ``n`` training sentences without
    replacement, tune a threshold (T) and fit the punctuation adapter
    (Punct) on them, and score both on ``test_docs``.  The constant-threshold
    mode (U) is evaluated once."""
    if repeats < 2:
        raise ValueError("repeats must be >= 2")
    cfg = cfg or SegmenterConfig()
    pool = _scored_sentences(model, train_docs, cfg, profiles)
    test = _scored_test(model, test_docs, cfg, profiles)
    rng = np.random.default_rng(seed)

    u = _f1_at(test, lambda r: r[1], DEFAULT_ALPHA)
    entries = [FewShotEntry("U", 0, u, 0.0, [u])]
    for n in n_list:
        if n > len(pool) or n < 1:
            log.warning("n=%d outside the pool of %d sentences; skipped", n, len(pool))
            for mode in ("T", "Punct"):
                entries.append(FewShotEntry(mode, n, float("nan"), float("nan"), [], "pool too small"))
            continue
        t_f1, p_f1 = [], []
        for _ in range(repeats):
            idx = np.sort(rng.choice(len(pool), size=n, replace=False))
            probs = np.concatenate([pool[i].probs for i in idx])
            logits = np.concatenate([pool[i].logits for i in idx])
            labels = np.concatenate([pool[i].labels for i in idx])
            try:
                alpha, _ = tune_threshold_scores([probs], [labels])
                adapter = fit_adapter_features(logits, labels, model.inventory.hash)
            except (SingleClassError, UndefinedRecallError):
                log.warning("n=%d sample has a single label class; repeat skipped", n)
                continue
            t_f1.append(_f1_at(test, lambda r: r[1], alpha))
            p_f1.append(_f1_at(test, lambda r: adapter_probabilities(r[2], adapter), adapter.threshold))
        for mode, vals in (("T", t_f1), ("Punct", p_f1)):
            if vals:
                entries.append(FewShotEntry(mode, n, float(np.mean(vals)), float(np.std(vals)), vals))
            else:
                entries.append(FewShotEntry(mode, n, float("nan"), float("nan"), [], "no usable samples"))
    return FewShotReport(entries, list(n_list), repeats)


# -- punctuation restoration -------------------------------------------------------

RESTORATION_CLASSES = ("none", "comma", "period", "question")
RESTORATION_MARKS = {",": 1, ".": 2, "?": 3}
RESTORATION_SHORT = {1: "C", 2: "P", 3: "Q"}


def make_restoration_example(text: str) -> tuple[str, np.ndarray]:
    """Delete commas, periods and question marks; label the character before
    each deleted mark with its class (first mark wins on runs)."""
    chars, labels = [], []
    for ch in text:
        cls = RESTORATION_MARKS.get(ch)
        if cls is None:
            chars.append(ch)
            labels.append(0)
        elif labels and labels[-1] == 0:
            labels[-1] = cls
    return "".join(chars), np.array(labels, dtype=np.int64)


@dataclass
class RestorerWeights:
    weights: np.ndarray  # (4, |P|+1)
    intercepts: np.ndarray  # (4,)
    inventory_hash: str = ""

    def to_dict(self) -> dict:
        return {
            "inventory_hash": self.inventory_hash,
            "classes": list(RESTORATION_CLASSES),
            "weights": self.weights.tolist(),
            "intercepts": self.intercepts.tolist(),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RestorerWeights":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(np.array(d["weights"], dtype=np.float64), np.array(d["intercepts"], dtype=np.float64),
                   d.get("inventory_hash", ""))

    def predict(self, features) -> np.ndarray:
        return np.argmax(np.asarray(features, dtype=np.float64) @ self.weights.T + self.intercepts, axis=-1)


def fit_restorer_features(features, labels, inventory_hash: str = "", l2: float = 1e-6) -> RestorerWeights:
    """Multinomial logistic regression (4 classes, with intercepts) by L-BFGS."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise SingleClassError("restoration labels must contain at least two classes")
    C = len(RESTORATION_CLASSES)
    X1 = np.hstack([X, np.ones((len(X), 1))])
    Y = np.eye(C)[y]

    def f(theta):
        W = theta.reshape(C, -1)
        z = X1 @ W.T
        lp = log_softmax(z, axis=1)
        loss = -np.mean(np.sum(Y * lp, axis=1)) + 0.5 * l2 * np.sum(W[:, :-1] ** 2)
        g = (softmax(z, axis=1) - Y).T @ X1 / len(X1)
        g[:, :-1] += l2 * W[:, :-1]
        return loss, g.ravel()

    res = minimize(f, np.zeros(C * X1.shape[1]), jac=True, method="L-BFGS-B",
                   options={"maxiter": 5000, "gtol": 1e-8})
    W = res.x.reshape(C, -1)
    return RestorerWeights(W[:, :-1], W[:, -1], inventory_hash)


def fit_restorer(model: EncoderModel, labeled_texts: Sequence[str], cfg: SegmenterConfig | None = None,
                 lang_id: str | None = None) -> RestorerWeights:
    feats, labels = [], []
    for t in labeled_texts:
        stripped, lab = make_restoration_example(t)
        if stripped:
            feats.append(score_text(model, stripped, cfg, lang_id)[1])
            labels.append(lab)
    return fit_restorer_features(np.concatenate(feats), np.concatenate(labels), model.inventory.hash)


def restoration_f1(pred, gold) -> dict[str, F1Report]:
    """Per-class character-level F1 for comma (C), period (P), question (Q)."""
    pred = np.asarray(pred)
    gold = np.asarray(gold)
    out = {}
    for cls, short in RESTORATION_SHORT.items():
        p, g = pred == cls, gold == cls
        out[short] = F1Report.from_counts(int(np.sum(p & g)), int(np.sum(p & ~g)), int(np.sum(~p & g)))
    return out


def eval_restorer(model: EncoderModel, restorer: RestorerWeights, labeled_texts: Sequence[str],
                  cfg: SegmenterConfig | None = None, lang_id: str | None = None) -> dict[str, F1Report]:
    if restorer.inventory_hash and restorer.inventory_hash != model.inventory.hash:
        raise ValueError("restorer was fitted for a different punctuation inventory")
    preds, golds = [], []
    for t in labeled_texts:
        stripped, lab = make_restoration_example(t)
        if stripped:
            preds.append(restorer.predict(score_text(model, stripped, cfg, lang_id)[1]))
            golds.append(lab)
    return restoration_f1(np.concatenate(preds), np.concatenate(golds))


def restore_text(text: str, classes) -> str:
    marks = {1: ",", 2: ".", 3: "?"}
    return "".join(ch + marks.get(int(c), "") for ch, c in zip(text, classes))
