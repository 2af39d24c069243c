"""Inference: windowed newline probabilities and punctuation logits, the three
decision modes and sentence extraction.

Modes:
    U      constant threshold on newline probability (default alpha 0.01)
    T      threshold tuned on gold-segmented text
    Punct  logistic regression over punctuation logits
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import NEWLINE, LanguageProfile
from .encoder import Batch, EncoderModel, sigmoid
from .metrics import BoundarySet, F1Report, GoldText, UndefinedRecallError

log = logging.getLogger(__name__)

MODES = ("U", "T", "Punct")
DEFAULT_ALPHA = 0.01
THRESHOLD_GRID = np.geomspace(1e-5, 0.5, 64)
PUNCT_THRESHOLD_GRID = np.linspace(0.01, 0.99, 99)
FORWARD_CHUNK = 64


class SingleClassError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass
class AdapterWeights:
    weights: np.ndarray  # one per punctuation logit, `none` included
    intercept: float = 0.0
    threshold: float = 0.5
    inventory_hash: str = ""

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not (np.all(np.isfinite(self.weights)) and np.isfinite(self.intercept)):
            raise ValueError("adapter weights must be finite")

    @property
    def a(self) -> np.ndarray:
        """Weights followed by the intercept (length |P| + 2)."""
        return np.append(self.weights, self.intercept)

    def to_dict(self) -> dict:
        return {
            "inventory_hash": self.inventory_hash,
            "weights": [float(w) for w in self.weights],
            "intercept": float(self.intercept),
            "threshold": float(self.threshold),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "AdapterWeights":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(np.array(d["weights"]), float(d["intercept"]), float(d.get("threshold", 0.5)),
                   d.get("inventory_hash", ""))


@dataclass
class SegmenterConfig:
    mode: str = "U"
    alpha: float = DEFAULT_ALPHA
    adapter: AdapterWeights | None = None
    # None: use the threshold stored with the adapter (0.5 unless tuned)
    punct_decision_threshold: float | None = None
    # None: the model's max_len
    window_len: int | None = None
    stride: int | None = None
    lang_id: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.mode == "Punct" and self.adapter is None:
            raise ValueError("Punct mode needs adapter weights")
        if self.window_len is not None and self.window_len < 1:
            raise ValueError("window_len must be >= 1")
        if self.stride is not None and self.stride < 1:
            raise ValueError("stride must be >= 1")
        if None not in (self.stride, self.window_len) and self.stride > self.window_len:
            raise ValueError("stride must satisfy 0 < stride <= window_len")

    def window(self, max_len: int) -> tuple[int, int]:
        """Effective (window_len, stride) for a model with ``max_len``."""
        W = min(self.window_len or max_len, max_len)
        stride = min(self.stride or max(1, W // 2), W)
        return W, stride

    def decision_threshold(self) -> float:
        if self.punct_decision_threshold is not None:
            return self.punct_decision_threshold
        return self.adapter.threshold


# -- windowed scoring ----------------------------------------------------------


def window_starts(n: int, window_len: int, stride: int) -> list[int]:
    """Start offsets of windows covering ``n`` characters; the last window is
    shifted left so it ends exactly at the text end."""
    if n <= window_len:
        return [0] if n else []
    starts = list(range(0, n - window_len + 1, stride))
    if starts[-1] + window_len < n:
        starts.append(n - window_len)
    return starts


def score_text(model: EncoderModel, text: str, cfg: SegmenterConfig | None = None,
               lang_id: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Newline probabilities (n,) and punctuation logits (n, |P|+1) from one
    pass over overlapping windows.

    Every character's value is the arithmetic mean over all windows covering
    it; probabilities are averaged after the sigmoid, logits as raw logits.
    """
    cfg = cfg or SegmenterConfig()
    if NEWLINE in text:
        raise ValueError("text passed to the scorer must not contain newlines")
    n = len(text)
    W, stride = cfg.window(model.config.max_len)
    K = model.inventory.num_classes
    probs = np.zeros(n, dtype=np.float64)
    logits = np.zeros((n, K), dtype=np.float64)
    cover = np.zeros(n, dtype=np.int64)
    starts = window_starts(n, W, stride)
    lang = lang_id if lang_id is not None else cfg.lang_id
    for c0 in range(0, len(starts), FORWARD_CHUNK):
        chunk = starts[c0:c0 + FORWARD_CHUNK]
        texts = [text[s:s + W] for s in chunk]
        out = model.forward(Batch.from_texts(texts, [lang] * len(texts)))
        for j, s in enumerate(chunk):
            m = len(texts[j])
            probs[s:s + m] += sigmoid(out.newline_logits[j, :m].astype(np.float64))
            logits[s:s + m] += out.punct_logits[j, :m]
            cover[s:s + m] += 1
    cover = np.maximum(cover, 1)
    return probs / cover, logits / cover[:, None]


def score_newlines(model: EncoderModel, text: str, cfg: SegmenterConfig | None = None,
                   lang_id: str | None = None) -> np.ndarray:
    """Per-character newline probability."""
    return score_text(model, text, cfg, lang_id)[0]


def punct_logits(model: EncoderModel, text: str, cfg: SegmenterConfig | None = None,
                 lang_id: str | None = None) -> np.ndarray:
    """Per-character punctuation logits, shape (n, |P|+1)."""
    return score_text(model, text, cfg, lang_id)[1]


# -- decisions -----------------------------------------------------------------


def segment_threshold(text: str, scores, alpha: float) -> BoundarySet:
    scores = np.asarray(scores)
    if len(scores) != len(text):
        raise ValueError("scores and text differ in length")
    return BoundarySet(np.flatnonzero(scores >= alpha), len(text))


def _f1_from_labels(pred: np.ndarray, gold: np.ndarray) -> float:
    tp = int(np.sum(pred & gold))
    return F1Report.from_counts(tp, int(np.sum(pred & ~gold)), int(np.sum(~pred & gold))).f1


def tune_threshold_scores(scores: Sequence[np.ndarray], labels: Sequence[np.ndarray],
                          grid=THRESHOLD_GRID) -> tuple[float, float]:
    """Grid threshold maximizing pooled F1; ties go to the smaller threshold.

    ``labels`` mark gold boundaries (end of text already excluded).
    Returns ``(alpha, f1)``.
    """
    s = np.concatenate([np.asarray(x, dtype=np.float64) for x in scores]) if scores else np.zeros(0)
    g = np.concatenate([np.asarray(x, dtype=bool) for x in labels]) if labels else np.zeros(0, bool)
    if not g.any():
        raise UndefinedRecallError("no gold boundaries to tune against")
    best_a, best_f = float(grid[0]), -1.0
    for a in grid:
        f = _f1_from_labels(s >= a, g)
        if f > best_f:
            best_a, best_f = float(a), f
    return best_a, best_f


def _interior_labels(gt: GoldText, scores: np.ndarray):
    labels = np.array(gt.labels(), dtype=bool)
    # the end of text is an implicit boundary and never scored
    keep = np.ones(len(gt.text), dtype=bool)
    if len(keep):
        keep[-1] = False
    return scores[keep], labels[keep]


def tune_threshold(model: EncoderModel, gold_corpus: Sequence[GoldText],
                   cfg: SegmenterConfig | None = None) -> float:
    cfg = cfg or SegmenterConfig()
    ss, ls = [], []
    for gt in gold_corpus:
        s, l = _interior_labels(gt, score_newlines(model, gt.text, cfg, gt.lang_id or None))
        ss.append(s)
        ls.append(l)
    return tune_threshold_scores(ss, ls)[0]


# -- logistic adapter ----------------------------------------------------------


def _logistic_loss_grad_hess(w, X, y):
    z = X @ w
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    s = sigmoid(z)
    grad = X.T @ (s - y) / len(y)
    hess = (X * (s * (1.0 - s))[:, None]).T @ X / len(y)
    return loss, grad, hess


def fit_logistic(features, labels, init=None, tol: float = 1e-6, max_iter: int = 1000,
                 ridge: float = 1e-10):
    """Unregularized binary logistic regression with an intercept.

    Descent directions are Hessian-preconditioned (falling back to the
    negative gradient), each step chosen by Armijo backtracking, so the loss
    never increases.  Stops once the gradient norm drops below ``tol``.
    Returns ``(weights, intercept, final_loss)``.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("features must be (N, K) with N labels")
    if y.min() == y.max():
        raise SingleClassError("adapter fitting needs both boundary and non-boundary labels")
    X1 = np.hstack([X, np.ones((len(X), 1))])
    w = np.zeros(X1.shape[1]) if init is None else np.asarray(init, dtype=np.float64).copy()
    eye = np.eye(len(w))
    loss, g, H = _logistic_loss_grad_hess(w, X1, y)
    for _ in range(max_iter):
        if np.linalg.norm(g) < tol:
            return w[:-1], float(w[-1]), loss
        try:
            d = -np.linalg.solve(H + ridge * eye, g)
        except np.linalg.LinAlgError:
            d = -g
        slope = float(g @ d)
        if not np.isfinite(slope) or slope >= 0:
            d, slope = -g, -float(g @ g)
        t = 1.0
        while True:
            w_new = w + t * d
            new_loss = float(np.mean(np.logaddexp(0.0, X1 @ w_new) - y * (X1 @ w_new)))
            if new_loss <= loss + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-30:
                raise ConvergenceError(f"line search failed at gradient norm {np.linalg.norm(g):.3g}")
        w = w_new
        loss, g, H = _logistic_loss_grad_hess(w, X1, y)
    raise ConvergenceError(f"no convergence in {max_iter} iterations (gradient norm {np.linalg.norm(g):.3g})")


def fit_adapter_features(features, labels, inventory_hash: str = "", init=None,
                         tune_threshold: bool = False) -> AdapterWeights:
    w, b, _ = fit_logistic(features, labels, init=init)
    adapter = AdapterWeights(w, b, 0.5, inventory_hash)
    if tune_threshold:
        probs = adapter_probabilities(features, adapter)
        adapter.threshold = tune_threshold_scores([probs], [np.asarray(labels, bool)],
                                                  PUNCT_THRESHOLD_GRID)[0]
    return adapter


def fit_punct_adapter(model: EncoderModel, gold_corpus: Sequence[GoldText],
                      cfg: SegmenterConfig | None = None, tune_threshold: bool = False,
                      init=None) -> AdapterWeights:
    """Fit the logistic adapter on punctuation logits of gold-segmented,
    uncorrupted text."""
    cfg = cfg or SegmenterConfig()
    feats, labels = [], []
    for gt in gold_corpus:
        f, l = _interior_labels(gt, punct_logits(model, gt.text, cfg, gt.lang_id or None))
        feats.append(f)
        labels.append(l)
    return fit_adapter_features(np.concatenate(feats), np.concatenate(labels), model.inventory.hash,
                                init=init, tune_threshold=tune_threshold)


def adapter_probabilities(features, adapter: AdapterWeights) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.shape[-1] != len(adapter.weights):
        raise ValueError(f"adapter expects {len(adapter.weights)} logits, got {X.shape[-1]}")
    return sigmoid(X @ adapter.weights + adapter.intercept)


def score_punct_adapter(model: EncoderModel, adapter: AdapterWeights, text: str,
                        cfg: SegmenterConfig | None = None, lang_id: str | None = None) -> np.ndarray:
    if adapter.inventory_hash and adapter.inventory_hash != model.inventory.hash:
        raise ValueError("adapter was fitted for a different punctuation inventory")
    if len(adapter.weights) != model.inventory.num_classes:
        raise ValueError("adapter width does not match the model's punctuation head")
    if not text:
        return np.zeros(0)
    return adapter_probabilities(punct_logits(model, text, cfg, lang_id), adapter)


def segment(model: EncoderModel, text: str, cfg: SegmenterConfig, lang_id: str | None = None) -> BoundarySet:
    if not text:
        return BoundarySet((), 0)
    if cfg.mode == "Punct":
        probs = score_punct_adapter(model, cfg.adapter, text, cfg, lang_id)
        return segment_threshold(text, probs, cfg.decision_threshold())
    return segment_threshold(text, score_newlines(model, text, cfg, lang_id), cfg.alpha)


# -- sentence extraction ---------------------------------------------------------


def sentence_spans(text: str, boundaries: BoundarySet, profile: LanguageProfile | None = None) -> list[tuple[int, int]]:
    """``(start, end)`` spans of the sentences; in whitespace languages leading
    whitespace of every sentence after the first is left out of its span."""
    uses_ws = profile.uses_whitespace if profile is not None else True
    cuts = [i + 1 for i in boundaries if i + 1 < len(text)] + [len(text)]
    spans = []
    start = 0
    for end in cuts:
        s = start
        if uses_ws and start > 0:
            while s < end and text[s].isspace():
                s += 1
        if s < end:
            spans.append((s, end))
        start = end
    return spans


def extract_sentences(text: str, boundaries: BoundarySet, profile: LanguageProfile | None = None) -> list[str]:
    return [text[s:e] for s, e in sentence_spans(text, boundaries, profile)]
