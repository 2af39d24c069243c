"""Training loop: corpus preparation, batch corruption, learning-rate
schedule, AdamW updates, loss trace and checkpoints."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .checkpoint import save_checkpoint
from .corpus import (
    LanguageProfile,
    Paragraph,
    PunctuationInventory,
    TrainingWindow,
    ends_in_punctuation,
    make_training_windows,
    normalize_text,
    sample_paragraphs,
)
from .corruption import RemovalPolicy, corrupt_newlines, corrupt_with_punct
from .encoder import Batch, EncoderModel, NumericalFault

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    total_steps: int = 2000
    batch_size: int = 32
    window_len: int = 512
    peak_lr: float = 1e-3
    adapter_warmup_steps: int = 0
    full_warmup_steps: int = 100
    rng_seed: int = 0
    eval_every: int = 100
    use_aux_objective: bool = True
    punct_removal_p: float = 0.5
    # corrupt punctuation even when the auxiliary loss is off
    punct_corruption_without_aux: bool = False
    label_literal: bool = False
    weight_decay: float = 0.01
    grad_clip: float = 1.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.total_steps < 0 or self.adapter_warmup_steps < 0 or self.full_warmup_steps < 0:
            raise ValueError("step counts must be non-negative")
        if self.adapter_warmup_steps + self.full_warmup_steps > self.total_steps:
            raise ValueError("warmup phases exceed total_steps")
        if not 0.0 <= self.punct_removal_p <= 1.0:
            raise ValueError("punct_removal_p must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def lr_at(step: int, cfg: TrainConfig, group: str = "main") -> float:
    """Learning rate for a parameter group ("main" or "adapter") at ``step``.

    Adapter warmup (adapters only, constant peak), then a linear ramp from 0
    to peak for everything, then linear decay to 0 at ``total_steps``.
    """
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    if group not in ("main", "adapter"):
        raise ValueError(f"unknown parameter group {group!r}")
    a, w, total = cfg.adapter_warmup_steps, cfg.full_warmup_steps, cfg.total_steps
    if step < a:
        return cfg.peak_lr if group == "adapter" else 0.0
    if step < a + w:
        return cfg.peak_lr * (step - a) / w
    decay_len = total - a - w
    if decay_len == 0:
        return 0.0
    return cfg.peak_lr * (total - step) / decay_len


def phase_at(step: int, cfg: TrainConfig) -> int:
    if step < cfg.adapter_warmup_steps:
        return 0
    if step < cfg.adapter_warmup_steps + cfg.full_warmup_steps:
        return 1
    return 2


class AdamW:
    """Adam with decoupled weight decay:

        m <- b1 m + (1 - b1) g
        v <- b2 v + (1 - b2) g^2
        p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)

    with bias-corrected ``m_hat``/``v_hat``.  Decay applies to matrices only.
    """

    def __init__(self, params: dict, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = params
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.reset()

    def reset(self):
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.params.items()}

    def step(self, grads: dict, lrs: Mapping[str, float]):
        """``lrs`` maps parameter name to learning rate; missing names are frozen."""
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, lr in lrs.items():
            if lr == 0.0:
                continue
            p, g = self.params[name], grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            upd = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay and p.ndim >= 2:
                upd = upd + self.weight_decay * p
            p -= (lr * upd).astype(p.dtype)


def clip_global_norm(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
    if max_norm and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


# -- corpus preparation ------------------------------------------------------


@dataclass
class TrainingCorpus:
    windows: dict[str, list[TrainingWindow]]
    stats: dict = field(default_factory=dict)

    @property
    def languages(self) -> list[str]:
        return [lang for lang, w in self.windows.items() if w]


def prepare_corpus(
    paragraphs: Mapping[str, Sequence[Paragraph]],
    profiles: Mapping[str, LanguageProfile],
    inventory: PunctuationInventory,
    window_len: int,
    punct_sampling: bool = True,
    seed: int = 0,
) -> TrainingCorpus:
    """Sample paragraphs (unless disabled), join them per language with
    newlines, normalize, and cut into training windows."""
    windows, stats = {}, {}
    for i, (lang, paras) in enumerate(paragraphs.items()):
        profile = profiles[lang]
        kept = list(paras)
        if punct_sampling and profile.ends_with_punct_ratio_cap < 1.0 and kept:
            kept = sample_paragraphs(kept, inventory, profile.ends_with_punct_ratio_cap, seed + i)
        n_other = sum(not ends_in_punctuation(p.text, inventory) for p in kept)
        text = normalize_text("\n".join(p.text for p in kept), profile)
        windows[lang] = make_training_windows(text, window_len, lang)
        stats[lang] = {
            "paragraphs_in": len(paras),
            "paragraphs_kept": len(kept),
            "non_punct_ending_ratio": n_other / len(kept) if kept else 0.0,
            "punct_sampling": bool(punct_sampling),
            "characters": len(text),
            "windows": len(windows[lang]),
        }
    if not any(windows.values()):
        raise ValueError("training corpus is empty")
    return TrainingCorpus(windows, stats)


def _corrupt(text: str, inventory: PunctuationInventory, cfg: TrainConfig, seed: int, corrupt_punct: bool):
    if corrupt_punct:
        s = corrupt_with_punct(text, RemovalPolicy(inventory, cfg.punct_removal_p, seed, cfg.label_literal))
        return s.x_prime, s.y, s.z_indices(inventory)
    s = corrupt_newlines(text)
    return s.x, s.y, np.full(len(s.x), inventory.index(None), dtype=np.int64)


def make_batch(corpus: TrainingCorpus, inventory: PunctuationInventory, cfg: TrainConfig,
               rng: np.random.Generator, corrupt_punct: bool) -> Batch:
    """Sample windows and corrupt them.

    Corruption shortens a window by the number of deleted characters, so a
    corrupted window padded back to L would reveal its newline count through
    the padding.  The sampled window is therefore extended with the following
    windows before corruption and the result cropped to exactly L; only the
    tail of a language's text stays padded.
    """
    langs = corpus.languages
    L = cfg.window_len
    texts, ys, zs, lang_ids = [], [], [], []
    for _ in range(cfg.batch_size):
        lang = langs[rng.integers(len(langs))]
        pool = corpus.windows[lang]
        j = int(rng.integers(len(pool)))
        seed = int(rng.integers(2**63))
        text = pool[j].text
        x, y, z = _corrupt(text, inventory, cfg, seed, corrupt_punct)
        while len(x) < L and j + 1 < len(pool):
            j += 1
            text += pool[j].text
            x, y, z = _corrupt(text, inventory, cfg, seed, corrupt_punct)
        texts.append(x[:L])
        ys.append(y[:L])
        zs.append(z[:L])
        lang_ids.append(lang)
    return Batch.from_texts(texts, lang_ids, length=L, y=ys, z=zs)


@dataclass
class TraceRow:
    step: int
    loss_main: float
    loss_aux: float
    lr: float


def write_trace(trace: Sequence[TraceRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "loss_main", "loss_aux", "lr"])
        for r in trace:
            w.writerow([r.step, repr(r.loss_main), repr(r.loss_aux), repr(r.lr)])


def train(corpus: TrainingCorpus, model: EncoderModel, cfg: TrainConfig,
          checkpoint_path=None, trace_path=None) -> tuple[EncoderModel, list[TraceRow]]:
    """Train ``model`` in place; returns the model and the per-step loss trace.

    When ``checkpoint_path`` is given a checkpoint is written every
    ``eval_every`` steps and at the end; a numerical fault leaves the last
    written checkpoint untouched.
    """
    if not corpus.languages:
        raise ValueError("training corpus is empty")
    if cfg.window_len > model.config.max_len:
        raise ValueError("window_len exceeds the model's max_len")
    use_aux = cfg.use_aux_objective
    corrupt_punct = use_aux or cfg.punct_corruption_without_aux
    rng = np.random.default_rng(cfg.rng_seed)
    opt = AdamW(model.params, weight_decay=cfg.weight_decay)
    trainable = [n for n in model.params if use_aux or not model.is_punct_head_param(n)]
    trace: list[TraceRow] = []
    phase = None

    for step in range(cfg.total_steps):
        ph = phase_at(step, cfg)
        if ph != phase:
            if phase is not None:
                opt.reset()
            phase = ph
        batch = make_batch(corpus, model.inventory, cfg, rng, corrupt_punct)
        try:
            (loss, lm, la), grads = model.backward(batch, use_aux=use_aux)
        except NumericalFault as e:
            raise NumericalFault(f"step {step}: {e}") from e
        clip_global_norm(grads, cfg.grad_clip)
        lr_main = lr_at(step, cfg, "main")
        lr_adapter = lr_at(step, cfg, "adapter")
        lrs = {n: lr_adapter if model.is_adapter_param(n) else lr_main for n in trainable}
        opt.step(grads, lrs)
        trace.append(TraceRow(step, lm, la, lr_main))
        if cfg.eval_every and (step + 1) % cfg.eval_every == 0:
            recent = trace[-cfg.eval_every:]
            log.info("step %d  loss_main %.4f  loss_aux %.4f  lr %.2e", step + 1,
                     np.mean([r.loss_main for r in recent]), np.mean([r.loss_aux for r in recent]), lr_main)
            if checkpoint_path is not None:
                save_checkpoint(model, checkpoint_path, step + 1, rng.bit_generator.state)
            if trace_path is not None:
                write_trace(trace, trace_path)

    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path, cfg.total_steps, rng.bit_generator.state)
    if trace_path is not None:
        write_trace(trace, trace_path)
    return model, trace
