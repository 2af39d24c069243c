"""Independent reference implementations used by the tests."""

from __future__ import annotations

import math

import numpy as np

from nlseg.corpus import PunctuationInventory
from nlseg.encoder import Batch, EncoderConfig, EncoderModel


def bce_loop(logits, y, mask):
    total, n = 0.0, 0
    for l, t, m in zip(logits, y, mask):
        if m:
            s = 1.0 / (1.0 + math.exp(-l))
            total -= t * math.log(s) + (1 - t) * math.log(1 - s)
            n += 1
    return total / n if n else 0.0


def ce_loop(logits, z, mask):
    total, n = 0.0, 0
    for row, k, m in zip(logits, z, mask):
        if m:
            mx = max(row)
            lse = mx + math.log(sum(math.exp(v - mx) for v in row))
            total += lse - row[k]
            n += 1
    return total / n if n else 0.0


def confusion_f1(pred: set, gold: set, text_len: int):
    """Per-character labels, end-of-text excluded."""
    tp = fp = fn = 0
    for i in range(text_len - 1):
        p, g = i in pred, i in gold
        tp += p and g
        fp += p and not g
        fn += g and not p
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return prec, rec, f1, tp, fp, fn


def tiny_model(layers=1, dim=8, inventory=".,", adapters=False, seed=0, max_len=16, scale=0.3):
    """Tiny float64 model with all parameters drawn at a scale where every
    path carries gradient (the default init zeroes adapter up-projections)."""
    cfg = EncoderConfig(num_layers=layers, hidden_dim=dim, num_heads=2, max_len=max_len, embed_buckets=61,
                        use_lang_adapters=adapters, languages=["aa", "bb"] if adapters else [])
    model = EncoderModel(cfg, PunctuationInventory(inventory), seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    for k, v in model.params.items():
        if k.endswith(".g"):
            v[...] = 1.0 + rng.normal(0, 0.1, v.shape)
        else:
            v[...] = rng.normal(0, scale, v.shape)
    return model


def random_batch(model, rng, B=3, T=10):
    K = model.inventory.num_classes
    alphabet = "ab c." + "".join(model.inventory.chars)
    texts = ["".join(rng.choice(list(alphabet), size=int(rng.integers(2, T + 1)))) for _ in range(B)]
    ys = [rng.integers(0, 2, len(t)) for t in texts]
    zs = [rng.integers(0, K, len(t)) for t in texts]
    langs = list(rng.choice(model.config.languages, size=B)) if model.config.use_lang_adapters else None
    return Batch.from_texts(texts, langs, length=T, y=ys, z=zs)


def finite_difference_check(model, batch, eps=1e-4, per_tensor=12, rng=None, use_aux=True):
    """Max elementwise relative error |a-n| / max(|a|, |n|, 1e-8) between the
    analytic gradient and central differences on sampled coordinates."""
    rng = rng or np.random.default_rng(0)
    _, grads = model.backward(batch, use_aux)
    worst = 0.0
    for name, p in model.params.items():
        flat = p.reshape(-1)
        idx = rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False)
        g = grads[name].reshape(-1)
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            lp = model.loss(batch, use_aux)[0]
            flat[i] = old - eps
            lm = model.loss(batch, use_aux)[0]
            flat[i] = old
            num = (lp - lm) / (2 * eps)
            ana = float(g[i])
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, rel)
    return worst
