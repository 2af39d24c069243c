"""Bidirectional character encoder in NumPy with hand-written backward pass.

Pre-norm transformer blocks over hashed codepoint embeddings plus learned
positions, an optional per-language bottleneck adapter after each block, a
final layer norm and two linear heads: one newline logit per character and
``|P| + 1`` punctuation logits per character.

Shapes: (B, T, D) = batch, sequence, hidden; (B, H, T, d) inside attention.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .corpus import PunctuationInventory

NEG_INF = -1e9
LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


class ConfigurationError(ValueError):
    pass


class NumericalFault(FloatingPointError):
    pass


@dataclass
class EncoderConfig:
    num_layers: int = 3
    hidden_dim: int = 64
    num_heads: int = 4
    ffn_dim: int | None = None
    max_len: int = 512
    embed_buckets: int = 16384
    use_lang_adapters: bool = False
    adapter_dim: int | None = None
    use_aux_objective: bool = True
    languages: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.ffn_dim is None:
            self.ffn_dim = 4 * self.hidden_dim
        if self.adapter_dim is None:
            self.adapter_dim = max(1, self.hidden_dim // 4)
        for name in ("num_layers", "hidden_dim", "num_heads", "ffn_dim", "max_len",
                     "embed_buckets", "adapter_dim"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.hidden_dim % self.num_heads:
            raise ConfigurationError("hidden_dim must be divisible by num_heads")
        if self.use_lang_adapters and not self.languages:
            raise ConfigurationError("language adapters need at least one language")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Batch:
    ids: np.ndarray  # (B, T) int codepoints
    mask: np.ndarray  # (B, T) bool, True on real characters
    y: np.ndarray | None = None  # (B, T) newline labels
    z: np.ndarray | None = None  # (B, T) punctuation class indices
    lang_ids: list[str] | None = None

    @classmethod
    def from_texts(cls, texts, lang_ids=None, length=None, y=None, z=None) -> "Batch":
        T = length if length is not None else max((len(t) for t in texts), default=0)
        B = len(texts)
        ids = np.zeros((B, T), dtype=np.int64)
        mask = np.zeros((B, T), dtype=bool)
        ys = np.zeros((B, T), dtype=np.float64) if y is not None else None
        zs = np.zeros((B, T), dtype=np.int64) if z is not None else None
        for b, t in enumerate(texts):
            n = len(t)
            ids[b, :n] = [ord(ch) for ch in t]
            mask[b, :n] = True
            if y is not None:
                ys[b, :n] = y[b]
            if z is not None:
                zs[b, :n] = z[b]
        return cls(ids, mask, ys, zs, list(lang_ids) if lang_ids is not None else None)


@dataclass
class ForwardOutput:
    h: np.ndarray  # (B, T, D)
    newline_logits: np.ndarray  # (B, T)
    punct_logits: np.ndarray  # (B, T, |P|+1)
    attention: list = field(default_factory=list)  # per layer (B, H, T, T)


# -- primitives --------------------------------------------------------------


def _ln_forward(x, g, b):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return xhat * g + b, (xhat, inv)


def _ln_backward(dy, g, cache):
    xhat, inv = cache
    gh = dy * g
    dx = (gh - gh.mean(-1, keepdims=True) - xhat * (gh * xhat).mean(-1, keepdims=True)) * inv
    return dx, (dy * xhat).sum((0, 1)), dy.sum((0, 1))


def _gelu(u):
    t = np.tanh(_GELU_C * u * (1.0 + 0.044715 * u * u))
    return 0.5 * u * (1.0 + t), t


def _gelu_backward(du_out, u, t):
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * u * u)
    return du_out * (0.5 * (1.0 + t) + 0.5 * u * dt)


def softmax(s, axis=-1):
    e = np.exp(s - s.max(axis, keepdims=True))
    return e / e.sum(axis, keepdims=True)


def log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def sigmoid(x):
    return np.exp(log_sigmoid(x))


def sinusoidal_positions(T: int, D: int) -> np.ndarray:
    """Initial values for the learned position table; sinusoids make
    relative offsets linearly accessible to attention from the start."""
    pos = np.arange(T)[:, None]
    i = np.arange(D)[None, :]
    angle = pos / (10000.0 ** (2 * (i // 2) / D))
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


# -- losses ------------------------------------------------------------------


def loss_main(newline_logits, y, loss_mask) -> float:
    """Mean binary cross-entropy over unmasked positions (0 if all masked)."""
    m = np.asarray(loss_mask, dtype=bool)
    n = m.sum()
    if n == 0:
        return 0.0
    l = np.asarray(newline_logits, dtype=np.float64)[m]
    t = np.asarray(y, dtype=np.float64)[m]
    # -[t log s(l) + (1-t) log(1-s(l))] = softplus(l) - t*l
    return float((np.logaddexp(0.0, l) - t * l).sum() / n)


def loss_main_grad(newline_logits, y, loss_mask):
    m = np.asarray(loss_mask, dtype=bool)
    n = max(int(m.sum()), 1)
    return (sigmoid(newline_logits) - y) * m / n


def loss_aux(punct_logits, z, loss_mask) -> float:
    """Mean categorical cross-entropy of class indices ``z`` over unmasked positions."""
    m = np.asarray(loss_mask, dtype=bool)
    z = np.asarray(z)
    K = punct_logits.shape[-1]
    if m.any() and (z[m].min() < 0 or z[m].max() >= K):
        raise ValueError("punctuation label outside the inventory")
    n = m.sum()
    if n == 0:
        return 0.0
    lg = np.asarray(punct_logits, dtype=np.float64)[m]
    zz = z[m]
    lse = np.logaddexp.reduce(lg, axis=-1)
    return float((lse - lg[np.arange(len(zz)), zz]).sum() / n)


def loss_aux_grad(punct_logits, z, loss_mask):
    m = np.asarray(loss_mask, dtype=bool)
    n = max(int(m.sum()), 1)
    g = softmax(punct_logits)
    np.put_along_axis(g, z[..., None], np.take_along_axis(g, z[..., None], -1) - 1.0, -1)
    return g * m[..., None] / n


def total_loss(main: float, aux: float, use_aux: bool) -> float:
    return main + aux if use_aux else main


# -- model -------------------------------------------------------------------


class EncoderModel:
    def __init__(self, config: EncoderConfig, inventory: PunctuationInventory,
                 params: dict | None = None, seed: int = 0, dtype=np.float32):
        self.config = config
        self.inventory = inventory
        self.params = params if params is not None else self._init_params(seed, dtype)
        self._check_shapes()

    # parameter naming
    @staticmethod
    def adapter_prefix(layer: int, lang: str) -> str:
        return f"adapter.{layer}.{lang}."

    @staticmethod
    def is_adapter_param(name: str) -> bool:
        return name.startswith("adapter.")

    @staticmethod
    def is_punct_head_param(name: str) -> bool:
        return name.startswith("head_punct.")

    def _init_params(self, seed, dtype) -> dict:
        cfg = self.config
        rng = np.random.default_rng(seed)
        D, F, A = cfg.hidden_dim, cfg.ffn_dim, cfg.adapter_dim
        K = self.inventory.num_classes

        def normal(*shape, std=0.02):
            return rng.normal(0.0, std, size=shape).astype(dtype)

        def zeros(*shape):
            return np.zeros(shape, dtype=dtype)

        def ones(*shape):
            return np.ones(shape, dtype=dtype)

        p = {
            "embed.tokens": normal(cfg.embed_buckets, D, std=1.0 / np.sqrt(D)),
            "embed.positions": sinusoidal_positions(cfg.max_len, D).astype(dtype),
        }
        for l in range(cfg.num_layers):
            pre = f"layer.{l}."
            p[pre + "ln1.g"] = ones(D)
            p[pre + "ln1.b"] = zeros(D)
            p[pre + "attn.wqkv"] = normal(D, 3 * D, std=1.0 / np.sqrt(D))
            p[pre + "attn.bqkv"] = zeros(3 * D)
            p[pre + "attn.wo"] = normal(D, D, std=1.0 / np.sqrt(D * 2 * cfg.num_layers))
            p[pre + "attn.bo"] = zeros(D)
            p[pre + "ln2.g"] = ones(D)
            p[pre + "ln2.b"] = zeros(D)
            p[pre + "ffn.w1"] = normal(D, F, std=1.0 / np.sqrt(D))
            p[pre + "ffn.b1"] = zeros(F)
            p[pre + "ffn.w2"] = normal(F, D, std=1.0 / np.sqrt(F * 2 * cfg.num_layers))
            p[pre + "ffn.b2"] = zeros(D)
            if cfg.use_lang_adapters:
                for lang in cfg.languages:
                    ap = self.adapter_prefix(l, lang)
                    p[ap + "down.w"] = normal(D, A, std=1.0 / np.sqrt(D))
                    p[ap + "down.b"] = zeros(A)
                    p[ap + "up.w"] = zeros(A, D)
                    p[ap + "up.b"] = zeros(D)
        p["final_ln.g"] = ones(D)
        p["final_ln.b"] = zeros(D)
        p["head_newline.w"] = normal(D, 1)
        p["head_newline.b"] = zeros(1)
        p["head_punct.w"] = normal(D, K)
        p["head_punct.b"] = zeros(K)
        return p

    def _check_shapes(self):
        cfg = self.config
        D, K = cfg.hidden_dim, self.inventory.num_classes
        expect = {
            "embed.tokens": (cfg.embed_buckets, D),
            "embed.positions": (cfg.max_len, D),
            "head_newline.w": (D, 1),
            "head_punct.w": (D, K),
            "head_punct.b": (K,),
        }
        for name, shape in expect.items():
            if self.params[name].shape != shape:
                raise ConfigurationError(f"{name} has shape {self.params[name].shape}, expected {shape}")
        for l in range(cfg.num_layers):
            if f"layer.{l}.attn.wqkv" not in self.params:
                raise ConfigurationError(f"missing parameters for layer {l}")

    @property
    def dtype(self):
        return self.params["embed.tokens"].dtype

    def astype(self, dtype) -> "EncoderModel":
        return EncoderModel(self.config, self.inventory,
                            {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "EncoderModel":
        return self.astype(self.dtype)

    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    # -- forward -----------------------------------------------------------

    def embed(self, codepoints, lang_id: str | None = None) -> np.ndarray:
        """Embedding rows (T, D) for one sequence of codepoints (ints or a str)."""
        if isinstance(codepoints, str):
            codepoints = [ord(ch) for ch in codepoints]
        ids = np.asarray(codepoints, dtype=np.int64).reshape(-1)
        if len(ids) > self.config.max_len:
            raise ValueError(f"sequence of length {len(ids)} exceeds max_len={self.config.max_len}")
        p = self.params
        return p["embed.tokens"][ids % self.config.embed_buckets] + p["embed.positions"][: len(ids)]

    def _adapter_weights(self, l, lang_ids):
        cfg = self.config
        if lang_ids is None:
            raise ConfigurationError("language adapters require lang_ids")
        unknown = sorted({lg for lg in lang_ids if lg not in cfg.languages}, key=str)
        if unknown:
            raise ConfigurationError(f"no language adapter for {unknown!r}")
        names = ("down.w", "down.b", "up.w", "up.b")
        return [np.stack([self.params[self.adapter_prefix(l, lg) + n] for lg in lang_ids]) for n in names]

    def forward(self, batch: Batch, keep_cache: bool = False):
        cfg = self.config
        p = self.params
        ids, mask = batch.ids, batch.mask
        B, T = ids.shape
        if T > cfg.max_len:
            raise ValueError(f"sequence of length {T} exceeds max_len={cfg.max_len}")
        if cfg.use_lang_adapters:
            if batch.lang_ids is None:
                raise ConfigurationError("language adapters require lang_ids")
        H = cfg.num_heads
        D = cfg.hidden_dim
        dh = D // H
        scale = 1.0 / math.sqrt(dh)
        dt = self.dtype

        bucket = ids % cfg.embed_buckets
        x = p["embed.tokens"][bucket] + p["embed.positions"][:T][None]
        key_bias = np.where(mask, 0.0, NEG_INF).astype(dt)[:, None, None, :]

        caches = []
        attn_maps = []
        for l in range(cfg.num_layers):
            pre = f"layer.{l}."
            c = {}
            a_in, c["ln1"] = _ln_forward(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
            qkv = a_in @ p[pre + "attn.wqkv"] + p[pre + "attn.bqkv"]
            qkv = qkv.reshape(B, T, 3, H, dh).transpose(2, 0, 3, 1, 4)
            q, k, v = qkv[0], qkv[1], qkv[2]
            s = (q @ k.transpose(0, 1, 3, 2)) * scale + key_bias
            att = softmax(s)
            o = (att @ v).transpose(0, 2, 1, 3).reshape(B, T, D)
            x = x + o @ p[pre + "attn.wo"] + p[pre + "attn.bo"]
            f_in, c["ln2"] = _ln_forward(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
            u = f_in @ p[pre + "ffn.w1"] + p[pre + "ffn.b1"]
            g, t = _gelu(u)
            x = x + g @ p[pre + "ffn.w2"] + p[pre + "ffn.b2"]
            if keep_cache:
                c.update(a_in=a_in, q=q, k=k, v=v, att=att, o=o, f_in=f_in, u=u, g=g, t=t)
            if cfg.use_lang_adapters:
                wd, bd, wu, bu = self._adapter_weights(l, batch.lang_ids)
                du = np.einsum("btd,bda->bta", x, wd) + bd[:, None, :]
                r, rt = _gelu(du)
                if keep_cache:
                    c.update(ad_in=x, ad_u=du, ad_r=r, ad_t=rt)
                x = x + np.einsum("bta,bad->btd", r, wu) + bu[:, None, :]
            caches.append(c)
            attn_maps.append(att)

        h, ln_f = _ln_forward(x, p["final_ln.g"], p["final_ln.b"])
        newline_logits = (h @ p["head_newline.w"])[..., 0] + p["head_newline.b"][0]
        punct_logits = h @ p["head_punct.w"] + p["head_punct.b"]
        out = ForwardOutput(h, newline_logits, punct_logits, attn_maps)
        if keep_cache:
            return out, (caches, ln_f, bucket)
        return out

    def encode(self, x: str, lang_id: str | None = None) -> ForwardOutput:
        """Forward pass over a single sequence; outputs carry no batch axis."""
        if len(x) > self.config.max_len:
            raise ValueError(f"sequence of length {len(x)} exceeds max_len={self.config.max_len}")
        out = self.forward(Batch.from_texts([x], [lang_id]))
        return ForwardOutput(out.h[0], out.newline_logits[0], out.punct_logits[0],
                             [a[0] for a in out.attention])

    # -- loss + backward ---------------------------------------------------

    def loss(self, batch: Batch, use_aux: bool | None = None, out: ForwardOutput | None = None):
        use_aux = self.config.use_aux_objective if use_aux is None else use_aux
        out = out if out is not None else self.forward(batch)
        lm = loss_main(out.newline_logits, batch.y, batch.mask)
        la = loss_aux(out.punct_logits, batch.z, batch.mask) if use_aux else 0.0
        return total_loss(lm, la, use_aux), lm, la

    def backward(self, batch: Batch, use_aux: bool | None = None):
        """Return (losses, grads) where losses = (total, main, aux) and grads
        has one array per parameter (zeros for unused adapters)."""
        use_aux = self.config.use_aux_objective if use_aux is None else use_aux
        cfg = self.config
        p = self.params
        out, (caches, ln_f, bucket) = self.forward(batch, keep_cache=True)
        losses = self.loss(batch, use_aux, out)
        if not np.isfinite(losses[0]):
            raise NumericalFault(f"non-finite loss {losses}")

        B, T = batch.ids.shape
        H = cfg.num_heads
        D = cfg.hidden_dim
        dh = D // H
        scale = 1.0 / math.sqrt(dh)
        dt = self.dtype
        grads = {k: np.zeros_like(v) for k, v in p.items()}

        dnl = loss_main_grad(out.newline_logits, batch.y, batch.mask).astype(dt)
        h2 = out.h.reshape(-1, D)
        grads["head_newline.w"] = (h2.T @ dnl.reshape(-1, 1)).astype(dt)
        grads["head_newline.b"] = np.array([dnl.sum()], dtype=dt)
        dh_ = dnl[..., None] * p["head_newline.w"][:, 0]
        if use_aux:
            dpl = loss_aux_grad(out.punct_logits, batch.z, batch.mask).astype(dt)
            grads["head_punct.w"] = h2.T @ dpl.reshape(-1, dpl.shape[-1])
            grads["head_punct.b"] = dpl.sum((0, 1))
            dh_ = dh_ + dpl @ p["head_punct.w"].T

        dx, grads["final_ln.g"], grads["final_ln.b"] = _ln_backward(dh_, p["final_ln.g"], ln_f)

        for l in reversed(range(cfg.num_layers)):
            pre = f"layer.{l}."
            c = caches[l]
            if cfg.use_lang_adapters:
                wd, bd, wu, bu = self._adapter_weights(l, batch.lang_ids)
                dr = np.einsum("btd,bad->bta", dx, wu)
                dwu = np.einsum("bta,btd->bad", c["ad_r"], dx)
                dbu = dx.sum(1)
                ddu = _gelu_backward(dr, c["ad_u"], c["ad_t"])
                dwd = np.einsum("btd,bta->bda", c["ad_in"], ddu)
                dbd = ddu.sum(1)
                dx = dx + np.einsum("bta,bda->btd", ddu, wd)
                for b, lang in enumerate(batch.lang_ids):
                    ap = self.adapter_prefix(l, lang)
                    grads[ap + "down.w"] += dwd[b]
                    grads[ap + "down.b"] += dbd[b]
                    grads[ap + "up.w"] += dwu[b]
                    grads[ap + "up.b"] += dbu[b]

            # FFN
            dg = dx @ p[pre + "ffn.w2"].T
            grads[pre + "ffn.w2"] = c["g"].reshape(-1, cfg.ffn_dim).T @ dx.reshape(-1, D)
            grads[pre + "ffn.b2"] = dx.sum((0, 1))
            du = _gelu_backward(dg, c["u"], c["t"])
            grads[pre + "ffn.w1"] = c["f_in"].reshape(-1, D).T @ du.reshape(-1, cfg.ffn_dim)
            grads[pre + "ffn.b1"] = du.sum((0, 1))
            df_in = du @ p[pre + "ffn.w1"].T
            d_ln2, grads[pre + "ln2.g"], grads[pre + "ln2.b"] = _ln_backward(df_in, p[pre + "ln2.g"], c["ln2"])
            dx = dx + d_ln2

            # attention
            do = dx @ p[pre + "attn.wo"].T
            grads[pre + "attn.wo"] = c["o"].reshape(-1, D).T @ dx.reshape(-1, D)
            grads[pre + "attn.bo"] = dx.sum((0, 1))
            do = do.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
            att = c["att"]
            datt = do @ c["v"].transpose(0, 1, 3, 2)
            dv = att.transpose(0, 1, 3, 2) @ do
            ds = att * (datt - (datt * att).sum(-1, keepdims=True)) * scale
            dq = ds @ c["k"]
            dk = ds.transpose(0, 1, 3, 2) @ c["q"]
            dqkv = np.stack([dq, dk, dv]).transpose(1, 3, 0, 2, 4).reshape(B, T, 3 * D)
            grads[pre + "attn.wqkv"] = c["a_in"].reshape(-1, D).T @ dqkv.reshape(-1, 3 * D)
            grads[pre + "attn.bqkv"] = dqkv.sum((0, 1))
            da_in = dqkv @ p[pre + "attn.wqkv"].T
            d_ln1, grads[pre + "ln1.g"], grads[pre + "ln1.b"] = _ln_backward(da_in, p[pre + "ln1.g"], c["ln1"])
            dx = dx + d_ln1

        grads["embed.positions"][:T] = dx.sum(0)
        np.add.at(grads["embed.tokens"], bucket.reshape(-1), dx.reshape(-1, D))

        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericalFault(f"non-finite gradient in {name}")
        return losses, grads
