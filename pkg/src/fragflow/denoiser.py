"""Trainable categorical denoiser p(x1_i | x_t, t) and an exact tabular oracle.

The network is a small bidirectional transformer (token embeddings plus
fixed sinusoidal position and time features, pre-normalized single-head
attention blocks, feed-forward expansions, linear output head) implemented
in float64 numpy with handwritten reverse-mode gradients. The training loss
is the time-weighted cross entropy

    L = mean over batch of  -(1 / (1 - t^2)) * sum_i log p(x1_i | x_t)

summed over non-PAD positions. PAD positions are masked out of attention
keys and excluded from the loss.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .tokenizer import TokenSeq

T_MAX = 0.999
_LN_EPS = 1e-5
_GELU_C = 0.7978845608028654  # sqrt(2/pi)


class LengthMismatch(ValueError):
    pass


class DivergenceDetected(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"loss became non-finite at step {step}")
        self.step = step


@dataclass
class Block:
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    w1: np.ndarray
    w2: np.ndarray

    def arrays(self):
        yield from (("ln1_g", self.ln1_g), ("ln1_b", self.ln1_b),
                    ("wq", self.wq), ("wk", self.wk), ("wv", self.wv),
                    ("wo", self.wo), ("ln2_g", self.ln2_g), ("ln2_b", self.ln2_b),
                    ("w1", self.w1), ("w2", self.w2))


@dataclass
class DenoiserParams:
    """All trainable arrays; shapes derive from (V, d, B)."""

    embed: np.ndarray       # (V, d)
    time_scale: np.ndarray  # (d,)
    blocks: list[Block]
    out_proj: np.ndarray    # (d, V)

    @property
    def vocab_size(self) -> int:
        return self.embed.shape[0]

    @property
    def dim(self) -> int:
        return self.embed.shape[1]

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def arrays(self):
        yield ("embed", self.embed)
        yield ("time_scale", self.time_scale)
        for bi, blk in enumerate(self.blocks):
            for name, arr in blk.arrays():
                yield (f"block{bi}.{name}", arr)
        yield ("out_proj", self.out_proj)

    def copy(self) -> "DenoiserParams":
        blocks = [Block(*(a.copy() for _, a in blk.arrays())) for blk in self.blocks]
        return DenoiserParams(self.embed.copy(), self.time_scale.copy(),
                              blocks, self.out_proj.copy())

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.arrays()])

    def from_flat(self, flat: np.ndarray) -> "DenoiserParams":
        out = self.copy()
        pos = 0
        for _, arr in out.arrays():
            size = arr.size
            arr[...] = flat[pos : pos + size].reshape(arr.shape)
            pos += size
        if pos != flat.size:
            raise ValueError("flat vector size mismatch")
        return out

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "DenoiserParams":
        out = self.copy()
        for _, arr in out.arrays():
            arr[...] = fn(arr)
        return out


def init_params(vocab_size: int, dim: int = 64, n_blocks: int = 2,
                rng: Optional[np.random.Generator] = None) -> DenoiserParams:
    rng = rng or np.random.default_rng(0)
    d = dim

    def mat(rows, cols, scale):
        return rng.normal(0.0, scale, size=(rows, cols))

    blocks = []
    for _ in range(n_blocks):
        blocks.append(Block(
            ln1_g=np.ones(d), ln1_b=np.zeros(d),
            wq=mat(d, d, d ** -0.5), wk=mat(d, d, d ** -0.5),
            wv=mat(d, d, d ** -0.5), wo=mat(d, d, d ** -0.5),
            ln2_g=np.ones(d), ln2_b=np.zeros(d),
            w1=mat(d, 4 * d, d ** -0.5), w2=mat(4 * d, d, (4 * d) ** -0.5)))
    return DenoiserParams(
        embed=mat(vocab_size, d, 0.5),
        time_scale=np.full(d, 0.5),
        blocks=blocks,
        out_proj=mat(d, vocab_size, d ** -0.5))


# ---------------------------------------------------------------------------
# fixed (non-trainable) feature maps

def sinusoidal_features(values: np.ndarray, dim: int, scale: float) -> np.ndarray:
    """Interleaved sin/cos features of `values * scale` over `dim` channels."""
    half = dim // 2
    freqs = np.power(10000.0, -np.arange(half) / half)
    angle = np.asarray(values, dtype=np.float64)[..., None] * scale * freqs
    out = np.zeros(values.shape + (dim,), dtype=np.float64)
    out[..., 0 : 2 * half : 2] = np.sin(angle)
    out[..., 1 : 2 * half : 2] = np.cos(angle)
    return out


def positional_encoding(length: int, dim: int) -> np.ndarray:
    return sinusoidal_features(np.arange(length, dtype=np.float64), dim, 1.0)


def time_features(t: np.ndarray, dim: int) -> np.ndarray:
    return sinusoidal_features(np.asarray(t, dtype=np.float64), dim, 1000.0)


# ---------------------------------------------------------------------------
# interpolation path

def noise_interpolate(x0: TokenSeq, x1: TokenSeq, t: float,
                      rng: np.random.Generator) -> TokenSeq:
    """Per position, take x1 with probability t, else x0."""
    if x0.n != x1.n or x0.capacity != x1.capacity:
        raise LengthMismatch(f"lengths differ: {x0.n} vs {x1.n}")
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    take = rng.random(x0.n) < t
    ids = x0.ids.copy()
    ids[: x0.n] = np.where(take, x1.ids[: x1.n], x0.ids[: x0.n])
    return TokenSeq(ids, x0.n)


# ---------------------------------------------------------------------------
# forward / backward

def _layernorm_forward(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv
    return xhat * g + b, (xhat, inv, g)


def _layernorm_backward(dy, cache):
    xhat, inv, g = cache
    dg = np.einsum("bld,bld->d", dy, xhat)
    db = dy.sum(axis=(0, 1))
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def _gelu_forward(x):
    u = _GELU_C * (x + 0.044715 * x ** 3)
    th = np.tanh(u)
    return 0.5 * x * (1.0 + th), (x, th)


def _gelu_backward(dy, cache):
    x, th = cache
    du = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
    return dy * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th ** 2) * du)


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward_with_cache(params: DenoiserParams, x: np.ndarray, t: np.ndarray,
                       lengths: np.ndarray, use_positional: bool = True):
    """Batched forward pass.

    x: (B, L) token ids, t: (B,) times, lengths: (B,) active lengths.
    Returns logits (B, L, V) and the cache needed for backward().
    """
    x = np.asarray(x, dtype=np.int64)
    t = np.asarray(t, dtype=np.float64)
    lengths = np.asarray(lengths, dtype=np.int64)
    bsz, seq = x.shape
    d = params.dim
    scale = 1.0 / np.sqrt(d)

    tfe = time_features(t, d)                      # (B, d)
    h = params.embed[x].copy()                     # (B, L, d)
    if use_positional:
        h += positional_encoding(seq, d)[None]
    h += (params.time_scale * tfe)[:, None, :]

    key_mask = np.arange(seq)[None, :] < lengths[:, None]   # (B, L) True=real
    cache = {"x": x, "tfe": tfe, "key_mask": key_mask, "blocks": [],
             "use_positional": use_positional}

    for blk in params.blocks:
        a_in, ln1c = _layernorm_forward(h, blk.ln1_g, blk.ln1_b)
        q = a_in @ blk.wq
        k = a_in @ blk.wk
        v = a_in @ blk.wv
        scores = (q @ k.transpose(0, 2, 1)) * scale
        scores = np.where(key_mask[:, None, :], scores, -1e30)
        att = _softmax(scores)
        ctx = att @ v
        attn_out = ctx @ blk.wo
        h1 = h + attn_out
        f_in, ln2c = _layernorm_forward(h1, blk.ln2_g, blk.ln2_b)
        z1 = f_in @ blk.w1
        a1, geluc = _gelu_forward(z1)
        f2 = a1 @ blk.w2
        h2 = h1 + f2
        cache["blocks"].append(
            {"ln1c": ln1c, "a_in": a_in, "q": q, "k": k, "v": v, "att": att,
             "ctx": ctx, "ln2c": ln2c, "f_in": f_in, "a1": a1, "geluc": geluc})
        h = h2

    cache["h_final"] = h
    logits = h @ params.out_proj
    return logits, cache


def backward_from_dlogits(params: DenoiserParams, cache: dict,
                          dlogits: np.ndarray) -> DenoiserParams:
    """Gradients of any scalar whose logit-gradient is `dlogits` (B, L, V)."""
    d = params.dim
    scale = 1.0 / np.sqrt(d)
    grads = params.map(np.zeros_like)

    h_final = cache["h_final"]
    grads.out_proj[...] = np.einsum("bld,blv->dv", h_final, dlogits)
    dh = dlogits @ params.out_proj.T

    for blk, gblk, c in zip(reversed(params.blocks),
                            reversed(grads.blocks),
                            reversed(cache["blocks"])):
        # feed-forward sublayer
        df2 = dh
        da1 = df2 @ blk.w2.T
        gblk.w2[...] = np.einsum("blh,bld->hd", c["a1"], df2)
        dz1 = _gelu_backward(da1, c["geluc"])
        gblk.w1[...] = np.einsum("bld,blh->dh", c["f_in"], dz1)
        df_in = dz1 @ blk.w1.T
        dh1_ln, gblk.ln2_g[...], gblk.ln2_b[...] = _layernorm_backward(df_in, c["ln2c"])
        dh1 = dh + dh1_ln

        # attention sublayer
        dattn_out = dh1
        dctx = dattn_out @ blk.wo.T
        gblk.wo[...] = np.einsum("bld,ble->de", c["ctx"], dattn_out)
        datt = dctx @ c["v"].transpose(0, 2, 1)
        dv = c["att"].transpose(0, 2, 1) @ dctx
        att = c["att"]
        dscores = att * (datt - (att * datt).sum(axis=-1, keepdims=True))
        dq = dscores @ c["k"] * scale
        dk = dscores.transpose(0, 2, 1) @ c["q"] * scale
        a_in = c["a_in"]
        gblk.wq[...] = np.einsum("bld,ble->de", a_in, dq)
        gblk.wk[...] = np.einsum("bld,ble->de", a_in, dk)
        gblk.wv[...] = np.einsum("bld,ble->de", a_in, dv)
        da_in = dq @ blk.wq.T + dk @ blk.wk.T + dv @ blk.wv.T
        dh_ln, gblk.ln1_g[...], gblk.ln1_b[...] = _layernorm_backward(da_in, c["ln1c"])
        dh = dh1 + dh_ln

    # input features
    np.add.at(grads.embed, cache["x"], dh)
    grads.time_scale[...] = np.einsum("bld,bd->d", dh, cache["tfe"])
    return grads


def forward(params: DenoiserParams, x_t: TokenSeq, t: float,
            use_positional: bool = True) -> np.ndarray:
    """Logits (n, V) for one sequence's active positions."""
    logits, _ = forward_with_cache(
        params, x_t.ids[None, :], np.array([t]), np.array([x_t.n]),
        use_positional)
    return logits[0, : x_t.n]


def predict_proba(params: DenoiserParams, x_t: TokenSeq, t: float) -> np.ndarray:
    return _softmax(forward(params, x_t, t))


# ---------------------------------------------------------------------------
# loss and gradient

@dataclass
class TrainBatch:
    """Aligned arrays for one batch; sequences share one padded capacity."""

    x0: np.ndarray   # (B, L)
    x1: np.ndarray   # (B, L)
    xt: np.ndarray   # (B, L)
    t: np.ndarray    # (B,)
    lengths: np.ndarray  # (B,)

    def __post_init__(self):
        shapes = {self.x0.shape, self.x1.shape, self.xt.shape}
        if len(shapes) != 1:
            raise LengthMismatch("batch arrays disagree in shape")
        if np.any(self.t < 0) or np.any(self.t > T_MAX):
            raise ValueError(f"t outside [0, {T_MAX}]")

    @property
    def size(self) -> int:
        return self.x0.shape[0]


def make_batch(seqs: Sequence[TokenSeq], vocab_size: int,
               rng: np.random.Generator,
               t: Optional[np.ndarray] = None) -> TrainBatch:
    """Draw x0 uniformly over non-PAD ids, t ~ U(0, t_max), and interpolate."""
    if not seqs:
        raise ValueError("empty batch")
    lengths = np.array([s.n for s in seqs], dtype=np.int64)
    cap = int(max(s.capacity for s in seqs))
    bsz = len(seqs)
    x1 = np.zeros((bsz, cap), dtype=np.int64)
    for i, s in enumerate(seqs):
        x1[i, : s.n] = s.active()
    pos_mask = np.arange(cap)[None, :] < lengths[:, None]
    x0 = np.where(pos_mask, rng.integers(1, vocab_size, size=(bsz, cap)), 0)
    if t is None:
        t = rng.uniform(0.0, T_MAX, size=bsz)
    t = np.minimum(np.asarray(t, dtype=np.float64), T_MAX)
    take = rng.random((bsz, cap)) < t[:, None]
    xt = np.where(pos_mask & take, x1, x0)
    return TrainBatch(x0=x0, x1=x1, xt=xt, t=t, lengths=lengths)


def _weights(t: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 - np.asarray(t) ** 2)


def loss(params: DenoiserParams, batch: TrainBatch) -> float:
    value, _, _ = _loss_forward(params, batch)
    return value


def _loss_forward(params: DenoiserParams, batch: TrainBatch):
    logits, cache = forward_with_cache(params, batch.xt, batch.t, batch.lengths)
    logp = logits - logits.max(axis=-1, keepdims=True)
    logp = logp - np.log(np.exp(logp).sum(axis=-1, keepdims=True))
    bsz, cap = batch.xt.shape
    pos_mask = np.arange(cap)[None, :] < batch.lengths[:, None]
    picked = np.take_along_axis(logp, batch.x1[..., None], axis=-1)[..., 0]
    nll = -(picked * pos_mask).sum(axis=1)
    value = float(np.mean(_weights(batch.t) * nll))
    return value, (logp, pos_mask, cache), logits


def grad(params: DenoiserParams, batch: TrainBatch) -> DenoiserParams:
    _, (logp, pos_mask, cache), _ = _loss_forward(params, batch)
    probs = np.exp(logp)
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, batch.x1[..., None], 1.0, axis=-1)
    w = _weights(batch.t)[:, None, None] / batch.size
    dlogits = (probs - onehot) * pos_mask[..., None] * w
    return backward_from_dlogits(params, cache, dlogits)


def loss_and_grad(params: DenoiserParams, batch: TrainBatch):
    value, (logp, pos_mask, cache), _ = _loss_forward(params, batch)
    probs = np.exp(logp)
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, batch.x1[..., None], 1.0, axis=-1)
    w = _weights(batch.t)[:, None, None] / batch.size
    dlogits = (probs - onehot) * pos_mask[..., None] * w
    return value, backward_from_dlogits(params, cache, dlogits)


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamW:
    """Decoupled-weight-decay adaptive moments; (b1, b2) = (0.99, 0.999)."""

    lr: float = 1e-4
    beta1: float = 0.99
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step_count: int = 0
    m: Optional[DenoiserParams] = None
    v: Optional[DenoiserParams] = None

    def step(self, params: DenoiserParams, grads: DenoiserParams) -> None:
        if self.m is None:
            self.m = params.map(np.zeros_like)
            self.v = params.map(np.zeros_like)
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for (_, p), (_, g), (_, m), (_, v) in zip(
                params.arrays(), grads.arrays(), self.m.arrays(), self.v.arrays()):
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p[...] -= self.lr * (update + self.weight_decay * p)


def train(params: DenoiserParams, seqs: Sequence[TokenSeq], epochs: int,
          lr: float = 1e-4, rng: Optional[np.random.Generator] = None,
          batch_size: int = 16, weight_decay: float = 0.01,
          log: Optional[Callable[[int, float], None]] = None) -> DenoiserParams:
    """AdamW training over length-grouped batches; deterministic given rng.

    Raises DivergenceDetected with the step index if the loss goes non-finite.
    """
    rng = rng or np.random.default_rng(0)
    params = params.copy()
    opt = AdamW(lr=lr, weight_decay=weight_decay)
    by_length: dict[int, list[TokenSeq]] = {}
    for s in seqs:
        by_length.setdefault(s.n, []).append(s)
    groups = [by_length[n] for n in sorted(by_length)]
    step = 0
    for _ in range(epochs):
        order = []
        for gi, group in enumerate(groups):
            idx = rng.permutation(len(group))
            for start in range(0, len(group), batch_size):
                order.append((gi, idx[start : start + batch_size]))
        perm = rng.permutation(len(order))
        for oi in perm:
            gi, members = order[oi]
            batch_seqs = [groups[gi][j] for j in members]
            batch = make_batch(batch_seqs, params.vocab_size, rng)
            value, grads = loss_and_grad(params, batch)
            if not np.isfinite(value):
                raise DivergenceDetected(step)
            opt.step(params, grads)
            if log is not None:
                log(step, value)
            step += 1
    return params


# ---------------------------------------------------------------------------
# serialization

_MAGIC_VERSION = 1


def save_params(params: DenoiserParams, path) -> None:
    """Header (V, d, B, version) then arrays in declaration order, float32 LE."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4i", params.vocab_size, params.dim,
                             params.n_blocks, _MAGIC_VERSION))
        for _, arr in params.arrays():
            fh.write(arr.astype("<f4").tobytes())


def load_params(path) -> DenoiserParams:
    with open(path, "rb") as fh:
        v, d, b, version = struct.unpack("<4i", fh.read(16))
        if version != _MAGIC_VERSION:
            raise ValueError(f"unsupported params version {version}")
        params = init_params(v, d, b, np.random.default_rng(0))
        for _, arr in params.arrays():
            raw = fh.read(arr.size * 4)
            if len(raw) != arr.size * 4:
                raise ValueError("truncated params file")
            arr[...] = np.frombuffer(raw, dtype="<f4").reshape(arr.shape)
        if fh.read(1):
            raise ValueError("trailing bytes in params file")
    return params


# ---------------------------------------------------------------------------
# exact posterior oracle

class TabularDenoiser:
    """Exact p(x1_i | x_t, t) by Bayes enumeration over a small dataset.

    The posterior conditions on the active length: only dataset elements of
    the same length compete. The source x0 is uniform over non-PAD ids, so
    the per-position likelihood of x_t given candidate y is
    t + (1-t)/(V-1) on matches and (1-t)/(V-1) on mismatches.
    """

    def __init__(self, dataset: Sequence[TokenSeq], vocab_size: int):
        if not dataset:
            raise ValueError("empty dataset")
        if len(dataset) > 64 or any(s.n > 12 for s in dataset):
            raise ValueError("tabular oracle is for small datasets only")
        self.vocab_size = vocab_size
        self.by_length: dict[int, np.ndarray] = {}
        for s in dataset:
            rows = self.by_length.setdefault(s.n, [])
            rows.append(s.active())
        self.by_length = {n: np.stack(rows) for n, rows in self.by_length.items()}

    def posterior_weights(self, xt: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
        """(dataset rows of len(xt), normalized weights) for one sequence."""
        n = len(xt)
        data = self.by_length.get(n)
        if data is None:
            return np.zeros((0, n), dtype=np.int64), np.zeros(0)
        v = self.vocab_size
        t = min(t, 1.0 - 1e-12)  # keep mismatch likelihood positive at t=1
        match = data == xt[None, :]
        like = np.where(match, t + (1.0 - t) / (v - 1), (1.0 - t) / (v - 1))
        logw = np.log(like).sum(axis=1)
        logw -= logw.max()
        w = np.exp(logw)
        return data, w / w.sum()

    def predict_proba(self, x_t: TokenSeq, t: float) -> np.ndarray:
        return self.predict_proba_batch(x_t.active()[None, :], t)[0]

    def predict_proba_batch(self, xt: np.ndarray, t: float) -> np.ndarray:
        """xt: (B, n) active ids, same length; returns (B, n, V)."""
        xt = np.asarray(xt, dtype=np.int64)
        bsz, n = xt.shape
        v = self.vocab_size
        data = self.by_length.get(n)
        out = np.zeros((bsz, n, v))
        if data is None:
            out[:, :, 1:] = 1.0 / (v - 1)
            return out
        t = min(t, 1.0 - 1e-12)  # keep mismatch likelihood positive at t=1
        match = data[None, :, :] == xt[:, None, :]          # (B, M, n)
        like = np.where(match, t + (1.0 - t) / (v - 1), (1.0 - t) / (v - 1))
        logw = np.log(like).sum(axis=2)                      # (B, M)
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        w /= w.sum(axis=1, keepdims=True)
        # scatter: out[b, i, data[m, i]] += w[b, m]
        for m in range(data.shape[0]):
            cols = data[m]
            out[:, np.arange(n), cols] += w[:, m : m + 1]
        return out
