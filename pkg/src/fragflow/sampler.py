"""Flow simulation: velocity updates, refinement updates, annealing, masks.

Two step rules share one trajectory loop. The velocity rule resamples each
position from the predicted token distribution with probability h/(1-t) and
keeps it otherwise, which ends trajectories exactly on the data distribution
when the predictor is exact. The refinement rule redraws every position from
temperature-annealed, Gumbel-perturbed logits so late steps settle while
early steps explore. Constrained positions are overwritten after every step.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .denoiser import DenoiserParams, forward_with_cache, _softmax
from .tokenizer import LengthDist, TokenSeq, sample_length


class StepTooLarge(ValueError):
    pass


VELOCITY = "velocity"
REFINE = "refine"


@dataclass(frozen=True)
class ConstraintMask:
    """Positions pinned to required token ids at every trajectory step."""

    pins: tuple[tuple[int, int], ...]  # (position, token id)

    @classmethod
    def from_dict(cls, d: dict[int, int]) -> "ConstraintMask":
        return cls(tuple(sorted((int(p), int(v)) for p, v in d.items())))

    def positions(self) -> np.ndarray:
        return np.array([p for p, _ in self.pins], dtype=np.int64)

    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.pins], dtype=np.int64)

    def validate(self, n: int, vocab_size: int) -> None:
        for p, v in self.pins:
            if not 0 <= p < n:
                raise ValueError(f"mask position {p} outside length {n}")
            if not 0 <= v < vocab_size:
                raise ValueError(f"mask token id {v} outside vocabulary {vocab_size}")

    def apply(self, ids: np.ndarray) -> np.ndarray:
        out = ids.copy()
        if self.pins:
            out[..., self.positions()] = self.values()
        return out


@dataclass
class SampleConfig:
    mode: str = VELOCITY
    h: float = 0.01
    t_start: float = 0.0
    temperature: float = 1.0   # T0, annealed toward 1 as t -> 1
    noise_scale: float = 0.0   # r, damped as (1 - t)
    length: Union[int, LengthDist, None] = None
    mask: Optional[ConstraintMask] = None
    debug: bool = False        # numerically assert kernel validity each step

    def __post_init__(self):
        if self.mode not in (VELOCITY, REFINE):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 <= self.t_start < 1.0:
            raise ValueError("t_start must lie in [0, 1)")
        if self.h <= 0 or self.h > 1.0 - self.t_start:
            raise ValueError("need 0 < h <= 1 - t_start")
        if not np.isfinite(self.temperature) or self.temperature < 0:
            raise ValueError("temperature must be finite and >= 0")
        if not np.isfinite(self.noise_scale) or self.noise_scale < 0:
            raise ValueError("noise scale must be finite and >= 0")


@dataclass
class TrajectoryStats:
    """Per-step rows (step index, time, changed tokens, mean confidence)."""

    rows: list[tuple[int, float, int, float]] = field(default_factory=list)

    def record(self, step: int, t: float, changes: int, confidence: float) -> None:
        self.rows.append((step, t, changes, confidence))

    def total_changes(self) -> int:
        return sum(r[2] for r in self.rows)

    def to_csv(self, fh) -> None:
        close = False
        if isinstance(fh, (str, bytes)):
            fh = open(fh, "w", encoding="utf-8")
            close = True
        try:
            fh.write("step,t,changes,mean_confidence\n")
            for step, t, changes, conf in self.rows:
                fh.write(f"{step},{t:.6f},{changes},{conf:.6f}\n")
        finally:
            if close:
                fh.close()

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()


class NeuralPredictor:
    """Adapter giving DenoiserParams the batched predict interface."""

    def __init__(self, params: DenoiserParams):
        self.params = params
        self.vocab_size = params.vocab_size

    def predict_proba_batch(self, xt: np.ndarray, t: float) -> np.ndarray:
        xt = np.asarray(xt, dtype=np.int64)
        lengths = np.full(xt.shape[0], xt.shape[1], dtype=np.int64)
        logits, _ = forward_with_cache(
            self.params, xt, np.full(xt.shape[0], float(t)), lengths)
        return _softmax(logits)


def as_predictor(denoiser) -> "NeuralPredictor":
    if isinstance(denoiser, DenoiserParams):
        return NeuralPredictor(denoiser)
    if hasattr(denoiser, "predict_proba_batch"):
        return denoiser
    raise TypeError(f"not a denoiser: {type(denoiser).__name__}")


def anneal_temperature(t0: float, t: float) -> float:
    """Linear interpolation from T0 at t=0 to 1 at t=1."""
    return 1.0 + (t0 - 1.0) * (1.0 - t)


def _categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Row-wise draws from (..., V) probabilities."""
    cdf = probs.cumsum(axis=-1)
    cdf[..., -1] = 1.0
    u = rng.random(probs.shape[:-1])[..., None]
    return (cdf < u).sum(axis=-1)


def velocity_step_batch(probs: np.ndarray, xt: np.ndarray, t: float, h: float,
                        rng: np.random.Generator, clamp: bool = True,
                        debug: bool = False) -> np.ndarray:
    """Resample from probs with probability h/(1-t), else keep."""
    if h > 1.0 - t + 1e-12:
        if not clamp:
            raise StepTooLarge(f"h={h} exceeds remaining time {1.0 - t}")
        h = 1.0 - t
    alpha = 1.0 if t >= 1.0 else min(h / (1.0 - t), 1.0)
    if debug:
        kernel = alpha * probs.copy()
        bidx = np.arange(xt.shape[0])[:, None]
        pidx = np.arange(xt.shape[1])[None, :]
        kernel[bidx, pidx, xt] += 1.0 - alpha
        assert np.all(kernel >= -1e-12)
        assert np.allclose(kernel.sum(axis=-1), 1.0, atol=1e-9)
    resample = rng.random(xt.shape) < alpha
    drawn = _categorical(probs, rng)
    return np.where(resample, drawn, xt)


def refine_step_batch(probs: np.ndarray, t: float, cfg: SampleConfig,
                      rng: np.random.Generator) -> np.ndarray:
    """Redraw every position from softmax(log p / T(t) + r (1-t) Gumbel)."""
    temp = anneal_temperature(cfg.temperature, t)
    logits = np.log(np.maximum(probs, 1e-300))
    if temp == 0.0:
        z = np.where(logits == logits.max(axis=-1, keepdims=True), 0.0, -np.inf)
    else:
        z = logits / temp
    if cfg.noise_scale > 0.0:
        gumbel = -np.log(-np.log(np.maximum(rng.random(z.shape), 1e-300)))
        z = z + cfg.noise_scale * (1.0 - t) * gumbel
    return _categorical(_softmax(z), rng)


def velocity_step(denoiser, x_t: TokenSeq, t: float, h: float,
                  rng: np.random.Generator, clamp: bool = True) -> TokenSeq:
    pred = as_predictor(denoiser)
    probs = pred.predict_proba_batch(x_t.active()[None, :], t)
    ids = velocity_step_batch(probs, x_t.active()[None, :], t, h, rng, clamp)[0]
    return TokenSeq(ids, x_t.n)


def refine_step(denoiser, x_t: TokenSeq, t: float, cfg: SampleConfig,
                rng: np.random.Generator) -> TokenSeq:
    pred = as_predictor(denoiser)
    probs = pred.predict_proba_batch(x_t.active()[None, :], t)
    ids = refine_step_batch(probs, t, cfg, rng)[0]
    return TokenSeq(ids, x_t.n)


def _resolve_length(cfg: SampleConfig, rng: np.random.Generator) -> int:
    if isinstance(cfg.length, LengthDist):
        return sample_length(cfg.length, rng)
    if isinstance(cfg.length, (int, np.integer)) and cfg.length >= 1:
        return int(cfg.length)
    raise ValueError("config needs a positive length or a LengthDist")


def generate_batch(denoiser, cfg: SampleConfig, rng: np.random.Generator,
                   count: int, collect_stats: bool = True,
                   init_tokens: Optional[Sequence[np.ndarray]] = None
                   ) -> tuple[list[TokenSeq], list[TrajectoryStats]]:
    """Simulate `count` trajectories, batching those that share a length.

    When init_tokens is given, each trajectory starts from the supplied
    token row (its size fixes the sequence length) instead of a uniform
    draw; cfg.length is ignored.
    """
    pred = as_predictor(denoiser)
    vocab = pred.vocab_size
    if init_tokens is not None:
        inits = [np.asarray(a, dtype=np.int64) for a in init_tokens]
        if len(inits) != count:
            raise ValueError("init_tokens must supply one row per trajectory")
        for a in inits:
            if a.ndim != 1 or a.size < 1:
                raise ValueError("init rows must be non-empty 1-D arrays")
            if a.min() < 1 or a.max() >= vocab:
                raise ValueError("init tokens must be non-PAD vocabulary ids")
        lengths = [a.size for a in inits]
    else:
        inits = None
        lengths = [_resolve_length(cfg, rng) for _ in range(count)]
    if cfg.mask is not None:
        for n in set(lengths):
            cfg.mask.validate(n, vocab)

    out_seqs: list[Optional[TokenSeq]] = [None] * count
    out_stats: list[Optional[TrajectoryStats]] = [None] * count
    by_length: dict[int, list[int]] = {}
    for i, n in enumerate(lengths):
        by_length.setdefault(n, []).append(i)

    for n, members in sorted(by_length.items()):
        bsz = len(members)
        if inits is None:
            x = rng.integers(1, vocab, size=(bsz, n))
        else:
            x = np.stack([inits[i] for i in members])
        if cfg.mask is not None:
            x = cfg.mask.apply(x)
        stats = [TrajectoryStats() for _ in range(bsz)] if collect_stats else None
        t = cfg.t_start
        step = 0
        while t < 1.0 - 1e-12:
            h = min(cfg.h, 1.0 - t)
            probs = pred.predict_proba_batch(x, t)
            if collect_stats:
                conf = np.take_along_axis(probs, x[..., None], axis=-1)[..., 0]
                conf_mean = conf.mean(axis=1)
            if cfg.mode == VELOCITY:
                nxt = velocity_step_batch(probs, x, t, h, rng, clamp=True,
                                          debug=cfg.debug)
            else:
                nxt = refine_step_batch(probs, t, cfg, rng)
            if cfg.mask is not None:
                nxt = cfg.mask.apply(nxt)
            if collect_stats:
                changed = (nxt != x).sum(axis=1)
                for b in range(bsz):
                    stats[b].record(step, t, int(changed[b]), float(conf_mean[b]))
            x = nxt
            t += h
            step += 1
        for b, i in enumerate(members):
            out_seqs[i] = TokenSeq(x[b].copy(), n)
            out_stats[i] = stats[b] if collect_stats else TrajectoryStats()
    return out_seqs, out_stats


def generate(denoiser, cfg: SampleConfig, rng: np.random.Generator
             ) -> tuple[TokenSeq, TrajectoryStats]:
    seqs, stats = generate_batch(denoiser, cfg, rng, 1)
    return seqs[0], stats[0]
