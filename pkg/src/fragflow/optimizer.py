"""Budgeted molecule search: GA crossover seeds, PPO fine-tuning, length bandit.

The loop keeps a diversity-filtered population of the best molecules found,
seeds new trajectories from fragment crossovers of ranked parents, adapts
the denoiser with clipped-surrogate policy gradients on scored batches, and
lets a bandit pick sequence lengths that keep paying off.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .denoiser import (AdamW, DenoiserParams, DivergenceDetected, T_MAX,
                       backward_from_dlogits, forward_with_cache)
from .fragments import FragRuleSet, crossover, fragment
from .molgraph import (VALENCES, Atom, Bond, Fingerprint, MolGraph,
                       morgan_fingerprint, parse_smiles, tanimoto,
                       validate_valence, write_smiles)
from .oracle import graph_from_notation
from .sampler import VELOCITY, SampleConfig, generate_batch
from .tokenizer import TokenSeq, UnknownToken, Vocab, decode, encode


class PopulationTooSmall(ValueError):
    pass


class UnknownArm(ValueError):
    pass


class OracleFailure(RuntimeError):
    def __init__(self, call_index: int, cause: str):
        super().__init__(f"oracle call {call_index} failed: {cause}")
        self.call_index = call_index


class BudgetExhausted(Exception):
    """Raised internally when the paid-call budget is used up."""


# ---------------------------------------------------------------------------
# population


@dataclass(frozen=True)
class PopEntry:
    smiles: str
    score: float
    fp: Fingerprint


class Population:
    """Top molecules kept pairwise dissimilar.

    Entries are sorted by score descending; any two retained fingerprints
    differ by Tanimoto distance >= min_distance; canonical SMILES are unique.
    """

    def __init__(self, max_size: int = 100, min_distance: float = 0.7):
        if max_size < 1:
            raise ValueError("max_size must be >= 1")
        if not 0.0 <= min_distance <= 1.0:
            raise ValueError("min_distance must lie in [0, 1]")
        self.max_size = max_size
        self.min_distance = min_distance
        self.entries: list[PopEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def best(self, n: int) -> list[PopEntry]:
        return self.entries[:n]


def update_population(pop: Population,
                      candidates: Sequence[tuple[str, float]]) -> Population:
    """Merge scored candidates, keep the best under the diversity floor.

    Candidates are (SMILES, score); unparseable entries are skipped and a
    duplicate canonical form keeps its best score. Greedy re-selection over
    the merged pool lets a stronger newcomer displace a close incumbent.
    """
    pool: dict[str, tuple[float, Fingerprint]] = {
        e.smiles: (e.score, e.fp) for e in pop.entries}
    for smiles, score in candidates:
        g = graph_from_notation(smiles)
        if g is None:
            continue
        canonical = write_smiles(g)
        if canonical in pool and pool[canonical][0] >= score:
            continue
        fp = pool[canonical][1] if canonical in pool else morgan_fingerprint(g)
        pool[canonical] = (float(score), fp)

    ranked = sorted(pool.items(), key=lambda kv: (-kv[1][0], kv[0]))
    kept: list[PopEntry] = []
    for smiles, (score, fp) in ranked:
        if len(kept) == pop.max_size:
            break
        if all(1.0 - tanimoto(fp, e.fp) >= pop.min_distance for e in kept):
            kept.append(PopEntry(smiles, score, fp))
    pop.entries = kept
    return pop


def rank_sample_parents(pop: Population, kappa: float = 0.001,
                        rng: Optional[np.random.Generator] = None
                        ) -> tuple[PopEntry, PopEntry]:
    """Draw two distinct parents with probability 1/(rank + kappa*M)."""
    if len(pop) < 2:
        raise PopulationTooSmall(f"need >= 2 entries, have {len(pop)}")
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    rng = rng if rng is not None else np.random.default_rng()
    m = len(pop)
    weights = 1.0 / (np.arange(1, m + 1) + kappa * m)
    p = weights / weights.sum()
    first = int(rng.choice(m, p=p))
    rest = np.delete(np.arange(m), first)
    p2 = weights[rest] / weights[rest].sum()
    second = int(rest[rng.choice(m - 1, p=p2)])
    return pop.entries[first], pop.entries[second]


# ---------------------------------------------------------------------------
# mutation

MUTATION_OPS = ("swap_element", "change_bond", "append_atom", "delete_atom")
_SWAP_CHOICES = ("C", "N", "O", "S", "P", "F", "Cl", "Br", "I")
_APPEND_CHOICES = ("C", "N", "O")


def _plain(atom: Atom) -> bool:
    return not atom.aromatic and not atom.attach and atom.charge == 0


def _bond_order_sum(g: MolGraph, idx: int) -> int:
    return sum(b.order for b in g.bonds if idx in (b.a, b.b))


def _smallest_fit(symbol: str, total: int) -> Optional[int]:
    # hcount completing the smallest allowed valence >= existing bond total
    for v in VALENCES[symbol]:
        if v >= total:
            return v - total
    return None


def _try_build(atoms, bonds) -> Optional[MolGraph]:
    try:
        g = MolGraph(tuple(atoms), tuple(bonds))
    except ValueError:
        return None
    return g if validate_valence(g) else None


def _op_swap_element(g: MolGraph, rng: np.random.Generator) -> Optional[MolGraph]:
    picks = [i for i, a in enumerate(g.atoms) if _plain(a)]
    if not picks:
        return None
    i = int(rng.choice(picks))
    total = _bond_order_sum(g, i)
    options = [s for s in _SWAP_CHOICES
               if s != g.atoms[i].symbol and _smallest_fit(s, total) is not None]
    if not options:
        return None
    symbol = options[int(rng.integers(len(options)))]
    atoms = list(g.atoms)
    atoms[i] = Atom(symbol, 0, False, _smallest_fit(symbol, total), False)
    return _try_build(atoms, g.bonds)


def _op_change_bond(g: MolGraph, rng: np.random.Generator) -> Optional[MolGraph]:
    picks = [k for k, b in enumerate(g.bonds)
             if b.order in (1, 2, 3)
             and _plain(g.atoms[b.a]) and _plain(g.atoms[b.b])]
    if not picks:
        return None
    k = int(rng.choice(picks))
    bond = g.bonds[k]
    order = int(rng.choice([o for o in (1, 2, 3) if o != bond.order]))
    atoms = list(g.atoms)
    for idx in (bond.a, bond.b):
        total = _bond_order_sum(g, idx) - bond.order + order
        h = _smallest_fit(atoms[idx].symbol, total)
        if h is None:
            return None
        a = atoms[idx]
        atoms[idx] = Atom(a.symbol, a.charge, a.aromatic, h, a.attach)
    bonds = list(g.bonds)
    bonds[k] = Bond(bond.a, bond.b, order)
    return _try_build(atoms, bonds)


def _op_append_atom(g: MolGraph, rng: np.random.Generator) -> Optional[MolGraph]:
    hosts = [i for i, a in enumerate(g.atoms)
             if a.hcount >= 1 and not a.attach]
    if not hosts:
        return None
    i = int(rng.choice(hosts))
    symbol = _APPEND_CHOICES[int(rng.integers(len(_APPEND_CHOICES)))]
    atoms = list(g.atoms)
    host = atoms[i]
    atoms[i] = Atom(host.symbol, host.charge, host.aromatic,
                    host.hcount - 1, host.attach)
    atoms.append(Atom(symbol, 0, False, VALENCES[symbol][0] - 1, False))
    bonds = list(g.bonds) + [Bond(i, len(atoms) - 1, 1)]
    return _try_build(atoms, bonds)


def _op_delete_atom(g: MolGraph, rng: np.random.Generator) -> Optional[MolGraph]:
    if len(g.atoms) < 2:
        return None
    degree = [0] * len(g.atoms)
    for b in g.bonds:
        degree[b.a] += 1
        degree[b.b] += 1
    picks = [i for i, a in enumerate(g.atoms)
             if degree[i] == 1 and _plain(a)]
    if not picks:
        return None
    i = int(rng.choice(picks))
    (bond,) = [b for b in g.bonds if i in (b.a, b.b)]
    if bond.order not in (1, 2, 3):
        return None
    host_idx = bond.b if bond.a == i else bond.a
    atoms = list(g.atoms)
    host = atoms[host_idx]
    atoms[host_idx] = Atom(host.symbol, host.charge, host.aromatic,
                           host.hcount + bond.order, host.attach)
    del atoms[i]

    def shift(j: int) -> int:
        return j - 1 if j > i else j

    bonds = [Bond(shift(b.a), shift(b.b), b.order)
             for b in g.bonds if i not in (b.a, b.b)]
    return _try_build(atoms, bonds)


_OP_TABLE: dict[str, Callable] = {
    "swap_element": _op_swap_element,
    "change_bond": _op_change_bond,
    "append_atom": _op_append_atom,
    "delete_atom": _op_delete_atom,
}


def mutate(mol: MolGraph, rng: np.random.Generator,
           ops: Sequence[str] = MUTATION_OPS, retries: int = 10) -> MolGraph:
    """Apply one random structural edit; fall back to the input unchanged."""
    for name in ops:
        if name not in _OP_TABLE:
            raise ValueError(f"unknown mutation op {name!r}")
    for _ in range(retries):
        op = _OP_TABLE[ops[int(rng.integers(len(ops)))]]
        out = op(mol, rng)
        if out is not None:
            return out
    return mol


# ---------------------------------------------------------------------------
# bandit


@dataclass(frozen=True)
class BanditConfig:
    quantile: float = 0.75
    eta_q: float = 0.05
    w_best: float = 1.0
    w_quant: float = 0.5
    sigma: float = 2.0
    c: float = 0.5
    tau: float = 0.25
    eps_floor: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.quantile < 1.0:
            raise ValueError("quantile must lie in (0, 1)")
        if self.tau <= 0 or self.sigma <= 0:
            raise ValueError("tau and sigma must be positive")
        if not 0.0 <= self.eps_floor < 1.0:
            raise ValueError("eps_floor must lie in [0, 1)")


class BanditState:
    """Per-length statistics for the peak-seeking length selector."""

    def __init__(self, lengths: Sequence[int],
                 prior: Optional[Sequence[float]] = None,
                 config: BanditConfig = BanditConfig()):
        arms = tuple(sorted(set(int(n) for n in lengths)))
        if not arms or arms[0] < 1:
            raise ValueError("need at least one positive arm length")
        self.lengths = arms
        k = len(arms)
        if prior is None:
            self.prior = np.full(k, 1.0 / k)
        else:
            p = np.asarray(prior, dtype=float)
            if p.shape != (k,) or (p < 0).any() or p.sum() <= 0:
                raise ValueError("prior must be non-negative over the arms")
            self.prior = p / p.sum()
        self.config = config
        self.visits = np.zeros(k, dtype=np.int64)
        self.best = np.zeros(k)
        self.quant = np.zeros(k)
        self.best_length: Optional[int] = None
        self.best_reward = -math.inf
        self._index = {n: i for i, n in enumerate(arms)}


def bandit_probabilities(b: BanditState) -> np.ndarray:
    """Current sampling distribution over arms, floor included."""
    cfg = b.config
    k = len(b.lengths)
    seen = b.visits > 0
    if not seen.any():
        p = b.prior.copy()
    else:
        total = b.visits.sum()
        arms = np.asarray(b.lengths, dtype=float)
        s = cfg.w_best * b.best + cfg.w_quant * b.quant
        s = s + cfg.c * np.sqrt(np.log(total) / np.maximum(b.visits, 1))
        if b.best_length is not None:
            s = s + np.exp(-((arms - b.best_length) ** 2)
                           / (2.0 * cfg.sigma ** 2))
        e = np.zeros(k)
        sv = s[seen]
        e[seen] = np.exp((sv - sv.max()) / cfg.tau)
        unseen_mass = b.prior[~seen].sum()
        p = np.zeros(k)
        p[seen] = (1.0 - unseen_mass) * e[seen] / e[seen].sum()
        p[~seen] = b.prior[~seen]
    p = (1.0 - cfg.eps_floor) * p + cfg.eps_floor / k
    return p / p.sum()


def bandit_sample(b: BanditState, rng: np.random.Generator) -> int:
    p = bandit_probabilities(b)
    return b.lengths[int(rng.choice(len(p), p=p))]


def bandit_update(b: BanditState, length: int, reward: float) -> BanditState:
    if length not in b._index:
        raise UnknownArm(f"length {length} is not an arm")
    i = b._index[length]
    cfg = b.config
    b.best[i] = reward if b.visits[i] == 0 else max(b.best[i], reward)
    b.quant[i] += cfg.eta_q * (cfg.quantile - (1.0 if reward < b.quant[i]
                                               else 0.0))
    b.visits[i] += 1
    if reward > b.best_reward:
        b.best_reward = reward
        b.best_length = length
    return b


# ---------------------------------------------------------------------------
# PPO


@dataclass(frozen=True)
class PPOConfig:
    clip: float = 0.2
    epochs: int = 10
    lr: float = 1e-4
    timesteps: int = 50
    adv_eps: float = 1e-8
    update_every: int = 100
    c_neg: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip must lie in (0, 1)")
        if self.epochs < 1 or self.timesteps < 1:
            raise ValueError("epochs and timesteps must be >= 1")
        if self.adv_eps <= 0:
            raise ValueError("adv_eps must be positive")


@dataclass
class _States:
    """Noised snapshots shared by every epoch of one update."""

    xt: np.ndarray       # (B*T, L) padded
    t: np.ndarray        # (B*T,)
    lengths: np.ndarray  # (B*T,)
    x1: np.ndarray       # (B*T, L) padded targets
    noised: np.ndarray   # (B*T, L) bool, active and differing from x1
    weights: np.ndarray  # (B*T,) 1/(1-t^2)
    n_seqs: int
    timesteps: int


def _draw_states(seqs: Sequence[TokenSeq], timesteps: int, vocab_size: int,
                 rng: np.random.Generator) -> _States:
    n_seqs = len(seqs)
    cap = max(s.n for s in seqs)
    rows = n_seqs * timesteps
    xt = np.zeros((rows, cap), dtype=np.int64)
    x1 = np.zeros((rows, cap), dtype=np.int64)
    lengths = np.zeros(rows, dtype=np.int64)
    t = rng.uniform(0.0, T_MAX, size=rows)
    for j, seq in enumerate(seqs):
        sl = slice(j * timesteps, (j + 1) * timesteps)
        target = seq.active()
        x0 = rng.integers(1, vocab_size, size=(timesteps, seq.n))
        keep = rng.random((timesteps, seq.n)) < t[sl, None]
        xt[sl, :seq.n] = np.where(keep, target[None, :], x0)
        x1[sl, :seq.n] = target[None, :]
        lengths[sl] = seq.n
    pos = np.arange(cap)[None, :] < lengths[:, None]
    noised = pos & (xt != x1)
    weights = 1.0 / (1.0 - t ** 2)
    return _States(xt, t, lengths, x1, noised, weights, n_seqs, timesteps)


def _logprob_forward(params: DenoiserParams, st: _States):
    """Per-sequence Monte-Carlo log-probability and backprop ingredients."""
    logits, cache = forward_with_cache(params, st.xt, st.t, st.lengths)
    zmax = logits.max(axis=-1, keepdims=True)
    lse = zmax + np.log(np.exp(logits - zmax).sum(axis=-1, keepdims=True))
    logp_tok = np.take_along_axis(logits - lse, st.x1[..., None], -1)[..., 0]
    per_state = (logp_tok * st.noised).sum(axis=1) * st.weights
    logp = per_state.reshape(st.n_seqs, st.timesteps).mean(axis=1)
    probs = np.exp(logits - lse)
    return logp, probs, cache


def _normalized_advantages(rewards: np.ndarray, adv_eps: float,
                           c_neg: float = 1.0) -> np.ndarray:
    r = np.asarray(rewards, dtype=float)
    if r.max() == r.min():
        # zero-variance batch: advantages vanish identically
        return np.zeros_like(r)
    adv = (r - r.mean()) / (r.std() + adv_eps)
    if c_neg != 1.0:
        adv = np.where(adv < 0, c_neg * adv, adv)
    return adv


def _surrogate_coefficients(logp: np.ndarray, logp_old: np.ndarray,
                            adv: np.ndarray, clip: float
                            ) -> tuple[np.ndarray, float]:
    """Per-sequence dObjective/dlogp and the mean clipped objective."""
    rho = np.exp(np.clip(logp - logp_old, -60.0, 60.0))
    unclipped = rho * adv
    clipped = np.clip(rho, 1.0 - clip, 1.0 + clip) * adv
    objective = np.minimum(unclipped, clipped)
    gate = unclipped <= clipped
    return gate * adv * rho, float(objective.mean())


def ppo_logprob(params: DenoiserParams, x1: TokenSeq, timesteps: int,
                rng: np.random.Generator) -> float:
    """Monte-Carlo estimate of the time-weighted sequence log-likelihood."""
    if timesteps < 1:
        raise ValueError("timesteps must be >= 1")
    st = _draw_states([x1], timesteps, params.vocab_size, rng)
    logp, _, _ = _logprob_forward(params, st)
    return float(logp[0])


def ppo_update(params: DenoiserParams, old_params: DenoiserParams,
               batch: Sequence[tuple[TokenSeq, float]], cfg: PPOConfig,
               rng: np.random.Generator) -> DenoiserParams:
    """Clipped-surrogate ascent on a scored batch; returns new parameters.

    Noised states are drawn once and reused across epochs; the reference
    log-probabilities come from old_params on those same states.
    """
    if not batch:
        raise ValueError("empty batch")
    seqs = [x1 for x1, _ in batch]
    rewards = np.array([r for _, r in batch], dtype=float)
    adv = _normalized_advantages(rewards, cfg.adv_eps, cfg.c_neg)

    st = _draw_states(seqs, cfg.timesteps, params.vocab_size, rng)
    logp_old, probs_old, _ = _logprob_forward(old_params, st)
    if cfg.beta <= 0.0:
        probs_old = None

    work = params.copy()
    opt = AdamW(lr=cfg.lr, weight_decay=0.0)
    b = len(batch)
    for epoch in range(cfg.epochs):
        logp, probs, cache = _logprob_forward(work, st)
        coef, _ = _surrogate_coefficients(logp, logp_old, adv, cfg.clip)
        scale = np.repeat(coef / b, st.timesteps) * st.weights / st.timesteps
        dlogits = probs.copy()
        np.put_along_axis(
            dlogits, st.x1[..., None],
            np.take_along_axis(dlogits, st.x1[..., None], -1) - 1.0, -1)
        dlogits *= (st.noised * scale[:, None])[..., None]
        if probs_old is not None:
            # penalty beta * KL(old || new) over the same noised positions
            kl_scale = (cfg.beta / b) * st.weights / st.timesteps
            dlogits += ((probs - probs_old)
                        * (st.noised * kl_scale[:, None])[..., None])
        grads = backward_from_dlogits(work, cache, dlogits)
        opt.step(work, grads)
        for _, arr in work.arrays():
            if not np.all(np.isfinite(arr)):
                raise DivergenceDetected(epoch)
    return work


# ---------------------------------------------------------------------------
# lead scoring


def lead_score(ds: float, qed: float, sa: float, sim: float,
               delta: float) -> float:
    """Docking score scaled down as drug-likeness constraints are missed."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    penalty = (max(0.0, (0.6 - qed) / 0.6)
               + max(0.0, (sa - 4.0) / 6.0)
               + max(0.0, (delta - sim) / delta))
    return (ds / 15.0) * (1.0 - min(1.0, penalty))


# ---------------------------------------------------------------------------
# combined loop


@dataclass
class OptimizeConfig:
    vocab: Vocab
    lengths: Sequence[int]
    budget: int = 10_000
    batch_size: int = 80
    n_mutations: int = 20
    pop_size: int = 100
    min_distance: float = 0.7
    kappa: float = 0.001
    pop_update_every: int = 50
    replay_capacity: int = 300
    replay_fraction: float = 0.5
    h: float = 0.01
    rules: FragRuleSet = field(default_factory=FragRuleSet)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    enable_ppo: bool = True
    enable_bandit: bool = True
    enable_mutation: bool = True
    prescreen: Sequence[str] = ()
    max_stall_iters: int = 50
    bandit_config: BanditConfig = field(default_factory=BanditConfig)

    def __post_init__(self):
        if self.budget < 0:
            raise ValueError("budget must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.n_mutations <= self.batch_size:
            raise ValueError("n_mutations must lie in [0, batch_size]")
        if not 0.0 <= self.replay_fraction < 1.0:
            raise ValueError("replay_fraction must lie in [0, 1)")
        if not self.lengths:
            raise ValueError("need candidate lengths")


@dataclass
class OptimizeResult:
    ranked: list[tuple[str, float]]
    history: list[dict]
    params: DenoiserParams
    population: Population
    calls_made: int


def _call_oracle(oracle, smiles: str, call_index: int) -> float:
    try:
        if callable(oracle):
            value = oracle(smiles)
        else:
            value = oracle.score([smiles])[0]
    except Exception as exc:
        raise OracleFailure(call_index, repr(exc)) from exc
    return 0.0 if value is None else float(value)


def _fit_length(ids: np.ndarray, target: int, vocab_size: int,
                rng: np.random.Generator) -> np.ndarray:
    if ids.size >= target:
        return ids[:target]
    fill = rng.integers(1, vocab_size, size=target - ids.size)
    return np.concatenate([ids, fill])


def _crossover_tokens(pop: Population, cfg: OptimizeConfig,
                      rng: np.random.Generator) -> Optional[np.ndarray]:
    pa, pb = rank_sample_parents(pop, cfg.kappa, rng)
    py_rng = random.Random(int(rng.integers(1 << 62)))
    try:
        fa = fragment(parse_smiles(pa.smiles), cfg.rules, py_rng)
        fb = fragment(parse_smiles(pb.smiles), cfg.rules, py_rng)
        text = crossover(fa, fb, py_rng)
        return encode(text, cfg.vocab).active()
    except (ValueError, UnknownToken):
        return None


def optimize(denoiser: DenoiserParams, oracle, cfg: OptimizeConfig,
             rng: Optional[np.random.Generator] = None) -> OptimizeResult:
    """Run the budgeted search loop; deterministic given rng and oracle."""
    rng = rng if rng is not None else np.random.default_rng(0)
    params = denoiser.copy()
    old_params = params.copy()
    vocab_size = params.vocab_size
    pop = Population(cfg.pop_size, cfg.min_distance)
    bandit = BanditState(cfg.lengths, config=cfg.bandit_config)
    use_replay = cfg.replay_capacity > 0 and not cfg.prescreen

    cache: dict[str, float] = {}
    history: list[dict] = []
    calls = 0
    pending_pop: list[tuple[str, float]] = []
    ppo_pending: list[tuple[TokenSeq, float]] = []
    replay: list[tuple[TokenSeq, float]] = []

    def flush_pop():
        if pending_pop:
            update_population(pop, pending_pop)
            pending_pop.clear()

    def run_ppo():
        nonlocal params, old_params
        batch = list(ppo_pending)
        if use_replay and replay:
            cap = int(len(batch) * cfg.replay_fraction
                      / (1.0 - cfg.replay_fraction))
            k = min(len(replay), cap)
            if k:
                picks = rng.choice(len(replay), size=k, replace=False)
                batch += [replay[i] for i in sorted(picks)]
        params = ppo_update(params, old_params, batch, cfg.ppo, rng)
        old_params = params.copy()
        if use_replay:
            replay.extend(ppo_pending)
            del replay[:max(0, len(replay) - cfg.replay_capacity)]
        ppo_pending.clear()

    def score_one(canonical: str, source: str) -> Optional[float]:
        nonlocal calls
        if canonical in cache:
            return cache[canonical]
        if calls >= cfg.budget:
            raise BudgetExhausted
        value = _call_oracle(oracle, canonical, calls + 1)
        calls += 1
        cache[canonical] = value
        history.append({"call": calls, "smiles": canonical,
                        "score": value, "source": source})
        pending_pop.append((canonical, value))
        try:
            ppo_pending.append((encode(canonical, cfg.vocab), value))
        except (UnknownToken, ValueError):
            pass
        if len(pending_pop) >= cfg.pop_update_every:
            flush_pop()
        if cfg.enable_ppo and len(ppo_pending) >= cfg.ppo.update_every:
            run_ppo()
        return value

    for smiles in cfg.prescreen:
        g = graph_from_notation(smiles)
        if g is None:
            continue
        canonical = write_smiles(g)
        if canonical in cache:
            continue
        value = _call_oracle(oracle, canonical, 0)
        cache[canonical] = value
        history.append({"call": 0, "smiles": canonical,
                        "score": value, "source": "prescreen"})
        pending_pop.append((canonical, value))
    flush_pop()

    sample_cfg = SampleConfig(mode=VELOCITY, h=cfg.h, length=max(cfg.lengths))
    stalled = 0
    try:
        while calls < cfg.budget:
            before = calls
            with_mut = cfg.enable_mutation and len(pop) > 0
            n_off = cfg.batch_size - (cfg.n_mutations if with_mut else 0)

            inits: list[np.ndarray] = []
            arms: list[int] = []
            for _ in range(n_off):
                if cfg.enable_bandit:
                    length = bandit_sample(bandit, rng)
                else:
                    length = int(cfg.lengths[rng.integers(len(cfg.lengths))])
                ids = None
                if len(pop) >= 2:
                    ids = _crossover_tokens(pop, cfg, rng)
                if ids is None:
                    ids = rng.integers(1, vocab_size, size=length)
                inits.append(_fit_length(ids, length, vocab_size, rng))
                arms.append(length)

            seqs, _ = generate_batch(params, sample_cfg, rng, n_off,
                                     collect_stats=False, init_tokens=inits)
            candidates: list[tuple[str, str, Optional[int]]] = []
            for seq, arm in zip(seqs, arms):
                text = decode(seq, cfg.vocab)
                g = graph_from_notation(text)
                if g is None:
                    if cfg.enable_bandit:
                        bandit_update(bandit, arm, 0.0)
                    continue
                candidates.append((write_smiles(g), "offspring", arm))
            if with_mut:
                for entry in pop.best(cfg.n_mutations):
                    g2 = mutate(parse_smiles(entry.smiles), rng)
                    candidates.append((write_smiles(g2), "mutation", None))

            for canonical, source, arm in candidates:
                value = score_one(canonical, source)
                if arm is not None and cfg.enable_bandit:
                    bandit_update(bandit, arm, value)
            flush_pop()
            stalled = stalled + 1 if calls == before else 0
            if stalled >= cfg.max_stall_iters:
                break
    except BudgetExhausted:
        pass
    flush_pop()

    ranked = sorted(cache.items(), key=lambda kv: (-kv[1], kv[0]))
    return OptimizeResult(ranked, history, params, pop, calls)
