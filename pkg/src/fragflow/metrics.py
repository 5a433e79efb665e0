"""Generation metrics and the optimization benchmark curve.

evaluate() scores a batch of fragmented-SMILES samples for validity,
uniqueness, diversity and quality; auc_top10() summarizes an optimization
history as the per-call running mean of the ten best scores.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .molgraph import MolGraph, morgan_fingerprint, tanimoto, write_smiles
from .oracle import graph_from_notation
from .sampler import SampleConfig, generate_batch
from .tokenizer import Vocab, decode


#: scorer(graph) -> (qed-like score, sa-like score) for the quality gate
QualityScorer = Callable[[MolGraph], tuple[float, float]]


@dataclass(frozen=True)
class EvalReport:
    validity: float
    uniqueness: float
    diversity: float
    quality: float
    n_samples: int
    oracle_name: str = "none"

    def __post_init__(self):
        for name in ("validity", "uniqueness", "diversity", "quality"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


def evaluate(samples: Sequence[str], scorer: Optional[QualityScorer] = None,
             oracle_name: str = "none", qed_min: float = 0.6,
             sa_max: float = 4.0, subsample_cap: int = 1000,
             seed: int = 0) -> EvalReport:
    """Validity, uniqueness, diversity, quality for a sample batch.

    validity    parseable notation that reassembles into a valence-legal molecule
    uniqueness  distinct canonical SMILES / valid
    diversity   mean pairwise Tanimoto distance over <= subsample_cap valid picks
    quality     distinct valid molecules passing the oracle gates / all samples
    """
    if not samples:
        raise ValueError("empty sample list")
    n = len(samples)
    graphs: list[MolGraph] = []
    canon: list[str] = []
    for s in samples:
        g = graph_from_notation(s)
        if g is not None:
            graphs.append(g)
            canon.append(write_smiles(g))
    n_valid = len(graphs)
    if n_valid == 0:
        return EvalReport(0.0, 0.0, 0.0, 0.0, n, oracle_name)

    validity = n_valid / n
    distinct: dict[str, MolGraph] = {}
    for c, g in zip(canon, graphs):
        distinct.setdefault(c, g)
    uniqueness = len(distinct) / n_valid

    rng = np.random.default_rng(seed)
    if n_valid > subsample_cap:
        pick = rng.choice(n_valid, size=subsample_cap, replace=False)
        sub = [graphs[i] for i in pick]
    else:
        sub = graphs
    diversity = 0.0
    if len(sub) > 1:
        fps = [morgan_fingerprint(g) for g in sub]
        total = 0.0
        pairs = 0
        for i in range(len(fps)):
            for j in range(i + 1, len(fps)):
                total += 1.0 - tanimoto(fps[i], fps[j])
                pairs += 1
        diversity = total / pairs

    quality = 0.0
    if scorer is not None:
        passing = 0
        for g in distinct.values():
            qed, sa = scorer(g)
            if qed >= qed_min and sa <= sa_max:
                passing += 1
        quality = passing / n

    return EvalReport(validity, uniqueness, diversity, quality, n, oracle_name)


def auc_top10(history: Sequence, budget: Optional[int] = None,
              k: int = 10) -> float:
    """Mean over calls 1..budget of the running top-k score average.

    History entries are (oracle call index, score) pairs or mappings with
    "call" and "score" keys; entries indexed 0 are free pre-screens known
    before the first paid call. Before any score is known the running mean
    counts as 0.
    """
    if not history:
        raise ValueError("empty history")
    entries = []
    for e in history:
        if isinstance(e, Mapping):
            entries.append((int(e["call"]), float(e["score"])))
        else:
            call, score = e
            entries.append((int(call), float(score)))
    for _, s in entries:
        if not 0.0 <= s <= 1.0:
            raise ValueError(f"score {s} outside [0, 1]")
    entries.sort(key=lambda e: e[0])
    if budget is None:
        budget = max(e[0] for e in entries)
    if budget < 1:
        raise ValueError("budget must be >= 1")

    heap: list[float] = []  # min-heap of current top-k

    def push(score: float):
        if len(heap) < k:
            heapq.heappush(heap, score)
        elif score > heap[0]:
            heapq.heapreplace(heap, score)

    idx = 0
    while idx < len(entries) and entries[idx][0] <= 0:
        push(entries[idx][1])
        idx += 1

    total = 0.0
    for call in range(1, budget + 1):
        while idx < len(entries) and entries[idx][0] <= call:
            push(entries[idx][1])
            idx += 1
        if heap:
            total += sum(heap) / len(heap)
    return total / budget


SCAN_CSV_HEADER = "T0,r,h,validity,uniqueness,diversity,quality,n_samples,seed"


def quality_diversity_scan(denoiser, vocab: Vocab,
                           grid: Sequence[tuple[float, float]],
                           base: SampleConfig, n_samples: int,
                           scorer: Optional[QualityScorer] = None,
                           oracle_name: str = "none",
                           seed: int = 0) -> list[dict]:
    """One evaluate() row per (T0, r) grid point at the base config's h."""
    if not grid:
        raise ValueError("empty grid")
    rows = []
    for t0, r in grid:
        cfg = replace(base, temperature=t0, noise_scale=r)
        rng = np.random.default_rng(seed)
        seqs, _ = generate_batch(denoiser, cfg, rng, n_samples, collect_stats=False)
        texts = [decode(s, vocab) for s in seqs]
        report = evaluate(texts, scorer, oracle_name, seed=seed)
        rows.append({
            "T0": t0, "r": r, "h": cfg.h,
            "validity": report.validity, "uniqueness": report.uniqueness,
            "diversity": report.diversity, "quality": report.quality,
            "n_samples": report.n_samples, "seed": seed,
        })
    return rows


def scan_to_csv(rows: Sequence[dict], fh) -> None:
    close = False
    if isinstance(fh, (str, bytes)):
        fh = open(fh, "w", encoding="utf-8")
        close = True
    try:
        fh.write(SCAN_CSV_HEADER + "\n")
        for row in rows:
            fh.write(f"{row['T0']},{row['r']},{row['h']},"
                     f"{row['validity']:.6f},{row['uniqueness']:.6f},"
                     f"{row['diversity']:.6f},{row['quality']:.6f},"
                     f"{row['n_samples']},{row['seed']}\n")
    finally:
        if close:
            fh.close()
