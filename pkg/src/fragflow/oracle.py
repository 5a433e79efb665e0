"""Scoring: built-in surrogate properties, toy oracles, external scorers.

The surrogate QED and SA are intentionally simple pinned formulas, labeled
as surrogates everywhere; threshold claims against published descriptor
values belong to an external exact scorer spoken to over the JSON-lines
protocol implemented by ExternalScorer.
"""

from __future__ import annotations

import json
import math
import queue
import subprocess
import threading
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .fragments import parse_notation, reassemble
from .molgraph import (
    DescriptorSet, MolGraph, atom_environments, descriptors,
    morgan_fingerprint, parse_smiles, ring_sizes, tanimoto, write_smiles,
)


class MissingFrequencyTable(RuntimeError):
    pass


class Timeout(RuntimeError):
    pass


class ProtocolViolation(RuntimeError):
    def __init__(self, message: str, raw_line: Optional[str] = None):
        super().__init__(message if raw_line is None
                         else f"{message}; raw line: {raw_line!r}")
        self.raw_line = raw_line


class ChildExited(RuntimeError):
    def __init__(self, returncode: Optional[int], raw_line: Optional[str] = None):
        super().__init__(f"scorer child exited (returncode={returncode})"
                         + (f"; last output: {raw_line!r}" if raw_line else ""))
        self.returncode = returncode
        self.raw_line = raw_line


# ---------------------------------------------------------------------------
# notation helpers

def graph_from_notation(text: str) -> Optional[MolGraph]:
    """Reassembled molecule for fragmented-SMILES text, or None if invalid."""
    try:
        return reassemble(parse_notation(text))
    except ValueError:  # parse, pairing and valence failures alike
        return None


# ---------------------------------------------------------------------------
# surrogate drug-likeness

def _trapezoid(x: float, a: float, b: float, c: float, d: float,
               floor: float = 0.01) -> float:
    """1 on [b, c], linear shoulders over [a, b] and [c, d], floor outside."""
    if x < a or x > d:
        return floor
    if x < b:
        return floor + (1.0 - floor) * (x - a) / (b - a)
    if x <= c:
        return 1.0
    return floor + (1.0 - floor) * (d - x) / (d - c)


#: pinned desirability break-points: (a, b, c, d) per descriptor
QED_CURVES = {
    "mol_weight": (150.0, 250.0, 380.0, 550.0),
    "rotatable_bonds": (-1.0, 0.0, 5.0, 12.0),
    "hbond_donors": (-1.0, 0.0, 2.0, 6.0),
    "hbond_acceptors": (-1.0, 0.0, 4.0, 10.0),
    "aromatic_ring_count": (-2.0, 1.0, 2.0, 5.0),
}


def surrogate_qed(d: DescriptorSet) -> float:
    """Geometric mean of the pinned desirability curves; in [0, 1]."""
    logs = 0.0
    for name, (a, b, c, e) in QED_CURVES.items():
        logs += math.log(_trapezoid(float(getattr(d, name)), a, b, c, e))
    return math.exp(logs / len(QED_CURVES))


# ---------------------------------------------------------------------------
# surrogate synthetic accessibility

@dataclass(frozen=True)
class FrequencyTable:
    """Corpus occurrence counts of fingerprint environments."""

    counts: dict[int, int]
    total: int

    @classmethod
    def from_graphs(cls, graphs: Iterable[MolGraph], radius: int = 1) -> "FrequencyTable":
        counter: Counter = Counter()
        for g in graphs:
            counter.update(atom_environments(g, radius))
        return cls(dict(counter), sum(counter.values()))

    def to_json(self) -> str:
        return json.dumps({"total": self.total,
                           "counts": {str(k): v for k, v in self.counts.items()}})

    @classmethod
    def from_json(cls, text: str) -> "FrequencyTable":
        obj = json.loads(text)
        return cls({int(k): v for k, v in obj["counts"].items()}, obj["total"])


def surrogate_sa(g: MolGraph, table: Optional[FrequencyTable],
                 radius: int = 1) -> float:
    """Size, ring complexity and environment novelty, clamped to [1, 10].

    score = 1 + max(0, (heavy - 25)/12)
              + 0.4 * max(0, rings - 2) + 0.5 * (rings larger than 7)
              + 4 * fraction of environments unseen in the corpus table
    """
    if table is None or table.total == 0:
        raise MissingFrequencyTable("surrogate SA needs a corpus frequency table")
    d = descriptors(g)
    size_pen = max(0.0, (d.heavy_atoms - 25) / 12.0)
    sizes = ring_sizes(g)
    ring_pen = 0.4 * max(0, len(sizes) - 2) + 0.5 * sum(1 for s in sizes if s > 7)
    envs = atom_environments(g, radius)
    unseen = sum(1 for e in envs if e not in table.counts)
    rarity = 4.0 * unseen / len(envs) if envs else 0.0
    return float(min(10.0, max(1.0, 1.0 + size_pen + ring_pen + rarity)))


# ---------------------------------------------------------------------------
# toy optimization oracles

def carbon_fraction(text: str) -> float:
    """Carbon share of heavy atoms after reassembly; 0 for invalid input."""
    g = graph_from_notation(text)
    if g is None or g.heavy_atom_count() == 0:
        return 0.0
    carbons = sum(1 for a in g.atoms if a.symbol == "C")
    return carbons / g.heavy_atom_count()


def similarity_to_target(text: str, target: str) -> float:
    """Tanimoto similarity of Morgan fingerprints; 0 for invalid input."""
    g = graph_from_notation(text)
    if g is None:
        return 0.0
    tg = graph_from_notation(target)
    if tg is None:
        raise ValueError(f"unparseable target {target!r}")
    return tanimoto(morgan_fingerprint(g), morgan_fingerprint(tg))


def make_similarity_oracle(target: str):
    tg = graph_from_notation(target)
    if tg is None:
        raise ValueError(f"unparseable target {target!r}")
    target_fp = morgan_fingerprint(tg)

    def score(text: str) -> float:
        g = graph_from_notation(text)
        if g is None:
            return 0.0
        return tanimoto(morgan_fingerprint(g), target_fp)

    return score


def length_gaussian(text: str, target_length: int, sigma: float) -> float:
    """exp(-(heavy - L*)^2 / (2 sigma^2)); 0 for invalid input."""
    g = graph_from_notation(text)
    if g is None:
        return 0.0
    return math.exp(-((g.heavy_atom_count() - target_length) ** 2)
                    / (2.0 * sigma ** 2))


# ---------------------------------------------------------------------------
# external scorer protocol

@dataclass(frozen=True)
class OracleRequest:
    id: int
    smiles: tuple[str, ...]

    def to_json(self) -> str:
        return json.dumps({"id": self.id, "smiles": list(self.smiles)})


@dataclass(frozen=True)
class OracleResponse:
    id: int
    scores: tuple[Optional[float], ...]
    error: Optional[str] = None

    @classmethod
    def from_json(cls, line: str) -> "OracleResponse":
        obj = json.loads(line)
        if not isinstance(obj, dict) or "id" not in obj or "scores" not in obj:
            raise ValueError("response must carry id and scores")
        scores = tuple(None if s is None else float(s) for s in obj["scores"])
        return cls(int(obj["id"]), scores, obj.get("error"))


class ExternalScorer:
    """JSON-lines client for a child scorer process.

    One request line out, one response line back, ids strictly increasing.
    Per-molecule failures come back as nulls; transport failures raise
    Timeout, ProtocolViolation or ChildExited with the raw line attached.
    """

    def __init__(self, command: Sequence[str], timeout: float = 60.0):
        self.timeout = timeout
        self._next_id = 1
        self._proc = subprocess.Popen(
            list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL, text=True, bufsize=1)
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self):
        try:
            for line in self._proc.stdout:
                self._lines.put(line.rstrip("\n"))
        finally:
            self._lines.put(None)  # EOF sentinel

    def score(self, smiles: Sequence[str]) -> list[Optional[float]]:
        req = OracleRequest(self._next_id, tuple(smiles))
        self._next_id += 1
        if self._proc.poll() is not None:
            raise ChildExited(self._proc.returncode)
        try:
            self._proc.stdin.write(req.to_json() + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError):
            raise ChildExited(self._proc.poll()) from None
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise Timeout(f"no response to request {req.id} "
                          f"within {self.timeout}s") from None
        if line is None:
            raise ChildExited(self._proc.poll())
        try:
            resp = OracleResponse.from_json(line)
        except (ValueError, TypeError) as e:
            raise ProtocolViolation(f"unparseable response ({e})", line) from None
        if resp.id != req.id:
            raise ProtocolViolation(
                f"response id {resp.id} does not match request id {req.id}", line)
        if resp.error is not None:
            raise ProtocolViolation(f"scorer reported: {resp.error}", line)
        if len(resp.scores) != len(smiles):
            raise ProtocolViolation(
                f"{len(resp.scores)} scores for {len(smiles)} molecules", line)
        return list(resp.scores)

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
