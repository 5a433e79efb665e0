"""Atomic-level tokenization of fragmented SMILES.

Multi-character atoms (Cl, Br), bracket expressions, ``%nn`` ring closures
and ``[i*]`` attachment points are single tokens; the fragment separator is
the single-space token. PAD always has id 0 and never appears inside the
active length of a sequence.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

PAD_TOKEN = "<pad>"
SEPARATOR = " "

#: always present so crossover outputs never fail to encode
ATTACHMENT_TOKENS = tuple(f"[{i}*]" for i in range(1, 10))

_LEXEME_RE = re.compile(
    r"\[\d+\*\]"          # attachment point
    r"|\[[A-Za-z][A-Za-z0-9@+\-]*\]"  # bracket atom
    r"|Cl|Br"
    r"|%\d\d"
    r"|[CNOPSFIcnos]"
    r"|[1-9]"
    r"|[()=#:\- ]"
)


class UnknownToken(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class UnrecognizedCharacter(ValueError):
    def __init__(self, message: str, line: int, offset: int):
        super().__init__(f"{message} (line {line}, offset {offset})")
        self.line = line
        self.offset = offset


def _lex(text: str) -> list[tuple[str, int]]:
    """Greedy longest-match split into (lexeme, offset) pairs."""
    out = []
    pos = 0
    while pos < len(text):
        m = _LEXEME_RE.match(text, pos)
        if not m:
            raise UnknownToken(f"untokenizable character {text[pos]!r}", pos)
        out.append((m.group(0), pos))
        pos = m.end()
    return out


class Vocab:
    """Immutable token table; ids are dense 0..V-1 with PAD at 0."""

    def __init__(self, tokens: Sequence[str]):
        if not tokens or tokens[0] != PAD_TOKEN:
            raise ValueError("tokens[0] must be the PAD token")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens")
        self.tokens = tuple(tokens)
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id_of(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise UnknownToken(f"token {token!r} not in vocabulary", 0) from None

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def separator_id(self) -> int:
        return self._ids[SEPARATOR]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, "r", encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        while tokens and tokens[-1] == "":
            tokens.pop()
        return cls(tokens)


@dataclass
class TokenSeq:
    """Fixed-capacity id array; entries past ``n`` are PAD."""

    ids: np.ndarray
    n: int

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.n > len(self.ids):
            raise ValueError(f"n={self.n} exceeds capacity {len(self.ids)}")

    @property
    def capacity(self) -> int:
        return len(self.ids)

    def active(self) -> np.ndarray:
        return self.ids[: self.n]


def build_vocab(corpus: Iterable[str]) -> Vocab:
    """Deterministic vocabulary over the corpus plus PAD, separator,
    and the attachment tokens."""
    seen: set[str] = set()
    n_lines = 0
    for line_no, line in enumerate(corpus, start=1):
        n_lines += 1
        try:
            for lexeme, _ in _lex(line):
                seen.add(lexeme)
        except UnknownToken as e:
            raise UnrecognizedCharacter(str(e), line_no, e.offset) from None
    if n_lines == 0:
        raise ValueError("empty corpus")
    seen.add(SEPARATOR)
    seen.update(ATTACHMENT_TOKENS)
    return Vocab([PAD_TOKEN] + sorted(seen))


def encode(text: str, vocab: Vocab, pad_to: int | None = None) -> TokenSeq:
    """Greedy longest-match encoding; raises UnknownToken with the offset."""
    ids = []
    for lexeme, offset in _lex(text):
        if lexeme not in vocab:
            raise UnknownToken(f"token {lexeme!r} not in vocabulary", offset)
        ids.append(vocab.id_of(lexeme))
    n = len(ids)
    if pad_to is not None:
        if pad_to < n:
            raise ValueError(f"pad_to={pad_to} shorter than sequence ({n})")
        ids = ids + [vocab.pad_id] * (pad_to - n)
    return TokenSeq(np.array(ids, dtype=np.int64), n)


def decode(seq: TokenSeq, vocab: Vocab) -> str:
    """Inverse of encode on the active length."""
    return "".join(vocab.token_of(int(i)) for i in seq.active())


@dataclass(frozen=True)
class LengthDist:
    """Empirical distribution over encoded sequence lengths."""

    lengths: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        if np.any(self.probs < 0) or abs(float(self.probs.sum()) - 1.0) > 1e-9:
            raise ValueError("probabilities must be nonnegative and sum to 1")
        if np.any(self.lengths < 1):
            raise ValueError("length support starts at 1")

    @property
    def max_length(self) -> int:
        return int(self.lengths.max())

    def to_dict(self) -> dict:
        return {int(l): float(p) for l, p in zip(self.lengths, self.probs)}

    @classmethod
    def from_dict(cls, d: dict) -> "LengthDist":
        items = sorted((int(k), float(v)) for k, v in d.items())
        lengths = np.array([k for k, _ in items], dtype=np.int64)
        probs = np.array([v for _, v in items], dtype=np.float64)
        return cls(lengths, probs / probs.sum())


def length_distribution(corpus: Iterable[str], vocab: Vocab) -> LengthDist:
    counts: dict[int, int] = {}
    total = 0
    for line in corpus:
        n = encode(line, vocab).n
        counts[n] = counts.get(n, 0) + 1
        total += 1
    if total == 0:
        raise ValueError("empty corpus")
    lengths = np.array(sorted(counts), dtype=np.int64)
    probs = np.array([counts[l] / total for l in lengths], dtype=np.float64)
    return LengthDist(lengths, probs)


def sample_length(dist: LengthDist, rng: np.random.Generator) -> int:
    return int(rng.choice(dist.lengths, p=dist.probs))
