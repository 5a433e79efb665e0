"""Molecular graphs from a SMILES subset: parsing, validation, canonical
serialization, Morgan fingerprints, and descriptor counting.

The supported dialect covers organic-subset atoms (C N O P S F Cl Br I,
aromatic c n o s), bracket atoms with charge and H-count, bond symbols
``- = # :``, branches, ring closures 1-9 and %nn, and (for fragment
handling) ``[i*]`` attachment atoms. Stereo markers, isotopes and
multi-component inputs are rejected.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Optional

import networkx as nx

SINGLE, DOUBLE, TRIPLE, AROMATIC = 1, 2, 3, 4

#: standard valences; charge shifts these by the usual +/-1 rules
VALENCES = {
    "C": (4,),
    "N": (3,),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
}

ATOMIC_MASS = {
    "C": 12.011, "N": 14.007, "O": 15.999, "P": 30.974, "S": 32.06,
    "F": 18.998, "Cl": 35.45, "Br": 79.904, "I": 126.904, "H": 1.008,
}

_ELEMENT_NUM = {sym: i + 1 for i, sym in enumerate(sorted(ATOMIC_MASS))}

AROMATIC_ELEMENTS = ("C", "N", "O", "S")

_HCOUNT_FREE = -1  # parser sentinel: hydrogens not yet inferred


class SmilesError(ValueError):
    """Base for parse failures; ``offset`` is the byte position in the input."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class UnbalancedBranch(SmilesError):
    pass


class UnclosedRing(SmilesError):
    pass


class UnknownAtom(SmilesError):
    pass


class ValenceOverflow(SmilesError):
    pass


class WidthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Atom:
    symbol: str
    charge: int = 0
    aromatic: bool = False
    hcount: int = 0
    attach: Optional[int] = None  # attachment-point index for '*' atoms

    @property
    def is_attachment(self) -> bool:
        return self.symbol == "*"


@dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: int  # SINGLE/DOUBLE/TRIPLE/AROMATIC

    def other(self, idx: int) -> int:
        return self.b if idx == self.a else self.a


@dataclass(frozen=True)
class MolGraph:
    """Immutable molecular graph; hydrogens are implicit counts on atoms."""

    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]

    def __post_init__(self):
        n = len(self.atoms)
        seen = set()
        for bond in self.bonds:
            if not (0 <= bond.a < n and 0 <= bond.b < n):
                raise ValueError(f"bond endpoint out of range: {bond}")
            if bond.a == bond.b:
                raise ValueError(f"self-loop bond: {bond}")
            key = (min(bond.a, bond.b), max(bond.a, bond.b))
            if key in seen:
                raise ValueError(f"duplicate bond: {bond}")
            seen.add(key)

    def neighbors(self, idx: int) -> list[tuple[int, Bond]]:
        out = []
        for bond in self.bonds:
            if bond.a == idx:
                out.append((bond.b, bond))
            elif bond.b == idx:
                out.append((bond.a, bond))
        return out

    def degree(self, idx: int) -> int:
        return sum(1 for b in self.bonds if idx in (b.a, b.b))

    def heavy_atom_count(self) -> int:
        return sum(1 for a in self.atoms if not a.is_attachment)


@dataclass(frozen=True)
class Fingerprint:
    """Fixed-width bit vector from iterated neighborhood hashing."""

    bits: int  # bitmask, bit i set <=> feature hashed to i
    width: int = 2048
    radius: int = 2

    def popcount(self) -> int:
        return self.bits.bit_count()

    def on_bits(self) -> list[int]:
        return [i for i in range(self.width) if self.bits >> i & 1]


@dataclass(frozen=True)
class DescriptorSet:
    mol_weight: float
    ring_count: int
    aromatic_ring_count: int
    rotatable_bonds: int
    hbond_donors: int
    hbond_acceptors: int
    heavy_atoms: int


# ---------------------------------------------------------------------------
# parsing

_BRACKET_RE = re.compile(r"^([A-IK-Za-ik-z][a-z]?)(H(\d*))?([+-]\d*|\+\++|--+)?$")
_ATTACH_RE = re.compile(r"^(\d+)\*$")


def _kekule_double(symbol: str, n_aromatic: int) -> int:
    """Formal double bonds assumed for a bare aromatic atom: one for C/N
    (pyridine-type), none for O/S (lone-pair donors). Pyrrole-type nitrogens
    need an explicit [nH]."""
    if n_aromatic and symbol in ("C", "N"):
        return 1
    return 0


def _allowed_valences(symbol: str, charge: int) -> tuple[int, ...]:
    base = VALENCES.get(symbol)
    if base is None:
        return ()
    if charge == 0:
        return base
    if symbol == "C":
        vals = tuple(v - abs(charge) for v in base)
    else:
        vals = tuple(v + charge for v in base)
    return tuple(v for v in vals if v >= 0)


class _Parser:
    def __init__(self, text: str, allow_attachments: bool):
        self.text = text
        self.allow_attachments = allow_attachments
        self.atoms: list[dict] = []
        self.bonds: list[tuple[int, int, int]] = []
        self.i = 0

    def fail(self, cls, message):
        raise cls(message, self.i)

    def parse(self) -> MolGraph:
        text = self.text
        if not text:
            self.fail(UnknownAtom, "empty SMILES")
        prev: Optional[int] = None
        branch_stack: list[tuple[Optional[int], int]] = []
        ring_open: dict[int, tuple[int, Optional[int], int]] = {}
        pending: Optional[int] = None  # bond order awaiting the next atom/closure
        pending_off = 0
        bond_syms = {"-": SINGLE, "=": DOUBLE, "#": TRIPLE, ":": AROMATIC}

        while self.i < len(text):
            ch = text[self.i]
            if ch == "(":
                if prev is None:
                    self.fail(UnbalancedBranch, "branch before any atom")
                branch_stack.append((prev, self.i))
                self.i += 1
            elif ch == ")":
                if not branch_stack:
                    self.fail(UnbalancedBranch, "unopened branch")
                prev, _ = branch_stack.pop()
                self.i += 1
            elif ch in bond_syms:
                if prev is None:
                    self.fail(UnknownAtom, "bond symbol before any atom")
                pending = bond_syms[ch]
                pending_off = self.i
                self.i += 1
            elif ch.isdigit() or ch == "%":
                if prev is None:
                    self.fail(UnknownAtom, "ring closure before any atom")
                if ch == "%":
                    if self.i + 2 >= len(text) or not text[self.i + 1 : self.i + 3].isdigit():
                        self.fail(UnknownAtom, "malformed %nn ring closure")
                    num = int(text[self.i + 1 : self.i + 3])
                    width = 3
                else:
                    num = int(ch)
                    width = 1
                if num == 0:
                    self.fail(UnknownAtom, "ring closure 0 unsupported")
                if num in ring_open:
                    at, order_open, _ = ring_open.pop(num)
                    order = pending if pending is not None else order_open
                    if at == prev:
                        self.fail(UnknownAtom, "ring closure to same atom")
                    self._add_bond(at, prev, order)
                else:
                    ring_open[num] = (prev, pending, self.i)
                pending = None
                self.i += width
            elif ch == "[":
                prev = self._bracket_atom(prev, pending)
                pending = None
            elif ch == ".":
                self.fail(UnknownAtom, "multi-component input rejected")
            else:
                prev = self._plain_atom(prev, pending)
                pending = None

        if branch_stack:
            _, off = branch_stack[-1]
            raise UnbalancedBranch("unclosed branch", off)
        if ring_open:
            off = min(off for _, _, off in ring_open.values())
            raise UnclosedRing("unclosed ring bond", off)
        if pending is not None:
            raise UnknownAtom("dangling bond symbol", pending_off)
        if not self.atoms:
            self.fail(UnknownAtom, "no atoms")
        return self._finish()

    def _plain_atom(self, prev, pending) -> int:
        text = self.text
        ch = text[self.i]
        start = self.i
        if ch in "cnos":
            atom = {"symbol": ch.upper(), "charge": 0, "aromatic": True,
                    "hcount": _HCOUNT_FREE, "attach": None, "offset": start}
            self.i += 1
        elif ch.isupper():
            symbol = ch
            if text[self.i : self.i + 2] in ("Cl", "Br"):
                symbol = text[self.i : self.i + 2]
                self.i += 2
            else:
                self.i += 1
            if symbol not in VALENCES:
                self.i = start
                self.fail(UnknownAtom, f"unknown atom {symbol!r}")
            atom = {"symbol": symbol, "charge": 0, "aromatic": False,
                    "hcount": _HCOUNT_FREE, "attach": None, "offset": start}
        else:
            self.fail(UnknownAtom, f"unexpected character {ch!r}")
        return self._push_atom(atom, prev, pending)

    def _bracket_atom(self, prev, pending) -> int:
        text = self.text
        start = self.i
        end = text.find("]", self.i)
        if end < 0:
            self.fail(UnknownAtom, "unterminated bracket atom")
        body = text[start + 1 : end]
        attach = _ATTACH_RE.match(body)
        if attach:
            if not self.allow_attachments:
                self.fail(UnknownAtom, "attachment token outside fragment context")
            atom = {"symbol": "*", "charge": 0, "aromatic": False,
                    "hcount": 0, "attach": int(attach.group(1)), "offset": start}
            self.i = end + 1
            return self._push_atom(atom, prev, pending)
        m = _BRACKET_RE.match(body)
        if not m:
            self.fail(UnknownAtom, f"unparseable bracket atom [{body}]")
        raw_sym, h_part, h_digits, charge_part = m.group(1), m.group(2), m.group(3), m.group(4)
        aromatic = raw_sym[0].islower()
        symbol = raw_sym.capitalize() if aromatic else raw_sym
        if symbol not in VALENCES or (aromatic and symbol not in AROMATIC_ELEMENTS):
            self.fail(UnknownAtom, f"unknown atom {raw_sym!r}")
        hcount = 0
        if h_part:
            hcount = int(h_digits) if h_digits else 1
        charge = 0
        if charge_part:
            if charge_part in ("++", "--"):
                charge = 2 if charge_part == "++" else -2
            elif len(charge_part) == 1:
                charge = 1 if charge_part == "+" else -1
            else:
                charge = int(charge_part[1:]) * (1 if charge_part[0] == "+" else -1)
        atom = {"symbol": symbol, "charge": charge, "aromatic": aromatic,
                "hcount": hcount, "attach": None, "offset": start}
        self.i = end + 1
        return self._push_atom(atom, prev, pending)

    def _push_atom(self, atom, prev, pending) -> int:
        idx = len(self.atoms)
        self.atoms.append(atom)
        if prev is not None:
            order = pending
            if order is None:
                order = AROMATIC if (atom["aromatic"] and self.atoms[prev]["aromatic"]) else SINGLE
            self._add_bond(prev, idx, order)
        elif pending is not None:
            self.fail(UnknownAtom, "bond symbol before first atom")
        return idx

    def _add_bond(self, a, b, order):
        if order is None:
            order = AROMATIC if (self.atoms[a]["aromatic"] and self.atoms[b]["aromatic"]) else SINGLE
        key = (min(a, b), max(a, b))
        for ea, eb, _ in self.bonds:
            if (min(ea, eb), max(ea, eb)) == key:
                self.fail(UnknownAtom, "duplicate bond between atoms")
        self.bonds.append((a, b, order))

    # -- post-processing ----------------------------------------------------

    def _finish(self) -> MolGraph:
        self._kekule_aromatize()
        for idx, atom in enumerate(self.atoms):
            if atom["symbol"] == "*":
                continue
            rest, n_arom = self._bond_contribution(idx)
            allowed = _allowed_valences(atom["symbol"], atom["charge"])
            if not allowed:
                raise ValenceOverflow(
                    f"charge {atom['charge']:+d} leaves no valence for {atom['symbol']}",
                    atom["offset"])
            if atom["hcount"] == _HCOUNT_FREE:
                contribution = rest + n_arom + _kekule_double(atom["symbol"], n_arom)
                fits = [v for v in allowed if v >= contribution]
                atom["hcount"] = (min(fits) - contribution) if fits else 0
            # floor: aromatic bonds count one each (lone-pair Kekule role)
            if rest + n_arom + atom["hcount"] > max(allowed):
                raise ValenceOverflow(
                    f"{atom['symbol']} exceeds valence "
                    f"({rest + n_arom + atom['hcount']} > {max(allowed)})",
                    atom["offset"])
        for a, b, order in self.bonds:
            if order == AROMATIC and not (self.atoms[a]["aromatic"] and self.atoms[b]["aromatic"]):
                raise ValenceOverflow("aromatic bond on non-aromatic atom",
                                      min(self.atoms[a]["offset"], self.atoms[b]["offset"]))
        atoms = tuple(Atom(a["symbol"], a["charge"], a["aromatic"], a["hcount"], a["attach"])
                      for a in self.atoms)
        bonds = tuple(Bond(a, b, order) for a, b, order in self.bonds)
        return MolGraph(atoms, bonds)

    def _bond_contribution(self, idx: int) -> tuple[int, int]:
        """Non-aromatic bond-order sum and aromatic bond count for one atom."""
        aromatic = 0
        total = 0
        for a, b, order in self.bonds:
            if idx not in (a, b):
                continue
            if order == AROMATIC:
                aromatic += 1
            else:
                total += order
        return total, aromatic

    def _kekule_aromatize(self):
        """Mark 6-membered all-C/N rings with alternating single/double bonds aromatic."""
        order_of = {}
        graph = nx.Graph()
        graph.add_nodes_from(range(len(self.atoms)))
        for a, b, order in self.bonds:
            graph.add_edge(a, b)
            order_of[(min(a, b), max(a, b))] = order
        flips = set()
        for cycle in nx.cycle_basis(graph):
            if len(cycle) != 6:
                continue
            if any(self.atoms[i]["symbol"] not in ("C", "N") or self.atoms[i]["aromatic"]
                   for i in cycle):
                continue
            ring = [(cycle[k], cycle[(k + 1) % 6]) for k in range(6)]
            orders = [order_of[(min(a, b), max(a, b))] for a, b in ring]
            if sorted(set(orders)) != [SINGLE, DOUBLE]:
                continue
            if all(orders[k] != orders[(k + 1) % 6] for k in range(6)):
                flips.update((min(a, b), max(a, b)) for a, b in ring)
                for i in cycle:
                    self.atoms[i]["aromatic"] = True
        if flips:
            self.bonds = [(a, b, AROMATIC if (min(a, b), max(a, b)) in flips else order)
                          for a, b, order in self.bonds]


def parse_smiles(text: str, allow_attachments: bool = False) -> MolGraph:
    """Parse one molecule; raises a SmilesError subclass naming the byte offset."""
    if not isinstance(text, str) or not text:
        raise UnknownAtom("empty SMILES", 0)
    if not text.isascii():
        raise UnknownAtom("non-ASCII input", 0)
    return _Parser(text, allow_attachments).parse()


# ---------------------------------------------------------------------------
# valence validation

def validate_valence(g: MolGraph) -> bool:
    """True iff every atom's bond-order sum plus hydrogens fits its valence table.

    Aromatic bonds count one each, plus at most one formal double bond per
    atom (any Kekule assignment that fits is accepted).
    """
    for idx, atom in enumerate(g.atoms):
        if atom.is_attachment:
            continue
        allowed = _allowed_valences(atom.symbol, atom.charge)
        if not allowed:
            return False
        aromatic = 0
        rest = 0
        for _, bond in g.neighbors(idx):
            if bond.order == AROMATIC:
                aromatic += 1
            else:
                rest += bond.order
        if aromatic:
            candidates = (rest + aromatic, rest + aromatic + 1)
        else:
            candidates = (rest,)
        if not any(c + atom.hcount in allowed for c in candidates):
            return False
    return True


# ---------------------------------------------------------------------------
# canonical serialization

def _bond_token(order: int) -> str:
    return {SINGLE: "", DOUBLE: "=", TRIPLE: "#", AROMATIC: ""}[order]


def _initial_invariant(g: MolGraph, idx: int) -> tuple:
    a = g.atoms[idx]
    return (a.symbol, g.degree(idx), a.charge, a.hcount, a.aromatic, a.attach or 0)


def _refine(g: MolGraph, ranks: list[int]) -> list[int]:
    n = len(g.atoms)
    while True:
        keys = []
        for i in range(n):
            nbr = sorted((b.order, ranks[j]) for j, b in g.neighbors(i))
            keys.append((ranks[i], tuple(nbr)))
        order = sorted(range(n), key=lambda i: keys[i])
        new_ranks = [0] * n
        rank = 0
        for pos, i in enumerate(order):
            if pos and keys[i] != keys[order[pos - 1]]:
                rank += 1
            new_ranks[i] = rank
        if new_ranks == ranks:
            return ranks
        ranks = new_ranks


def _canonical_ranks(g: MolGraph) -> list[int]:
    n = len(g.atoms)
    keys = [_initial_invariant(g, i) for i in range(n)]
    order = sorted(range(n), key=lambda i: keys[i])
    ranks = [0] * n
    rank = 0
    for pos, i in enumerate(order):
        if pos and keys[i] != keys[order[pos - 1]]:
            rank += 1
        ranks[i] = rank
    return _refine(g, ranks)


def _first_tied_class(ranks: list[int]) -> Optional[list[int]]:
    by_rank: dict[int, list[int]] = {}
    for i, r in enumerate(ranks):
        by_rank.setdefault(r, []).append(i)
    for r in sorted(by_rank):
        if len(by_rank[r]) > 1:
            return by_rank[r]
    return None


def _emit(g: MolGraph, ranks: list[int]) -> str:
    n = len(g.atoms)
    root = min(range(n), key=lambda i: (ranks[i], i))
    visited = [False] * n
    tree: dict[int, list[tuple[int, Bond]]] = {i: [] for i in range(n)}
    closures: dict[int, list[tuple[int, Bond]]] = {i: [] for i in range(n)}
    closure_bonds: list[tuple[int, int, Bond]] = []

    stack = [root]
    visited[root] = True
    parent_bond: dict[int, Optional[Bond]] = {root: None}
    # iterative DFS in canonical order so digit allocation is deterministic
    order_pos = {root: 0}
    counter = 1
    work = [(root, iter(sorted(g.neighbors(root), key=lambda nb: (ranks[nb[0]], nb[0]))))]
    while work:
        node, it = work[-1]
        advanced = False
        for j, bond in it:
            if not visited[j]:
                visited[j] = True
                tree[node].append((j, bond))
                parent_bond[j] = bond
                order_pos[j] = counter
                counter += 1
                work.append((j, iter(sorted(g.neighbors(j), key=lambda nb: (ranks[nb[0]], nb[0])))))
                advanced = True
                break
            if parent_bond.get(node) is not bond and order_pos.get(j, -1) < order_pos[node]:
                already = any(b is bond for _, _, b in closure_bonds)
                if not already:
                    closure_bonds.append((j, node, bond))
            # else: bond already handled from the other side
        if not advanced:
            work.pop()

    # digit assignment in first-encounter order along the output walk
    digit_of: dict[int, int] = {}
    pool = list(range(1, 100))
    open_digits: dict[int, list[tuple[int, Bond]]] = {i: [] for i in range(n)}
    for k, (a, b, bond) in enumerate(sorted(closure_bonds, key=lambda t: (order_pos[t[0]], order_pos[t[1]]))):
        digit = pool.pop(0)
        digit_of[k] = digit
        open_digits[a].append((digit, bond))
        open_digits[b].append((digit, bond))

    def atom_token(i: int) -> str:
        a = g.atoms[i]
        if a.is_attachment:
            return f"[{a.attach}*]"
        arom_ok = a.aromatic and a.symbol in AROMATIC_ELEMENTS
        sym = a.symbol.lower() if arom_ok else a.symbol
        implied = _implied_hcount(g, i)
        if a.charge == 0 and a.hcount == implied:
            return sym
        h = "" if a.hcount == 0 else ("H" if a.hcount == 1 else f"H{a.hcount}")
        if a.charge == 0:
            q = ""
        elif a.charge in (1, -1):
            q = "+" if a.charge == 1 else "-"
        else:
            q = f"{a.charge:+d}"
        return f"[{sym}{h}{q}]"

    def closure_tokens(i: int) -> str:
        parts = []
        for digit, bond in open_digits[i]:
            sym = _bond_token(bond.order)
            if bond.order == SINGLE and g.atoms[bond.a].aromatic and g.atoms[bond.b].aromatic:
                sym = "-"
            parts.append(f"{sym}{digit}" if digit < 10 else f"{sym}%{digit:02d}")
        return "".join(parts)

    def bond_prefix(bond: Bond) -> str:
        if bond.order == SINGLE and g.atoms[bond.a].aromatic and g.atoms[bond.b].aromatic:
            return "-"
        return _bond_token(bond.order)

    out: list[str] = []

    def walk(i: int):
        out.append(atom_token(i))
        out.append(closure_tokens(i))
        children = tree[i]
        for k, (j, bond) in enumerate(children):
            last = k == len(children) - 1
            piece = bond_prefix(bond)
            if not last:
                out.append("(")
            out.append(piece)
            walk(j)
            if not last:
                out.append(")")

    walk(root)
    return "".join(out)


def _implied_hcount(g: MolGraph, idx: int) -> int:
    """Hydrogens parse_smiles would infer for this atom written bare."""
    a = g.atoms[idx]
    aromatic = 0
    rest = 0
    for _, bond in g.neighbors(idx):
        if bond.order == AROMATIC:
            aromatic += 1
        else:
            rest += bond.order
    contribution = rest + aromatic + _kekule_double(a.symbol, aromatic)
    fits = [v for v in _allowed_valences(a.symbol, 0) if v >= contribution]
    return (min(fits) - contribution) if fits else 0


def write_smiles(g: MolGraph) -> str:
    """Canonical SMILES: isomorphic graphs yield identical strings."""
    ranks = _canonical_ranks(g)
    tied = _first_tied_class(ranks)
    if tied is None:
        return _emit(g, ranks)
    # break the first stable tie every possible way and keep the smallest
    best = None
    for pick in tied:
        bumped = list(ranks)
        bumped[pick] = -1
        resolved = _resolve(g, _renumber(bumped))
        candidate = _emit(g, resolved)
        if best is None or candidate < best:
            best = candidate
    return best


def _renumber(ranks: list[int]) -> list[int]:
    uniq = sorted(set(ranks))
    remap = {r: k for k, r in enumerate(uniq)}
    return [remap[r] for r in ranks]


def _resolve(g: MolGraph, ranks: list[int]) -> list[int]:
    ranks = _refine(g, ranks)
    tied = _first_tied_class(ranks)
    if tied is None:
        return ranks
    pick = tied[0]
    bumped = list(ranks)
    bumped[pick] = -1
    return _resolve(g, _renumber(bumped))


# ---------------------------------------------------------------------------
# isomorphism (test/CI oracle, independent of canonical ranking)

def to_networkx(g: MolGraph) -> nx.Graph:
    graph = nx.Graph()
    for i, a in enumerate(g.atoms):
        graph.add_node(i, label=(a.symbol, a.charge, a.aromatic, a.hcount, a.attach))
    for b in g.bonds:
        graph.add_edge(b.a, b.b, order=b.order)
    return graph


def is_isomorphic(g1: MolGraph, g2: MolGraph) -> bool:
    return nx.is_isomorphic(
        to_networkx(g1), to_networkx(g2),
        node_match=lambda u, v: u["label"] == v["label"],
        edge_match=lambda u, v: u["order"] == v["order"])


# ---------------------------------------------------------------------------
# Morgan fingerprints

_MASK64 = (1 << 64) - 1


def _mix64(x: int) -> int:
    # splitmix64 finalizer; pinned so fingerprints never drift across platforms
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _hash_tuple(parts: Iterable[int]) -> int:
    h = 0x2545F4914F6CDD1D
    for p in parts:
        h = _mix64(h ^ _mix64(p & _MASK64))
    return h


def atom_environments(g: MolGraph, radius: int = 2) -> list[int]:
    """Environment hashes for every atom at radii 0..radius.

    Radius-0 entries cover all atoms; larger radii skip isolated atoms.
    These are the features morgan_fingerprint folds into bits, exposed so
    corpus frequency tables can be built over them.
    """
    n = len(g.atoms)
    inv = []
    for i in range(n):
        a = g.atoms[i]
        inv.append(_hash_tuple((
            _ELEMENT_NUM.get(a.symbol, 0), a.charge + 8, int(a.aromatic),
            a.hcount, g.degree(i), (a.attach or 0))))
    out = list(inv)
    for _ in range(radius):
        nxt = []
        for i in range(n):
            nbrs = sorted((b.order, inv[j]) for j, b in g.neighbors(i))
            parts = [inv[i]]
            for order, h in nbrs:
                parts.extend((order, h))
            nxt.append(_hash_tuple(parts))
        inv = nxt
        out.extend(h for i, h in enumerate(inv) if g.degree(i) > 0)
    return out


def morgan_fingerprint(g: MolGraph, radius: int = 2, nbits: int = 2048) -> Fingerprint:
    """Circular fingerprint: environment hashes for r = 0..radius set bits mod nbits."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if nbits <= 0 or nbits & (nbits - 1):
        raise ValueError("nbits must be a power of two")
    bits = 0
    for h in atom_environments(g, radius):
        bits |= 1 << (h % nbits)
    return Fingerprint(bits=bits, width=nbits, radius=radius)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """|a AND b| / |a OR b|; 1.0 when both fingerprints are empty."""
    if a.width != b.width:
        raise WidthMismatch(f"fingerprint widths differ: {a.width} != {b.width}")
    union = (a.bits | b.bits).bit_count()
    if union == 0:
        return 1.0
    return (a.bits & b.bits).bit_count() / union


# ---------------------------------------------------------------------------
# descriptors

def _ring_info(g: MolGraph) -> tuple[list[list[int]], set[tuple[int, int]]]:
    graph = nx.Graph()
    graph.add_nodes_from(range(len(g.atoms)))
    graph.add_edges_from((b.a, b.b) for b in g.bonds)
    cycles = nx.cycle_basis(graph)
    ring_bonds: set[tuple[int, int]] = set()
    for cycle in cycles:
        for k in range(len(cycle)):
            a, b = cycle[k], cycle[(k + 1) % len(cycle)]
            ring_bonds.add((min(a, b), max(a, b)))
    return cycles, ring_bonds


def ring_sizes(g: MolGraph) -> list[int]:
    cycles, _ = _ring_info(g)
    return sorted(len(c) for c in cycles)


def descriptors(g: MolGraph) -> DescriptorSet:
    cycles, ring_bonds = _ring_info(g)
    order_of = {(min(b.a, b.b), max(b.a, b.b)): b.order for b in g.bonds}
    aromatic_rings = 0
    for cycle in cycles:
        edges = [(min(cycle[k], cycle[(k + 1) % len(cycle)]),
                  max(cycle[k], cycle[(k + 1) % len(cycle)])) for k in range(len(cycle))]
        if all(g.atoms[i].aromatic for i in cycle) and all(order_of[e] == AROMATIC for e in edges):
            aromatic_rings += 1

    mw = 0.0
    heavy = 0
    hbd = 0
    hba = 0
    for a in g.atoms:
        if a.is_attachment:
            continue
        heavy += 1
        mw += ATOMIC_MASS[a.symbol] + a.hcount * ATOMIC_MASS["H"]
        if a.symbol in ("N", "O"):
            if a.hcount >= 1:
                hbd += 1
            if a.charge <= 0:
                hba += 1

    triple_atoms = {idx for b in g.bonds if b.order == TRIPLE for idx in (b.a, b.b)}

    def heavy_degree(i: int) -> int:
        return sum(1 for j, _ in g.neighbors(i) if not g.atoms[j].is_attachment)

    rotatable = 0
    for b in g.bonds:
        key = (min(b.a, b.b), max(b.a, b.b))
        if b.order != SINGLE or key in ring_bonds:
            continue
        if g.atoms[b.a].is_attachment or g.atoms[b.b].is_attachment:
            continue
        if heavy_degree(b.a) < 2 or heavy_degree(b.b) < 2:
            continue
        if b.a in triple_atoms or b.b in triple_atoms:
            continue
        rotatable += 1

    return DescriptorSet(
        mol_weight=mw,
        ring_count=len(cycles),
        aromatic_ring_count=aromatic_rings,
        rotatable_bonds=rotatable,
        hbond_donors=hbd,
        hbond_acceptors=hba,
        heavy_atoms=heavy,
    )
