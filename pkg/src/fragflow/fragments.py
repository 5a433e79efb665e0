"""Fragment decomposition and recombination.

Molecules are cut at rule-matching acyclic single bonds; each broken bond
leaves a numbered ``[i*]`` attachment atom on both ends. Fragments are
serialized as space-separated SMILES, which inverts losslessly back to the
original molecule via reassembly. Crossover swaps whole fragments between
two decompositions and returns raw notation text that may or may not encode
a valid molecule.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from typing import Callable, Union

import networkx as nx

from .molgraph import (
    DOUBLE, SINGLE,
    Atom, Bond, MolGraph, SmilesError, ValenceOverflow,
    parse_smiles, validate_valence, write_smiles,
)


class DanglingAttachment(ValueError):
    """An attachment index is unpaired, hostless, or leaves parts unconnected."""


class BadFragmentSyntax(ValueError):
    """Fragment notation that does not split into parseable SMILES pieces."""


BondPredicate = Callable[[MolGraph, Bond], bool]


def _is_carbonyl_carbon(g: MolGraph, idx: int) -> bool:
    return g.atoms[idx].symbol == "C" and any(
        bond.order == DOUBLE and g.atoms[j].symbol == "O"
        for j, bond in g.neighbors(idx))


def _kind_c_n(g: MolGraph, bond: Bond) -> bool:
    syms = {g.atoms[bond.a].symbol, g.atoms[bond.b].symbol}
    return syms == {"C", "N"}


def _kind_c_o(g: MolGraph, bond: Bond) -> bool:
    syms = {g.atoms[bond.a].symbol, g.atoms[bond.b].symbol}
    return syms == {"C", "O"}


def _kind_c_carbonyl(g: MolGraph, bond: Bond) -> bool:
    sa, sb = g.atoms[bond.a].symbol, g.atoms[bond.b].symbol
    if (sa, sb) != ("C", "C"):
        return False
    return _is_carbonyl_carbon(g, bond.a) != _is_carbonyl_carbon(g, bond.b)


BOND_KINDS: dict[str, BondPredicate] = {
    "C-N": _kind_c_n,
    "C-O": _kind_c_o,
    "C-C(=O)": _kind_c_carbonyl,
}

DEFAULT_BOND_KINDS = ("C-N", "C-O", "C-C(=O)")


@dataclass(frozen=True)
class FragRuleSet:
    """Which bonds may be cut and how small a fragment may get.

    Only acyclic single bonds between heavy atoms are ever considered;
    ``allow_ring_atoms`` additionally permits cuts whose endpoints sit in
    rings (the bond itself still must not).
    """

    bond_kinds: tuple[Union[str, BondPredicate], ...] = DEFAULT_BOND_KINDS
    min_fragment_size: int = 2
    allow_ring_atoms: bool = False

    def predicate(self, kind: Union[str, BondPredicate]) -> BondPredicate:
        if callable(kind):
            return kind
        return BOND_KINDS[kind]


DEFAULT_RULES = FragRuleSet()


@dataclass(frozen=True)
class FragmentedMol:
    """Ordered fragments whose [i*] attachment labels pair broken-bond ends."""

    fragments: tuple[MolGraph, ...]

    def attachment_indices(self) -> list[int]:
        out = []
        for frag in self.fragments:
            out.extend(a.attach for a in frag.atoms if a.is_attachment)
        return out

    def fragment_count(self) -> int:
        return len(self.fragments)


def _ring_bond_and_atom_sets(g: MolGraph) -> tuple[set[tuple[int, int]], set[int]]:
    graph = nx.Graph()
    graph.add_nodes_from(range(len(g.atoms)))
    graph.add_edges_from((b.a, b.b) for b in g.bonds)
    ring_bonds: set[tuple[int, int]] = set()
    ring_atoms: set[int] = set()
    for cycle in nx.cycle_basis(graph):
        ring_atoms.update(cycle)
        for k in range(len(cycle)):
            a, b = cycle[k], cycle[(k + 1) % len(cycle)]
            ring_bonds.add((min(a, b), max(a, b)))
    return ring_bonds, ring_atoms


def _side_sizes(g: MolGraph, cut: set[int], bond_idx: int) -> tuple[int, int]:
    """Heavy-atom counts on each side of bond_idx once cut bonds are removed."""
    graph = nx.Graph()
    graph.add_nodes_from(range(len(g.atoms)))
    for k, b in enumerate(g.bonds):
        if k not in cut and k != bond_idx:
            graph.add_edge(b.a, b.b)
    bond = g.bonds[bond_idx]
    side_a = nx.node_connected_component(graph, bond.a)
    side_b = nx.node_connected_component(graph, bond.b)
    count = lambda side: sum(1 for i in side if not g.atoms[i].is_attachment)
    return count(side_a), count(side_b)


def fragment(g: MolGraph, rules: FragRuleSet = DEFAULT_RULES,
             rng: random.Random | None = None) -> FragmentedMol:
    """Cut every rule-matching bond, then shuffle the fragment order.

    Attachment indices follow cut order (deterministic in the input bond
    order); only the fragment ordering is randomized.
    """
    rng = rng or random.Random(0)
    ring_bonds, ring_atoms = _ring_bond_and_atom_sets(g)
    predicates = [rules.predicate(k) for k in rules.bond_kinds]

    cut: set[int] = set()
    for k, bond in enumerate(g.bonds):
        if bond.order != SINGLE:
            continue
        key = (min(bond.a, bond.b), max(bond.a, bond.b))
        if key in ring_bonds:
            continue
        if g.atoms[bond.a].is_attachment or g.atoms[bond.b].is_attachment:
            continue
        if not rules.allow_ring_atoms and (bond.a in ring_atoms or bond.b in ring_atoms):
            continue
        if not any(p(g, bond) for p in predicates):
            continue
        na, nb = _side_sizes(g, cut, k)
        if na < rules.min_fragment_size or nb < rules.min_fragment_size:
            continue
        cut.add(k)

    # components of the graph minus cut bonds
    graph = nx.Graph()
    graph.add_nodes_from(range(len(g.atoms)))
    for k, b in enumerate(g.bonds):
        if k not in cut:
            graph.add_edge(b.a, b.b)
    components = [sorted(c) for c in nx.connected_components(graph)]
    components.sort(key=lambda c: c[0])
    comp_of = {i: ci for ci, comp in enumerate(components) for i in comp}

    frag_atoms: list[list[Atom]] = [[g.atoms[i] for i in comp] for comp in components]
    local = [{i: p for p, i in enumerate(comp)} for comp in components]
    frag_bonds: list[list[Bond]] = [[] for _ in components]
    for k, b in enumerate(g.bonds):
        if k in cut:
            continue
        ci = comp_of[b.a]
        frag_bonds[ci].append(Bond(local[ci][b.a], local[ci][b.b], b.order))

    for label, k in enumerate(sorted(cut), start=1):
        bond = g.bonds[k]
        for endpoint in (bond.a, bond.b):
            ci = comp_of[endpoint]
            star = len(frag_atoms[ci])
            frag_atoms[ci].append(Atom("*", attach=label))
            frag_bonds[ci].append(Bond(local[ci][endpoint], star, SINGLE))

    fragments = [MolGraph(tuple(a), tuple(b)) for a, b in zip(frag_atoms, frag_bonds)]
    rng.shuffle(fragments)
    return FragmentedMol(tuple(fragments))


def to_notation(f: FragmentedMol) -> str:
    """Space-separated canonical SMILES, one per fragment."""
    return " ".join(write_smiles(frag) for frag in f.fragments)


def parse_notation(text: str) -> FragmentedMol:
    """Inverse of to_notation; validates that every attachment index pairs up."""
    if not text or text != text.strip() or "  " in text:
        raise BadFragmentSyntax(f"malformed fragment notation: {text!r}")
    fragments = []
    for piece in text.split(" "):
        try:
            fragments.append(parse_smiles(piece, allow_attachments=True))
        except SmilesError as e:
            raise BadFragmentSyntax(f"fragment {piece!r}: {e}") from e
    f = FragmentedMol(tuple(fragments))
    counts: dict[int, int] = {}
    for idx in f.attachment_indices():
        counts[idx] = counts.get(idx, 0) + 1
    bad = sorted(i for i, c in counts.items() if c != 2)
    if bad:
        raise DanglingAttachment(f"attachment indices not paired exactly twice: {bad}")
    return f


def reassemble(f: FragmentedMol) -> MolGraph:
    """Join each attachment pair with a single bond and drop the stars.

    Raises DanglingAttachment for unpaired/hostless labels or disconnected
    results, ValenceOverflow when the joined molecule is chemically
    impossible (an expected outcome for crossover products).
    """
    atoms: list[Atom] = []
    bonds: list[Bond] = []
    offset = 0
    star_slots: dict[int, list[int]] = {}
    for frag in f.fragments:
        for i, a in enumerate(frag.atoms):
            if a.is_attachment:
                star_slots.setdefault(a.attach, []).append(offset + i)
        atoms.extend(frag.atoms)
        bonds.extend(Bond(b.a + offset, b.b + offset, b.order) for b in frag.bonds)
        offset += len(frag.atoms)

    bad = sorted(i for i, slots in star_slots.items() if len(slots) != 2)
    if bad:
        raise DanglingAttachment(f"attachment indices not paired exactly twice: {bad}")

    neighbor_of: dict[int, int] = {}
    star_set = {s for slots in star_slots.values() for s in slots}
    for b in bonds:
        for s, other in ((b.a, b.b), (b.b, b.a)):
            if s in star_set:
                if s in neighbor_of or b.order != SINGLE:
                    raise DanglingAttachment(f"attachment atom {s} bonded more than once")
                neighbor_of[s] = other
    for s in star_set:
        if s not in neighbor_of:
            raise DanglingAttachment(f"attachment atom {s} has no host")
        if neighbor_of[s] in star_set:
            raise DanglingAttachment(f"attachment atom {s} bonded to another attachment")

    new_bonds = [b for b in bonds if b.a not in star_set and b.b not in star_set]
    for slots in star_slots.values():
        new_bonds.append(Bond(neighbor_of[slots[0]], neighbor_of[slots[1]], SINGLE))

    keep = [i for i in range(len(atoms)) if i not in star_set]
    remap = {old: new for new, old in enumerate(keep)}
    final_atoms = tuple(atoms[i] for i in keep)
    try:
        final_bonds = tuple(Bond(remap[b.a], remap[b.b], b.order) for b in new_bonds)
        g = MolGraph(final_atoms, final_bonds)
    except ValueError as e:
        raise ValenceOverflow(f"reassembly produced impossible bonding: {e}", 0) from e

    if len(g.atoms) > 1:
        graph = nx.Graph()
        graph.add_nodes_from(range(len(g.atoms)))
        graph.add_edges_from((b.a, b.b) for b in g.bonds)
        if not nx.is_connected(graph):
            raise DanglingAttachment("reassembled molecule is disconnected")
    if not validate_valence(g):
        raise ValenceOverflow("reassembled molecule violates valence rules", 0)
    return g


_ATTACH_TOKEN_RE = re.compile(r"\[(\d+)\*\]")


def _renumber_attachments(text: str) -> str:
    """Relabel [i*] tokens to 1..K' in first-appearance order."""
    mapping: dict[str, int] = {}

    def sub(m: re.Match) -> str:
        old = m.group(1)
        if old not in mapping:
            mapping[old] = len(mapping) + 1
        return f"[{mapping[old]}*]"

    return _ATTACH_TOKEN_RE.sub(sub, text)


def _shift_attachments(g: MolGraph, shift: int) -> MolGraph:
    if shift == 0:
        return g
    atoms = tuple(
        Atom(a.symbol, a.charge, a.aromatic, a.hcount, a.attach + shift)
        if a.is_attachment else a
        for a in g.atoms)
    return MolGraph(atoms, g.bonds)


def crossover(parent_a: FragmentedMol, parent_b: FragmentedMol,
              rng: random.Random) -> str:
    """Replace one fragment of parent A with one fragment of parent B.

    Returns notation text with attachment labels renumbered to 1..K' in
    first-appearance order. The result seeds generation and is often not a
    valid molecule.
    """
    if not parent_a.fragments or not parent_b.fragments:
        raise ValueError("crossover needs at least one fragment per parent")
    i = rng.randrange(len(parent_a.fragments))
    j = rng.randrange(len(parent_b.fragments))
    shift = max(parent_a.attachment_indices(), default=0)
    donor = _shift_attachments(parent_b.fragments[j], shift)
    fragments = list(parent_a.fragments)
    fragments[i] = donor
    text = to_notation(FragmentedMol(tuple(fragments)))
    return _renumber_attachments(text)
