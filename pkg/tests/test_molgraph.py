"""Parser, canonical writer, valence rules, fingerprints, descriptors."""

import random

import pytest

from fragflow.molgraph import (
    AROMATIC, DOUBLE, SINGLE, TRIPLE,
    Atom, Bond, MolGraph,
    UnbalancedBranch, UnclosedRing, UnknownAtom, ValenceOverflow, WidthMismatch,
    descriptors, is_isomorphic, morgan_fingerprint, parse_smiles, tanimoto,
    validate_valence, write_smiles,
)

ROUND_TRIP_CASES = [
    "C", "CC", "CCO", "CC(C)C", "CC(C)(C)C", "C1CCCCC1", "C1CC1",
    "c1ccccc1", "c1ccncc1", "c1ccoc1", "c1ccsc1", "c1cc[nH]c1",
    "c1ccc2ccccc2c1", "CC(=O)O", "CC(N)=O", "C#N", "N#CC", "O=C=O",
    "CC(=O)Oc1ccccc1C(=O)O", "C[N+](C)(C)C", "[NH4+]", "[O-]C(=O)C",
    "FC(F)(F)F", "ClCCBr", "ICCF", "O=S(=O)(O)O", "OP(=O)(O)O",
    "CN1CCCC1", "CCOC(=O)C", "C%12CCCCC%12",
]


@pytest.mark.parametrize("smiles", ROUND_TRIP_CASES)
def test_parse_write_round_trip(smiles):
    g = parse_smiles(smiles)
    out = write_smiles(g)
    g2 = parse_smiles(out)
    assert is_isomorphic(g, g2)
    # canonical form is a fixed point
    assert write_smiles(g2) == out


@pytest.mark.parametrize("variants", [
    ("CCO", "OCC", "C(O)C", "C(C)O"),
    ("c1ccccc1", "C1=CC=CC=C1", "c1ccccc1"),
    ("CC(=O)O", "OC(C)=O", "O=C(O)C"),
    ("FC(F)(F)Cl", "ClC(F)(F)F"),
    ("CC(N)=O", "NC(C)=O", "O=C(N)C"),
    ("c1ccncc1", "n1ccccc1", "C1=CC=NC=C1"),
])
def test_canonical_form_is_order_invariant(variants):
    forms = {write_smiles(parse_smiles(s)) for s in variants}
    assert len(forms) == 1


def test_canonical_form_invariant_under_atom_permutation():
    g = parse_smiles("CC(=O)Oc1ccccc1C(=O)O")
    reference = write_smiles(g)
    rng = random.Random(7)
    n = len(g.atoms)
    for _ in range(100):
        perm = list(range(n))
        rng.shuffle(perm)
        inverse = {old: new for new, old in enumerate(perm)}
        atoms = tuple(g.atoms[old] for old in perm)
        bonds = tuple(Bond(inverse[b.a], inverse[b.b], b.order) for b in g.bonds)
        shuffled = MolGraph(atoms, bonds)
        assert is_isomorphic(shuffled, g)
        assert write_smiles(shuffled) == reference


def test_distinct_molecules_get_distinct_canonical_forms():
    mols = ["CCO", "CCN", "CCC", "CC=O", "c1ccccc1", "C1CCCCC1", "CC(C)O",
            "CCCO", "COC", "CC(=O)O", "OCC(O)CO", "c1ccncc1", "Cc1ccccc1"]
    forms = [write_smiles(parse_smiles(s)) for s in mols]
    assert len(set(forms)) == len(forms)
    graphs = [parse_smiles(s) for s in mols]
    for i in range(len(graphs)):
        for j in range(i + 1, len(graphs)):
            assert not is_isomorphic(graphs[i], graphs[j])


def test_implicit_hydrogens():
    g = parse_smiles("C")
    assert g.atoms[0].hcount == 4
    g = parse_smiles("CCO")
    assert [a.hcount for a in g.atoms] == [3, 2, 1]
    g = parse_smiles("c1ccccc1")
    assert all(a.hcount == 1 for a in g.atoms)
    g = parse_smiles("c1ccncc1")
    n = next(a for a in g.atoms if a.symbol == "N")
    assert n.hcount == 0
    g = parse_smiles("c1cc[nH]c1")
    n = next(a for a in g.atoms if a.symbol == "N")
    assert n.hcount == 1
    g = parse_smiles("O=S(=O)(O)O")
    s = next(a for a in g.atoms if a.symbol == "S")
    assert s.hcount == 0


def test_charged_atoms():
    g = parse_smiles("[NH4+]")
    assert g.atoms[0].charge == 1 and g.atoms[0].hcount == 4
    g = parse_smiles("[O-]C(=O)C")
    o = g.atoms[0]
    assert o.charge == -1 and o.hcount == 0
    g = parse_smiles("C[N+](C)(C)C")
    n = next(a for a in g.atoms if a.symbol == "N")
    assert n.charge == 1
    assert validate_valence(g)


@pytest.mark.parametrize("bad,err,offset", [
    ("CC(C", UnbalancedBranch, 2),
    ("CC)C", UnbalancedBranch, 2),
    ("C1CC", UnclosedRing, 1),
    ("CXC", UnknownAtom, 1),
    ("C[Zz]C", UnknownAtom, 1),
    ("CC.CC", UnknownAtom, 2),
    ("C(=O)(=O)(=O)=O", ValenceOverflow, 0),
    ("[CH5]", ValenceOverflow, 0),
    ("", UnknownAtom, 0),
    ("=CC", UnknownAtom, 0),
    ("CC=", UnknownAtom, 2),
])
def test_parse_errors_carry_offsets(bad, err, offset):
    with pytest.raises(err) as exc:
        parse_smiles(bad)
    assert exc.value.offset == offset


def test_attachment_atoms_gated_by_flag():
    with pytest.raises(UnknownAtom):
        parse_smiles("[1*]CC")
    g = parse_smiles("[1*]CC", allow_attachments=True)
    assert g.atoms[0].is_attachment and g.atoms[0].attach == 1
    assert g.heavy_atom_count() == 2
    # attachment atoms carry no hydrogens and skip valence accounting
    assert g.atoms[0].hcount == 0
    assert validate_valence(g)


def test_attachment_bond_counts_toward_host_valence():
    g = parse_smiles("[1*]C([2*])([3*])[4*]", allow_attachments=True)
    assert validate_valence(g)
    with pytest.raises(ValenceOverflow):
        parse_smiles("[1*]C([2*])([3*])([4*])[5*]", allow_attachments=True)


def test_validate_valence_rejects_overbonded_carbon():
    atoms = tuple(Atom("C") for _ in range(6))
    bonds = tuple(Bond(0, i, SINGLE) for i in range(1, 6))
    g = MolGraph(atoms, bonds)
    assert not validate_valence(g)


def test_validate_valence_multivalent_sulfur():
    # S with 3 single bonds and no H fits none of {2, 4, 6}
    atoms = (Atom("S"), Atom("C", hcount=3), Atom("C", hcount=3), Atom("C", hcount=3))
    bonds = (Bond(0, 1, SINGLE), Bond(0, 2, SINGLE), Bond(0, 3, SINGLE))
    assert not validate_valence(MolGraph(atoms, bonds))
    # sulfate-like S(=O)(=O)(O)(O) hits 6
    assert validate_valence(parse_smiles("O=S(=O)(O)O"))


def test_kekule_benzene_is_aromatized():
    g = parse_smiles("C1=CC=CC=C1")
    assert all(a.aromatic for a in g.atoms)
    assert all(b.order == AROMATIC for b in g.bonds)
    # non-alternating ring stays as written
    g2 = parse_smiles("C1CC=CC=C1")
    assert not any(a.aromatic for a in g2.atoms)


def test_fingerprint_is_atom_order_invariant():
    a = morgan_fingerprint(parse_smiles("CCO"))
    b = morgan_fingerprint(parse_smiles("OCC"))
    assert a.bits == b.bits


def test_fingerprint_distinguishes_molecules():
    a = morgan_fingerprint(parse_smiles("CCO"))
    b = morgan_fingerprint(parse_smiles("CCN"))
    assert a.bits != b.bits


def test_tanimoto_bounds_and_identity():
    fps = [morgan_fingerprint(parse_smiles(s))
           for s in ["CCO", "CCN", "c1ccccc1", "CC(=O)O"]]
    for fp in fps:
        assert tanimoto(fp, fp) == 1.0
    for i in range(len(fps)):
        for j in range(i + 1, len(fps)):
            v = tanimoto(fps[i], fps[j])
            assert 0.0 <= v < 1.0


def test_tanimoto_empty_and_width_mismatch():
    from fragflow.molgraph import Fingerprint
    empty = Fingerprint(bits=0, width=2048)
    assert tanimoto(empty, empty) == 1.0
    other = Fingerprint(bits=0, width=1024)
    with pytest.raises(WidthMismatch):
        tanimoto(empty, other)


def test_fingerprint_width_must_be_power_of_two():
    g = parse_smiles("CCO")
    with pytest.raises(ValueError):
        morgan_fingerprint(g, nbits=1000)
    fp = morgan_fingerprint(g, nbits=512)
    assert fp.width == 512
    assert all(b < 512 for b in fp.on_bits())


def test_descriptor_molecular_weights():
    # sums of the pinned atomic masses, computed by hand
    assert descriptors(parse_smiles("C")).mol_weight == pytest.approx(12.011 + 4 * 1.008)
    assert descriptors(parse_smiles("CCO")).mol_weight == pytest.approx(
        2 * 12.011 + 15.999 + 6 * 1.008)
    assert descriptors(parse_smiles("c1ccccc1")).mol_weight == pytest.approx(
        6 * 12.011 + 6 * 1.008)


def test_descriptor_counts_aspirin():
    d = descriptors(parse_smiles("CC(=O)Oc1ccccc1C(=O)O"))
    assert d.heavy_atoms == 13
    assert d.ring_count == 1
    assert d.aromatic_ring_count == 1
    assert d.hbond_donors == 1
    assert d.hbond_acceptors == 4
    assert d.rotatable_bonds == 3


def test_rotatable_bond_rules():
    # terminal bonds never rotate
    assert descriptors(parse_smiles("CC")).rotatable_bonds == 0
    assert descriptors(parse_smiles("CCC")).rotatable_bonds == 0
    assert descriptors(parse_smiles("CCCC")).rotatable_bonds == 1
    # ring bonds never rotate
    assert descriptors(parse_smiles("C1CCCCC1")).rotatable_bonds == 0
    # bonds touching a triple-bond atom are linear, not rotatable
    assert descriptors(parse_smiles("CCC#CCC")).rotatable_bonds == 0
    assert descriptors(parse_smiles("CCCC#CCCC")).rotatable_bonds == 2


def test_ring_counts_fused():
    d = descriptors(parse_smiles("c1ccc2ccccc2c1"))
    assert d.ring_count == 2
    assert d.aromatic_ring_count == 2


def test_hbond_counts():
    d = descriptors(parse_smiles("NCCO"))
    assert d.hbond_donors == 2
    assert d.hbond_acceptors == 2
    d = descriptors(parse_smiles("C[N+](C)(C)C"))
    assert d.hbond_donors == 0
    assert d.hbond_acceptors == 0


def test_bond_orders_parse():
    g = parse_smiles("C=C")
    assert g.bonds[0].order == DOUBLE
    g = parse_smiles("C#C")
    assert g.bonds[0].order == TRIPLE
    g = parse_smiles("C-C")
    assert g.bonds[0].order == SINGLE


def test_percent_ring_closures():
    g = parse_smiles("C%12CCCCC%12")
    assert len(g.bonds) == 6
    assert write_smiles(g) == write_smiles(parse_smiles("C1CCCCC1"))


def test_graph_rejects_malformed_bonds():
    with pytest.raises(ValueError):
        MolGraph((Atom("C"),), (Bond(0, 0, SINGLE),))
    with pytest.raises(ValueError):
        MolGraph((Atom("C"), Atom("C")), (Bond(0, 1, SINGLE), Bond(1, 0, SINGLE)))
    with pytest.raises(ValueError):
        MolGraph((Atom("C"),), (Bond(0, 1, SINGLE),))
