import numpy as np
import pytest

from matformer.audit import (
    AuditReport,
    audit_e3_invariance,
    audit_knn_determinism,
    audit_periodic_invariance,
    explicit_line_graph_size,
    graph_signature,
    knn_distance_only_builder,
    line_graph_size,
    make_builder,
    ocgraph_builder,
    quotient_discrepancy,
    ring_multigraph,
    shift_sensitive_crystal,
    signature_discrepancy,
    tie_crystal,
)
from matformer.crystal import crystal_from_frac, shift_boundary, supercell
from matformer.graphs import build_radius_graph, build_t_fully_connected
from matformer.synthetic import random_corpus


def cubic(a=1.0, fracs=((0, 0, 0),), zs=None):
    fracs = np.atleast_2d(fracs)
    zs = zs if zs is not None else [1] * len(fracs)
    return crystal_from_frac(zs, fracs, a * np.eye(3))


class TestSignatures:
    def test_index_relabeling_is_invisible(self):
        c = cubic(a=2.5, fracs=[[0, 0, 0], [0.5, 0.5, 0.5]], zs=[11, 17])
        swapped = crystal_from_frac([17, 11], [[0.5, 0.5, 0.5], [0, 0, 0]], 2.5 * np.eye(3))
        a = graph_signature(build_radius_graph(c))
        b = graph_signature(build_radius_graph(swapped))
        assert signature_discrepancy(a, b) == 0.0

    def test_detects_species_difference(self):
        a = graph_signature(build_radius_graph(cubic(zs=[1])))
        b = graph_signature(build_radius_graph(cubic(zs=[2])))
        assert signature_discrepancy(a, b) == np.inf

    def test_detects_scale_difference(self):
        a = graph_signature(build_radius_graph(cubic(a=1.0)))
        b = graph_signature(build_radius_graph(cubic(a=1.5)))
        # outermost shell moves from sqrt(2) to 1.5*sqrt(2)
        assert signature_discrepancy(a, b) == pytest.approx(0.5 * np.sqrt(2))


class TestAuditReport:
    def test_violations_bounded_by_trials(self):
        with pytest.raises(ValueError):
            AuditReport("x", trials=1, violations=2, worst_discrepancy=0.0, witness={})

    def test_witness_iff_violations(self):
        with pytest.raises(ValueError):
            AuditReport("x", trials=1, violations=1, worst_discrepancy=1.0, witness=None)
        with pytest.raises(ValueError):
            AuditReport("x", trials=1, violations=0, worst_discrepancy=0.0, witness={})
        AuditReport("x", trials=1, violations=0, worst_discrepancy=0.0)


class TestInvariantBuilders:
    def test_radius_periodic_with_supercells(self):
        crystals = random_corpus(6, seed=101)
        report = audit_periodic_invariance(make_builder("radius"), crystals, 8, seed=5, name="radius")
        assert report.violations == 0
        assert report.worst_discrepancy <= 1e-9

    def test_tfc_periodic_under_shifts(self):
        crystals = random_corpus(6, seed=102)
        report = audit_periodic_invariance(
            make_builder("tfc"), crystals, 8, seed=5, alphas=((1, 1, 1),), name="tfc"
        )
        assert report.violations == 0

    def test_radius_with_self_edges_under_shifts(self):
        crystals = random_corpus(4, seed=103)
        report = audit_periodic_invariance(
            make_builder("radius", self_edges=True),
            crystals,
            6,
            seed=5,
            alphas=((1, 1, 1),),
            name="radius+self",
        )
        assert report.violations == 0

    def test_e3_invariance(self):
        crystals = random_corpus(5, seed=104)
        for name in ("radius", "tfc"):
            report = audit_e3_invariance(make_builder(name, self_edges=True), crystals, 6, seed=6, name=name)
            assert report.violations == 0
        identity = audit_e3_invariance(make_builder("radius"), crystals, 0, seed=0)
        assert identity.trials == 0

    def test_reflection_counts_as_invariant(self):
        # chiral 4-atom cell: distances are reflection-invariant by Definition 1
        c = crystal_from_frac(
            [6, 1, 8, 16],
            [[0, 0, 0], [0.31, 0.07, 0.11], [0.12, 0.41, 0.23], [0.4, 0.17, 0.52]],
            3.0 * np.eye(3),
        )
        from matformer.crystal import E3Transform, apply_e3

        mirrored = apply_e3(c, E3Transform(np.diag([1.0, 1.0, -1.0]), np.zeros(3)))
        a = graph_signature(build_radius_graph(c))
        b = graph_signature(build_radius_graph(mirrored))
        assert signature_discrepancy(a, b) <= 1e-9


class TestSupercellDepartures:
    """Constructions outside the minimal-cell scope, pinned as documented behavior."""

    def test_tfc_supercell_departure_is_structural(self):
        c = cubic()
        base = build_t_fully_connected(c, t=1)
        bigger = build_t_fully_connected(supercell(c, (2, 1, 1)), t=1)
        # t smallest per ordered pair: every replica pair contributes its own
        # t edges, so per-node degree grows with the cell description
        assert quotient_discrepancy(base, bigger, 1) == np.inf

    def test_self_edges_supercell_departure(self):
        c = cubic()
        builder = make_builder("radius", self_edges=True)
        base, bigger = builder(c), builder(supercell(c, (2, 2, 2)))
        assert quotient_discrepancy(base, bigger, 1) == np.inf


class TestOcgraph:
    def test_single_atom_counts(self):
        g = ocgraph_builder(cubic(), r=1.1)
        assert g.n_nodes == 7
        assert len(g.edges) == 42  # complete directed graph; 21 unordered pairs
        pairs = {frozenset((e.src, e.dst)) for e in g.edges}
        assert len(pairs) == 21

    def test_tiny_radius_keeps_cell_atoms(self):
        c = cubic(a=2.0, fracs=[[0.1, 0.1, 0.1], [0.6, 0.6, 0.6]], zs=[6, 8])
        g = ocgraph_builder(c, r=1e-6)
        assert g.n_nodes == 2
        assert len(g.edges) == 2

    def test_node_count_changes_under_shift(self):
        c = shift_sensitive_crystal()
        base = ocgraph_builder(c, r=0.5)
        moved = ocgraph_builder(shift_boundary(c, np.array([1.0, 0.0, 0.0])), r=0.5)
        assert base.n_nodes != moved.n_nodes

    def test_audit_flags_with_witness(self):
        report = audit_periodic_invariance(
            make_builder("ocgraph", radius=0.5), [shift_sensitive_crystal()], 10, seed=3, name="ocgraph"
        )
        assert report.violations >= 1
        assert report.witness is not None
        assert report.witness["transform"]["type"] == "periodic"
        assert "lattice" in report.witness["crystal"]


class TestKnn:
    def test_unambiguous_cut_is_deterministic(self):
        c = cubic()
        sigs = {
            graph_signature(knn_distance_only_builder(c, k=6, perturbation_seed=s)) for s in range(5)
        }
        assert len(sigs) == 1
        report = audit_knn_determinism(c, k=6, seeds=tuple(range(6)))
        assert report.violations == 0

    def test_tie_selection_depends_on_enumeration(self):
        c = tie_crystal()
        report = audit_knn_determinism(c, k=1, seeds=tuple(range(8)))
        assert report.violations >= 1
        assert report.witness["transform"]["type"] == "enumeration_seed"

    def test_species_multiset_flips_at_tie(self):
        c = tie_crystal()
        picks = set()
        for s in range(8):
            g = knn_distance_only_builder(c, k=1, perturbation_seed=s)
            (center_edge,) = [e for e in g.edges if e.dst == 1]
            picks.add(int(g.node_atomic_numbers[center_edge.src]))
        assert picks == {3, 9}

    def test_periodic_audit_flags_tie_crystal(self):
        report = audit_periodic_invariance(
            make_builder("knn", k=1, perturbation_seed=0),
            [tie_crystal()],
            12,
            seed=2,
            alphas=((1, 1, 1),),
            name="knn",
        )
        assert report.violations >= 1

    def test_full_tie_groups_match_tfc(self):
        # single-atom cell, k covering the complete first shell: selection
        # equals the t smallest self-pair distances
        c = cubic()
        knn = knn_distance_only_builder(c, k=6, perturbation_seed=1)
        tfc = build_t_fully_connected(c, t=6)
        assert np.allclose(
            sorted(e.distance for e in knn.edges), sorted(e.distance for e in tfc.edges)
        )


class TestLineGraphSize:
    def test_reference_values(self):
        assert line_graph_size(1) == (6, 66)
        assert line_graph_size(10) == (60, 660)

    def test_matches_explicit_construction(self):
        for n in range(2, 9):
            edges = ring_multigraph(n, degree=12)
            assert explicit_line_graph_size(edges) == line_graph_size(n, degree=12)

    def test_other_degrees(self):
        for n in (2, 4):
            for degree in (4, 6, 8):
                edges = ring_multigraph(n, degree=degree)
                assert explicit_line_graph_size(edges) == line_graph_size(n, degree=degree)

    def test_validation(self):
        with pytest.raises(ValueError):
            line_graph_size(0)
        with pytest.raises(ValueError):
            line_graph_size(3, degree=5)
        with pytest.raises(ValueError):
            ring_multigraph(1)
