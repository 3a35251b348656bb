"""Executable invariance checks for crystal graph constructions.

Fuzzes a graph builder with boundary shifts, supercell scalings, and rigid
transformations, comparing canonical graph signatures.  Includes two
deliberately broken constructions as negative controls: one that treats
every atom image as a separate node (sensitive to boundary shifts) and one
that picks k nearest neighbors by distance alone (non-deterministic under
ties).  Also provides the line-graph size analysis used to quantify the
cost of angle-based featurization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .crystal import Crystal, E3Transform, apply_e3, random_orthogonal, shift_boundary, supercell
from .graphs import (
    NEIGHBOR,
    CrystalGraph,
    Edge,
    GraphMeta,
    LatticeImage,
    _image_grid,
    _mask_zero_self,
    add_self_connecting_edges,
    build_radius_graph,
    build_t_fully_connected,
)

DEFAULT_ALPHAS = ((1, 1, 1), (2, 1, 1), (2, 2, 1), (2, 2, 2))

_KIND_RANK = {"neighbor": 0, "self_connecting": 1}

GraphBuilder = Callable[[Crystal], CrystalGraph]


# --- canonical signatures -----------------------------------------------------


def node_signatures(graph: CrystalGraph) -> list[tuple]:
    """Per-node sorted multiset of (distance, kind, source species)."""
    incoming: list[list[tuple]] = [[] for _ in range(graph.n_nodes)]
    z = graph.node_atomic_numbers
    for e in graph.edges:
        incoming[e.dst].append((round(e.distance, 9), _KIND_RANK[e.kind], int(z[e.src])))
    return [tuple(sorted(sig)) for sig in incoming]


def graph_signature(graph: CrystalGraph) -> tuple:
    """Permutation- and index-free signature: nodes sorted by (species, sig)."""
    sigs = node_signatures(graph)
    z = graph.node_atomic_numbers
    return tuple(sorted((int(z[i]), sigs[i]) for i in range(graph.n_nodes)))


def _compare_node_sig(sig_a: tuple, sig_b: tuple) -> float:
    """Max distance discrepancy, or inf on any structural mismatch."""
    if len(sig_a) != len(sig_b):
        return np.inf
    worst = 0.0
    for (da, ka, za), (db, kb, zb) in zip(sig_a, sig_b):
        if ka != kb or za != zb:
            return np.inf
        worst = max(worst, abs(da - db))
    return worst


def signature_discrepancy(sig_a: tuple, sig_b: tuple) -> float:
    if len(sig_a) != len(sig_b):
        return np.inf
    worst = 0.0
    for (za, na), (zb, nb) in zip(sig_a, sig_b):
        if za != zb:
            return np.inf
        worst = max(worst, _compare_node_sig(na, nb))
        if worst == np.inf:
            break
    return worst


def quotient_discrepancy(base_graph: CrystalGraph, super_graph: CrystalGraph, n_base: int) -> float:
    """Compare supercell node signatures against their originating atoms.

    Supercell construction lays replicas out in blocks, so node ``s``
    originates from base atom ``s % n_base``.  Structural mismatches
    (node counts, species, edge counts) yield inf.
    """
    if super_graph.n_nodes % n_base != 0 or base_graph.n_nodes != n_base:
        return np.inf
    base_sigs = node_signatures(base_graph)
    super_sigs = node_signatures(super_graph)
    base_z = base_graph.node_atomic_numbers
    super_z = super_graph.node_atomic_numbers
    worst = 0.0
    for s in range(super_graph.n_nodes):
        o = s % n_base
        if int(super_z[s]) != int(base_z[o]):
            return np.inf
        worst = max(worst, _compare_node_sig(base_sigs[o], super_sigs[s]))
        if worst == np.inf:
            break
    return worst


# --- audit harness ------------------------------------------------------------


@dataclass
class AuditReport:
    construction_name: str
    trials: int
    violations: int
    worst_discrepancy: float
    witness: dict | None = None

    def __post_init__(self):
        if self.violations > self.trials:
            raise ValueError("violations cannot exceed trials")
        if (self.witness is not None) != (self.violations > 0):
            raise ValueError("witness must be present iff violations occurred")

    def to_dict(self) -> dict:
        return {
            "construction_name": self.construction_name,
            "trials": self.trials,
            "violations": self.violations,
            "worst_discrepancy": self.worst_discrepancy,
            "witness": self.witness,
        }


def _crystal_payload(crystal: Crystal) -> dict:
    return {
        "atomic_numbers": crystal.atomic_numbers.tolist(),
        "positions": crystal.positions.tolist(),
        "lattice": crystal.lattice.tolist(),
    }


def audit_periodic_invariance(
    builder: GraphBuilder,
    crystals: list[Crystal],
    trials_per_crystal: int,
    seed: int,
    alphas: tuple = DEFAULT_ALPHAS,
    tol: float = 1e-9,
    name: str = "builder",
) -> AuditReport:
    """Compare builder output across random boundary shifts and supercells.

    Each trial redescribes the crystal as ``shift_boundary(supercell(c, a), p)``
    with a random corner ``p`` and an ``a`` cycled from ``alphas``, then
    compares canonical signatures (quotienting supercell nodes by their
    originating atom when ``a != (1, 1, 1)``).
    """
    rng = np.random.default_rng(seed)
    trials = violations = 0
    worst = 0.0
    witness = None
    for crystal in crystals:
        base_graph = builder(crystal)
        base_sig = graph_signature(base_graph)
        for t in range(trials_per_crystal):
            alpha = tuple(alphas[t % len(alphas)])
            scaled = supercell(crystal, alpha)
            corner = rng.uniform(-1.0, 2.0, 3) @ scaled.lattice
            moved = shift_boundary(scaled, corner)
            other = builder(moved)
            if alpha == (1, 1, 1):
                disc = signature_discrepancy(base_sig, graph_signature(other))
            else:
                disc = quotient_discrepancy(base_graph, other, crystal.n_atoms)
            trials += 1
            worst = max(worst, min(disc, np.finfo(float).max))
            if disc > tol:
                violations += 1
                if witness is None:
                    witness = {
                        "crystal": _crystal_payload(crystal),
                        "transform": {"type": "periodic", "corner": corner.tolist(), "alpha": list(alpha)},
                        "discrepancy": float(disc),
                    }
    return AuditReport(name, trials, violations, float(worst), witness)


def audit_e3_invariance(
    builder: GraphBuilder,
    crystals: list[Crystal],
    trials_per_crystal: int,
    seed: int,
    tol: float = 1e-9,
    name: str = "builder",
) -> AuditReport:
    """Compare builder output across random rotations/reflections and translations."""
    rng = np.random.default_rng(seed)
    trials = violations = 0
    worst = 0.0
    witness = None
    for crystal in crystals:
        base_sig = graph_signature(builder(crystal))
        for _ in range(trials_per_crystal):
            q = random_orthogonal(rng)
            b = rng.uniform(-5.0, 5.0, 3)
            moved = apply_e3(crystal, E3Transform(q, b))
            disc = signature_discrepancy(base_sig, graph_signature(builder(moved)))
            trials += 1
            worst = max(worst, min(disc, np.finfo(float).max))
            if disc > tol:
                violations += 1
                if witness is None:
                    witness = {
                        "crystal": _crystal_payload(crystal),
                        "transform": {"type": "e3", "rotation": q.tolist(), "translation": b.tolist()},
                        "discrepancy": float(disc),
                    }
    return AuditReport(name, trials, violations, float(worst), witness)


def audit_knn_determinism(crystal: Crystal, k: int, seeds: tuple[int, ...] = (0, 1, 2, 3)) -> AuditReport:
    """Flag enumeration-order sensitivity of distance-only kNN selection."""
    reference = graph_signature(knn_distance_only_builder(crystal, k, perturbation_seed=seeds[0]))
    trials = violations = 0
    worst = 0.0
    witness = None
    for s in seeds[1:]:
        disc = signature_discrepancy(
            reference, graph_signature(knn_distance_only_builder(crystal, k, perturbation_seed=s))
        )
        trials += 1
        worst = max(worst, min(disc, np.finfo(float).max))
        if disc > 0.0:
            violations += 1
            if witness is None:
                witness = {
                    "crystal": _crystal_payload(crystal),
                    "transform": {"type": "enumeration_seed", "seed": int(s)},
                    "discrepancy": float(disc),
                }
    return AuditReport("knn_distance_only", trials, violations, float(worst), witness)


# --- broken constructions (negative controls) ---------------------------------


def ocgraph_builder(crystal: Crystal, r: float) -> CrystalGraph:
    """Fully connected graph over every atom image within ``r`` of the cell.

    Treats each image as a separate node, so the node set depends on where
    the cell boundaries sit: deliberately not periodic invariant.  Edges
    are emitted in both directions (a complete directed graph).
    """
    if r <= 0:
        raise ValueError("radius must be positive")
    frac = crystal.frac_coords
    n = crystal.n_atoms
    dist, offs, base = _image_grid(crystal.lattice, frac, frac, r)
    nodes: list[tuple[int, tuple[int, int, int]]] = []
    seen = set()
    for i in range(n):
        for j in range(n):
            for p in np.flatnonzero(dist[i, j] <= r):
                k = tuple(int(v) for v in (offs[p] - base[i, j]))
                key = (j, k)
                if key not in seen:
                    seen.add(key)
                    nodes.append(key)
    nodes.sort()
    positions = np.array([crystal.positions[j] + np.asarray(k, float) @ crystal.lattice for j, k in nodes])
    z = np.array([crystal.atomic_numbers[j] for j, _ in nodes])
    feats = np.array([crystal.atom_features[j] for j, _ in nodes])

    edges = []
    m = len(nodes)
    for a in range(m):
        for b in range(m):
            if a == b:
                continue
            d = float(np.linalg.norm(positions[b] - positions[a]))
            edges.append(Edge(src=b, dst=a, distance=d, image=LatticeImage((0, 0, 0)), kind=NEIGHBOR))
    meta = GraphMeta(method="ocgraph", radius=float(r))
    return CrystalGraph(node_atomic_numbers=z, node_features=feats, edges=tuple(edges), meta=meta)


def knn_distance_only_builder(crystal: Crystal, k: int, perturbation_seed: int = 0) -> CrystalGraph:
    """k nearest image neighbors with ties broken by enumeration order.

    Candidates are enumerated in a seed-shuffled order and stably sorted by
    distance alone, so equal distances resolve to whichever candidate the
    enumeration happened to produce first.  This mirrors the pitfall of
    selecting neighbors purely by sorted distance.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = crystal.n_atoms
    frac = crystal.frac_coords
    rng = np.random.default_rng(perturbation_seed)
    from .graphs import _density_radius, image_bound  # local import to keep the public surface tidy

    r = _density_radius(crystal, k, per_pair=False)
    while True:
        dist, offs, base = _image_grid(crystal.lattice, frac, frac, r)
        dist = _mask_zero_self(dist, np.arange(n), np.arange(n))
        if (dist.reshape(n, -1) <= r).sum(axis=1).min() >= k:
            break
        r *= 1.5
    bound = image_bound(crystal.lattice, r)

    edges = []
    node_radii = np.zeros(n)
    for i in range(n):
        # naive raw-index scan, the order a straightforward implementation
        # enumerates images in: where a physical image lands in this scan
        # depends on the cell description, which is the whole pitfall
        cand = []
        for j in range(n):
            centre = base[i, j].astype(int)
            for k1 in range(centre[0] - bound[0] - 1, centre[0] + bound[0] + 2):
                for k2 in range(centre[1] - bound[1] - 1, centre[1] + bound[1] + 2):
                    for k3 in range(centre[2] - bound[2] - 1, centre[2] + bound[2] + 2):
                        vec = (frac[j] + (k1, k2, k3) - frac[i]) @ crystal.lattice
                        d = float(np.linalg.norm(vec))
                        if d <= r and not (i == j and d < 1e-12):
                            cand.append((j, (k1, k2, k3), d))
        order = rng.permutation(len(cand))
        shuffled = [cand[o] for o in order]
        shuffled.sort(key=lambda c: c[2])  # stable: ties keep shuffled order
        picked = shuffled[:k]
        node_radii[i] = picked[-1][2]
        for j, kvec, d in picked:
            edges.append(Edge(src=j, dst=i, distance=d, image=LatticeImage(kvec), kind=NEIGHBOR))
    meta = GraphMeta(method="knn", neighbor_rank=k, node_radii=tuple(map(float, node_radii)))
    return CrystalGraph(
        node_atomic_numbers=crystal.atomic_numbers,
        node_features=crystal.atom_features,
        edges=tuple(edges),
        meta=meta,
    )


# --- adversarial corpus -------------------------------------------------------


def shift_sensitive_crystal() -> Crystal:
    """Two atoms straddling a boundary; image-node counts change under shifts."""
    lattice = 2.0 * np.eye(3)
    frac = np.array([[0.1, 0.0, 0.0], [0.9, 0.0, 0.0]])
    return Crystal(
        atomic_numbers=np.array([6, 8]),
        positions=frac @ lattice,
        lattice=lattice,
    )


def tie_crystal() -> Crystal:
    """Two species at exactly equal distance from a center atom.

    Coordinates are dyadic so the tie is exact in floating point.
    """
    lattice = 4.0 * np.eye(3)
    frac = np.array([[0.25, 0.0, 0.0], [0.5, 0.0, 0.0], [0.75, 0.0, 0.0]])
    return Crystal(
        atomic_numbers=np.array([3, 6, 9]),
        positions=frac @ lattice,
        lattice=lattice,
    )


# --- line-graph size analysis -------------------------------------------------


def line_graph_size(n_nodes: int, degree: int = 12) -> tuple[int, int]:
    """Node and edge counts of the line graph of a degree-regular multigraph.

    Assumes an undirected multigraph with even regular degree and no self
    edges: the original has degree*n/2 edges, each adjacent to 2*(degree-1)
    others, giving nodes*(degree-1) line-graph edges.
    """
    if n_nodes < 1:
        raise ValueError("need at least one node")
    if degree < 2 or degree % 2 != 0:
        raise ValueError("degree must be even and >= 2")
    nodes = degree * n_nodes // 2
    edges = nodes * (degree - 1)
    return nodes, edges


def ring_multigraph(n_nodes: int, degree: int = 12) -> list[tuple[int, int]]:
    """Degree-regular multigraph without self edges: parallel ring edges."""
    if n_nodes < 2:
        raise ValueError("need at least two nodes for a self-edge-free multigraph")
    if degree % 2 != 0:
        raise ValueError("degree must be even")
    edges = []
    for u in range(n_nodes):
        v = (u + 1) % n_nodes
        edges.extend([(u, v)] * (degree // 2))
    return edges


def explicit_line_graph_size(edges: list[tuple[int, int]]) -> tuple[int, int]:
    """Count line-graph nodes/edges by direct construction.

    Every unordered pair of distinct original edges contributes one
    line-graph edge per shared endpoint (parallel edges share two).
    """
    incident: dict[int, list[int]] = {}
    for idx, (u, v) in enumerate(edges):
        if u == v:
            raise ValueError("self edges are not supported")
        incident.setdefault(u, []).append(idx)
        incident.setdefault(v, []).append(idx)
    line_edges = 0
    for ids in incident.values():
        line_edges += len(ids) * (len(ids) - 1) // 2
    return len(edges), line_edges


# --- named builders -----------------------------------------------------------


def make_builder(name: str, *, neighbor_rank: int = 12, t: int = 3, self_edges: bool = False,
                 radius: float = 1.0, k: int = 12, perturbation_seed: int = 0) -> GraphBuilder:
    """Named graph builders for the CLI and the audit harness."""
    if name == "radius":
        def build(c: Crystal) -> CrystalGraph:
            g = build_radius_graph(c, neighbor_rank=neighbor_rank)
            return add_self_connecting_edges(g, c) if self_edges else g
        return build
    if name == "tfc":
        def build(c: Crystal) -> CrystalGraph:
            g = build_t_fully_connected(c, t=t)
            return add_self_connecting_edges(g, c) if self_edges else g
        return build
    if name == "ocgraph":
        return lambda c: ocgraph_builder(c, r=radius)
    if name == "knn":
        return lambda c: knn_distance_only_builder(c, k=k, perturbation_seed=perturbation_seed)
    raise ValueError(f"unknown builder {name!r}")
