"""Numeric node and edge features for crystal graphs.

Atoms become one-hot vectors over atomic number followed by a learned
linear map; edge distances expand onto a grid of Gaussian radial basis
kernels followed by a nonlinear layer and a linear layer.  Because edge
features depend on the distance alone, every invariance of the graph
construction carries over to the featurized graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .engine import Tensor
from .graphs import CrystalGraph

ATOM_DIM = 119  # one-hot over atomic number, index 0 unused


def rbf_expand(d, n_kernels: int = 128, lo: float = 0.0, hi: float = 8.0) -> np.ndarray:
    """Expand distances onto Gaussian kernels with centers from lo to hi.

    Kernel width equals the center spacing (about 50% overlap between
    adjacent kernels).  Distances beyond ``hi`` yield small tail values.
    """
    if n_kernels < 2:
        raise ValueError("need at least two kernels")
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distances must be non-negative")
    centers = np.linspace(lo, hi, n_kernels)
    width = (hi - lo) / (n_kernels - 1)
    return np.exp(-((d[..., None] - centers) ** 2) / width**2)


def embed_atom(z: int, dim: int = ATOM_DIM) -> np.ndarray:
    """One-hot embedding at index ``z``; distinct species are orthogonal."""
    z = int(z)
    if not 1 <= z <= 118:
        raise ValueError(f"atomic number out of range: {z}")
    out = np.zeros(dim)
    out[z] = 1.0
    return out


def one_hot_atoms(atomic_numbers: np.ndarray, dim: int = ATOM_DIM) -> np.ndarray:
    z = np.asarray(atomic_numbers, dtype=int)
    if np.any(z < 1) or np.any(z > 118):
        raise ValueError("atomic numbers must lie in [1, 118]")
    out = np.zeros((z.size, dim))
    out[np.arange(z.size), z] = 1.0
    return out


@dataclass
class PreparedGraph:
    """Constant per-graph inputs: one-hot atoms, RBF rows, edge index arrays.

    ``graph_ids`` maps each node to its graph so disjoint-union batches can
    be pooled per graph.
    """

    node_one_hot: np.ndarray          # (n, ATOM_DIM)
    edge_rbf: np.ndarray              # (E, n_kernels)
    src: np.ndarray                   # (E,)
    dst: np.ndarray                   # (E,)
    graph_ids: np.ndarray             # (n,)
    n_graphs: int

    @property
    def n_nodes(self) -> int:
        return self.node_one_hot.shape[0]

    @property
    def n_edges(self) -> int:
        return self.src.size


def prepare_graph(graph: CrystalGraph, n_kernels: int = 128, lo: float = 0.0, hi: float = 8.0) -> PreparedGraph:
    src, dst, dist = graph.edge_arrays()
    return PreparedGraph(
        node_one_hot=one_hot_atoms(graph.node_atomic_numbers),
        edge_rbf=rbf_expand(dist, n_kernels=n_kernels, lo=lo, hi=hi),
        src=src,
        dst=dst,
        graph_ids=np.zeros(graph.n_nodes, dtype=int),
        n_graphs=1,
    )


def batch_prepared(graphs: list[PreparedGraph]) -> PreparedGraph:
    """Disjoint union of prepared graphs with per-node graph ids."""
    if not graphs:
        raise ValueError("cannot batch zero graphs")
    node_offset = 0
    graph_offset = 0
    one_hot, rbf, src, dst, gids = [], [], [], [], []
    for g in graphs:
        one_hot.append(g.node_one_hot)
        rbf.append(g.edge_rbf)
        src.append(g.src + node_offset)
        dst.append(g.dst + node_offset)
        gids.append(g.graph_ids + graph_offset)
        node_offset += g.n_nodes
        graph_offset += g.n_graphs
    return PreparedGraph(
        node_one_hot=np.concatenate(one_hot, axis=0),
        edge_rbf=np.concatenate(rbf, axis=0),
        src=np.concatenate(src),
        dst=np.concatenate(dst),
        graph_ids=np.concatenate(gids),
        n_graphs=graph_offset,
    )


class GraphEmbedding:
    """Learned maps from one-hot atoms and RBF rows to model width."""

    def __init__(self, d_model: int, n_kernels: int = 128, lo: float = 0.0, hi: float = 8.0,
                 activation: str = "silu", rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.d_model = d_model
        self.n_kernels = n_kernels
        self.lo = lo
        self.hi = hi
        self.activation = activation

        def init(shape, fan_in):
            return Tensor(rng.standard_normal(shape) / np.sqrt(fan_in), requires_grad=True)

        self.node_w = init((ATOM_DIM, d_model), ATOM_DIM)
        self.node_b = Tensor(np.zeros(d_model), requires_grad=True)
        self.edge_w1 = init((n_kernels, d_model), n_kernels)
        self.edge_b1 = Tensor(np.zeros(d_model), requires_grad=True)
        self.edge_w2 = init((d_model, d_model), d_model)
        self.edge_b2 = Tensor(np.zeros(d_model), requires_grad=True)

    def parameters(self, prefix: str = "embed") -> dict[str, Tensor]:
        return {
            f"{prefix}.node.w": self.node_w,
            f"{prefix}.node.b": self.node_b,
            f"{prefix}.edge.w1": self.edge_w1,
            f"{prefix}.edge.b1": self.edge_b1,
            f"{prefix}.edge.w2": self.edge_w2,
            f"{prefix}.edge.b2": self.edge_b2,
        }

    def node_input(self, prepared: PreparedGraph) -> Tensor:
        return engine.linear(Tensor(prepared.node_one_hot), self.node_w, self.node_b)

    def edge_input(self, prepared: PreparedGraph) -> Tensor:
        act = engine.ACTIVATIONS[self.activation]
        h = act(engine.linear(Tensor(prepared.edge_rbf), self.edge_w1, self.edge_b1))
        return engine.linear(h, self.edge_w2, self.edge_b2)


@dataclass
class FeaturizedGraph:
    """Model-ready inputs: embedded nodes/edges plus adjacency arrays."""

    node_input: Tensor                # (n, d_model)
    edge_input: Tensor                # (E, d_model)
    src: np.ndarray
    dst: np.ndarray
    graph_ids: np.ndarray
    n_graphs: int


def featurize_graph(graph: CrystalGraph, params: GraphEmbedding) -> FeaturizedGraph:
    """Embed a crystal graph with the given weights; deterministic."""
    prepared = prepare_graph(graph, n_kernels=params.n_kernels, lo=params.lo, hi=params.hi)
    return FeaturizedGraph(
        node_input=params.node_input(prepared),
        edge_input=params.edge_input(prepared),
        src=prepared.src,
        dst=prepared.dst,
        graph_ids=prepared.graph_ids,
        n_graphs=1,
    )
