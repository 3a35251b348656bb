"""Edge-wise attention message passing for periodic crystal graphs.

Each layer computes, per attention head and per edge j -> i:

  q_ij = (q_i | q_i | q_i),  k_ij = (k_i | k_j | e_ij'),
  alpha_ij = q_ij o k_ij / sqrt(dim(k_ij)),

gates the concatenated value message (v_i | v_j | e_ij') with
sigmoid(LNorm(alpha_ij)) in that 3*d space, projects it to model width,
and sum-aggregates layer-normalized per-head messages over each node's
incoming edges.  Head outputs are concatenated and merged by one linear
map; the node update is a linear residual plus an activated batch-norm of
the aggregate.  The default gate deliberately omits softmax so the
aggregate scales with node degree; softmax variants are provided for
comparison.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import engine, graphs
from .crystal import Crystal
from .engine import BatchNormState, Tensor
from .featurize import FeaturizedGraph, GraphEmbedding, PreparedGraph, prepare_graph

ATTENTION_VARIANTS = ("sigmoid_norm", "softmax_scalar", "softmax_vector")


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 5
    n_heads: int = 4
    d_model: int = 128
    attention_variant: str = "sigmoid_norm"
    activation: str = "silu"
    rbf_kernels: int = 128
    rbf_lo: float = 0.0
    rbf_hi: float = 8.0
    readout_hidden: int = 128
    neighbor_rank: int = 12
    use_self_edges: bool = True

    def __post_init__(self):
        if self.n_layers < 1 or self.n_heads < 1:
            raise ValueError("need at least one layer and one head")
        if self.d_model < 2:
            raise ValueError("d_model must be >= 2 (layer norm needs a real axis)")
        if self.attention_variant not in ATTENTION_VARIANTS:
            raise ValueError(f"unknown attention variant {self.attention_variant!r}")
        if self.activation not in engine.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def attention_gate(alpha: Tensor, dst, n_nodes: int, variant: str,
                   lnorm_gain: Tensor | None = None, lnorm_bias: Tensor | None = None) -> Tensor:
    """Gate applied to the value message, per edge.

    sigmoid_norm: per-edge sigmoid of the layer-normalized coefficients
    (no coupling between neighbors, so duplicate edges add up).
    softmax_vector: componentwise softmax over each destination's edges.
    softmax_scalar: softmax over mean coefficients, broadcast to all
    components.
    """
    if variant == "sigmoid_norm":
        if lnorm_gain is None or lnorm_bias is None:
            raise ValueError("sigmoid_norm gate needs layer-norm parameters")
        return engine.sigmoid(engine.layer_norm(alpha, lnorm_gain, lnorm_bias))
    if variant == "softmax_vector":
        return engine.segment_softmax(alpha, dst, n_nodes)
    if variant == "softmax_scalar":
        scalar = engine.mean(alpha, axis=1)
        gate = engine.segment_softmax(scalar, dst, n_nodes)
        return engine.reshape(gate, (alpha.shape[0], 1))
    raise ValueError(f"unknown attention variant {variant!r}")


class MatformerLayer:
    """Parameters and forward pass of one message-passing layer."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        d = config.d_model
        h = config.n_heads
        self.config = config

        def init(shape, fan_in):
            return Tensor(rng.standard_normal(shape) / math.sqrt(fan_in), requires_grad=True)

        def zeros(shape):
            return Tensor(np.zeros(shape), requires_grad=True)

        def ones(shape):
            return Tensor(np.ones(shape), requires_grad=True)

        self.heads = []
        for _ in range(h):
            self.heads.append(
                {
                    "q_w": init((d, d), d), "q_b": zeros(d),
                    "k_w": init((d, d), d), "k_b": zeros(d),
                    "v_w": init((d, d), d), "v_b": zeros(d),
                    "e_w": init((d, d), d), "e_b": zeros(d),
                    "upd_w": init((3 * d, d), 3 * d), "upd_b": zeros(d),
                    "msg_w": init((d, d), d), "msg_b": zeros(d),
                }
            )
        self.alpha_ln_gain = ones(3 * d)
        self.alpha_ln_bias = zeros(3 * d)
        self.msg_ln_gain = ones(d)
        self.msg_ln_bias = zeros(d)
        self.merge_w = init((h * d, d), h * d)
        self.merge_b = zeros(d)
        self.fea_w = init((d, d), d)
        self.fea_b = zeros(d)
        self.bn_gamma = ones(d)
        self.bn_beta = zeros(d)
        self.bn_state = BatchNormState.create(d)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for idx, head in enumerate(self.heads):
            for key, tensor in head.items():
                out[f"{prefix}.head{idx}.{key}"] = tensor
        out.update(
            {
                f"{prefix}.alpha_ln.gain": self.alpha_ln_gain,
                f"{prefix}.alpha_ln.bias": self.alpha_ln_bias,
                f"{prefix}.msg_ln.gain": self.msg_ln_gain,
                f"{prefix}.msg_ln.bias": self.msg_ln_bias,
                f"{prefix}.merge.w": self.merge_w,
                f"{prefix}.merge.b": self.merge_b,
                f"{prefix}.fea.w": self.fea_w,
                f"{prefix}.fea.b": self.fea_b,
                f"{prefix}.bn.gamma": self.bn_gamma,
                f"{prefix}.bn.beta": self.bn_beta,
            }
        )
        return out

    def aggregate_messages(self, node_feats: Tensor, edge_feats: Tensor, src, dst,
                           variant: str | None = None) -> Tensor:
        """Merged per-node message m_i, before batch norm and the residual."""
        n_nodes = node_feats.shape[0]
        variant = variant or self.config.attention_variant
        d_k = 3 * self.config.d_model

        head_outputs = []
        for head in self.heads:
            q = engine.linear(node_feats, head["q_w"], head["q_b"])
            k = engine.linear(node_feats, head["k_w"], head["k_b"])
            v = engine.linear(node_feats, head["v_w"], head["v_b"])
            e = engine.linear(edge_feats, head["e_w"], head["e_b"])

            q_dst = engine.gather_rows(q, dst)
            k_pair = engine.concat([engine.gather_rows(k, dst), engine.gather_rows(k, src), e])
            q_trip = engine.concat([q_dst, q_dst, q_dst])
            alpha = engine.scale(engine.mul(q_trip, k_pair), 1.0 / math.sqrt(d_k))

            gate = attention_gate(alpha, dst, n_nodes, variant,
                                  self.alpha_ln_gain, self.alpha_ln_bias)
            v_pair = engine.concat([engine.gather_rows(v, dst), engine.gather_rows(v, src), e])
            message = engine.linear(engine.mul(gate, v_pair), head["upd_w"], head["upd_b"])
            message = engine.layer_norm(
                engine.linear(message, head["msg_w"], head["msg_b"]),
                self.msg_ln_gain, self.msg_ln_bias,
            )
            head_outputs.append(engine.scatter_sum(message, dst, n_nodes))

        return engine.linear(engine.concat(head_outputs, axis=1), self.merge_w, self.merge_b)

    def forward(self, node_feats: Tensor, edge_feats: Tensor, src, dst,
                training: bool = False, variant: str | None = None) -> Tensor:
        act = engine.ACTIVATIONS[self.config.activation]
        merged = self.aggregate_messages(node_feats, edge_feats, src, dst, variant)
        normed = engine.batch_norm(merged, self.bn_gamma, self.bn_beta, self.bn_state, training)
        return engine.add(engine.linear(node_feats, self.fea_w, self.fea_b), act(normed))


def layer_forward(node_feats: Tensor, edge_feats: Tensor, src, dst,
                  layer: MatformerLayer, training: bool = False,
                  variant: str | None = None) -> Tensor:
    """One message-passing step; requires every node to have an edge."""
    counts = np.bincount(np.asarray(dst, dtype=int), minlength=node_feats.shape[0])
    if counts.min() == 0:
        raise ValueError("isolated node: aggregation over an empty neighborhood is undefined")
    return layer.forward(node_feats, edge_feats, src, dst, training, variant)


class Matformer:
    """Full model: embeddings, stacked layers, mean pooling, readout MLP."""

    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        self.config = config or ModelConfig()
        rng = np.random.default_rng(seed)
        c = self.config
        self.embedding = GraphEmbedding(
            c.d_model, n_kernels=c.rbf_kernels, lo=c.rbf_lo, hi=c.rbf_hi,
            activation=c.activation, rng=rng,
        )
        self.layers = [MatformerLayer(c, rng) for _ in range(c.n_layers)]

        def init(shape, fan_in):
            return Tensor(rng.standard_normal(shape) / math.sqrt(fan_in), requires_grad=True)

        self.readout_w1 = init((c.d_model, c.readout_hidden), c.d_model)
        self.readout_b1 = Tensor(np.zeros(c.readout_hidden), requires_grad=True)
        self.readout_w2 = init((c.readout_hidden, 1), c.readout_hidden)
        self.readout_b2 = Tensor(np.zeros(1), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        params = dict(self.embedding.parameters("embed"))
        for idx, layer in enumerate(self.layers):
            params.update(layer.parameters(f"layer{idx}"))
        params.update(
            {
                "readout.w1": self.readout_w1,
                "readout.b1": self.readout_b1,
                "readout.w2": self.readout_w2,
                "readout.b2": self.readout_b2,
            }
        )
        return params

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def build_graph(self, crystal: Crystal) -> graphs.CrystalGraph:
        g = graphs.build_radius_graph(crystal, neighbor_rank=self.config.neighbor_rank)
        if self.config.use_self_edges:
            g = graphs.add_self_connecting_edges(g, crystal)
        return g

    def prepare(self, crystal: Crystal) -> PreparedGraph:
        c = self.config
        return prepare_graph(self.build_graph(crystal), n_kernels=c.rbf_kernels, lo=c.rbf_lo, hi=c.rbf_hi)

    def forward(self, prepared: PreparedGraph, training: bool = False) -> Tensor:
        """Predictions for each graph in the (possibly batched) input."""
        counts = np.bincount(prepared.dst, minlength=prepared.n_nodes)
        if counts.min() == 0:
            raise ValueError("isolated node: aggregation over an empty neighborhood is undefined")
        node = self.embedding.node_input(prepared)
        edge = self.embedding.edge_input(prepared)
        for layer in self.layers:
            node = layer.forward(node, edge, prepared.src, prepared.dst, training)
        pooled = engine.segment_mean(node, prepared.graph_ids, prepared.n_graphs)
        act = engine.ACTIVATIONS[self.config.activation]
        hidden = act(engine.linear(pooled, self.readout_w1, self.readout_b1))
        return engine.linear(hidden, self.readout_w2, self.readout_b2)

    def forward_features(self, fgraph: FeaturizedGraph, training: bool = False) -> Tensor:
        """Forward pass from already-embedded features."""
        node, edge = fgraph.node_input, fgraph.edge_input
        for layer in self.layers:
            node = layer.forward(node, edge, fgraph.src, fgraph.dst, training)
        pooled = engine.segment_mean(node, fgraph.graph_ids, fgraph.n_graphs)
        act = engine.ACTIVATIONS[self.config.activation]
        hidden = act(engine.linear(pooled, self.readout_w1, self.readout_b1))
        return engine.linear(hidden, self.readout_w2, self.readout_b2)

    def predict(self, crystal: Crystal) -> float:
        out = self.forward(self.prepare(crystal), training=False)
        return float(out.values[0, 0])

    def to_checkpoint(self) -> dict:
        return {
            "config": asdict(self.config),
            "params": engine.parameters_to_dict(self.parameters()),
            "bn_states": [layer.bn_state.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_checkpoint(cls, data: dict) -> "Matformer":
        model = cls(ModelConfig(**data["config"]))
        engine.load_parameter_values(model.parameters(), data["params"])
        for layer, state in zip(model.layers, data["bn_states"]):
            layer.bn_state = BatchNormState.from_dict(state)
        return model


def model_forward(model: Matformer, prepared: PreparedGraph, training: bool = False) -> np.ndarray:
    """Per-graph predictions as a plain array."""
    return model.forward(prepared, training=training).values[:, 0].copy()
