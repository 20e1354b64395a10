"""Full architecture: tuple-state initialization, SuperNode, refinement stack.

The forward pass is: build the initial relationship tensor from graph
features (optionally augmented with a SuperNode), refine it through L
pre-norm blocks (pivotal attention + feed-forward, both residual), apply a
final norm, and decode task predictions from the relevant slots.

The SuperNode augmentation appends one virtual node whose node feature is a
learnable embedding plus a 0/1 virtual-node indicator channel; its incident
pairs carry a learnable edge vector with presence flag 1. Node-level
readouts use the pair state (i, SN), graph-level readouts the (SN, SN)
state, edge-level readouts the real-pair block directly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .attention import (
    AttentionParams,
    KOrderAttentionParams,
    _check_combine,
    init_attention_params,
    init_korder_attention_params,
    korder_pivotal_attention,
    pivotal_attention_naive,
    pivotal_attention_streamed,
)
from .graphs import Graph
from .nn import (
    FFNParams,
    LinearParams,
    NormParams,
    Tensor,
    _accumulate,
    ffn,
    init_ffn,
    init_linear,
    init_norm,
    layer_norm,
    linear,
    rms_norm,
    take_slice,
    tensor,
)

NORM_KINDS = ("layer", "rms")
KERNEL_KINDS = ("naive", "streamed")
READOUT_LEVELS = ("graph", "node", "edge")


@dataclass
class ModelConfig:
    layers: int = 2
    rel_dim: int = 16
    heads: int = 2
    combine: str = "additive"
    order: int = 2
    readout: str = "edge"
    supernode: bool = True
    seed: int = 0
    node_dim: int = 0
    edge_dim: int = 0
    graph_dim: int = 0
    init_hidden: int = 0  # 0 means 2 * rel_dim
    ffn_hidden: int = 0  # 0 means 2 * rel_dim
    norm: str = "layer"
    kernel: str = "naive"
    tile: int = 32
    decoder_dim: int = 1
    bias: bool = True

    def __post_init__(self):
        # layers == 0 is a degenerate stack allowed for testing
        if self.layers < 0:
            raise ValueError(f"layers must be >= 0, got {self.layers}")
        if self.rel_dim < 1 or self.rel_dim % self.heads != 0:
            raise ValueError(f"rel_dim {self.rel_dim} must be positive and divisible by heads {self.heads}")
        if self.order not in (1, 2, 3):
            raise ValueError(f"order must be 1, 2 or 3, got {self.order}")
        _check_combine(self.combine)
        if self.norm not in NORM_KINDS:
            raise ValueError(f"norm must be one of {NORM_KINDS}")
        if self.kernel not in KERNEL_KINDS:
            raise ValueError(f"kernel must be one of {KERNEL_KINDS}")
        if self.readout not in READOUT_LEVELS:
            raise ValueError(f"readout must be one of {READOUT_LEVELS}")
        if min(self.node_dim, self.edge_dim, self.graph_dim) < 0:
            raise ValueError("feature dims must be nonnegative")

    @property
    def init_hidden_dim(self):
        return self.init_hidden or 2 * self.rel_dim

    @property
    def ffn_hidden_dim(self):
        return self.ffn_hidden or 2 * self.rel_dim

    @property
    def aug_node_dim(self):
        return self.node_dim + (1 if self.supernode else 0)

    @property
    def init_input_dim(self):
        pairs = self.order * (self.order - 1) // 2
        return self.graph_dim + self.order * self.aug_node_dim + pairs * (self.edge_dim + 1)

    def to_file(self, path):
        with open(path, "w") as fh:
            for key in sorted(self.__dataclass_fields__):
                fh.write(f"{key}={getattr(self, key)}\n")

    @classmethod
    def from_file(cls, path):
        kwargs = {}
        fields = cls.__dataclass_fields__
        with open(path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
                key, value = (s.strip() for s in line.split("=", 1))
                if key not in fields:
                    raise ValueError(f"line {lineno}: unknown config key {key!r}")
                ftype = fields[key].type
                if ftype == "bool":
                    kwargs[key] = value.lower() in ("1", "true", "yes")
                elif ftype == "int":
                    kwargs[key] = int(value)
                else:
                    kwargs[key] = value
        return cls(**kwargs)


@dataclass
class BlockParams:
    norm1: NormParams
    attn: object  # AttentionParams or KOrderAttentionParams
    norm2: NormParams
    ffn: FFNParams

    def named(self, prefix):
        yield from self.norm1.named(f"{prefix}.norm1")
        yield from self.attn.named(f"{prefix}.attn")
        yield from self.norm2.named(f"{prefix}.norm2")
        yield from self.ffn.named(f"{prefix}.ffn")


@dataclass
class ModelParams:
    init_mlp: FFNParams
    sn_node: Tensor | None
    sn_edge: Tensor | None
    layers: list
    final_norm: NormParams
    decoder: LinearParams

    def named(self):
        yield from self.init_mlp.named("init")
        if self.sn_node is not None:
            yield "sn.node", self.sn_node
        if self.sn_edge is not None:
            yield "sn.edge", self.sn_edge
        for i, layer in enumerate(self.layers):
            yield from layer.named(f"block{i:02d}")
        yield from self.final_norm.named("final_norm")
        yield from self.decoder.named("decoder")

    def tensors(self):
        return [t for _, t in self.named()]

    def zero_grads(self):
        for t in self.tensors():
            t.zero_grad()


def init_model_params(cfg: ModelConfig) -> ModelParams:
    rng = np.random.default_rng(cfg.seed)
    d = cfg.rel_dim
    init_mlp = FFNParams(
        inner=init_linear(rng, cfg.init_input_dim, cfg.init_hidden_dim, bias=cfg.bias),
        outer=init_linear(rng, cfg.init_hidden_dim, d, bias=cfg.bias),
    )
    sn_node = sn_edge = None
    if cfg.supernode:
        scale_n = 1.0 / np.sqrt(max(cfg.node_dim, 1))
        scale_e = 1.0 / np.sqrt(max(cfg.edge_dim, 1))
        sn_node = tensor(rng.uniform(-scale_n, scale_n, size=cfg.node_dim), name="sn.node")
        sn_edge = tensor(rng.uniform(-scale_e, scale_e, size=cfg.edge_dim), name="sn.edge")
    layers = []
    for _ in range(cfg.layers):
        if cfg.order == 2:
            attn = init_attention_params(rng, d, cfg.heads, bias=cfg.bias)
        else:
            attn = init_korder_attention_params(rng, d, cfg.heads, cfg.order, bias=cfg.bias)
        layers.append(
            BlockParams(
                norm1=init_norm(d),
                attn=attn,
                norm2=init_norm(d),
                ffn=init_ffn(rng, d, cfg.ffn_hidden_dim, bias=cfg.bias),
            )
        )
    return ModelParams(
        init_mlp=init_mlp,
        sn_node=sn_node,
        sn_edge=sn_edge,
        layers=layers,
        final_norm=init_norm(d),
        decoder=init_linear(rng, d, cfg.decoder_dim, bias=cfg.bias),
    )


def param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count; independent of graph size."""
    d = cfg.rel_dim
    b = 1 if cfg.bias else 0
    h_init, f = cfg.init_hidden_dim, cfg.ffn_hidden_dim
    total = cfg.init_input_dim * h_init + b * h_init + h_init * d + b * d
    if cfg.supernode:
        total += cfg.node_dim + cfg.edge_dim
    n_proj = 6 if cfg.order == 2 else 2 * cfg.order + 2
    per_layer = 2 * (2 * d) + n_proj * (d * d + b * d) + (d * f + b * f + f * d + b * d)
    total += cfg.layers * per_layer
    total += 2 * d  # final norm
    total += d * cfg.decoder_dim + b * cfg.decoder_dim
    return total


def relation_size(cfg: ModelConfig, n: int) -> int:
    """Entries in the relationship state for an n-node input graph."""
    n_aug = n + (1 if cfg.supernode else 0)
    return n_aug**cfg.order * cfg.rel_dim


# ---------------------------------------------------------------------------
# SuperNode augmentation and relationship initialization
# ---------------------------------------------------------------------------


def _check_graph_dims(g: Graph, cfg: ModelConfig):
    if g.node_dim != cfg.node_dim or g.edge_dim != cfg.edge_dim or g.graph_dim != cfg.graph_dim:
        raise ValueError(
            f"graph dims (d_n={g.node_dim}, d_e={g.edge_dim}, d_g={g.graph_dim}) do not match "
            f"config ({cfg.node_dim}, {cfg.edge_dim}, {cfg.graph_dim})"
        )


def _augmented_arrays(g: Graph, cfg: ModelConfig, params: ModelParams):
    """Node matrix (n', d_n'), pair matrix (n', n', d_e + 1) with flags."""
    n = g.n
    sn = cfg.supernode
    n_aug = n + 1 if sn else n
    x_aug = np.zeros((n_aug, cfg.aug_node_dim))
    x_aug[:n, : cfg.node_dim] = g.node_feats
    e_aug = np.zeros((n_aug, n_aug, cfg.edge_dim + 1))
    if g.edge_feats is not None:
        e_aug[:n, :n, : cfg.edge_dim] = g.edge_feats
    e_aug[:n, :n, cfg.edge_dim] = g.adjacency.astype(np.float64)
    if sn:
        x_aug[n, : cfg.node_dim] = params.sn_node.data
        x_aug[n, cfg.node_dim] = 1.0
        e_aug[n, :n, : cfg.edge_dim] = params.sn_edge.data
        e_aug[:n, n, : cfg.edge_dim] = params.sn_edge.data
        e_aug[n, :n, cfg.edge_dim] = 1.0
        e_aug[:n, n, cfg.edge_dim] = 1.0
    return x_aug, e_aug


def attach_supernode(g: Graph, cfg: ModelConfig, params: ModelParams) -> Graph:
    """Materialize the SuperNode-augmented graph (one extra node).

    The SuperNode's feature row is the learnable embedding followed by the
    indicator 1; its incident edges carry the learnable edge vector. The
    original adjacency is preserved on the leading n x n block.
    """
    if not cfg.supernode:
        return g.copy()
    _check_graph_dims(g, cfg)
    x_aug, e_aug = _augmented_arrays(g, cfg, params)
    n = g.n
    adj = np.zeros((n + 1, n + 1), dtype=bool)
    adj[:n, :n] = g.adjacency
    adj[n, :n] = True
    adj[:n, n] = True
    w = np.zeros((n + 1, n + 1))
    w[:n, :n] = g.weights
    edge_feats = e_aug[:, :, : cfg.edge_dim] if cfg.edge_dim > 0 else None
    return Graph(
        n=n + 1,
        node_feats=x_aug,
        adjacency=adj,
        weights=w,
        edge_feats=edge_feats,
        graph_feats=None if g.graph_feats is None else g.graph_feats.copy(),
        directed=g.directed,
    )


def _assemble_init_input(g: Graph, cfg: ModelConfig, params: ModelParams) -> Tensor:
    """Per-tuple concat [G | X_pos1 .. X_posk | E_pair(lex) ..] as one tensor.

    Pair segments carry the edge features plus a 0/1 presence flag. The
    SuperNode embedding and edge vector enter here, so their gradients flow
    through this node's hand-derived backward.
    """
    k = cfg.order
    x_aug, e_aug = _augmented_arrays(g, cfg, params)
    n_aug = x_aug.shape[0]
    d_in = cfg.init_input_dim
    pairs = list(itertools.combinations(range(k), 2))

    out = np.empty((n_aug,) * k + (d_in,))
    off = 0
    if cfg.graph_dim > 0:
        out[..., :cfg.graph_dim] = g.graph_feats
        off += cfg.graph_dim
    node_offsets = []
    for m in range(k):
        shape = [1] * k + [cfg.aug_node_dim]
        shape[m] = n_aug
        out[..., off : off + cfg.aug_node_dim] = x_aug.reshape(shape)
        node_offsets.append(off)
        off += cfg.aug_node_dim
    pair_offsets = []
    for a, b in pairs:
        # land the two pair axes on tuple positions a and b
        seg = e_aug
        for pos in (p for p in range(k) if p != a and p != b):
            seg = np.expand_dims(seg, axis=pos)
        out[..., off : off + cfg.edge_dim + 1] = seg
        pair_offsets.append(off)
        off += cfg.edge_dim + 1
    assert off == d_in

    needs_grad = cfg.supernode and (cfg.node_dim > 0 or cfg.edge_dim > 0)
    if not needs_grad:
        return Tensor(out)

    sn_idx = n_aug - 1
    result = Tensor(out, parents=(params.sn_node, params.sn_edge))

    def backward(grad):
        d_n, d_e = cfg.node_dim, cfg.edge_dim
        if d_n > 0:
            acc = np.zeros(d_n)
            for m, noff in enumerate(node_offsets):
                sl = np.take(grad[..., noff : noff + d_n], sn_idx, axis=m)
                acc += sl.reshape(-1, d_n).sum(axis=0)
            _accumulate(params.sn_node, acc)
        if d_e > 0:
            acc = np.zeros(d_e)
            for (a, b), poff in zip(pairs, pair_offsets):
                gp = grad[..., poff : poff + d_e]
                s_a = np.take(gp, sn_idx, axis=a).reshape(-1, d_e).sum(axis=0)
                s_b = np.take(gp, sn_idx, axis=b).reshape(-1, d_e).sum(axis=0)
                s_ab = np.take(np.take(gp, sn_idx, axis=b), sn_idx, axis=a).reshape(-1, d_e).sum(axis=0)
                acc += s_a + s_b - 2.0 * s_ab
            _accumulate(params.sn_edge, acc)

    result.backward_fn = backward
    return result


def init_korder(g: Graph, cfg: ModelConfig, params: ModelParams) -> Tensor:
    """Initial order-k relationship tensor: concat lower-order features, MLP."""
    _check_graph_dims(g, cfg)
    assembled = _assemble_init_input(g, cfg, params)
    return ffn(assembled, params.init_mlp)


def init_relationship(g: Graph, cfg: ModelConfig, params: ModelParams) -> Tensor:
    """Pairwise (order-2) initialization; the k=2 case of init_korder."""
    if cfg.order != 2:
        raise ValueError("init_relationship expects an order-2 config")
    return init_korder(g, cfg, params)


# ---------------------------------------------------------------------------
# Refinement blocks and forward pass
# ---------------------------------------------------------------------------


def _norm(x, p, cfg):
    return layer_norm(x, p) if cfg.norm == "layer" else rms_norm(x, p)


def floyd_block(r: Tensor, layer: BlockParams, cfg: ModelConfig) -> Tensor:
    """Pre-norm refinement block: attention then feed-forward, both residual."""
    normed = _norm(r, layer.norm1, cfg)
    if cfg.order == 2:
        if cfg.kernel == "naive":
            att = pivotal_attention_naive(normed, layer.attn, cfg.combine)
        else:
            att = pivotal_attention_streamed(normed, layer.attn, cfg.combine, tile=cfg.tile)
    else:
        att = korder_pivotal_attention(normed, layer.attn, cfg.combine)
    r = nn.add(r, att)
    return nn.add(r, ffn(_norm(r, layer.norm2, cfg), layer.ffn))


def model_forward(g: Graph, cfg: ModelConfig, params: ModelParams) -> Tensor:
    """SuperNode augmentation (if enabled), init, L blocks, final norm."""
    r = init_korder(g, cfg, params)
    for layer in params.layers:
        r = floyd_block(r, layer, cfg)
    return _norm(r, params.final_norm, cfg)


def readout(r: Tensor, level: str, head: LinearParams, cfg: ModelConfig) -> Tensor:
    """Decode predictions from the refined state (order-2 models).

    graph -> decoder(R[SN, SN]); node i -> decoder(R[i, SN]); edge (i, j) ->
    decoder(R[i, j]) over the real-pair block, SuperNode excluded.
    """
    if cfg.order != 2:
        raise ValueError("readout is defined for order-2 models")
    if level not in READOUT_LEVELS:
        raise ValueError(f"readout level must be one of {READOUT_LEVELS}")
    n_aug = r.shape[0]
    if level in ("graph", "node"):
        if not cfg.supernode:
            raise ValueError(f"{level}-level readout requires the SuperNode")
        sn = n_aug - 1
        if level == "graph":
            return linear(take_slice(r, (sn, sn)), head)
        return linear(take_slice(r, (slice(0, sn), sn)), head)
    n_real = n_aug - 1 if cfg.supernode else n_aug
    return linear(take_slice(r, (slice(0, n_real), slice(0, n_real))), head)
