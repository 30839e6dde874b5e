"""Network layers: dilated/annular graph convolutions, dense graph fusion,
the encoder extractor, interpolation upsampling and the multi-level decoder."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import HierarchyLevels, SparseNeighborhood, interpolation_weights
from .tensor import (
    LinearParams,
    Tensor,
    add,
    concat,
    gather_rows,
    linear,
    matmul,
    max_over_neighbors,
    relu,
    reshape,
    slice_axis,
    sub,
    weighted_neighbor_sum,
)


# -- graph convolutions ------------------------------------------------------

@dataclass
class DGConvLayer:
    edge_map: LinearParams  # [2*C_in, C_out]
    dilation: int = 1
    step: int = 4
    k: int = 32

    @property
    def c_in(self) -> int:
        return self.edge_map.c_in // 2

    def parameters(self) -> list[Tensor]:
        return self.edge_map.parameters()


def _edge_conv(x: Tensor, nbr: np.ndarray, p: LinearParams) -> Tensor:
    # [x_i, x_j - x_i] @ [W_a; W_b] + b  ==  x_i @ (W_a - W_b) + b + x_j @ W_b
    c = x.shape[1]
    if p.c_in != 2 * c:
        raise ValueError(f"edge map expects {p.c_in // 2} input channels, got {c}")
    w_a = slice_axis(p.weight, 0, c)
    w_b = slice_axis(p.weight, c, 2 * c)
    center = add(matmul(x, sub(w_a, w_b)), p.bias)
    neighbors = gather_rows(matmul(x, w_b), nbr)
    n, co = center.shape
    edges = relu(add(neighbors, reshape(center, (n, 1, co))))
    out, _ = max_over_neighbors(edges)
    return out


def dgconv_forward(features: Tensor, graph: SparseNeighborhood, layer: DGConvLayer) -> Tensor:
    """Max over dilated neighbors of ``relu(W [x_i, x_j - x_i] + b)``."""
    if graph.center_count != features.shape[0]:
        raise ValueError(f"graph has {graph.center_count} centers for {features.shape[0]} points")
    if graph.mode != "dilated":
        raise ValueError("dgconv needs a dilated graph")
    return _edge_conv(features, graph.neighbor_indices, layer.edge_map)


def adconv_forward(features: Tensor, graph: SparseNeighborhood, layer: DGConvLayer) -> Tensor:
    """Same aggregation as :func:`dgconv_forward` over an annular ring."""
    if graph.center_count != features.shape[0]:
        raise ValueError(f"graph has {graph.center_count} centers for {features.shape[0]} points")
    if graph.mode != "annular":
        raise ValueError("adconv needs an annular graph")
    return _edge_conv(features, graph.neighbor_indices, layer.edge_map)


# -- dense dilated/annular fusion --------------------------------------------

@dataclass
class DAGFusionConfig:
    dilation_rates: tuple[int, ...] = (1, 2, 4, 8)
    branch_channels: int = 64
    branch_out_channels: int = 128
    out_channels: int = 256
    dense_connections: bool = True
    aggregation: str = "concat"  # or "add"

    def __post_init__(self):
        rates = tuple(int(r) for r in self.dilation_rates)
        if not rates:
            raise ValueError("at least one dilation rate is required")
        if any(b <= a for a, b in zip(rates, rates[1:])) or rates[0] < 1:
            raise ValueError(f"dilation rates must be positive and strictly increasing: {rates}")
        if self.aggregation not in ("concat", "add"):
            raise ValueError(f"aggregation must be 'concat' or 'add', not {self.aggregation!r}")
        self.dilation_rates = rates

    def layer_inputs(self, c_in: int) -> list[int]:
        cp = self.branch_channels
        if self.dense_connections:
            return [c_in + m * cp for m in range(len(self.dilation_rates))]
        return [c_in] + [cp] * (len(self.dilation_rates) - 1)

    def reduced_channels(self, c_in: int) -> int:
        m = len(self.dilation_rates)
        if self.aggregation == "concat":
            return c_in + m * self.branch_channels
        return c_in + self.branch_channels


@dataclass
class DAGFusionParams:
    dg_layers: list[DGConvLayer]
    ad_layers: list[DGConvLayer]
    reduce_dg: LinearParams
    reduce_ad: LinearParams
    fuse: LinearParams

    @classmethod
    def init(cls, c_in: int, cfg: DAGFusionConfig, rng, k: int = 32, step: int = 4, dtype=np.float32):
        def branch(tag):
            return [DGConvLayer(LinearParams.init(2 * ci, cfg.branch_channels, rng, f"{tag}{i}", dtype),
                                r, step if tag == "dg" else k, k)
                    for i, (ci, r) in enumerate(zip(cfg.layer_inputs(c_in), cfg.dilation_rates))]
        dg = branch("dg")
        ad = branch("ad")
        red = cfg.reduced_channels(c_in)
        return cls(dg, ad,
                   LinearParams.init(red, cfg.branch_out_channels, rng, "reduce_dg", dtype),
                   LinearParams.init(red, cfg.branch_out_channels, rng, "reduce_ad", dtype),
                   LinearParams.init(2 * cfg.branch_out_channels, cfg.out_channels, rng, "fuse", dtype))

    def parameters(self) -> list[Tensor]:
        out = []
        for layer in self.dg_layers + self.ad_layers:
            out += layer.parameters()
        return out + self.reduce_dg.parameters() + self.reduce_ad.parameters() + self.fuse.parameters()


def _cascade(x: Tensor, layers, graphs, conv, dense: bool) -> list[Tensor]:
    maps = [x]
    for layer, graph in zip(layers, graphs):
        inp = concat(maps) if dense else maps[-1]
        maps.append(conv(inp, graph, layer))
    return maps


def _aggregate(maps: list[Tensor], how: str) -> Tensor:
    if how == "concat":
        return concat(maps)
    acc = maps[1]
    for m in maps[2:]:
        acc = add(acc, m)
    return concat([maps[0], acc])


def dagfusion_forward(features: Tensor, graphs: dict, params: DAGFusionParams,
                      cfg: DAGFusionConfig) -> Tensor:
    """Dense cascades of dilated and annular convolutions, fused by MLPs.

    ``graphs`` maps each dilation rate to its ``(dilated, annular)`` pair.
    """
    missing = [r for r in cfg.dilation_rates if r not in graphs]
    if missing:
        raise KeyError(f"no graphs for dilation rates {missing}")
    dg_graphs = [graphs[r][0] for r in cfg.dilation_rates]
    ad_graphs = [graphs[r][1] for r in cfg.dilation_rates]
    dg_maps = _cascade(features, params.dg_layers, dg_graphs, dgconv_forward, cfg.dense_connections)
    ad_maps = _cascade(features, params.ad_layers, ad_graphs, adconv_forward, cfg.dense_connections)
    f_dg = relu(linear(_aggregate(dg_maps, cfg.aggregation), params.reduce_dg))
    f_ad = relu(linear(_aggregate(ad_maps, cfg.aggregation), params.reduce_ad))
    return relu(linear(concat([f_dg, f_ad]), params.fuse))


# -- encoder -----------------------------------------------------------------

@dataclass
class EncoderParams:
    edge: LinearParams  # [3 + C_in, C_out]
    post: LinearParams  # [C_out, C_out]

    @classmethod
    def init(cls, c_in: int, c_out: int, rng, name: str, dtype=np.float32):
        return cls(LinearParams.init(3 + c_in, c_out, rng, f"{name}.edge", dtype),
                   LinearParams.init(c_out, c_out, rng, f"{name}.post", dtype))

    def parameters(self) -> list[Tensor]:
        return self.edge.parameters() + self.post.parameters()


def encoder_extract(features: Tensor, hierarchy: HierarchyLevels, level: int,
                    params: EncoderParams) -> Tensor:
    """Pool level ``level-1`` features onto the FPS centroids of ``level``.

    Each centroid gathers its mapping-graph neighbors, forms
    ``[p_j - p_c, f_j]`` per neighbor, applies a shared linear map and ReLU,
    max-pools, and finishes with a pointwise linear map and ReLU.
    """
    if not 1 <= level <= hierarchy.depth:
        raise IndexError(f"level {level} outside 1..{hierarchy.depth}")
    fine = hierarchy.xyz[level - 1]
    centers = hierarchy.xyz[level]
    nbr = hierarchy.mapping_graphs[level - 1]
    if features.shape[0] != len(fine):
        raise ValueError(f"expected {len(fine)} rows at level {level - 1}, got {features.shape[0]}")
    c = features.shape[1]
    if params.edge.c_in != 3 + c:
        raise ValueError(f"encoder expects {params.edge.c_in - 3} input channels, got {c}")
    rel = Tensor(fine[nbr] - centers[:, None, :], dtype=features.dtype)
    w_pos = slice_axis(params.edge.weight, 0, 3)
    w_feat = slice_axis(params.edge.weight, 3, 3 + c)
    pre = add(add(matmul(rel, w_pos), gather_rows(matmul(features, w_feat), nbr)), params.edge.bias)
    pooled, _ = max_over_neighbors(relu(pre))
    return relu(linear(pooled, params.post))


# -- upsampling and decoding -------------------------------------------------

def upsample_interpolate(coarse: Tensor, coarse_xyz=None, fine_xyz=None, weights=None) -> Tensor:
    """Inverse-distance interpolation from 3 nearest coarse points.

    Pass precomputed ``weights=(idx, w)`` to skip the neighbor search.
    """
    if weights is None:
        weights = interpolation_weights(coarse_xyz, fine_xyz)
    idx, w = weights
    return weighted_neighbor_sum(gather_rows(coarse, idx), w)


@dataclass
class DecoderStack:
    fuse: list[LinearParams]  # per level 0..L-1: [C_enc[l] + C_G[l+1], C_dec[l]]
    heads: list[LinearParams]  # per level 0..L: [C_G[l], C]

    @classmethod
    def init(cls, enc_channels: Sequence[int], fused_channels: int, dec_channels: Sequence[int],
             num_classes: int, rng, dtype=np.float32):
        depth = len(enc_channels) - 1
        g = [0] * (depth + 1)
        g[depth] = fused_channels
        fuse = [None] * depth
        for lvl in range(depth - 1, -1, -1):
            fuse[lvl] = LinearParams.init(enc_channels[lvl] + g[lvl + 1], dec_channels[lvl], rng,
                                          f"decoder{lvl}", dtype)
            g[lvl] = dec_channels[lvl]
        heads = [LinearParams.init(g[lvl], num_classes, rng, f"head{lvl}", dtype) for lvl in range(depth + 1)]
        return cls(fuse, heads)

    def parameters(self) -> list[Tensor]:
        out = []
        for p in self.fuse + self.heads:
            out += p.parameters()
        return out


def multilevel_decode(encoder_features: Sequence[Tensor], fused: Tensor, hierarchy: HierarchyLevels,
                      stack: DecoderStack) -> list[Tensor]:
    """Shared upsampling ladder with skip fusions and a classifier head per level.

    Returns logits ordered from full resolution (level 0) to the coarsest level.
    """
    depth = hierarchy.depth
    if len(encoder_features) != depth + 1:
        raise ValueError(f"need {depth + 1} encoder feature maps, got {len(encoder_features)}")
    ladder = [None] * (depth + 1)
    ladder[depth] = fused
    for lvl in range(depth - 1, -1, -1):
        up = upsample_interpolate(ladder[lvl + 1], weights=hierarchy.upsample[lvl])
        skip = concat([encoder_features[lvl], up])
        if skip.shape[1] != stack.fuse[lvl].c_in:
            raise ValueError(f"level {lvl} skip fusion expects {stack.fuse[lvl].c_in} channels, "
                             f"got {skip.shape[1]}")
        ladder[lvl] = relu(linear(skip, stack.fuse[lvl]))
    return [linear(ladder[lvl], stack.heads[lvl]) for lvl in range(depth + 1)]
