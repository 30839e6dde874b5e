"""The full network: input embedding, encoder, dense graph fusion, multi-level decoder."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .data import PointCloud, normalize_block
from .graph import (
    DEFAULT_DILATIONS,
    DEFAULT_K,
    DEFAULT_RATIOS,
    DEFAULT_STEP,
    HierarchyLevels,
    build_fusion_graphs,
    build_hierarchy,
)
from .layers import (
    DAGFusionConfig,
    DAGFusionParams,
    DecoderStack,
    EncoderParams,
    dagfusion_forward,
    encoder_extract,
    multilevel_decode,
)
from .tensor import LinearParams, Tensor, linear, relu


@dataclass
class ArchConfig:
    num_classes: int = 5
    in_channels: int = 3
    embed_channels: int = 32
    encoder_channels: tuple[int, ...] = (64, 128, 256)
    decoder_channels: tuple[int, ...] = (64, 64, 128)  # levels 0..L-1
    k: int = DEFAULT_K
    ratios: tuple[int, ...] = DEFAULT_RATIOS
    step: int = DEFAULT_STEP
    dilations: tuple[int, ...] = DEFAULT_DILATIONS
    branch_channels: int = 64
    branch_out_channels: int = 128
    fused_channels: int = 256
    dense: bool = True
    aggregation: str = "concat"
    dagfusion: bool = True

    def __post_init__(self):
        for name in ("encoder_channels", "decoder_channels", "ratios", "dilations"):
            setattr(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if len(self.encoder_channels) != len(self.ratios):
            raise ValueError("one encoder width per downsampling ratio is required")
        if len(self.decoder_channels) != len(self.ratios):
            raise ValueError("one decoder width per non-bottom level is required")
        self.fusion_config()  # validates rates and aggregation

    def fusion_config(self) -> DAGFusionConfig:
        return DAGFusionConfig(self.dilations, self.branch_channels, self.branch_out_channels,
                               self.fused_channels, self.dense, self.aggregation)

    @property
    def depth(self) -> int:
        return len(self.ratios)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown architecture keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ArchConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class PreparedBlock:
    features: np.ndarray  # [N, in_channels]
    hierarchy: HierarchyLevels
    fusion_graphs: dict | None
    labels: list[np.ndarray] | None = None
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    @property
    def n_points(self) -> int:
        return len(self.features)


def prepare_block(cloud: PointCloud, cfg: ArchConfig, seed: int = 0) -> PreparedBlock:
    """Normalize a block and build every graph the network consumes."""
    xyz, offset, scale = normalize_block(cloud.xyz)
    feats = xyz if cloud.attrs is None else np.column_stack([xyz, cloud.attrs])
    if feats.shape[1] != cfg.in_channels:
        raise ValueError(f"block has {feats.shape[1]} input channels, architecture expects {cfg.in_channels}")
    hier = build_hierarchy(xyz, cloud.labels, cfg.k, cfg.ratios, seed)
    graphs = build_fusion_graphs(hier.xyz[-1], cfg.k, cfg.step, cfg.dilations) if cfg.dagfusion else None
    return PreparedBlock(feats.astype(np.float32), hier, graphs, hier.labels, offset, scale)


class RFFSNet:
    def __init__(self, cfg: ArchConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.embed = LinearParams.init(cfg.in_channels, cfg.embed_channels, rng, "embed", dtype)
        widths = [cfg.embed_channels, *cfg.encoder_channels]
        self.encoders = [EncoderParams.init(widths[i], widths[i + 1], rng, f"encoder{i + 1}", dtype)
                         for i in range(cfg.depth)]
        if cfg.dagfusion:
            self.fusion = DAGFusionParams.init(widths[-1], cfg.fusion_config(), rng, cfg.k, cfg.step, dtype)
            fused = cfg.fused_channels
        else:
            self.fusion = None
            fused = widths[-1]
        self.decoder = DecoderStack.init(widths, fused, cfg.decoder_channels, cfg.num_classes, rng, dtype)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [("embed.weight", self.embed.weight), ("embed.bias", self.embed.bias)]
        for i, enc in enumerate(self.encoders, start=1):
            for part in ("edge", "post"):
                p = getattr(enc, part)
                out += [(f"encoder{i}.{part}.weight", p.weight), (f"encoder{i}.{part}.bias", p.bias)]
        if self.fusion is not None:
            for tag, layers in (("dg", self.fusion.dg_layers), ("ad", self.fusion.ad_layers)):
                for i, layer in enumerate(layers):
                    out += [(f"fusion.{tag}{i}.weight", layer.edge_map.weight),
                            (f"fusion.{tag}{i}.bias", layer.edge_map.bias)]
            for part in ("reduce_dg", "reduce_ad", "fuse"):
                p = getattr(self.fusion, part)
                out += [(f"fusion.{part}.weight", p.weight), (f"fusion.{part}.bias", p.bias)]
        for i, p in enumerate(self.decoder.fuse):
            out += [(f"decoder{i}.weight", p.weight), (f"decoder{i}.bias", p.bias)]
        for i, p in enumerate(self.decoder.heads):
            out += [(f"head{i}.weight", p.weight), (f"head{i}.bias", p.bias)]
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise ValueError(f"parameter mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
        for name, p in own.items():
            p.data = np.array(state[name], dtype=p.dtype)

    def encode(self, block: PreparedBlock) -> list[Tensor]:
        dtype = self.embed.weight.dtype
        feats = [relu(linear(Tensor(block.features, dtype=dtype), self.embed))]
        for lvl, enc in enumerate(self.encoders, start=1):
            feats.append(encoder_extract(feats[-1], block.hierarchy, lvl, enc))
        return feats

    def forward(self, block: PreparedBlock) -> list[Tensor]:
        """Logits per level, full resolution first."""
        feats = self.encode(block)
        if self.fusion is not None:
            fused = dagfusion_forward(feats[-1], block.fusion_graphs, self.fusion, self.cfg.fusion_config())
        else:
            fused = feats[-1]
        return multilevel_decode(feats, fused, block.hierarchy, self.decoder)

    __call__ = forward
