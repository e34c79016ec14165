"""
The two-stream attention network: parameter layout, initialization,
per-partition forward pass and cloud-level prediction.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.ai.autodiff import Node, NodeLike, ShapeError, add, concat_rows, lift, matmul, relu
from src.ai.layers import (
    AttentionParams, EmbeddingParams, GraphNormParams, feature_embedding, graph_norm,
    multi_head_cross_attention, multi_head_self_attention, patch_aggregation,
    point_aggregation,
)
from src.ai.preprocess import preprocess_cloud
from src.models.config import ModelConfig, PreprocessConfig
from src.models.point_cloud import Patch, PointCloud

logger = logging.getLogger(__name__)

STREAMS = ('geometry', 'color')


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: Tuple[int, ...]
    init: str  # 'glorot', 'zeros' or 'ones'


@dataclass
class ModelParams:
    """Every learnable tensor of the network, keyed by parameter name."""

    config: ModelConfig
    tensors: Dict[str, np.ndarray]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def count(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))


def _attention_specs(prefix: str, width: int) -> List[ParamSpec]:
    return [ParamSpec(f"{prefix}.{w}", (width, width), 'glorot') for w in ('w_q', 'w_k', 'w_v', 'w_o')]


def param_layout(cfg: ModelConfig) -> List[ParamSpec]:
    """Fixed-order list of every parameter; names key serialization and the optimizer."""
    specs: List[ParamSpec] = []
    width_in = cfg.input_features
    for b, width in enumerate(cfg.block_widths, start=1):
        for stream in STREAMS:
            prefix = f"block{b}.{stream}.embed"
            specs += [
                ParamSpec(f"{prefix}.w1", (width_in, width), 'glorot'),
                ParamSpec(f"{prefix}.b1", (width,), 'zeros'),
                ParamSpec(f"{prefix}.w2", (width, width), 'glorot'),
                ParamSpec(f"{prefix}.b2", (width,), 'zeros'),
            ]
        specs += _attention_specs(f"block{b}.self_attention", width)
        for stream in STREAMS:
            prefix = f"block{b}.{stream}.norm"
            specs += [
                ParamSpec(f"{prefix}.alpha", (width,), 'ones'),
                ParamSpec(f"{prefix}.gamma", (width,), 'ones'),
                ParamSpec(f"{prefix}.beta", (width,), 'zeros'),
            ]
        specs += _attention_specs(f"block{b}.cross_attention", width)
        width_in = width

    specs += _attention_specs("patch_attention", cfg.aggregation_dim)
    widths = [cfg.aggregation_dim] + list(cfg.head_hidden) + [1]
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        specs += [
            ParamSpec(f"head.w{i}", (fan_in, fan_out), 'glorot'),
            ParamSpec(f"head.b{i}", (fan_out,), 'zeros'),
        ]
    return specs


def param_shapes(cfg: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    return {spec.name: spec.shape for spec in param_layout(cfg)}


def init_model(cfg: ModelConfig) -> ModelParams:
    """
    Glorot-uniform weights from a Philox (counter-based) stream seeded by
    cfg.seed; biases and beta zero, alpha and gamma one.
    """
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    tensors: Dict[str, np.ndarray] = {}
    for spec in param_layout(cfg):
        if spec.init == 'glorot':
            fan_in, fan_out = spec.shape
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            tensors[spec.name] = rng.uniform(-bound, bound, size=spec.shape)
        elif spec.init == 'ones':
            tensors[spec.name] = np.ones(spec.shape)
        else:
            tensors[spec.name] = np.zeros(spec.shape)
    return ModelParams(cfg, tensors)


def _embedding(source: Mapping[str, NodeLike], prefix: str) -> EmbeddingParams:
    return EmbeddingParams(source[f"{prefix}.w1"], source[f"{prefix}.b1"],
                           source[f"{prefix}.w2"], source[f"{prefix}.b2"])


def _attention(source: Mapping[str, NodeLike], prefix: str, heads: int) -> AttentionParams:
    return AttentionParams(source[f"{prefix}.w_q"], source[f"{prefix}.w_k"],
                           source[f"{prefix}.w_v"], source[f"{prefix}.w_o"], heads)


def _norm(source: Mapping[str, NodeLike], prefix: str, eps: float) -> GraphNormParams:
    return GraphNormParams(source[f"{prefix}.alpha"], source[f"{prefix}.gamma"],
                           source[f"{prefix}.beta"], eps)


def _lift_all(source: Mapping[str, NodeLike]) -> Dict[str, Node]:
    # one constant per array, so shared weights are not re-copied per patch
    return {name: lift(value) for name, value in source.items()}


def patch_vector(patch: Patch, source: Mapping[str, Node], cfg: ModelConfig) -> Node:
    """Three fused blocks over one patch, then max|mean pooling (1 x 2F')."""
    expected = (cfg.patch_size, cfg.input_features)
    if patch.geometry.shape != expected or patch.color.shape != expected:
        raise ShapeError(f"patch shape {patch.geometry.shape} does not match config {expected}")

    x_xyz: NodeLike = patch.geometry
    x_rgb: NodeLike = patch.color
    for b in range(1, len(cfg.block_widths) + 1):
        geometry = feature_embedding(x_xyz, _embedding(source, f"block{b}.geometry.embed"))
        geometry = multi_head_self_attention(geometry, _attention(source, f"block{b}.self_attention", cfg.heads))
        geometry = graph_norm(geometry, _norm(source, f"block{b}.geometry.norm", cfg.norm_eps))

        color = feature_embedding(x_rgb, _embedding(source, f"block{b}.color.embed"))
        color = graph_norm(color, _norm(source, f"block{b}.color.norm", cfg.norm_eps))

        x_xyz = multi_head_cross_attention(color, geometry,
                                           _attention(source, f"block{b}.cross_attention", cfg.heads))
        x_rgb = color
    return point_aggregation(x_xyz)


def quality_head(features: Node, source: Mapping[str, Node], cfg: ModelConfig) -> Node:
    layers = len(cfg.head_hidden) + 1
    out = features
    for i in range(layers):
        out = add(matmul(out, source[f"head.w{i}"]), source[f"head.b{i}"])
        if i < layers - 1:
            out = relu(out)
    return out


def partition_score(patches: Sequence[Patch], source: Mapping[str, NodeLike], cfg: ModelConfig) -> Node:
    """Graph for one partition's score (1 x 1); `source` maps names to arrays or leaves."""
    if not patches:
        raise ValueError("a partition needs at least one patch")
    source = _lift_all(source)
    vectors = concat_rows([patch_vector(p, source, cfg) for p in patches])
    pooled = patch_aggregation(vectors, _attention(source, "patch_attention", cfg.heads))
    return quality_head(pooled, source, cfg)


def partition_forward(patches: Sequence[Patch], params: ModelParams,
                      cfg: Optional[ModelConfig] = None) -> float:
    return partition_score(patches, params.tensors, cfg or params.config).item()


def predict_partition_scores(cloud: PointCloud, params: ModelParams, pre_cfg: PreprocessConfig,
                             model_cfg: Optional[ModelConfig] = None,
                             threads: Optional[int] = None) -> List[float]:
    """Scores per partition, in ascending partition order."""
    model_cfg = model_cfg or params.config
    prepared = preprocess_cloud(cloud, pre_cfg, threads)
    workers = max(1, min(threads or 1, len(prepared.patches)))
    if workers == 1:
        return [partition_forward(p, params, model_cfg) for p in prepared.patches]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda p: partition_forward(p, params, model_cfg), prepared.patches))


def mean_score(scores: Sequence[float]) -> float:
    """Arithmetic mean summed in the given order."""
    total = 0.0
    for s in scores:
        total += s
    return total / len(scores)


def predict(cloud: PointCloud, params: ModelParams, pre_cfg: PreprocessConfig,
            model_cfg: Optional[ModelConfig] = None, threads: Optional[int] = None) -> float:
    """Cloud quality score: mean of the partition scores."""
    scores = predict_partition_scores(cloud, params, pre_cfg, model_cfg, threads)
    score = mean_score(scores)
    logger.debug("%s: %d partition scores, mean %.6f", cloud.name or "<cloud>", len(scores), score)
    return score
