"""
Network building blocks: pointwise feature embedding, multi-head self/cross
attention, GraphNorm and the point/patch aggregations.

Every layer is a pure function of (input, params). Params may hold numpy
arrays (inference) or graph leaves (training); both are lifted into the graph.
"""
import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from src.ai.autodiff import (
    Node, NodeLike, ShapeError, add, concat_columns, lift, matmul,
    multiply_elementwise, reciprocal_sqrt_shifted, reduce_max_rows,
    reduce_mean_rows, relu, row_mean, row_variance, scalar_multiply,
    slice_columns, softmax_rows, subtract, transpose,
)


@dataclass
class EmbeddingParams:
    """Two pointwise sub-layers: F_in -> F_out -> F_out."""
    w1: NodeLike
    b1: NodeLike
    w2: NodeLike
    b2: NodeLike


@dataclass
class AttentionParams:
    """W_q, W_k, W_v, W_o are C x C; head j uses columns j*C/h .. (j+1)*C/h."""
    w_q: NodeLike
    w_k: NodeLike
    w_v: NodeLike
    w_o: NodeLike
    heads: int

    @property
    def width(self) -> int:
        return int(self.w_q.shape[0])


@dataclass
class GraphNormParams:
    alpha: NodeLike
    gamma: NodeLike
    beta: NodeLike
    eps: float = 1e-5


def feature_embedding(x: NodeLike, p: EmbeddingParams) -> Node:
    """relu(relu(X W1 + b1) W2 + b2), shared across rows."""
    hidden = relu(add(matmul(x, p.w1), p.b1))
    return relu(add(matmul(hidden, p.w2), p.b2))


def _attend(x_query: NodeLike, x_context: NodeLike, p: AttentionParams) -> Tuple[Node, List[Node]]:
    x_query, x_context = lift(x_query), lift(x_context)
    width = p.width
    if x_query.shape[1] != width or x_context.shape[1] != width:
        raise ShapeError(
            f"attention width {width} does not match inputs {x_query.shape} / {x_context.shape}"
        )
    if width % p.heads != 0:
        raise ShapeError(f"heads={p.heads} does not divide width {width}")
    head_dim = width // p.heads
    scale = 1.0 / math.sqrt(head_dim)

    q = matmul(x_query, p.w_q)
    k = matmul(x_context, p.w_k)
    v = matmul(x_context, p.w_v)

    outputs, maps = [], []
    for j in range(p.heads):
        lo, hi = j * head_dim, (j + 1) * head_dim
        q_j, k_j, v_j = slice_columns(q, lo, hi), slice_columns(k, lo, hi), slice_columns(v, lo, hi)
        logits = scalar_multiply(matmul(q_j, transpose(k_j)), scale)
        attention = softmax_rows(logits)
        maps.append(attention)
        outputs.append(matmul(attention, v_j))

    merged = outputs[0] if p.heads == 1 else concat_columns(outputs)
    return matmul(merged, p.w_o), maps


def multi_head_self_attention(x: NodeLike, p: AttentionParams) -> Node:
    out, _ = _attend(x, x, p)
    return out


def multi_head_cross_attention(x_rgb: NodeLike, x_xyz: NodeLike, p: AttentionParams) -> Node:
    """Queries from the color stream, keys and values from the geometry stream."""
    x_rgb, x_xyz = lift(x_rgb), lift(x_xyz)
    if x_rgb.shape != x_xyz.shape:
        raise ShapeError(f"cross-attention streams differ: {x_rgb.shape} vs {x_xyz.shape}")
    out, _ = _attend(x_rgb, x_xyz, p)
    return out


def attention_maps(x_query: NodeLike, x_context: NodeLike, p: AttentionParams) -> List[np.ndarray]:
    """Per-head attention matrices (N_query x N_context)."""
    _, maps = _attend(x_query, x_context, p)
    return [m.value for m in maps]


def graph_norm(x: NodeLike, p: GraphNormParams) -> Node:
    """
    Per channel over the rows: (x - alpha*mu) / sqrt(Var[x - alpha*mu] + eps) * gamma + beta.
    """
    x = lift(x)
    shifted = subtract(x, multiply_elementwise(row_mean(x), p.alpha))
    scaled = multiply_elementwise(shifted, reciprocal_sqrt_shifted(row_variance(shifted), p.eps))
    return add(multiply_elementwise(scaled, p.gamma), p.beta)


def point_aggregation(x: NodeLike) -> Node:
    """[column max | column mean], a 1 x 2F row."""
    x = lift(x)
    return concat_columns([reduce_max_rows(x), reduce_mean_rows(x)])


def patch_aggregation(v: NodeLike, p: AttentionParams) -> Node:
    """Self-attention across the M patch vectors, then column max (1 x D)."""
    return reduce_max_rows(multi_head_self_attention(v, p))
