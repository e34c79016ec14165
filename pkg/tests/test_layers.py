import sys

import numpy as np
import pytest
sys.path.insert(0, '.')

from src.ai.autodiff import ShapeError
from src.ai.layers import (
    AttentionParams, EmbeddingParams, GraphNormParams, attention_maps, feature_embedding,
    graph_norm, multi_head_cross_attention, multi_head_self_attention, patch_aggregation,
    point_aggregation,
)


def attention_params(width=8, heads=2, seed=0):
    rng = np.random.default_rng(seed)
    return AttentionParams(*(rng.normal(scale=0.5, size=(width, width)) for _ in range(4)), heads=heads)


def norm_params(width, eps=1e-5):
    return GraphNormParams(np.ones(width), np.ones(width), np.zeros(width), eps)


def test_embedding_is_relu_of_two_affine_maps():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 3))
    p = EmbeddingParams(rng.normal(size=(3, 4)), rng.normal(size=4), rng.normal(size=(4, 4)), rng.normal(size=4))
    expected = np.maximum(np.maximum(x @ p.w1 + p.b1, 0) @ p.w2 + p.b2, 0)
    np.testing.assert_allclose(feature_embedding(x, p).value, expected, atol=1e-12)


def test_attention_rows_are_stochastic():
    rng = np.random.default_rng(1)
    for trial in range(100):
        p = attention_params(seed=trial)
        x = rng.normal(size=(rng.integers(1, 12), 8))
        for m in attention_maps(x, x, p):
            np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-12)
            assert (m >= 0).all()


def test_attention_is_permutation_equivariant():
    p = attention_params()
    x = np.random.default_rng(2).normal(size=(6, 8))
    order = np.random.default_rng(3).permutation(6)
    out = multi_head_self_attention(x, p).value
    np.testing.assert_allclose(multi_head_self_attention(x[order], p).value, out[order], atol=1e-12)


def test_single_row_attention_is_value_projection():
    p = attention_params()
    x = np.random.default_rng(4).normal(size=(1, 8))
    expected = (x @ p.w_v) @ p.w_o
    np.testing.assert_allclose(multi_head_self_attention(x, p).value, expected, atol=1e-12)


def test_heads_must_divide_width():
    p = attention_params(width=6, heads=4)
    with pytest.raises(ShapeError):
        multi_head_self_attention(np.ones((3, 6)), p)


def test_cross_attention_queries_come_from_color():
    p = attention_params()
    rng = np.random.default_rng(5)
    x_rgb, x_xyz = rng.normal(size=(4, 8)), rng.normal(size=(4, 8))
    out = multi_head_cross_attention(x_rgb, x_xyz, p).value
    # identical context rows: every query sees the same value
    same_context = multi_head_cross_attention(x_rgb, np.tile(x_xyz[:1], (4, 1)), p).value
    np.testing.assert_allclose(same_context, np.tile((x_xyz[:1] @ p.w_v) @ p.w_o, (4, 1)), atol=1e-12)
    assert out.shape == (4, 8)


def test_cross_attention_shape_mismatch():
    with pytest.raises(ShapeError):
        multi_head_cross_attention(np.ones((3, 8)), np.ones((4, 8)), attention_params())


def test_graph_norm_statistics():
    rng = np.random.default_rng(6)
    eps = 1e-5
    for trial in range(20):
        sigma = rng.uniform(0.1, 3.0)
        x = rng.normal(loc=rng.normal(), scale=sigma, size=(64, 5))
        out = graph_norm(x, norm_params(5, eps)).value
        var = x.var(axis=0)
        assert np.abs(out.mean(axis=0)).max() < 1e-12
        np.testing.assert_allclose(out.var(axis=0), var / (var + eps), atol=1e-3)


def test_graph_norm_on_single_row_is_beta():
    p = GraphNormParams(np.ones(3), np.ones(3), np.array([0.5, -1.0, 2.0]))
    out = graph_norm(np.array([[3.0, 4.0, 5.0]]), p).value
    np.testing.assert_allclose(out, [[0.5, -1.0, 2.0]])


def test_graph_norm_alpha_zero_keeps_mean():
    x = np.random.default_rng(7).normal(loc=3.0, size=(10, 2))
    p = GraphNormParams(np.zeros(2), np.ones(2), np.zeros(2))
    out = graph_norm(x, p).value
    np.testing.assert_allclose(out, x / np.sqrt(x.var(axis=0) + 1e-5), atol=1e-12)


def test_point_aggregation_is_max_then_mean():
    x = np.array([[1.0, -2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(point_aggregation(x).value, [[3.0, 4.0, 2.0, 1.0]])


def test_patch_aggregation_is_order_invariant():
    p = attention_params()
    v = np.random.default_rng(8).normal(size=(5, 8))
    order = np.random.default_rng(9).permutation(5)
    np.testing.assert_allclose(patch_aggregation(v[order], p).value, patch_aggregation(v, p).value, atol=1e-12)


def test_two_point_single_head_attention_by_hand():
    one = np.ones((1, 1))
    p = AttentionParams(one, one, one, one, heads=1)
    x = np.array([[1.0], [0.0]])
    e = np.e
    expected_map = np.array([[e / (e + 1), 1 / (e + 1)], [0.5, 0.5]])
    np.testing.assert_allclose(attention_maps(x, x, p)[0], expected_map, atol=1e-12)
    np.testing.assert_allclose(attention_maps(x, x, p)[0], [[0.7311, 0.2689], [0.5, 0.5]], atol=1e-4)
    np.testing.assert_allclose(multi_head_self_attention(x, p).value, [[e / (e + 1)], [0.5]], atol=1e-12)


def test_cross_attention_on_one_stream_is_self_attention():
    p = attention_params()
    x = np.random.default_rng(5).normal(size=(7, 8))
    np.testing.assert_allclose(multi_head_cross_attention(x, x, p).value,
                               multi_head_self_attention(x, p).value, atol=1e-12)


def test_zero_query_projection_attends_uniformly():
    rng = np.random.default_rng(6)
    p = AttentionParams(np.zeros((8, 8)), rng.normal(size=(8, 8)), rng.normal(size=(8, 8)),
                        rng.normal(size=(8, 8)), heads=2)
    x = rng.normal(size=(5, 8))
    for m in attention_maps(x, x, p):
        np.testing.assert_allclose(m, np.full((5, 5), 0.2), atol=1e-12)
    expected = np.tile((x @ p.w_v).mean(axis=0) @ p.w_o, (5, 1))
    np.testing.assert_allclose(multi_head_self_attention(x, p).value, expected, atol=1e-12)
