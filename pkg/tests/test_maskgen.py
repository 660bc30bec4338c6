import csv

import numpy as np
import pytest

from tamformer.blocks import causal_bias, init_attention_block, multi_head_attention
from tamformer.errors import ContractError
from tamformer.maskgen import (
    LearnedMask,
    init_mask_scorer,
    mask_to_bias,
    predict_mask,
    sparsity_stats,
    write_mask_csv,
)
from tamformer.numerics import LARGE, Tensor, grad_check, mul, sum_sq


@pytest.fixture
def scorer():
    return init_mask_scorer(np.random.default_rng(0), 5, (8, 4, 2))


def test_scorer_layer_sizes(scorer):
    assert scorer.layer_sizes == [8, 4, 2]
    assert scorer.w_target.shape == (5, 8) and scorer.w_source.shape == (5, 8)
    assert scorer.w_out.shape == (2, 1)


def test_zero_scorer_gives_half(scorer):
    for _, t in scorer.named_tensors():
        t.data[...] = 0.0
    rng = np.random.default_rng(1)
    m = predict_mask(scorer, rng.standard_normal((4, 5)), rng.standard_normal((4, 5)), np.arange(4))
    causal = np.tril(np.ones((4, 4), bool))
    assert np.all(m.rows.data[causal] == 0.5)
    assert np.all(m.rows.data[~causal] == 0.0)


def test_identity_grid_counts_lower_triangle(scorer):
    rng = np.random.default_rng(2)
    f = rng.standard_normal((4, 5))
    m = predict_mask(scorer, f, f, np.arange(4))
    assert np.count_nonzero(m.rows.data) == 10
    nz = m.rows.data[m.rows.data != 0]
    assert np.all((nz > 0) & (nz < 1))


def test_mask_rows_causal_in_source(scorer):
    rng = np.random.default_rng(3)
    f = rng.standard_normal((4, 5))
    g = f.copy()
    g[3] = rng.standard_normal(5) * 10
    a = predict_mask(scorer, f, f, np.arange(4)).rows.data
    b = predict_mask(scorer, f, g, np.arange(4)).rows.data
    assert a[:3].tobytes() == b[:3].tobytes()


def test_mask_gradient_causal(scorer):
    """Row t's gradient does not reach features past frame(t)."""
    rng = np.random.default_rng(4)
    src = Tensor(rng.standard_normal((6, 5)), requires_grad=True)
    tgt = rng.standard_normal((3, 5))
    m = predict_mask(scorer, tgt, src, np.array([1, 3, 5]))
    row0 = np.zeros((3, 6))
    row0[0] = 1.0  # frame(0) = 1
    sum_sq(mul(m.rows, row0)).backward()
    assert np.any(src.grad[:2] != 0.0)
    assert np.all(src.grad[2:] == 0.0)


def test_grid_map_out_of_range(scorer):
    f = np.zeros((3, 5))
    with pytest.raises(ContractError):
        predict_mask(scorer, f, f, np.array([0, 1, 3]))
    with pytest.raises(ContractError):
        predict_mask(scorer, f, f, np.array([0, 2, 1]))


def test_mask_to_bias_values():
    grid = np.arange(3)
    rows = np.array([[1 - 1e-6, 0, 0], [0.5, 0.5, 0], [0.2, 0.3, 0.4]])
    bias = mask_to_bias(LearnedMask(Tensor(rows), grid)).data
    assert abs(bias[0, 0]) < 1e-5
    assert abs(bias[1, 0] - np.log(0.5 + 1e-6)) < 1e-12
    assert abs(bias[1, 0] - (-0.693145)) < 1e-5
    assert bias[0, 1] == -LARGE and bias[0, 2] == -LARGE and bias[1, 2] == -LARGE


def test_mask_to_bias_rejects_bad_eps():
    with pytest.raises(ContractError):
        mask_to_bias(LearnedMask(Tensor(np.ones((1, 1))), np.arange(1)), eps=0.0)


def test_bias_softmax_normalized(scorer, kernel_backend):
    rng = np.random.default_rng(5)
    f = rng.standard_normal((6, 5))
    m = predict_mask(scorer, f, f, np.arange(6))
    p = init_attention_block(rng, 4, 4, 2, 8)
    x = Tensor(rng.standard_normal((6, 4)))
    _, w = multi_head_attention(p, x, x, mask_to_bias(m))
    np.testing.assert_allclose(w.data.sum(-1), 1.0, atol=1e-9)
    assert np.all(w.data[..., np.triu(np.ones((6, 6), bool), 1)] < 1e-12)


def test_end_to_end_mask_gradient(scorer):
    rng = np.random.default_rng(6)
    f = rng.standard_normal((5, 5))
    p = init_attention_block(rng, 4, 4, 2, 8)
    x = Tensor(rng.standard_normal((5, 4)))
    params = [t for _, t in scorer.named_tensors()]

    def build():
        m = predict_mask(scorer, f, f, np.arange(5))
        out, _ = multi_head_attention(p, x, x, mask_to_bias(m))
        return sum_sq(out)

    assert grad_check(build, params) < 1e-4


def test_sparsity_examples():
    row = LearnedMask(Tensor(np.array([[0.9, 0.1, 0.6, 0.2]])), np.array([3]))
    used, avail = sparsity_stats(row, 0.5)
    assert (used[0], avail[0]) == (2, 4)
    used, avail = sparsity_stats(row, 0.999)
    assert (used[0], avail[0]) == (0, 4)
    half = LearnedMask(Tensor(np.where(np.tril(np.ones((4, 4))) > 0, 0.5, 0.0)), np.arange(4))
    used, avail = sparsity_stats(half, 0.5)
    np.testing.assert_array_equal(used, avail)
    assert np.all(np.diff(avail) >= 0)


def test_sparsity_rejects_threshold():
    with pytest.raises(ContractError):
        sparsity_stats(LearnedMask(Tensor(np.ones((1, 1))), np.arange(1)), 1.0)


def test_mask_csv_format(tmp_path):
    path = tmp_path / "m.csv"
    write_mask_csv(path, np.array([[0.5, 0.0], [0.25, 1 / 3]]))
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["row", "col", "value"]
    assert rows[1:] == [["0", "0", "0.500000"], ["0", "1", "0.000000"],
                        ["1", "0", "0.250000"], ["1", "1", "0.333333"]]
