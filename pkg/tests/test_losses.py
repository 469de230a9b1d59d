import math

import numpy as np
import pytest
import torch

import oracles
from fdcheck import fd_rel_error
from multitsf.errors import InvalidArgumentError, NumericError
from multitsf.losses import (LossWeights, frame_loss, human_loss, sequence_loss, total_loss, two_way_class_loss,
                             two_way_sample_loss)

D64 = torch.float64


def t(x):
    return torch.tensor(x, dtype=D64)


def test_human_loss_midpoint():
    assert human_loss(torch.full((2, 3), 0.5, dtype=D64), t([[1, 0, 1], [0, 0, 1]])).item() == pytest.approx(math.log(2), abs=1e-12)


def test_human_loss_hand_value():
    assert human_loss(t([[0.9, 0.2]]), t([[1, 0]])).item() == pytest.approx(-(math.log(0.9) + math.log(0.8)) / 2, abs=1e-12)
    assert human_loss(t([[0.9, 0.2]]), t([[1, 0]])).item() == pytest.approx(0.164252, abs=1e-6)


def test_human_loss_perfect_prediction():
    v = human_loss(t([[1.0, 0.0]]), t([[1, 0]])).item()
    assert v == pytest.approx(-math.log(1 - 1e-7), rel=1e-6)


def test_human_loss_shape_mismatch():
    with pytest.raises(InvalidArgumentError):
        human_loss(t([[0.5, 0.5]]), t([[1, 0, 1]]))


def test_human_loss_matches_oracle():
    rng = np.random.default_rng(1)
    p = rng.uniform(0.01, 0.99, (3, 7))
    h = rng.integers(0, 2, (3, 7))
    assert human_loss(t(p), t(h)).item() == pytest.approx(oracles.bce(p, h), rel=1e-12)


def test_sample_loss_symmetric_case():
    assert two_way_sample_loss(t([[1.5, 1.5]]), t([[1, 0]])).item() == pytest.approx(math.log(2), abs=1e-12)


def test_sample_loss_hand_value():
    v = two_way_sample_loss(t([[2.0, 0.0]]), t([[1, 0]]), 1.0).item()
    assert v == pytest.approx(math.log1p(math.exp(-2)), abs=1e-12)
    assert v == pytest.approx(0.126928, abs=1e-6)


def test_sample_loss_all_positive_row_excluded():
    x = t([[2.0, 0.0], [5.0, -3.0]])
    y = t([[1, 0], [1, 1]])
    assert two_way_sample_loss(x, y).item() == pytest.approx(math.log1p(math.exp(-2)), abs=1e-12)
    assert two_way_sample_loss(x, torch.ones_like(x)).item() == 0.0


def test_sample_loss_rejects_bad_gamma():
    with pytest.raises(InvalidArgumentError):
        two_way_sample_loss(t([[1.0, 0.0]]), t([[1, 0]]), 0.0)


def test_class_loss_is_transposed_sample_loss():
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = t(rng.standard_normal((5, 4)) * 3)
        y = t(rng.integers(0, 2, (5, 4)))
        assert two_way_class_loss(x, y, 0.7).item() == two_way_sample_loss(x.T, y.T, 0.7).item()


def test_class_loss_hand_value_and_empty_class():
    x = t([[2.0], [0.0]])
    y = t([[1], [0]])
    assert two_way_class_loss(x, y, 1.0).item() == pytest.approx(math.log1p(math.exp(-2)), abs=1e-12)
    x2 = torch.cat([x, t([[0.3], [0.1]])], dim=1)
    y2 = torch.cat([y, t([[0], [0]])], dim=1)
    assert two_way_class_loss(x2, y2, 1.0).item() == pytest.approx(math.log1p(math.exp(-2)), abs=1e-12)


def test_frame_loss_examples():
    w = LossWeights()
    s, c = frame_loss(torch.randn(4, 3, dtype=D64), torch.zeros(4, 3, dtype=D64), w)
    assert s.item() == 0.0 and c.item() == 0.0
    s, c = frame_loss(t([[0.4, 0.4]]), t([[1, 0]]), w)
    assert s.item() == pytest.approx(math.log(2), abs=1e-12) and c.item() == 0.0


@pytest.mark.parametrize("fn", [frame_loss, sequence_loss])
def test_frame_and_sequence_match_loop_oracle(fn):
    rng = np.random.default_rng(3)
    w = LossWeights(gamma_s=0.8, gamma_c=1.7)
    x = rng.standard_normal((6, 4)) * 2
    y = rng.integers(0, 2, (6, 4))
    s, c = fn(t(x), t(y), w)
    assert s.item() == pytest.approx(oracles.two_way_rows(x, y, 0.8), rel=1e-10)
    assert c.item() == pytest.approx(oracles.two_way_cols(x, y, 1.7), rel=1e-10)


def test_frame_loss_pools_batch_frames():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 5, 3))
    y = rng.integers(0, 2, (2, 5, 3))
    s, c = frame_loss(t(x), t(y), LossWeights())
    s2, c2 = frame_loss(t(x.reshape(10, 3)), t(y.reshape(10, 3)), LossWeights())
    assert s.item() == s2.item() and c.item() == c2.item()


def test_total_loss():
    w = LossWeights()
    assert total_loss(0.1, 0.2, 0.3, 0.4, 0.5, w) == pytest.approx(1.5, abs=1e-15)
    w = LossWeights(beta1=2.0, beta2=0.0, beta3=0.0)
    assert total_loss(0.1, 0.2, 0.3, 0.4, 0.5, w) == pytest.approx(0.2, abs=1e-15)
    w = LossWeights(alpha1=0.5, alpha2=3.0)
    assert total_loss(0.1, 0.2, 0.3, 0.4, 0.5, w) == pytest.approx(0.1 + 0.2 + 0.15 + 0.4 + 1.5, abs=1e-15)
    with pytest.raises(NumericError):
        total_loss(float("nan"), 0, 0, 0, 0, LossWeights())


def test_weights_validation():
    with pytest.raises(InvalidArgumentError):
        LossWeights(gamma_s=0.0)
    with pytest.raises(InvalidArgumentError):
        LossWeights(beta1=-1.0)


def test_monotonicity():
    rng = np.random.default_rng(5)
    for _ in range(30):
        x = rng.standard_normal((4, 5))
        y = rng.integers(0, 2, (4, 5))
        base = two_way_sample_loss(t(x), t(y)).item()
        for i, j in [(r, c) for r in range(4) for c in range(5)]:
            x2 = x.copy()
            x2[i, j] += 0.3
            v = two_way_sample_loss(t(x2), t(y)).item()
            if y[i, j]:
                assert v <= base + 1e-15
            else:
                assert v >= base - 1e-15


def test_separation_limit():
    y = t([[1, 0, 1, 0], [0, 1, 1, 0]])
    x = torch.where(y > 0, 20.0, -20.0).to(D64)
    assert two_way_sample_loss(x, y, 1.0).item() < 1e-8
    assert two_way_class_loss(x, y, 1.0).item() < 1e-8


def test_large_logits_stable():
    x = t([[1e4, -1e4, 3.0], [-1e4, 1e4, 0.0]])
    y = t([[1, 0, 0], [1, 0, 1]])
    x.requires_grad_(True)
    v = two_way_sample_loss(x, y) + two_way_class_loss(x, y)
    v.backward()
    assert math.isfinite(v.item()) and torch.isfinite(x.grad).all()


def test_gradients_against_finite_differences():
    rng = np.random.default_rng(6)
    x = t(rng.standard_normal((5, 4))).requires_grad_(True)
    y = t(rng.integers(0, 2, (5, 4)))
    p = t(rng.uniform(0.05, 0.95, (2, 6))).requires_grad_(True)
    h = t(rng.integers(0, 2, (2, 6)))
    assert fd_rel_error(lambda: two_way_sample_loss(x, y, 0.6), [x]) < 1e-4
    assert fd_rel_error(lambda: two_way_class_loss(x, y, 1.4), [x]) < 1e-4
    assert fd_rel_error(lambda: human_loss(p, h), [p]) < 1e-4


def test_softplus_extremes():
    from multitsf.losses import softplus
    v = softplus(t([1000.0, -1000.0, 0.0]))
    assert v.tolist() == [1000.0, 0.0, math.log(2)]
