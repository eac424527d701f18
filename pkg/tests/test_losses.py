import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hairmatte.losses import (
    LossConfig,
    bce_loss,
    combined_loss,
    gradient_consistency_loss,
    l2_penalty,
    one_hot,
    to_grayscale,
)
from hairmatte.model import ModelSpec, build_model
from hairmatte.tensor import Tensor, backward

from oracles import bce_oracle, grad_consistency_oracle


def vstep(n=8):
    img = np.zeros((n, n))
    img[:, n // 2:] = 1.0
    return img


def hstep(n=8):
    return vstep(n).T.copy()


# -- BCE ---------------------------------------------------------------------
def test_bce_half_is_ln2():
    p = np.full((1, 2, 4, 4), 0.5)
    t = one_hot(np.random.default_rng(0).integers(0, 2, (1, 1, 4, 4)), 2, np.float64)
    assert bce_loss(p, t).item() == pytest.approx(math.log(2), abs=1e-12)


def test_bce_perfect_prediction():
    t = one_hot(np.random.default_rng(1).integers(0, 2, (2, 1, 5, 5)), 2, np.float64)
    assert bce_loss(t, t).item() <= 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_bce_matches_scalar_oracle(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0, 1, (1, 2, 4, 4))
    t = rng.integers(0, 2, p.shape).astype(np.float64)
    assert bce_loss(p, t).item() == pytest.approx(bce_oracle(p, t), abs=1e-6)


def test_bce_expands_label_map():
    rng = np.random.default_rng(2)
    p = rng.uniform(0.01, 0.99, (2, 3, 4, 4))
    labels = rng.integers(0, 3, (2, 1, 4, 4)).astype(np.float64)
    assert bce_loss(p, labels).item() == pytest.approx(bce_loss(p, one_hot(labels, 3, np.float64)).item())


def test_bce_rejects_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        bce_loss(np.full((1, 2, 4, 4), 0.5), np.zeros((1, 2, 3, 3)))


# -- gradient consistency ----------------------------------------------------
def test_aligned_edges_near_zero():
    assert gradient_consistency_loss(vstep(), vstep()).item() <= 1e-3


def test_orthogonal_edges_near_one():
    assert gradient_consistency_loss(vstep(), hstep()).item() >= 0.99


def test_uniform_mask_scores_zero():
    img = np.random.default_rng(0).uniform(size=(8, 8))
    assert gradient_consistency_loss(img, np.full((8, 8), 0.3)).item() == 0.0


@pytest.mark.parametrize("seed", range(20))
def test_matches_bruteforce_oracle(seed):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(8, 33, 2)
    img = rng.uniform(size=(h, w))
    mask = rng.uniform(size=(h, w))
    got = gradient_consistency_loss(img, mask).item()
    assert got == pytest.approx(grad_consistency_oracle(img, mask), abs=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_mask_inversion_invariance(seed):
    rng = np.random.default_rng(seed)
    img = rng.uniform(size=(12, 12))
    m = rng.uniform(size=(12, 12))
    a = gradient_consistency_loss(img, m).item()
    b = gradient_consistency_loss(img, 1.0 - m).item()
    assert abs(a - b) <= 1e-6


def test_image_contrast_inversion_invariance():
    rng = np.random.default_rng(9)
    img, m = rng.uniform(size=(2, 10, 10))
    assert gradient_consistency_loss(img, m).item() == pytest.approx(gradient_consistency_loss(1 - img, m).item(), abs=1e-9)


def test_batch_is_mean_of_per_image_scores():
    rng = np.random.default_rng(3)
    imgs = rng.uniform(size=(3, 1, 9, 9))
    masks = rng.uniform(size=(3, 1, 9, 9))
    masks[1] = 0.5  # an edge-free image contributes 0
    per = [grad_consistency_oracle(imgs[i, 0], masks[i, 0]) for i in range(3)]
    assert gradient_consistency_loss(imgs, masks).item() == pytest.approx(np.mean(per), abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), size=st.integers(4, 16))
def test_range_is_unit_interval(seed, size):
    rng = np.random.default_rng(seed)
    v = gradient_consistency_loss(rng.uniform(size=(size, size)), rng.uniform(size=(size, size))).item()
    assert -1e-12 <= v <= 1 + 1e-12


def test_gradient_does_not_flow_into_image():
    rng = np.random.default_rng(4)
    img = Tensor(rng.uniform(size=(1, 1, 6, 6)), requires_grad=True)
    m = Tensor(rng.uniform(size=(1, 1, 6, 6)), requires_grad=True)
    backward(gradient_consistency_loss(img, m))
    assert img.grad is None
    assert np.abs(m.grad).sum() > 0


def test_grayscale_luma_weights():
    img = np.zeros((1, 3, 1, 3))
    img[0, 0, 0, 0] = img[0, 1, 0, 1] = img[0, 2, 0, 2] = 1.0
    np.testing.assert_allclose(to_grayscale(img)[0, 0, 0], [0.299, 0.587, 0.114])


# -- combined loss -----------------------------------------------------------
def _case(classes=2, seed=0, n=8):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(1, classes, n, n))
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    labels = rng.integers(0, classes, (1, 1, n, n)).astype(np.float64)
    image = rng.uniform(size=(1, 3, n, n))
    return probs, labels, image


def test_w_zero_is_bce_plus_l2():
    probs, labels, image = _case()
    model = build_model(ModelSpec("hairmattenet", 32, width_multiplier=0.125, decoder_depth=16)).astype(np.float64)
    rep = combined_loss(probs, labels, image, LossConfig(w=0.0), model)
    assert rep.total == rep.l_m + rep.l2


def test_total_is_weighted_sum():
    probs, labels, image = _case(seed=1)
    rep = combined_loss(probs, labels, image, LossConfig(w=0.5))
    assert rep.total == pytest.approx(rep.l_m + 0.5 * rep.l_c + rep.l2, abs=1e-6)
    assert rep.l_c > 0


def test_three_class_skin_channel_does_not_affect_lc():
    probs, labels, image = _case(classes=3, seed=2)
    cfg = LossConfig(hair_class_index=1)
    a = combined_loss(probs, labels, image, cfg)
    perturbed = probs.copy()
    perturbed[:, 2] = np.random.default_rng(5).uniform(size=perturbed[:, 2].shape)
    b = combined_loss(perturbed, labels, image, cfg)
    assert a.l_c == b.l_c


def test_rejects_bad_hair_index():
    probs, labels, image = _case()
    with pytest.raises(ValueError, match="hair_class_index"):
        combined_loss(probs, labels, image, LossConfig(hair_class_index=2))


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        LossConfig(w=-1.0)


# -- selective L2 ------------------------------------------------------------
@pytest.fixture(scope="module")
def tiny():
    return build_model(ModelSpec("hairmattenet", 32, width_multiplier=0.125, decoder_depth=16), seed=3).astype(np.float64)


def test_l2_zero_when_regularized_kernels_zero(tiny):
    m = tiny.copy()
    for ly in m.conv_layers():
        if ly.regularized:
            m.params[f"{ly.name}.kernel"].data[...] = 0
    assert l2_penalty(m, 2e-5).item() == 0.0


@pytest.mark.parametrize("name", ["enc.b3.dw.kernel", "dec.s2.dw.kernel", "dec.logits.kernel"])
def test_l2_ignores_depthwise_and_final(tiny, name):
    m = tiny.copy()
    before = l2_penalty(m, 2e-5).item()
    m.params[name].data *= 2.0
    assert l2_penalty(m, 2e-5).item() - before == 0.0


def test_l2_pointwise_delta_is_analytic(tiny):
    m = tiny.copy()
    before = l2_penalty(m, 2e-5).item()
    k = m.params["enc.b4.pw.kernel"]
    delta = np.random.default_rng(0).normal(size=k.shape)
    expected = 2e-5 * (np.sum((k.data + delta) ** 2) - np.sum(k.data ** 2))
    k.data = k.data + delta
    assert l2_penalty(m, 2e-5).item() - before == pytest.approx(expected, abs=1e-9)


def test_l2_single_kernel_arithmetic(tiny):
    m = tiny.copy()
    for ly in m.conv_layers():
        if ly.regularized:
            m.params[f"{ly.name}.kernel"].data[...] = 0
    k = m.params["dec.skip2.kernel"]
    k.data.reshape(-1)[:2] = [1.0, 2.0]
    assert l2_penalty(m, 2e-5).item() == pytest.approx(1e-4, abs=1e-15)


def test_l2_covers_expected_roles(tiny):
    roles = {ly.role for ly in tiny.conv_layers() if ly.regularized}
    assert roles == {"conv", "pointwise", "adapter"}
