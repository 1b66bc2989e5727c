import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from reconboost import objective as obj
from reconboost.errors import InvalidInputError
from reconboost.numkit import softmax
from reconboost.verify import fd_vector

Y = 4
logit_vec = arrays(np.float64, Y, elements=st.floats(-8, 8, allow_nan=False))
label = st.integers(0, Y - 1)


def _max_rel(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


# -- cross-entropy -----------------------------------------------------------

@pytest.mark.parametrize(
    "logits, target, expected",
    [
        ([0.0, 0.0], [1.0, 0.0], math.log(2)),
        ([0.0, 0.0], [0.5, 0.5], math.log(2)),
        ([0.0, 0.0, 0.0], [0.0, 0.0, 1.0], math.log(3)),
    ],
)
def test_ce_examples(logits, target, expected):
    assert obj.ce_loss(logits, target) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("margin", [30.0, 45.0, 100.0])
def test_ce_saturates(margin):
    assert obj.ce_loss([margin, 0.0, 0.0], [1.0, 0.0, 0.0]) < 1e-12


def test_ce_grad_example():
    np.testing.assert_allclose(obj.ce_grad_logits([0.0, 0.0], [1.0, 0.0]), [-0.5, 0.5], atol=1e-15)


@given(arrays(np.float64, 2, elements=st.floats(-20, 20)))
def test_ce_grad_zero_sum_target_is_constant(z):
    np.testing.assert_allclose(obj.ce_grad_logits(z, [0.5, -0.5]), [-0.5, 0.5], atol=1e-12)


def test_ce_grad_zero_sum_target_fd():
    z = np.array([1.3, -0.4])
    t = np.array([0.5, -0.5])
    fd = fd_vector(lambda v: obj.ce_loss(v, t), z)
    np.testing.assert_allclose(fd, [-0.5, 0.5], atol=1e-9)


@given(logit_vec, arrays(np.float64, Y, elements=st.floats(-2, 2)))
@settings(max_examples=40)
def test_ce_grad_matches_fd(z, t):
    fd = fd_vector(lambda v: obj.ce_loss(v, t), z)
    assert _max_rel(obj.ce_grad_logits(z, t), fd) <= 1e-8


@pytest.mark.parametrize(
    "fn",
    [obj.ce_loss, obj.ce_grad_logits, obj.pseudo_label, obj.kl_reconcilement, obj.mcr_loss],
)
def test_length_mismatch(fn):
    with pytest.raises(InvalidInputError):
        fn([0.0, 0.0, 0.0], [1.0, 0.0])


def test_batch_mean():
    z = np.array([[0.0, 0.0], [30.0, 0.0]])
    y = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert obj.ce_loss(z, y) == pytest.approx(math.log(2) / 2, abs=1e-12)


# -- pseudo-labels -----------------------------------------------------------

def test_pseudo_label_example():
    np.testing.assert_allclose(obj.pseudo_label([0.0, 0.0], [1.0, 0.0]), [0.5, -0.5], atol=1e-15)


def test_pseudo_label_converged():
    np.testing.assert_allclose(obj.pseudo_label([40.0, 0.0, 0.0], [1.0, 0.0, 0.0]), 0.0, atol=1e-12)


@given(logit_vec, label)
def test_pseudo_label_sums_to_zero(z, c):
    assert abs(obj.pseudo_label(z, obj.one_hot(c, Y)).sum()) <= 1e-12


# -- KL ----------------------------------------------------------------------

def test_kl_known_value():
    # sigma = (.5, .5), rho = (.25, .75)
    got = obj.kl_reconcilement([0.0, 0.0], [0.0, math.log(3)])
    assert got == pytest.approx(0.5 * math.log(4 / 3), abs=1e-12)
    assert round(got, 6) == 0.143841


@given(logit_vec, st.floats(-30, 30))
def test_kl_zero_at_equality(z, c):
    assert abs(obj.kl_reconcilement(z, z + c)) <= 1e-12


@given(logit_vec, logit_vec)
def test_kl_nonnegative(a, b):
    assert obj.kl_reconcilement(a, b) >= -1e-12


@given(logit_vec, logit_vec)
@settings(max_examples=40)
def test_kl_grad_matches_fd(rest, z):
    fd = fd_vector(lambda v: obj.kl_reconcilement(rest, v), z)
    assert _max_rel(obj.kl_grad_logits(rest, z), fd) <= 1e-8


# -- stage loss --------------------------------------------------------------

RHO_Z = np.array([0.0, 0.0])
SIGMA_Z = np.array([math.log(3), 0.0])  # softmax -> (.75, .25)
Y1 = np.array([1.0, 0.0])


@pytest.mark.parametrize("lam, expected", [(1.0, [-0.25, 0.25]), (0.5, [-0.375, 0.375]), (0.0, [-0.5, 0.5])])
def test_stage_grad_worked_examples(lam, expected):
    g = obj.stage_grad_logits(RHO_Z, SIGMA_Z, None, Y1, lam, 0.0)
    np.testing.assert_allclose(g, expected, atol=1e-15)
    fd = fd_vector(lambda v: obj.stage_loss(v, SIGMA_Z, None, Y1, lam, 0.0).total, RHO_Z)
    np.testing.assert_allclose(fd, expected, atol=1e-9)


@given(logit_vec, logit_vec, label, st.floats(0, 2), st.floats(0, 2))
def test_breakdown_invariant(z, rest, c, lam, alpha):
    prev = softmax(rest[::-1])
    br = obj.stage_loss(z, rest, prev, obj.one_hot(c, Y), lam, alpha)
    assert br.total == pytest.approx(br.agreement - lam * br.kl_reconcilement + alpha * br.mcr, abs=1e-12)


@given(logit_vec, logit_vec, label)
def test_stage_degenerates_to_ce(z, rest, c):
    y = obj.one_hot(c, Y)
    assert obj.stage_loss(z, rest, None, y, 0.0, 0.0).total == obj.ce_loss(z, y)
    np.testing.assert_array_equal(obj.stage_grad_logits(z, rest, None, y, 0.0, 0.0), obj.ce_grad_logits(z, y))


def test_stage_without_prev_has_no_mcr():
    br = obj.stage_loss([0.3, 0.1], [0.0, 1.0], None, Y1, 0.3, 5.0)
    assert br.mcr == 0.0


@pytest.mark.parametrize("lam", [0.0, 0.25, 1 / 3, 0.5, 1.0])
@given(z=logit_vec, rest=logit_vec, c=label)
@settings(max_examples=15)
def test_interpolation_identity(lam, z, rest, c):
    y = obj.one_hot(c, Y)
    g = obj.stage_grad_logits(z, rest, None, y, lam, 0.0)
    np.testing.assert_allclose(g, obj.interpolated_target_grad(z, rest, y, lam), atol=1e-12, rtol=0)
    fd = fd_vector(lambda v: obj.stage_loss(v, rest, None, y, lam, 0.0).total, z)
    assert _max_rel(g, fd) <= 1e-8


@given(logit_vec, logit_vec, label)
def test_lambda_one_equals_ce_on_pseudo_label(z, rest, c):
    y = obj.one_hot(c, Y)
    g = obj.stage_grad_logits(z, rest, None, y, 1.0, 0.0)
    np.testing.assert_allclose(g, obj.ce_grad_logits(z, obj.pseudo_label(rest, y)), atol=1e-12)


@given(logit_vec, logit_vec, logit_vec, label, st.floats(0.01, 2))
@settings(max_examples=40)
def test_stage_grad_with_mcr_matches_fd(z, rest, prev_z, c, alpha):
    y, prev = obj.one_hot(c, Y), softmax(prev_z)
    g = obj.stage_grad_logits(z, rest, prev, y, 1 / 3, alpha)
    fd = fd_vector(lambda v: obj.stage_loss(v, rest, prev, y, 1 / 3, alpha).total, z)
    assert _max_rel(g, fd) <= 1e-8


def test_negative_coefficients_rejected():
    with pytest.raises(InvalidInputError):
        obj.stage_loss(RHO_Z, SIGMA_Z, None, Y1, -0.1, 0.0)


# -- MCR ---------------------------------------------------------------------

def test_mcr_examples():
    assert obj.mcr_loss([0.3, -1.0], softmax(np.array([0.3, -1.0]))) == pytest.approx(0.0, abs=1e-15)
    # rho ~ (1, 0), rho_prev = (0, 1)
    assert obj.mcr_loss([60.0, 0.0], [0.0, 1.0]) == pytest.approx(2.0, abs=1e-12)


def test_mcr_grad_zero_when_equal():
    z = np.array([0.2, -0.7, 1.1])
    np.testing.assert_array_equal(obj.mcr_grad_logits(z, softmax(z)), np.zeros(3))


@given(logit_vec, logit_vec, label, label)
def test_mcr_independent_of_label(z, prev_z, c1, c2):
    direct = obj.mcr_loss(z, softmax(prev_z))
    for c in (c1, c2):
        assert abs(obj.mcr_loss_gradient_form(z, prev_z, obj.one_hot(c, Y)) - direct) <= 1e-12


@given(logit_vec, logit_vec)
@settings(max_examples=40)
def test_mcr_grad_matches_fd(z, prev_z):
    prev = softmax(prev_z)
    fd = fd_vector(lambda v: obj.mcr_loss(v, prev), z)
    assert _max_rel(obj.mcr_grad_logits(z, prev), fd) <= 1e-8


# -- GRS ---------------------------------------------------------------------

def test_grs_single_learner_is_ce():
    z, y = np.array([0.4, -0.2, 1.0]), obj.one_hot(2, 3)
    loss, grads = obj.grs_loss([z], y)
    assert loss == obj.ce_loss(z, y)
    np.testing.assert_array_equal(grads[0], obj.ce_grad_logits(z, y))


@pytest.mark.parametrize("num_classes", [2, 3, 7])
def test_grs_cancellation(num_classes):
    a = np.linspace(-2, 3, num_classes)
    loss, _ = obj.grs_loss([a, -a], obj.one_hot(0, num_classes))
    assert loss == pytest.approx(math.log(num_classes), abs=1e-12)


@given(st.lists(logit_vec, min_size=1, max_size=4), label)
def test_grs_shared_gradient(zs, c):
    y = obj.one_hot(c, Y)
    _, grads = obj.grs_loss(zs, y)
    expected = softmax(np.sum(zs, axis=0)) - y
    for g in grads:
        np.testing.assert_allclose(g, expected, atol=1e-12, rtol=0)
    # FD through one learner's logits
    k = len(zs) - 1
    fd = fd_vector(lambda v: obj.grs_loss(zs[:k] + [v], y)[0], zs[k])
    assert _max_rel(grads[k], fd) <= 1e-8


def test_grs_empty():
    with pytest.raises(InvalidInputError):
        obj.grs_loss([], [1.0, 0.0])


def test_total_objective():
    br = obj.StageLossBreakdown.combine(1.0, 0.5, 0.2, 1 / 3, 0.1)
    assert obj.total_objective([br, br], [0.3]) == pytest.approx(2 * (1.0 - 0.5 / 3 + 0.02) + 0.3)


def test_one_hot_range():
    with pytest.raises(InvalidInputError):
        obj.one_hot([0, 3], 3)
