import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icarec import autodiff as ad
from icarec import objectives as obj
from icarec.errors import ConfigError, DegenerateBatchError, ShapeMismatchError
from oracles import pearson_r


def c(values):
    return ad.constant(ad.Tensor(values))


def p(values):
    return ad.parameter(ad.Tensor(values))


def val(node):
    return node.value.data.item()


class TestReconstruction:
    def test_identical_inputs_zero(self):
        x = np.random.default_rng(0).standard_normal((3, 4))
        assert val(obj.recon_l1(c(x), c(x))) == 0.0
        assert val(obj.recon_mse(c(x), c(x))) == 0.0

    def test_hand_arithmetic(self):
        xhat = c(np.array([0.0, 0.0]))
        x = c(np.array([1.0, -1.0]))
        assert val(obj.recon_l1(xhat, x)) == 1.0
        assert val(obj.recon_mse(xhat, x)) == 1.0

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((5, 7))
        b = rng.standard_normal((5, 7))
        l1 = sum(abs(x - y) for x, y in zip(a.ravel(), b.ravel())) / a.size
        mse = sum((x - y) ** 2 for x, y in zip(a.ravel(), b.ravel())) / a.size
        assert abs(val(obj.recon_l1(c(a), c(b))) - l1) < 1e-12
        assert abs(val(obj.recon_mse(c(a), c(b))) - mse) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            obj.recon_l1(c(np.zeros(3)), c(np.zeros(4)))


class TestDomainConfusion:
    def test_uniform_logits_ln_k(self):
        for k in range(2, 11):
            logits = c(np.zeros((6, k)))
            labels = np.arange(6) % k
            got = val(obj.ind_domain_confusion(logits, labels))
            assert abs(got - math.log(k)) < 1e-12

    def test_near_onehot_correct_near_zero(self):
        logits = np.full((4, 3), -20.0)
        labels = np.array([0, 1, 2, 1])
        logits[np.arange(4), labels] = 20.0
        assert val(obj.ind_domain_confusion(c(logits), labels)) < 1e-10

    def test_matches_log_softmax_oracle(self):
        rng = np.random.default_rng(2)
        logits = rng.standard_normal((8, 5))
        labels = rng.integers(0, 5, 8)
        probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        expect = float(-np.log(probs[np.arange(8), labels]).mean())
        got = val(obj.ind_domain_confusion(c(logits), labels))
        assert abs(got - expect) < 1e-10

    def test_label_out_of_range(self):
        with pytest.raises(ConfigError, match="range"):
            obj.ind_domain_confusion(c(np.zeros((2, 3))), np.array([0, 3]))


class TestSquaredCorrelation:
    def test_identity_is_one(self):
        a = np.array([0.3, 1.7, -0.2, 0.9])
        assert abs(val(obj.squared_correlation(c(a), c(a))) - 1.0) < 1e-12

    def test_known_case(self):
        a = np.array([1.0, 2.0, 3.0, 4.0])
        b = np.array([1.0, 3.0, 2.0, 4.0])
        r = pearson_r(a, b)
        assert abs(r - 0.8) < 1e-12
        assert abs(val(obj.squared_correlation(c(a), c(b))) - 0.64) < 1e-12

    def test_constant_argument_errors(self):
        with pytest.raises(DegenerateBatchError, match="degenerate batch"):
            obj.squared_correlation(c(np.ones(4)), c(np.arange(4.0)))

    @given(alpha=st.floats(0.1, 10.0), beta=st.floats(-5.0, 5.0),
           flip=st.booleans())
    @settings(max_examples=40, deadline=None)
    def test_affine_invariance(self, alpha, beta, flip):
        rng = np.random.default_rng(7)
        a = rng.standard_normal(16)
        b = rng.standard_normal(16)
        base = val(obj.squared_correlation(c(a), c(b)))
        scale = -alpha if flip else alpha
        mapped = val(obj.squared_correlation(c(scale * a + beta), c(b)))
        assert abs(base - mapped) < 1e-10

    def test_regression_is_negated(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal(10)
        b = rng.standard_normal(10)
        r2 = val(obj.squared_correlation(c(a), c(b)))
        assert abs(val(obj.ind_regression(c(a), c(b))) + r2) < 1e-14

    def test_multicolumn_regression_mean(self):
        rng = np.random.default_rng(4)
        d = rng.standard_normal((12, 2))
        t = rng.standard_normal((12, 2))
        per = [val(obj.squared_correlation(c(d[:, j]), c(t[:, j])))
               for j in range(2)]
        got = val(obj.ind_regression(c(d), c(t)))
        assert abs(got + np.mean(per)) < 1e-12


class TestContrastive:
    def test_zero_logits_ln2(self):
        logits = c(np.zeros(6))
        labels = np.array([1, 0, 1, 0, 1, 0])
        assert abs(val(obj.ind_contrastive(logits, labels)) - math.log(2)) < 1e-12

    def test_separated_logits_near_zero(self):
        logits = c(np.array([20.0, -20.0, 20.0, -20.0]))
        labels = np.array([1, 0, 1, 0])
        assert val(obj.ind_contrastive(logits, labels)) < 1e-8

    def test_matches_bce_oracle(self):
        rng = np.random.default_rng(5)
        z = rng.standard_normal(9)
        labels = rng.integers(0, 2, 9)
        sig = 1.0 / (1.0 + np.exp(-z))
        expect = float(-(labels * np.log(sig)
                         + (1 - labels) * np.log(1 - sig)).mean())
        assert abs(val(obj.ind_contrastive(c(z), labels)) - expect) < 1e-10

    def test_single_class_batch_errors(self):
        with pytest.raises(DegenerateBatchError):
            obj.ind_contrastive(c(np.zeros(4)), np.ones(4))


class TestScaleInvariant:
    def test_identical_zero(self):
        s = np.random.default_rng(0).standard_normal((3, 8))
        assert val(obj.ind_scale_invariant(c(s), c(s))) < 1e-15

    def test_negative_scaling_cancels(self):
        s = np.random.default_rng(1).standard_normal((2, 6))
        assert val(obj.ind_scale_invariant(c(s), c(-3.0 * s))) < 1e-12

    def test_matches_formula_oracle(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((4, 5))
        b = rng.standard_normal((4, 5))
        na = np.abs(a) / np.linalg.norm(a)
        nb = np.abs(b) / np.linalg.norm(b)
        expect = float(np.linalg.norm(na - nb))
        assert abs(val(obj.ind_scale_invariant(c(a), c(b))) - expect) < 1e-12

    def test_symmetric(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((3, 3))
        b = rng.standard_normal((3, 3))
        assert abs(val(obj.ind_scale_invariant(c(a), c(b)))
                   - val(obj.ind_scale_invariant(c(b), c(a)))) < 1e-15

    def test_zero_norm_errors(self):
        with pytest.raises(DegenerateBatchError):
            obj.ind_scale_invariant(c(np.zeros((2, 2))), c(np.ones((2, 2))))


class TestComposite:
    def test_lambda_zero_pure_reconstruction(self):
        recon = c(np.array(0.5))
        ind = c(np.array(0.2))
        assert obj.loss_ae(recon, ind, 0.0) is recon

    def test_arithmetic(self):
        recon = c(np.array(0.5))
        ind = c(np.array(0.2))
        assert abs(val(obj.loss_ae(recon, ind, 0.05)) - 0.49) < 1e-15
        assert val(obj.loss_disc(ind)) == pytest.approx(0.2)

    def test_ae_gradient_decomposes(self):
        # d(recon - lam*ind)/dw == d recon/dw - lam * d ind/dw
        rng = np.random.default_rng(6)
        w0 = rng.standard_normal((3, 1))
        x = rng.standard_normal((8, 3))
        t = rng.standard_normal(8)
        lam = 0.7

        def graphs(wnode):
            pred = ad.matmul(c(x), wnode)
            recon = obj.recon_mse(pred, c(np.zeros((8, 1))))
            ind = obj.ind_regression(pred, c(t))
            return recon, ind

        w = p(w0)
        recon, ind = graphs(w)
        ad.backward(obj.loss_ae(recon, ind, lam))
        combo = w.grad.data.copy()

        w1 = p(w0)
        ad.backward(graphs(w1)[0])
        w2 = p(w0)
        ad.backward(graphs(w2)[1])
        np.testing.assert_allclose(combo, w1.grad.data - lam * w2.grad.data,
                                   rtol=1e-10, atol=1e-12)


def test_objective_nodes_pass_grad_check():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((6, 3))
    t = rng.standard_normal(6)
    labels = rng.integers(0, 3, 6)
    tf_labels = np.array([1, 0, 1, 0, 1, 0])
    target = rng.standard_normal((6, 3))

    cases = {
        "l1": lambda n: obj.recon_l1(ad.matmul(c(x), n[0]), c(target)),
        "mse": lambda n: obj.recon_mse(ad.matmul(c(x), n[0]), c(target)),
        "regression": lambda n: obj.ind_regression(
            ad.matmul(c(x), ad.slice_(n[0], (slice(None), slice(0, 1)))), c(t)),
        "domain-confusion": lambda n: obj.ind_domain_confusion(
            ad.matmul(c(x), n[0]), labels),
        "contrastive": lambda n: obj.ind_contrastive(
            ad.matmul(c(x), ad.slice_(n[0], (slice(None), slice(0, 1)))),
            tf_labels),
        "scale-invariant": lambda n: obj.ind_scale_invariant(
            ad.matmul(c(x), n[0]), c(target)),
    }
    w = ad.Tensor(rng.standard_normal((3, 3)))
    for name, fn in cases.items():
        err = ad.grad_check(fn, [w], h=1e-6)
        assert err < 1e-5, f"{name}: rel err {err}"


def test_invalid_config_rejected():
    with pytest.raises(ConfigError):
        obj.ObjectiveConfig(recon_kind="huber")
    with pytest.raises(ConfigError):
        obj.ObjectiveConfig(ind_kind="hsic")
    with pytest.raises(ConfigError):
        obj.ObjectiveConfig(lam=-0.1)
