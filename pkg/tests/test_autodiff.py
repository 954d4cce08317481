import numpy as np
import pytest

from _gradcheck import input_case, input_gradient_errors, kind_models, param_case, param_gradient_errors
from reprinv.autodiff import (input_gradient, l1_objective_and_gradient, loss_and_param_gradients,
                              param_gradients, softmax_cross_entropy)
from reprinv.layers import Dense, MaxPool, Model, ReLU, build_mlp, forward_to_layer
from reprinv.tensor import SeededRng

KINDS = list(kind_models())


class TestInputGradient:
    def test_zero_at_exact_preimage(self):
        m = build_mlp(8, [6, 5], use_relu=True, seed=1)
        a = SeededRng(0).uniform(8, -1, 1)
        g = input_gradient(m, 2, a, forward_to_layer(m, a, 2))
        assert not g.any()

    def test_identity_gives_sign(self):
        m = build_mlp(5, [5], init="identity")
        a = np.array([0.5, -2.0, 0.0, 3.0, -0.1])
        np.testing.assert_array_equal(input_gradient(m, 1, a, np.zeros(5)), np.sign(a))

    def test_objective_value(self):
        m = build_mlp(3, [3], init="identity")
        obj, y, _ = l1_objective_and_gradient(m, 1, np.array([1.0, -2.0, 0.5]), np.array([0.0, 0.0, 1.0]))
        assert obj == 3.5
        np.testing.assert_array_equal(y, [1.0, -2.0, 0.5])

    def test_shape_mismatch(self):
        m = build_mlp(4, [3], seed=0)
        with pytest.raises(ValueError):
            input_gradient(m, 1, np.zeros(4), np.zeros(4))
        with pytest.raises(ValueError):
            input_gradient(m, 1, np.zeros(5), np.zeros(3))

    def test_mlp_finite_differences(self):
        m = build_mlp(30, [25, 20, 15], seed=4)
        rng = SeededRng(5)
        a, other = rng.uniform(30, -1, 1), rng.uniform(30, -1, 1)
        errs = input_gradient_errors(m, 3, a, forward_to_layer(m, other, 3))
        assert len(errs) == 30 and max(errs) < 1e-6

    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("seed", [0, 1])
    def test_each_layer_kind(self, kind, seed):
        model, a, y_hat = input_case(kind, seed)
        errs = input_gradient_errors(model, 1, a, y_hat, count=50, seed=seed)
        assert len(errs) == 50
        assert max(errs) < 1e-6

    def test_only_needed_layers_evaluated(self):
        class Exploding(Dense):
            def forward(self, x):
                raise AssertionError("layer beyond l was evaluated")

        layers = [Dense(np.eye(3)), Exploding(np.eye(3))]
        m = Model(layers, (3,))
        input_gradient(m, 1, np.ones(3), np.zeros(3))

    def test_relu_masks_gradient(self):
        w = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        m = Model([Dense(w, np.array([-5.0, 0.0, 0.0])), ReLU()], (2,))
        # unit 0 has pre-activation 1 - 5 < 0, so it must not contribute
        a = np.array([1.0, 2.0])
        g = input_gradient(m, 2, a, np.array([10.0, 0.0, 0.0]))
        # only units 1 (y=2 > 0) and 2 (y=3 > 0) push: d/da of |2| + |3| = [1, 2]
        np.testing.assert_array_equal(g, [1.0, 2.0])

    def test_linear_sign_structure_invariant_under_scaling(self):
        m = build_mlp(10, [12, 12], seed=2)
        rng = SeededRng(3)
        a_star = rng.uniform(10, -1, 1)
        y_hat = forward_to_layer(m, a_star, 2)
        d = rng.uniform(10, -1, 1)
        g1 = input_gradient(m, 2, a_star + d, y_hat)
        g2 = input_gradient(m, 2, a_star + 2 * d, y_hat)
        np.testing.assert_array_equal(np.sign(g1), np.sign(g2))

    def test_maxpool_tie_goes_to_lowest_index(self):
        m = Model([MaxPool(2)], (1, 2, 2))
        g = input_gradient(m, 1, np.ones((1, 2, 2)), np.zeros((1, 1, 1)))
        np.testing.assert_array_equal(g[0], [[1.0, 0.0], [0.0, 0.0]])


class TestParamGradients:
    def test_softmax_minus_onehot_sums_to_zero(self):
        m = Model([Dense(np.zeros((4, 3)), np.zeros(4))], (3,))
        x = SeededRng(0).uniform((8, 3), -1, 1)
        labels = np.arange(8) % 4
        _, db = param_gradients(m, x, labels)
        assert abs(db.sum()) < 1e-15
        # zero weights -> uniform softmax; per class: (0.25 * 8 - 2) / 8 = 0
        np.testing.assert_allclose(db, np.zeros(4), atol=1e-15)

    def test_two_by_two_hand(self):
        w = np.array([[1.0, 0.0], [0.0, 1.0]])
        m = Model([Dense(w, np.zeros(2))], (2,))
        x = np.array([[1.0, 0.0]])
        # logits [1, 0]; p = [e/(e+1), 1/(e+1)]; label 1 -> dz = [p0, p1 - 1]
        p0 = np.e / (np.e + 1)
        dw, db = param_gradients(m, x, np.array([1]))
        np.testing.assert_allclose(db, [p0, -p0], rtol=1e-14)
        np.testing.assert_allclose(dw, [[p0, 0.0], [-p0, 0.0]], rtol=1e-14)
        loss, _ = softmax_cross_entropy(np.array([[1.0, 0.0]]), np.array([1]))
        assert loss == pytest.approx(np.log(np.e + 1))

    @pytest.mark.parametrize("kind", KINDS)
    def test_finite_differences(self, kind):
        model, x, labels = param_case(kind)
        errs = param_gradient_errors(model, x, labels, count=50)
        assert len(errs) == 50
        assert max(errs) < 1e-5

    def test_label_range(self):
        m = build_mlp(3, [2], seed=0)
        with pytest.raises(ValueError):
            param_gradients(m, np.zeros((1, 3)), np.array([2]))
        with pytest.raises(ValueError):
            param_gradients(m, np.zeros((1, 3)), np.array([-1]))

    def test_needs_logit_layer(self):
        m = build_small_conv()
        with pytest.raises(ValueError):
            loss_and_param_gradients(m, np.zeros((1, 1, 4, 4)), np.array([0]))


def build_small_conv():
    from reprinv.layers import build_small_convnet
    return build_small_convnet((1, 4, 4), 1, [2])
