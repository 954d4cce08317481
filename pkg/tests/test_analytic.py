import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from reprinv.analytic import (CapacityQuery, PrecisionWarning, SingularLayerError, conditioning_probe,
                              estimate_zero_fraction, invert_linear, relu_capacity)
from reprinv.fixtures import flat_reference
from reprinv.layers import Dense, LinearModel, Model, ReLU, build_mlp, random_linear_model
from reprinv.tensor import SeededRng, gaussian_draw, l2_norm


def rel_roundtrip(model, a):
    return l2_norm(a - invert_linear(model, model.forward(a))) / l2_norm(a)


class TestInvertLinear:
    def test_hand_solve(self):
        m = LinearModel([np.diag([2.0, 4.0])], [np.ones(2)])
        np.testing.assert_allclose(invert_linear(m, np.array([5.0, 9.0])), [2.0, 2.0])

    def test_identity(self):
        m = LinearModel([np.eye(5)] * 2)
        o = np.arange(5.0)
        np.testing.assert_array_equal(invert_linear(m, o), o)

    @pytest.mark.parametrize("seed", range(10))
    def test_roundtrip_64(self, seed):
        m = random_linear_model(192, 3, seed)
        assert rel_roundtrip(m, flat_reference(192).reshape(-1)) < 1e-6

    def test_32_bit_warns(self):
        m = random_linear_model(16, 1, 0, precision=32)
        with pytest.warns(PrecisionWarning):
            invert_linear(m, np.zeros(16, dtype=np.float32))

    def test_64_bit_silent(self):
        m = random_linear_model(16, 2, 0)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            invert_linear(m, np.zeros(16))

    def test_singular_names_layer(self):
        w = np.eye(3)
        w[2, 2] = 0.0
        m = LinearModel([np.eye(3), w, np.eye(3)])
        with pytest.raises(SingularLayerError, match="layer 2") as info:
            invert_linear(m, np.ones(3))
        assert info.value.layer == 2

    def test_wrong_width(self):
        with pytest.raises(ValueError):
            invert_linear(LinearModel([np.eye(3)]), np.ones(4))

    def test_from_dense_model(self):
        model = build_mlp(12, [12, 12], seed=4)
        lin = LinearModel.from_model(model)
        a = np.linspace(0, 1, 12)
        np.testing.assert_allclose(lin.forward(a), model.forward(a), rtol=1e-5, atol=1e-6)

    @given(st.integers(0, 2**32), st.integers(1, 4), st.integers(2, 32))
    def test_roundtrip_property(self, seed, depth, width):
        m = random_linear_model(width, depth, seed)
        a = gaussian_draw(SeededRng(seed), width, 0.5, 0.25)
        try:
            err = rel_roundtrip(m, a)
        except SingularLayerError:
            return
        assert err < 1e-6


class TestConditioningProbe:
    def test_identity_ratio_near_one(self):
        m = LinearModel([np.eye(2523)])
        r = conditioning_probe(m, np.full(2523, 0.5), sigma_out=0.05, sigma_in=0.05)
        assert len(r.rows) == 10
        assert abs(np.mean(r.ratios) - 1.0) < 0.2

    def test_diagonal_amplification(self):
        n = 200
        d = np.ones(n)
        d[: n // 2] = 1e-6
        a = np.full(n, 0.5)
        ratio_ill = conditioning_probe(LinearModel([np.diag(d)]), a, 0.01, 0.01).median
        ratio_ok = conditioning_probe(LinearModel([np.eye(n)]), a, 0.01, 0.01).median
        # half the directions scale by 1e6, so the norm scales by about 1e6 / sqrt(2)
        assert 1e5 < ratio_ill / ratio_ok < 1e7

    def test_scale_invariance_zero_bias(self):
        m = random_linear_model(64, 2, 3, bias=False)
        a = flat_reference(192).reshape(-1)[:64]
        r1 = conditioning_probe(m, a, 1e-3, 1 / 20)
        r2 = conditioning_probe(m, 7.0 * a, 1e-3, 1 / 20)
        np.testing.assert_allclose(r1.ratios, r2.ratios, rtol=1e-6)

    def test_rejects_nonpositive_sigma(self):
        with pytest.raises(ValueError):
            conditioning_probe(LinearModel([np.eye(2)]), np.ones(2), 0.0, 1.0)

    def test_csv(self):
        r = conditioning_probe(LinearModel([np.eye(4)]), np.ones(4), 0.1, 0.1, seeds=[3])
        lines = r.to_csv("x").splitlines()
        assert lines[:2] == ["# x", "seed,dist_a_app,dist_a_ap,ratio"]
        assert lines[2].startswith("3,")

    def test_deterministic(self):
        m = random_linear_model(32, 3, 0)
        a = np.full(32, 0.5)
        assert conditioning_probe(m, a).to_csv() == conditioning_probe(m, a).to_csv()


class TestCapacity:
    @pytest.mark.parametrize("m,p,n,width", [(192, 0.5, 0, 192), (192, 0.5, 3, 1536), (2523, 0.5, 1, 5046),
                                             (10, 0.1, 2, 1000), (3, 1.0, 9, 3)])
    def test_examples(self, m, p, n, width):
        assert relu_capacity(CapacityQuery(m, p, n)) == width

    @pytest.mark.parametrize("kw", [dict(m=0, p=0.5, n=1), dict(m=1, p=0.0, n=1), dict(m=1, p=1.5, n=1),
                                    dict(m=1, p=0.5, n=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            CapacityQuery(**kw)

    @given(st.integers(1, 10_000), st.floats(0.05, 1.0), st.integers(0, 6))
    def test_monotone(self, m, p, n):
        c = relu_capacity(CapacityQuery(m, p, n))
        assert relu_capacity(CapacityQuery(m, p, n + 1)) >= c
        assert relu_capacity(CapacityQuery(m + 1, p, n)) >= c
        assert relu_capacity(CapacityQuery(m, min(1.0, p * 1.1), n)) <= c


class TestZeroFraction:
    def test_hand_example(self):
        dense = Dense(np.diag([-1.0, 2.0, -3.0, 4.0]), np.zeros(4))
        m = Model([dense, ReLU()], (4,), 64)
        assert estimate_zero_fraction(m, [np.ones(4)]) == [0.5]

    def test_no_relu(self):
        assert estimate_zero_fraction(build_mlp(4, [4], seed=0), [np.ones(4)]) == []

    def test_symmetric_init(self):
        m = build_mlp(64, [64, 64, 64], use_relu=True, seed=0)
        rng = SeededRng(1)
        inputs = [gaussian_draw(rng, 64, 0.0, 1.0) for _ in range(50)]
        fractions = estimate_zero_fraction(m, inputs)
        assert len(fractions) == 3
        for p in fractions:
            assert abs(p - 0.5) < 0.05

    def test_positive_bias_tiny_weights(self):
        m = Model([Dense(np.full((8, 8), 1e-6), np.ones(8)), ReLU(), Dense(np.full((8, 8), 1e-6), np.ones(8)), ReLU()],
                  (8,), 64)
        assert estimate_zero_fraction(m, [np.ones(8), -np.ones(8)]) == [0.0, 0.0]
