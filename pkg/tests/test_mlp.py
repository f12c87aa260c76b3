"""Forward pass, losses, and prior checked against independent oracles."""

import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from numpy.testing import assert_allclose

from nodegibbs.mlp import (
    ActivationKind,
    GaussianPrior,
    LabeledDataset,
    MlpArchitecture,
    ParameterLayout,
    binary_cross_entropy,
    cross_entropy,
    dataset_nll,
    forward,
    log_likelihood,
    param_count,
    softmax,
    unpack_parameters,
)

MULTICLASS_BIG = MlpArchitecture((784, 10, 10, 10, 10))
BINARY_SHALLOW = MlpArchitecture(
    (2, 2, 1), output_activation=ActivationKind.SIGMOID
)
BINARY_DEEP = MlpArchitecture(
    (2, 2, 2, 2, 2, 2, 2, 1), output_activation=ActivationKind.SIGMOID
)
MULTICLASS_TOY = MlpArchitecture((3, 2, 2, 2))

ALL_ARCHS = [BINARY_SHALLOW, MULTICLASS_BIG, BINARY_DEEP, MULTICLASS_TOY]


def naive_forward(widths, theta, x, binary):
    """Second, loop-based implementation of the layer recursion.

    Consumes the flat vector in the documented order (per node: weights
    in source order, then the bias) using explicit index arithmetic.
    """
    pos = 0
    h = np.asarray(x, dtype=np.float64)
    for j in range(1, len(widths)):
        cur, prev = widths[j], widths[j - 1]
        g = np.empty(cur)
        for k in range(cur):
            w = theta[pos : pos + prev]
            bias = theta[pos + prev]
            pos += prev + 1
            g[k] = float(np.dot(w, h)) + float(bias)
        if j < len(widths) - 1:
            h = 1.0 / (1.0 + np.exp(-g))
    assert pos == len(theta)
    if binary:
        return 1.0 / (1.0 + np.exp(-g))
    shifted = np.exp(g - np.max(g))
    return shifted / shifted.sum()


def random_dataset(rng, arch, size=16):
    inputs = rng.normal(size=(size, arch.input_dim))
    if arch.is_binary:
        labels = rng.integers(0, 2, size=size)
    else:
        labels = rng.integers(1, arch.output_dim + 1, size=size)
    return LabeledDataset(inputs, labels)


class TestParamCount:
    def test_known_architectures(self):
        assert param_count(BINARY_SHALLOW) == 9
        assert param_count(MULTICLASS_BIG) == 8180
        assert param_count(BINARY_DEEP) == 39
        assert param_count(MULTICLASS_TOY) == 20

    def test_matches_layout_size(self):
        for arch in ALL_ARCHS:
            layout = ParameterLayout(arch)
            assert layout.size == param_count(arch)


class TestParameterLayout:
    def test_describe_is_a_bijection(self):
        for arch in ALL_ARCHS:
            layout = ParameterLayout(arch)
            seen = set()
            for idx in range(layout.size):
                tag = layout.describe(idx)
                key = (tag.layer, tag.node, tag.source, tag.is_bias)
                assert key not in seen
                seen.add(key)
            assert len(seen) == layout.size

    def test_node_slice_matches_describe(self):
        layout = ParameterLayout(MULTICLASS_TOY)
        sl = layout.node_slice(2, 1)
        tags = [layout.describe(i) for i in range(sl.start, sl.stop)]
        assert all(t.layer == 2 and t.node == 1 for t in tags)
        assert [t.is_bias for t in tags] == [False, False, True]

    def test_layer_slices_tile_the_vector(self):
        for arch in ALL_ARCHS:
            layout = ParameterLayout(arch)
            pos = 0
            for j in range(1, arch.depth + 1):
                sl = layout.layer_slice(j)
                assert sl.start == pos
                pos = sl.stop
            assert pos == layout.size

    def test_unpack_views_alias_the_flat_vector(self):
        theta = np.zeros(param_count(MULTICLASS_TOY))
        weights = unpack_parameters(MULTICLASS_TOY, theta)
        theta[0] = 7.5
        assert weights[0][0][0, 0] == 7.5


class TestForward:
    def test_zero_parameters_sigmoid_output(self):
        theta = np.zeros(9)
        out = forward(BINARY_SHALLOW, theta, np.array([0.3, -1.2]))
        assert_allclose(out, [0.5], rtol=0, atol=0)

    def test_zero_parameters_softmax_output(self):
        theta = np.zeros(param_count(MULTICLASS_BIG))
        out = forward(MULTICLASS_BIG, theta, np.ones(784))
        assert_allclose(out, np.full(10, 0.1), atol=1e-15)

    @pytest.mark.parametrize("arch", ALL_ARCHS, ids=lambda a: str(a.widths))
    def test_matches_naive_recursion(self, arch):
        rng = np.random.default_rng(42)
        for _ in range(25):
            theta = rng.normal(scale=0.5, size=param_count(arch))
            x = rng.normal(size=arch.input_dim)
            got = forward(arch, theta, x)
            want = naive_forward(arch.widths, theta, x, arch.is_binary)
            assert_allclose(got, want, atol=1e-12, rtol=0)

    def test_batch_rows_equal_single_calls(self):
        rng = np.random.default_rng(3)
        theta = rng.normal(size=param_count(MULTICLASS_TOY))
        xs = rng.normal(size=(5, 3))
        batch = forward(MULTICLASS_TOY, theta, xs)
        for i in range(5):
            assert_allclose(batch[i], forward(MULTICLASS_TOY, theta, xs[i]), atol=1e-12)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            forward(MULTICLASS_TOY, np.zeros(20), np.zeros(4))
        with pytest.raises(ValueError):
            forward(MULTICLASS_TOY, np.zeros(19), np.zeros(3))


class TestSoftmax:
    def test_symmetry(self):
        assert_allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5], atol=0)

    def test_shift_invariance(self):
        rng = np.random.default_rng(11)
        g = rng.normal(size=7)
        assert_allclose(softmax(g + 123.456), softmax(g), atol=1e-12)
        assert_allclose(softmax(np.array([4.0, 4.0, 4.0])), np.full(3, 1 / 3), atol=1e-15)

    def test_sums_to_one(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            p = softmax(rng.normal(scale=30, size=10))
            assert abs(p.sum() - 1.0) < 1e-12
            assert (p >= 0).all()

    def test_extreme_logits_match_extended_precision(self):
        getcontext().prec = 60
        big = Decimal(0)
        small = Decimal(-1000)
        total = big.exp() + small.exp()
        want = [float(big.exp() / total), float(small.exp() / total)]
        got = softmax(np.array([1000.0, 0.0]))
        assert np.isfinite(got).all()
        assert_allclose(got, want, atol=1e-300)

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            softmax(np.array([1.0, np.nan]))


class TestCrossEntropy:
    def test_zero_parameters_uniform(self):
        theta = np.zeros(param_count(MULTICLASS_BIG))
        data = LabeledDataset(np.ones((7, 784)), np.arange(1, 8))
        assert_allclose(
            cross_entropy(MULTICLASS_BIG, theta, data), 7 * math.log(10), atol=1e-12
        )
        assert_allclose(
            cross_entropy(MULTICLASS_BIG, theta, data, normalized=True),
            math.log(10),
            atol=1e-12,
        )

    def test_label_out_of_range(self):
        data = LabeledDataset(np.ones((2, 3)), np.array([1, 3]))
        with pytest.raises(ValueError):
            cross_entropy(MULTICLASS_TOY, np.zeros(20), data)

    def test_requires_softmax_head(self):
        data = LabeledDataset(np.ones((2, 2)), np.array([0, 1]))
        with pytest.raises(ValueError):
            cross_entropy(BINARY_SHALLOW, np.zeros(9), data)


class TestBinaryCrossEntropy:
    def test_zero_parameters(self):
        data = LabeledDataset(np.zeros((4, 2)), np.array([0, 1, 0, 1]))
        assert_allclose(
            binary_cross_entropy(BINARY_SHALLOW, np.zeros(9), data),
            4 * math.log(2),
            atol=1e-12,
        )

    def test_saturated_correct_prediction_is_zero(self):
        # bias 800 drives the output probability to exactly 1.0
        arch = MlpArchitecture((1, 1), output_activation=ActivationKind.SIGMOID)
        theta = np.array([0.0, 800.0])
        data = LabeledDataset(np.zeros((1, 1)), np.array([1]))
        assert binary_cross_entropy(arch, theta, data) == 0.0

    def test_matches_bernoulli_product_oracle(self):
        rng = np.random.default_rng(21)
        for _ in range(25):
            theta = rng.normal(scale=0.8, size=9)
            data = random_dataset(rng, BINARY_SHALLOW, size=12)
            p = forward(BINARY_SHALLOW, theta, data.inputs)[:, 0]
            want = -sum(
                math.log(pi if yi == 1 else 1.0 - pi)
                for pi, yi in zip(p, data.labels)
            )
            got = binary_cross_entropy(BINARY_SHALLOW, theta, data)
            assert_allclose(got, want, atol=1e-10)

    def test_non_binary_label_rejected(self):
        data = LabeledDataset(np.zeros((2, 2)), np.array([0, 2]))
        with pytest.raises(ValueError):
            binary_cross_entropy(BINARY_SHALLOW, np.zeros(9), data)


class TestLogLikelihood:
    def test_single_point_two_classes(self):
        arch = MlpArchitecture((3, 2, 2))
        data = LabeledDataset(np.zeros((1, 3)), np.array([2]))
        assert_allclose(
            log_likelihood(arch, np.zeros(param_count(arch)), data),
            -math.log(2),
            atol=1e-12,
        )

    def test_negates_loss_on_random_instances(self):
        rng = np.random.default_rng(7)
        for arch in ALL_ARCHS:
            for _ in range(50):
                theta = rng.normal(scale=0.5, size=param_count(arch))
                data = random_dataset(rng, arch)
                ll = log_likelihood(arch, theta, data)
                nll = dataset_nll(arch, theta, data)
                assert abs(ll + nll) <= 1e-10

    def test_two_point_manual_sum(self):
        rng = np.random.default_rng(9)
        theta = rng.normal(size=param_count(MULTICLASS_TOY))
        data = random_dataset(rng, MULTICLASS_TOY, size=2)
        outs = [forward(MULTICLASS_TOY, theta, x) for x in data.inputs]
        want = sum(math.log(out[y - 1]) for out, y in zip(outs, data.labels))
        assert_allclose(log_likelihood(MULTICLASS_TOY, theta, data), want, atol=1e-12)


class TestGaussianPrior:
    def test_standard_value_at_origin(self):
        prior = GaussianPrior(variance=10.0)
        assert_allclose(
            prior.log_density(np.zeros(1)), -0.5 * math.log(2 * math.pi * 10), atol=1e-15
        )

    def test_matches_scipy_density(self):
        from scipy.stats import norm

        rng = np.random.default_rng(17)
        theta = rng.normal(size=50)
        prior = GaussianPrior(variance=10.0)
        want = norm.logpdf(theta, scale=math.sqrt(10.0)).sum()
        assert_allclose(prior.log_density(theta), want, atol=1e-10)

    def test_block_factorization(self):
        rng = np.random.default_rng(18)
        theta = rng.normal(size=39)
        prior = GaussianPrior(variance=10.0)
        pieces = np.array_split(np.arange(39), 7)
        total = sum(prior.log_density_subset(theta, idx) for idx in pieces)
        assert_allclose(total, prior.log_density(theta), atol=1e-12)

    def test_single_coordinate_ratio(self):
        from scipy.stats import norm

        prior = GaussianPrior(variance=10.0)
        old = np.array([0.7])
        new = np.array([-1.3])
        want = norm.logpdf(-1.3, scale=math.sqrt(10)) - norm.logpdf(
            0.7, scale=math.sqrt(10)
        )
        assert_allclose(prior.log_ratio(new, old), want, atol=1e-12)

    def test_invalid_variance(self):
        with pytest.raises(ValueError):
            GaussianPrior(variance=0.0)


class TestLabeledDataset:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros(3), np.zeros(3, dtype=int))
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((3, 2)), np.zeros(4, dtype=int))

    def test_subset_picks_rows(self):
        data = LabeledDataset(np.arange(8).reshape(4, 2), np.array([1, 2, 1, 2]))
        sub = data.subset(np.array([2, 0]))
        assert_allclose(sub.inputs, [[4, 5], [0, 1]])
        assert list(sub.labels) == [1, 1]
