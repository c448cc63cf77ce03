import numpy as np
import pytest

import pog
from constraints import ConstraintSet, backstop_project, barrier_penalty
from errors import InfeasibleBarrierError, ValidationError
from pog import UnivariateGaussian


class TestConstraintSet:

    def test_rejects_inverted_variance_bounds(self):
        with pytest.raises(ValidationError):
            ConstraintSet(sigma2_min=2.0, sigma2_max=1.0)

    def test_rejects_small_w_max(self):
        with pytest.raises(ValidationError):
            ConstraintSet(w_max=0.5)

    def test_precision_bounds(self):
        cs = ConstraintSet(sigma2_min=0.25, sigma2_max=4.0)
        assert cs.precision_max == pytest.approx(4.0)
        assert cs.precision_min == pytest.approx(0.25)


class TestBackstop:

    def test_precision_projection(self):
        cs = ConstraintSet(sigma2_min=0.25)
        experts = [UnivariateGaussian(0, 1), UnivariateGaussian(1, 1)]
        np.testing.assert_allclose(backstop_project([3.0, 3.0], experts, cs), [2.0, 2.0], atol=1e-12)

    def test_feasible_row_unchanged(self):
        cs = ConstraintSet()
        experts = [UnivariateGaussian(0, 1), UnivariateGaussian(1, 2)]
        np.testing.assert_array_equal(backstop_project([0.5, 1.5], experts, cs), [0.5, 1.5])

    def test_box_clipping(self):
        cs = ConstraintSet(w_max=10.0, sigma2_min=1e-6)
        experts = [UnivariateGaussian(0, 1), UnivariateGaussian(1, 1)]
        np.testing.assert_allclose(backstop_project([-3.0, 50.0], experts, cs), [0.0, 10.0])

    def test_random_rows_become_feasible(self):
        rng = np.random.default_rng(0)
        cs = ConstraintSet()
        for _ in range(200):
            experts = [UnivariateGaussian(rng.uniform(-3, 3), rng.uniform(0.2, 3.0)) for _ in range(4)]
            w = backstop_project(rng.uniform(-5.0, 5000.0, 4), experts, cs)
            p = w @ np.array([e.precision for e in experts])
            assert np.all((w >= 0) & (w <= cs.w_max))
            assert cs.precision_min * (1 - 1e-9) <= p <= cs.precision_max * (1 + 1e-9)

    def test_projection_idempotent(self):
        rng = np.random.default_rng(2)
        cs = ConstraintSet(sigma2_min=0.1, sigma2_max=10.0)
        for _ in range(200):
            experts = [UnivariateGaussian(rng.uniform(-3, 3), rng.uniform(0.2, 3.0)) for _ in range(4)]
            once = backstop_project(rng.uniform(-5.0, 50.0, 4), experts, cs)
            np.testing.assert_allclose(backstop_project(once, experts, cs), once, rtol=1e-9, atol=1e-12)

    def test_clip_variance_leaves_precision_cap_to_inference(self):
        cs = ConstraintSet(sigma2_min=0.25, sigma2_max=1.0, clip_variance=True)
        experts = [UnivariateGaussian(0, 1), UnivariateGaussian(1, 1)]
        np.testing.assert_array_equal(backstop_project([3.0, 3.0], experts, cs), [3.0, 3.0])
        np.testing.assert_allclose(backstop_project([0.1, 0.1], experts, cs), [0.5, 0.5], atol=1e-12)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValidationError):
            backstop_project([np.inf, 1.0], [UnivariateGaussian(0, 1)] * 2, ConstraintSet())


class TestBarrier:

    def test_diverges_towards_boundary(self):
        cs = ConstraintSet(w_max=10.0)
        experts = [UnivariateGaussian(0, 1), UnivariateGaussian(1, 1)]
        values = [barrier_penalty([w, 1.0], experts, cs)[0] for w in (9.0, 9.9, 9.999, 9.99999)]
        assert np.all(np.diff(values) > 0)
        assert values[-1] > values[0] + 5

    def test_infeasible_point_raises(self):
        experts = [UnivariateGaussian(0, 1), UnivariateGaussian(1, 1)]
        with pytest.raises(InfeasibleBarrierError):
            barrier_penalty([2000.0, 1.0], experts, ConstraintSet())

    def test_gradient_finite_differences(self):
        rng = np.random.default_rng(1)
        cs = ConstraintSet(mu_min=-4.0, mu_max=4.0)
        h = 1e-7
        for _ in range(50):
            experts = [UnivariateGaussian(rng.uniform(-2, 2), rng.uniform(0.5, 2.0)) for _ in range(3)]
            w = rng.uniform(0.1, 3.0, 3)
            _, grad = barrier_penalty(w, experts, cs)
            fd = np.array([(barrier_penalty(w + h * e, experts, cs)[0] - barrier_penalty(w - h * e, experts, cs)[0])
                           / (2 * h) for e in np.eye(3)])
            np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-6)

    def test_midpoint_convexity(self):
        rng = np.random.default_rng(3)
        cs = ConstraintSet(mu_min=-4.0, mu_max=4.0)
        for _ in range(200):
            experts = [UnivariateGaussian(rng.uniform(-2, 2), rng.uniform(0.5, 2.0)) for _ in range(3)]
            w1, w2 = rng.uniform(0.1, 3.0, 3), rng.uniform(0.1, 3.0, 3)
            mid = barrier_penalty(0.5 * (w1 + w2), experts, cs)[0]
            ends = 0.5 * (barrier_penalty(w1, experts, cs)[0] + barrier_penalty(w2, experts, cs)[0])
            assert mid <= ends + 1e-9

    def test_mean_bounds_only_univariate(self):
        cs = ConstraintSet(mu_max=1.0)
        experts = [pog.IsotropicGaussian(np.zeros(2), 1.0)]
        with pytest.raises(ValidationError):
            barrier_penalty([1.0], experts, cs)
