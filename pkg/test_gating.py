import numpy as np
import pytest

from errors import ValidationError
from gating import (ComposedContext, HalfSpaceContext, LayerGating, context_bit, context_index,
                    sample_composed, sample_halfspace)


def _cc(normals, offsets):
    return ComposedContext(tuple(HalfSpaceContext(np.asarray(v, dtype=float), b) for v, b in zip(normals, offsets)))


class TestHalfSpace:

    def test_bit_on_boundary_is_one(self):
        c = HalfSpaceContext(np.array([1.0, 0.0]), 0.5)
        assert context_bit(c, np.array([0.5, 3.0])) == 1
        assert context_bit(c, np.array([0.4, 3.0])) == 0

    def test_rejects_non_unit_normal(self):
        with pytest.raises(ValidationError):
            HalfSpaceContext(np.array([1.0, 1.0]), 0.0)

    def test_rejects_wrong_dimension(self):
        c = HalfSpaceContext(np.array([1.0, 0.0]), 0.0)
        with pytest.raises(ValidationError):
            context_bit(c, np.array([1.0, 2.0, 3.0]))

    def test_rejects_nonfinite_side_info(self):
        c = HalfSpaceContext(np.array([1.0]), 0.0)
        with pytest.raises(ValidationError):
            context_bit(c, np.array([np.nan]))

    def test_sampled_normals_are_unit(self):
        rng = np.random.default_rng(0)
        for d in (1, 2, 5, 13):
            for _ in range(100):
                c = sample_halfspace(d, 0.05, rng)
                assert abs(np.linalg.norm(c.normal) - 1.0) < 1e-9

    def test_zero_bias_scale_gives_zero_offsets(self):
        rng = np.random.default_rng(1)
        assert all(sample_halfspace(3, 0.0, rng).offset == 0.0 for _ in range(20))


class TestContextIndex:

    def test_little_endian_order(self):
        cc = _cc([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])
        assert context_index(cc, np.array([1.0, 1.0])) == 3
        assert context_index(cc, np.array([-1.0, 1.0])) == 2
        assert context_index(cc, np.array([1.0, -1.0])) == 1
        assert context_index(cc, np.array([-1.0, -1.0])) == 0

    def test_single_context(self):
        cc = _cc([[1.0]], [0.0])
        assert cc.cells == 2
        assert context_index(cc, np.array([2.0])) == 1

    def test_empty_composition_rejected(self):
        with pytest.raises(ValidationError):
            ComposedContext(())

    def test_index_range(self):
        rng = np.random.default_rng(2)
        for s in range(1, 10):
            cc = sample_composed(3, s, 0.05, rng)
            for _ in range(50):
                assert 0 <= context_index(cc, rng.standard_normal(3)) < 2 ** s


class TestLayerGating:

    def test_matches_scalar_index(self):
        rng = np.random.default_rng(3)
        gating = LayerGating.sample(6, 4, 5, 0.3, rng)
        for _ in range(50):
            z = rng.standard_normal(4)
            expected = [context_index(gating.composed(k), z) for k in range(6)]
            np.testing.assert_array_equal(gating.indices(z), expected)

    def test_composed_round_trip(self):
        rng = np.random.default_rng(4)
        composed = [sample_composed(2, 3, 0.5, rng) for _ in range(3)]
        gating = LayerGating.from_composed(composed)
        assert gating.size == 3
        assert gating.dim == 2
        np.testing.assert_allclose(gating.composed(1).normals, composed[1].normals)
        np.testing.assert_allclose(gating.composed(1).offsets, composed[1].offsets)

    def test_nearby_side_info_shares_contexts(self):
        rng = np.random.default_rng(5)
        gating = LayerGating.sample(10_000, 8, 1, 0.5, rng)
        z1 = rng.standard_normal(8)
        z1 /= np.linalg.norm(z1)
        u = rng.standard_normal(8)
        u -= (u @ z1) * z1
        u /= np.linalg.norm(u)
        bits = gating.indices(z1)
        distances = []
        for eps in (0.5, 0.1, 0.01, 0.001):
            angle = np.arccos(1.0 - eps)
            z2 = np.cos(angle) * z1 + np.sin(angle) * u
            distances.append(np.mean(gating.indices(z2) != bits))
        assert np.all(np.diff(distances) < 0)
        assert distances[-1] < 0.02
