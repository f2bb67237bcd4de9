import numpy as np
import pytest

from interplab import interp, tensor_store as ts
from interplab.errors import DegenerateDirectionError, ShapeMismatchError
from interplab.interp import (
    compute_delta,
    direction_diagnostics,
    lerp_pair,
    model_analogy,
    plane_point,
)
from interplab.tensor_store import ENCODER, HEAD, ParameterSet, SubsetFilter


def random_pair(rng, shapes=None):
    shapes = shapes or {"encoder.w": (3, 4), "encoder.b": (4,), "head.w": (4, 2)}
    make = lambda: ParameterSet({n: rng.normal(size=s) for n, s in shapes.items()})
    return make(), make()


class TestLerp:
    def test_midpoint_hand_value(self):
        a = ParameterSet({"w": [2.0, 6.0]})
        b = ParameterSet({"w": [6.0, 10.0]})
        np.testing.assert_array_equal(lerp_pair(a, b, 0.5)["w"], [4.0, 8.0])

    def test_endpoints_bit_exact(self):
        rng = np.random.default_rng(10)
        a, b = random_pair(rng)
        assert lerp_pair(a, b, 0.0).same_tensors(a)
        assert lerp_pair(a, b, 1.0).same_tensors(b)

    def test_endpoint_preserves_negative_zero(self):
        a = ParameterSet({"w": [-0.0]})
        b = ParameterSet({"w": [1.0]})
        out = lerp_pair(a, b, 0.0)
        assert np.signbit(out["w"][0])

    def test_dyadic_symmetry_exact(self):
        # alpha and 1 - alpha both exactly representable: the two orderings of
        # the weighted sum must agree to the bit
        rng = np.random.default_rng(11)
        a, b = random_pair(rng)
        for alpha in (0.25, 0.5, 0.75):
            fwd = lerp_pair(a, b, alpha)
            rev = lerp_pair(b, a, 1.0 - alpha)
            assert fwd.same_tensors(rev)

    def test_random_alpha_symmetry_close(self):
        rng = np.random.default_rng(12)
        a, b = random_pair(rng)
        for _ in range(20):
            alpha = float(rng.uniform(-0.5, 1.5))
            fwd, rev = lerp_pair(a, b, alpha), lerp_pair(b, a, 1.0 - alpha)
            for n in fwd.names():
                np.testing.assert_allclose(fwd[n], rev[n], rtol=0, atol=1e-6)

    def test_extrapolation(self):
        a = ParameterSet({"w": [0.0]})
        b = ParameterSet({"w": [1.0]})
        assert lerp_pair(a, b, 1.5)["w"][0] == pytest.approx(1.5)
        assert lerp_pair(a, b, -0.5)["w"][0] == pytest.approx(-0.5)

    def test_subset_takes_rest_from_first(self):
        a = ParameterSet({"encoder.w": [0.0], "head.w": [0.0]})
        b = ParameterSet({"encoder.w": [1.0], "head.w": [1.0]})
        out = lerp_pair(a, b, 0.5, ENCODER)
        assert out["encoder.w"][0] == 0.5
        assert out["head.w"][0] == 0.0
        assert out["head.w"].tobytes() == a["head.w"].tobytes()

    def test_meta_records_coefficient(self):
        a = ParameterSet({"w": [0.0]})
        b = ParameterSet({"w": [1.0]})
        out = lerp_pair(a, b, 0.3)
        assert out.meta["alpha"] == repr(0.3)
        assert out.meta["subset"] == "all"

    def test_incompatible_rejected(self):
        a = ParameterSet({"w": np.ones(2)})
        b = ParameterSet({"w": np.ones(3)})
        with pytest.raises(ShapeMismatchError):
            lerp_pair(a, b, 0.5)

    def test_nonfinite_alpha_rejected(self):
        a = ParameterSet({"w": [0.0]})
        for bad in (float("nan"), float("inf")):
            with pytest.raises(ValueError):
                lerp_pair(a, a, bad)

    def test_f64_accumulation_beats_f32(self):
        # catastrophic cancellation case: f32 arithmetic on these endpoints
        # loses the small difference entirely
        a = ParameterSet({"w": [1.0]})
        b = ParameterSet({"w": [1.0 + 2 ** -20]})
        mid = lerp_pair(a, b, 0.5)["w"][0]
        assert mid == np.float32(1.0 + 2 ** -21)


class TestDelta:
    def test_plain_difference(self):
        a = ParameterSet({"w": [3.0, 5.0]})
        ref = ParameterSet({"w": [1.0, 1.0]})
        np.testing.assert_array_equal(compute_delta(a, ref)["w"], [2.0, 4.0])

    def test_unselected_tensors_zeroed(self):
        a = ParameterSet({"encoder.w": [3.0], "head.w": [7.0]})
        ref = ParameterSet({"encoder.w": [1.0], "head.w": [1.0]})
        d = compute_delta(a, ref, ENCODER)
        assert d["encoder.w"][0] == 2.0
        assert d["head.w"][0] == 0.0

    def test_normalize_unit_length(self):
        a = ParameterSet({"w": [3.0, 4.0]})
        ref = ParameterSet({"w": [0.0, 0.0]})
        d = compute_delta(a, ref, normalize=True)
        np.testing.assert_allclose(d["w"], [0.6, 0.8], atol=1e-7)

    def test_normalize_zero_delta_degenerate(self):
        a = ParameterSet({"w": [1.0]})
        with pytest.raises(DegenerateDirectionError):
            compute_delta(a, a, normalize=True)

    def test_zero_delta_without_normalize_ok(self):
        a = ParameterSet({"w": [1.0]})
        assert compute_delta(a, a)["w"][0] == 0.0


class TestPlane:
    def test_hand_value(self):
        ref = ParameterSet({"w": [1.0]})
        d1 = interp.Delta({"w": np.array([1.0], dtype=np.float32)})
        d2 = interp.Delta({"w": np.array([-1.0], dtype=np.float32)})
        assert plane_point(ref, d1, d2, 1.0, 0.5)["w"][0] == 1.5

    def test_origin_bit_exact(self):
        rng = np.random.default_rng(13)
        ref, other = random_pair(rng)
        d = compute_delta(other, ref)
        out = plane_point(ref, d, d, 0.0, 0.0)
        assert out.same_tensors(ref)

    def test_origin_preserves_negative_zero(self):
        ref = ParameterSet({"w": [-0.0]})
        d = interp.Delta({"w": np.array([1.0], dtype=np.float32)})
        assert np.signbit(plane_point(ref, d, d, 0.0, 0.0)["w"][0])

    def test_axis_matches_lerp(self):
        # moving along one axis of the plane is the same path as lerp
        rng = np.random.default_rng(14)
        ref, src = random_pair(rng)
        d_src = compute_delta(src, ref)
        d_zero = compute_delta(ref, ref)
        for alpha in rng.uniform(-0.5, 1.5, size=10):
            on_plane = plane_point(ref, d_src, d_zero, float(alpha), 0.0)
            on_line = lerp_pair(ref, src, float(alpha))
            for n in on_plane.names():
                np.testing.assert_allclose(on_plane[n], on_line[n], rtol=0, atol=1e-6)

    def test_corner_recovers_endpoint(self):
        rng = np.random.default_rng(15)
        ref, src = random_pair(rng)
        d_src = compute_delta(src, ref)
        d_tgt = compute_delta(ref, ref)
        corner = plane_point(ref, d_src, d_tgt, 1.0, 0.0)
        for n in corner.names():
            np.testing.assert_allclose(corner[n], src[n], rtol=0, atol=1e-6)

    def test_meta_coordinates(self):
        ref = ParameterSet({"w": [0.0]})
        d = interp.Delta({"w": np.array([1.0], dtype=np.float32)})
        out = plane_point(ref, d, d, 0.25, 0.75)
        assert out.meta["alpha1"] == repr(0.25)
        assert out.meta["alpha2"] == repr(0.75)

    def test_nonfinite_coefficient_rejected(self):
        ref = ParameterSet({"w": [0.0]})
        d = interp.Delta({"w": np.array([1.0], dtype=np.float32)})
        with pytest.raises(ValueError):
            plane_point(ref, d, d, float("nan"), 0.0)


class TestDiagnostics:
    @staticmethod
    def deltas(a, b, ref):
        return compute_delta(a, ref), compute_delta(b, ref)

    def test_right_angle_hand_values(self):
        ref = ParameterSet({"w": [0.0, 0.0]})
        a = ParameterSet({"w": [1.0, 0.0]})
        b = ParameterSet({"w": [1.0, 1.0]})
        d = direction_diagnostics(*self.deltas(a, b, ref))
        assert d.angle_deg == pytest.approx(45.0, abs=1e-9)
        assert d.norm_ratio == pytest.approx(0.7071067811865475, rel=1e-12)
        assert d.norm_a == pytest.approx(1.0)
        assert d.norm_b == pytest.approx(np.sqrt(2.0), rel=1e-7)

    def test_parallel_zero_angle(self):
        ref = ParameterSet({"w": [0.0]})
        a = ParameterSet({"w": [2.0]})
        d = compute_delta(a, ref)
        assert direction_diagnostics(d, d).angle_deg == pytest.approx(0.0, abs=1e-6)

    def test_opposite_is_180(self):
        ref = ParameterSet({"w": [0.0]})
        a = ParameterSet({"w": [1.0]})
        b = ParameterSet({"w": [-1.0]})
        d = direction_diagnostics(*self.deltas(a, b, ref))
        assert d.angle_deg == pytest.approx(180.0, abs=1e-6)

    def test_scale_invariance_of_angle(self):
        rng = np.random.default_rng(16)
        ref, a = random_pair(rng)
        b, _ = random_pair(rng)
        d_a, d_b = self.deltas(a, b, ref)
        base = direction_diagnostics(d_a, d_b)
        d_scaled = interp.Delta({n: 3.0 * d_a[n].astype(np.float64) for n in d_a.names()})
        scaled = direction_diagnostics(d_scaled, d_b)
        assert scaled.angle_deg == pytest.approx(base.angle_deg, abs=1e-3)
        assert scaled.norm_ratio == pytest.approx(3.0 * base.norm_ratio, rel=1e-3)

    def test_subset_restriction(self):
        ref = ParameterSet({"encoder.w": [0.0], "head.w": [0.0]})
        a = ParameterSet({"encoder.w": [1.0], "head.w": [5.0]})
        b = ParameterSet({"encoder.w": [1.0], "head.w": [-5.0]})
        d = direction_diagnostics(*self.deltas(a, b, ref), ENCODER)
        assert d.angle_deg == pytest.approx(0.0, abs=1e-6)

    def test_degenerate_arm_rejected(self):
        ref = ParameterSet({"w": [0.0]})
        a = ParameterSet({"w": [1.0]})
        with pytest.raises(DegenerateDirectionError):
            direction_diagnostics(*self.deltas(ref, a, ref))

    def test_empty_selection_rejected(self):
        ref = ParameterSet({"encoder.w": [0.0]})
        a = ParameterSet({"encoder.w": [1.0]})
        d = compute_delta(a, ref)
        with pytest.raises(DegenerateDirectionError):
            direction_diagnostics(d, d, HEAD)


class TestAnalogy:
    def test_hand_values(self):
        a = ParameterSet({"encoder.w": [1.0], "head.w": [100.0]})
        b = ParameterSet({"encoder.w": [4.0], "head.w": [200.0]})
        c = ParameterSet({"encoder.w": [6.0], "head.w": [300.0]})
        out = model_analogy(c, b, a)
        assert out["encoder.w"][0] == 9.0  # 6 + (4 - 1)
        assert out["head.w"][0] == 300.0

    def test_head_bit_identity(self):
        rng = np.random.default_rng(17)
        a, b = random_pair(rng)
        c, _ = random_pair(rng)
        out = model_analogy(c, b, a)
        assert out["head.w"].tobytes() == c["head.w"].tobytes()

    def test_b_equals_a_returns_c_exactly(self):
        rng = np.random.default_rng(18)
        a, c = random_pair(rng)
        out = model_analogy(c, a, a)
        assert out.same_tensors(c)
        assert out.meta == c.meta

    def test_c_equals_a_recovers_b_encoder(self):
        # c + (b - c) == b holds exactly in f64 when inputs are f32
        rng = np.random.default_rng(19)
        a, b = random_pair(rng)
        out = model_analogy(a, b, a)
        for n in (n for n in out.names() if n.startswith("encoder.")):
            assert out[n].tobytes() == b[n].tobytes()

    def test_shape_mismatch_rejected(self):
        a = ParameterSet({"encoder.w": np.ones(2)})
        b = ParameterSet({"encoder.w": np.ones(3)})
        with pytest.raises(ShapeMismatchError):
            model_analogy(a, b, a)

    def test_close_arithmetic(self):
        rng = np.random.default_rng(20)
        a, b = random_pair(rng)
        c, _ = random_pair(rng)
        out = model_analogy(c, b, a)
        for n in (n for n in out.names() if n.startswith("encoder.")):
            want = c[n].astype(np.float64) + b[n].astype(np.float64) - a[n].astype(np.float64)
            np.testing.assert_allclose(out[n], want, rtol=0, atol=1e-6)
