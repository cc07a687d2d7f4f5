import numpy as np
import pytest

from mvflow.coefficients import (
    constant_diffusion,
    conv_drift,
    feedback_drift,
    isotropic_diffusion,
    make_preset,
    moment_drift,
    preset_conv_ou,
    singular_drift_1d,
    validate_coefficients,
)
from mvflow.measures import EmpiricalMeasure
from mvflow.sde_solver import CoefficientConstants, CoefficientSet

from oracles import singular_drift_cubed_integral


def ou_kernel(t, x, y):
    return -(x - y)


class TestConvDrift:
    def test_single_atom_reduces_to_kernel(self):
        drift = conv_drift(ou_kernel, bound=np.inf, lip=1.0)
        gamma = EmpiricalMeasure.dirac(0.7)
        x = np.array([[0.0], [1.0], [-2.0]])
        np.testing.assert_allclose(drift(0.0, x, gamma), -(x - 0.7))

    def test_constant_kernel(self):
        drift = conv_drift(lambda t, x, y: np.broadcast_arrays(
            np.full_like(x, 3.0), y)[0], bound=3.0, lip=0.0)
        for gamma in (EmpiricalMeasure.dirac(0.0),
                      EmpiricalMeasure(np.random.default_rng(0).normal(size=9))):
            out = drift(0.0, np.array([[1.0]]), gamma)
            np.testing.assert_allclose(out, [[3.0]])

    def test_hand_average(self):
        # gamma uniform on {0, 2}, kernel -(x - y), x = 1: average is 0
        drift = conv_drift(ou_kernel, bound=np.inf, lip=1.0)
        gamma = EmpiricalMeasure([0.0, 2.0])
        np.testing.assert_allclose(drift(0.0, np.array([[1.0]]), gamma), [[0.0]])

    def test_weighted_average(self):
        drift = conv_drift(ou_kernel, bound=np.inf, lip=1.0)
        gamma = EmpiricalMeasure([0.0, 2.0], [0.75, 0.25])
        np.testing.assert_allclose(drift(0.0, np.array([[0.0]]), gamma), [[0.5]])

    def test_k3_certificate(self):
        drift = conv_drift(ou_kernel, bound=2.0, lip=1.0)
        assert drift.k3_certificate == 4.0

    def test_nonfinite_kernel_raises(self):
        drift = conv_drift(lambda t, x, y: (x - y) / 0.0, bound=1.0, lip=1.0)
        with pytest.raises(ValueError, match="kernel"):
            with np.errstate(divide="ignore", invalid="ignore"):
                drift(0.0, np.array([[1.0]]), EmpiricalMeasure.dirac(1.0))


class TestMomentDrift:
    def test_constant_functional_is_measure_independent(self):
        drift = moment_drift(lambda t, x, r: r * np.ones_like(x),
                             lambda pts: np.ones(len(pts)))
        x = np.array([[0.3]])
        a = drift(0.0, x, EmpiricalMeasure.dirac(5.0))
        b = drift(0.0, x, EmpiricalMeasure(np.random.default_rng(1).normal(size=20)))
        np.testing.assert_array_equal(a, b)

    def test_identity_reduction_to_mean_reversion(self):
        drift = moment_drift(lambda t, x, r: -(x - r), lambda pts: pts[:, 0])
        gamma = EmpiricalMeasure.dirac(1.5)
        np.testing.assert_allclose(drift(0.0, np.array([[2.0]]), gamma), [[-0.5]])

    def test_second_moment_functional(self):
        # gamma uniform on {1, 3}, phi = x^2: r = 5
        captured = {}

        def outer(t, x, r):
            captured["r"] = r
            return np.zeros_like(x)

        drift = moment_drift(outer, lambda pts: pts[:, 0] ** 2)
        drift(0.0, np.array([[0.0]]), EmpiricalMeasure([1.0, 3.0]))
        assert captured["r"] == pytest.approx(5.0)


class TestFeedbackDrift:
    def test_zero_correction_reduces_to_base(self):
        base = lambda t, x, g: -np.asarray(x, float)
        drift = feedback_drift(base, lambda t, x, r, s: np.zeros(1),
                               EmpiricalMeasure.dirac(0.0), theta=1.0)
        x = np.array([[1.0], [2.0]])
        np.testing.assert_allclose(drift(0.0, x, EmpiricalMeasure.dirac(3.0)), -x)

    def test_reference_equals_argument(self):
        calls = {}

        def h(t, x, r, s):
            calls["args"] = (r, s)
            return np.ones(1)

        ref = EmpiricalMeasure([0.0, 1.0, 2.0])
        drift = feedback_drift(None, h, ref, theta=1.0)
        out = drift(0.0, np.array([[0.0]]), ref)
        assert calls["args"] == (0.0, 0.0)
        np.testing.assert_allclose(out, [[1.0]])

    def test_dirac_distances_enter_h(self):
        calls = {}

        def h(t, x, r, s):
            calls["args"] = (r, s)
            return np.zeros(1)

        drift = feedback_drift(None, h, EmpiricalMeasure.dirac(0.0), theta=1.0)
        drift(0.0, np.array([[0.0]]), EmpiricalMeasure.dirac(1.0))
        assert calls["args"] == (1.0, 1.0)


class TestSingularDrift:
    def test_point_values(self):
        coeffs = singular_drift_1d()
        x = np.array([[0.0], [1.0], [-1.0], [2.0], [0.0625]])
        out = coeffs.drift(0.0, x, EmpiricalMeasure.dirac(0.0))
        np.testing.assert_allclose(out[:4], [[0.0], [1.0], [-1.0], [0.0]])
        assert out[4, 0] == pytest.approx(0.0625 ** (-0.25))

    def test_cubed_integral_matches_quadrature(self):
        # the L^{3/2} norm (cubed) of |drift|^2 over the support
        assert singular_drift_cubed_integral() == pytest.approx(8.0, rel=1e-9)
        from scipy.integrate import quad

        coeffs = singular_drift_1d()
        gamma = EmpiricalMeasure.dirac(0.0)

        def integrand(x):
            return abs(coeffs.drift(0.0, np.array([[x]]), gamma)[0, 0]) ** 3

        val, _ = quad(integrand, -1.0, 1.0, points=[0.0])
        assert val == pytest.approx(8.0, rel=1e-6)

    def test_metadata_in_k_class(self):
        coeffs = singular_drift_1d()
        meta = coeffs.integrability_meta
        assert (meta.p, meta.q) == (1.5, 4.0)
        assert meta.in_k_class(dim=1)
        assert 1.0 / meta.p + 2.0 / meta.q == pytest.approx(7.0 / 6.0)


class TestPresets:
    def test_registry_names(self):
        for name in ("conv_ou", "moment", "feedback", "singular1d"):
            assert make_preset(name).dim_state >= 1

    def test_unknown_name(self):
        with pytest.raises(ValueError, match="unknown coefficient preset"):
            make_preset("nope")

    def test_unknown_parameter(self):
        with pytest.raises(ValueError, match="bad parameters"):
            make_preset("conv_ou", wibble=3)

    def test_conv_ou_constants(self):
        cs = make_preset("conv_ou", coupling="tanh", bound=0.5, rate=1.0, sigma=2.0)
        assert cs.constants.k3 == 1.0
        assert cs.constants.k1 == 4.0
        assert not np.isfinite(make_preset("conv_ou").constants.k3)

    def test_conv_ou_drift_is_mean_reversion(self):
        cs = preset_conv_ou(rate=2.0)
        gamma = EmpiricalMeasure([0.0, 4.0])
        np.testing.assert_allclose(
            cs.drift(0.0, np.array([[1.0]]), gamma), [[2.0]])

    def test_feedback_preset_pulls_toward_origin_plus_push(self):
        cs = make_preset("feedback", gain=1.0, rate=1.0)
        gamma = EmpiricalMeasure.dirac(1.0)  # W=1, TV=1 against delta_0
        out = cs.drift(0.0, np.array([[2.0]]), gamma)
        np.testing.assert_allclose(out, [[-2.0 + 2.0]])

    def test_moment_preset_square(self):
        cs = make_preset("moment", phi="square")
        assert cs.constants.theta == 2.0


class TestValidateCoefficients:
    def test_identity_diffusion_passes_with_zero_margin(self):
        cs = make_preset("conv_ou", coupling="tanh")
        report = validate_coefficients(cs, probes=50, seed=0)
        assert report.ellipticity_ok
        assert report.ellipticity_min == pytest.approx(1.0)
        assert report.ellipticity_max == pytest.approx(1.0)

    def test_conv_bound_respects_k3(self):
        kernel = lambda t, x, y: np.tanh(y - x)  # bounded by 1
        drift = conv_drift(kernel, bound=1.0, lip=1.0)
        cs = CoefficientSet(drift=drift, diffusion=isotropic_diffusion(1.0, 1),
                            dim_state=1, dim_noise=1,
                            constants=CoefficientConstants(k3=2.0))
        report = validate_coefficients(cs, probes=100, seed=1)
        assert report.k3_ok
        assert report.tv_ratio_max <= 2.0

    def test_growth_certificate(self):
        from mvflow.sde_solver import IntegrabilityMeta

        cs = CoefficientSet(
            drift=lambda t, x, g: -np.asarray(x, float),
            diffusion=constant_diffusion([[1.0]]),
            dim_state=1, dim_noise=1,
            integrability_meta=IntegrabilityMeta(p=2.0, q=2.0, growth=lambda r: 1.0),
        )
        report = validate_coefficients(cs, probes=50, seed=2)
        assert report.growth_ok
        assert report.growth_margin <= 0.0

    def test_detects_ellipticity_violation(self):
        cs = CoefficientSet(
            drift=lambda t, x, g: np.zeros_like(np.asarray(x, float)),
            diffusion=constant_diffusion([[3.0]]),  # sigma^2 = 9 > declared K1
            dim_state=1, dim_noise=1,
            constants=CoefficientConstants(k1=1.0),
        )
        report = validate_coefficients(cs, probes=10, seed=3)
        assert not report.ellipticity_ok
        assert not report.all_ok
        assert report.failures

    def test_deterministic(self):
        cs = make_preset("conv_ou", coupling="tanh")
        a = validate_coefficients(cs, probes=30, seed=11)
        b = validate_coefficients(cs, probes=30, seed=11)
        assert a.to_dict() == b.to_dict()
