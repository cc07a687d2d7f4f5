import numpy as np
import pytest
from scipy.stats import linregress

from mvflow.measures import EmpiricalMeasure, MeasureFlow, moment
from mvflow.sde_solver import (
    CoefficientConstants,
    CoefficientSet,
    InitialSampler,
    SimulationError,
    TimeGrid,
    ensemble_flow,
    euler_maruyama,
    sample_initial,
    save_ensemble,
)
from mvflow.coefficients import constant_diffusion


def make_coeffs(drift, diffusion, d=1, m=1, **constants):
    return CoefficientSet(drift=drift, diffusion=diffusion, dim_state=d,
                          dim_noise=m, constants=CoefficientConstants(**constants))


def zero_drift(t, x, gamma):
    return np.zeros_like(np.asarray(x, dtype=float))


def dirac_flow(grid, d=1):
    return MeasureFlow.constant(grid.times, EmpiricalMeasure.dirac(np.zeros(d)))


class TestTimeGrid:
    def test_times(self):
        grid = TimeGrid(1.0, 4)
        np.testing.assert_allclose(grid.times, [0.0, 0.25, 0.5, 0.75, 1.0])
        assert grid.h == 0.25

    def test_validation(self):
        with pytest.raises(ValueError):
            TimeGrid(-1.0, 4)
        with pytest.raises(ValueError):
            TimeGrid(1.0, 0)


class TestCoefficientTypes:
    def test_constants_floor(self):
        with pytest.raises(ValueError, match="k3"):
            CoefficientConstants(k3=0.5)

    def test_mixture_weights_must_sum(self):
        with pytest.raises(ValueError, match="sum to 1"):
            InitialSampler.mixture([(0.5, InitialSampler.dirac(0.0)),
                                    (0.6, InitialSampler.dirac(1.0))])

    def test_covariance_must_be_psd(self):
        with pytest.raises(ValueError, match="semidefinite"):
            InitialSampler.gaussian([0.0, 0.0], np.array([[1.0, 2.0], [2.0, 1.0]]))
        with pytest.raises(ValueError, match="symmetric"):
            InitialSampler.gaussian([0.0, 0.0], np.array([[1.0, 0.5], [0.1, 1.0]]))


class TestEulerMaruyama:
    def test_zero_coefficients_freeze_paths(self):
        grid = TimeGrid(1.0, 16)
        coeffs = make_coeffs(zero_drift, constant_diffusion([[0.0]]))
        ens = euler_maruyama(coeffs, dirac_flow(grid),
                             InitialSampler.gaussian(0.0, 1.0), grid, 64, 5)
        assert np.all(ens.paths == ens.paths[:, :1, :])

    def test_constant_drift_integrates_exactly(self):
        # h = 1/64 is a dyadic step, so 64 additions of h reach T exactly
        grid = TimeGrid(1.0, 64)
        coeffs = make_coeffs(lambda t, x, g: np.ones_like(np.asarray(x, float)),
                             constant_diffusion([[0.0]]))
        ens = euler_maruyama(coeffs, dirac_flow(grid), InitialSampler.dirac(0.0),
                             grid, 8, 5)
        assert np.all(ens.paths[:, -1, 0] == 1.0)

    def test_brownian_variance(self):
        grid = TimeGrid(1.0, 32)
        coeffs = make_coeffs(zero_drift, constant_diffusion([[1.0]]))
        n = 100_000
        ens = euler_maruyama(coeffs, dirac_flow(grid), InitialSampler.dirac(0.0),
                             grid, n, 17)
        var = ens.paths[:, -1, 0].var(ddof=1)
        se = 1.0 * np.sqrt(2.0 / (n - 1))
        assert abs(var - 1.0) <= 3.0 * se

    def test_bitwise_reproducible_and_block_invariant(self):
        grid = TimeGrid(0.5, 20)
        coeffs = make_coeffs(lambda t, x, g: -np.asarray(x, float),
                             constant_diffusion([[1.0]]))
        init = InitialSampler.gaussian(0.0, 1.0)
        runs = [
            euler_maruyama(coeffs, dirac_flow(grid), init, grid, 333, 9, path_block=333),
            euler_maruyama(coeffs, dirac_flow(grid), init, grid, 333, 9, path_block=10),
            euler_maruyama(coeffs, dirac_flow(grid), init, grid, 333, 9,
                           path_block=50, n_threads=4),
        ]
        for other in runs[1:]:
            assert np.array_equal(runs[0].paths, other.paths)

    def test_thread_env_var_does_not_change_results(self, monkeypatch):
        grid = TimeGrid(0.5, 10)
        coeffs = make_coeffs(zero_drift, constant_diffusion([[1.0]]))
        init = InitialSampler.dirac(0.0)
        base = euler_maruyama(coeffs, dirac_flow(grid), init, grid, 100, 3)
        monkeypatch.setenv("MVFLOW_THREADS", "3")
        threaded = euler_maruyama(coeffs, dirac_flow(grid), init, grid, 100, 3,
                                  path_block=16)
        assert np.array_equal(base.paths, threaded.paths)

    def test_different_seeds_differ(self):
        grid = TimeGrid(0.5, 10)
        coeffs = make_coeffs(zero_drift, constant_diffusion([[1.0]]))
        a = euler_maruyama(coeffs, dirac_flow(grid), InitialSampler.dirac(0.0),
                           grid, 50, 1)
        b = euler_maruyama(coeffs, dirac_flow(grid), InitialSampler.dirac(0.0),
                           grid, 50, 2)
        assert not np.array_equal(a.paths, b.paths)

    def test_measure_independent_drift_ignores_flow(self):
        grid = TimeGrid(1.0, 25)
        coeffs = make_coeffs(lambda t, x, g: -np.asarray(x, float),
                             constant_diffusion([[1.0]]))
        init = InitialSampler.gaussian(0.0, 1.0)
        flow_a = dirac_flow(grid)
        flow_b = MeasureFlow.constant(grid.times, EmpiricalMeasure.dirac(100.0))
        a = euler_maruyama(coeffs, flow_a, init, grid, 200, 21)
        b = euler_maruyama(coeffs, flow_b, init, grid, 200, 21)
        assert np.array_equal(a.paths, b.paths)

    def test_nonfinite_drift_reports_location(self):
        grid = TimeGrid(1.0, 10)

        def bad_drift(t, x, gamma):
            out = np.zeros_like(np.asarray(x, float))
            if t > 0.45:
                out[:] = np.nan
            return out

        coeffs = make_coeffs(bad_drift, constant_diffusion([[0.0]]))
        with pytest.raises(SimulationError, match=r"drift at t=0\.5.*path=0"):
            euler_maruyama(coeffs, dirac_flow(grid), InitialSampler.dirac(0.0),
                           grid, 4, 0)

    def test_overflowing_state_reports_location(self):
        grid = TimeGrid(1.0, 40)

        def cubic(t, x, g):
            with np.errstate(over="ignore"):
                return np.asarray(x, float) ** 3

        coeffs = make_coeffs(cubic, constant_diffusion([[0.0]]))
        with pytest.raises(SimulationError):
            euler_maruyama(coeffs, dirac_flow(grid), InitialSampler.dirac(30.0),
                           grid, 2, 0)

    def test_strong_error_decreases_with_refinement(self):
        # multiplicative Lipschitz diffusion; coarse runs against a 16x
        # finer reference driven by the same aggregated increments
        gen = np.random.default_rng(2024)
        n_paths, t_end = 4000, 1.0
        finest = 640  # 16x finer than the finest coarse grid below
        master = gen.standard_normal((n_paths, finest, 1)) * np.sqrt(t_end / finest)

        def aggregate(steps):
            factor = finest // steps
            return master.reshape(n_paths, steps, factor, 1).sum(axis=2)

        coeffs = make_coeffs(
            lambda t, x, g: -np.asarray(x, float),
            lambda t, x: (1.0 + 0.25 * np.sin(np.asarray(x, float)))[:, :, None],
        )
        init = InitialSampler.dirac(1.0)
        errors, hs = [], []
        for steps in (10, 20, 40):
            grid_c = TimeGrid(t_end, steps)
            grid_f = TimeGrid(t_end, steps * 16)
            coarse = euler_maruyama(coeffs, dirac_flow(grid_c), init, grid_c,
                                    n_paths, 0, noise=aggregate(steps))
            fine = euler_maruyama(coeffs, dirac_flow(grid_f), init, grid_f,
                                  n_paths, 0, noise=aggregate(steps * 16))
            err = np.abs(coarse.paths[:, -1, 0] - fine.paths[:, -1, 0]).mean()
            errors.append(err)
            hs.append(grid_c.h)
        slope = linregress(np.log(hs), np.log(errors)).slope
        assert slope >= 0.4


class TestEnsembleFlow:
    def test_single_frozen_path_gives_dirac_flow(self):
        grid = TimeGrid(1.0, 8)
        coeffs = make_coeffs(zero_drift, constant_diffusion([[0.0]]))
        ens = euler_maruyama(coeffs, dirac_flow(grid), InitialSampler.dirac(3.0),
                             grid, 1, 0)
        flow = ensemble_flow(ens)
        for m in flow.measures:
            assert m.single_atom() is not None
            assert m.points[0, 0] == 3.0

    def test_static_dynamics_give_constant_flow(self):
        grid = TimeGrid(1.0, 8)
        coeffs = make_coeffs(zero_drift, constant_diffusion([[0.0]]))
        ens = euler_maruyama(coeffs, dirac_flow(grid),
                             InitialSampler.gaussian(0.0, 1.0), grid, 40, 12)
        flow = ensemble_flow(ens)
        for m in flow.measures[1:]:
            assert np.array_equal(m.points, flow.measures[0].points)

    def test_moment_matches_mean_squared_norm(self):
        grid = TimeGrid(1.0, 6)
        coeffs = make_coeffs(zero_drift, constant_diffusion([[1.0]]))
        ens = euler_maruyama(coeffs, dirac_flow(grid),
                             InitialSampler.gaussian(0.0, 1.0), grid, 500, 8)
        flow = ensemble_flow(ens)
        for k in (0, 3, 6):
            direct = float(np.mean(ens.paths[:, k, 0] ** 2))
            assert moment(flow.measures[k], 2.0) == pytest.approx(direct, rel=1e-12)


class TestSampleInitial:
    def test_dirac_copies(self):
        m = sample_initial(InitialSampler.dirac([1.0, -2.0]), 9, 0)
        assert np.all(m.points == np.array([1.0, -2.0]))
        assert m.n == 9 and m.uniform

    def test_gaussian_clt(self):
        n = 100_000
        m = sample_initial(InitialSampler.gaussian(np.zeros(2), np.eye(2)), n, 3)
        assert np.all(np.abs(m.points.mean(axis=0)) <= 3.0 / np.sqrt(n))

    def test_trivial_mixture_equals_dirac(self):
        mix = InitialSampler.mixture([(1.0, InitialSampler.dirac(2.5))])
        m = sample_initial(mix, 11, 5)
        assert np.all(m.points == 2.5)

    def test_empirical_resampling_stays_on_atoms(self):
        base = EmpiricalMeasure([0.0, 1.0, 2.0], [0.2, 0.3, 0.5])
        m = sample_initial(InitialSampler.empirical(base), 500, 7)
        assert set(np.unique(m.points)) <= {0.0, 1.0, 2.0}

    def test_deterministic(self):
        init = InitialSampler.gaussian(0.0, 1.0)
        a = sample_initial(init, 50, 9)
        b = sample_initial(init, 50, 9)
        assert np.array_equal(a.points, b.points)


class TestEnsembleExport:
    def test_csv_layout(self, tmp_path):
        grid = TimeGrid(0.5, 2)
        coeffs = make_coeffs(zero_drift, constant_diffusion([[0.0]]))
        ens = euler_maruyama(coeffs, dirac_flow(grid), InitialSampler.dirac(1.5),
                             grid, 2, 0)
        out = tmp_path / "paths.csv"
        save_ensemble(ens, str(out))
        lines = out.read_text().splitlines()
        assert lines[0] == "path,t,x1"
        assert lines[1] == "0,0.0,1.5"
        assert len(lines) == 1 + 2 * 3
