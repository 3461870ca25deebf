import math

import numpy as np
import pytest

from tlsqsr import analytic
from tlsqsr.ensemble import (
    EnsembleConfig,
    EnsembleError,
    MomentSeries,
    WindowError,
    align_to_period,
    asymptotic_average,
    default_window,
    heat_capacity_fluct,
    run_ensemble,
    thermo_scan,
    trajectory_observables,
)
from tlsqsr.model import SystemParams
from tlsqsr.stochastic import IntegratorConfig, NoiseConfig, initial_phase, propagate_trajectory

P = SystemParams(epsilon=1.2, delta=1.0, gamma=0.1, temperature=1.0)
SHORT = IntegratorConfig(t_final=40.0)


def _const_series(value=0.25, n=201):
    t = np.linspace(0, 20, n)
    c = np.full(n, value)
    z = np.zeros(n)
    return MomentSeries(t=t, mean_z=c, se_z=z, mean_cos_phi=c, se_cos_phi=z, mean_E=c, se_E=z,
                        var_E=z, mean_H0=c, var_H0=z, mean_sx=z, mean_sy=z,
                        n_valid=np.full(n, 1), n_traj=1, window=(10.0, 20.0))


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(n_traj=0), dict(init="x"), dict(z0=1.5), dict(phi0="gauss"),
                                    dict(window=(5.0, 1.0)), dict(n_blocks=5)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            EnsembleConfig(**kw)

    def test_initial_states(self):
        nc = NoiseConfig(master_seed=3)
        e = EnsembleConfig()
        assert e.initial_state(0, P, nc).z == 0.999
        assert e.initial_state(1, P, nc).z == -0.999
        assert e.initial_state(4, P, nc).phi == initial_phase(nc.for_stream(4))
        eq = EnsembleConfig(init="equilibrium", phi0=0.5).initial_state(0, P, nc)
        assert eq.z == analytic.thermal_averages(1.0, P).z_avg and eq.phi == 0.5

    def test_workers_env(self, monkeypatch):
        monkeypatch.setenv("SIM_THREADS", "3")
        assert EnsembleConfig().workers() == 3
        assert EnsembleConfig(worker_count=2).workers() == 2


class TestWindow:
    def test_default_undriven(self):
        assert default_window(P, IntegratorConfig(t_final=100.0)) == pytest.approx((75.0, 100.0))

    def test_default_driven_whole_periods(self):
        p = P.with_(epsilon1=0.5, omega=1.3)
        icfg = align_to_period(IntegratorConfig(t_final=200.0), p)
        t0, t1 = default_window(p, icfg)
        n = (t1 - t0) / p.period
        assert abs(n - round(n)) < 1e-9
        per_record = p.period / icfg.sample_spacing
        assert abs(per_record - round(per_record)) < 1e-9

    def test_too_short_for_a_period(self):
        with pytest.raises(WindowError):
            default_window(P.with_(epsilon1=0.5, omega=0.1), IntegratorConfig(t_final=50.0))


class TestRunEnsemble:
    def test_singleton_matches_trajectory(self):
        nc = NoiseConfig(master_seed=8)
        ms = run_ensemble(P, nc, SHORT, EnsembleConfig(n_traj=1))
        init = EnsembleConfig().initial_state(0, P, nc)
        tr = propagate_trajectory(init, P, nc.for_stream(0), SHORT)
        obs = trajectory_observables(tr, P, SHORT.z_cap)
        assert np.array_equal(ms.mean_z, tr.z)
        assert np.array_equal(ms.mean_E, obs["E"])
        assert np.all(ms.var_E == 0)

    def test_worker_count_invariance(self):
        nc = NoiseConfig(master_seed=21)
        a = run_ensemble(P, nc, SHORT, EnsembleConfig(n_traj=60, batch_size=7, worker_count=1))
        b = run_ensemble(P, nc, SHORT, EnsembleConfig(n_traj=60, batch_size=7, worker_count=4))
        for k in MomentSeries.CSV_COLUMNS + ("mean_H0", "var_H0"):
            assert getattr(a, k).tobytes() == getattr(b, k).tobytes()

    def test_moment_invariants(self):
        ms = run_ensemble(P, NoiseConfig(), SHORT, EnsembleConfig(n_traj=50))
        assert np.all(ms.mean_E2 >= ms.mean_E**2)
        assert np.all(ms.n_valid <= ms.n_traj)
        assert np.all(ms.bloch_norm2[1:] < 1)
        assert ms.excluded_fraction == 0

    def test_symmetric_unbiased(self):
        p = P.with_(epsilon=0.0)
        icfg = IntegratorConfig(t_final=100.0)
        ms = run_ensemble(p, NoiseConfig(master_seed=2), icfg, EnsembleConfig(n_traj=400))
        aa = asymptotic_average(ms)
        assert abs(aa.z) < 3 * aa.se_z

    def test_se_scaling(self):
        icfg = IntegratorConfig(t_final=10.0)
        se = [run_ensemble(P, NoiseConfig(master_seed=1), icfg, EnsembleConfig(n_traj=n)).se_z[-1]
              for n in (100, 1000)]
        assert se[0] / se[1] == pytest.approx(math.sqrt(10), rel=0.2)

    def test_exclusion_limit(self):
        # noiseless starts near the pole: |dz/dt| ~ 2.2|cos phi0| trips a low threshold
        p = P.with_(temperature=0.0)
        icfg = IntegratorConfig(t_final=10.0, stability_threshold=1.5)
        with pytest.raises(EnsembleError):
            run_ensemble(p, NoiseConfig(), icfg, EnsembleConfig(n_traj=20))
        ms = run_ensemble(p, NoiseConfig(), icfg, EnsembleConfig(n_traj=20, max_excluded_fraction=1.0))
        assert 0 < ms.n_excluded < 20 and ms.n_valid[0] == 20 - ms.n_excluded

    def test_classical_equilibrium(self):
        # The dynamics samples exp(-H0/T) on the phase cylinder (noise prefactor 2).
        icfg = IntegratorConfig(t_final=150.0)
        ms = run_ensemble(P, NoiseConfig(master_seed=5), icfg, EnsembleConfig(n_traj=1500))
        aa = asymptotic_average(ms)
        ref = analytic.classical_z_average(1.0, P)
        assert abs(aa.z - ref) < 4 * aa.se_z
        assert abs(aa.H0 - analytic.classical_energy(1.0, P)) < 4 * aa.se_H0


class TestAverages:
    def test_constant_series(self):
        aa = asymptotic_average(_const_series())
        assert aa.z == pytest.approx(0.25) and aa.se_z == 0.0
        assert aa.E == pytest.approx(0.25) and aa.se_E == 0.0

    def test_window_checks(self):
        ms = _const_series()
        with pytest.raises(WindowError):
            asymptotic_average(ms, window=(19.5, 20.0))
        with pytest.raises(WindowError):
            asymptotic_average(ms, window=(10.0, 30.0))

    def test_heat_capacity(self):
        ms = _const_series()
        ms.var_E = np.full(len(ms), 0.5)
        cv = heat_capacity_fluct(ms, None, 2.0)
        assert cv.value == pytest.approx(0.125) and cv.error == 0
        assert cv.series.shape == ms.t.shape
        with pytest.raises(ValueError):
            heat_capacity_fluct(ms, None, 0.0)


class TestThermoScan:
    def test_single_point(self):
        icfg = IntegratorConfig(t_final=40.0)
        ec = EnsembleConfig(n_traj=30)
        nc = NoiseConfig(master_seed=4)
        res = thermo_scan(P, [1.0], nc, icfg, ec)
        ms = run_ensemble(P, nc.with_context(0), icfg, ec)
        assert res["z_eq"][0] == asymptotic_average(ms).z
        assert res["dev_z"][0] == pytest.approx(abs(abs(res["z_eq"][0]) - abs(res["z_ref"][0])) / abs(res["z_ref"][0]))
        assert res["z_cl"][0] == pytest.approx(analytic.classical_z_average(1.0, P))

    def test_failures_become_gaps(self):
        icfg = IntegratorConfig(t_final=10.0, stability_threshold=5.0)
        res = thermo_scan(P, [0.5, 1.0], NoiseConfig(), icfg, EnsembleConfig(n_traj=10), classical_refs=False)
        assert len(res) == 2 and np.all(np.isnan(res["z_eq"]))
        assert len(res.meta["failures"]) == 2
        assert np.all(np.isfinite(res["z_ref"]))

    def test_warns_outside_classical_regime(self):
        with pytest.warns(UserWarning, match="gamma"):
            thermo_scan(P, [0.05], NoiseConfig(), IntegratorConfig(t_final=10.0),
                        EnsembleConfig(n_traj=2), classical_refs=False)


@pytest.mark.slow
def test_ergodicity():
    icfg = IntegratorConfig(t_final=200.0)
    a = asymptotic_average(run_ensemble(P, NoiseConfig(master_seed=1), icfg, EnsembleConfig(n_traj=600, init="plus")))
    b = asymptotic_average(run_ensemble(P, NoiseConfig(master_seed=2), icfg, EnsembleConfig(n_traj=600, init="minus")))
    assert abs(a.z - b.z) < 3 * math.hypot(a.se_z, b.se_z)
