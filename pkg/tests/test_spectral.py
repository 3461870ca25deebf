import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tlsqsr import analytic
from tlsqsr.ensemble import (
    EnsembleConfig,
    WindowError,
    asymptotic_average,
    heat_capacity_fluct,
    run_ensemble,
)
from tlsqsr.model import SystemParams
from tlsqsr.spectral import (
    FourierCoefficients,
    SpectralConfig,
    _driven_cfgs,
    autocorrelation_asy,
    classify_temperature_response,
    comb_matches,
    driven_ensemble,
    energy_harmonics,
    expected_regime,
    find_peaks,
    fourier_coefficients,
    fourier_errors,
    heat_capacity_scan,
    power_amplitudes,
    qsr_scan_omega,
    qsr_scan_temperature,
    window_slice,
)
from tlsqsr.stochastic import IntegratorConfig, NoiseConfig

P = SystemParams(epsilon=1.2, delta=1.0, gamma=0.1, temperature=1.0)
W = 1.3
PERIOD = 2 * math.pi / W


def _grid(n_periods=12, per=64):
    h = PERIOD / per
    t = np.arange(n_periods * per + 1) * h
    return t, (0.0, n_periods * PERIOD)


def _fc(p_pos, omega=W, eps1=0.5):
    p_pos = np.asarray(p_pos, dtype=complex)
    p = np.concatenate([np.conj(p_pos[:0:-1]), p_pos])
    return FourierCoefficients(len(p_pos) - 1, p, omega, eps1, (0.0, 1.0), 10)


class TestCoefficients:
    def test_dc(self):
        t, w = _grid()
        fc = fourier_coefficients((t, np.full_like(t, 0.3)), W, w, epsilon1=0.5)
        assert fc[0] == pytest.approx(0.3, abs=1e-14)
        assert all(abs(fc[m]) < 1e-14 for m in range(1, 5))
        assert fc.n_periods == 12

    def test_single_harmonic(self):
        t, w = _grid()
        fc = fourier_coefficients((t, 0.4 * np.cos(W * t)), W, w, epsilon1=0.5)
        assert fc[1] == pytest.approx(0.2, abs=1e-13)
        assert fc[-1] == pytest.approx(0.2, abs=1e-13)
        assert abs(fc[0]) < 1e-14 and abs(fc[2]) < 1e-13
        assert fc.residual_power == pytest.approx(0.0, abs=1e-14)

    def test_sign_convention(self):
        # z = sum P_m exp(-i m w t): sin(w t) has P_1 = i/2
        t, w = _grid()
        fc = fourier_coefficients((t, np.sin(W * t)), W, w, epsilon1=0.5)
        assert fc[1] == pytest.approx(0.5j, abs=1e-13)

    def test_non_integer_window_rejected(self):
        t, _ = _grid()
        with pytest.raises(WindowError):
            fourier_coefficients((t, np.cos(W * t)), W, (0.0, 11.5 * PERIOD), epsilon1=0.5)

    def test_too_few_periods_rejected(self):
        t, _ = _grid()
        with pytest.raises(WindowError):
            fourier_coefficients((t, np.cos(W * t)), W, (0.0, 8 * PERIOD), epsilon1=0.5)

    def test_undriven_has_only_dc(self):
        t = np.linspace(0, 10, 101)
        fc = fourier_coefficients((t, 0.1 + np.cos(3 * t)), 0.77, (0.0, 10.0), epsilon1=0.0)
        assert np.all(fc.p[np.arange(len(fc.p)) != fc.m_max] == 0)
        assert fc[0] == pytest.approx(np.mean(0.1 + np.cos(3 * t[1:])))

    def test_window_slice_half_open(self):
        t = np.arange(11) * 0.1
        sl = window_slice(t, (0.2, 0.5))
        assert list(np.round(t[sl], 12)) == [0.3, 0.4, 0.5]

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            _fc([0.1, 0.2])[3]

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.floats(-1, 1), min_size=9, max_size=9),
        st.integers(10, 30),
        st.floats(0.0, 0.3),
        st.integers(0, 2**32 - 1),
    )
    def test_hermitian_and_parseval(self, amps, n_periods, noise, seed):
        t, w = _grid(n_periods, per=32)
        rng = np.random.default_rng(seed)
        x = amps[0] + sum(
            amps[2 * k - 1] * np.cos(k * W * t) + amps[2 * k] * np.sin(k * W * t) for k in range(1, 5)
        ) + noise * rng.standard_normal(len(t))
        fc = fourier_coefficients((t, x), W, w, m_max=4, epsilon1=0.5)
        assert fc.hermitian_defect() < 1e-6
        assert fc.parseval_defect() < 1e-6
        assert fc.residual_power >= -1e-12
        tau0 = autocorrelation_asy(fc, 0.0)[0]
        assert tau0 == pytest.approx(fc.line_power, rel=1e-12, abs=1e-15)

    def test_block_errors_shrink_with_noise(self):
        t, w = _grid(40, per=32)
        rng = np.random.default_rng(1)
        x = 0.3 * np.cos(W * t)
        fc0 = fourier_coefficients((t, x), W, w, epsilon1=0.5)
        assert np.allclose(fourier_errors((t, x), fc0, 10), 0, atol=1e-14)
        xn = x + 0.1 * rng.standard_normal(len(t))
        fcn = fourier_coefficients((t, xn), W, w, epsilon1=0.5)
        se = fourier_errors((t, xn), fcn, 10)
        assert np.all(se > 0) and abs(abs(fcn[1]) - 0.15) < 5 * se[fcn.m_max + 1]


class TestAutocorrelation:
    def test_single_harmonic(self):
        fc = _fc([0.0, 0.35])
        tau = np.linspace(0, 10, 41)
        assert np.allclose(autocorrelation_asy(fc, tau), 2 * 0.35**2 * np.cos(W * tau), atol=1e-15)

    def test_zero_lag_and_periodicity(self):
        fc = _fc([0.2, 0.1 - 0.05j, 0.03j, 0.01])
        assert autocorrelation_asy(fc, 0.0)[0] == pytest.approx(fc.line_power)
        tau = np.linspace(0, 7, 29)
        assert np.allclose(autocorrelation_asy(fc, tau + PERIOD), autocorrelation_asy(fc, tau), atol=1e-14)

    def test_rejects_complex_result(self):
        p = np.array([0.1, 0.0, 0.3], dtype=complex)  # |P_-1| != |P_1|
        fc = FourierCoefficients(1, p, W, 0.5, (0.0, 1.0), 10)
        with pytest.raises(ArithmeticError):
            autocorrelation_asy(fc, 0.4)


class TestPowerAmplitudes:
    def test_quarter_pi(self):
        eps1 = 0.05
        ps = power_amplitudes(_fc([0.0, eps1 / 4], eps1=eps1))
        assert ps.eta_at(1) == pytest.approx(math.pi / 4, rel=1e-14)
        assert ps.eta_at(0) == 0.0
        assert np.allclose(ps.nu, ps.m * W)

    def test_quadratic_scaling(self):
        a = power_amplitudes(_fc([0.1, 0.07j, 0.02]))
        b = power_amplitudes(_fc([0.2, 0.14j, 0.04]))
        assert np.allclose(b.eta, 4 * a.eta, rtol=1e-14)
        assert np.all(a.eta >= 0)

    def test_undriven_rejected(self):
        with pytest.raises(ValueError):
            power_amplitudes(_fc([0.1, 0.0], eps1=0.0))


class TestEnergyHarmonics:
    def test_undriven_dc(self):
        beta = 1.0
        d = P.big_delta
        p0 = -(P.epsilon / d) * math.tanh(beta * d)
        eh = energy_harmonics(_fc([p0, 0.0], eps1=0.0), P)
        assert eh.u[eh.m == 0][0].real == pytest.approx(d * math.tanh(beta * d), rel=1e-14)
        assert np.all(eh.u[eh.m != 0] == 0) and eh.cv is None

    def test_central_difference(self):
        base = _fc([0.3, 0.1])
        lo, hi = _fc([0.2, 0.05]), _fc([0.4, 0.15])
        eh = energy_harmonics(base, P, lo, hi)
        k = -(P.big_delta**2) / P.epsilon
        assert eh.cv[base.m_max] == pytest.approx(k * 0.2 / (2 * 0.05))
        eh2 = energy_harmonics(base, P, lo, hi, d_temperature=0.1)
        assert eh2.cv[base.m_max] == pytest.approx(eh.cv[base.m_max] / 2)

    def test_unbiased_rejected(self):
        with pytest.raises(ValueError):
            energy_harmonics(_fc([0.1]), P.with_(epsilon=0.0))

    def test_matches_schottky_on_reference_curve(self):
        # feeding the analytic P_0(T) reproduces the analytic C_v
        T, dT = 1.0, 0.05
        p0 = lambda temp: analytic.thermal_averages(1 / temp, P).z_avg  # noqa: E731
        eh = energy_harmonics(_fc([p0(T)], eps1=0.0), P, _fc([p0(T - dT)], eps1=0.0), _fc([p0(T + dT)], eps1=0.0))
        cv = -eh.cv[0].real  # sign: U_0 and <z> carry opposite signs here
        assert abs(cv) == pytest.approx(analytic.schottky_cv(1 / T, P), rel=5e-3)


class TestPeaks:
    def test_detects_two_peaks(self):
        x = np.linspace(0.3, 2.6, 47)
        y = 0.05 + 2.0 * np.exp(-((x - 1.5) / 0.08) ** 2) + 0.6 * np.exp(-((x - 0.75) / 0.06) ** 2)
        pk = find_peaks(x, y)
        assert [round(p["x"], 2) for p in pk] == [1.5, 0.75]
        m = comb_matches(pk, P)
        assert m[0]["Delta_n"] == 1 and m[1]["Delta_n"] == 2
        assert m[0]["eps_offset"] == pytest.approx(0.3)

    def test_flat_or_short(self):
        assert find_peaks([0, 1, 2, 3], [1, 1, 1, 1]) == []
        assert find_peaks([0, 1], [0, 1]) == []

    def test_gaps_are_skipped(self):
        y = np.array([0, 0, 0, 5, np.nan, 0, 0, 0, 0])
        assert find_peaks(np.arange(9), y) == []

    def test_classification(self):
        T = np.linspace(0.2, 3, 8)
        assert classify_temperature_response(T, np.exp(-T))["shape"] == "monotone_decreasing"
        bump = np.exp(-((T - 1.2) / 0.5) ** 2)
        r = classify_temperature_response(T, bump)
        assert r["shape"] == "max" and r["t_max"] == pytest.approx(T[np.argmax(bump)])
        dip = 1.0 - 0.8 * np.exp(-((T - 0.6) / 0.3) ** 2) + np.exp(-((T - 2.0) / 0.4) ** 2)
        r = classify_temperature_response(T, dip)
        assert r["shape"] == "min_then_max" and r["t_min_before_max"] < r["t_max"]
        # rises hidden inside the error bars count as flat
        wiggle = np.exp(-T) + 0.01 * (-1) ** np.arange(8)
        assert classify_temperature_response(T, wiggle, np.full(8, 0.05))["monotone_decreasing"]
        assert classify_temperature_response(T[:2], [np.nan, 1.0])["shape"] == "undetermined"

    def test_expected_regime(self):
        assert expected_regime(P.with_(epsilon1=2.4)) == "monotone_decay"
        assert expected_regime(P.with_(epsilon1=0.05)) == "linear_response"
        assert expected_regime(P.with_(epsilon1=0.5)) == "min_then_max"


class TestDrivenRuns:
    ICFG = IntegratorConfig()
    SCFG = SpectralConfig(t_relax=20.0, n_periods=10, undriven_window=30.0)

    def test_window_is_whole_periods(self):
        p = P.with_(epsilon1=0.5, omega=1.3)
        icfg, ecfg = _driven_cfgs(p, self.ICFG, EnsembleConfig(), self.SCFG)
        t0, t1 = ecfg.window
        assert (t1 - t0) / p.period == pytest.approx(10, abs=1e-9)
        assert t1 == pytest.approx(icfg.t_final)
        assert t0 >= 20.0

    def test_driven_run(self):
        p = P.with_(epsilon1=0.5, omega=1.3)
        run = driven_ensemble(p, NoiseConfig(master_seed=3), self.ICFG, EnsembleConfig(n_traj=40), self.SCFG)
        assert run.fc.n_periods == 10
        assert run.fc.hermitian_defect() < 1e-12 and run.fc.parseval_defect() < 1e-12
        assert run.eta1 == pytest.approx(4 * math.pi * abs(run.fc[1]) ** 2 / 0.25)
        assert run.se_eta1 > 0 and math.isfinite(run.cv)

    def test_undriven_scan_reproduces_equilibrium(self):
        p = P.with_(epsilon1=0.0)
        nc, ec = NoiseConfig(master_seed=6), EnsembleConfig(n_traj=30)
        res = qsr_scan_temperature(p, [0.8, 1.2], nc, self.ICFG, ec, self.SCFG)
        assert np.all(np.isnan(res["eta1"]))
        for i, T in enumerate((0.8, 1.2)):
            pt = p.with_(temperature=T)
            icfg, ecfg = _driven_cfgs(pt, self.ICFG, ec, self.SCFG)
            ms = run_ensemble(pt, nc.with_context(i), icfg, ecfg)
            assert res["z0"][i] == asymptotic_average(ms).z
            assert res["cv_fluct"][i] == heat_capacity_fluct(ms, None, T).value

    def test_undriven_heat_capacity_is_flat(self):
        p = P.with_(epsilon1=0.0)
        nc, ec = NoiseConfig(master_seed=2), EnsembleConfig(n_traj=20)
        res = heat_capacity_scan(p, [0.5, 1.0, 1.5], [1.0], nc, self.ICFG, ec, self.SCFG)
        cv = res["cv_fluct_h0"]
        assert np.all(cv == cv[0])
        ms = driven_ensemble(p, nc.with_context(1000, 0), self.ICFG, ec, self.SCFG)
        assert cv[0] == ms.cv_h0
        assert list(res["T"]) == [1.0, 1.0, 1.0]

    def test_omega_scan_report(self):
        p = P.with_(epsilon1=0.5)
        res = qsr_scan_omega(p, [1.0, 1.5], NoiseConfig(), self.ICFG, EnsembleConfig(n_traj=10), self.SCFG)
        assert list(res.x) == [1.0, 1.5]
        assert np.all(res["hermitian_defect"] < 1e-6) and np.all(res["parseval_defect"] < 1e-6)
        assert res.report["temperature"] == 1.0 and isinstance(res.report["peaks"], list)

    def test_failed_point_is_gap(self):
        p = P.with_(epsilon1=0.5)
        icfg = IntegratorConfig(stability_threshold=2.0)
        res = qsr_scan_omega(p, [1.0], NoiseConfig(), icfg, EnsembleConfig(n_traj=10), self.SCFG)
        assert np.isnan(res["eta1"][0]) and len(res.meta["failures"]) == 1
