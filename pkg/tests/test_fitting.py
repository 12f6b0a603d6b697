"""
Tests for damped-cosine and device-parameter fits.
"""

import math
import unittest
from dataclasses import replace

import numpy as np

from src.qdm.core import DeviceParams, ParameterError, SweepSpec
from src.qdm.fitting import (
    DampedCosineModel,
    damped_cosine,
    fit_damped_cosine,
    fit_device_params,
    numeric_jacobian,
    parse_bounds,
    spectral_delta_e,
)
from src.qdm.protocol import PulseTrace, sweep

TRUE_MODEL = DampedCosineModel(amplitude=0.05, period=4.136, phase=0.3, t2=200.0, baseline=0.0)


def synthetic_series(model=TRUE_MODEL, n=200, noise=0.0, seed=0):
    t = np.arange(n, dtype=float)
    y = damped_cosine(t, model)
    if noise:
        y = y + np.random.default_rng(seed).normal(scale=noise, size=n)
    return y


class TestDampedCosineFit(unittest.TestCase):

    def test_noiseless_recovery(self):
        result = fit_damped_cosine(synthetic_series(), 1.0)
        self.assertTrue(result.converged)
        model = result.model
        self.assertAlmostEqual(model.amplitude / 0.05, 1.0, delta=1e-4)
        self.assertAlmostEqual(model.period / 4.136, 1.0, delta=1e-4)
        self.assertAlmostEqual(model.phase / 0.3, 1.0, delta=1e-4)
        self.assertAlmostEqual(model.t2 / 200.0, 1.0, delta=1e-4)
        self.assertLess(abs(model.baseline), 1e-8)
        self.assertLess(result.residual_rms, 1e-8)

    def test_noisy_recovery(self):
        """sigma = 0.1 A over 20 seeded trials"""
        for seed in range(20):
            result = fit_damped_cosine(synthetic_series(noise=0.005, seed=seed), 1.0)
            self.assertAlmostEqual(result.model.period, 4.136, delta=0.02 * 4.136)
            self.assertAlmostEqual(result.model.t2, 200.0, delta=0.15 * 200.0)

    def test_zero_series(self):
        result = fit_damped_cosine(np.zeros(50), 1.0)
        self.assertTrue(result.converged)
        self.assertLess(result.model.amplitude, 1e-12)

    def test_flat_series(self):
        result = fit_damped_cosine(np.full(40, 3.0), 1.0)
        self.assertTrue(result.converged)
        self.assertLess(result.model.amplitude, 1e-9)
        self.assertAlmostEqual(result.model.baseline, 3.0, places=9)

    def test_scale_invariance(self):
        """Scaling the data by 1000 scales the amplitude and leaves the rest to 1e-9"""
        base = fit_damped_cosine(synthetic_series(noise=0.002, seed=4), 1.0)
        scaled = fit_damped_cosine(1000.0 * synthetic_series(noise=0.002, seed=4), 1.0)
        self.assertAlmostEqual(scaled.model.amplitude / 1000.0, base.model.amplitude, delta=1e-9 * base.model.amplitude)
        self.assertAlmostEqual(scaled.model.period, base.model.period, delta=1e-9 * base.model.period)
        self.assertAlmostEqual(scaled.model.t2, base.model.t2, delta=1e-9 * base.model.t2)
        self.assertAlmostEqual(scaled.model.phase, base.model.phase, delta=1e-9)

    def test_deterministic(self):
        y = synthetic_series(noise=0.005, seed=8)
        self.assertEqual(fit_damped_cosine(y, 1.0), fit_damped_cosine(y, 1.0))

    def test_explicit_init(self):
        init = DampedCosineModel(amplitude=0.04, period=4.1, phase=0.0, t2=150.0)
        result = fit_damped_cosine(synthetic_series(), 1.0, init=init)
        self.assertAlmostEqual(result.model.period, 4.136, places=5)

    def test_amplitude_is_non_negative(self):
        """A sign-flipped start ends with a positive amplitude and shifted phase"""
        model = replace(TRUE_MODEL, phase=0.3 + math.pi)
        result = fit_damped_cosine(synthetic_series(model), 1.0)
        self.assertGreaterEqual(result.model.amplitude, 0.0)
        self.assertLessEqual(abs(result.model.phase), math.pi)

    def test_covariance_shape(self):
        result = fit_damped_cosine(synthetic_series(noise=0.005, seed=2), 1.0)
        self.assertEqual(len(result.covariance_diag), 5)
        self.assertTrue(all(v >= 0 for v in result.covariance_diag))

    def test_too_short(self):
        with self.assertRaises(Exception):
            fit_damped_cosine(np.zeros(10), 1.0)

    def test_invalid_model(self):
        with self.assertRaises(ParameterError):
            DampedCosineModel(amplitude=1.0, period=0.0, phase=0.0, t2=1.0)


class TestNumericJacobian(unittest.TestCase):

    def test_against_finer_differences(self):
        t = np.arange(60.0)
        rng = np.random.default_rng(12)

        def fun(theta):
            amplitude, log_period, phase, log_t2, baseline = theta
            return baseline + amplitude * np.exp(-t / np.exp(log_t2)) * np.cos(
                2 * np.pi * t / np.exp(log_period) + phase)

        for _ in range(10):
            theta = np.array([rng.uniform(0.01, 1.0), math.log(rng.uniform(3.0, 6.0)),
                              rng.uniform(-3.0, 3.0), math.log(rng.uniform(20.0, 300.0)),
                              rng.uniform(-1.0, 1.0)])
            coarse = numeric_jacobian(fun, theta, rel_step=1e-5)
            fine = numeric_jacobian(fun, theta, rel_step=5e-6)
            scale = np.max(np.abs(fine))
            self.assertLess(np.max(np.abs(coarse - fine)) / scale, 1e-5)

    def test_linear_function_exact(self):
        A = np.array([[1.0, 2.0], [3.0, -4.0], [0.5, 0.0]])
        J = numeric_jacobian(lambda x: A @ x, [0.3, -0.7])
        np.testing.assert_allclose(J, A, atol=1e-9)


class TestDeviceFit(unittest.TestCase):
    """Simulator-in-the-loop recovery on single-channel traces"""

    @classmethod
    def setUpClass(cls):
        cls.truth = replace(DeviceParams(), delta_e=1.2)
        cls.trace = sweep(cls.truth, SweepSpec(20.0, 80.0, 1.0))

    def test_recovers_splitting(self):
        init = replace(self.truth, delta_e=0.8)
        fitted, rms = fit_device_params(self.trace, ["delta_e"], {"delta_e": (0.5, 2.0)}, init)
        self.assertAlmostEqual(fitted.delta_e, 1.2, delta=0.012)
        self.assertLess(rms, 1e-3)

    def test_spectral_seed(self):
        self.assertAlmostEqual(spectral_delta_e(self.trace), 1.2, delta=0.05)

    def test_empty_free_set(self):
        init = replace(self.truth, delta_e=0.9)
        fitted, rms = fit_device_params(self.trace, [], {}, init)
        self.assertEqual(fitted, init)
        self.assertGreater(rms, 0.0)
        _, zero = fit_device_params(self.trace, [], {}, self.truth)
        self.assertEqual(zero, 0.0)

    def test_noisy_recovery(self):
        """5% noise: delta_e within 2%, gamma_as within 20%"""
        dt, current = self.trace.arrays()
        oscillation = current - np.polyval(np.polyfit(dt, current, 2), dt)
        rng = np.random.default_rng(42)
        noisy = current + rng.normal(scale=0.05 * np.std(oscillation), size=len(current))
        trace = PulseTrace(self.trace.dt_ps, tuple(noisy), self.truth)
        init = replace(self.truth, delta_e=1.0, gamma_as=1.0e-6)
        fitted, _ = fit_device_params(
            trace, ["delta_e", "gamma_as"],
            {"delta_e": (0.5, 2.0), "gamma_as": (6.5e-7, 5.0e-6)}, init)
        self.assertAlmostEqual(fitted.delta_e, 1.2, delta=0.02 * 1.2)
        self.assertAlmostEqual(fitted.gamma_as, self.truth.gamma_as, delta=0.2 * self.truth.gamma_as)

    def test_unknown_free_name(self):
        with self.assertRaises(ParameterError):
            fit_device_params(self.trace, ["t_rep"], {}, self.truth)

    def test_init_outside_bounds(self):
        with self.assertRaises(ParameterError):
            fit_device_params(self.trace, ["delta_e"], {"delta_e": (1.5, 2.0)}, self.truth)

    def test_parse_bounds(self):
        self.assertEqual(parse_bounds(["delta_e=0.5:2"]), {"delta_e": (0.5, 2.0)})
        with self.assertRaises(ParameterError):
            parse_bounds(["delta_e=0.5"])


if __name__ == '__main__':
    unittest.main()
