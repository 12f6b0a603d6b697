"""
Tests for units, parameters, validation and the parameter-file format.
"""

import math
import os
import tempfile
import unittest
from dataclasses import replace

from src.qdm.core import (
    CONSTANTS,
    DeviceParams,
    ParameterError,
    ParameterFileError,
    SweepSpec,
    apply_overrides,
    area_cm2,
    dephasing_rate,
    energy_from_period,
    format_params,
    load_params,
    molecules_in_area,
    parse_params,
    period_from_energy,
    tau_decay_default,
    validate,
)


class TestConstants(unittest.TestCase):
    """Unit system sanity"""

    def test_h_is_two_pi_hbar(self):
        self.assertAlmostEqual(CONSTANTS.h, 2 * math.pi * CONSTANTS.hbar, places=8)

    def test_one_mev_period(self):
        """1 meV corresponds to a 4.1357 ps period"""
        self.assertAlmostEqual(period_from_energy(1.0), 4.135667696, places=9)
        self.assertAlmostEqual(energy_from_period(4.135667696), 1.0, places=12)

    def test_period_requires_positive_energy(self):
        with self.assertRaises(ParameterError):
            period_from_energy(0.0)
        with self.assertRaises(ParameterError):
            energy_from_period(-1.0)


class TestValidation(unittest.TestCase):
    """Report-style validation of DeviceParams"""

    def test_defaults_are_valid(self):
        self.assertEqual(validate(DeviceParams()), [])

    def test_default_decay_rates_sum(self):
        """gamma_s + gamma_as fixes the 1e6 ps decay time"""
        params = DeviceParams()
        self.assertAlmostEqual(params.gamma_s + params.gamma_as, 2e-6, places=15)
        self.assertLess(params.gamma_s, params.gamma_as)
        self.assertAlmostEqual(tau_decay_default(params), 1.0e6, delta=1e-6)

    def test_zero_splitting_reported(self):
        report = validate(replace(DeviceParams(), delta_e=0.0))
        self.assertEqual(len(report), 1)
        self.assertIn("delta_e > 0", report[0])

    def test_slow_as_decay_reported(self):
        report = validate(replace(DeviceParams(), gamma_s=2e-6, gamma_as=1e-6))
        self.assertEqual(len(report), 1)
        self.assertIn("gamma_as >= gamma_s", report[0])

    def test_every_violation_listed(self):
        params = replace(DeviceParams(), delta_e=-1.0, eta_inject=1.5, tau_step=0.0, k_max=0)
        report = validate(params)
        self.assertGreaterEqual(len(report), 4)

    def test_zero_injection_allowed(self):
        self.assertEqual(validate(replace(DeviceParams(), eta_inject=0.0)), [])

    def test_sweep_must_end_before_repetition(self):
        params = replace(DeviceParams(), t_rep=400.0)
        report = validate(params, SweepSpec(0.0, 450.0, 1.0))
        self.assertTrue(any("t_rep > max sweep dt" in item for item in report))

    def test_integrator_step_limit(self):
        report = validate(replace(DeviceParams(), dt_integrator=0.5))
        self.assertTrue(any("dt_integrator" in item for item in report))


class TestSweepSpec(unittest.TestCase):

    def test_grid_is_inclusive(self):
        spec = SweepSpec(0.0, 450.0, 1.0)
        grid = spec.grid()
        self.assertEqual(spec.n_points, 451)
        self.assertEqual(grid[0], 0.0)
        self.assertEqual(grid[-1], 450.0)

    def test_non_integral_steps_rejected(self):
        with self.assertRaises(ParameterError):
            SweepSpec(0.0, 10.0, 3.0)

    def test_reversed_bounds_rejected(self):
        with self.assertRaises(ParameterError):
            SweepSpec(10.0, 0.0, 1.0)


class TestDephasingRate(unittest.TestCase):
    """gamma_phi(T) = gamma_phi0 (k_B T / delta_e)^p"""

    def setUp(self):
        self.params = DeviceParams()

    def test_zero_temperature(self):
        self.assertEqual(dephasing_rate(self.params, 0.0), 0.0)

    def test_four_kelvin(self):
        expected = 0.01 * (0.0861733 * 4.0 / 1.0) ** 2
        self.assertAlmostEqual(dephasing_rate(self.params, 4.0), expected, places=15)
        self.assertAlmostEqual(dephasing_rate(self.params, 4.0), 1.188e-3, places=5)

    def test_washout_temperature_is_strong(self):
        """At 88 K coherence is gone within a few ps"""
        self.assertGreater(dephasing_rate(self.params, 88.0), 0.5)

    def test_monotone_in_temperature(self):
        rates = [dephasing_rate(self.params, t) for t in (0.0, 1.0, 4.0, 20.0, 88.0, 300.0)]
        self.assertEqual(rates, sorted(rates))

    def test_negative_temperature_rejected(self):
        with self.assertRaises(ParameterError):
            dephasing_rate(self.params, -1.0)


class TestUnits(unittest.TestCase):

    def test_area_conversion(self):
        """50 x 50 um^2 = 2.5e-5 cm^2"""
        self.assertAlmostEqual(area_cm2(2500.0), 2.5e-5, places=18)

    def test_molecule_count(self):
        self.assertAlmostEqual(molecules_in_area(DeviceParams()), 1.25e6, places=3)

    def test_default_decay_time(self):
        """Mean of the default S and AS rates is 1e-6 /ps"""
        self.assertAlmostEqual(tau_decay_default(DeviceParams()), 1.0e6, delta=1e-3)


class TestParameterFiles(unittest.TestCase):
    """key = value parameter format"""

    def test_parse_overrides_defaults(self):
        params = parse_params("delta_e = 1.2\n# comment\ntemperature = 88  # inline\n")
        self.assertEqual(params.delta_e, 1.2)
        self.assertEqual(params.temperature, 88.0)
        self.assertEqual(params.t_rep, DeviceParams().t_rep)

    def test_typed_fields(self):
        params = parse_params("k_max = 2\nsuppress_channel_2_oscillation = yes\ng_factor = 2\n")
        self.assertIsInstance(params.k_max, int)
        self.assertEqual(params.k_max, 2)
        self.assertTrue(params.suppress_channel_2_oscillation)
        self.assertEqual(params.g_factor, 2.0)

    def test_unknown_key_reports_line(self):
        with self.assertRaises(ParameterFileError) as ctx:
            parse_params("delta_e = 1.0\nflux_capacitor = 3\n")
        self.assertEqual(ctx.exception.line, 2)
        self.assertIn("line 2", str(ctx.exception))

    def test_bad_value_reports_line(self):
        with self.assertRaises(ParameterFileError) as ctx:
            parse_params("\n\ndelta_e = one\n")
        self.assertEqual(ctx.exception.line, 3)

    def test_missing_equals(self):
        with self.assertRaises(ParameterFileError):
            parse_params("delta_e 1.0\n")

    def test_duplicate_key(self):
        with self.assertRaises(ParameterFileError):
            parse_params("delta_e = 1.0\ndelta_e = 2.0\n")

    def test_non_integer_count(self):
        with self.assertRaises(ParameterFileError):
            parse_params("k_max = 2.5\n")

    def test_format_reparses_equal(self):
        params = replace(DeviceParams(), delta_e=1.2345678901234567, g_factor=-0.44,
                         suppress_channel_2_oscillation=True)
        self.assertEqual(parse_params(format_params(params)), params)

    def test_comment_header_mode(self):
        """CSV provenance headers are read and foreign comments skipped"""
        text = "# delta_e = 1.5\n# produced by sweep\n# note: x = y\ndelta_t_ps,i_sub_pA\n0,0\n"
        params = parse_params(text, skip_foreign_comments=True)
        self.assertEqual(params.delta_e, 1.5)

    def test_load_params_from_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "device.params")
            with open(path, "w", encoding="utf-8") as f:
                f.write("eta_inject = 0.5\n")
            self.assertEqual(load_params(path).eta_inject, 0.5)

    def test_load_missing_file(self):
        with self.assertRaises(ParameterFileError):
            load_params("/nonexistent/device.params")

    def test_scenario_files_parse(self):
        from src.config import config
        names = [n for n in os.listdir(config.SCENARIOS_DIR) if n.endswith(".params")]
        self.assertTrue(names)
        for name in names:
            params = load_params(os.path.join(config.SCENARIOS_DIR, name))
            self.assertEqual(validate(params), [], name)

    def test_apply_overrides(self):
        params = apply_overrides(DeviceParams(), {"delta_e": "1.1", "k_max": 2})
        self.assertEqual(params.delta_e, 1.1)
        self.assertEqual(params.k_max, 2)
        with self.assertRaises(ParameterFileError):
            apply_overrides(DeviceParams(), {"nope": 1.0})


if __name__ == '__main__':
    unittest.main()
