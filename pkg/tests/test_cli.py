"""
Tests for the command-line interface and result files.

Tests cover:
- Each subcommand end to end in a temporary output directory
- Exit codes for parse, validation and numerical failures
- Byte-identical output on repeated runs
"""

import io
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

from src.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, EXIT_VALIDATION, build_parser, main
from src.config import config
from src.qdm.core import ConvergenceError, DeviceParams, SweepSpec
from src.qdm.protocol import sweep
from src.utils import csv_io


class CliTestCase(unittest.TestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.out = Path(self._tmp.name)
        patcher = patch.object(config, "PARAMS_FILE", None)
        patcher.start()
        self.addCleanup(patcher.stop)

    def tearDown(self):
        self._tmp.cleanup()

    def run_cli(self, *argv):
        """Run main() and capture (exit code, stdout, stderr)."""
        with patch("sys.stdout", new_callable=io.StringIO) as out, \
                patch("sys.stderr", new_callable=io.StringIO) as err:
            code = main(["--out", str(self.out), *argv])
        return code, out.getvalue(), err.getvalue()


class TestSweepCommand(CliTestCase):

    def test_no_injection_gives_zero_current(self):
        code, stdout, _ = self.run_cli("sweep", "--dt", "0:10:1", "--set", "eta_inject=0")
        self.assertEqual(code, EXIT_OK)
        trace = csv_io.read_trace(self.out / "sweep.csv")
        self.assertEqual(len(trace.dt_ps), 11)
        self.assertTrue(all(v == 0.0 for v in trace.i_sub_pa))
        self.assertEqual(trace.params_snapshot.eta_inject, 0.0)
        self.assertIn("OK - Saved", stdout)

    def test_deterministic_bytes(self):
        self.run_cli("sweep", "--dt", "90:130:1", "--name", "first")
        self.run_cli("sweep", "--dt", "90:130:1", "--name", "second")
        self.assertEqual((self.out / "first.csv").read_bytes(),
                         (self.out / "second.csv").read_bytes())

    def test_trace_round_trips_through_reader(self):
        self.run_cli("sweep", "--dt", "90:130:1")
        trace = csv_io.read_trace(self.out / "sweep.csv")
        expected = sweep(DeviceParams(), SweepSpec(90.0, 130.0, 1.0))
        self.assertEqual(trace.params_snapshot, expected.params_snapshot)
        for a, b in zip(trace.i_sub_pa, expected.i_sub_pa):
            self.assertAlmostEqual(a, b, places=11)

    def test_optional_outputs(self):
        code, _, _ = self.run_cli("sweep", "--dt", "0:20:1", "--derivative", "--gnuplot",
                                  "--trajectory", "2")
        self.assertEqual(code, EXIT_OK)
        header, _, _ = csv_io.read_rows(self.out / "sweep.csv")
        self.assertEqual(header, csv_io.TRACE_HEADER + ["didt_pA_per_ps"])
        self.assertTrue((self.out / "sweep.gp").exists())
        header, rows, _ = csv_io.read_rows(self.out / "sweep_trajectory.csv")
        self.assertEqual(header, csv_io.TRAJECTORY_HEADER)
        self.assertGreater(len(rows), 1)

    def test_temperature_flag_beats_set(self):
        self.run_cli("sweep", "--dt", "0:10:1", "--set", "temperature=20", "--temperature", "30")
        trace = csv_io.read_trace(self.out / "sweep.csv")
        self.assertEqual(trace.params_snapshot.temperature, 30.0)

    def test_params_file(self):
        params_file = self.out / "device.params"
        params_file.write_text("# test device\ndelta_e = 1.2\nk_max = 1\n")
        self.run_cli("--params", str(params_file), "sweep", "--dt", "0:10:1")
        trace = csv_io.read_trace(self.out / "sweep.csv")
        self.assertEqual(trace.params_snapshot.delta_e, 1.2)
        self.assertEqual(trace.params_snapshot.k_max, 1)


class TestExitCodes(CliTestCase):

    def test_malformed_params_file(self):
        params_file = self.out / "bad.params"
        params_file.write_text("delta_e 1.0\n")
        code, _, stderr = self.run_cli("--params", str(params_file), "sweep", "--dt", "0:10:1")
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn("ERROR", stderr)

    def test_missing_params_file(self):
        code, _, _ = self.run_cli("--params", str(self.out / "missing.params"), "sweep")
        self.assertEqual(code, EXIT_CONFIG)

    def test_unknown_set_key(self):
        code, _, _ = self.run_cli("sweep", "--dt", "0:10:1", "--set", "colour=blue")
        self.assertEqual(code, EXIT_CONFIG)

    def test_bad_argument(self):
        code, _, _ = self.run_cli("sweep", "--dt", "0:10")
        self.assertEqual(code, EXIT_CONFIG)

    def test_validation_failure_lists_violations(self):
        code, _, stderr = self.run_cli("sweep", "--dt", "0:10:1", "--set", "delta_e=-1")
        self.assertEqual(code, EXIT_VALIDATION)
        self.assertIn("delta_e", stderr)
        self.assertFalse((self.out / "sweep.csv").exists())

    def test_pulse_width_past_repetition(self):
        code, _, _ = self.run_cli("sweep", "--dt", "0:20000:1000")
        self.assertEqual(code, EXIT_VALIDATION)

    def test_numerical_failure(self):
        with patch("src.cli.sweep", side_effect=ConvergenceError("no fixed point")):
            code, _, stderr = self.run_cli("sweep", "--dt", "0:10:1")
        self.assertEqual(code, EXIT_NUMERIC)
        self.assertIn("no fixed point", stderr)


class TestAnalysisCommands(CliTestCase):

    def setUp(self):
        super().setUp()
        self.run_cli("sweep", "--dt", "60:200:1")
        self.trace_path = str(self.out / "sweep.csv")

    def test_analyze_window(self):
        code, stdout, _ = self.run_cli("analyze", self.trace_path, "--window", "100:150", "--spectra")
        self.assertEqual(code, EXIT_OK)
        header, rows, _ = csv_io.read_rows(self.out / "sweep_windows.csv")
        self.assertEqual(header, csv_io.ESTIMATE_HEADER)
        self.assertEqual(len(rows), 1)
        cells = dict(zip(header, rows[0][1]))
        self.assertEqual(cells["ok"], "true")
        self.assertAlmostEqual(float(cells["energy_meV"]), 1.0, delta=0.1)
        header, rows, _ = csv_io.read_rows(self.out / "sweep_spectrum_100_150.csv")
        self.assertEqual(header, csv_io.SPECTRUM_HEADER)
        periods = [float(row[0]) for _, row in rows]
        self.assertGreater(len(periods), 0)
        self.assertTrue(all(p > 0 for p in periods))
        self.assertIn("100-150", stdout)

    def test_analyze_bad_window_still_writes(self):
        code, stdout, _ = self.run_cli("analyze", self.trace_path, "--window", "300:400")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("WARNING", stdout)

    def test_fit_cosine(self):
        output = self.out / "cosine.params"
        code, _, _ = self.run_cli("fit", self.trace_path, "--window", "100:150",
                                  "--output", str(output))
        self.assertEqual(code, EXIT_OK)
        text = output.read_text()
        self.assertIn("# converged = true", text)
        value = [line for line in text.splitlines() if line.startswith("delta_e")][0]
        self.assertAlmostEqual(float(value.split("=")[1]), 1.0, delta=0.1)

    def test_fit_default_output_path(self):
        self.run_cli("fit", self.trace_path, "--window", "100:150")
        self.assertTrue((self.out / "sweep_fit.params").exists())


class TestAccountCommand(CliTestCase):

    def test_first_staircase(self):
        code, stdout, _ = self.run_cli("account", "--isub", "1.30", "--dt", "100", "--tau", "1e6")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("1.0400 nA", stdout)
        self.assertIn("0.65 e", stdout)

    def test_tau_from_dc_current(self):
        code, stdout, _ = self.run_cli("account", "--isub", "4.76", "--dt", "300", "--idc", "2e5")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("0.1600 pA", stdout)
        self.assertIn("2.38 e", stdout)

    def test_csv_output(self):
        code, stdout, _ = self.run_cli("account", "--isub", "2.62", "--dt", "200", "--tau", "1e6", "--csv")
        self.assertEqual(code, EXIT_OK)
        lines = stdout.strip().splitlines()
        self.assertEqual(lines[0], "i_sub_pA,dt_ps,tau_ps,i_pulse_nA,electrons,fraction")
        self.assertAlmostEqual(float(lines[1].split(",")[4]), 1.31, delta=0.01)


class TestSpectrumCommand(CliTestCase):

    def test_zero_field(self):
        code, stdout, _ = self.run_cli("spectrum")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("2 maxima", stdout)
        header, rows, _ = csv_io.read_rows(self.out / "didv_B0T.csv")
        self.assertEqual(header, csv_io.DIDV_HEADER)
        self.assertEqual(len(rows), 10001)

    def test_field_without_g_factor(self):
        code, _, _ = self.run_cli("spectrum", "--b-field", "5")
        self.assertEqual(code, EXIT_VALIDATION)

    def test_split_peaks(self):
        code, stdout, _ = self.run_cli("spectrum", "--b-field", "5.2", "--g-factor", "2")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("4 maxima", stdout)


class TestReproduce(CliTestCase):

    def test_full_run_is_deterministic(self):
        first = self.out / "first"
        second = self.out / "second"
        code, _, _ = self.run_cli("--out", str(first), "reproduce-paper", "--set", "g_factor=2")
        self.assertEqual(code, EXIT_OK)
        self.run_cli("--out", str(second), "reproduce-paper", "--set", "g_factor=2")

        names = sorted(p.name for p in first.iterdir())
        self.assertEqual(names, sorted(p.name for p in second.iterdir()))
        for name in names:
            self.assertEqual((first / name).read_bytes(), (second / name).read_bytes(), name)

        self.assertIn("summary.csv", names)
        self.assertIn("didv_B10T.csv", names)
        header, rows, _ = csv_io.read_rows(first / "summary.csv")
        self.assertEqual(header, ["name", "quantity", "value", "unit", "ok"])
        summary = {(cells[0], cells[1]): cells for _, cells in rows}
        self.assertEqual(summary[("window_100_150", "energy")][4], "true")
        self.assertEqual(summary[("washout_window_100_150", "energy")][4], "false")
        self.assertAlmostEqual(float(summary[("staircase_1", "electrons")][2]), 0.65, delta=0.01)
        self.assertEqual(summary[("didv_B0T", "maxima")][2], "2")


class TestHelp(unittest.TestCase):

    def _help(self, *argv):
        with patch("sys.stdout", new_callable=io.StringIO) as out:
            code = main([*argv, "--help"])
        self.assertEqual(code, 0)
        return out.getvalue()

    def test_global_flags(self):
        text = self._help()
        for flag in ("--params", "--out", "--seed", "--verbose"):
            self.assertIn(flag, text)
        for command in ("sweep", "analyze", "fit", "account", "spectrum", "reproduce-paper"):
            self.assertIn(command, text)

    def test_subcommand_flags(self):
        expected = {
            "sweep": ["--dt", "--temperature", "--set", "--derivative", "--workers"],
            "analyze": ["--window", "--threshold", "--spectra"],
            "fit": ["--model", "--free", "--bounds", "--output"],
            "account": ["--isub", "--dt", "--tau", "--idc", "--csv"],
            "spectrum": ["--b-field", "--g-factor", "--width", "--points"],
            "reproduce-paper": ["--temperature", "--gnuplot"],
        }
        for command, flags in expected.items():
            text = self._help(command)
            for flag in flags:
                self.assertIn(flag, text, f"{command} {flag}")

    def test_parser_requires_command(self):
        with patch("sys.stderr", new_callable=io.StringIO):
            self.assertEqual(main([]), EXIT_CONFIG)

    def test_parser_prog(self):
        self.assertEqual(build_parser().prog, "qdm")


if __name__ == '__main__':
    unittest.main()
