"""
CSV入出力のテスト
"""
import os
import sys
import tempfile
import unittest

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.data.csv_io import (
    ESTIMATE_COLUMNS,
    read_estimates,
    read_measurements,
    read_truth,
    write_estimates,
    write_measurements,
    write_truth,
)
from src.errors import ParseError
from src.estimation.ekf import StateEstimate
from src.estimation.sensors import Measurement, SensorKind
from src.simulation.scenario import generate_truth

HEADER = "time_s,sensor,velocity_mps,variance_mps2\n"


@pytest.mark.unit
class TestReadMeasurements(unittest.TestCase):
    """read_measurementsのテストケース"""

    def setUp(self):
        self.temp_dir = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.temp_dir.cleanup()

    def _write(self, text: str, name: str = "measurements.csv") -> str:
        path = os.path.join(self.temp_dir.name, name)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        return path

    def test_valid_file(self):
        path = self._write(HEADER + "0.0,radar1,10.5,0.25\n0.0,encoder1,10.7,0.25\n0.1,gps,10.6,0.01\n")
        measurements = read_measurements(path)
        self.assertEqual(len(measurements), 3)
        self.assertEqual(measurements[1].sensor, SensorKind.ENCODER1)
        self.assertEqual(measurements[2].mean, 10.6)
        self.assertEqual(measurements[2].variance, 0.01)

    def test_header_only(self):
        self.assertEqual(read_measurements(self._write(HEADER)), [])

    def test_all_bad_lines_reported(self):
        path = self._write(
            HEADER
            + "0.0,radar1,10.0,0.25\n"
            + "0.1,radar3,10.0,0.25\n"
            + "0.2,radar1,abc,0.25\n"
            + "0.3,radar1,10.0,-1\n"
            + "0.4,radar1,nan,0.25\n"
        )
        with self.assertRaises(ParseError) as ctx:
            read_measurements(path)
        self.assertEqual([line for line, _ in ctx.exception.errors], [3, 4, 5, 6])
        self.assertIn("radar3", str(ctx.exception))

    def test_missing_field(self):
        path = self._write(HEADER + "0.0,radar1,10.0\n")
        with self.assertRaises(ParseError) as ctx:
            read_measurements(path)
        self.assertEqual(ctx.exception.errors[0][0], 2)

    def test_wrong_header(self):
        path = self._write("t,sensor,v,var\n0.0,radar1,10.0,0.25\n")
        with self.assertRaises(ParseError):
            read_measurements(path)

    def test_empty_and_missing_file(self):
        with self.assertRaises(ParseError):
            read_measurements(self._write(""))
        with self.assertRaises(ParseError):
            read_measurements(os.path.join(self.temp_dir.name, "nothing.csv"))

    def test_unsorted_rejected_by_default(self):
        path = self._write(HEADER + "1.0,radar1,10.0,0.25\n0.5,radar2,10.0,0.25\n")
        with self.assertRaises(ParseError) as ctx:
            read_measurements(path)
        self.assertEqual(ctx.exception.errors[0][0], 3)

    def test_unsorted_allowed_is_stable(self):
        path = self._write(
            HEADER + "1.0,radar1,1.0,0.25\n0.5,radar2,2.0,0.25\n1.0,encoder1,3.0,0.25\n0.5,encoder2,4.0,0.25\n"
        )
        measurements = read_measurements(path, allow_unsorted=True)
        self.assertEqual([m.mean for m in measurements], [2.0, 4.0, 1.0, 3.0])


@pytest.mark.unit
class TestWriters(unittest.TestCase):
    """書き出し関数のテストケース"""

    def setUp(self):
        self.temp_dir = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.temp_dir.cleanup()

    def test_measurements_written_with_lf(self):
        path = os.path.join(self.temp_dir.name, "out", "measurements.csv")
        measurements = [
            Measurement(sensor=SensorKind.RADAR1, mean=12.25, variance=0.25, timestamp=0.1),
            Measurement(sensor=SensorKind.GPS, mean=12.5, variance=0.01, timestamp=0.2),
        ]
        write_measurements(path, measurements)
        with open(path, "rb") as f:
            raw = f.read()
        self.assertNotIn(b"\r\n", raw)
        self.assertTrue(raw.startswith(HEADER.encode("utf-8")))
        self.assertEqual(read_measurements(path), measurements)

    def test_truth_file(self):
        path = os.path.join(self.temp_dir.name, "truth.csv")
        truth = generate_truth([(2.0, 0.5)], 10.0, initial_velocity=4.0)
        write_truth(path, truth)
        loaded = read_truth(path)
        self.assertEqual(len(loaded), len(truth))
        for a, b in zip(loaded, truth):
            self.assertAlmostEqual(a.velocity, b.velocity, places=9)
            self.assertAlmostEqual(a.distance, b.distance, places=9)

    def test_estimates_columns_and_scales(self):
        path = os.path.join(self.temp_dir.name, "estimates.csv")
        estimates = [
            StateEstimate(
                mean=[float(k), 20.0, 0.1, 0.97, 1.0],
                covariance=np.diag([1.0, 0.04, 1.0, 0.01, 0.01]),
                timestamp=0.1 * k,
            )
            for k in range(3)
        ]
        scales = [{}, {SensorKind.ENCODER1: 4.5}, {SensorKind.RADAR2: 1.25, SensorKind.ENCODER2: 2.0}]
        write_estimates(path, estimates, scales)
        df = read_estimates(path)
        self.assertEqual(list(df.columns), ESTIMATE_COLUMNS)
        self.assertEqual(len(df), 3)
        self.assertAlmostEqual(df["std_velocity_mps"].iloc[0], 0.2)
        self.assertEqual(df["cal1"].iloc[2], 0.97)
        self.assertEqual(df["scale_encoder1"].tolist(), [1.0, 4.5, 1.0])
        self.assertEqual(df["scale_radar2"].tolist(), [1.0, 1.0, 1.25])

    def test_scales_length_mismatch(self):
        estimate = StateEstimate(mean=[0.0, 1.0, 0.0, 1.0, 1.0], covariance=np.eye(5), timestamp=0.0)
        with self.assertRaises(ValueError):
            write_estimates(os.path.join(self.temp_dir.name, "e.csv"), [estimate], [])

    def assertRelativeClose(self, actual: float, expected: float, tolerance: float = 5e-12):
        self.assertLessEqual(abs(actual - expected), tolerance * abs(expected), (actual, expected))

    def test_measurements_keep_twelve_digits(self):
        path = os.path.join(self.temp_dir.name, "precise.csv")
        measurements = [
            Measurement(sensor=SensorKind.RADAR1, mean=123456.789012345, variance=1e-7, timestamp=1.0 / 3.0),
            Measurement(sensor=SensorKind.ENCODER2, mean=1.0 / 3.0, variance=1.0 / 7.0, timestamp=2.0 / 3.0),
        ]
        write_measurements(path, measurements)
        loaded = read_measurements(path)
        self.assertEqual([m.sensor for m in loaded], [m.sensor for m in measurements])
        for got, want in zip(loaded, measurements):
            self.assertRelativeClose(got.timestamp, want.timestamp)
            self.assertRelativeClose(got.mean, want.mean)
            self.assertRelativeClose(got.variance, want.variance)

    def test_estimates_keep_twelve_digits(self):
        path = os.path.join(self.temp_dir.name, "precise_estimates.csv")
        mean = [123456.789012345, 1.0 / 3.0, 1e-7, 0.95 + 1e-11, 1.0 / 1.03]
        estimate = StateEstimate(
            mean=mean,
            covariance=np.diag([1.0, 2.0, 1.0, 1e-7, 1e-7]),
            timestamp=1.0 / 3.0,
        )
        write_estimates(path, [estimate], [{SensorKind.ENCODER1: 4.0 / 3.0}])
        row = read_estimates(path).iloc[0]
        self.assertRelativeClose(row["time_s"], 1.0 / 3.0)
        for column, want in zip(["distance_m", "velocity_mps", "accel_mps2", "cal1", "cal2"], mean):
            self.assertRelativeClose(row[column], want)
        self.assertRelativeClose(row["std_velocity_mps"], np.sqrt(2.0))
        self.assertRelativeClose(row["scale_encoder1"], 4.0 / 3.0)
        self.assertEqual(row["scale_radar1"], 1.0)


if __name__ == "__main__":
    unittest.main()
