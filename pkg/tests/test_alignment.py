"""
観測集合の組み立て（staleness window）のテスト
"""
import os
import sys
import unittest

import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.data.alignment import Aligner, align
from src.errors import InvalidInputError
from src.estimation.sensors import Measurement, SensorKind


def meas(sensor: SensorKind, t: float, mean: float = 10.0) -> Measurement:
    return Measurement(sensor=sensor, mean=mean, variance=0.25, timestamp=t)


@pytest.mark.unit
class TestAligner(unittest.TestCase):
    """Alignerのテストケース"""

    def test_latest_per_sensor_in_sensor_order(self):
        aligner = Aligner(window=1.0)
        aligner.push(meas(SensorKind.ENCODER1, 0.0, 1.0))
        aligner.push(meas(SensorKind.RADAR2, 0.1))
        aligner.push(meas(SensorKind.ENCODER1, 0.2, 2.0))
        aligned = aligner.push(meas(SensorKind.RADAR1, 0.3))
        self.assertEqual(aligned.sensors, [SensorKind.RADAR1, SensorKind.RADAR2, SensorKind.ENCODER1])
        self.assertEqual(aligned.measurements[aligned.index_of(SensorKind.ENCODER1)].mean, 2.0)
        self.assertEqual(aligned.timestamp, 0.3)
        self.assertEqual(len(aligned), 3)

    def test_window_boundary_inclusive(self):
        aligner = Aligner(window=1.0)
        aligner.push(meas(SensorKind.RADAR1, 0.0))
        self.assertEqual(len(aligner.push(meas(SensorKind.RADAR2, 1.0))), 2)
        self.assertEqual(aligner.push(meas(SensorKind.RADAR2, 1.1)).sensors, [SensorKind.RADAR2])

    def test_stale_sensor_warning_and_recovery(self):
        aligner = Aligner(window=0.5)
        aligner.push(meas(SensorKind.RADAR1, 0.0))
        aligner.push(meas(SensorKind.ENCODER1, 0.0))
        with self.assertLogs("src.data.alignment", level="WARNING") as logs:
            aligner.push(meas(SensorKind.ENCODER1, 2.0))
        self.assertIn("radar1", logs.output[0])
        self.assertEqual(aligner.stale_sensors, {SensorKind.RADAR1})

        with self.assertLogs("src.data.alignment", level="INFO"):
            aligned = aligner.push(meas(SensorKind.RADAR1, 2.1))
        self.assertEqual(aligned.sensors, [SensorKind.RADAR1, SensorKind.ENCODER1])
        self.assertEqual(aligner.stale_sensors, set())

    def test_out_of_order_rejected(self):
        aligner = Aligner()
        aligner.push(meas(SensorKind.RADAR1, 1.0))
        with self.assertRaises(InvalidInputError):
            aligner.push(meas(SensorKind.RADAR2, 0.5))

    def test_invalid_window(self):
        with self.assertRaises(InvalidInputError):
            Aligner(window=0.0)

    def test_index_of_missing_sensor(self):
        aligned = Aligner().push(meas(SensorKind.RADAR1, 0.0))
        with self.assertRaises(KeyError):
            aligned.index_of(SensorKind.GPS)

    def test_align_one_set_per_measurement(self):
        stream = [meas(SensorKind.RADAR1, 0.1 * k) for k in range(5)] + [meas(SensorKind.RADAR2, 0.5)]
        sets = align(stream, window=1.0)
        self.assertEqual(len(sets), 6)
        self.assertEqual(sets[-1].sensors, [SensorKind.RADAR1, SensorKind.RADAR2])


if __name__ == "__main__":
    unittest.main()
