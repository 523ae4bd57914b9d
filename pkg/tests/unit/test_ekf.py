"""
EKF（時間更新・観測モデル・観測更新・NISゲート）のテスト
"""
import os
import sys
import unittest

import numpy as np
import pytest
from pydantic import ValidationError

sys.path.append(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))

from src.errors import InvalidInputError, NumericalError, SingularModelError
from src.estimation.ekf import (
    NoiseConfig,
    StateEstimate,
    initial_estimate,
    mahalanobis,
    nis_gate,
    observation_model,
    predict,
    transition_matrix,
    update,
)
from src.estimation.sensors import Measurement, SensorKind

NOISE = NoiseConfig()


def state(mean, covariance=None, timestamp: float = 0.0) -> StateEstimate:
    covariance = np.diag([1.0, 25.0, 1.0, 0.01, 0.01]) if covariance is None else covariance
    return StateEstimate(mean=mean, covariance=covariance, timestamp=timestamp)


def reading(sensor: SensorKind, mean: float, variance: float = 0.25, timestamp: float = 0.0) -> Measurement:
    return Measurement(sensor=sensor, mean=mean, variance=variance, timestamp=timestamp)


@pytest.mark.unit
class TestPredict(unittest.TestCase):
    """predictのテストケース"""

    def test_fixed_point(self):
        est = predict(state([0, 0, 0, 1, 1]), 0.7, NOISE)
        np.testing.assert_array_equal(est.mean, [0, 0, 0, 1, 1])

    def test_constant_velocity(self):
        est = predict(state([0, 100, 0, 1, 1]), 1.0, NOISE)
        self.assertAlmostEqual(est.distance, 100.0)
        self.assertAlmostEqual(est.velocity, 100.0)

    def test_constant_acceleration(self):
        est = predict(state([0, 10, 2, 1, 1], timestamp=3.0), 2.0, NOISE)
        self.assertAlmostEqual(est.distance, 24.0)
        self.assertAlmostEqual(est.velocity, 14.0)
        self.assertAlmostEqual(est.acceleration, 2.0)
        self.assertAlmostEqual(est.timestamp, 5.0)

    def test_tiny_dt_adds_q(self):
        prior = state([5, 10, 1, 1, 1])
        est = predict(prior, 1e-12, NOISE)
        np.testing.assert_allclose(est.mean, prior.mean, atol=1e-9)
        np.testing.assert_allclose(est.covariance, prior.covariance + NOISE.q, atol=1e-9)

    def test_transition_matrix(self):
        F = transition_matrix(0.5)
        self.assertEqual(F[0, 1], 0.5)
        self.assertEqual(F[0, 2], 0.125)
        self.assertEqual(F[1, 2], 0.5)
        np.testing.assert_array_equal(F[3:, 3:], np.eye(2))

    def test_invalid_dt(self):
        for dt in (0.0, -1.0, float("nan")):
            with self.assertRaises(InvalidInputError):
                predict(state([0, 0, 0, 1, 1]), dt, NOISE)

    def test_non_finite_state(self):
        with self.assertRaises(NumericalError):
            predict(state([0, float("nan"), 0, 1, 1]), 0.1, NOISE)

    def test_estimate_is_immutable(self):
        est = state([0, 1, 0, 1, 1])
        with self.assertRaises(ValueError):
            est.mean[0] = 5.0


@pytest.mark.unit
class TestObservationModel(unittest.TestCase):
    """observation_modelのテストケース"""

    def test_encoder1(self):
        predicted, H = observation_model([0, 100, 0, 1, 1], SensorKind.ENCODER1)
        self.assertEqual(predicted, 100.0)
        np.testing.assert_array_equal(H, [0, 1, 0, -100, 0])

    def test_encoder1_zero_velocity(self):
        predicted, H = observation_model([0, 0, 0, 2, 1], SensorKind.ENCODER1)
        self.assertEqual(predicted, 0.0)
        np.testing.assert_array_equal(H, [0, 0.5, 0, 0, 0])

    def test_encoder2_uses_index_4(self):
        predicted, H = observation_model([0, 30, 0, 1, 1.5], SensorKind.ENCODER2)
        self.assertAlmostEqual(predicted, 20.0)
        self.assertEqual(H[3], 0.0)
        self.assertAlmostEqual(H[4], -30 / 2.25)

    def test_radar_and_gps(self):
        for sensor in (SensorKind.RADAR1, SensorKind.RADAR2, SensorKind.GPS):
            predicted, H = observation_model([3, 42, 1, 0.9, 1.1], sensor)
            self.assertEqual(predicted, 42.0)
            np.testing.assert_array_equal(H, [0, 1, 0, 0, 0])

    def test_calibration_floor(self):
        with self.assertRaises(SingularModelError):
            observation_model([0, 10, 0, 1e-7, 1], SensorKind.ENCODER1)
        with self.assertRaises(SingularModelError):
            observation_model([0, 10, 0, 1, -0.5], SensorKind.ENCODER2)

    def test_jacobian_matches_finite_differences(self):
        """1000個のランダムな状態で解析ヤコビアンと中心差分が一致"""
        rng = np.random.default_rng(5)
        for _ in range(1000):
            x = np.array(
                [
                    rng.uniform(0, 1e4),
                    rng.uniform(-5, 120),
                    rng.uniform(-2, 2),
                    rng.uniform(0.8, 1.2),
                    rng.uniform(0.8, 1.2),
                ]
            )
            for sensor in (SensorKind.ENCODER1, SensorKind.ENCODER2):
                _, H = observation_model(x, sensor)
                for k in range(5):
                    h = 1e-6 * max(1.0, abs(x[k]))
                    up, down = x.copy(), x.copy()
                    up[k] += h
                    down[k] -= h
                    fd = (observation_model(up, sensor)[0] - observation_model(down, sensor)[0]) / (2 * h)
                    self.assertLessEqual(abs(fd - H[k]), 1e-6 * max(1.0, abs(H[k])))


@pytest.mark.unit
class TestUpdate(unittest.TestCase):
    """update / nis_gate のテストケース"""

    def test_zero_innovation(self):
        prior = state([10, 20, 0.5, 1.0, 1.0])
        post = update(prior, reading(SensorKind.RADAR1, 20.0), NOISE)
        np.testing.assert_allclose(post.mean, prior.mean)
        self.assertTrue(np.all(np.diag(post.covariance) <= np.diag(prior.covariance) + 1e-15))

    def test_zero_innovation_encoder(self):
        prior = state([10, 20, 0.5, 0.8, 1.0])
        post = update(prior, reading(SensorKind.ENCODER1, 25.0), NOISE)
        np.testing.assert_allclose(post.mean, prior.mean, atol=1e-12)

    def test_uninformative_measurement(self):
        prior = state([0, 20, 0, 1, 1])
        post = update(prior, reading(SensorKind.RADAR2, 50.0, variance=1e12), NOISE)
        np.testing.assert_allclose(post.mean, prior.mean, rtol=1e-6)
        np.testing.assert_allclose(post.covariance, prior.covariance, rtol=1e-6, atol=1e-12)

    def test_measurement_noise_floor(self):
        prior = state([0, 20, 0, 1, 1])
        floored = NoiseConfig(measurement_noise={SensorKind.RADAR1: 4.0})
        a = update(prior, reading(SensorKind.RADAR1, 21.0, variance=0.01), floored)
        b = update(prior, reading(SensorKind.RADAR1, 21.0, variance=4.0), NOISE)
        np.testing.assert_allclose(a.mean, b.mean)

    def test_non_positive_innovation_variance(self):
        prior = state([0, 20, 0, 1, 1], covariance=np.diag([1.0, -10.0, 1.0, 0.01, 0.01]))
        with self.assertRaises(NumericalError):
            update(prior, reading(SensorKind.RADAR1, 21.0, variance=1.0), NOISE)

    def test_encoder_bias_calibrates(self):
        """エンコーダ1が真値より5%高い → 較正係数が 20/21 に収束"""
        est = initial_estimate(0.0, velocity=20.0)
        for k in range(1, 601):
            est = predict(est, 0.1, NOISE)
            t = k * 0.1
            est = update(est, reading(SensorKind.RADAR1, 20.0, 0.01, t), NOISE)
            est = update(est, reading(SensorKind.RADAR2, 20.0, 0.01, t), NOISE)
            est = update(est, reading(SensorKind.ENCODER1, 21.0, 0.01, t), NOISE)
            est = update(est, reading(SensorKind.ENCODER2, 20.0, 0.01, t), NOISE)
        self.assertAlmostEqual(est.calibrations[0], 20.0 / 21.0, delta=1e-3)
        self.assertAlmostEqual(est.calibrations[1], 1.0, delta=1e-3)

    def test_calibration_constant_without_encoders(self):
        q = NoiseConfig(process_noise=[0.0, 0.01, 0.1, 0.0, 0.0])
        est = initial_estimate(0.0, velocity=5.0, calibrations=(0.97, 1.02))
        rng = np.random.default_rng(1)
        for k in range(500):
            est = predict(est, 0.1, q)
            est = update(est, reading(SensorKind.RADAR1, 5.0 + rng.normal(0, 0.3)), q)
        self.assertEqual(est.calibrations, (0.97, 1.02))

    def test_covariance_stays_symmetric_psd(self):
        """1万ステップの実行で共分散が対称かつ半正定値"""
        rng = np.random.default_rng(2)
        est = initial_estimate(0.0, velocity=10.0)
        sensors = [SensorKind.RADAR1, SensorKind.RADAR2, SensorKind.ENCODER1, SensorKind.ENCODER2]
        for k in range(10000):
            est = predict(est, 0.1, NOISE)
            v = 10.0 + 5.0 * np.sin(k / 300.0)
            sensor = sensors[k % 4]
            est = update(est, reading(sensor, float(v + rng.normal(0, 0.2)), float(10 ** rng.uniform(-2, 1))), NOISE)
            self.assertTrue(est.is_symmetric())
            self.assertTrue(est.is_positive_semidefinite())

    def test_nis_gate(self):
        prior = state([0, 20, 0, 1, 1])
        self.assertTrue(nis_gate(prior, reading(SensorKind.RADAR1, 20.0), NOISE, 3.0).accepted)

        sigma = np.sqrt(25.0 + 0.25)
        decision = nis_gate(prior, reading(SensorKind.RADAR1, 20.0 + 10 * sigma), NOISE, 3.0)
        self.assertFalse(decision.accepted)
        self.assertAlmostEqual(decision.mahalanobis, 10.0)
        self.assertAlmostEqual(mahalanobis(prior, reading(SensorKind.RADAR1, 20.0 + sigma), NOISE), 1.0)

    def test_nis_gate_invalid_threshold(self):
        with self.assertRaises(InvalidInputError):
            nis_gate(state([0, 20, 0, 1, 1]), reading(SensorKind.RADAR1, 20.0), NOISE, 0.0)


@pytest.mark.unit
class TestNoiseConfig(unittest.TestCase):
    """NoiseConfigのテストケース"""

    def test_defaults(self):
        np.testing.assert_array_equal(np.diag(NOISE.q), [0.0, 0.01, 0.1, 1e-9, 1e-9])

    def test_diagonal_expanded(self):
        q = NoiseConfig(process_noise=[0.0, 0.02, 0.2, 0.0, 0.0]).q
        self.assertEqual(q.shape, (5, 5))
        self.assertEqual(q[1, 1], 0.02)
        self.assertEqual(q[0, 1], 0.0)

    def test_invalid(self):
        with self.assertRaises(ValidationError):
            NoiseConfig(process_noise=[0.0, -0.01, 0.1, 0.0, 0.0])
        with self.assertRaises(ValidationError):
            NoiseConfig(process_noise=[0.0, 0.01])
        with self.assertRaises(ValidationError):
            NoiseConfig(measurement_noise={"radar1": -1.0})

    def test_initial_estimate(self):
        est = initial_estimate(2.0, velocity=12.0)
        np.testing.assert_array_equal(est.mean, [0, 12, 0, 1, 1])
        np.testing.assert_array_equal(np.diag(est.covariance), [1, 25, 1, 0.01, 0.01])
        frozen = initial_estimate(2.0, calibration_enabled=False)
        self.assertEqual(frozen.covariance[3, 3], 0.0)
        self.assertEqual(frozen.covariance[4, 4], 0.0)


if __name__ == "__main__":
    unittest.main()
