"""
較正係数を状態に含む拡張カルマンフィルタ (EKF)

状態ベクトル: [距離, 速度, 加速度, エンコーダ1較正係数, エンコーダ2較正係数]
運動モデルは線形の等加速度モデル、レーダ観測は速度の直接観測、
エンコーダ観測は h(x) = 速度 / 較正係数 の非線形モデルです。
"""
import logging
import math
from typing import Dict, List, NamedTuple, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from src.errors import InvalidInputError, NumericalError, SingularModelError
from src.estimation.sensors import Measurement, SensorKind, calibration_index

logger = logging.getLogger(__name__)

STATE_DIM = 5
DISTANCE, VELOCITY, ACCELERATION, CAL1, CAL2 = range(STATE_DIM)

CALIBRATION_FLOOR = 1e-6

DEFAULT_PROCESS_NOISE: Tuple[float, ...] = (0.0, 0.01, 0.1, 1e-9, 1e-9)
DEFAULT_INITIAL_COVARIANCE: Tuple[float, ...] = (1.0, 25.0, 1.0, 0.01, 0.01)

_SYMMETRY_RTOL = 1e-9
_PSD_RTOL = 1e-9


def _as_state_vector(value) -> np.ndarray:
    arr = np.array(value, dtype=float).reshape(-1)
    if arr.shape != (STATE_DIM,):
        raise ValueError(f"平均ベクトルの形状が不正です: {arr.shape}")
    arr.setflags(write=False)
    return arr


def _as_state_matrix(value) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.shape != (STATE_DIM, STATE_DIM):
        raise ValueError(f"共分散行列の形状が不正です: {arr.shape}")
    arr.setflags(write=False)
    return arr


class StateEstimate(BaseModel):
    """
    状態推定値（不変）

    Attributes:
        mean: 5次元の平均ベクトル
        covariance: 5×5の共分散行列
        timestamp: 推定時刻（秒）
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    mean: np.ndarray
    covariance: np.ndarray
    timestamp: float = 0.0

    @field_validator("mean", mode="before")
    @classmethod
    def _check_mean(cls, value):
        return _as_state_vector(value)

    @field_validator("covariance", mode="before")
    @classmethod
    def _check_covariance(cls, value):
        return _as_state_matrix(value)

    @property
    def distance(self) -> float:
        return float(self.mean[DISTANCE])

    @property
    def velocity(self) -> float:
        return float(self.mean[VELOCITY])

    @property
    def acceleration(self) -> float:
        return float(self.mean[ACCELERATION])

    @property
    def calibrations(self) -> Tuple[float, float]:
        return float(self.mean[CAL1]), float(self.mean[CAL2])

    @property
    def velocity_std(self) -> float:
        return math.sqrt(max(float(self.covariance[VELOCITY, VELOCITY]), 0.0))

    def is_symmetric(self) -> bool:
        P = self.covariance
        scale = max(float(np.max(np.abs(P))), 1.0)
        return bool(np.max(np.abs(P - P.T)) <= _SYMMETRY_RTOL * scale)

    def is_positive_semidefinite(self) -> bool:
        eigenvalues = np.linalg.eigvalsh(self.covariance)
        largest = max(float(np.max(np.abs(eigenvalues))), 0.0)
        return bool(eigenvalues[0] >= -_PSD_RTOL * largest)


class NoiseConfig(BaseModel):
    """
    ノイズ設定

    Attributes:
        process_noise: プロセスノイズQ。対角成分5個のリスト、または5×5の行列
        measurement_noise: センサ種別 → 分散の下限R（(m/s)²）
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    process_noise: List[List[float]] = [
        [DEFAULT_PROCESS_NOISE[i] if i == j else 0.0 for j in range(STATE_DIM)]
        for i in range(STATE_DIM)
    ]
    measurement_noise: Dict[SensorKind, float] = {}

    @field_validator("process_noise", mode="before")
    @classmethod
    def _expand_diagonal(cls, value):
        arr = np.array(value, dtype=float)
        if arr.shape == (STATE_DIM,):
            arr = np.diag(arr)
        if arr.shape != (STATE_DIM, STATE_DIM):
            raise ValueError("process_noise は5要素の対角成分か5×5行列で指定してください")
        return arr.tolist()

    @model_validator(mode="after")
    def _check_values(self) -> "NoiseConfig":
        q = np.array(self.process_noise)
        if not np.all(np.isfinite(q)):
            raise ValueError("process_noise に非有限値が含まれています")
        if np.any(np.diag(q) < 0.0):
            raise ValueError("process_noise の対角成分は0以上である必要があります")
        if not np.allclose(q, q.T):
            raise ValueError("process_noise は対称行列である必要があります")
        for sensor, variance in self.measurement_noise.items():
            if not (math.isfinite(variance) and variance >= 0.0):
                raise ValueError(f"{sensor.value} の測定ノイズは0以上である必要があります")
        return self

    @property
    def q(self) -> np.ndarray:
        return np.array(self.process_noise, dtype=float)

    def effective_variance(self, meas: Measurement) -> float:
        """申告分散と設定下限の大きい方を返す"""
        return max(meas.variance, self.measurement_noise.get(meas.sensor, 0.0))

    @classmethod
    def from_diagonal(cls, diagonal: Sequence[float], measurement_noise=None) -> "NoiseConfig":
        return cls(process_noise=list(diagonal), measurement_noise=measurement_noise or {})


class GateDecision(NamedTuple):
    accepted: bool
    mahalanobis: float


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def _require_finite(est: StateEstimate) -> None:
    if not (np.all(np.isfinite(est.mean)) and np.all(np.isfinite(est.covariance))):
        raise NumericalError(f"状態に非有限値が含まれています (t={est.timestamp})")


def initial_estimate(
    timestamp: float,
    velocity: float = 0.0,
    calibrations: Tuple[float, float] = (1.0, 1.0),
    covariance_diagonal: Sequence[float] = DEFAULT_INITIAL_COVARIANCE,
    calibration_enabled: bool = True,
) -> StateEstimate:
    """
    初期状態を生成します。

    Args:
        timestamp: 初期化時刻（秒）
        velocity: 初期速度（最初のレーダ観測値、なければ0）
        calibrations: 較正係数の初期値
        covariance_diagonal: 初期共分散の対角成分
        calibration_enabled: Falseなら較正係数の分散を0にして固定する

    Returns:
        StateEstimate: 初期状態
    """
    diagonal = np.array(covariance_diagonal, dtype=float)
    if diagonal.shape != (STATE_DIM,) or np.any(diagonal < 0.0):
        raise InvalidInputError("初期共分散の対角成分が不正です")
    if min(calibrations) < CALIBRATION_FLOOR:
        raise InvalidInputError("較正係数の初期値は正である必要があります")
    if not calibration_enabled:
        diagonal[CAL1] = diagonal[CAL2] = 0.0
    mean = np.array([0.0, velocity, 0.0, calibrations[0], calibrations[1]], dtype=float)
    return StateEstimate(mean=mean, covariance=np.diag(diagonal), timestamp=timestamp)


def transition_matrix(dt: float) -> np.ndarray:
    """等加速度モデルの状態遷移行列F（較正係数の行は単位行列）"""
    F = np.eye(STATE_DIM)
    F[DISTANCE, VELOCITY] = dt
    F[DISTANCE, ACCELERATION] = 0.5 * dt * dt
    F[VELOCITY, ACCELERATION] = dt
    return F


def predict(est: StateEstimate, dt: float, q: NoiseConfig) -> StateEstimate:
    """
    時間更新を行います。P = F·P·Fᵀ + Q（Qは呼び出し1回ごとに加算）

    Args:
        est: 事後推定値
        dt: 経過時間（秒、正）
        q: ノイズ設定

    Returns:
        StateEstimate: 事前推定値
    """
    if not (isinstance(dt, (int, float)) and math.isfinite(dt) and dt > 0.0):
        raise InvalidInputError(f"dtは正の有限値である必要があります: {dt}")
    _require_finite(est)

    F = transition_matrix(dt)
    mean = F @ est.mean
    covariance = _symmetrize(F @ est.covariance @ F.T + q.q)
    return StateEstimate(mean=mean, covariance=covariance, timestamp=est.timestamp + dt)


def observation_model(state_mean: Union[np.ndarray, Sequence[float]], sensor: SensorKind) -> Tuple[float, np.ndarray]:
    """
    観測予測値と線形化した観測行列（ヤコビアン）を返します。

    Args:
        state_mean: 状態の平均ベクトル
        sensor: センサ種別

    Returns:
        (予測観測値, 5要素のヤコビアン行ベクトル)
    """
    x = np.asarray(state_mean, dtype=float)
    velocity = float(x[VELOCITY])
    H = np.zeros(STATE_DIM)

    index = calibration_index(sensor)
    if index is None:
        H[VELOCITY] = 1.0
        return velocity, H

    cal = float(x[index])
    if not cal >= CALIBRATION_FLOOR:
        raise SingularModelError(f"{sensor.value} の較正係数が下限未満です: {cal}")
    H[VELOCITY] = 1.0 / cal
    H[index] = -velocity / (cal * cal)
    return velocity / cal, H


def _innovation(est: StateEstimate, meas: Measurement, noise: NoiseConfig) -> Tuple[float, float, np.ndarray]:
    if not (math.isfinite(meas.mean) and math.isfinite(meas.variance) and meas.variance > 0.0):
        raise InvalidInputError(f"観測値が不正です: {meas}")
    predicted, H = observation_model(est.mean, meas.sensor)
    R = noise.effective_variance(meas)
    S = float(H @ est.covariance @ H) + R
    if not (math.isfinite(S) and S > 0.0):
        raise NumericalError(f"イノベーション分散が正ではありません: {S}")
    return meas.mean - predicted, S, H


def mahalanobis(est: StateEstimate, meas: Measurement, noise: NoiseConfig) -> float:
    """正規化イノベーション |y| / sqrt(HPHᵀ + R)"""
    y, S, _ = _innovation(est, meas, noise)
    return abs(y) / math.sqrt(S)


def update(est: StateEstimate, meas: Measurement, noise: NoiseConfig) -> StateEstimate:
    """
    1つのスカラー観測で観測更新を行います。

    共分散はJoseph形式で更新し、最後に対称化します。
    Rは観測の分散（SCA使用時は拡大済み）と設定下限の大きい方です。

    Args:
        est: 事前推定値
        meas: 観測値
        noise: ノイズ設定

    Returns:
        StateEstimate: 事後推定値
    """
    _require_finite(est)
    y, S, H = _innovation(est, meas, noise)
    R = noise.effective_variance(meas)

    P = est.covariance
    K = (P @ H) / S
    mean = est.mean + K * y

    I_KH = np.eye(STATE_DIM) - np.outer(K, H)
    covariance = _symmetrize(I_KH @ P @ I_KH.T + np.outer(K, K) * R)

    result = StateEstimate(mean=mean, covariance=covariance, timestamp=est.timestamp)
    _require_finite(result)
    return result


def nis_gate(est: StateEstimate, meas: Measurement, noise: NoiseConfig, threshold: float) -> GateDecision:
    """
    正規化イノベーション二乗 (NIS) によるゲート判定

    Args:
        est: 事前推定値
        meas: 観測値
        noise: ノイズ設定
        threshold: マハラノビス距離のしきい値（正）

    Returns:
        GateDecision: 採否とマハラノビス距離
    """
    if not (math.isfinite(threshold) and threshold > 0.0):
        raise InvalidInputError(f"しきい値は正である必要があります: {threshold}")
    distance = mahalanobis(est, meas, noise)
    accepted = distance <= threshold
    if not accepted:
        logger.debug(f"NISゲートで棄却: {meas.sensor.value} t={meas.timestamp:.3f} 距離={distance:.2f}")
    return GateDecision(accepted=accepted, mahalanobis=distance)
