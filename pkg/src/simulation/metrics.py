"""
推定結果の評価指標
"""
import logging
import math
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel

from src.errors import InvalidInputError
from src.estimation.ekf import StateEstimate
from src.estimation.sensors import TIME_EPS
from src.simulation.scenario import TruthSample

logger = logging.getLogger(__name__)


class EvaluationMetrics(BaseModel):
    """
    真値に対する推定精度

    Attributes:
        velocity_rmse: 速度の二乗平均平方根誤差 (m/s)
        terminal_distance_error: 最終時刻の距離誤差（推定 − 真値, m）
        mean_velocity_nees: 速度の正規化推定誤差二乗の平均
        coverage_1sigma: |v̂ − v| ≤ σ̂ となったサンプルの割合（整合したフィルタなら約0.68）
        samples: 評価に使ったサンプル数
    """

    velocity_rmse: float
    terminal_distance_error: float
    mean_velocity_nees: float
    coverage_1sigma: float
    samples: int


def evaluate(
    estimates: Sequence[StateEstimate],
    truth: Sequence[TruthSample],
    start_time: Optional[float] = None,
) -> EvaluationMetrics:
    """
    推定値を真値（推定時刻に線形補間）と比較します。

    Args:
        estimates: 推定値のリスト
        truth: 時刻順の真値
        start_time: これより前の推定値を評価から除く（収束区間の除外用）

    Returns:
        EvaluationMetrics: 評価指標

    Raises:
        InvalidInputError: 推定と真値の時間範囲が重ならない場合
    """
    if not estimates or not truth:
        raise InvalidInputError("推定値または真値が空です")

    truth_t = np.array([s.timestamp for s in truth])
    lo, hi = truth_t[0] - TIME_EPS, truth_t[-1] + TIME_EPS
    if start_time is not None:
        lo = max(lo, start_time - TIME_EPS)
    used = [e for e in estimates if lo <= e.timestamp <= hi]
    if not used:
        raise InvalidInputError("推定値と真値の時間範囲が重なりません")

    t = np.array([e.timestamp for e in used])
    v_hat = np.array([e.velocity for e in used])
    sigma = np.array([e.velocity_std for e in used])
    v_true = np.interp(t, truth_t, [s.velocity for s in truth])
    d_true = np.interp(t[-1], truth_t, [s.distance for s in truth])

    error = v_hat - v_true
    variance = np.maximum(sigma * sigma, np.finfo(float).tiny)
    metrics = EvaluationMetrics(
        velocity_rmse=float(np.sqrt(np.mean(error * error))),
        terminal_distance_error=float(used[-1].distance - d_true),
        mean_velocity_nees=float(np.mean(error * error / variance)),
        coverage_1sigma=float(np.mean(np.abs(error) <= sigma)),
        samples=len(used),
    )
    if not math.isfinite(metrics.velocity_rmse):
        raise InvalidInputError("推定値に非有限値が含まれています")
    logger.debug(f"評価: RMSE={metrics.velocity_rmse:.4f} m/s, 1σ被覆率={metrics.coverage_1sigma:.3f}")
    return metrics
