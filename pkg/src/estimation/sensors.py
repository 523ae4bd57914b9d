"""
センサ種別と速度観測値の定義
"""
import math
from enum import Enum
from typing import Dict, Optional

from pydantic import BaseModel, ConfigDict, field_validator


class SensorKind(str, Enum):
    """速度センサの種別（値はCSVのsensor列の表記）"""

    RADAR1 = "radar1"
    RADAR2 = "radar2"
    ENCODER1 = "encoder1"
    ENCODER2 = "encoder2"
    GPS = "gps"

    @property
    def is_encoder(self) -> bool:
        return self in (SensorKind.ENCODER1, SensorKind.ENCODER2)

    @property
    def is_radar(self) -> bool:
        return self in (SensorKind.RADAR1, SensorKind.RADAR2)


# 時刻の比較に使う許容誤差 (s)
TIME_EPS = 1e-9
# 時刻は1ns単位に丸める
TIME_DECIMALS = 9

# 同一時刻の観測を並べる順序
SENSOR_ORDER: Dict[SensorKind, int] = {kind: i for i, kind in enumerate(SensorKind)}

# エンコーダ → 状態ベクトル内の較正係数インデックス
CALIBRATION_INDEX: Dict[SensorKind, int] = {
    SensorKind.ENCODER1: 3,
    SensorKind.ENCODER2: 4,
}


def calibration_index(sensor: SensorKind) -> Optional[int]:
    """エンコーダなら較正係数の状態インデックス、それ以外はNoneを返す"""
    return CALIBRATION_INDEX.get(sensor)


class Measurement(BaseModel):
    """
    1つのスカラー速度観測

    Attributes:
        sensor: センサ種別
        mean: 観測速度（m/s）
        variance: センサが申告する分散（(m/s)²）
        timestamp: 走行開始からの時刻（秒）
    """

    model_config = ConfigDict(frozen=True)

    sensor: SensorKind
    mean: float
    variance: float
    timestamp: float

    @field_validator("mean", "timestamp")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("有限の値である必要があります")
        return value

    @field_validator("variance")
    @classmethod
    def _positive_variance(cls, value: float) -> float:
        if not (math.isfinite(value) and value > 0.0):
            raise ValueError("分散は正の有限値である必要があります")
        return value

    def with_variance(self, variance: float) -> "Measurement":
        """分散だけを差し替えたコピーを返す"""
        return self.model_copy(update={"variance": float(variance)})

    def with_mean_variance(self, mean: float, variance: float) -> "Measurement":
        return self.model_copy(update={"mean": float(mean), "variance": float(variance)})
