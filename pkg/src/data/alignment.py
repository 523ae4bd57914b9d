"""
非同期の観測ストリームから合意分析用の観測集合を組み立てる

観測が届くたびに、各センサの最新観測のうち経過時間が
staleness window 以内のものを集めます（到着トリガ方式）。
"""
import logging
from typing import Dict, List, Sequence, Set

from pydantic import BaseModel, ConfigDict

from src.errors import InvalidInputError
from src.estimation.sensors import SENSOR_ORDER, TIME_EPS, Measurement, SensorKind

logger = logging.getLogger(__name__)


class AlignedSet(BaseModel):
    """
    ある時刻で有効な各センサの最新観測

    Attributes:
        timestamp: 集合の時刻（到着した観測の時刻）
        measurements: センサ順に並んだ観測（1センサ1件まで）
    """

    model_config = ConfigDict(frozen=True)

    timestamp: float
    measurements: List[Measurement]

    @property
    def sensors(self) -> List[SensorKind]:
        return [m.sensor for m in self.measurements]

    def index_of(self, sensor: SensorKind) -> int:
        for i, m in enumerate(self.measurements):
            if m.sensor == sensor:
                return i
        raise KeyError(sensor)

    def __len__(self) -> int:
        return len(self.measurements)


class Aligner:
    """
    到着順に観測を受け取り、その時点の AlignedSet を返す
    """

    def __init__(self, window: float = 1.0):
        if not window > 0.0:
            raise InvalidInputError(f"staleness window は正である必要があります: {window}")
        self.window = window
        self._latest: Dict[SensorKind, Measurement] = {}
        self._stale: Set[SensorKind] = set()
        self._time = float("-inf")

    def push(self, meas: Measurement) -> AlignedSet:
        """
        観測を1件追加して、その時刻の観測集合を返します。

        Raises:
            InvalidInputError: 時刻が前の観測より前の場合
        """
        if meas.timestamp < self._time:
            raise InvalidInputError(
                f"観測が時刻順ではありません: {meas.timestamp} < {self._time}"
            )
        self._time = meas.timestamp
        self._latest[meas.sensor] = meas

        members = []
        for sensor, last in self._latest.items():
            if meas.timestamp - last.timestamp <= self.window + TIME_EPS:
                members.append(last)
                if sensor in self._stale:
                    self._stale.discard(sensor)
                    logger.info(f"{sensor.value} が復帰しました (t={meas.timestamp:.3f})")
            elif sensor not in self._stale:
                self._stale.add(sensor)
                logger.warning(
                    f"{sensor.value} の観測が {self.window:g} 秒以上途絶えたため"
                    f"合意分析から除外します "
                    f"(最終観測 t={last.timestamp:.3f})"
                )

        members.sort(key=lambda m: SENSOR_ORDER[m.sensor])
        return AlignedSet(timestamp=meas.timestamp, measurements=members)

    @property
    def stale_sensors(self) -> Set[SensorKind]:
        return set(self._stale)


def align(stream: Sequence[Measurement], window: float = 1.0) -> List[AlignedSet]:
    """時刻順の観測列から、観測1件ごとに1つの AlignedSet を作る"""
    aligner = Aligner(window)
    return [aligner.push(m) for m in stream]
