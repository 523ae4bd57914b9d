"""
列車走行シナリオのシミュレータ

区分的に一定な加速度プロファイルから真値軌跡を積分し、各センサの
観測列（ノイズ、較正誤差、空転・滑走、欠測を含む）を生成します。
乱数は numpy の PCG64 をセンサごとに SeedSequence([seed, センサ番号]) で
初期化するため、同じシードからは常に同じ観測列が得られます。
"""
import logging
import math
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.errors import InvalidInputError
from src.estimation.sensors import SENSOR_ORDER, TIME_DECIMALS, Measurement, SensorKind

logger = logging.getLogger(__name__)


class TruthSample(NamedTuple):
    """
    真値の1サンプル

    accelerationはこの時刻から次の時刻までの区間に適用される加速度です。
    """

    timestamp: float
    distance: float
    velocity: float
    acceleration: float


class Segment(BaseModel):
    """一定加速度の区間"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    duration: float = Field(gt=0.0)
    acceleration: float

    @field_validator("acceleration")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("加速度は有限値である必要があります")
        return value


class SlipEvent(BaseModel):
    """
    車輪の空転（正のオフセット）または滑走（負のオフセット）

    速度オフセットは台形: onset区間で0から線形に立ち上がり、
    一定値を保ったあと、decay区間で0まで線形に戻ります。
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    start: float
    duration: float = Field(gt=0.0)
    sensors: List[SensorKind]
    peak_offset: float
    onset: float = Field(default=0.2, ge=0.0, le=1.0)
    decay: float = Field(default=0.2, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _check(self) -> "SlipEvent":
        if self.onset + self.decay > 1.0 + 1e-12:
            raise ValueError("onset と decay の合計は1以下である必要があります")
        if not self.sensors:
            raise ValueError("空転の対象センサを1つ以上指定してください")
        for sensor in self.sensors:
            if not sensor.is_encoder:
                raise ValueError(f"空転・滑走はエンコーダにのみ適用できます: {sensor.value}")
        return self

    @property
    def end(self) -> float:
        return self.start + self.duration


class SensorModel(BaseModel):
    """
    センサの特性

    Attributes:
        kind: センサ種別
        rate: 出力レート (Hz)
        noise_std: 実際の観測ノイズの標準偏差 (m/s)
        calibration: 較正係数（エンコーダのみ、その他は1.0）
        reported_variance: センサが申告する分散 ((m/s)²)
        dropouts: 欠測区間 [開始, 終了] (s) のリスト
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: SensorKind
    rate: float = Field(default=10.0, gt=0.0)
    noise_std: float = Field(default=0.0, ge=0.0)
    calibration: float = Field(default=1.0, gt=0.0)
    reported_variance: float = Field(default=0.25, gt=0.0)
    dropouts: List[Tuple[float, float]] = []

    @model_validator(mode="after")
    def _check(self) -> "SensorModel":
        if not self.kind.is_encoder and self.calibration != 1.0:
            raise ValueError(f"較正係数を設定できるのはエンコーダだけです: {self.kind.value}")
        for start, end in self.dropouts:
            if end < start:
                raise ValueError(f"欠測区間の終了が開始より前です: [{start}, {end}]")
        return self

    def is_dropped(self, t: float) -> bool:
        return any(start <= t <= end for start, end in self.dropouts)


class ScenarioConfig(BaseModel):
    """
    シナリオ定義（YAMLのscenarioファイルに対応）

    Attributes:
        name: シナリオ名
        rate: 真値の積分レート (Hz)
        initial_velocity: 初速 (m/s)
        segments: 加速度区間のリスト
        sensors: センサ特性のリスト
        slips: 空転・滑走イベントのリスト
        seed: 既定の乱数シード
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = "scenario"
    rate: float = Field(default=10.0, gt=0.0)
    initial_velocity: float = Field(default=0.0, ge=0.0)
    segments: List[Segment]
    sensors: List[SensorModel]
    slips: List[SlipEvent] = []
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _unique_sensors(self) -> "ScenarioConfig":
        kinds = [s.kind for s in self.sensors]
        if len(kinds) != len(set(kinds)):
            raise ValueError("同じ種別のセンサが複数定義されています")
        return self

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.segments)

    def sensor(self, kind: SensorKind) -> Optional[SensorModel]:
        return next((s for s in self.sensors if s.kind == kind), None)


def _as_segments(segments: Sequence) -> List[Segment]:
    result = []
    for seg in segments:
        if isinstance(seg, Segment):
            result.append(seg)
        else:
            duration, acceleration = seg
            result.append(Segment(duration=duration, acceleration=acceleration))
    return result


def tick_times(start_time: float, count: int, rate: float) -> np.ndarray:
    """start_time から 1/rate 間隔で count 個の時刻（TIME_DECIMALS桁に丸め）"""
    return np.round(start_time + np.arange(count) / rate, TIME_DECIMALS)


def generate_truth(
    segments: Sequence,
    rate: float,
    initial_velocity: float = 0.0,
    start_time: float = 0.0,
) -> List[TruthSample]:
    """
    区分一定加速度のプロファイルを積分して真値軌跡を生成します。

    速度は0未満にならないよう、その区間の加速度を -v/dt に制限します。

    Args:
        segments: (継続時間 s, 加速度 m/s²) または Segment のリスト
        rate: サンプリングレート (Hz)
        initial_velocity: 初速 (m/s)
        start_time: 開始時刻 (s)

    Returns:
        List[TruthSample]: 時刻順の真値（区間が空なら空リスト）
    """
    if not (math.isfinite(rate) and rate > 0.0):
        raise InvalidInputError(f"レートは正である必要があります: {rate}")
    if initial_velocity < 0.0:
        raise InvalidInputError(f"初速は0以上である必要があります: {initial_velocity}")
    try:
        parsed = _as_segments(segments)
    except ValueError as e:
        raise InvalidInputError(f"加速度区間が不正です: {e}") from e
    if not parsed:
        return []

    dt = 1.0 / rate
    accelerations: List[float] = []
    for seg in parsed:
        steps = max(int(round(seg.duration * rate)), 1)
        accelerations.extend([seg.acceleration] * steps)

    times = tick_times(start_time, len(accelerations) + 1, rate)
    samples: List[TruthSample] = []
    distance, velocity = 0.0, float(initial_velocity)
    for k, commanded in enumerate(accelerations):
        applied = commanded
        if velocity + commanded * dt < 0.0:
            applied = -velocity / dt
        samples.append(TruthSample(float(times[k]), distance, velocity, applied))
        next_velocity = velocity + applied * dt
        distance += 0.5 * (velocity + next_velocity) * dt
        velocity = max(next_velocity, 0.0)

    last = accelerations[-1]
    if velocity == 0.0 and last < 0.0:
        last = 0.0
    samples.append(TruthSample(float(times[-1]), distance, velocity, last))
    return samples


def slip_offset(event: SlipEvent, t: float) -> float:
    """時刻tにおける空転イベントの速度オフセット (m/s)"""
    if t < event.start or t > event.end:
        return 0.0
    elapsed = t - event.start
    rise = event.onset * event.duration
    fall = event.decay * event.duration
    if rise > 0.0 and elapsed < rise:
        return event.peak_offset * elapsed / rise
    remaining = event.duration - elapsed
    if fall > 0.0 and remaining < fall:
        return event.peak_offset * remaining / fall
    return event.peak_offset


def sensor_ticks(truth: Sequence[TruthSample], rate: float) -> np.ndarray:
    """真値の時間範囲内にあるセンサの出力時刻"""
    if not truth:
        return np.empty(0)
    t0, t_end = truth[0].timestamp, truth[-1].timestamp
    count = int(math.floor((t_end - t0) * rate + 1e-9)) + 1
    return tick_times(t0, count, rate)


def sensor_rng(seed: int, sensor: SensorKind) -> np.random.Generator:
    """センサごとに独立したPCG64乱数生成器"""
    if seed < 0:
        raise InvalidInputError(f"シードは0以上である必要があります: {seed}")
    return np.random.default_rng(np.random.SeedSequence([seed, SENSOR_ORDER[sensor]]))


def synthesize(
    truth: Sequence[TruthSample],
    sensor: SensorModel,
    slips: Sequence[SlipEvent],
    seed: int,
) -> List[Measurement]:
    """
    1つのセンサの観測列を生成します。

    観測平均 = (真速度 + 空転オフセット) / 較正係数 + ノイズ
    ノイズは欠測の有無にかかわらず全時刻分を引いてから欠測時刻を除くため、
    欠測区間を変えても他の時刻の値は変わりません。
    申告分散は実際のノイズに関係なく reported_variance です。

    Args:
        truth: 時刻順の真値
        sensor: センサ特性
        slips: 空転・滑走イベント（エンコーダ以外には影響しない）
        seed: 乱数シード

    Returns:
        List[Measurement]: 時刻順の観測
    """
    ticks = sensor_ticks(truth, sensor.rate)
    if ticks.size == 0:
        return []

    times = np.array([s.timestamp for s in truth])
    velocities = np.array([s.velocity for s in truth])
    true_velocity = np.interp(ticks, times, velocities)

    offsets = np.zeros_like(ticks)
    for event in slips:
        if sensor.kind in event.sensors:
            offsets += np.array([slip_offset(event, t) for t in ticks])

    noise = sensor_rng(seed, sensor.kind).normal(0.0, 1.0, size=ticks.size) * sensor.noise_std
    means = (true_velocity + offsets) / sensor.calibration + noise

    measurements = [
        Measurement(sensor=sensor.kind, mean=float(m), variance=sensor.reported_variance, timestamp=float(t))
        for t, m in zip(ticks, means)
        if not sensor.is_dropped(float(t))
    ]
    logger.debug(f"{sensor.kind.value}: {len(measurements)}件の観測を生成しました")
    return measurements


def merge_streams(streams: Sequence[Sequence[Measurement]]) -> List[Measurement]:
    """複数の観測列を (時刻, センサ順) で安定に並べる"""
    merged = [m for stream in streams for m in stream]
    merged.sort(key=lambda m: (m.timestamp, SENSOR_ORDER[m.sensor]))
    return merged


def simulate_scenario(
    scenario: ScenarioConfig, seed: Optional[int] = None
) -> Tuple[List[TruthSample], List[Measurement]]:
    """
    シナリオから真値と全センサの観測列を生成します。

    Args:
        scenario: シナリオ定義
        seed: 乱数シード（省略時はシナリオのseed）

    Returns:
        (真値, 時刻順にマージした観測)
    """
    seed = scenario.seed if seed is None else seed
    truth = generate_truth(scenario.segments, scenario.rate, initial_velocity=scenario.initial_velocity)
    streams = [synthesize(truth, sensor, scenario.slips, seed) for sensor in scenario.sensors]
    measurements = merge_streams(streams)
    logger.info(
        f"シナリオ '{scenario.name}' を生成しました: "
        f"真値{len(truth)}件, 観測{len(measurements)}件 (seed={seed})"
    )
    return truth, measurements
