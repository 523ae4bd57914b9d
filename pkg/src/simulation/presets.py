"""
組み込みシナリオ

calibration    一定速度でエンコーダ1の較正係数だけがずれている
nominal        加速・巡航・減速、空転なし
two_slip       nominal に加速中の空転と減速中の滑走を加えたもの
encoders_only  途中で両レーダが失われ（雪・氷）、その後エンコーダ1だけが空転する
gps_loss       nominal でGPSが長時間途絶する
consistency    真の加速度がランダムウォークするフィルタ整合性確認用
"""
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from src.errors import InvalidInputError
from src.estimation.sensors import SensorKind
from src.simulation.scenario import ScenarioConfig, Segment, SensorModel, SlipEvent

ACCEL_CRUISE_BRAKE: List[Tuple[float, float]] = [(60.0, 0.4), (60.0, 0.0), (60.0, -0.4)]

RADARS = (SensorKind.RADAR1, SensorKind.RADAR2)
ENCODERS = (SensorKind.ENCODER1, SensorKind.ENCODER2)


def _segments(profile: Sequence[Tuple[float, float]]) -> List[Segment]:
    return [Segment(duration=d, acceleration=a) for d, a in profile]


def _standard_sensors(
    noise_std: float = 0.02,
    reported_variance: float = 0.25,
    calibrations: Tuple[float, float] = (1.0, 1.0),
    radar_dropouts: Sequence[Tuple[float, float]] = (),
    gps_dropouts: Sequence[Tuple[float, float]] = (),
) -> List[SensorModel]:
    sensors = [
        SensorModel(
            kind=kind,
            rate=10.0,
            noise_std=noise_std,
            reported_variance=reported_variance,
            dropouts=list(radar_dropouts),
        )
        for kind in RADARS
    ]
    sensors += [
        SensorModel(kind=kind, rate=10.0, noise_std=noise_std, calibration=cal, reported_variance=reported_variance)
        for kind, cal in zip(ENCODERS, calibrations)
    ]
    sensors.append(
        SensorModel(kind=SensorKind.GPS, rate=1.0, noise_std=0.1, reported_variance=0.01, dropouts=list(gps_dropouts))
    )
    return sensors


def _slip(start: float, duration: float, offsets: Dict[SensorKind, float], onset=0.2, decay=0.2) -> List[SlipEvent]:
    return [
        SlipEvent(start=start, duration=duration, sensors=[sensor], peak_offset=offset, onset=onset, decay=decay)
        for sensor, offset in offsets.items()
    ]


def calibration(seed: int = 0) -> ScenarioConfig:
    return ScenarioConfig(
        name="calibration",
        initial_velocity=60.0,
        segments=_segments([(120.0, 0.0)]),
        sensors=_standard_sensors(noise_std=0.3, reported_variance=0.09, calibrations=(0.95, 1.0)),
        seed=seed,
    )


def nominal(seed: int = 0) -> ScenarioConfig:
    return ScenarioConfig(
        name="nominal",
        segments=_segments(ACCEL_CRUISE_BRAKE),
        sensors=_standard_sensors(calibrations=(0.97, 1.0), gps_dropouts=[(80.0, 110.0)]),
        seed=seed,
    )


def two_slip(seed: int = 0) -> ScenarioConfig:
    """
    加速中の空転（エンコーダごとに異なる量）と、
    減速中の滑走（両エンコーダがほぼ同じ量）
    """
    slips = _slip(25.0, 15.0, {SensorKind.ENCODER1: 5.0, SensorKind.ENCODER2: 2.0})
    slips += _slip(135.0, 10.0, {SensorKind.ENCODER1: -2.4, SensorKind.ENCODER2: -2.0})
    return nominal(seed).model_copy(update={"name": "two_slip", "slips": slips})


def encoders_only(seed: int = 0) -> ScenarioConfig:
    segments = _segments([(60.0, 0.5), (120.0, 0.0)])
    return ScenarioConfig(
        name="encoders_only",
        segments=segments,
        sensors=_standard_sensors(radar_dropouts=[(70.0, 1.0e9)]),
        slips=_slip(120.0, 20.0, {SensorKind.ENCODER1: 4.0}, onset=0.25, decay=0.25),
        seed=seed,
    )


def gps_loss(seed: int = 0) -> ScenarioConfig:
    return nominal(seed).model_copy(
        update={
            "name": "gps_loss",
            "sensors": _standard_sensors(calibrations=(0.97, 1.0), gps_dropouts=[(40.0, 100.0), (130.0, 160.0)]),
        }
    )


def consistency(
    seed: int = 0,
    acceleration_variance: float = 1e-3,
    duration: float = 30.0,
    initial_velocity: float = 50.0,
    noise_std: float = 0.5,
) -> ScenarioConfig:
    """
    真の加速度が0.1秒ごとに分散 acceleration_variance のランダムウォークをするシナリオ。
    レーダだけを使い、申告分散は実際のノイズ分散と一致します。
    """
    rate = 10.0
    steps = int(round(duration * rate))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1000]))
    accelerations = np.concatenate([[0.0], np.cumsum(rng.normal(0.0, np.sqrt(acceleration_variance), steps - 1))])
    sensors = [
        SensorModel(kind=kind, rate=rate, noise_std=noise_std, reported_variance=noise_std * noise_std)
        for kind in RADARS
    ]
    return ScenarioConfig(
        name="consistency",
        rate=rate,
        initial_velocity=initial_velocity,
        segments=[Segment(duration=1.0 / rate, acceleration=float(a)) for a in accelerations],
        sensors=sensors,
        seed=seed,
    )


PRESETS: Dict[str, Callable[..., ScenarioConfig]] = {
    "calibration": calibration,
    "nominal": nominal,
    "two_slip": two_slip,
    "encoders_only": encoders_only,
    "gps_loss": gps_loss,
    "consistency": consistency,
}


def get_preset(name: str, seed: int = 0) -> ScenarioConfig:
    """名前から組み込みシナリオを取得する"""
    try:
        factory = PRESETS[name]
    except KeyError:
        raise InvalidInputError(f"不明なシナリオ名です: {name}（{', '.join(PRESETS)}）")
    return factory(seed=seed)
