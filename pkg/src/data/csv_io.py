"""
観測・真値・推定値のCSV入出力

CSVはUTF-8、LF改行、小数点はピリオド、桁区切りなし。
浮動小数点は有効数字12桁で書き出します。
"""
import logging
import math
import os
import re
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import pandas as pd
from pydantic import ValidationError

from src.errors import ParseError
from src.estimation.ekf import StateEstimate
from src.estimation.sensors import Measurement, SensorKind
from src.simulation.scenario import TruthSample

logger = logging.getLogger(__name__)

MEASUREMENT_COLUMNS = ["time_s", "sensor", "velocity_mps", "variance_mps2"]
TRUTH_COLUMNS = ["time_s", "distance_m", "velocity_mps", "accel_mps2"]
SCALE_SENSORS = [SensorKind.RADAR1, SensorKind.RADAR2, SensorKind.ENCODER1, SensorKind.ENCODER2]
ESTIMATE_COLUMNS = [
    "time_s",
    "distance_m",
    "velocity_mps",
    "accel_mps2",
    "cal1",
    "cal2",
    "std_velocity_mps",
] + [f"scale_{s.value}" for s in SCALE_SENSORS]

FLOAT_FORMAT = "%.12g"

_SENSOR_NAMES = {kind.value: kind for kind in SensorKind}


def _write_frame(df: pd.DataFrame, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", encoding="utf-8")


def _read_frame(path: str, columns: List[str]) -> pd.DataFrame:
    if not os.path.isfile(path):
        raise ParseError(path, [(0, "ファイルが見つかりません")])
    try:
        df = pd.read_csv(
            path,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError:
        raise ParseError(path, [(1, "ヘッダ行がありません")])
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise ParseError(path, [(int(match.group(1)) if match else 0, f"列数が不正です: {e}")]) from e
    except UnicodeDecodeError as e:
        raise ParseError(path, [(0, f"UTF-8として読めません: {e}")]) from e

    if list(df.columns) != columns:
        raise ParseError(path, [(1, f"ヘッダが不正です: {','.join(df.columns)}（期待値: {','.join(columns)}）")])
    # 列が足りない行や空行の欠損は空文字として各行の検証で報告する
    return df.fillna("")


def _parse_float(value: str, column: str) -> float:
    try:
        number = float(value)
    except ValueError:
        raise ValueError(f"{column} が数値ではありません: '{value}'")
    if not math.isfinite(number):
        raise ValueError(f"{column} が有限値ではありません: '{value}'")
    return number


def _line_number(index: int) -> int:
    # ヘッダが1行目
    return index + 2


def _check_order(path: str, timestamps: List[float], allow_unsorted: bool) -> Optional[List[int]]:
    """時刻の逆行があればエラー、allow_unsortedなら安定ソート後の順序を返す"""
    backwards = [i for i in range(1, len(timestamps)) if timestamps[i] < timestamps[i - 1]]
    if not backwards:
        return None
    if not allow_unsorted:
        raise ParseError(path, [(_line_number(i), "時刻が前の行より前です") for i in backwards])
    logger.warning(f"{path}: 時刻順でない行が{len(backwards)}件あったため並べ替えました")
    order = pd.Series(timestamps).sort_values(kind="mergesort").index
    return list(order)


def read_measurements(path: str, allow_unsorted: bool = False) -> List[Measurement]:
    """
    観測CSVを読み込みます。

    Args:
        path: CSVファイルのパス（ヘッダ time_s,sensor,velocity_mps,variance_mps2）
        allow_unsorted: Trueなら時刻順でない行を安定ソートする

    Returns:
        List[Measurement]: 時刻順の観測

    Raises:
        ParseError: 不正な行がある場合（すべての不正行を行番号つきで報告）
    """
    df = _read_frame(path, MEASUREMENT_COLUMNS)
    measurements: List[Measurement] = []
    errors: List[Tuple[int, str]] = []

    for index, row in enumerate(df.itertuples(index=False)):
        line = _line_number(index)
        try:
            sensor = _SENSOR_NAMES.get(row.sensor.strip())
            if sensor is None:
                raise ValueError(f"不明なセンサ名です: '{row.sensor}'")
            measurements.append(
                Measurement(
                    sensor=sensor,
                    mean=_parse_float(row.velocity_mps, "velocity_mps"),
                    variance=_parse_float(row.variance_mps2, "variance_mps2"),
                    timestamp=_parse_float(row.time_s, "time_s"),
                )
            )
        except ValidationError as e:
            errors.append((line, "; ".join(item["msg"] for item in e.errors())))
        except ValueError as e:
            errors.append((line, str(e)))

    if errors:
        raise ParseError(path, errors)

    order = _check_order(path, [m.timestamp for m in measurements], allow_unsorted)
    if order is not None:
        measurements = [measurements[i] for i in order]
    logger.info(f"観測を読み込みました: {path} ({len(measurements)}件)")
    return measurements


def write_measurements(path: str, measurements: Sequence[Measurement]) -> None:
    """観測をCSVに書き出す"""
    df = pd.DataFrame(
        [(m.timestamp, m.sensor.value, m.mean, m.variance) for m in measurements],
        columns=MEASUREMENT_COLUMNS,
    )
    _write_frame(df, path)
    logger.info(f"観測を書き出しました: {path} ({len(df)}件)")


def write_truth(path: str, truth: Sequence[TruthSample]) -> None:
    df = pd.DataFrame([tuple(s) for s in truth], columns=TRUTH_COLUMNS)
    _write_frame(df, path)
    logger.info(f"真値を書き出しました: {path} ({len(df)}件)")


def read_truth(path: str) -> List[TruthSample]:
    """真値CSVを読み込む（時刻順であること）"""
    df = _read_frame(path, TRUTH_COLUMNS)
    samples: List[TruthSample] = []
    errors: List[Tuple[int, str]] = []
    for index, row in enumerate(df.itertuples(index=False)):
        try:
            samples.append(TruthSample(*(_parse_float(getattr(row, c), c) for c in TRUTH_COLUMNS)))
        except ValueError as e:
            errors.append((_line_number(index), str(e)))
    if errors:
        raise ParseError(path, errors)
    _check_order(path, [s.timestamp for s in samples], allow_unsorted=False)
    return samples


def estimate_frame(
    estimates: Sequence[StateEstimate],
    scales: Optional[Sequence[Mapping[SensorKind, float]]] = None,
) -> pd.DataFrame:
    """推定値と出力時刻ごとのSCA倍率を推定CSVの列構成のDataFrameにする"""
    if scales is not None and len(scales) != len(estimates):
        raise ValueError(f"推定値 {len(estimates)} 件と倍率 {len(scales)} 件の数が一致しません")
    rows = []
    for k, est in enumerate(estimates):
        tick_scales = scales[k] if scales is not None else {}
        rows.append(
            [
                est.timestamp,
                est.distance,
                est.velocity,
                est.acceleration,
                *est.calibrations,
                est.velocity_std,
            ]
            + [float(tick_scales.get(sensor, 1.0)) for sensor in SCALE_SENSORS]
        )
    return pd.DataFrame(rows, columns=ESTIMATE_COLUMNS)


def write_estimates(
    path: str,
    estimates: Sequence[StateEstimate],
    scales: Optional[Sequence[Mapping[SensorKind, float]]] = None,
) -> None:
    """
    推定値をCSVに書き出します。

    Args:
        path: 出力パス
        estimates: 出力時刻ごとの推定値
        scales: 出力時刻ごとのセンサ別SCA倍率（含まれないセンサは1）
    """
    df = estimate_frame(estimates, scales)
    _write_frame(df, path)
    logger.info(f"推定値を書き出しました: {path} ({len(df)}件)")


def read_estimates(path: str) -> pd.DataFrame:
    """推定CSVを数値のDataFrameとして読み込む"""
    df = _read_frame(path, ESTIMATE_COLUMNS)
    errors: List[Tuple[int, str]] = []
    values: Dict[str, List[float]] = {c: [] for c in ESTIMATE_COLUMNS}
    for index, row in enumerate(df.itertuples(index=False)):
        try:
            parsed = [_parse_float(getattr(row, c), c) for c in ESTIMATE_COLUMNS]
        except ValueError as e:
            errors.append((_line_number(index), str(e)))
            continue
        for column, value in zip(ESTIMATE_COLUMNS, parsed):
            values[column].append(value)
    if errors:
        raise ParseError(path, errors)
    return pd.DataFrame(values, columns=ESTIMATE_COLUMNS)
