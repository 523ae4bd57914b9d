"""
観測ストリームにEKFと前処理（なし / NISゲート / SCA）を適用する推定パイプライン
"""
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import pandas as pd
from pydantic import BaseModel, ConfigDict

from src.consensus.sca import ConsensusReport, sca
from src.data.alignment import Aligner
from src.data.config import PreprocessingMode, RunConfig
from src.data.csv_io import read_measurements, read_truth, write_estimates, write_measurements, write_truth
from src.errors import InvalidInputError
from src.estimation.ekf import (
    CAL1,
    CAL2,
    NoiseConfig,
    StateEstimate,
    initial_estimate,
    mahalanobis,
    nis_gate,
    predict,
    update,
)
from src.estimation.sensors import TIME_DECIMALS, TIME_EPS, Measurement, SensorKind, calibration_index
from src.simulation.metrics import EvaluationMetrics, evaluate
from src.simulation.scenario import ScenarioConfig, TruthSample, simulate_scenario
from src.visualization.plots import render_plots

logger = logging.getLogger(__name__)


ESTIMATES_FILE = "estimates.csv"
SUMMARY_FILE = "summary.json"


class UpdateRecord(NamedTuple):
    """観測1件の処理結果"""

    timestamp: float
    sensor: SensorKind
    fused: bool
    scale: float
    mahalanobis: float


class CalibrationAlert(BaseModel):
    """較正係数が1から大きく外れた（車輪摩耗の可能性）"""

    model_config = ConfigDict(frozen=True)

    sensor: SensorKind
    timestamp: float
    calibration: float


class SensorCounts(BaseModel):
    fused: int = 0
    rejected: int = 0


class RunSummary(BaseModel):
    """
    実行結果のまとめ（summary.json の内容）
    """

    mode: str
    measurements: int
    output_rows: int
    sensors: Dict[str, SensorCounts]
    sca_runs: int
    sca_iterations_total: int
    sca_iterations_max: int
    max_scale: float
    final_calibration: Tuple[float, float]
    alerts: List[CalibrationAlert]
    metrics: Optional[EvaluationMetrics] = None


class FilterRun(BaseModel):
    """
    run_filter の結果

    Attributes:
        mode: 前処理モード
        estimates: 出力時刻ごとの推定値
        scales: 出力時刻ごとのセンサ別SCA倍率
        updates: 観測ごとの処理記録
        final: 最後の観測を処理した直後の推定値
        alerts: 車輪摩耗アラート
        sca_iterations: SCA実行ごとの反復回数
        max_scale: SCAが付けた最大の倍率
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    mode: PreprocessingMode
    estimates: List[StateEstimate] = []
    scales: List[Dict[SensorKind, float]] = []
    updates: List[UpdateRecord] = []
    final: Optional[StateEstimate] = None
    alerts: List[CalibrationAlert] = []
    sca_iterations: List[int] = []
    max_scale: float = 1.0

    def sensor_counts(self) -> Dict[str, SensorCounts]:
        counts: Dict[str, SensorCounts] = {}
        for record in self.updates:
            entry = counts.setdefault(record.sensor.value, SensorCounts())
            if record.fused:
                entry.fused += 1
            else:
                entry.rejected += 1
        return counts

    def fused_count(self, sensor: SensorKind, start: float = -math.inf, end: float = math.inf) -> int:
        return sum(1 for r in self.updates if r.sensor == sensor and r.fused and start <= r.timestamp <= end)

    def summary(self, metrics: Optional[EvaluationMetrics] = None) -> RunSummary:
        final = self.final.calibrations if self.final is not None else (1.0, 1.0)
        return RunSummary(
            mode=self.mode.label,
            measurements=len(self.updates),
            output_rows=len(self.estimates),
            sensors=self.sensor_counts(),
            sca_runs=len(self.sca_iterations),
            sca_iterations_total=sum(self.sca_iterations),
            sca_iterations_max=max(self.sca_iterations, default=0),
            max_scale=self.max_scale,
            final_calibration=final,
            alerts=list(self.alerts),
            metrics=metrics,
        )


def _frozen_calibration_noise(noise: NoiseConfig) -> NoiseConfig:
    q = noise.q
    q[[CAL1, CAL2], :] = 0.0
    q[:, [CAL1, CAL2]] = 0.0
    return NoiseConfig(process_noise=q.tolist(), measurement_noise=dict(noise.measurement_noise))


class OdometryFilter:
    """
    観測を1件ずつ受け取って状態を更新するフィルタ

    同じ時刻の観測が続く場合、時間更新は最初の1件の前にだけ行います。
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.mode = config.preprocessing
        self.noise = config.noise if config.calibration_enabled else _frozen_calibration_noise(config.noise)
        self.aligner = Aligner(config.staleness_window) if self.mode.kind == "sca" else None
        self.state: Optional[StateEstimate] = None
        self.last_scales: Dict[SensorKind, float] = {}
        self.updates: List[UpdateRecord] = []
        self.alerts: List[CalibrationAlert] = []
        self.sca_iterations: List[int] = []
        self.max_scale = 1.0
        self._alerted: set = set()
        self.initial_velocity: Optional[float] = None

    def accepts(self, meas: Measurement) -> bool:
        return meas.sensor != SensorKind.GPS or self.config.fuse_gps

    def prime(self, measurements: Sequence[Measurement]) -> None:
        """
        最初の時刻に並ぶ観測を先読みし、レーダがあればその速度を初速にします。

        同じ時刻の行の並び順によって初期状態が変わらないようにします。
        """
        t0: Optional[float] = None
        for meas in measurements:
            if not self.accepts(meas):
                continue
            if t0 is None:
                t0 = meas.timestamp
            elif meas.timestamp > t0 + TIME_EPS:
                return
            if meas.sensor.is_radar:
                self.initial_velocity = meas.mean
                return

    def _initialize(self, meas: Measurement) -> StateEstimate:
        if self.initial_velocity is not None:
            velocity = self.initial_velocity
        else:
            velocity = meas.mean if meas.sensor.is_radar else 0.0
        logger.debug(f"t={meas.timestamp:.3f} で初期化しました (v0={velocity:.3f})")
        return initial_estimate(
            meas.timestamp,
            velocity=velocity,
            calibrations=self.config.initial_calibration,
            covariance_diagonal=self.config.initial_covariance,
            calibration_enabled=self.config.calibration_enabled,
        )

    def advance_to(self, timestamp: float) -> None:
        """状態を指定時刻まで時間更新する"""
        dt = timestamp - self.state.timestamp
        if dt < -TIME_EPS:
            raise InvalidInputError(f"観測が時刻順ではありません: {timestamp} < {self.state.timestamp}")
        if dt > TIME_EPS:
            advanced = predict(self.state, dt, self.noise)
            self.state = advanced.model_copy(update={"timestamp": timestamp})

    def predicted_at(self, timestamp: float) -> StateEstimate:
        """状態を変えずに指定時刻の予測を返す"""
        if self.state.timestamp >= timestamp - TIME_EPS:
            return self.state
        advanced = predict(self.state, timestamp - self.state.timestamp, self.noise)
        return advanced.model_copy(update={"timestamp": timestamp})

    def _consensus_input(self, meas: Measurement) -> Measurement:
        variance = self.noise.effective_variance(meas)
        index = calibration_index(meas.sensor)
        if index is None or self.config.consensus_space == "raw":
            return meas.with_variance(variance)
        cal = float(self.state.mean[index])
        return meas.with_mean_variance(meas.mean * cal, variance * cal * cal)

    def _run_sca(self, meas: Measurement) -> float:
        aligned = self.aligner.push(meas)
        report: ConsensusReport = sca([self._consensus_input(m) for m in aligned.measurements], self.mode.value)
        self.last_scales = report.scale_by_sensor()
        self.sca_iterations.append(report.iterations)
        self.max_scale = max(self.max_scale, report.max_scale)
        return report.scales[aligned.index_of(meas.sensor)]

    def process(self, meas: Measurement) -> Optional[UpdateRecord]:
        """
        観測を1件処理します。

        Returns:
            UpdateRecord: 処理記録（融合対象外のGPSならNone）
        """
        if not self.accepts(meas):
            return None
        if self.state is None:
            self.state = self._initialize(meas)
        else:
            self.advance_to(meas.timestamp)

        scale = 1.0
        fused = True
        if self.mode.kind == "nis":
            gate = nis_gate(self.state, meas, self.noise, self.mode.value)
            fused, distance = gate.accepted, gate.mahalanobis
            used = meas
        else:
            if self.mode.kind == "sca":
                scale = self._run_sca(meas)
            used = meas if scale == 1.0 else meas.with_variance(self.noise.effective_variance(meas) * scale)
            distance = mahalanobis(self.state, used, self.noise)

        if fused:
            self.state = update(self.state, used, self.noise)
            self._check_wear(meas.timestamp)

        record = UpdateRecord(meas.timestamp, meas.sensor, fused, scale, distance)
        self.updates.append(record)
        return record

    def _check_wear(self, timestamp: float) -> None:
        if not self.config.calibration_enabled:
            return
        for sensor, cal in zip((SensorKind.ENCODER1, SensorKind.ENCODER2), self.state.calibrations):
            if sensor in self._alerted or abs(cal - 1.0) <= self.config.wear_alert_threshold:
                continue
            self._alerted.add(sensor)
            self.alerts.append(CalibrationAlert(sensor=sensor, timestamp=timestamp, calibration=cal))
            logger.warning(
                f"{sensor.value} の較正係数が {cal:.4f} になりました。"
                f"車輪の摩耗・交換を確認してください (t={timestamp:.1f})"
            )


def run_filter(measurements: Sequence[Measurement], config: RunConfig) -> FilterRun:
    """
    メモリ上の観測列にフィルタを適用します。

    出力時刻は最初に処理した観測の時刻 t0 から t0 + k / output_rate。
    各出力時刻Tの行は時刻T以下のすべての観測を反映し、フィルタの時刻が
    Tより前なら予測値を出力します（フィルタの状態は変えません）。

    Args:
        measurements: 時刻順の観測
        config: 実行設定

    Returns:
        FilterRun: 出力時刻ごとの推定値と診断情報
    """
    odometry = OdometryFilter(config)
    odometry.prime(measurements)
    estimates: List[StateEstimate] = []
    scales: List[Dict[SensorKind, float]] = []
    t0: Optional[float] = None

    def emit_until(limit: float, inclusive: bool) -> None:
        while True:
            tick = round(t0 + len(estimates) / config.output_rate, TIME_DECIMALS)
            if tick > limit + TIME_EPS or (not inclusive and tick >= limit - TIME_EPS):
                return
            estimates.append(odometry.predicted_at(tick))
            scales.append(dict(odometry.last_scales))

    for meas in measurements:
        if not odometry.accepts(meas):
            continue
        if t0 is not None:
            emit_until(meas.timestamp, inclusive=False)
        odometry.process(meas)
        if t0 is None:
            t0 = meas.timestamp

    if t0 is not None:
        emit_until(odometry.state.timestamp, inclusive=True)

    run = FilterRun(
        mode=odometry.mode,
        estimates=estimates,
        scales=scales,
        updates=odometry.updates,
        final=odometry.state,
        alerts=odometry.alerts,
        sca_iterations=odometry.sca_iterations,
        max_scale=odometry.max_scale,
    )
    logger.debug(f"{odometry.mode}: 観測{len(run.updates)}件を処理し、{len(estimates)}行を出力しました")
    return run


def write_summary(path: str, summary: RunSummary) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(summary.model_dump_json(indent=2))
        f.write("\n")


def run_pipeline(
    config: RunConfig,
    measurements_path: str,
    output_dir: str,
    allow_unsorted: bool = False,
    truth_path: Optional[str] = None,
) -> RunSummary:
    """
    観測CSVにフィルタを適用し、推定CSVとsummary.jsonを書き出します。

    入力をすべて読み込んで推定が完了してからファイルを書き出します。

    Args:
        config: 実行設定
        measurements_path: 観測CSV
        output_dir: 出力ディレクトリ
        allow_unsorted: 時刻順でない観測を並べ替えるか
        truth_path: 真値CSV（指定すると評価指標をsummaryに含める）

    Returns:
        RunSummary: 実行結果のまとめ
    """
    measurements = read_measurements(measurements_path, allow_unsorted=allow_unsorted)
    truth = read_truth(truth_path) if truth_path else None

    run = run_filter(measurements, config)
    metrics = evaluate(run.estimates, truth) if truth and run.estimates else None
    summary = run.summary(metrics)

    os.makedirs(output_dir, exist_ok=True)
    write_estimates(os.path.join(output_dir, ESTIMATES_FILE), run.estimates, run.scales)
    write_summary(os.path.join(output_dir, SUMMARY_FILE), summary)

    message = f"推定完了: mode={summary.mode}, 出力{summary.output_rows}行"
    if metrics is not None:
        message += f", 速度RMSE={metrics.velocity_rmse:.4f} m/s"
    logger.info(message)
    return summary


DEFAULT_COMPARE_MODES = ("none", "nis:3", "sca:0.5", "sca:0.9")


def mode_file_label(mode: str) -> str:
    """ファイル名に使えるモード表記（"sca:0.9" → "sca_0.9"）"""
    return mode.replace(":", "_")


def _evaluate_mode(
    args: Tuple[str, RunConfig, List[Measurement], List[TruthSample]]
) -> Tuple[str, FilterRun, EvaluationMetrics]:
    label, config, measurements, truth = args
    run = run_filter(measurements, config)
    return label, run, evaluate(run.estimates, truth)


def compare(
    scenario: ScenarioConfig,
    config: RunConfig,
    output_dir: str,
    modes: Sequence[str] = DEFAULT_COMPARE_MODES,
    seed: Optional[int] = None,
    jobs: int = 1,
    plots: bool = True,
) -> pd.DataFrame:
    """
    1つのシナリオに複数の前処理モードを適用して比較します。

    すべてのモードが同じ観測列を使います。結果として measurements.csv、
    truth.csv、モードごとの推定CSVとプロット、metrics.csv を書き出します。

    Args:
        scenario: シナリオ定義
        config: モード以外の実行設定
        output_dir: 出力ディレクトリ
        modes: 比較するモード文字列
        seed: 乱数シード（省略時はシナリオのseed）
        jobs: 並列に実行するプロセス数
        plots: プロットを出力するか

    Returns:
        pd.DataFrame: モードごとの評価指標
    """
    configs = [(mode, config.with_overrides(mode=mode)) for mode in modes]
    truth, measurements = simulate_scenario(scenario, seed)

    os.makedirs(output_dir, exist_ok=True)
    write_measurements(os.path.join(output_dir, "measurements.csv"), measurements)
    write_truth(os.path.join(output_dir, "truth.csv"), truth)

    tasks = [(cfg.preprocessing.label, cfg, measurements, truth) for _, cfg in configs]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            results = list(executor.map(_evaluate_mode, tasks))
    else:
        results = [_evaluate_mode(task) for task in tasks]

    rows = []
    for label, run, metrics in results:
        estimates_path = os.path.join(output_dir, f"estimates_{mode_file_label(label)}.csv")
        write_estimates(estimates_path, run.estimates, run.scales)
        if plots:
            render_plots(
                estimates_path,
                os.path.join(output_dir, "truth.csv"),
                os.path.join(output_dir, f"plots_{mode_file_label(label)}"),
                measurements_path=os.path.join(output_dir, "measurements.csv"),
            )
        counts = run.sensor_counts()
        rows.append(
            {
                "mode": label,
                **metrics.model_dump(),
                "final_cal1": run.final.calibrations[0],
                "final_cal2": run.final.calibrations[1],
                "rejected": sum(c.rejected for c in counts.values()),
                "max_scale": run.max_scale,
            }
        )
        logger.info(
            f"{label}: 速度RMSE={metrics.velocity_rmse:.4f} m/s, "
            f"距離誤差={metrics.terminal_distance_error:.2f} m"
        )

    table = pd.DataFrame(rows)
    table.to_csv(os.path.join(output_dir, "metrics.csv"), index=False, float_format="%.6g", lineterminator="\n")
    return table
