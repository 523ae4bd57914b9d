"""
推定結果の可視化モジュール。
速度推定（μ±σ帯、センサ観測、真値）、較正係数、SCA倍率の時系列と、
合意分析の前後比較をSVGで出力します。
"""
import logging
import os
from typing import List, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from src.consensus.sca import ConsensusReport  # noqa: E402
from src.consensus.stats import norm_pdf  # noqa: E402
from src.data.csv_io import SCALE_SENSORS, read_estimates, read_measurements, read_truth  # noqa: E402
from src.errors import InvalidInputError  # noqa: E402

# ロギング設定
logger = logging.getLogger(__name__)

# 同じ入力から同じSVGを出力する
plt.rcParams["svg.hashsalt"] = "train-odometry"
_SVG_METADATA = {"Date": None}

SENSOR_COLORS = {
    "radar1": "tab:blue",
    "radar2": "tab:cyan",
    "encoder1": "tab:red",
    "encoder2": "tab:orange",
    "gps": "tab:gray",
}


def _save(fig, path: str) -> str:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_METADATA)
    plt.close(fig)
    logger.info(f"プロットを保存しました: {path}")
    return path


def render_plots(
    estimates_path: str,
    truth_path: Optional[str],
    output_dir: str,
    measurements_path: Optional[str] = None,
) -> List[str]:
    """
    推定CSVから3種類のプロットを出力します。

    Args:
        estimates_path: 推定CSVのパス
        truth_path: 真値CSVのパス（Noneなら真値を描かない）
        output_dir: 出力ディレクトリ
        measurements_path: 観測CSVのパス（指定するとセンサ観測を重ねて描く）

    Returns:
        List[str]: 出力したファイルのパス（velocity.svg, calibration.svg, scales.svg）

    Raises:
        InvalidInputError: 推定値が空の場合（ファイルは出力しない）
    """
    estimates = read_estimates(estimates_path)
    if estimates.empty:
        raise InvalidInputError(f"推定値が空です: {estimates_path}")
    truth = read_truth(truth_path) if truth_path else []
    measurements = read_measurements(measurements_path) if measurements_path else []

    os.makedirs(output_dir, exist_ok=True)
    t = estimates["time_s"].to_numpy()
    v = estimates["velocity_mps"].to_numpy()
    std = estimates["std_velocity_mps"].to_numpy()
    paths = []

    # 速度
    fig, ax = plt.subplots(figsize=(10, 5))
    for sensor, color in SENSOR_COLORS.items():
        points = [(m.timestamp, m.mean) for m in measurements if m.sensor.value == sensor]
        if points:
            mt, mv = zip(*points)
            ax.plot(mt, mv, ".", markersize=1.5, color=color, alpha=0.5, label=sensor)
    if truth:
        ax.plot([s.timestamp for s in truth], [s.velocity for s in truth], "k--", linewidth=1.0, label="truth")
    ax.fill_between(t, v - std, v + std, color="tab:green", alpha=0.3, label="estimate ±σ")
    ax.plot(t, v, color="tab:green", linewidth=1.2, label="estimate")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("velocity [m/s]")
    ax.legend(loc="best", fontsize="small")
    ax.grid(True, alpha=0.3)
    paths.append(_save(fig, os.path.join(output_dir, "velocity.svg")))

    # 較正係数
    fig, ax = plt.subplots(figsize=(10, 4))
    ax.plot(t, estimates["cal1"], color=SENSOR_COLORS["encoder1"], label="cal1")
    ax.plot(t, estimates["cal2"], color=SENSOR_COLORS["encoder2"], label="cal2")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("calibration factor")
    ax.legend(loc="best", fontsize="small")
    ax.grid(True, alpha=0.3)
    paths.append(_save(fig, os.path.join(output_dir, "calibration.svg")))

    # SCA倍率
    fig, ax = plt.subplots(figsize=(10, 4))
    for sensor in SCALE_SENSORS:
        ax.plot(t, estimates[f"scale_{sensor.value}"], color=SENSOR_COLORS[sensor.value], label=sensor.value)
    ax.set_yscale("log")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("variance scale")
    ax.legend(loc="best", fontsize="small")
    ax.grid(True, alpha=0.3)
    paths.append(_save(fig, os.path.join(output_dir, "scales.svg")))

    return paths


def render_consensus_demo(report: ConsensusReport, path: str) -> str:
    """
    合意分析の前後の正規分布を上下に並べて描きます。

    Args:
        report: SCAの実行結果
        path: 出力するSVGのパス

    Returns:
        str: 出力したファイルのパス
    """
    if not report.measurements:
        raise InvalidInputError("観測が空です")
    before = report.measurements
    after = report.scaled_measurements

    sigmas = [np.sqrt(m.variance) for m in after]
    lo = min(m.mean - 4.0 * s for m, s in zip(after, sigmas))
    hi = max(m.mean + 4.0 * s for m, s in zip(after, sigmas))
    x = np.linspace(lo, hi, 600)

    fig, axes = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    for ax, items, title in ((axes[0], before, "input"), (axes[1], after, f"scaled (p={report.p:g})")):
        for k, m in enumerate(items):
            sigma = np.sqrt(m.variance)
            density = np.array([norm_pdf(u) for u in (x - m.mean) / sigma]) / sigma
            label = chr(ord("a") + k) if k < 26 else str(k)
            ax.plot(x, density, label=f"{label} ({m.sensor.value}, ×{report.scales[k]:.3g})")
        ax.set_title(title)
        ax.set_ylabel("density")
        ax.grid(True, alpha=0.3)
        ax.legend(loc="best", fontsize="small")
    axes[1].set_xlabel("velocity [m/s]")

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    return _save(fig, path)
