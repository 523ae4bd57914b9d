"""
実行設定とシナリオ設定の読み込み

設定はYAML（yaml.safe_load）で記述し、pydanticモデルで検証します。
未知のキーはエラーになります。
"""
import logging
import math
import os
from typing import Any, Dict, List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.errors import ConfigError
from src.estimation.ekf import DEFAULT_INITIAL_COVARIANCE, STATE_DIM, NoiseConfig
from src.simulation.scenario import ScenarioConfig

logger = logging.getLogger(__name__)

DEFAULT_NIS_THRESHOLD = 3.0
DEFAULT_CONSENSUS_P = 0.9


class PreprocessingMode(BaseModel):
    """
    観測の前処理モード

    none: そのまま融合 / nis: マハラノビス距離で棄却 / sca: センサ合意分析で分散を拡大
    """

    model_config = ConfigDict(frozen=True)

    kind: Literal["none", "nis", "sca"]
    value: Optional[float] = None

    @property
    def label(self) -> str:
        if self.kind == "none":
            return "none"
        return f"{self.kind}:{self.value:g}"

    def __str__(self) -> str:
        return self.label


def parse_mode(
    text: str,
    nis_threshold: float = DEFAULT_NIS_THRESHOLD,
    consensus_p: float = DEFAULT_CONSENSUS_P,
) -> PreprocessingMode:
    """
    "none" / "nis:3" / "sca:0.9" 形式のモード文字列を解析します。
    値を省略した "nis" / "sca" には nis_threshold / consensus_p を使います。

    Raises:
        ConfigError: 形式や値の範囲が不正な場合
    """
    kind, _, raw = text.strip().lower().partition(":")
    if kind == "none":
        if raw:
            raise ConfigError(f"モード none に値は指定できません: {text}")
        return PreprocessingMode(kind="none")
    if kind not in ("nis", "sca"):
        raise ConfigError(f"不明な前処理モードです: {text}（none, nis:<t>, sca:<p> のいずれか）")

    if raw:
        try:
            value = float(raw)
        except ValueError:
            raise ConfigError(f"モードの値が数値ではありません: {text}")
    else:
        value = nis_threshold if kind == "nis" else consensus_p

    if kind == "nis" and not (math.isfinite(value) and value > 0.0):
        raise ConfigError(f"NISしきい値は正である必要があります: {value}")
    if kind == "sca" and not (math.isfinite(value) and 0.0 <= value < 1.0):
        raise ConfigError(f"合意確率pは0以上1未満である必要があります: {value}")
    return PreprocessingMode(kind=kind, value=value)


class RunConfig(BaseModel):
    """
    フィルタ実行の設定

    Attributes:
        noise: プロセスノイズと測定ノイズ下限
        mode: 前処理モード文字列（none / nis[:t] / sca[:p]）
        nis_threshold: 値を省略したnisモードのしきい値
        consensus_p: 値を省略したscaモードの合意確率
        staleness_window: 合意集合に含める最終観測の最大経過時間 (s)
        consensus_space: エンコーダを較正後の速度空間で比較するか (calibrated | raw)
        fuse_gps: GPSを速度センサとして融合するか（既定は評価専用）
        output_rate: 推定値の出力レート (Hz)
        calibration_enabled: 較正係数を推定するか
        initial_covariance: 初期共分散の対角成分
        initial_calibration: 較正係数の初期値
        wear_alert_threshold: 車輪摩耗アラートを出す |較正係数 − 1| のしきい値
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    noise: NoiseConfig = NoiseConfig()
    mode: str = "sca"
    nis_threshold: float = Field(default=DEFAULT_NIS_THRESHOLD, gt=0.0)
    consensus_p: float = Field(default=DEFAULT_CONSENSUS_P, ge=0.0, lt=1.0)
    staleness_window: float = Field(default=1.0, gt=0.0)
    consensus_space: Literal["calibrated", "raw"] = "calibrated"
    fuse_gps: bool = False
    output_rate: float = Field(default=10.0, gt=0.0)
    calibration_enabled: bool = True
    initial_covariance: List[float] = list(DEFAULT_INITIAL_COVARIANCE)
    initial_calibration: Tuple[float, float] = (1.0, 1.0)
    wear_alert_threshold: float = Field(default=0.05, gt=0.0)

    @field_validator("initial_covariance")
    @classmethod
    def _check_covariance(cls, value: List[float]) -> List[float]:
        if len(value) != STATE_DIM or any(not (math.isfinite(v) and v >= 0.0) for v in value):
            raise ValueError("initial_covariance は0以上の値5個で指定してください")
        return value

    @field_validator("initial_calibration")
    @classmethod
    def _check_calibration(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if any(not (math.isfinite(v) and v > 0.0) for v in value):
            raise ValueError("initial_calibration は正の値である必要があります")
        return value

    @model_validator(mode="after")
    def _check_mode(self) -> "RunConfig":
        try:
            parse_mode(self.mode, self.nis_threshold, self.consensus_p)
        except ConfigError as e:
            raise ValueError(str(e)) from e
        return self

    @property
    def preprocessing(self) -> PreprocessingMode:
        return parse_mode(self.mode, self.nis_threshold, self.consensus_p)

    def with_overrides(self, **changes: Any) -> "RunConfig":
        """値を差し替えて再検証したコピーを返す（CLIフラグの上書き用）"""
        changes = {k: v for k, v in changes.items() if v is not None}
        if not changes:
            return self
        return _validate(RunConfig, {**self.model_dump(), **changes}, "コマンドライン引数")


def _format_validation_error(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(p) for p in item["loc"]) or "(root)"
        parts.append(f"{location}: {item['msg']}")
    return "; ".join(parts)


def _validate(model, data: Dict[str, Any], source: str):
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"{source} の設定が不正です: {_format_validation_error(e)}") from e


def load_yaml(file_path: str) -> Dict[str, Any]:
    """
    YAMLファイルを辞書として読み込みます。

    Args:
        file_path: YAMLファイルのパス

    Returns:
        YAMLの内容を表す辞書（空ファイルなら空の辞書）

    Raises:
        ConfigError: ファイルが読めない、YAMLとして不正、最上位が辞書でない場合
    """
    if not os.path.isfile(file_path):
        raise ConfigError(f"設定ファイルが見つかりません: {file_path}")
    try:
        with open(file_path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"設定ファイルの読み込みに失敗しました: {file_path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"設定ファイルの最上位はマッピングである必要があります: {file_path}")
    return data


def load_run_config(file_path: Optional[str] = None) -> RunConfig:
    """実行設定を読み込む。パス省略時は既定値"""
    if file_path is None:
        return RunConfig()
    config = _validate(RunConfig, load_yaml(file_path), file_path)
    logger.info(f"実行設定を読み込みました: {file_path} (mode={config.preprocessing})")
    return config


def load_scenario(file_path: str) -> ScenarioConfig:
    """シナリオ設定を読み込む"""
    scenario = _validate(ScenarioConfig, load_yaml(file_path), file_path)
    logger.info(f"シナリオを読み込みました: {file_path} ({scenario.name})")
    return scenario
