"""
センサ合意分析 (Sensor Consensus Analysis, SCA)

同じ物理量（速度）を測る複数のセンサ観測について、ペアごとのz検定で
一致しているかを調べ、一致しない観測の分散を最小限だけ拡大して
すべてのペアが合意に達するようにします。
"""
import logging
import math
from typing import Dict, List, NamedTuple, Sequence

from pydantic import BaseModel, ConfigDict, field_validator

from src.consensus.stats import norminv
from src.errors import ConsensusLogicError, DegenerateVarianceError, DomainError, InvalidInputError
from src.estimation.sensors import Measurement, SensorKind

logger = logging.getLogger(__name__)

# z検定に使う分散の下限 ((m/s)²)
VARIANCE_FLOOR = 1e-12
# 境界ちょうどのペアを合意とみなす許容誤差
BOUNDARY_TOLERANCE = 1e-12

ScaleVector = List[float]


class PairZ(NamedTuple):
    i: int
    j: int
    z: float


class ConsensusReport(BaseModel):
    """
    SCAの実行結果

    Attributes:
        measurements: 入力観測（分散拡大前）
        scales: 観測ごとの分散倍率（すべて1以上）
        iterations: 合意ループの反復回数
        pair_z: 拡大後の全ペアのz値
        p: 合意確率
    """

    model_config = ConfigDict(frozen=True)

    measurements: List[Measurement]
    scales: ScaleVector
    iterations: int = 0
    pair_z: List[PairZ] = []
    p: float = 0.0

    @field_validator("scales")
    @classmethod
    def _check_scales(cls, value: ScaleVector) -> ScaleVector:
        for s in value:
            if not (math.isfinite(s) and s >= 1.0):
                raise ValueError(f"倍率は1以上の有限値である必要があります: {s}")
        return value

    @property
    def scaled_measurements(self) -> List[Measurement]:
        return scale_measurements(self.measurements, self.scales)

    def scale_by_sensor(self) -> Dict[SensorKind, float]:
        return {m.sensor: s for m, s in zip(self.measurements, self.scales)}

    @property
    def max_scale(self) -> float:
        return max(self.scales, default=1.0)


def _check_probability(p: float) -> None:
    if not (isinstance(p, (int, float)) and math.isfinite(p) and 0.0 <= p < 1.0):
        raise DomainError(f"合意確率pは0以上1未満である必要があります: {p}")


def desired_z(p: float) -> float:
    """合意確率pに対応するしきい値 norminv(p/2)（p=0なら-inf）"""
    _check_probability(p)
    if p == 0.0:
        return -math.inf
    return norminv(p / 2.0)


def z_test(m1: Measurement, m2: Measurement) -> float:
    """
    2つの観測が同じ母平均を持つかのz値 -|μ1-μ2| / sqrt(σ1²+σ2²) を返します。

    Raises:
        DegenerateVarianceError: 両方の分散が下限未満の場合
    """
    if m1.variance < VARIANCE_FLOOR and m2.variance < VARIANCE_FLOOR:
        raise DegenerateVarianceError(
            f"{m1.sensor.value} と {m2.sensor.value} の分散がどちらも下限未満です"
        )
    total = max(m1.variance, VARIANCE_FLOOR) + max(m2.variance, VARIANCE_FLOOR)
    return -abs(m1.mean - m2.mean) / math.sqrt(total)


def _passes(z: float, z_desired: float) -> bool:
    return z >= z_desired - BOUNDARY_TOLERANCE


def in_consensus(m1: Measurement, m2: Measurement, p: float) -> bool:
    """z_test(m1, m2) >= norminv(p/2) なら合意。p=0は常に合意"""
    z_desired = desired_z(p)
    if p == 0.0:
        return True
    return _passes(z_test(m1, m2), z_desired)


def _check_target_z(z: float) -> None:
    if not (math.isfinite(z) and z < 0.0):
        raise DomainError(f"目標z値は負である必要があります: {z}")


def scale_both(mi: Measurement, mj: Measurement, z: float) -> float:
    """
    両方の分散に掛けるとz検定値がちょうどzになる倍率

    s = (μi-μj)² / (z²(σi²+σj²))。μi=μjなら0を返します。
    """
    _check_target_z(z)
    diff = mi.mean - mj.mean
    return diff * diff / (z * z * (mi.variance + mj.variance))


def scale_one(mi: Measurement, mj: Measurement, z: float) -> float:
    """
    miの分散だけに掛けるとz検定値がちょうどzになる倍率

    s = (((μi-μj)/z)² - σj²) / σi²
    """
    _check_target_z(z)
    ratio = (mi.mean - mj.mean) / z
    return (ratio * ratio - mj.variance) / mi.variance


def _z_matrix(N: Sequence[Measurement]) -> List[List[float]]:
    n = len(N)
    z = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            z[i][j] = z[j][i] = z_test(N[i], N[j])
    return z


def consensus_counts(N: Sequence[Measurement], p: float) -> List[int]:
    """各観測が合意している他の観測の数"""
    z_desired = desired_z(p)
    n = len(N)
    if p == 0.0:
        return [n - 1] * n
    z = _z_matrix(N)
    return [sum(1 for j in range(n) if j != i and _passes(z[i][j], z_desired)) for i in range(n)]


def calculate_min_scale(L: Sequence[int], N: Sequence[Measurement], p: float) -> float:
    """
    L内の観測の少なくとも1つが、それまで合意していなかった観測と
    合意に達するための最小倍率を求めます。

    相手もLに含まれる場合は両方を拡大する倍率、含まれない場合は
    L側だけを拡大する倍率を使います。

    Args:
        L: 拡大対象の観測インデックス
        N: 現在（拡大済み）の観測リスト
        p: 合意確率

    Returns:
        float: 最小倍率 c (> 1)

    Raises:
        ConsensusLogicError: Lに関わる非合意ペアが存在しない場合
    """
    if not L:
        raise ConsensusLogicError("拡大対象のインデックスが空です")
    z_desired = desired_z(p)
    members = set(L)
    c = math.inf
    for i in L:
        for j in range(len(N)):
            if j == i or _passes(z_test(N[i], N[j]), z_desired):
                continue
            if j in members:
                s = scale_both(N[i], N[j], z_desired)
            else:
                s = scale_one(N[i], N[j], z_desired)
            c = min(c, s)
    if math.isinf(c):
        raise ConsensusLogicError(f"インデックス {list(L)} に非合意のペアがありません")
    return c


def scale_measurements(M: Sequence[Measurement], S: Sequence[float]) -> List[Measurement]:
    """k番目の観測の分散をS[k]倍したリストを返す（平均と時刻は変えない）"""
    if len(M) != len(S):
        raise InvalidInputError(f"観測数 {len(M)} と倍率数 {len(S)} が一致しません")
    for s in S:
        if not (math.isfinite(s) and s >= 1.0):
            raise InvalidInputError(f"倍率は1以上の有限値である必要があります: {s}")
    return [m if s == 1.0 else m.with_variance(m.variance * s) for m, s in zip(M, S)]


def pair_z_values(N: Sequence[Measurement]) -> List[PairZ]:
    """i<j の全ペアのz値"""
    n = len(N)
    return [PairZ(i, j, z_test(N[i], N[j])) for i in range(n) for j in range(i + 1, n)]


def iteration_cap(n: int) -> int:
    return n * (n - 1) // 2 + 1


def sca(M: Sequence[Measurement], p: float) -> ConsensusReport:
    """
    センサ合意分析を実行します。

    倍率をすべて1で初期化し、非合意のペアが残る間、合意数が最小の
    観測群の倍率に最小倍率を掛けて再スケールすることを繰り返します。

    Args:
        M: 観測リスト
        p: 合意確率 (0 <= p < 1)。0なら何もしない

    Returns:
        ConsensusReport: 最終倍率と診断情報
    """
    _check_probability(p)
    measurements = list(M)
    n = len(measurements)
    scales = [1.0] * n

    if n <= 1 or p == 0.0:
        return ConsensusReport(
            measurements=measurements,
            scales=scales,
            pair_z=pair_z_values(measurements) if n > 1 else [],
            p=p,
        )

    z_desired = desired_z(p)
    cap = iteration_cap(n)
    current = measurements
    iterations = 0
    while not all(_passes(pz.z, z_desired) for pz in pair_z_values(current)):
        iterations += 1
        if iterations > cap:
            raise ConsensusLogicError(f"SCAの反復回数が上限 {cap} を超えました (n={n})")
        counts = consensus_counts(current, p)
        fewest = min(counts)
        L = [i for i, count in enumerate(counts) if count == fewest]
        c = calculate_min_scale(L, current, p)
        for i in L:
            scales[i] *= c
        current = scale_measurements(measurements, scales)
        logger.debug(f"SCA反復 {iterations}: 対象={L} 倍率={c:.4g}")

    return ConsensusReport(
        measurements=measurements,
        scales=scales,
        iterations=iterations,
        pair_z=pair_z_values(current),
        p=p,
    )
