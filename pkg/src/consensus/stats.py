"""
標準正規分布の補助関数

norminv は有理関数近似で初期値を求め、erfcベースのCDFに対して
ニュートン法を1回適用して精度を上げます。
"""
import math

from src.errors import DomainError

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# 有理関数近似の係数
_A = (
    -3.969683028665376e01,
    2.209460984245205e02,
    -2.759285104469687e02,
    1.383577518672690e02,
    -3.066479806614716e01,
    2.506628277459239e00,
)
_B = (
    -5.447609879822406e01,
    1.615858368580409e02,
    -1.556989798598866e02,
    6.680131188771972e01,
    -1.328068155288572e01,
)
_C = (
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e00,
    -2.549732539343734e00,
    4.374664141464968e00,
    2.938163982698783e00,
)
_D = (
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e00,
    3.754408661907416e00,
)
_P_LOW = 0.02425


def norm_cdf(x: float) -> float:
    """標準正規分布の累積分布関数 Φ(x)"""
    return 0.5 * math.erfc(-x / _SQRT2)


def norm_pdf(x: float) -> float:
    """標準正規分布の確率密度関数 φ(x)"""
    return _INV_SQRT_2PI * math.exp(-0.5 * x * x)


def _rational_lower(q: float) -> float:
    # q <= 0.5 の範囲の近似値
    if q < _P_LOW:
        r = math.sqrt(-2.0 * math.log(q))
        num = ((((_C[0] * r + _C[1]) * r + _C[2]) * r + _C[3]) * r + _C[4]) * r + _C[5]
        den = (((_D[0] * r + _D[1]) * r + _D[2]) * r + _D[3]) * r + 1.0
        return num / den
    r = q - 0.5
    s = r * r
    num = (((((_A[0] * s + _A[1]) * s + _A[2]) * s + _A[3]) * s + _A[4]) * s + _A[5]) * r
    den = ((((_B[0] * s + _B[1]) * s + _B[2]) * s + _B[3]) * s + _B[4]) * s + 1.0
    return num / den


def _lower(q: float) -> float:
    x = _rational_lower(q)
    density = norm_pdf(x)
    if density > 0.0:
        x -= (norm_cdf(x) - q) / density
    return x


def norminv(q: float) -> float:
    """
    標準正規分布の逆累積分布関数

    Args:
        q: 確率 (0 < q < 1)

    Returns:
        float: Φ(z) = q となる z

    Raises:
        DomainError: qが(0, 1)の外、または非有限の場合
    """
    if not (isinstance(q, (int, float)) and math.isfinite(q) and 0.0 < q < 1.0):
        raise DomainError(f"確率は0より大きく1未満である必要があります: {q}")
    if q == 0.5:
        return 0.0
    if q < 0.5:
        return _lower(q)
    # 上側は対称性で下側に帰着（0.5 < q < 1 では 1 - q は丸め誤差なし）
    return -_lower(1.0 - q)
