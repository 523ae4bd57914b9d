"""
オドメトリ推定ライブラリの例外定義

ライブラリ内の関数は例外を送出し、終了コードへの変換はCLI (src/cli.py) だけが行います。
"""
from typing import List, Optional, Tuple


class OdometryError(Exception):
    """本パッケージが送出するすべての例外の基底クラス"""


class InvalidInputError(OdometryError, ValueError):
    """入力値が事前条件を満たさない（非正のdt、非有限の観測値など）"""


class DomainError(InvalidInputError):
    """確率やz値が定義域の外にある"""


class NumericalError(OdometryError, ArithmeticError):
    """数値計算の失敗（非有限の状態、非正のイノベーション分散など）"""


class SingularModelError(NumericalError):
    """較正係数が下限を下回り、エンコーダ観測モデルが特異になった"""


class DegenerateVarianceError(NumericalError):
    """z検定に使う分散がどちらも下限未満"""


class ConsensusLogicError(OdometryError, RuntimeError):
    """SCAのループ条件が破られた（反復上限超過など）"""


class ConfigError(OdometryError):
    """設定ファイルまたはCLI引数が不正"""


class ParseError(OdometryError):
    """
    CSVの解析エラー

    Attributes:
        path: 対象ファイルのパス
        errors: (行番号, メッセージ) のリスト
    """

    def __init__(self, path: str, errors: List[Tuple[int, str]], message: Optional[str] = None):
        self.path = path
        self.errors = errors
        if message is None:
            shown = "; ".join(f"{line}行目: {msg}" for line, msg in errors[:10])
            more = f" (他{len(errors) - 10}件)" if len(errors) > 10 else ""
            message = f"{path} の解析に失敗しました: {shown}{more}"
        super().__init__(message)
