#!/usr/bin/env python3


class CondrandError(Exception):
    """condrand の全例外の基底クラス。

    ``exit_code`` はCLIが終了コードとしてそのまま使用します。
    """
    exit_code = 2


class UsageError(CondrandError):
    """コマンドラインの指定が矛盾している、または不正な場合。"""
    exit_code = 1


class ConfigError(UsageError):
    """設定ファイル・列名などの指定誤り。"""


class DomainError(CondrandError, ValueError):
    """入力データが演算の前提条件を満たさない場合。"""
    exit_code = 2


class DesignError(DomainError):
    """観測された割り付けが割り付けメカニズムの台に含まれない場合。"""


class StatisticError(DomainError):
    """検定統計量が定義できない場合 (空の群、空の層など)。

    Args:
        message (str): エラーメッセージ。
        row (int | None): バッチ評価時の行番号。
    """
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class CapacityError(CondrandError):
    """列挙数・セル数などの上限を超えた場合。"""
    exit_code = 3


class AcceptanceRateError(CapacityError):
    """棄却サンプリングが試行上限に達した場合。

    Args:
        tries (int): 試行回数。
        hits (int): 受理された回数。
    """
    def __init__(self, tries, hits, needed=1):
        super().__init__(
            f"Rejection sampler exhausted after {tries} tries with {hits} of {needed} draws accepted; "
            "coarsen the balance function or raise max_tries"
        )
        self.tries = tries
        self.hits = hits
        self.needed = needed


class VerificationError(CondrandError):
    """既知の結果との照合に失敗した場合。"""
    exit_code = 4
