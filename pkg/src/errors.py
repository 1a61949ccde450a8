"""
例外定義モジュール

コーデック全体で使用する例外クラスを定義します。
各クラスは CLI の終了コードと HTTP ステータスコードを持ちます。
"""

from typing import Optional


class HiNeRVError(Exception):
    """コーデックの基底例外"""

    exit_code: int = 1
    status_code: int = 500

    def __init__(self, message: str, stage: Optional[str] = None):
        """HiNeRVErrorの初期化

        Args:
            message (str): エラーメッセージ
            stage (Optional[str], optional): 失敗したパイプライン段階 (train, prune など)。
        """
        super().__init__(message)
        self.message = message
        self.stage = stage

    def __str__(self) -> str:
        if self.stage:
            return f"{self.stage}: {self.message}"
        return self.message


class ConfigurationError(HiNeRVError):
    """形状・設定値・パディングの不整合"""

    exit_code = 2
    status_code = 400


class UsageError(HiNeRVError):
    """API の誤用 (非スカラーの backward、範囲外のパッチなど)"""

    exit_code = 2
    status_code = 400


class VideoIOError(HiNeRVError):
    """動画ファイルの読み書きに失敗"""

    exit_code = 3
    status_code = 404


class BitstreamError(HiNeRVError):
    """ビットストリームの破損・バージョン不一致"""

    exit_code = 4
    status_code = 422


class NumericError(HiNeRVError):
    """学習中の非有限値"""

    exit_code = 5
    status_code = 500
