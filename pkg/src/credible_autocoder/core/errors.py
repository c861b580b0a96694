from __future__ import annotations

from typing import Sequence

from .types import Diagnostic


class AutocoderError(Exception):
    """管線執行時的基底例外。"""


class ConfigurationError(AutocoderError):
    """設定或環境變數錯誤。"""


class _DiagnosticError(AutocoderError):
    def __init__(self, message: str, diagnostics: Sequence[Diagnostic] = ()) -> None:
        super().__init__(message)
        self.diagnostics = list(diagnostics)

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostics:
            return base
        lines = [base, *(f"  - {item.render()}" for item in self.diagnostics)]
        return "\n".join(lines)


class ModelParseError(_DiagnosticError):
    """模型檔語法或結構錯誤。"""


class ModelValidationError(_DiagnosticError):
    """模型語意檢查失敗。"""


class NumericsError(AutocoderError):
    """數值計算錯誤。"""


class InstabilityError(NumericsError):
    """系統矩陣不穩定（譜半徑 >= 1）。"""


class ConvergenceError(NumericsError):
    """疊代在上限內未收斂。"""

    def __init__(self, message: str, residual: float) -> None:
        super().__init__(f"{message}（最後殘差 {residual:.3e}）")
        self.residual = residual


class AsymmetricMatrixError(NumericsError):
    """矩陣不對稱。"""


class NonFiniteError(NumericsError):
    """函數在某點回傳非有限值。"""

    def __init__(self, message: str, point: object) -> None:
        super().__init__(message)
        self.point = point


class VehicleSingularityError(AutocoderError):
    """車輛模型奇異點（輪速或滑移超出容許範圍）。"""


class EquilibriumError(AutocoderError):
    """平衡點精化失敗。"""

    def __init__(self, message: str, residual: float) -> None:
        super().__init__(f"{message}（殘差 {residual:.3e}）")
        self.residual = residual


class CodegenError(AutocoderError):
    """程式生成錯誤。"""


class PlacementError(CodegenError):
    """合約放置錯誤。"""


class PropagationError(AutocoderError):
    """不變量傳遞錯誤。"""


class NonlinearStatementError(PropagationError):
    """線性迴路內出現非仿射敘述。"""

    def __init__(self, message: str, statement: str) -> None:
        super().__init__(f"{message}: {statement}")
        self.statement = statement


class DegenerateImageError(PropagationError):
    """仿射映射秩不足，像集退化。"""


class VerificationError(AutocoderError):
    """驗證條件生成或判定錯誤。"""


class BoundsError(AutocoderError):
    """變數界限萃取缺少必要前提。"""


class SimulationError(AutocoderError):
    """模擬錯誤。"""


class IntegrationError(SimulationError):
    """積分過程出現非有限狀態。"""

    def __init__(self, message: str, step: int) -> None:
        super().__init__(f"{message}（第 {step} 步）")
        self.step = step
