"""
异常定义模块

所有库内异常均继承 NestedMaxError，并携带 CLI 退出码：
    0 成功 / 1 内部错误 / 2 校验失败 / 3 读写失败 / 4 数值失败
"""

from typing import List, Optional, Sequence, Tuple

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


class NestedMaxError(Exception):
    """库内异常基类"""

    exit_code = EXIT_INTERNAL


class ValidationError(NestedMaxError):
    """配置或树结构校验失败，可携带全部违规项"""

    exit_code = EXIT_VALIDATION

    def __init__(self, message: str, violations: Optional[Sequence[str]] = None):
        self.violations: List[str] = list(violations or [])
        if self.violations:
            message = message + ": " + "; ".join(self.violations)
        super().__init__(message)


class DomainError(NestedMaxError, ValueError):
    """参数超出定义域"""

    exit_code = EXIT_VALIDATION


class UnsupportedDegenerateError(DomainError):
    """alpha = 1 的退化点质量没有密度"""


class StructuralError(NestedMaxError):
    """维度或标签不一致"""

    exit_code = EXIT_VALIDATION


class LookupFailure(NestedMaxError, KeyError):
    """未知的叶子或参数名"""

    exit_code = EXIT_VALIDATION

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class GevSupportError(NestedMaxError, ValueError):
    """GEV 支撑集约束 1 + xi (z - mu) / sigma > 0 被违反"""

    exit_code = EXIT_NUMERICAL

    def __init__(self, message: str, cells: Sequence[Tuple[int, ...]] = ()):
        self.cells: List[Tuple[int, ...]] = [tuple(int(i) for i in c) for c in cells]
        if self.cells:
            shown = ", ".join(str(c) for c in self.cells[:10])
            more = f" (共 {len(self.cells)} 个)" if len(self.cells) > 10 else ""
            message = f"{message}: {shown}{more}"
        super().__init__(message)


class DataIOError(NestedMaxError, OSError):
    """文件读写失败"""

    exit_code = EXIT_IO


class NumericalError(NestedMaxError, ArithmeticError):
    """数值计算失败（如初始对数后验非有限）"""

    exit_code = EXIT_NUMERICAL
