"""
数据质量校验模块
对长表格式的块最大值数据做完整性和质量检查
"""

from typing import Iterable, List

import numpy as np
import pandas as pd

from utils.logger import get_logger

logger = get_logger()


class DataValidator:
    """数据质量校验器：收集错误（致命）与警告（提示）"""

    def __init__(self):
        self.errors: List[str] = []
        self.warnings: List[str] = []

    def reset(self):
        """重置错误和警告列表"""
        self.errors = []
        self.warnings = []

    @property
    def passed(self) -> bool:
        return not self.errors

    def validate_not_empty(self, frame: pd.DataFrame, name: str) -> bool:
        """检查数据是否为空"""
        if frame is None or frame.empty:
            self.errors.append(f"[{name}] 数据为空")
            return False
        return True

    def validate_required_fields(self, frame: pd.DataFrame, required_fields: Iterable[str],
                                 name: str) -> bool:
        """检查必填列是否存在"""
        missing = [f for f in required_fields if f not in frame.columns]
        if missing:
            self.errors.append(f"[{name}] 缺少必填字段: {', '.join(missing)}")
            return False
        return True

    def validate_numeric(self, frame: pd.DataFrame, field: str, name: str) -> bool:
        """检查数值列能否转为数值（空值视为缺失，允许）"""
        values = pd.to_numeric(frame[field], errors="coerce")
        bad = values.isna() & frame[field].notna() & (frame[field].astype(str).str.strip() != "")
        if bad.any():
            rows = (np.flatnonzero(bad.to_numpy()) + 1)[:5].tolist()
            self.errors.append(f"[{name}] {field} 有 {int(bad.sum())} 个值无法转为数值，行号如 {rows}")
            return False
        return True

    def validate_positive(self, frame: pd.DataFrame, field: str, name: str) -> bool:
        """单位 Fréchet 尺度的数据必须为正"""
        values = pd.to_numeric(frame[field], errors="coerce")
        bad = values.notna() & (values <= 0)
        if bad.any():
            self.errors.append(f"[{name}] {field} 有 {int(bad.sum())} 个非正值（Fréchet 尺度要求 > 0）")
            return False
        return True

    def validate_unique_cells(self, frame: pd.DataFrame, keys: List[str], name: str) -> bool:
        """每个 (站点, 变量, 重复) 只能出现一次"""
        dup = frame.duplicated(subset=keys, keep=False)
        if dup.any():
            example = frame.loc[dup, keys].iloc[0].tolist()
            self.errors.append(f"[{name}] 存在 {int(dup.sum())} 行重复记录，例如 {example}")
            return False
        return True

    def validate_site_coordinates(self, frame: pd.DataFrame, coord_fields: List[str],
                                  name: str) -> bool:
        """同一站点的坐标必须一致"""
        counts = frame.groupby("site_id")[coord_fields].nunique()
        bad = counts[(counts > 1).any(axis=1)]
        if not bad.empty:
            self.errors.append(
                f"[{name}] 站点坐标不一致: {', '.join(map(str, bad.index[:5]))}"
            )
            return False
        return True

    def validate_replicates(self, frame: pd.DataFrame, name: str) -> bool:
        """重复编号应为 0..N-1 的连续整数"""
        reps = pd.to_numeric(frame["replicate"], errors="coerce")
        if reps.isna().any() or (reps % 1 != 0).any() or (reps < 0).any():
            self.errors.append(f"[{name}] replicate 必须是非负整数")
            return False
        unique = np.unique(reps.astype(int))
        if unique.size and not np.array_equal(unique, np.arange(unique.size)):
            self.warnings.append(
                f"[{name}] replicate 编号不连续（{unique.size} 个不同值，最大 {unique.max()}），按出现的编号重新排列"
            )
        return True

    def validate_row_count(self, n_rep: int, expected_min: int, name: str = "") -> bool:
        """检查重复数是否达到预期最小值"""
        if n_rep < expected_min:
            self.warnings.append(f"[{name}] 重复数 {n_rep} 少于建议的最小值 {expected_min}")
            return False
        return True

    def get_report(self) -> str:
        """生成校验报告"""
        lines = ["=" * 50, "数据质量校验报告", "=" * 50]

        if self.errors:
            lines.append(f"\n错误 ({len(self.errors)}):")
            for e in self.errors:
                lines.append(f"  [ERROR] {e}")

        if self.warnings:
            lines.append(f"\n警告 ({len(self.warnings)}):")
            for w in self.warnings:
                lines.append(f"  [WARN]  {w}")

        if not self.errors and not self.warnings:
            lines.append("\n所有检查通过，数据质量良好。")

        lines.append("=" * 50)
        return "\n".join(lines)
