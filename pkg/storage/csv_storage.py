"""
CSV / JSON 输出存储模块
负责把模拟样本、后验链、汇总和诊断表写入输出目录

所有文件先写入同目录的临时文件再 os.replace 到位，失败时不留下半成品；
浮点格式固定、不写时间戳，相同配置和种子重跑得到逐字节相同的文件。
"""

import json
import os
import re
import tempfile
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from utils.errors import DataIOError
from utils.logger import get_logger

logger = get_logger()

FLOAT_FORMAT = "%.10g"


class CsvStorage:
    """输出文件管理器"""

    def __init__(self, config: dict):
        storage_config = config.get("storage", {}) or {}
        self.output_dir = storage_config.get("output_dir", "./output")
        self.encoding = storage_config.get("encoding", "utf-8")
        self.float_format = storage_config.get("float_format", FLOAT_FORMAT)
        self.written: List[str] = []

    def _prepare_dir(self, subdir: str = "") -> str:
        save_dir = os.path.join(self.output_dir, self._safe_name(subdir)) if subdir else self.output_dir
        try:
            os.makedirs(save_dir, exist_ok=True)
        except OSError as e:
            raise DataIOError(f"无法创建输出目录 {save_dir}: {e}") from e
        return save_dir

    def _atomic_write(self, filepath: str, text: str):
        """写临时文件后原子替换"""
        directory = os.path.dirname(filepath) or "."
        fd, tmp_path = tempfile.mkstemp(prefix=".tmp_", suffix=".part", dir=directory)
        try:
            with os.fdopen(fd, "w", encoding=self.encoding, newline="") as f:
                f.write(text)
            os.replace(tmp_path, filepath)
        except OSError as e:
            if os.path.exists(tmp_path):
                os.remove(tmp_path)
            raise DataIOError(f"写入文件失败 {filepath}: {e}") from e
        self.written.append(filepath)

    def save_frame(self, frame: pd.DataFrame, name: str, subdir: str = "") -> str:
        """
        将 DataFrame 保存为 CSV

        Args:
            frame: 数据表（列顺序即输出顺序，不写行索引）
            name: 文件名（不含扩展名）
            subdir: 子目录名（可选）

        Returns:
            保存的文件路径
        """
        save_dir = self._prepare_dir(subdir)
        filepath = os.path.join(save_dir, self._safe_name(name) + ".csv")
        text = frame.to_csv(index=False, float_format=self.float_format, lineterminator="\n")
        self._atomic_write(filepath, text)
        logger.info("数据已保存: %s (%d 行, %d 列)", filepath, len(frame), len(frame.columns))
        return filepath

    def save_json(self, payload: Dict, name: str, subdir: str = "") -> str:
        """保存 JSON（键排序、缩进 2，numpy 标量自动转换）"""
        save_dir = self._prepare_dir(subdir)
        filepath = os.path.join(save_dir, self._safe_name(name) + ".json")
        text = json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False,
                          default=_to_builtin) + "\n"
        self._atomic_write(filepath, text)
        logger.info("JSON 已保存: %s", filepath)
        return filepath

    def save_provenance(self, command: str, digest: str, seed, version: str,
                        extra: Optional[Dict] = None) -> str:
        """
        写出溯源文件 provenance_<command>.json

        内容足以复现本次输出：配置摘要、种子、版本号及命令相关的附加信息。
        """
        payload = {
            "command": command,
            "config_digest": digest,
            "seed": seed,
            "version": version,
            "outputs": sorted(os.path.basename(p) for p in self.written),
        }
        if extra:
            payload.update(extra)
        return self.save_json(payload, f"provenance_{command}")

    @staticmethod
    def _safe_name(name: str) -> str:
        """
        将名称转为安全的文件名（去除特殊字符）

        Args:
            name: 原始名称

        Returns:
            安全的文件名
        """
        # 保留中文、字母、数字、点、连字符、下划线
        safe = re.sub(r'[^\w\u4e00-\u9fff\-.]', '_', str(name))
        # 合并连续下划线
        safe = re.sub(r'_+', '_', safe)
        return safe.strip("_")


def _to_builtin(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return None if not np.isfinite(value) else float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (set, tuple)):
        return list(value)
    raise TypeError(f"无法序列化为 JSON: {type(value).__name__}")


def read_frame(path: str) -> pd.DataFrame:
    """读取 CSV 输出文件（链文件、边缘参数表等）"""
    if not os.path.exists(path):
        raise DataIOError(f"文件不存在: {path}")
    try:
        return pd.read_csv(path)
    except Exception as e:
        raise DataIOError(f"读取文件失败 {path}: {e}") from e
