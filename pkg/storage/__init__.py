"""输出存储模块：CSV / JSON 原子写入与溯源文件"""

from storage.csv_storage import CsvStorage, read_frame

__all__ = ["CsvStorage", "read_frame"]
