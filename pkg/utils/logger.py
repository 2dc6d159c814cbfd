"""
日志管理模块
所有命令共用一个命名日志器；日志文件按命令名区分，不带时间戳
"""

import logging
import os
from logging.handlers import RotatingFileHandler
from typing import Optional

LOGGER_NAME = "nested_maxstable"


def setup_logger(config: dict, command: Optional[str] = None) -> logging.Logger:
    """
    初始化并配置日志器

    Args:
        config: 配置字典，其 logging 段包含 level, log_dir, max_size_mb, backup_count
        command: 当前 CLI 子命令名，用于日志文件命名（可选）

    Returns:
        配置好的 Logger 实例
    """
    log_config = config.get("logging", {}) or {}
    level = getattr(logging, str(log_config.get("level", "INFO")).upper(), logging.INFO)
    log_dir = log_config.get("log_dir", "./logs")
    max_size = int(log_config.get("max_size_mb", 10)) * 1024 * 1024
    backup_count = int(log_config.get("backup_count", 5))

    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(level)

    # 避免重复添加 handler
    if logger.handlers:
        return logger

    formatter = logging.Formatter(
        fmt="%(asctime)s | %(levelname)-8s | %(name)s | %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    # 文件 handler（按大小滚动）；log_dir 置空则只输出到控制台
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        # 文件名不带时间戳，保证重复运行时输出目录内容一致
        log_file = os.path.join(log_dir, f"{command or 'nested_maxstable'}.log")
        file_handler = RotatingFileHandler(
            log_file,
            maxBytes=max_size,
            backupCount=backup_count,
            encoding="utf-8",
        )
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)
        logger.debug("日志系统初始化完成，日志文件: %s", log_file)

    return logger


def get_logger() -> logging.Logger:
    """获取已配置的日志器"""
    return logging.getLogger(LOGGER_NAME)
