"""
运行配置模块

运行配置是单个 JSON 或 YAML 文件（JSON 也用 yaml.safe_load 解析），
与应用默认配置 config.yaml 合并后做模式校验：任何层级的未知键都会被拒绝，
所有问题一次性报告。校验在任何计算和输出之前完成。
"""

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from model.kernel import KnotGrid, Site, bounding_box, make_regular_grid
from model.simulate import GevParams
from model.tree import DependenceTree
from utils.errors import DataIOError, ValidationError
from utils.logger import get_logger

logger = get_logger()

# 每个顶层段允许的子键；None 表示不检查子键（树结构由 DependenceTree 自行校验）
SCHEMA: Dict[str, Optional[set]] = {
    "tree": None,
    "grid": {"bounds", "nx", "ny", "anchor", "knots"},
    "sites": {"bounds", "nx", "ny", "anchor", "points", "ids"},
    "simulation": {"n_rep", "workers", "scale"},
    "mcmc": {"iterations", "burn_in", "thinning", "adapt_window", "target_acceptance",
             "proposal_scales", "fixed", "init", "chains", "log_every"},
    "prior": {"h_max"},
    "data": {"path", "coordinates", "unit_frechet"},
    "margins": {"path", "mu", "sigma", "xi"},
    "extremal": {"chain", "pairs", "leaf_pairs", "estimator", "ci", "data"},
    "predict": {"chain", "leaves", "sites", "p_grid", "n_sim", "gev", "labels"},
    "seed": None,
    "logging": {"level", "log_dir", "max_size_mb", "backup_count"},
    "storage": {"output_dir", "encoding", "float_format"},
}
SCALAR_SECTIONS = {"seed"}


def load_yaml(path: str) -> dict:
    """读取 YAML / JSON 文件"""
    if not os.path.exists(path):
        raise DataIOError(f"配置文件不存在: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            content = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ValidationError(f"配置文件解析失败 {path}", [str(e)]) from e
    except OSError as e:
        raise DataIOError(f"读取配置文件失败 {path}: {e}") from e
    if content is None:
        return {}
    if not isinstance(content, dict):
        raise ValidationError(f"配置文件顶层必须是对象: {path}")
    return content


def deep_merge(base: dict, override: dict) -> dict:
    """递归合并，override 优先"""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def check_schema(config: dict) -> List[str]:
    """返回全部模式违规描述"""
    problems: List[str] = []
    for key, value in config.items():
        if key not in SCHEMA:
            problems.append(f"未知的顶层键: {key}")
            continue
        allowed = SCHEMA[key]
        if key in SCALAR_SECTIONS:
            if value is not None and not isinstance(value, int):
                problems.append(f"{key} 必须是整数: {value!r}")
            continue
        if key == "tree":
            if not isinstance(value, dict):
                problems.append("tree 必须是对象")
            continue
        if not isinstance(value, dict):
            problems.append(f"{key} 段必须是对象")
            continue
        for sub in value:
            if sub not in allowed:
                problems.append(f"未知的键: {key}.{sub}")
    return problems


def config_digest(config: dict) -> str:
    """合并后配置的规范 JSON 的 SHA-256"""
    canonical = json.dumps(config, sort_keys=True, ensure_ascii=False, separators=(",", ":"),
                           default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class RunConfig:
    """校验后的运行配置"""

    raw: dict
    source: str = ""

    @classmethod
    def load(cls, path: Optional[str], defaults_path: Optional[str] = "config.yaml",
             overrides: Optional[dict] = None) -> "RunConfig":
        """
        读取运行配置：默认配置 <- 运行配置文件 <- 命令行覆盖

        Args:
            path: 运行配置文件（JSON / YAML），可为 None
            defaults_path: 应用默认配置，不存在时跳过
            overrides: 命令行参数构成的覆盖字典
        """
        defaults = load_yaml(defaults_path) if defaults_path and os.path.exists(defaults_path) else {}
        run = load_yaml(path) if path else {}
        problems = [f"[{path}] {p}" for p in check_schema(run)]
        merged = deep_merge(deep_merge(defaults, run), overrides or {})
        problems += [p for p in check_schema(merged) if f"[{path}] {p}" not in problems]
        if problems:
            raise ValidationError("运行配置校验失败", problems)
        return cls(raw=merged, source=path or "")

    @classmethod
    def from_dict(cls, config: dict) -> "RunConfig":
        problems = check_schema(config)
        if problems:
            raise ValidationError("运行配置校验失败", problems)
        return cls(raw=copy.deepcopy(config))

    def section(self, name: str) -> dict:
        return self.raw.get(name) or {}

    @property
    def digest(self) -> str:
        return config_digest(self.raw)

    @property
    def seed(self) -> Optional[int]:
        return self.raw.get("seed")

    # ── 模型对象 ────────────────────────────────────────────────

    def tree(self) -> DependenceTree:
        if "tree" not in self.raw:
            raise ValidationError("配置缺少 tree 段")
        return DependenceTree.from_dict(self.raw["tree"])

    def sites(self) -> Tuple[Tuple[str, ...], np.ndarray]:
        """
        站点：sites.points（可带 ids）或规则网格 sites.bounds/nx/ny/anchor

        Returns:
            (站点编号, (D, 2) 坐标)
        """
        spec = self.section("sites")
        if "points" in spec:
            pts = np.asarray(spec["points"], dtype=float).reshape(-1, 2)
            ids = tuple(str(i) for i in spec.get("ids", range(pts.shape[0])))
            if len(ids) != pts.shape[0]:
                raise ValidationError("sites.ids 个数与 sites.points 不一致")
            if len(set(ids)) != len(ids):
                raise ValidationError("sites.ids 有重复")
            for x, y in pts:
                Site(float(x), float(y))
            return ids, pts
        if "bounds" in spec:
            grid = make_regular_grid(spec["bounds"], spec.get("nx", 1), spec.get("ny", 1),
                                     spec.get("anchor", "center"))
            return tuple(str(i) for i in range(grid.L)), np.array(grid.knots)
        raise ValidationError("配置缺少 sites 段（points 或 bounds/nx/ny）")

    def grid(self, sites: Optional[np.ndarray] = None) -> KnotGrid:
        """
        核节点网格：grid.knots 显式给出，或 grid.bounds/nx/ny/anchor 规则网格；
        bounds 缺省时取站点的外接矩形
        """
        spec = self.section("grid")
        if "knots" in spec:
            return KnotGrid(np.asarray(spec["knots"], dtype=float).reshape(-1, 2))
        if not spec:
            raise ValidationError("配置缺少 grid 段")
        bounds = spec.get("bounds")
        if bounds is None:
            if sites is None:
                raise ValidationError("grid.bounds 缺省时需要站点坐标")
            bounds = bounding_box(sites)
        return make_regular_grid(bounds, spec.get("nx", 5), spec.get("ny", 5),
                                 spec.get("anchor", "center"))

    def gev_margins(self) -> Optional[GevParams]:
        """margins 段给出统一的 (mu, sigma, xi) 时返回 GevParams"""
        spec = self.section("margins")
        if {"mu", "sigma", "xi"} <= set(spec):
            return GevParams(float(spec["mu"]), float(spec["sigma"]), float(spec["xi"]))
        return None

    def leaf_pairs(self, leaves: Sequence[str]) -> List[Tuple[str, str]]:
        spec = self.section("extremal")
        if "leaf_pairs" in spec:
            return [tuple(p) for p in spec["leaf_pairs"]]
        return [(a, b) for i, a in enumerate(leaves) for b in leaves[i:]]
