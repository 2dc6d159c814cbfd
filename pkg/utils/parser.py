"""
块最大值数据解析模块

长表格式 CSV：site_id, x, y, leaf, replicate, value
（地理坐标时为 site_id, lon, lat, ...，按等距圆柱投影换算为平面公里坐标）。
缺失单元可以是空值或整行缺失，在似然中直接跳过。
"""

import hashlib
import os
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist

from model.kernel import Site
from utils.errors import DataIOError, DomainError, StructuralError, ValidationError
from utils.logger import get_logger
from utils.validator import DataValidator

logger = get_logger()

EARTH_RADIUS_KM = 6371.0
PLANAR_COLUMNS = ["site_id", "x", "y", "leaf", "replicate", "value"]
LONLAT_COLUMNS = ["site_id", "lon", "lat", "leaf", "replicate", "value"]
# 重复数少于该值时在校验报告中给出警告
RECOMMENDED_REPLICATES = 20


@dataclass
class MaximaDataset:
    """块最大值数据：values 形状 (K, D, N)，NaN 表示缺失"""

    site_ids: Tuple[str, ...]
    coords: np.ndarray
    leaves: Tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.coords = np.asarray(self.coords, dtype=float).reshape(-1, 2)
        expected = (len(self.leaves), len(self.site_ids))
        if self.values.ndim != 3 or self.values.shape[:2] != expected:
            raise StructuralError(
                f"数据维度 {self.values.shape} 与 (叶子数, 站点数, N) = {expected + ('N',)} 不一致"
            )
        if self.coords.shape[0] != len(self.site_ids):
            raise StructuralError("站点坐标个数与站点编号个数不一致")

    @property
    def n_rep(self) -> int:
        return int(self.values.shape[2])

    @property
    def sites(self) -> Dict[str, Site]:
        return {sid: Site(float(x), float(y)) for sid, (x, y) in zip(self.site_ids, self.coords)}

    @property
    def h_max(self) -> float:
        """站点间最大距离（研究区域“直径”）"""
        if len(self.site_ids) < 2:
            raise DomainError("计算 h_max 至少需要 2 个站点")
        return float(pdist(self.coords).max())

    @classmethod
    def from_sample(cls, sample) -> "MaximaDataset":
        """由模拟结果构造数据集"""
        return cls(site_ids=tuple(sample.site_ids), coords=sample.sites,
                   leaves=tuple(sample.leaves), values=sample.values)

    def align_to(self, leaves: Sequence[str]) -> "MaximaDataset":
        """按依赖树叶子顺序重排；叶子集合不一致时报出差异"""
        missing = sorted(set(leaves) - set(self.leaves))
        extra = sorted(set(self.leaves) - set(leaves))
        if missing or extra:
            raise StructuralError(
                f"数据叶子与依赖树叶子不一致：数据缺少 {missing or '无'}，树中没有 {extra or '无'}"
            )
        order = [self.leaves.index(leaf) for leaf in leaves]
        return MaximaDataset(self.site_ids, self.coords, tuple(leaves), self.values[order])

    def with_values(self, values: np.ndarray) -> "MaximaDataset":
        return MaximaDataset(self.site_ids, self.coords, self.leaves, values)

    def missing_report(self) -> pd.DataFrame:
        """每个 (叶子, 站点) 单元的缺失个数"""
        counts = np.isnan(self.values).sum(axis=2)
        rows = [
            (leaf, sid, int(counts[k, d]), self.n_rep)
            for k, leaf in enumerate(self.leaves)
            for d, sid in enumerate(self.site_ids)
        ]
        return pd.DataFrame(rows, columns=["leaf", "site_id", "missing", "n_rep"])

    def digest(self) -> str:
        """数据摘要，写入链元数据"""
        h = hashlib.sha256()
        h.update("|".join(self.leaves).encode("utf-8"))
        h.update("|".join(self.site_ids).encode("utf-8"))
        h.update(np.ascontiguousarray(self.coords).tobytes())
        h.update(np.ascontiguousarray(self.values).tobytes())
        return h.hexdigest()

    def to_frame(self) -> pd.DataFrame:
        """转回长表（跳过缺失单元）"""
        K, D, N = self.values.shape
        k, d, r = np.meshgrid(np.arange(K), np.arange(D), np.arange(N), indexing="ij")
        frame = pd.DataFrame({
            "site_id": np.asarray(self.site_ids, dtype=object)[d.ravel()],
            "x": self.coords[d.ravel(), 0],
            "y": self.coords[d.ravel(), 1],
            "leaf": np.asarray(self.leaves, dtype=object)[k.ravel()],
            "replicate": r.ravel(),
            "value": self.values.ravel(),
        }, columns=PLANAR_COLUMNS)
        return frame[frame["value"].notna()].reset_index(drop=True)


def project_equirectangular(lon, lat, lon0: Optional[float] = None,
                            lat0: Optional[float] = None) -> np.ndarray:
    """
    等距圆柱投影，经纬度（度）-> 平面公里坐标

    x = R (lon - lon0) cos(lat0)，y = R (lat - lat0)，参考点默认取站点均值。
    """
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    lon0 = float(np.mean(lon)) if lon0 is None else float(lon0)
    lat0 = float(np.mean(lat)) if lat0 is None else float(lat0)
    x = EARTH_RADIUS_KM * np.radians(lon - lon0) * np.cos(np.radians(lat0))
    y = EARTH_RADIUS_KM * np.radians(lat - lat0)
    return np.column_stack([x, y])


def parse_maxima_frame(frame: pd.DataFrame, coordinates: str = "planar",
                       require_positive: bool = False, name: str = "data") -> MaximaDataset:
    """
    解析长表格式的块最大值数据

    Args:
        frame: 原始长表
        coordinates: "planar"（x, y）或 "lonlat"（lon, lat，做等距圆柱投影）
        require_positive: 数据已在单位 Fréchet 尺度时要求所有值为正

    Returns:
        MaximaDataset，站点与叶子按首次出现顺序排列
    """
    if coordinates not in ("planar", "lonlat"):
        raise ValidationError(f"未知的坐标类型: {coordinates}")
    columns = PLANAR_COLUMNS if coordinates == "planar" else LONLAT_COLUMNS
    coord_fields = columns[1:3]

    validator = DataValidator()
    if validator.validate_not_empty(frame, name) and validator.validate_required_fields(frame, columns, name):
        frame = frame.assign(site_id=frame["site_id"].astype(str), leaf=frame["leaf"].astype(str))
        for col in coord_fields + ["value"]:
            validator.validate_numeric(frame, col, name)
        if validator.validate_replicates(frame, name):
            n_rep = int(pd.to_numeric(frame["replicate"]).nunique())
            validator.validate_row_count(n_rep, RECOMMENDED_REPLICATES, name)
        validator.validate_unique_cells(frame, ["site_id", "leaf", "replicate"], name)
        validator.validate_site_coordinates(frame, coord_fields, name)
        if require_positive:
            validator.validate_positive(frame, "value", name)
    if not validator.passed:
        logger.error("\n%s", validator.get_report())
        raise ValidationError("数据校验失败", validator.errors)
    if validator.warnings:
        logger.warning("\n%s", validator.get_report())

    site_table = frame.drop_duplicates("site_id")[["site_id"] + coord_fields]
    site_ids = tuple(site_table["site_id"].tolist())
    raw = site_table[coord_fields].to_numpy(dtype=float)
    coords = project_equirectangular(raw[:, 0], raw[:, 1]) if coordinates == "lonlat" else raw
    leaves = tuple(pd.unique(frame["leaf"]).tolist())
    reps = np.unique(frame["replicate"].astype(int))

    site_pos = {sid: i for i, sid in enumerate(site_ids)}
    leaf_pos = {leaf: i for i, leaf in enumerate(leaves)}
    rep_pos = {int(r): i for i, r in enumerate(reps)}
    values = np.full((len(leaves), len(site_ids), len(reps)), np.nan)
    numeric = pd.to_numeric(frame["value"], errors="coerce").to_numpy()
    k = frame["leaf"].map(leaf_pos).to_numpy()
    d = frame["site_id"].map(site_pos).to_numpy()
    r = frame["replicate"].astype(int).map(rep_pos).to_numpy()
    values[k, d, r] = numeric

    dataset = MaximaDataset(site_ids=site_ids, coords=coords, leaves=leaves, values=values)
    n_missing = int(np.isnan(values).sum())
    if n_missing:
        report = dataset.missing_report()
        cells = report[report["missing"] > 0]
        logger.warning("数据共有 %d 个缺失值，涉及 %d 个单元（似然中跳过）", n_missing, len(cells))
        for _, row in cells.iterrows():
            logger.info("  缺失: leaf=%s site=%s %d/%d", row["leaf"], row["site_id"],
                         row["missing"], row["n_rep"])
    logger.info("数据解析完成: %d 个变量, %d 个站点, %d 个重复",
                len(leaves), len(site_ids), len(reps))
    return dataset


def read_dataset(path: str, coordinates: str = "planar",
                 require_positive: bool = False) -> MaximaDataset:
    """读取长表 CSV 数据文件"""
    if not os.path.exists(path):
        raise DataIOError(f"数据文件不存在: {path}")
    try:
        frame = pd.read_csv(path, dtype={"site_id": str, "leaf": str})
    except Exception as e:
        raise DataIOError(f"读取数据文件失败 {path}: {e}") from e
    return parse_maxima_frame(frame, coordinates=coordinates,
                              require_positive=require_positive,
                              name=os.path.basename(path))
