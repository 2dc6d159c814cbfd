"""
依赖结构计算模块

闭式计算指数函数 V、联合分布函数 exp(-V) 以及两两（交叉）极值系数。

V 的递归规则（任意深度的树）：在每个节点 l 上，
    叶子贡献    c = sum_d {omega_l(s_d) / z_d}^{1/P}，P 为该叶子的路径乘积
    内部节点    (sum 子节点贡献)^{alpha}
根节点的结果对 l 求和。两层、三层树分别退化为嵌套 logistic 的混合形式。
所有内部求和都在对数空间完成，1/P 可达 10 左右，线性空间下动态范围会溢出。
"""

from dataclasses import dataclass, field
from typing import Dict, Mapping, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from model.kernel import KernelBasis, Site, log_weight_matrix, pairwise_distance, sites_to_array
from model.tree import DependenceTree, TreeNode
from utils.errors import DomainError, LookupFailure
from utils.logger import get_logger

logger = get_logger()

CURVE_COLUMNS = ["leaf_a", "leaf_b", "site_i", "site_j", "distance", "theta"]


class _Marginalized:
    """显式的“边缘化”标记：该坐标取 z = ∞，不参与 V"""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "MARGINALIZED"

    def __reduce__(self):
        return (_Marginalized, ())


MARGINALIZED = _Marginalized()


@dataclass(frozen=True)
class EvaluationPoint:
    """
    求值点：站点 s_1..s_D 以及每个叶子在各站点的水平 z（单位 Fréchet 尺度）

    levels 中 np.inf 表示该坐标被边缘化；未出现的叶子整体被边缘化。
    """

    sites: np.ndarray
    levels: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_levels(cls, sites, levels: Mapping[str, Sequence]) -> "EvaluationPoint":
        """
        构造求值点，水平可以是正数、np.inf 或 MARGINALIZED

        Raises:
            DomainError: 任何 z <= 0 或非数值
        """
        pts = sites_to_array(sites)
        parsed: Dict[str, np.ndarray] = {}
        for leaf, values in levels.items():
            row = np.array(
                [np.inf if v is MARGINALIZED else float(v) for v in values], dtype=float
            )
            if row.shape != (pts.shape[0],):
                raise DomainError(
                    f"叶子 {leaf} 的水平个数 {row.shape[0]} 与站点数 {pts.shape[0]} 不一致"
                )
            if np.any(np.isnan(row)) or np.any(row <= 0.0):
                raise DomainError(f"叶子 {leaf} 的水平必须 > 0: {row.tolist()}")
            parsed[leaf] = row
        return cls(sites=pts, levels=parsed)

    def scaled(self, t: float) -> "EvaluationPoint":
        """所有水平乘以 t"""
        return EvaluationPoint(self.sites, {k: v * t for k, v in self.levels.items()})


@dataclass(frozen=True)
class ExtremalCoefficient:
    """两两极值系数 theta ∈ [1, 2]"""

    value: float
    leaf_a: str
    site_i: object
    leaf_b: str
    site_j: object


def _leaf_basis(bases, leaf: str) -> KernelBasis:
    if isinstance(bases, KernelBasis):
        return bases
    try:
        return bases[leaf]
    except KeyError:
        raise LookupFailure(f"缺少叶子 {leaf} 的核基") from None


def _log_node_terms(node: TreeNode, tree: DependenceTree, bases, point: EvaluationPoint,
                    L: int) -> np.ndarray:
    """节点在 L 个核节点上的对数贡献"""
    if node.is_leaf:
        z = point.levels.get(node.leaf)
        if z is None:
            return np.full(L, -np.inf)
        observed = np.isfinite(z)
        if not observed.any():
            return np.full(L, -np.inf)
        p = tree.path_product(node.leaf).product
        log_w = log_weight_matrix(_leaf_basis(bases, node.leaf), point.sites[observed])
        terms = (log_w - np.log(z[observed])[:, None]) / p
        return logsumexp(terms, axis=0)
    stacked = np.vstack([_log_node_terms(c, tree, bases, point, L) for c in node.children])
    return float(node.alpha) * logsumexp(stacked, axis=0)


def exponent(tree: DependenceTree, bases, point: EvaluationPoint) -> float:
    """
    指数函数 V(z)

    Args:
        tree: 已校验的依赖树
        bases: 叶子 -> KernelBasis 的映射（或所有叶子共用的单个 KernelBasis）
        point: 求值点

    Returns:
        V > 0；z = ∞ 或 omega = 0 的项贡献为 0
    """
    for leaf, z in point.levels.items():
        if np.any(np.isnan(z)) or np.any(z <= 0.0):
            raise DomainError(f"叶子 {leaf} 的水平必须 > 0")
        if leaf not in tree.leaves:
            raise LookupFailure(f"未知叶子: {leaf}")
    L = _leaf_basis(bases, tree.leaves[0]).L
    with np.errstate(divide="ignore", invalid="ignore"):
        log_root = _log_node_terms(tree.root, tree, bases, point, L)
        return float(np.exp(log_root).sum())


def joint_cdf(tree: DependenceTree, bases, point: EvaluationPoint) -> float:
    """联合分布函数 exp(-V)"""
    return float(np.exp(-exponent(tree, bases, point)))


def _pair_log_weights(bases, leaf_a: str, site_i, leaf_b: str, site_j) -> Tuple[np.ndarray, np.ndarray]:
    log_a = log_weight_matrix(_leaf_basis(bases, leaf_a), [site_i])[0]
    log_b = log_weight_matrix(_leaf_basis(bases, leaf_b), [site_j])[0]
    return log_a, log_b


def _theta_from_log_weights(log_a: np.ndarray, log_b: np.ndarray, m: float) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.exp(m * np.logaddexp(log_a / m, log_b / m)).sum(axis=-1)
    return np.clip(value, 1.0, 2.0)


def extremal_coefficient(tree: DependenceTree, bases, leaf_a: str, site_i,
                         leaf_b: str, site_j) -> ExtremalCoefficient:
    """
    两两极值系数

    theta = sum_l {omega_a,l(s_i)^{1/m} + omega_b,l(s_j)^{1/m}}^m，m 为两叶子最近公共祖先
    以上 alpha 的乘积；同一叶子时 m 为完整路径乘积。等于 V 在 (1, 1) 处的取值。
    """
    m = tree.mrca_product(leaf_a, leaf_b)
    log_a, log_b = _pair_log_weights(bases, leaf_a, site_i, leaf_b, site_j)
    value = float(_theta_from_log_weights(log_a, log_b, m))
    return ExtremalCoefficient(value=value, leaf_a=leaf_a, site_i=site_i,
                               leaf_b=leaf_b, site_j=site_j)


def pair_exponent(tree: DependenceTree, bases, leaf_a: str, site_i,
                  leaf_b: str, site_j) -> float:
    """在只保留两个坐标（水平均为 1）的求值点上计算 V，用于与闭式极值系数对照"""
    sites = [site_i, site_j]
    if leaf_a == leaf_b:
        levels = {leaf_a: [1.0, 1.0]}
    else:
        levels = {leaf_a: [1.0, MARGINALIZED], leaf_b: [MARGINALIZED, 1.0]}
    return exponent(tree, bases, EvaluationPoint.from_levels(sites, levels))


def extremal_coefficient_matrix(tree: DependenceTree, bases, leaf_a: str, leaf_b: str,
                                sites) -> np.ndarray:
    """所有站点对 (s_i, s_j) 的极值系数矩阵，形状 (D, D)"""
    pts = sites_to_array(sites)
    m = tree.mrca_product(leaf_a, leaf_b)
    log_a = log_weight_matrix(_leaf_basis(bases, leaf_a), pts)
    log_b = log_weight_matrix(_leaf_basis(bases, leaf_b), pts)
    return _theta_from_log_weights(log_a[:, None, :], log_b[None, :, :], m)


def extremal_curve(tree: DependenceTree, bases, leaf_a: str, leaf_b: str,
                   sites: Mapping[str, Site],
                   site_pairs: Sequence[Tuple[str, str]]) -> pd.DataFrame:
    """
    批量计算极值系数，按距离排序，用于导出绘图数据

    Args:
        sites: 站点编号 -> Site
        site_pairs: (site_i, site_j) 编号对

    Returns:
        DataFrame，列 leaf_a, leaf_b, site_i, site_j, distance, theta
    """
    rows = []
    for site_i, site_j in site_pairs:
        try:
            s_i, s_j = sites[site_i], sites[site_j]
        except KeyError as e:
            raise LookupFailure(f"未知站点: {e.args[0]}") from None
        theta = extremal_coefficient(tree, bases, leaf_a, s_i, leaf_b, s_j).value
        distance = pairwise_distance(s_i, s_j)
        rows.append((leaf_a, leaf_b, site_i, site_j, distance, theta))
    frame = pd.DataFrame(rows, columns=CURVE_COLUMNS)
    if frame.empty:
        return frame
    return frame.sort_values("distance", kind="mergesort").reset_index(drop=True)
