"""
核基函数模块

规则节点网格与归一化各向同性高斯核权重 omega_l(s)，将潜在振幅空间化。
权重在对数空间中归一化（log-sum-exp），远离所有节点的站点也不会下溢为 0/0。
"""

from dataclasses import dataclass
from typing import Dict, Iterable, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import logsumexp

from utils.errors import DomainError
from utils.logger import get_logger

logger = get_logger()


@dataclass(frozen=True)
class Site:
    """平面坐标站点"""

    x: float
    y: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise DomainError(f"站点坐标必须有限: ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


def sites_to_array(sites: Iterable) -> np.ndarray:
    """Site 序列（或 (x, y) 对、二维数组）转为 (D, 2) 数组"""
    if isinstance(sites, np.ndarray):
        arr = np.atleast_2d(np.asarray(sites, dtype=float))
    else:
        rows = [s.as_array() if isinstance(s, Site) else np.asarray(s, dtype=float) for s in sites]
        arr = np.array(rows, dtype=float).reshape(-1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DomainError(f"站点数组形状应为 (D, 2)，收到 {arr.shape}")
    return arr


@dataclass(frozen=True)
class KnotGrid:
    """节点网格 v_1..v_L（行优先顺序）"""

    knots: np.ndarray

    def __post_init__(self):
        knots = sites_to_array(self.knots)
        if knots.shape[0] < 1:
            raise DomainError("节点网格至少需要 1 个节点")
        if len(np.unique(knots, axis=0)) != knots.shape[0]:
            raise DomainError("节点必须两两不同")
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @property
    def L(self) -> int:
        return int(self.knots.shape[0])

    def __eq__(self, other) -> bool:
        return isinstance(other, KnotGrid) and np.array_equal(self.knots, other.knots)

    def __hash__(self) -> int:
        return hash(self.knots.tobytes())


@dataclass(frozen=True)
class KernelBasis:
    """节点网格 + 高斯核带宽 tau（与站点同一距离单位）"""

    grid: KnotGrid
    bandwidth: float

    def __post_init__(self):
        tau = float(self.bandwidth)
        if not np.isfinite(tau) or tau <= 0.0:
            raise DomainError(f"带宽必须为正: {self.bandwidth}")
        object.__setattr__(self, "bandwidth", tau)

    @property
    def L(self) -> int:
        return self.grid.L


def make_regular_grid(bounds: Sequence[float], nx: int, ny: int,
                      anchor: str = "center") -> KnotGrid:
    """
    在矩形上构造规则节点网格

    Args:
        bounds: (xmin, xmax, ymin, ymax)
        nx, ny: 每个方向的节点数，>= 1
        anchor: "center" 取规则格网的单元中心；"edge" 取包含边界的等距格点
                （单个节点时两者都取矩形中心）

    Returns:
        nx*ny 个节点，行优先（y 外层，x 内层）
    """
    xmin, xmax, ymin, ymax = (float(b) for b in bounds)
    nx, ny = int(nx), int(ny)
    if nx < 1 or ny < 1:
        raise DomainError(f"nx, ny 必须 >= 1，收到 ({nx}, {ny})")
    if not (xmax > xmin and ymax > ymin):
        raise DomainError(f"矩形退化: {bounds}")

    def axis(lo: float, hi: float, n: int) -> np.ndarray:
        if anchor == "center" or n == 1:
            step = (hi - lo) / n
            return lo + (np.arange(n) + 0.5) * step
        if anchor == "edge":
            return np.linspace(lo, hi, n)
        raise DomainError(f"未知的 anchor: {anchor}")

    xs = axis(xmin, xmax, nx)
    ys = axis(ymin, ymax, ny)
    gx, gy = np.meshgrid(xs, ys)
    return KnotGrid(np.column_stack([gx.ravel(), gy.ravel()]))


def log_kernel_matrix(basis: KernelBasis, sites) -> np.ndarray:
    """未归一化高斯核 g_l(s) 的对数，形状 (D, L)"""
    pts = sites_to_array(sites)
    tau2 = basis.bandwidth ** 2
    diff = pts[:, None, :] - basis.grid.knots[None, :, :]
    sq_dist = np.einsum("dlk,dlk->dl", diff, diff)
    return -sq_dist / (2.0 * tau2) - np.log(2.0 * np.pi * tau2)


def log_weight_matrix(basis: KernelBasis, sites) -> np.ndarray:
    """归一化权重的对数 log omega_l(s)，形状 (D, L)"""
    log_g = log_kernel_matrix(basis, sites)
    return log_g - logsumexp(log_g, axis=1, keepdims=True)


def weight_matrix(basis: KernelBasis, sites) -> np.ndarray:
    """归一化权重矩阵 omega_l(s_d)，形状 (D, L)，每行和为 1"""
    return np.exp(log_weight_matrix(basis, sites))


def weights(basis: KernelBasis, s) -> np.ndarray:
    """
    站点 s 处的 L 个归一化权重

    omega_l(s) = g_l(s) / sum_m g_m(s)，g_l 为以 v_l 为中心、标准差 tau 的各向同性高斯密度。
    个别 g_l 相对最大值下溢时权重恰为 0。
    """
    return weight_matrix(basis, [s])[0]


def grid_spacing(grid: KnotGrid) -> float:
    """规则网格的间距：节点到最近邻节点距离的最大值"""
    if grid.L < 2:
        raise DomainError("计算网格间距至少需要 2 个节点")
    dist, _ = cKDTree(grid.knots).query(grid.knots, k=2)
    return float(dist[:, 1].max())


def check_grid_spacing(basis: KernelBasis) -> bool:
    """
    检查网格间距是否不大于核带宽

    间距大于带宽时，核之间覆盖不足，会产生人为的非平稳性。只告警，不报错。

    Returns:
        True 表示发出了告警
    """
    spacing = grid_spacing(basis.grid)
    # 相等视为通过，留出浮点误差余量
    if spacing > basis.bandwidth * (1.0 + 1e-12):
        logger.warning(
            "节点网格间距 %.4g 大于核带宽 %.4g，可能导致人为的非平稳性",
            spacing, basis.bandwidth,
        )
        return True
    logger.debug("网格间距 %.4g <= 带宽 %.4g，检查通过", spacing, basis.bandwidth)
    return False


def leaf_bases(tree, grid: KnotGrid) -> Dict[str, KernelBasis]:
    """按依赖树中各叶子的带宽构造核基（所有叶子共享同一节点网格）"""
    return {leaf: KernelBasis(grid, tree.tau(leaf)) for leaf in tree.leaves}


def pairwise_distance(a, b) -> float:
    """两站点间的欧氏距离"""
    pa = a.as_array() if isinstance(a, Site) else np.asarray(a, dtype=float)
    pb = b.as_array() if isinstance(b, Site) else np.asarray(b, dtype=float)
    return float(np.hypot(*(pa - pb)))


def bounding_box(points: np.ndarray, pad: float = 0.0) -> Tuple[float, float, float, float]:
    """点集外接矩形 (xmin, xmax, ymin, ymax)，可向外扩展 pad"""
    pts = sites_to_array(points)
    return (
        float(pts[:, 0].min() - pad), float(pts[:, 0].max() + pad),
        float(pts[:, 1].min() - pad), float(pts[:, 1].max() + pad),
    )
