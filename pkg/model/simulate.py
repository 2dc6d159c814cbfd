"""
精确模拟模块

基于层级构造模拟嵌套多元最大稳定过程：
    Z_k(s) = U_k(s) * theta_k(s)
    theta_k(s) = {sum_l B_{k;l} omega_{k;l}(s)^{1/P_k}}^{P_k}
其中 B_{k;l} 为路径上各节点潜在振幅按 path_exponents 复合而成，
U_k(s) 独立同分布，分布函数 exp(-z^{-1/P_k})（块金效应）。
有限 L 的构造是精确的，边缘为单位 Fréchet。

数组布局：叶子优先，其次站点，最后重复，形状 (K, D, N)。
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from model.dependence import EvaluationPoint
from model.kernel import KernelBasis, log_weight_matrix, sites_to_array
from model.stable import sample_positive_stable
from model.tree import DependenceTree
from utils.errors import DomainError, GevSupportError, StructuralError
from utils.logger import get_logger
from utils.rng import SeedLike, spawn_generators

logger = get_logger()

GUMBEL_EPS = 1e-8
SAMPLE_COLUMNS = ["replicate", "leaf", "site_id", "x", "y", "value", "scale"]


@dataclass(frozen=True)
class GevParams:
    """GEV 边缘参数"""

    mu: float
    sigma: float
    xi: float

    def __post_init__(self):
        if not float(self.sigma) > 0.0:
            raise DomainError(f"GEV 尺度参数必须 > 0: {self.sigma}")


UNIT_FRECHET = GevParams(1.0, 1.0, 1.0)


@dataclass
class LatentStableField:
    """每个内部节点在每个核节点上的潜在振幅，amplitudes[node] 形状 (L,) 或 (n, L)"""

    amplitudes: Dict[str, np.ndarray]

    @property
    def L(self) -> int:
        return int(next(iter(self.amplitudes.values())).shape[-1])

    def check(self, tree: DependenceTree, L: Optional[int] = None):
        """校验与树的维度一致"""
        names = [n.name for n in tree.internal_nodes()]
        missing = [n for n in names if n not in self.amplitudes]
        if missing:
            raise StructuralError(f"潜在场缺少节点: {', '.join(missing)}")
        shapes = {a.shape for a in self.amplitudes.values()}
        if len(shapes) != 1:
            raise StructuralError(f"潜在场各节点维度不一致: {sorted(shapes)}")
        if L is not None and self.L != L:
            raise StructuralError(f"潜在场核节点数 {self.L} 与核基 {L} 不一致")


@dataclass
class MaxStableSample:
    """模拟结果：values 形状 (K, D, N)，单位 Fréchet 或 GEV 尺度"""

    values: np.ndarray
    leaves: Tuple[str, ...]
    sites: np.ndarray
    site_ids: Tuple[str, ...]
    scale: str = "frechet"
    provenance: Dict = field(default_factory=dict)

    @property
    def n_rep(self) -> int:
        return int(self.values.shape[2])

    def leaf_values(self, leaf: str) -> np.ndarray:
        """某叶子的 (D, N) 数组"""
        return self.values[self.leaves.index(leaf)]

    def to_frame(self) -> pd.DataFrame:
        """长表：叶子优先，其次站点，最后重复"""
        K, D, N = self.values.shape
        leaf_idx, site_idx, rep_idx = np.meshgrid(
            np.arange(K), np.arange(D), np.arange(N), indexing="ij"
        )
        leaf_idx, site_idx, rep_idx = leaf_idx.ravel(), site_idx.ravel(), rep_idx.ravel()
        return pd.DataFrame({
            "replicate": rep_idx,
            "leaf": np.asarray(self.leaves, dtype=object)[leaf_idx],
            "site_id": np.asarray(self.site_ids, dtype=object)[site_idx],
            "x": self.sites[site_idx, 0],
            "y": self.sites[site_idx, 1],
            "value": self.values.ravel(),
            "scale": self.scale,
        }, columns=SAMPLE_COLUMNS)


# ── 潜在场与光滑过程 ────────────────────────────────────────────


def draw_latent(tree: DependenceTree, L: int, rng: np.random.Generator,
                size: Optional[int] = None) -> LatentStableField:
    """
    每个内部节点、每个核节点抽取一个 PS(alpha_node) 振幅

    节点按先序依次抽取；alpha = 1 的节点振幅恒为 1，不消耗随机数。

    Args:
        size: 不为 None 时一次抽取 size 组独立潜在场，形状 (size, L)
    """
    L = int(L)
    count = L if size is None else int(size) * L
    amplitudes = {}
    for node in tree.internal_nodes():
        draws = sample_positive_stable(float(node.alpha), count, rng)
        amplitudes[node.name] = draws if size is None else draws.reshape(int(size), L)
    return LatentStableField(amplitudes)


def log_composite_amplitude(tree: DependenceTree, latent: LatentStableField, leaf: str) -> np.ndarray:
    """叶子的复合振幅 B_l 的对数：sum_i e_i log A_{i;l}"""
    total = None
    for name, power in tree.path_exponents(leaf):
        term = power * np.log(latent.amplitudes[name])
        total = term if total is None else total + term
    return total


def log_smooth_process(tree: DependenceTree, basis: KernelBasis, latent: LatentStableField,
                       leaf: str, sites) -> np.ndarray:
    """log theta(s)，sites 为 D 个站点；latent 形状 (L,) 时返回 (D,)，(n, L) 时返回 (n, D)"""
    if latent.L != basis.L:
        raise StructuralError(f"潜在场核节点数 {latent.L} 与核基 {basis.L} 不一致")
    p = tree.path_product(leaf).product
    log_w = log_weight_matrix(basis, sites)                        # (D, L)
    log_b = log_composite_amplitude(tree, latent, leaf)            # (L,) or (n, L)
    with np.errstate(divide="ignore"):
        return p * logsumexp(log_b[..., None, :] + log_w / p, axis=-1)


def smooth_process(tree: DependenceTree, basis, latent: LatentStableField,
                   leaf: str, s) -> float:
    """
    单站点光滑过程 theta(s)

    theta(s) = {sum_l B_l omega_l(s)^{1/P}}^{P}
    """
    if not isinstance(basis, KernelBasis):
        basis = basis[leaf]
    latent.check(tree)
    return float(np.exp(log_smooth_process(tree, basis, latent, leaf, [s])[..., 0]))


def _simulate_replicate(tree: DependenceTree, log_w: Dict[str, np.ndarray],
                        products: Dict[str, float], L: int,
                        rng: np.random.Generator) -> np.ndarray:
    latent = draw_latent(tree, L, rng)
    rows = []
    for leaf in tree.leaves:
        p = products[leaf]
        log_b = log_composite_amplitude(tree, latent, leaf)
        log_theta = p * logsumexp(log_b[None, :] + log_w[leaf] / p, axis=1)
        # 逆变换：U = (-log V)^{-P}，V ~ Unif(0,1)
        noise = rng.standard_exponential(size=log_theta.shape[0]) ** (-p)
        rows.append(noise * np.exp(log_theta))
    return np.vstack(rows)


def simulate(tree: DependenceTree, bases: Mapping[str, KernelBasis], sites, n_rep: int,
             seed: SeedLike = None, site_ids: Optional[Sequence[str]] = None,
             workers: int = 1) -> MaxStableSample:
    """
    精确模拟 n_rep 个独立重复

    每个重复使用独立的潜在场；第 r 个重复的随机数流是主种子 spawn 出的第 r 个子序列，
    因此结果与 workers 无关。

    Args:
        tree: 已校验的依赖树
        bases: 叶子 -> 核基
        sites: D 个站点
        n_rep: 重复数，>= 1
        seed: 主种子（整数、SeedSequence 或 Generator）
        site_ids: 站点编号，默认 "0".."D-1"
        workers: 并行线程数

    Returns:
        MaxStableSample（单位 Fréchet 尺度）
    """
    n_rep = int(n_rep)
    if n_rep < 1:
        raise DomainError(f"重复数必须 >= 1，收到 {n_rep}")
    pts = sites_to_array(sites)
    ids = tuple(str(i) for i in (site_ids if site_ids is not None else range(pts.shape[0])))
    if len(ids) != pts.shape[0]:
        raise StructuralError("站点编号个数与站点数不一致")

    L = bases[tree.leaves[0]].L
    log_w = {leaf: log_weight_matrix(bases[leaf], pts) for leaf in tree.leaves}
    products = {leaf: tree.path_product(leaf).product for leaf in tree.leaves}
    streams = spawn_generators(seed, n_rep)

    def run(rng):
        return _simulate_replicate(tree, log_w, products, L, rng)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            reps = list(pool.map(run, streams))
    else:
        reps = [run(rng) for rng in streams]

    values = np.stack(reps, axis=2)
    logger.debug("模拟完成: %d 个叶子 x %d 个站点 x %d 个重复", *values.shape)
    return MaxStableSample(
        values=values,
        leaves=tuple(tree.leaves),
        sites=pts,
        site_ids=ids,
        scale="frechet",
        provenance={"tree": tree.to_dict(), "L": L,
                    "bandwidths": {leaf: bases[leaf].bandwidth for leaf in tree.leaves}},
    )


def conditional_cdf_monte_carlo(tree: DependenceTree, bases, point: EvaluationPoint,
                                n_draws: int, rng: np.random.Generator) -> Tuple[float, float]:
    """
    对潜在场做 Monte-Carlo 平均，估计联合分布函数

    给定潜在场，各坐标条件独立，P(Z <= z | A) = exp{-(theta(s)/z)^{1/P}}；
    对潜在振幅取期望应当得到 exp(-V)。

    Returns:
        (估计值, 标准误)
    """
    L = bases[tree.leaves[0]].L
    latent = draw_latent(tree, L, rng, size=int(n_draws))
    total = np.zeros(int(n_draws))
    for leaf, z in point.levels.items():
        observed = np.isfinite(z)
        if not observed.any():
            continue
        p = tree.path_product(leaf).product
        # (theta/z)^{1/P} = exp(log_theta / P - log z / P)
        log_theta = log_smooth_process(tree, bases[leaf], latent, leaf, point.sites[observed])
        total += np.exp((log_theta - np.log(z[observed])) / p).sum(axis=1)
    values = np.exp(-total)
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


# ── GEV 边缘变换 ────────────────────────────────────────────────


def frechet_to_gev(z, mu, sigma, xi) -> np.ndarray:
    """z* = mu + sigma (z^xi - 1)/xi；|xi| < 1e-8 时取 Gumbel 极限 mu + sigma log z"""
    z, mu, sigma, xi = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (z, mu, sigma, xi)))
    gumbel = np.abs(xi) < GUMBEL_EPS
    safe_xi = np.where(gumbel, 1.0, xi)
    with np.errstate(divide="ignore", invalid="ignore"):
        general = mu + sigma * np.expm1(safe_xi * np.log(z)) / safe_xi
        limit = mu + sigma * np.log(z)
    return np.where(gumbel, limit, general)


def gev_to_frechet(x, mu, sigma, xi) -> np.ndarray:
    """
    z = {1 + xi (x - mu)/sigma}^{1/xi}；|xi| < 1e-8 时取 exp((x - mu)/sigma)

    Raises:
        GevSupportError: 有单元违反支撑约束，异常中带有全部违规单元的下标
    """
    x, mu, sigma, xi = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, mu, sigma, xi)))
    gumbel = np.abs(xi) < GUMBEL_EPS
    safe_xi = np.where(gumbel, 1.0, xi)
    arg = 1.0 + safe_xi * (x - mu) / sigma
    bad = ~gumbel & ~np.isnan(x) & (arg <= 0.0)
    if bad.any():
        raise GevSupportError("GEV 支撑集约束被违反", np.argwhere(bad))
    with np.errstate(divide="ignore", invalid="ignore"):
        general = np.exp(np.log(arg) / safe_xi)
        limit = np.exp((x - mu) / sigma)
    return np.where(gumbel, limit, general)


def margin_arrays(params, leaves: Sequence[str], site_ids: Sequence[str]) -> Tuple[np.ndarray, ...]:
    """
    把边缘参数整理为 (K, D, 1) 的 mu, sigma, xi 数组

    params 可以是：单个 GevParams；叶子 -> GevParams 或 叶子 -> 按站点排列的 GevParams 序列；
    或含 leaf, site_id, mu, sigma, xi 列的 DataFrame。
    """
    K, D = len(leaves), len(site_ids)
    out = np.empty((3, K, D))
    if isinstance(params, GevParams):
        out[:] = np.array([params.mu, params.sigma, params.xi])[:, None, None]
    elif isinstance(params, pd.DataFrame):
        table = params.assign(site_id=params["site_id"].astype(str)).set_index(["leaf", "site_id"])
        missing = []
        for k, leaf in enumerate(leaves):
            for d, sid in enumerate(site_ids):
                key = (leaf, str(sid))
                if key not in table.index:
                    missing.append(key)
                    out[:, k, d] = np.nan
                    continue
                row = table.loc[key]
                out[:, k, d] = [row["mu"], row["sigma"], row["xi"]]
        if missing:
            raise StructuralError(f"边缘参数缺少 {len(missing)} 个单元，例如 {missing[0]}")
    else:
        for k, leaf in enumerate(leaves):
            if leaf not in params:
                raise StructuralError(f"缺少叶子 {leaf} 的边缘参数")
            entry = params[leaf]
            if isinstance(entry, GevParams):
                out[:, k, :] = np.array([entry.mu, entry.sigma, entry.xi])[:, None]
            else:
                if len(entry) != D:
                    raise StructuralError(f"叶子 {leaf} 的边缘参数个数与站点数不一致")
                out[:, k, :] = np.array([[g.mu, g.sigma, g.xi] for g in entry]).T
    return out[0][..., None], out[1][..., None], out[2][..., None]


def to_gev(sample: MaxStableSample, params) -> MaxStableSample:
    """单位 Fréchet 尺度 -> GEV 尺度"""
    if sample.scale != "frechet":
        raise DomainError(f"to_gev 需要 Fréchet 尺度输入，收到 {sample.scale}")
    mu, sigma, xi = margin_arrays(params, sample.leaves, sample.site_ids)
    return MaxStableSample(
        values=frechet_to_gev(sample.values, mu, sigma, xi),
        leaves=sample.leaves, sites=sample.sites, site_ids=sample.site_ids,
        scale="gev", provenance=dict(sample.provenance),
    )


def from_gev(data: Union[MaxStableSample, np.ndarray], params,
             leaves: Optional[Sequence[str]] = None,
             site_ids: Optional[Sequence[str]] = None):
    """
    GEV 尺度 -> 单位 Fréchet 尺度

    data 为 MaxStableSample 时返回 MaxStableSample；为 (K, D, N) 数组时需给出 leaves、site_ids。
    """
    if isinstance(data, MaxStableSample):
        mu, sigma, xi = margin_arrays(params, data.leaves, data.site_ids)
        return MaxStableSample(
            values=gev_to_frechet(data.values, mu, sigma, xi),
            leaves=data.leaves, sites=data.sites, site_ids=data.site_ids,
            scale="frechet", provenance=dict(data.provenance),
        )
    if leaves is None or site_ids is None:
        raise StructuralError("数组输入需要同时给出 leaves 和 site_ids")
    mu, sigma, xi = margin_arrays(params, leaves, site_ids)
    return gev_to_frechet(np.asarray(data, dtype=float), mu, sigma, xi)
