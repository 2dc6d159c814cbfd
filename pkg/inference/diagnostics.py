"""
链诊断与经验依赖估计模块

- 自相关函数（FFT）、有效样本量（Geyer 初始单调序列截断）、split-R̂
- 轨迹导出：(iteration, value) + ACF 附表
- 经验极值系数：F-madogram（默认）或 1/mean(min) 朴素估计，delta 法或 bootstrap 置信区间
- 空间最大值的后验预测分位数
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from inference.mcmc import PosteriorChain
from model.kernel import KnotGrid, leaf_bases, sites_to_array
from model.simulate import simulate, to_gev
from model.tree import DependenceTree
from utils.errors import DomainError, LookupFailure
from utils.logger import get_logger
from utils.rng import SeedLike, make_generator, spawn_generators

logger = get_logger()

MIN_CHAIN_LENGTH = 10
MIN_PAIR_REPLICATES = 20
WARN_PAIR_REPLICATES = 50
BOOTSTRAP_RESAMPLES = 200
Z_95 = 1.959963984540054

# 月最大值：p = 1 - 1/12 约为 1 年一遇，1 - 1/240 约为 20 年一遇
RETURN_LEVEL_LABELS = {0.917: "1-year", 0.996: "20-year"}
QUANTILE_COLUMNS = ["p", "gumbel_coordinate", "z_p", "label"]
TRACE_COLUMNS = ["iteration", "value"]
ACF_COLUMNS = ["lag", "acf"]
SUMMARY_FIELDS = ["median", "mean", "q025", "q975", "acceptance", "ess"]


class EssEstimate(NamedTuple):
    """有效样本量；degenerate 为 True 表示常数链"""

    value: float
    degenerate: bool


@dataclass(frozen=True)
class EmpiricalTheta:
    """经验极值系数，estimate 与置信区间均截断在 [1, 2]"""

    estimate: float
    ci_low: float
    ci_high: float
    pair: Tuple
    n_rep: int
    estimator: str = "madogram"


@dataclass
class ChainDiagnostics:
    """单个参数的诊断：ACF 表、ESS、轨迹"""

    parameter: str
    acf: pd.DataFrame
    ess: EssEstimate
    trace: pd.DataFrame


# ── 自相关与有效样本量 ──────────────────────────────────────────


def acf(chain, max_lag: Optional[int] = None) -> np.ndarray:
    """
    样本自相关函数（有偏估计，除以 n），FFT 计算

    常数链返回 [1, 0, 0, ...]。
    """
    x = np.asarray(chain, dtype=float)
    n = x.size
    if n == 0:
        raise DomainError("空链无法计算自相关")
    max_lag = n - 1 if max_lag is None else min(int(max_lag), n - 1)
    centered = x - x.mean()
    size = 1 << int(np.ceil(np.log2(2 * n)))
    spectrum = np.fft.rfft(centered, size)
    acov = np.fft.irfft(spectrum * np.conj(spectrum), size)[:n] / n
    if acov[0] <= 0.0:
        out = np.zeros(max_lag + 1)
        out[0] = 1.0
        return out
    return acov[: max_lag + 1] / acov[0]


def ess(chain) -> EssEstimate:
    """
    有效样本量 n / (1 + 2 sum rho_k)

    自相关和按 Geyer 初始单调正序列截断：相邻对 Gamma_m = rho_{2m} + rho_{2m+1}
    在首次非正处截止，并强制单调不增。结果不超过 n。

    Raises:
        DomainError: 链长小于 10
    """
    x = np.asarray(chain, dtype=float)
    n = x.size
    if n < MIN_CHAIN_LENGTH:
        raise DomainError(f"链长 {n} 小于 {MIN_CHAIN_LENGTH}，无法估计有效样本量")
    if np.ptp(x) == 0.0:
        return EssEstimate(0.0, True)

    rho = acf(x)
    n_pairs = n // 2
    gamma = rho[0: 2 * n_pairs: 2] + rho[1: 2 * n_pairs: 2]
    positive = np.flatnonzero(gamma <= 0.0)
    stop = positive[0] if positive.size else gamma.size
    gamma = np.minimum.accumulate(gamma[:stop])
    # sum_{k>=0} rho_k 的两倍减 1 即 1 + 2 sum_{k>=1} rho_k
    tau = -1.0 + 2.0 * gamma.sum()
    tau = max(tau, 1.0 / np.log10(max(n, 10)))
    return EssEstimate(float(min(n / tau, n)), False)


def potential_scale_reduction(chains: Sequence) -> float:
    """
    split-R̂：每条链对半分为两段，按段间 / 段内方差计算

    Args:
        chains: 若干条等长（取最短长度）的一维样本
    """
    arrays = [np.asarray(c, dtype=float) for c in chains]
    n = min(a.size for a in arrays) // 2
    if n < 2:
        raise DomainError("split-R̂ 需要每条链至少 4 个样本")
    halves = np.array([part for a in arrays for part in (a[:n], a[n: 2 * n])])
    within = halves.var(axis=1, ddof=1).mean()
    between = n * halves.mean(axis=1).var(ddof=1)
    if within == 0.0:
        return 1.0 if between == 0.0 else float("inf")
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


# ── 链导出与汇总 ────────────────────────────────────────────────


def export_trace(chain: PosteriorChain, parameter: str,
                 max_lag: Optional[int] = None) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    导出轨迹与 ACF 附表（只输出数据，不绘图）

    Returns:
        (轨迹表 iteration, value；ACF 表 lag, acf)

    Raises:
        LookupFailure: 链中没有该参数
    """
    values = chain.values(parameter)
    trace = pd.DataFrame({
        "iteration": chain.samples.index.to_numpy(dtype=int),
        "value": values,
    }, columns=TRACE_COLUMNS)
    if values.size == 0:
        return trace, pd.DataFrame(columns=ACF_COLUMNS)
    if max_lag is None:
        max_lag = min(values.size - 1, 200)
    rho = acf(values, max_lag)
    return trace, pd.DataFrame({"lag": np.arange(rho.size), "acf": rho}, columns=ACF_COLUMNS)


def chain_diagnostics(chain: PosteriorChain, parameter: str,
                      max_lag: Optional[int] = None) -> ChainDiagnostics:
    """单个参数的轨迹、ACF 表与 ESS（diagnose 命令逐参数调用）"""
    trace, acf_table = export_trace(chain, parameter, max_lag)
    return ChainDiagnostics(parameter=parameter, acf=acf_table,
                            ess=ess(trace["value"].to_numpy()), trace=trace)


def summarize_chain(chain: PosteriorChain) -> Dict[str, Dict[str, float]]:
    """
    每个参数的后验汇总：中位数、均值、2.5% / 97.5% 分位数、接受率、ESS

    固定参数（常数链）的 ESS 记为 0，并加 degenerate 标记。
    """
    summary: Dict[str, Dict[str, float]] = {}
    for name in chain.parameter_names:
        values = chain.values(name)
        entry: Dict[str, float] = {
            "median": float(np.median(values)),
            "mean": float(np.mean(values)),
            "q025": float(np.quantile(values, 0.025)),
            "q975": float(np.quantile(values, 0.975)),
            "acceptance": _json_float(chain.acceptance.get(name)),
        }
        if values.size >= MIN_CHAIN_LENGTH:
            estimate = ess(values)
            entry["ess"] = estimate.value
            if estimate.degenerate:
                entry["degenerate"] = True
        else:
            entry["ess"] = None
        summary[name] = entry
    return summary


def _json_float(value) -> Optional[float]:
    if value is None or not np.isfinite(value):
        return None
    return float(value)


# ── 经验极值系数 ────────────────────────────────────────────────


def _madogram(x: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
    n = x.size
    fx = stats.rankdata(x, method="average") / (n + 1.0)
    fy = stats.rankdata(y, method="average") / (n + 1.0)
    terms = 0.5 * np.abs(fx - fy)
    return float(terms.mean()), terms


def _theta_from_madogram(nu: float) -> float:
    return float(np.clip((1.0 + 2.0 * nu) / (1.0 - 2.0 * nu), 1.0, 2.0))


def _naive_theta(x: np.ndarray, y: np.ndarray) -> float:
    # min(1/X, 1/Y) ~ Exp(theta)，均值 1/theta
    m = np.minimum(1.0 / x, 1.0 / y).mean()
    return float(np.clip(1.0 / m, 1.0, 2.0))


def empirical_extremal_coefficient(x, y, pair: Tuple = (), estimator: str = "madogram",
                                   ci: str = "delta", rng: SeedLike = None) -> EmpiricalTheta:
    """
    两条重复序列（单位 Fréchet 尺度）的经验极值系数

    Args:
        x, y: 同一组重复上的两个序列，NaN 成对剔除
        pair: 写入结果的配对描述，如 (leaf_a, site_i, leaf_b, site_j)
        estimator: "madogram"（基于秩，对单调变换不变）或 "naive"（1/mean min(1/x, 1/y)）
        ci: "delta"（正态近似）或 "bootstrap"（200 次重抽样，百分位区间）
        rng: bootstrap 使用的种子

    Returns:
        EmpiricalTheta

    Raises:
        DomainError: 有效重复数少于 20 或参数无效
    """
    if estimator not in ("madogram", "naive"):
        raise DomainError(f"未知的估计量: {estimator}")
    if ci not in ("delta", "bootstrap"):
        raise DomainError(f"未知的置信区间方法: {ci}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DomainError(f"两个序列长度不一致: {x.shape} vs {y.shape}")
    keep = np.isfinite(x) & np.isfinite(y)
    x, y = x[keep], y[keep]
    n = x.size
    if n < MIN_PAIR_REPLICATES:
        raise DomainError(f"配对 {pair} 只有 {n} 个有效重复，少于 {MIN_PAIR_REPLICATES}")
    if n < WARN_PAIR_REPLICATES:
        logger.warning("配对 %s 只有 %d 个重复，经验极值系数不稳定", pair, n)
    ties = (n - np.unique(x).size) + (n - np.unique(y).size)
    if ties:
        logger.warning("配对 %s 有 %d 个结值，使用平均秩", pair, ties)

    if estimator == "madogram":
        nu, terms = _madogram(x, y)
        estimate = _theta_from_madogram(nu)
    else:
        estimate = _naive_theta(x, y)

    if ci == "delta":
        if estimator == "madogram":
            se_nu = terms.std(ddof=1) / np.sqrt(n)
            slope = 4.0 / (1.0 - 2.0 * nu) ** 2
            half = Z_95 * slope * se_nu
        else:
            w = np.minimum(1.0 / x, 1.0 / y)
            m = w.mean()
            half = Z_95 * (w.std(ddof=1) / np.sqrt(n)) / m ** 2
        low, high = estimate - half, estimate + half
    else:
        gen = make_generator(rng)
        idx = gen.integers(0, n, size=(BOOTSTRAP_RESAMPLES, n))
        if estimator == "madogram":
            boot = np.array([_theta_from_madogram(_madogram(x[i], y[i])[0]) for i in idx])
        else:
            boot = np.array([_naive_theta(x[i], y[i]) for i in idx])
        low, high = np.quantile(boot, [0.025, 0.975])

    low = float(np.clip(min(low, estimate), 1.0, 2.0))
    high = float(np.clip(max(high, estimate), 1.0, 2.0))
    return EmpiricalTheta(estimate=estimate, ci_low=low, ci_high=high, pair=tuple(pair),
                          n_rep=int(n), estimator=estimator)


# ── 后验预测分位数 ──────────────────────────────────────────────


def gumbel_coordinate(p) -> np.ndarray:
    """Gumbel 作图坐标 -log(-log p)"""
    return -np.log(-np.log(np.asarray(p, dtype=float)))


def posterior_predictive_max_quantile(chain: PosteriorChain, tree: DependenceTree, grid: KnotGrid,
                                      sites, leaves: Sequence[str], p_grid: Sequence[float],
                                      n_sim: int, seed: SeedLike = None, margins=None,
                                      site_ids: Optional[Sequence[str]] = None,
                                      site_subset: Optional[Sequence[int]] = None,
                                      labels: Optional[Mapping[float, str]] = None,
                                      workers: int = 1) -> pd.DataFrame:
    """
    空间最大值的后验预测分位数

    对每个保留的后验样本：用该样本的参数模拟 n_sim 个场（第 i 个样本使用主种子 spawn 的
    第 i 个子序列），可选地按 margins 变换到 GEV 尺度，对所选叶子 x 站点取最大值；
    汇总全部样本后取经验分位数。

    Args:
        chain: 后验链（非空）
        tree, grid: 依赖树结构与核节点网格
        sites: 全部 D 个站点
        leaves: 取最大值的叶子子集
        p_grid: 概率，均在 (0,1)
        n_sim: 每个后验样本的模拟次数
        margins: 可选的 GEV 边缘参数
        site_subset: 取最大值的站点下标，默认全部
        labels: 概率 -> 标签，默认 1 年 / 20 年一遇

    Returns:
        DataFrame(p, gumbel_coordinate, z_p, label)，按 p 升序
    """
    leaves = list(leaves)
    if not leaves:
        raise DomainError("叶子子集为空")
    unknown = [leaf for leaf in leaves if leaf not in tree.leaves]
    if unknown:
        raise LookupFailure(f"未知叶子: {', '.join(unknown)}")
    p = np.sort(np.asarray(list(p_grid), dtype=float))
    if p.size == 0 or np.any((p <= 0.0) | (p >= 1.0)):
        raise DomainError("p_grid 必须非空且全部位于 (0,1)")
    if len(chain) == 0:
        raise DomainError("后验链为空")
    if int(n_sim) < 1:
        raise DomainError(f"n_sim 必须 >= 1: {n_sim}")

    pts = sites_to_array(sites)
    ids = tuple(str(i) for i in (site_ids if site_ids is not None else range(pts.shape[0])))
    cols = np.arange(pts.shape[0]) if site_subset is None else np.asarray(site_subset, dtype=int)
    if cols.size == 0:
        raise DomainError("站点子集为空")
    leaf_idx = [tree.leaves.index(leaf) for leaf in leaves]
    draws = chain.draws()
    streams = spawn_generators(seed, len(draws))

    def run(args):
        params, rng = args
        alphas = {k: v for k, v in params.items() if not k.startswith("tau_")}
        taus = {k: v for k, v in params.items() if k.startswith("tau_")}
        fitted = tree.with_parameters(alphas=alphas, taus=taus)
        sample = simulate(fitted, leaf_bases(fitted, grid), pts, int(n_sim), seed=rng, site_ids=ids)
        if margins is not None:
            sample = to_gev(sample, margins)
        block = sample.values[leaf_idx][:, cols]
        return block.reshape(-1, block.shape[-1]).max(axis=0)

    jobs = list(zip(draws, streams))
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            pooled = list(pool.map(run, jobs))
    else:
        pooled = [run(job) for job in jobs]
    maxima = np.sort(np.concatenate(pooled))
    z_p = np.quantile(maxima, p)
    labels = RETURN_LEVEL_LABELS if labels is None else labels
    label_col = [_label_for(value, labels) for value in p]
    logger.info("后验预测: %d 个后验样本 x %d 次模拟，%d 个分位数", len(draws), int(n_sim), p.size)
    return pd.DataFrame({
        "p": p,
        "gumbel_coordinate": gumbel_coordinate(p),
        "z_p": np.maximum.accumulate(z_p),
        "label": label_col,
    }, columns=QUANTILE_COLUMNS)


def _label_for(p: float, labels: Mapping[float, str]) -> str:
    for key, name in labels.items():
        if abs(float(key) - p) < 1e-9:
            return name
    return ""


def chains_summary(chains: List[PosteriorChain]) -> Dict[str, Dict]:
    """多条链：各自汇总，另给出每个参数的 split-R̂（链数 >= 2）"""
    out: Dict[str, Dict] = {f"chain_{i}": summarize_chain(c) for i, c in enumerate(chains)}
    if len(chains) >= 2:
        rhat = {}
        for name in chains[0].parameter_names:
            try:
                rhat[name] = _json_float(potential_scale_reduction([c.values(name) for c in chains]))
            except DomainError:
                rhat[name] = None
        out["rhat"] = rhat
    return out
