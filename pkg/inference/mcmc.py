"""
MH-MCMC 后验抽样模块

利用层级结构：给定潜在 alpha-稳定场，观测条件独立，
    Z_k(s) | A ~ 形状 1/P_k、尺度 theta_k(s) 的 Fréchet 型分布，
GEV 尺度时即 GEV(mu*, sigma*, xi*)。

待估参数：各内部节点 alpha（先验 Unif(0,1)），各叶子带宽 tau（先验 0.5 h_max Beta(2,5)），
以及每个重复、每个内部节点、每个核节点上的潜在振幅 A 及其辅助均匀变量 B。

一次完整扫描（顺序固定）：
    1. 潜在场：按节点先序、核节点顺序，逐个 (节点, 核节点) 更新；同一 (节点, 核节点)
       在所有重复上同时提议，各重复独立接受/拒绝（给定参数时各重复条件独立）
    2. alpha：按后序（叶层节点 -> 中间节点自底向上 -> 根）
    3. tau：按叶子顺序
提议均为变换尺度上的高斯随机游走（alpha、B 用 logit，tau、A 用 log），接受率含 Jacobian。
老化期内每个 adapt_window 次扫描按 Robbins-Monro 规则把各块接受率推向 0.30，老化期后冻结。
"""

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import expit, logit, logsumexp

from model.kernel import KernelBasis, KnotGrid, log_weight_matrix
from model.stable import log_density_augmented_array, sample_positive_stable
from model.tree import DependenceTree
from utils.errors import DomainError, LookupFailure, NumericalError, StructuralError, ValidationError
from utils.logger import get_logger
from utils.parser import MaximaDataset
from utils.rng import make_generator

logger = get_logger()

ALPHA_BOUNDS = (0.01, 0.99)
MAX_INIT_ATTEMPTS = 20


@dataclass(frozen=True)
class Prior:
    """先验：alpha ~ Unif(0,1)；tau ~ 0.5 h_max Beta(2,5)"""

    h_max: float

    def __post_init__(self):
        if not self.h_max > 0.0:
            raise DomainError(f"h_max 必须 > 0: {self.h_max}")

    @property
    def tau_scale(self) -> float:
        return 0.5 * self.h_max

    def log_alpha(self, alpha: float) -> float:
        return 0.0 if 0.0 < alpha < 1.0 else -np.inf

    def log_tau(self, tau: float) -> float:
        return float(stats.beta.logpdf(tau, 2.0, 5.0, scale=self.tau_scale))

    def sample_alpha(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(*ALPHA_BOUNDS))

    def sample_tau(self, rng: np.random.Generator) -> float:
        return float(self.tau_scale * rng.beta(2.0, 5.0))


@dataclass
class McmcConfig:
    """MCMC 配置"""

    iterations: int = 200_000
    burn_in: Optional[int] = None
    thinning: int = 1
    seed: Optional[int] = None
    adapt_window: int = 50
    target_acceptance: float = 0.30
    proposal_scales: Dict[str, float] = field(
        default_factory=lambda: {"alpha": 0.3, "tau": 0.3, "latent": 1.0}
    )
    fixed: Dict[str, float] = field(default_factory=dict)
    init: Dict[str, float] = field(default_factory=dict)
    log_every: int = 0

    def __post_init__(self):
        self.iterations = int(self.iterations)
        if self.burn_in is None:
            self.burn_in = self.iterations // 5
        self.burn_in = int(self.burn_in)
        self.thinning = int(self.thinning)
        problems = []
        if self.iterations < 1:
            problems.append(f"iterations 必须 >= 1: {self.iterations}")
        if not 0 <= self.burn_in < self.iterations:
            problems.append(f"burn_in 必须满足 0 <= burn_in < iterations: {self.burn_in}")
        if self.thinning < 1:
            problems.append(f"thinning 必须 >= 1: {self.thinning}")
        if self.adapt_window < 1:
            problems.append(f"adapt_window 必须 >= 1: {self.adapt_window}")
        if not 0.0 < self.target_acceptance < 1.0:
            problems.append(f"target_acceptance 必须在 (0,1): {self.target_acceptance}")
        if problems:
            raise ValidationError("MCMC 配置无效", problems)

    @property
    def n_retained(self) -> int:
        return (self.iterations - self.burn_in) // self.thinning


@dataclass
class McmcState:
    """链的当前状态"""

    alphas: Dict[str, float]
    taus: Dict[str, float]
    log_amp: np.ndarray          # (N, M, L) 潜在振幅的对数
    aux: np.ndarray              # (N, M, L) 辅助均匀变量
    log_post: float = -np.inf
    accepted: Dict[str, int] = field(default_factory=dict)
    proposed: Dict[str, int] = field(default_factory=dict)

    def copy(self) -> "McmcState":
        return McmcState(dict(self.alphas), dict(self.taus), self.log_amp.copy(),
                         self.aux.copy(), self.log_post, dict(self.accepted), dict(self.proposed))

    def parameters(self) -> Dict[str, float]:
        values = dict(self.alphas)
        values.update({f"tau_{leaf}": tau for leaf, tau in self.taus.items()})
        return values


@dataclass
class PosteriorChain:
    """保留的后验样本（去老化、稀释后）"""

    samples: pd.DataFrame                   # index = iteration，各参数一列，另有 log_post
    acceptance: Dict[str, float]
    config: Dict
    data_digest: str = ""
    parameter_names: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def values(self, parameter: str) -> np.ndarray:
        if parameter not in self.samples.columns:
            raise LookupFailure(f"链中没有参数: {parameter}")
        return self.samples[parameter].to_numpy()

    def draws(self) -> List[Dict[str, float]]:
        """逐条后验样本的参数字典"""
        cols = [c for c in self.parameter_names if c in self.samples.columns]
        return self.samples[cols].to_dict("records")

    def median_parameters(self) -> Dict[str, float]:
        cols = [c for c in self.parameter_names if c in self.samples.columns]
        return {c: float(np.median(self.samples[c].to_numpy())) for c in cols}

    def to_long_frame(self) -> pd.DataFrame:
        """长表 (iteration, parameter_name, value)"""
        cols = [c for c in self.parameter_names if c in self.samples.columns] + ["log_post"]
        frame = self.samples[cols].copy()
        frame.index.name = "iteration"
        long = frame.reset_index().melt(id_vars="iteration", var_name="parameter_name",
                                        value_name="value")
        return long[["iteration", "parameter_name", "value"]]

    @classmethod
    def from_long_frame(cls, frame: pd.DataFrame, acceptance: Optional[Dict[str, float]] = None,
                        config: Optional[Dict] = None) -> "PosteriorChain":
        wide = frame.pivot(index="iteration", columns="parameter_name", values="value").sort_index()
        wide.columns.name = None
        names = [c for c in pd.unique(frame["parameter_name"]) if c != "log_post"]
        return cls(samples=wide, acceptance=dict(acceptance or {}), config=dict(config or {}),
                   parameter_names=names)


class NestedModel:
    """
    条件似然与潜在先验的向量化计算

    缓存 log_B (N, K, L)、log_S (N, K, D)，log_S = log sum_l B_l omega_l^{1/P} = (1/P) log theta；
    单元对数似然 = -log P + log_S - (1/P + 1) log z - exp(log_S - log z / P)。
    """

    def __init__(self, tree: DependenceTree, grid: KnotGrid, data: MaximaDataset):
        data = data.align_to(tree.leaves) if tuple(data.leaves) != tuple(tree.leaves) else data
        self.tree = tree
        self.grid = grid
        self.data = data
        self.leaves = list(tree.leaves)
        self.node_names = [n.name for n in tree.internal_nodes()]
        self.node_index = {name: m for m, name in enumerate(self.node_names)}
        self.post_order = [n.name for n in tree.internal_nodes(order="post")]
        self.K, self.M, self.L = len(self.leaves), len(self.node_names), grid.L
        self.D, self.N = data.values.shape[1], data.values.shape[2]

        z = data.values.transpose(2, 0, 1)                       # (N, K, D)
        self.observed = np.isfinite(z)
        self.log_z = np.where(self.observed, np.log(np.where(self.observed, z, 1.0)), 0.0)
        # 每个节点下的叶子下标
        self.desc = {
            name: np.array([self.leaves.index(l) for l in tree.descendant_leaves(name)], dtype=int)
            for name in self.node_names
        }
        self.sites = data.coords

    # ── 结构量 ──────────────────────────────────────────────────

    def structure(self, alphas: Mapping[str, float]):
        """由 alpha 计算路径乘积 P (K,) 与复合指数矩阵 E (K, M)"""
        tree = self.tree.with_parameters(alphas=alphas)
        P = np.array([tree.path_product(leaf).product for leaf in self.leaves])
        E = np.zeros((self.K, self.M))
        for k, leaf in enumerate(self.leaves):
            for name, power in tree.path_exponents(leaf):
                E[k, self.node_index[name]] = power
        return P, E

    def log_weights(self, taus: Mapping[str, float]) -> np.ndarray:
        """(K, D, L) 的 log omega"""
        return np.stack([
            log_weight_matrix(KernelBasis(self.grid, taus[leaf]), self.sites) for leaf in self.leaves
        ]) if self.D else np.zeros((self.K, 0, self.L))

    # ── 似然 ────────────────────────────────────────────────────

    @staticmethod
    def log_s(log_b: np.ndarray, log_w: np.ndarray, P: np.ndarray) -> np.ndarray:
        """log_b (N, k, L), log_w (k, D, L), P (k,) -> (N, k, D)"""
        terms = log_b[:, :, None, :] + (log_w / P[:, None, None])[None]
        return logsumexp(terms, axis=-1)

    def cell_terms(self, log_s: np.ndarray, P: np.ndarray, leaf_idx=slice(None)) -> np.ndarray:
        """单元对数似然 (N, k, D)，缺失单元为 0"""
        log_z = self.log_z[:, leaf_idx]
        inv_p = (1.0 / P)[None, :, None]
        with np.errstate(over="ignore", invalid="ignore"):
            ll = -np.log(P)[None, :, None] + log_s - (inv_p + 1.0) * log_z - np.exp(log_s - inv_p * log_z)
        ll = np.where(self.observed[:, leaf_idx], ll, 0.0)
        return np.where(np.isnan(ll), -np.inf, ll)

    def latent_prior(self, log_amp: np.ndarray, aux: np.ndarray, alphas: Mapping[str, float],
                     node_idx=None) -> np.ndarray:
        """潜在振幅的增广先验对数密度 (N, m, L)；alpha = 1 的节点振幅恒为 1，贡献 0"""
        idx = range(self.M) if node_idx is None else [node_idx]
        out = []
        for m in idx:
            a = float(alphas[self.node_names[m]])
            if a >= 1.0:
                out.append(np.zeros((self.N, self.L)))
            else:
                with np.errstate(over="ignore"):
                    out.append(log_density_augmented_array(np.exp(log_amp[:, m]), aux[:, m], a))
        return np.stack(out, axis=1)

    def evaluate(self, state: McmcState) -> Dict[str, np.ndarray]:
        """从状态出发完整计算全部缓存量"""
        P, E = self.structure(state.alphas)
        log_w = self.log_weights(state.taus)
        log_b = np.einsum("km,nml->nkl", E, state.log_amp)
        log_s = self.log_s(log_b, log_w, P)
        cells = self.cell_terms(log_s, P)
        prior = self.latent_prior(state.log_amp, state.aux, state.alphas)
        return {"P": P, "E": E, "log_w": log_w, "log_b": log_b, "log_s": log_s,
                "cells": cells, "latent_prior": prior}

    def gev_cell_terms(self, state: McmcState, mu: np.ndarray, sigma: np.ndarray,
                       xi: np.ndarray, x: np.ndarray) -> np.ndarray:
        """
        GEV 尺度单元对数似然 (N, K, D)

        x ~ GEV(mu*, sigma*, xi*)，mu* = mu + sigma/xi (theta^xi - 1)，sigma* = P sigma theta^xi，
        xi* = P xi；xi -> 0 时 mu* = mu + sigma log theta。
        """
        cache = self.evaluate(state)
        P = cache["P"][None, :, None]
        log_theta = P * cache["log_s"]
        gumbel = np.abs(xi) < 1e-8
        safe_xi = np.where(gumbel, 1.0, xi)
        mu_star = np.where(gumbel, mu + sigma * log_theta,
                           mu + sigma * np.expm1(safe_xi * log_theta) / safe_xi)
        sigma_star = P * sigma * np.exp(xi * log_theta)
        xi_star = P * xi
        ll = stats.genextreme.logpdf(x, -xi_star, loc=mu_star, scale=sigma_star)
        ll = np.where(np.isfinite(x), ll, 0.0)
        return np.where(np.isnan(ll), -np.inf, ll)


def log_conditional_likelihood(state: McmcState, data: MaximaDataset, tree: DependenceTree,
                               grid: KnotGrid, margins=None) -> float:
    """
    条件对数似然

    Args:
        state: 当前参数与潜在场
        data: 单位 Fréchet 尺度数据；给出 margins 时视为 GEV 尺度
        margins: 可选，GEV 边缘参数（GevParams / 映射 / DataFrame）

    Returns:
        对数似然；支撑集违规返回 -inf
    """
    model = NestedModel(tree, grid, data)
    if margins is None:
        total = float(model.evaluate(state)["cells"].sum())
    else:
        from model.simulate import margin_arrays
        mu, sigma, xi = (a[..., 0][None] for a in margin_arrays(margins, model.leaves, data.site_ids))
        x = model.data.values.transpose(2, 0, 1)
        total = float(model.gev_cell_terms(state, mu, sigma, xi, x).sum())
    return total if np.isfinite(total) else -np.inf


def cell_log_likelihood(state: McmcState, data: MaximaDataset, tree: DependenceTree,
                        grid: KnotGrid) -> np.ndarray:
    """单元对数似然数组，形状 (K, D, N)"""
    model = NestedModel(tree, grid, data)
    return model.evaluate(state)["cells"].transpose(1, 2, 0)


class MetropolisSampler:
    """单条链的 MH 采样器"""

    def __init__(self, tree: DependenceTree, grid: KnotGrid, data: MaximaDataset,
                 prior: Prior, config: McmcConfig):
        self.model = NestedModel(tree, grid, data)
        self.prior = prior
        self.config = config
        self.fixed = dict(config.fixed)
        unknown = [k for k in self.fixed if k not in tree.parameter_names()]
        if unknown:
            raise ValidationError("未知的固定参数", unknown)
        self.free_alphas = [n for n in self.model.post_order if n not in self.fixed]
        self.free_taus = [leaf for leaf in self.model.leaves if f"tau_{leaf}" not in self.fixed]
        self.log_scales: Dict[str, float] = {}
        for name in self.free_alphas:
            self.log_scales[name] = np.log(config.proposal_scales.get("alpha", 0.3))
        for leaf in self.free_taus:
            self.log_scales[f"tau_{leaf}"] = np.log(config.proposal_scales.get("tau", 0.3))
        for name in self.model.node_names:
            self.log_scales[f"latent:{name}"] = np.log(config.proposal_scales.get("latent", 1.0))
        self._cache: Dict[str, np.ndarray] = {}

    # ── 初始化 ──────────────────────────────────────────────────

    def initial_state(self, rng: np.random.Generator, dispersed: bool = False) -> McmcState:
        """
        初始状态：首条链取配置 init / 树中数值，其余链（dispersed）从先验抽取；
        潜在振幅按当前 alpha 从 PS 分布抽取，辅助变量取均匀分布。
        分散初值的对数后验非有限时重新抽取，最多 MAX_INIT_ATTEMPTS 次。
        """
        attempts = MAX_INIT_ATTEMPTS if dispersed else 1
        for attempt in range(1, attempts + 1):
            state = self._draw_start(rng, dispersed)
            self.refresh(state)
            if np.isfinite(state.log_post):
                return state
            if attempt < attempts:
                logger.warning("分散初值的对数后验非有限，重新抽取 (%d/%d)", attempt, attempts)
        raise NumericalError(f"初始对数后验非有限: {state.log_post}")

    def _draw_start(self, rng: np.random.Generator, dispersed: bool) -> McmcState:
        model, tree = self.model, self.model.tree
        alphas, taus = {}, {}
        for name, value in tree.alphas.items():
            if name in self.fixed:
                alphas[name] = float(self.fixed[name])
            elif dispersed:
                alphas[name] = self.prior.sample_alpha(rng)
            else:
                start = float(self.config.init.get(name, value))
                alphas[name] = float(np.clip(start, *ALPHA_BOUNDS))
        for leaf, value in tree.taus.items():
            key = f"tau_{leaf}"
            if key in self.fixed:
                taus[leaf] = float(self.fixed[key])
            elif dispersed:
                taus[leaf] = self.prior.sample_tau(rng)
            else:
                taus[leaf] = float(self.config.init.get(key, value))
                if taus[leaf] >= self.prior.tau_scale:
                    logger.warning("tau_%s 初值 %.4g 超出先验支撑 (0, %.4g)，改用 0.9 倍上界",
                                   leaf, taus[leaf], self.prior.tau_scale)
                    taus[leaf] = 0.9 * self.prior.tau_scale

        log_amp = np.zeros((model.N, model.M, model.L))
        for m, name in enumerate(model.node_names):
            if model.N == 0:
                break
            draws = sample_positive_stable(alphas[name], model.N * model.L, rng)
            log_amp[:, m, :] = np.log(draws).reshape(model.N, model.L)
        aux = rng.uniform(0.05, 0.95, size=log_amp.shape)
        return McmcState(alphas=alphas, taus=taus, log_amp=log_amp, aux=aux)

    def refresh(self, state: McmcState):
        """完整重算缓存与对数后验"""
        self._cache = self.model.evaluate(state)
        state.log_post = self._log_post(state)

    def _log_post(self, state: McmcState) -> float:
        value = float(self._cache["cells"].sum() + self._cache["latent_prior"].sum())
        value += sum(self.prior.log_alpha(state.alphas[n]) for n in self.free_alphas)
        value += sum(self.prior.log_tau(state.taus[leaf]) for leaf in self.free_taus)
        return value if np.isfinite(value) else -np.inf

    # ── 单次扫描 ────────────────────────────────────────────────

    def _count(self, state: McmcState, block: str, accepted: int, proposed: int):
        state.accepted[block] = state.accepted.get(block, 0) + int(accepted)
        state.proposed[block] = state.proposed.get(block, 0) + int(proposed)

    def _update_latent(self, state: McmcState, rng: np.random.Generator):
        model, cache = self.model, self._cache
        if model.N == 0:
            return
        for m, name in enumerate(model.node_names):
            if state.alphas[name] >= 1.0:
                continue
            block = f"latent:{name}"
            scale = np.exp(self.log_scales[block])
            leaves = model.desc[name]
            e = cache["E"][leaves, m]                                   # (k,)
            P = cache["P"][leaves]
            log_w = cache["log_w"][leaves]
            alpha = state.alphas[name]
            n_acc = 0
            for l in range(model.L):
                eps = rng.standard_normal((2, model.N))
                log_u = np.log(rng.random(model.N))
                old_a = state.log_amp[:, m, l]
                old_b = state.aux[:, m, l]
                new_a = old_a + scale * eps[0]
                new_b = expit(logit(old_b) + scale * eps[1])
                valid = (new_b > 0.0) & (new_b < 1.0)

                log_b = cache["log_b"][:, leaves, :].copy()
                log_b[:, :, l] += (new_a - old_a)[:, None] * e[None, :]
                new_s = model.log_s(log_b, log_w, P)
                new_cells = model.cell_terms(new_s, P, leaves)
                d_ll = new_cells.sum(axis=(1, 2)) - cache["cells"][:, leaves].sum(axis=(1, 2))

                with np.errstate(over="ignore"):
                    new_prior = log_density_augmented_array(np.exp(new_a), new_b, alpha)
                d_prior = new_prior - cache["latent_prior"][:, m, l]
                jac = (new_a - old_a) + (np.log(new_b) + np.log1p(-new_b)
                                         - np.log(old_b) - np.log1p(-old_b))
                log_ratio = d_ll + d_prior + jac
                accept = valid & np.isfinite(log_ratio) & (log_u < log_ratio)
                if accept.any():
                    idx = np.flatnonzero(accept)
                    state.log_amp[idx, m, l] = new_a[idx]
                    state.aux[idx, m, l] = new_b[idx]
                    cache["latent_prior"][idx, m, l] = new_prior[idx]
                    sub_b = cache["log_b"][:, leaves, :]
                    sub_b[idx] = log_b[idx]
                    cache["log_b"][:, leaves, :] = sub_b
                    sub_s = cache["log_s"][:, leaves, :]
                    sub_s[idx] = new_s[idx]
                    cache["log_s"][:, leaves, :] = sub_s
                    sub_c = cache["cells"][:, leaves, :]
                    sub_c[idx] = new_cells[idx]
                    cache["cells"][:, leaves, :] = sub_c
                    n_acc += idx.size
            self._count(state, block, n_acc, model.N * model.L)

    def _update_alpha(self, state: McmcState, name: str, rng: np.random.Generator):
        scale = np.exp(self.log_scales[name])
        eps = rng.standard_normal()
        log_u = np.log(rng.random())
        old = state.alphas[name]
        new = float(expit(logit(old) + scale * eps))
        accepted = 0
        if 0.0 < new < 1.0:
            proposal = state.copy()
            proposal.alphas[name] = new
            saved = self._cache
            self._cache = self.model.evaluate(proposal)
            new_post = self._log_post(proposal)
            jac = np.log(new) + np.log1p(-new) - np.log(old) - np.log1p(-old)
            if np.isfinite(new_post) and log_u < new_post - state.log_post + jac:
                state.alphas[name] = new
                state.log_post = new_post
                accepted = 1
            else:
                self._cache = saved
        self._count(state, name, accepted, 1)

    def _update_tau(self, state: McmcState, leaf: str, rng: np.random.Generator):
        block = f"tau_{leaf}"
        scale = np.exp(self.log_scales[block])
        eps = rng.standard_normal()
        log_u = np.log(rng.random())
        old = state.taus[leaf]
        new = float(old * np.exp(scale * eps))
        model, cache = self.model, self._cache
        k = model.leaves.index(leaf)
        accepted = 0
        prior_new = self.prior.log_tau(new)
        if np.isfinite(prior_new):
            log_w = log_weight_matrix(KernelBasis(model.grid, new), model.sites)[None] \
                if model.D else np.zeros((1, 0, model.L))
            idx = np.array([k])
            P = cache["P"][idx]
            new_s = model.log_s(cache["log_b"][:, idx, :], log_w, P)
            new_cells = model.cell_terms(new_s, P, idx)
            d_ll = float(new_cells.sum() - cache["cells"][:, idx].sum())
            d_prior = prior_new - self.prior.log_tau(old)
            jac = np.log(new) - np.log(old)
            log_ratio = d_ll + d_prior + jac
            if np.isfinite(log_ratio) and log_u < log_ratio:
                state.taus[leaf] = new
                cache["log_w"][k] = log_w[0]
                cache["log_s"][:, k] = new_s[:, 0]
                cache["cells"][:, k] = new_cells[:, 0]
                state.log_post += d_ll + d_prior
                accepted = 1
        self._count(state, block, accepted, 1)

    def sweep(self, state: McmcState, rng: np.random.Generator) -> McmcState:
        """一次完整扫描：潜在场 -> alpha（后序）-> tau"""
        if not self._cache:
            self.refresh(state)
        self._update_latent(state, rng)
        state.log_post = self._log_post(state)
        for name in self.free_alphas:
            self._update_alpha(state, name, rng)
        for leaf in self.free_taus:
            self._update_tau(state, leaf, rng)
        return state

    # ── 自适应 ──────────────────────────────────────────────────

    def adapt(self, window_acc: Dict[str, int], window_prop: Dict[str, int], step: int):
        """Robbins-Monro：log 尺度 += (接受率 - 目标) / sqrt(step)"""
        gain = 1.0 / np.sqrt(step)
        for block in self.log_scales:
            prop = window_prop.get(block, 0)
            if prop:
                rate = window_acc.get(block, 0) / prop
                self.log_scales[block] += gain * (rate - self.config.target_acceptance)


def mh_step(state: McmcState, data: MaximaDataset, tree: DependenceTree, grid: KnotGrid,
            prior: Prior, rng: np.random.Generator, config: Optional[McmcConfig] = None) -> McmcState:
    """
    一次完整的 MH 扫描（便捷接口，每次调用都重建缓存；长链请用 run_chain）

    Returns:
        更新后的状态（原地修改并返回）
    """
    sampler = MetropolisSampler(tree, grid, data, prior, config or McmcConfig(iterations=2, burn_in=0))
    sampler.refresh(state)
    return sampler.sweep(state, rng)


def run_chain(data: MaximaDataset, tree: DependenceTree, grid: KnotGrid, prior: Prior,
              config: McmcConfig, seed=None, dispersed: bool = False,
              chain_id: int = 0) -> PosteriorChain:
    """
    运行一条完整的链

    Args:
        data: 单位 Fréchet 尺度数据（叶子需与树一致，站点需有坐标）
        tree, grid: 依赖树与节点网格；树中数值作为首条链的初值
        prior: 先验
        config: MCMC 配置
        seed: 覆盖 config.seed（整数或 SeedSequence / Generator）
        dispersed: 为 True 时从先验抽取初值
        chain_id: 仅用于日志

    Returns:
        PosteriorChain，长度 floor((R - burn_in) / thinning)
    """
    if tuple(sorted(data.leaves)) != tuple(sorted(tree.leaves)):
        data.align_to(tree.leaves)  # 抛出带差异说明的 StructuralError
    if data.coords.shape[0] != data.values.shape[1]:
        raise StructuralError("站点坐标与数据维度不一致")

    rng = make_generator(config.seed if seed is None else seed)
    sampler = MetropolisSampler(tree, grid, data, prior, config)
    state = sampler.initial_state(rng, dispersed=dispersed)
    names = tree.parameter_names()

    R, burn_in, thin = config.iterations, config.burn_in, config.thinning
    retained_iters: List[int] = []
    retained_rows: List[List[float]] = []
    window_acc: Dict[str, int] = {}
    window_prop: Dict[str, int] = {}
    adapt_step = 0
    post_acc: Dict[str, int] = {}
    post_prop: Dict[str, int] = {}

    logger.info("链 %d 开始: R=%d, burn-in=%d, thinning=%d, 数据 N=%d",
                chain_id, R, burn_in, thin, sampler.model.N)
    for it in range(1, R + 1):
        before_acc, before_prop = dict(state.accepted), dict(state.proposed)
        sampler.sweep(state, rng)
        for block, count in state.proposed.items():
            d_prop = count - before_prop.get(block, 0)
            d_acc = state.accepted.get(block, 0) - before_acc.get(block, 0)
            if it <= burn_in:
                window_prop[block] = window_prop.get(block, 0) + d_prop
                window_acc[block] = window_acc.get(block, 0) + d_acc
            else:
                post_prop[block] = post_prop.get(block, 0) + d_prop
                post_acc[block] = post_acc.get(block, 0) + d_acc

        if it <= burn_in and it % config.adapt_window == 0:
            adapt_step += 1
            sampler.adapt(window_acc, window_prop, adapt_step)
            window_acc, window_prop = {}, {}
        if it == burn_in:
            # 老化期结束，冻结提议尺度并重算缓存，消除累积误差
            sampler.refresh(state)
            logger.info("链 %d 老化期结束，提议尺度冻结", chain_id)

        if it > burn_in and (it - burn_in) % thin == 0:
            params = state.parameters()
            retained_iters.append(it)
            retained_rows.append([params[n] for n in names] + [state.log_post])
            if not np.isfinite(state.log_post):
                raise NumericalError(f"第 {it} 次迭代的对数后验非有限")

        if config.log_every and it % config.log_every == 0:
            logger.info("链 %d 迭代 %d/%d, log_post=%.3f", chain_id, it, R, state.log_post)

    acceptance = {
        block: (post_acc.get(block, 0) / post_prop[block]) if post_prop.get(block) else float("nan")
        for block in sorted(set(post_prop) | set(sampler.log_scales))
    }
    samples = pd.DataFrame(retained_rows, columns=names + ["log_post"],
                           index=pd.Index(retained_iters, name="iteration"))
    logger.info("链 %d 完成: 保留 %d 个样本", chain_id, len(samples))
    return PosteriorChain(
        samples=samples,
        acceptance=acceptance,
        config=asdict(config),
        data_digest=data.digest(),
        parameter_names=names,
    )
