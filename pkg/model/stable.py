"""
正 alpha-稳定分布 PS(alpha) 模块

PS(alpha) 由其 Laplace 变换 E[exp(-tA)] = exp(-t^alpha) 定义，是所有潜在振幅的来源。

- 抽样：Kanter / Chambers-Mallows-Stuck 型变换，每次抽样使用一个 (0, pi) 均匀变量
  和一个单位指数变量，无拒绝步骤
- 密度：Kanter 积分表示，引入辅助均匀变量 aux ∈ (0,1)，对 aux 积分即得 PS 密度
- alpha = 1 为恒等于 1 的点质量，单独处理
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy import integrate

from utils.errors import DomainError, UnsupportedDegenerateError

# aux 的截断阈值，积分核在两端发散
AUX_EPS = 1e-12


@dataclass(frozen=True)
class StableParam:
    """PS(alpha) 参数，0 < alpha <= 1"""

    alpha: float

    def __post_init__(self):
        check_alpha(self.alpha)

    @property
    def degenerate(self) -> bool:
        return self.alpha == 1.0


@dataclass(frozen=True)
class StableAuxPair:
    """潜在振幅及其辅助均匀变量"""

    amplitude: float
    aux: float


def check_alpha(alpha: float) -> float:
    """校验 alpha ∈ (0, 1]，返回 float"""
    try:
        value = float(alpha)
    except (TypeError, ValueError):
        raise DomainError(f"alpha 必须为实数，收到 {alpha!r}")
    if not np.isfinite(value) or value <= 0.0 or value > 1.0:
        raise DomainError(f"alpha 超出 (0,1]: {value}")
    return value


def _alpha_of(alpha) -> float:
    if isinstance(alpha, StableParam):
        return alpha.alpha
    return check_alpha(alpha)


def log_kanter_function(u: np.ndarray, alpha: float) -> np.ndarray:
    """
    Kanter 函数的对数

    c(u) = {sin(alpha u) / sin u}^{1/(1-alpha)} * sin((1-alpha) u) / sin(alpha u),
    u ∈ (0, pi)。A = {c(U)/W}^{(1-alpha)/alpha} 即服从 PS(alpha)。
    """
    u = np.asarray(u, dtype=float)
    log_sin_au = np.log(np.sin(alpha * u))
    return (
        (log_sin_au - np.log(np.sin(u))) / (1.0 - alpha)
        + np.log(np.sin((1.0 - alpha) * u))
        - log_sin_au
    )


def sample_positive_stable(alpha, n: int, rng: np.random.Generator) -> np.ndarray:
    """
    抽取 n 个独立的 PS(alpha) 样本

    Args:
        alpha: 稳定参数 (0,1] 或 StableParam
        n: 样本数，>= 1
        rng: 已设定种子的 numpy Generator

    Returns:
        长度为 n 的正实数数组；同一种子得到逐位相同的序列
    """
    a = _alpha_of(alpha)
    n = int(n)
    if n < 1:
        raise DomainError(f"样本数必须 >= 1，收到 {n}")
    if a == 1.0:
        return np.ones(n)

    u = rng.uniform(0.0, np.pi, size=n)
    w = rng.standard_exponential(size=n)
    log_a = (1.0 - a) / a * (log_kanter_function(u, a) - np.log(w))
    return np.exp(log_a)


def log_density_augmented_array(amplitude, aux, alpha: float) -> np.ndarray:
    """
    增广密度的对数（向量化版本）

    f(a, b) = alpha/(1-alpha) * a^{-1/(1-alpha)} * c(pi b) * exp{-c(pi b) a^{-alpha/(1-alpha)}}
    对 b ∈ (0,1) 积分得到 f_PS(a; alpha)。
    """
    a = _alpha_of(alpha)
    if a == 1.0:
        raise UnsupportedDegenerateError("alpha = 1 为点质量，不存在密度")
    amplitude = np.asarray(amplitude, dtype=float)
    b = np.clip(np.asarray(aux, dtype=float), AUX_EPS, 1.0 - AUX_EPS)

    log_amp = np.log(amplitude)
    log_c = log_kanter_function(np.pi * b, a)
    ratio = a / (1.0 - a)
    return (
        np.log(ratio)
        - log_amp / (1.0 - a)
        + log_c
        - np.exp(log_c - ratio * log_amp)
    )


def log_density_augmented(pair: StableAuxPair, alpha) -> float:
    """
    (amplitude, aux) 联合密度的对数

    Args:
        pair: 振幅与辅助变量
        alpha: 稳定参数，必须严格小于 1

    Returns:
        对数密度（有限值）
    """
    if pair.amplitude <= 0.0 or not (0.0 < pair.aux < 1.0):
        raise DomainError(
            f"需要 amplitude > 0 且 0 < aux < 1，收到 ({pair.amplitude}, {pair.aux})"
        )
    return float(log_density_augmented_array(pair.amplitude, pair.aux, alpha))


def log_density(amplitude: float, alpha) -> float:
    """
    PS(alpha) 边际密度的对数，对辅助变量做一维数值积分

    仅用于检验与诊断，MCMC 中只使用增广密度。
    """
    a = _alpha_of(alpha)

    def integrand(b):
        return np.exp(log_density_augmented_array(amplitude, b, a))

    value, _ = integrate.quad(integrand, 0.0, 1.0, limit=200, epsabs=1e-13, epsrel=1e-10)
    return float(np.log(value)) if value > 0.0 else -np.inf


def laplace_check(alpha, t_grid: Sequence[float], n: int,
                  rng: np.random.Generator) -> List[Tuple[float, float]]:
    """
    Monte-Carlo 估计 E[exp(-tA)] 及其标准误

    Args:
        alpha: 稳定参数
        t_grid: 非负 t 值
        n: 样本数，>= 10^4
        rng: 随机数生成器

    Returns:
        每个 t 对应的 (估计值, 标准误)
    """
    n = int(n)
    if n < 10_000:
        raise DomainError(f"Laplace 检验需要 n >= 10^4，收到 {n}")
    t_values = np.asarray(t_grid, dtype=float)
    if np.any(t_values < 0.0):
        raise DomainError("t 必须非负")

    draws = sample_positive_stable(alpha, n, rng)
    results = []
    for t in t_values:
        values = np.exp(-t * draws)
        estimate = float(values.mean())
        std_error = float(values.std(ddof=1) / np.sqrt(n))
        results.append((estimate, std_error))
    return results


def compose_amplitudes(child: np.ndarray, parent: np.ndarray, alpha_child: float) -> np.ndarray:
    """A_k * A_0^{1/alpha_k}：若 A_k ~ PS(alpha_k)、A_0 ~ PS(alpha_0) 独立，则结果服从 PS(alpha_k alpha_0)"""
    return np.asarray(child) * np.asarray(parent) ** (1.0 / check_alpha(alpha_child))
