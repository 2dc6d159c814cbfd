"""
随机数流管理

拆分规则：主种子 -> numpy.random.SeedSequence(seed)，按顺序 spawn(n) 得到 n 个子序列，
第 i 个子序列对应第 i 个重复 / 链 / 后验抽样。结果与工作线程数无关。
"""

from typing import List, Union

import numpy as np

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator, None]


def make_seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    """把整数种子、SeedSequence 或 Generator 统一为 SeedSequence"""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, np.random.Generator):
        # 从已有生成器派生：消耗一个整数，保证可复现
        return np.random.SeedSequence(int(seed.integers(0, 2 ** 63 - 1)))
    return np.random.SeedSequence(seed)


def spawn_generators(seed: SeedLike, n: int) -> List[np.random.Generator]:
    """按拆分规则派生 n 个独立的生成器"""
    children = make_seed_sequence(seed).spawn(int(n))
    return [np.random.default_rng(child) for child in children]


def make_generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(make_seed_sequence(seed))
