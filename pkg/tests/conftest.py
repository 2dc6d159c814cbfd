"""测试公共夹具"""

import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from model.kernel import KernelBasis, make_regular_grid  # noqa: E402
from model.tree import DependenceTree  # noqa: E402


DEEP_TREE = {
    "alpha": 0.9,
    "children": [
        {"alpha": 0.7, "children": [
            {"leaf": "Z11", "tau": 0.1, "alpha": 0.4},
            {"leaf": "Z12", "tau": 0.1, "alpha": 0.4},
        ]},
        {"alpha": 0.7, "children": [
            {"leaf": "Z21", "tau": 0.1, "alpha": 0.4},
            {"leaf": "Z22", "tau": 0.1, "alpha": 0.4},
        ]},
    ],
}

T1_TREE = {
    "alpha": 0.5,
    "children": [
        {"leaf": "Z1", "tau": 3.0, "alpha": 0.4},
        {"leaf": "Z2", "tau": 3.0, "alpha": 0.8},
    ],
}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def deep_tree():
    return DependenceTree.from_dict(DEEP_TREE)


@pytest.fixture
def t1_tree():
    return DependenceTree.from_dict(T1_TREE)


@pytest.fixture
def t1_grid():
    return make_regular_grid((0.0, 6.0, 0.0, 6.0), 5, 5, anchor="edge")


@pytest.fixture
def small_grid():
    return make_regular_grid((0.0, 1.0, 0.0, 1.0), 2, 2)


@pytest.fixture
def small_basis(small_grid):
    return KernelBasis(small_grid, 0.5)


@pytest.fixture
def repo_root():
    return ROOT
