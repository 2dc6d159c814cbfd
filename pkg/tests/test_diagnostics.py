import logging

import numpy as np
import pandas as pd
import pytest

from inference.diagnostics import (
    QUANTILE_COLUMNS,
    acf,
    chain_diagnostics,
    chains_summary,
    empirical_extremal_coefficient,
    ess,
    export_trace,
    gumbel_coordinate,
    posterior_predictive_max_quantile,
    potential_scale_reduction,
    summarize_chain,
)
from inference.mcmc import PosteriorChain
from model.kernel import Site
from model.tree import DependenceTree
from utils.errors import DomainError, LookupFailure
from utils.logger import LOGGER_NAME


def _ar1(phi, n, seed):
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = eps[0] / np.sqrt(1 - phi ** 2)
    for i in range(1, n):
        x[i] = phi * x[i - 1] + eps[i]
    return x


def _chain(columns, names=None):
    frame = pd.DataFrame(columns)
    frame.index = pd.Index(np.arange(1, len(frame) + 1), name="iteration")
    names = names or [c for c in frame.columns if c != "log_post"]
    return PosteriorChain(samples=frame, acceptance={n: 0.3 for n in names}, config={},
                          parameter_names=names)


def test_acf_constant_and_lag_zero():
    assert np.array_equal(acf(np.ones(20), 3), [1.0, 0.0, 0.0, 0.0])
    rho = acf(np.random.default_rng(0).standard_normal(100))
    assert rho[0] == pytest.approx(1.0)


def test_ess_iid_close_to_n():
    x = np.random.default_rng(1).standard_normal(5000)
    estimate = ess(x)
    assert not estimate.degenerate
    assert estimate.value == pytest.approx(5000, rel=0.15)
    assert estimate.value <= 5000


def test_ess_ar1():
    x = _ar1(0.5, 20000, seed=2)
    assert ess(x).value == pytest.approx(20000 / 3.0, rel=0.1)


def test_ess_constant_chain_is_degenerate():
    assert ess(np.full(50, 0.3)) == (0.0, True)


def test_ess_short_chain_rejected():
    with pytest.raises(DomainError):
        ess(np.arange(9.0))


def test_split_rhat():
    rng = np.random.default_rng(3)
    same = [rng.standard_normal(1000) for _ in range(3)]
    assert potential_scale_reduction(same) == pytest.approx(1.0, abs=0.02)
    shifted = [rng.standard_normal(1000), rng.standard_normal(1000) + 3.0]
    assert potential_scale_reduction(shifted) > 1.5


def test_export_trace_tables():
    chain = _chain({"alpha_0": np.linspace(0.2, 0.4, 30), "log_post": np.zeros(30)})
    trace, acf_table = export_trace(chain, "alpha_0", max_lag=5)
    assert list(trace.columns) == ["iteration", "value"]
    assert trace["iteration"].tolist() == list(range(1, 31))
    assert list(acf_table["lag"]) == [0, 1, 2, 3, 4, 5]
    with pytest.raises(LookupFailure):
        export_trace(chain, "alpha_9")


def test_chain_diagnostics_bundles_trace_acf_and_ess():
    x = _ar1(0.5, 400, seed=6)
    chain = _chain({"alpha_0": x, "tau_A": np.full(400, 1.5), "log_post": np.zeros(400)})
    diag = chain_diagnostics(chain, "alpha_0", max_lag=10)
    assert diag.parameter == "alpha_0"
    assert len(diag.trace) == 400
    assert len(diag.acf) == 11
    assert diag.ess.value == pytest.approx(ess(x).value)
    assert chain_diagnostics(chain, "tau_A").ess == (0.0, True)


def test_summary_marks_fixed_parameters():
    x = np.random.default_rng(4).uniform(size=40)
    chain = _chain({"alpha_0": x, "tau_A": np.full(40, 2.0), "log_post": np.zeros(40)})
    summary = summarize_chain(chain)
    assert summary["tau_A"]["ess"] == 0.0
    assert summary["tau_A"]["degenerate"] is True
    assert summary["alpha_0"]["median"] == pytest.approx(np.median(x))
    assert summary["alpha_0"]["q025"] < summary["alpha_0"]["q975"]
    assert "degenerate" not in summary["alpha_0"]

    both = chains_summary([chain, chain])
    assert set(both) == {"chain_0", "chain_1", "rhat"}
    assert "rhat" not in chains_summary([chain])


def test_madogram_perfect_dependence():
    x = 1.0 / -np.log(np.random.default_rng(5).uniform(size=200))
    theta = empirical_extremal_coefficient(x, x, pair=("A", "s1", "A", "s1"))
    assert theta.estimate == pytest.approx(1.0)
    assert theta.ci_low == 1.0
    assert theta.pair == ("A", "s1", "A", "s1")


def test_madogram_independence():
    rng = np.random.default_rng(6)
    x = 1.0 / -np.log(rng.uniform(size=5000))
    y = 1.0 / -np.log(rng.uniform(size=5000))
    theta = empirical_extremal_coefficient(x, y)
    assert theta.estimate == pytest.approx(2.0, abs=0.05)
    assert 1.0 <= theta.ci_low <= theta.estimate <= theta.ci_high <= 2.0


def test_naive_and_bootstrap_variants():
    rng = np.random.default_rng(7)
    x = 1.0 / -np.log(rng.uniform(size=400))
    y = 1.0 / -np.log(rng.uniform(size=400))
    theta = empirical_extremal_coefficient(x, y, estimator="naive", ci="bootstrap", rng=9)
    assert theta.estimator == "naive"
    assert theta.ci_low <= theta.estimate <= theta.ci_high
    assert theta.estimate > 1.7


def test_pairs_with_missing_values(caplog):
    caplog.set_level(logging.WARNING, logger=LOGGER_NAME)
    rng = np.random.default_rng(8)
    x = 1.0 / -np.log(rng.uniform(size=30))
    y = x.copy()
    y[:5] = np.nan
    theta = empirical_extremal_coefficient(x, y)
    assert theta.n_rep == 25
    assert any("不稳定" in r.getMessage() for r in caplog.records)
    with pytest.raises(DomainError):
        empirical_extremal_coefficient(x[:19], x[:19])


def test_gumbel_coordinate():
    assert gumbel_coordinate(np.exp(-1.0)) == pytest.approx(0.0)


@pytest.fixture
def singleton():
    tree = DependenceTree.from_dict({"alpha": 0.5, "children": [{"leaf": "X", "tau": 1.0}]})
    chain = _chain({"alpha_0": np.full(10, 0.5), "tau_X": np.full(10, 1.0)})
    return tree, chain


def test_predictive_singleton_matches_frechet_quantile(singleton, small_grid):
    tree, chain = singleton
    table = posterior_predictive_max_quantile(
        chain, tree, small_grid, [Site(0.5, 0.5)], ["X"], [0.5, 0.917, 0.996], 2000, seed=10,
    )
    assert list(table.columns) == QUANTILE_COLUMNS
    assert table.loc[0, "z_p"] == pytest.approx(-1.0 / np.log(0.5), abs=0.06)
    assert table["label"].tolist() == ["", "1-year", "20-year"]
    assert table["z_p"].is_monotonic_increasing


def test_predictive_reproducible_across_workers(singleton, small_grid):
    tree, chain = singleton
    kwargs = dict(leaves=["X"], p_grid=[0.5, 0.9], n_sim=50, seed=3)
    a = posterior_predictive_max_quantile(chain, tree, small_grid, [Site(0.2, 0.2)], workers=1, **kwargs)
    b = posterior_predictive_max_quantile(chain, tree, small_grid, [Site(0.2, 0.2)], workers=3, **kwargs)
    pd.testing.assert_frame_equal(a, b)


def test_predictive_rejects_bad_leaf_subsets(singleton, small_grid):
    tree, chain = singleton
    with pytest.raises(DomainError):
        posterior_predictive_max_quantile(chain, tree, small_grid, [Site(0, 0)], [], [0.5], 10)
    with pytest.raises(LookupFailure):
        posterior_predictive_max_quantile(chain, tree, small_grid, [Site(0, 0)], ["Y"], [0.5], 10)
    with pytest.raises(DomainError):
        posterior_predictive_max_quantile(chain, tree, small_grid, [Site(0, 0)], ["X"], [1.0], 10)
