import logging

import numpy as np
import pytest
from scipy import stats

from inference.margins import MARGIN_COLUMNS, fit_gev, fit_margins_gev, gev_nll
from utils.logger import LOGGER_NAME


def _gev_draws(mu, sigma, xi, n, seed):
    return stats.genextreme.rvs(c=-xi, loc=mu, scale=sigma, size=n, random_state=seed)


@pytest.mark.parametrize("xi", [-0.2, 0.0, 0.3])
def test_fit_gev_recovers_parameters(xi):
    data = _gev_draws(10.0, 2.0, xi, 3000, seed=4)
    params, converged, nll = fit_gev(data)
    assert converged
    assert params.mu == pytest.approx(10.0, abs=0.2)
    assert params.sigma == pytest.approx(2.0, rel=0.1)
    assert params.xi == pytest.approx(xi, abs=0.07)
    assert np.isfinite(nll)


def test_nll_outside_support_is_infinite():
    data = np.array([0.0, 1.0, 10.0])
    assert gev_nll((0.0, 0.0, -0.5), data) == np.inf
    assert np.isfinite(gev_nll((0.0, 0.0, 0.0), data))


def test_nll_matches_scipy():
    data = _gev_draws(1.0, 0.5, 0.1, 50, seed=1)
    expected = -stats.genextreme.logpdf(data, c=-0.1, loc=1.0, scale=0.5).sum()
    assert gev_nll((1.0, np.log(0.5), 0.1), data) == pytest.approx(expected, rel=1e-9)


def test_degenerate_cell_not_converged():
    params, converged, nll = fit_gev(np.full(30, 3.0))
    assert params is None and not converged and np.isnan(nll)


def test_fit_margins_table_and_standardization(caplog):
    caplog.set_level(logging.WARNING, logger=LOGGER_NAME)
    values = np.empty((1, 2, 200))
    values[0, 0] = _gev_draws(5.0, 1.0, 0.1, 200, seed=8)
    values[0, 1] = 2.0
    fit = fit_margins_gev(values, ["A"], ["s1", "s2"])
    assert list(fit.table.columns) == MARGIN_COLUMNS
    ok, bad = fit.table.iloc[0], fit.table.iloc[1]
    assert ok["converged"] and not bad["converged"]
    assert ok["ks_pvalue"] > 1e-3
    assert np.all(fit.frechet[0, 0] > 0)
    assert np.all(np.isnan(fit.frechet[0, 1]))
    assert list(fit.params()["site_id"]) == ["s1"]
    assert any("未收敛" in r.getMessage() for r in caplog.records)


def test_few_replicates_warns(caplog):
    caplog.set_level(logging.WARNING, logger=LOGGER_NAME)
    values = _gev_draws(0.0, 1.0, 0.0, 10, seed=2).reshape(1, 1, 10)
    fit_margins_gev(values, ["A"], ["s"])
    assert any("少于" in r.getMessage() for r in caplog.records)
