"""Estimator facade: fit/predict surface and scikit-learn conventions."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mhfdesign import ContractDesigner

ATOM_LOSS = {"kind": "uniform_with_atom", "m0": 0.5, "scale": 1.0}


@pytest.fixture(scope="module")
def fitted():
    est = ContractDesigner(theta=13.0 / 12.0, sigma=0.5, utility="exponential",
                           alpha=1.0, weighting="closed_form", n=600,
                           method="both", max_iters=400_000)
    return est.fit(ATOM_LOSS)


class TestSklearnSurface:
    def test_get_set_params_roundtrip(self):
        est = ContractDesigner(theta=0.3, n=64)
        params = est.get_params()
        assert params["theta"] == 0.3
        est.set_params(theta=0.7)
        assert est.theta == 0.7

    def test_clone(self):
        est = ContractDesigner(theta=0.25, sigma=0.4, n=64)
        twin = clone(est)
        assert twin.get_params() == est.get_params()

    def test_predict_before_fit_raises(self):
        with pytest.raises(NotFittedError):
            ContractDesigner(n=64).predict([0.1])


class TestFit:
    def test_fit_on_spec(self, fitted):
        assert fitted.converged_
        assert fitted.solver_gap_ <= 5e-3
        x = np.linspace(0.0, 1.0, 201)
        r = fitted.predict_retention(x)
        i = fitted.predict(x)
        assert np.max(np.abs(r + i - x)) <= 1e-12
        truth = np.maximum(3 * x - 1, 0.0) / 6.0
        assert np.max(np.abs(r - truth)) <= 2e-2
        assert fitted.insurer_value_ == pytest.approx(0.0, abs=1e-8)

    def test_fit_on_sample(self):
        rng = np.random.default_rng(12)
        sample = rng.uniform(0.0, 1.0, 400)
        est = ContractDesigner(theta=0.6, sigma=0.5, weighting="power",
                               weighting_exponent=0.7, n=200, max_iters=100_000)
        est.fit(sample)
        assert est.retention_quantile_.shape == (201,)
        assert est.premium_ > 0
        # payouts are nondecreasing in the loss
        x = np.linspace(0, sample.max(), 101)
        assert np.all(np.diff(est.predict(x)) >= -1e-9)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            ContractDesigner(n=64).fit(np.array([[1.0, 2.0], [3.0, 4.0]]))
        with pytest.raises(ValueError):
            ContractDesigner(n=64, method="newton").fit(ATOM_LOSS)
        with pytest.raises(ValueError):
            ContractDesigner(n=64, weighting="cubic").fit(ATOM_LOSS)
        with pytest.raises(ValueError):
            ContractDesigner(n=64, utility="log").fit(ATOM_LOSS)

    def test_method_direct_has_no_gap(self):
        est = ContractDesigner(theta=0.5, sigma=0.5, weighting="power",
                               weighting_exponent=0.7, n=200,
                               method="direct", max_iters=100_000)
        est.fit(ATOM_LOSS)
        assert est.solver_gap_ is None
