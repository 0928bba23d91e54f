from fractions import Fraction

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from stpc.controller import PENDULUM_GAINS, InProcessSession, pendulum_controller
from stpc.estimator import SecureLinearController


def pendulum_estimator(**kw):
    spec = pendulum_controller()
    mats = {name: getattr(spec, name).to_strings() for name in "ABCD"}
    return SecureLinearController(**mats, c="2.34", gamma="0.59", **kw)


def test_params_and_clone():
    est = pendulum_estimator(seed=5)
    params = est.get_params()
    assert params["seed"] == 5 and params["ell"] == 32
    assert clone(est).get_params()["c"] == "2.34"


def test_transform_matches_session():
    Y = np.array([[0.5, -0.25], [0.0, 0.125], [1.0, 0.0]])
    est = pendulum_estimator(seed=9).fit()
    got = est.transform(Y)
    s = InProcessSession(pendulum_controller(), seed=9)
    want = [float(s.step(row).u[0, 0]) for row in Y]
    s.close()
    assert got.shape == (3, 1) and got[:, 0].tolist() == want


def test_state_carries_and_reset():
    est = pendulum_estimator(seed=1).fit()
    first = est.transform([[1.0, 0.0]])
    assert first[0, 0] == float(Fraction(PENDULUM_GAINS[0]))
    second = est.transform([[1.0, 0.0]])
    assert second[0, 0] != first[0, 0]
    assert est.reset().transform([[1.0, 0.0]])[0, 0] == first[0, 0]
    exact = est.reset().transform_exact([[1, 0]])
    assert exact[0][0] == Fraction(PENDULUM_GAINS[0])


def test_validation():
    with pytest.raises(NotFittedError):
        pendulum_estimator().transform([[0, 0]])
    with pytest.raises(ValueError):
        SecureLinearController().fit()
    est = pendulum_estimator().fit()
    with pytest.raises(ValueError):
        est.transform([[0, 0, 0]])
