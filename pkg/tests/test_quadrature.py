import math

import numpy as np
import pytest

from eulerian_pf.quadrature import box_rule, simplex_rule


def _monomial_integral(exps):
    # int over the unit simplex of prod x_i^a_i = prod a_i! / (n + sum a_i)!
    n = len(exps)
    return math.prod(math.factorial(a) for a in exps) / math.factorial(n + sum(exps))


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("order", [1, 2, 4, 6, 8])
def test_simplex_rule_exact_to_order(dim, order):
    bary, w = simplex_rule(dim, order)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.all(w > 0) and np.all(bary >= 0)
    x = bary[:, 1:]
    vol = 1.0 / math.factorial(dim)
    for exps in np.ndindex(*([order + 1] * dim)):
        if sum(exps) > order:
            continue
        approx = vol * np.dot(w, np.prod(x ** np.array(exps), axis=1))
        assert approx == pytest.approx(_monomial_integral(exps), rel=1e-12, abs=1e-16)


def test_simplex_rule_rejects_bad_arguments():
    with pytest.raises(ValueError):
        simplex_rule(4, 2)
    with pytest.raises(ValueError):
        simplex_rule(2, 0)


def test_box_rule_integrates_polynomials():
    X, W = box_rule([0.0, -1.0], [2.0, 1.0], 4)
    assert W.sum() == pytest.approx(4.0)
    assert np.dot(W, X[:, 0] ** 3 * X[:, 1] ** 2) == pytest.approx(4.0 * 2.0 / 3.0)
