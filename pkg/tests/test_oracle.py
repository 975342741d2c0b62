import numpy as np
import pytest
from scipy import integrate

from occusim.errors import InvalidArgument
from occusim.oracle import (VolterraKernel, covariance_eval, exact_path, kernel_eval, kernel_eval_direct,
                            kernel_table, linear_system_path)
from occusim.scheme import TimeGrid, brownian_increments

# 30-digit values from mpmath quadrature of the kernel definition
KERNEL_FROZEN = [
    (5.0, 1.0, 0.5, 0.37640854050575428218),
    (5.0, 1.0, 0.25, 0.54883063363425262803),
    (5.0, 0.5, 0.1, 0.83922786690432426547),
    (-2.0, 1.0, 0.7, 1.5397770104767959507),
    (1.0, 2.0, 1.0, 0.43834064119386557178),
]
COV_FROZEN = [
    (5.0, 1.0, 1.0, 0.33108497157382073064),
    (5.0, 1.0, 0.5, 0.24710338766950214281),
    (2.0, 0.5, 0.8, 0.37461257857865069078),
]


def quad_kernel(beta, t, s):
    inner, _ = integrate.quad(lambda u: np.exp(0.5 * beta * (s * s - u * u)), s, t, epsabs=1e-13, epsrel=1e-13, limit=200)
    return 1.0 - beta * s * inner


@pytest.mark.parametrize("beta,t,s,expect", KERNEL_FROZEN)
def test_kernel_frozen(beta, t, s, expect):
    assert kernel_eval(VolterraKernel(beta), t, s) == pytest.approx(expect, abs=1e-10)
    assert kernel_eval_direct(beta, t, s) == pytest.approx(expect, abs=1e-10)


@pytest.mark.parametrize("beta,t,s,expect", COV_FROZEN)
def test_covariance_frozen(beta, t, s, expect):
    assert covariance_eval(beta, t, s) == pytest.approx(expect, abs=1e-9)


def test_kernel_vs_adaptive_quadrature():
    rng = np.random.default_rng(7)
    for _ in range(40):
        beta = rng.uniform(-3, 8)
        t = rng.uniform(0.05, 1.5)
        s = rng.uniform(0, t)
        assert abs(kernel_eval(VolterraKernel(beta), t, s) - quad_kernel(beta, t, s)) < 1e-8


def test_kernel_identities():
    k = VolterraKernel(5.0)
    for t in np.linspace(0, 1, 11):
        assert kernel_eval(k, t, t) == 1.0
    assert kernel_eval(VolterraKernel(0.0), 0.9, 0.1) == 1.0
    assert kernel_eval(k, 0.8, 0.0) == 1.0


def test_kernel_domain():
    with pytest.raises(InvalidArgument):
        kernel_eval(VolterraKernel(1.0), 0.5, 0.6)
    with pytest.raises(InvalidArgument):
        kernel_eval(VolterraKernel(1.0), 0.5, -0.1)


def test_table_matches_pointwise():
    grid = TimeGrid(1.0, 16)
    tab = kernel_table(5.0, grid)
    t = grid.nodes
    assert tab.shape == (17, 16)
    for n in range(17):
        for i in range(16):
            if i < n:
                assert tab[n, i] == pytest.approx(kernel_eval(VolterraKernel(5.0), t[n], t[i]), abs=1e-10)
            else:
                assert tab[n, i] == 0.0


def test_covariance_symmetric_and_degenerate():
    assert covariance_eval(3.0, 0.4, 0.9) == covariance_eval(3.0, 0.9, 0.4)
    assert covariance_eval(0.0, 0.4, 0.9) == 0.4
    assert covariance_eval(3.0, 0.0, 0.9) == 0.0


def test_covariance_vs_dblquad():
    beta, t, s = 1.5, 0.9, 0.6
    val, _ = integrate.quad(lambda u: quad_kernel(beta, t, u) * quad_kernel(beta, s, u), 0, s, epsabs=1e-13)
    assert covariance_eval(beta, t, s) == pytest.approx(val, abs=1e-9)


def test_exact_path_beta_zero_is_brownian():
    grid = TimeGrid(1.0, 64)
    dw = brownian_increments(3, range(5), grid)
    X = exact_path(0.25, 0.0, grid, dw)
    np.testing.assert_allclose(X[:, 1:], 0.25 + np.cumsum(dw[:, :, 0], axis=1), atol=1e-13)


def test_exact_path_single_and_batch_agree():
    grid = TimeGrid(1.0, 32)
    dw = brownian_increments(3, range(4), grid)
    batch = exact_path(0.0, 5.0, grid, dw)
    for i in range(4):
        np.testing.assert_allclose(exact_path(0.0, 5.0, grid, dw[i]), batch[i], rtol=0, atol=1e-14)


def test_exact_path_variance_matches_covariance():
    grid = TimeGrid(1.0, 64)
    dw = brownian_increments(11, range(20000), grid)
    X = exact_path(0.0, 5.0, grid, dw)
    var = X[:, -1].var()
    assert var == pytest.approx(covariance_eval(5.0, 1.0, 1.0), rel=0.05)


def test_unprojected_euler_converges_to_exact():
    errs = []
    for N in (128, 256, 512):
        grid = TimeGrid(1.0, N)
        dw = brownian_increments(5, range(200), grid)
        diff = linear_system_path(0.0, 5.0, grid, dw) - exact_path(0.0, 5.0, grid, dw)
        errs.append(np.sqrt(np.mean(np.max(np.abs(diff), axis=1) ** 2)))
    assert errs[0] > errs[1] > errs[2]
    assert errs[0] / errs[2] == pytest.approx(4.0, rel=0.25)
