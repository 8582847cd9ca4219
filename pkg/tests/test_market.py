import numpy as np
import pytest

from fastmerton import (
    affine_sharpe_map,
    constant_map,
    default_ygrid,
    ou_factor,
    sigmoid_sigma_map,
    tabulated_map,
    validate_model,
)
from fastmerton.errors import NonPositiveVolatility


def test_constant_map_sharpe():
    m = constant_map(0.08, 0.2)
    y = np.linspace(-3, 3, 7)
    assert np.allclose(m.sharpe(y), 0.4)


def test_affine_sharpe_map_values():
    m = affine_sharpe_map(0.1, 0.5, 0.2)
    y = np.array([-1.0, 0.0, 2.0])
    assert np.allclose(m.sharpe(y), 0.1 + 0.5 * y)
    assert np.allclose(m.mu(y), (0.1 + 0.5 * y) * 0.2)
    assert np.allclose(m.sigma(y), 0.2)


def test_sharpe_scale_consistency():
    base = constant_map(0.08, 0.2)
    scaled = constant_map(0.08 * 7.5, 0.2 * 7.5)
    y = np.linspace(-2, 2, 11)
    assert np.allclose(base.sharpe(y), scaled.sharpe(y), rtol=1e-15, atol=0)


def test_nonpositive_volatility_rejected():
    m = tabulated_map(
        np.linspace(-2, 2, 9), np.full(9, 0.05), np.linspace(-0.1, 0.4, 9)
    )
    with pytest.raises(NonPositiveVolatility):
        m.sharpe(np.array([-2.0]))


def test_sigmoid_sigma_constant_sharpe():
    m = sigmoid_sigma_map(0.1, 0.4, 0.3)
    y = np.linspace(-4, 4, 21)
    sig = np.asarray(m.sigma(y))
    assert np.all((sig > 0.1) & (sig < 0.4))
    assert np.allclose(m.sharpe(y), 0.3)
    assert sig[0] < sig[-1]


def test_ou_factor_fields():
    f = ou_factor(0.3, 0.5, 0.1, -0.5)
    assert f.epsilon == 0.1 and f.rho == -0.5
    assert np.isclose(f.b(np.array([0.3]))[0], 0.0)  # drift vanishes at the mean
    assert np.allclose(f.a(np.array([-1.0, 2.0])), 0.5 * np.sqrt(2.0))
    f2 = f.with_epsilon(0.025)
    assert f2.epsilon == 0.025 and f2.m == f.m and f2.nu == f.nu


def test_default_ygrid_covers_8_sigma():
    f = ou_factor(1.0, 0.4, 0.1, 0.0)
    g = default_ygrid(f)
    assert g.nodes[0] <= 1.0 - 8 * 0.4 + 1e-12
    assert g.nodes[-1] >= 1.0 + 8 * 0.4 - 1e-12
    assert np.isclose(np.sum(g.weights), g.nodes[-1] - g.nodes[0])


def test_validate_model_pass_constant_and_affine():
    f = ou_factor(0.0, 0.4, 0.1, -0.5)
    g = default_ygrid(f)
    assert validate_model(constant_map(0.08, 0.2), f, g)
    assert validate_model(affine_sharpe_map(0.0, 1.0, 0.2), f, g)


def test_validate_model_fails_with_offending_node():
    f = ou_factor(0.0, 0.4, 0.1, -0.5)
    g = default_ygrid(f)
    # sigma(y) = y is nonpositive on the left half of the grid
    m = tabulated_map(g.nodes, 0.05 * np.ones_like(g.nodes), g.nodes.copy())
    report = validate_model(m, f, g)
    assert not report
    assert report.sigma_violations.size > 0
    assert -1.0 in np.round(report.sigma_violations, 12)
    assert any("sigma" in msg for msg in report.messages)


def test_tabulated_map_interpolates():
    y = np.linspace(-2, 2, 41)
    m = tabulated_map(y, 0.4 * y * 0.2, np.full_like(y, 0.2))
    probe = np.array([-1.37, 0.0, 0.62])
    assert np.allclose(m.sharpe(probe), 0.4 * probe, atol=1e-10)
