import numpy as np
import pytest

from diffcurve.legendre import (
    density_coeffs,
    eval_density,
    gauss_legendre,
    highest_coeff_magnitude,
    interp_to_midpoints,
)

# reference nodes/weights (Abramowitz & Stegun) for low orders
TABLE = {
    1: ([0.0], [2.0]),
    2: ([-0.5773502691896257, 0.5773502691896257], [1.0, 1.0]),
    3: ([-0.7745966692414834, 0.0, 0.7745966692414834],
        [5 / 9, 8 / 9, 5 / 9]),
    4: ([-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526],
        [0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538]),
    5: ([-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831, 0.9061798459386640],
        [0.2369268850561891, 0.4786286704993665, 128 / 225, 0.4786286704993665, 0.2369268850561891]),
}


def test_known_low_order_rules():
    for g, (nodes, weights) in TABLE.items():
        basis = gauss_legendre(g)
        assert np.allclose(basis.nodes, nodes, atol=1e-14)
        assert np.allclose(basis.weights, weights, atol=1e-14)


def test_order_bounds():
    with pytest.raises(ValueError):
        gauss_legendre(0)
    with pytest.raises(ValueError):
        gauss_legendre(65)


def test_symmetry_and_weight_sum():
    for g in (2, 5, 9, 16, 32, 64):
        basis = gauss_legendre(g)
        assert np.allclose(basis.nodes, -basis.nodes[::-1], atol=1e-14)
        assert abs(basis.weights.sum() - 2.0) < 1e-13
        assert np.all(basis.weights > 0)


def test_polynomial_exactness():
    for g in (2, 4, 8):
        basis = gauss_legendre(g)
        # odd power 2g-1 integrates to 0 exactly; even power 2g-2 to 2/(2g-1)
        odd = np.dot(basis.weights, basis.nodes ** (2 * g - 1))
        even = np.dot(basis.weights, basis.nodes ** (2 * g - 2))
        assert abs(odd) < 1e-14
        assert abs(even - 2.0 / (2 * g - 1)) < 1e-13


def test_vandermonde_inverse_identity():
    basis = gauss_legendre(8)
    err = np.abs(basis.vandermonde @ basis.inverse - np.eye(8)).max()
    assert err < 1e-12


def test_constant_density_coeffs():
    basis = gauss_legendre(6)
    c = density_coeffs(basis, np.ones(6))
    assert abs(c[0] - 1.0) < 1e-13
    assert np.abs(c[1:]).max() < 1e-13


def test_linear_density_coeffs():
    basis = gauss_legendre(5)
    c = density_coeffs(basis, basis.nodes)  # sigma = P_1
    expected = np.zeros(5)
    expected[1] = 1.0
    assert np.abs(c - expected).max() < 1e-13


def test_coeff_roundtrip():
    rng = np.random.default_rng(0)
    basis = gauss_legendre(7)
    vals = rng.standard_normal(7)
    c = density_coeffs(basis, vals)
    back = eval_density(c, basis.nodes)
    assert np.abs(back - vals).max() < 1e-12


def test_eval_density_constant_and_p1():
    assert abs(eval_density([1.0, 0.0, 0.0], 0.73) - 1.0) < 1e-15
    assert abs(eval_density([0.0, 1.0, 0.0], 0.5) - 0.5) < 1e-15


def test_eval_density_vs_direct_polynomial():
    rng = np.random.default_rng(1)
    c = rng.standard_normal(6)
    ts = rng.uniform(-1, 1, 50)
    # direct evaluation by explicit recurrence
    ref = np.zeros_like(ts)
    p_prev = np.ones_like(ts)
    p_cur = ts.copy()
    ref += c[0] * p_prev + c[1] * p_cur
    for k in range(2, 6):
        p_next = ((2 * k - 1) * ts * p_cur - (k - 1) * p_prev) / k
        ref += c[k] * p_next
        p_prev, p_cur = p_cur, p_next
    assert np.abs(eval_density(c, ts) - ref).max() < 1e-13


def test_interp_constant():
    basis = gauss_legendre(4)
    mids = np.linspace(-0.95, 0.95, 20)
    out = interp_to_midpoints(basis, np.full(4, 3.3), mids)
    assert np.abs(out - 3.3).max() < 1e-12


def test_interp_exact_for_low_degree():
    rng = np.random.default_rng(2)
    g = 4
    basis = gauss_legendre(g)
    mids = np.linspace(-1, 1, 20)
    for deg in range(g):
        coeffs = rng.standard_normal(deg + 1)
        poly = np.polynomial.Polynomial(coeffs)
        out = interp_to_midpoints(basis, poly(basis.nodes), mids)
        assert np.abs(out - poly(mids)).max() < 1e-12


def test_interp_output_length_matches_spec_defaults():
    basis = gauss_legendre(4)
    mids = 2.0 * (np.arange(20) + 0.5) / 20 - 1.0
    out = interp_to_midpoints(basis, np.ones(4), mids)
    assert out.shape == (20,)


def test_highest_coeff_magnitude():
    assert highest_coeff_magnitude([1.0, 0.0, 0.0, 0.0]) == 0.0
    assert highest_coeff_magnitude([0.0, 0.0, 0.0, 2.0]) == 2.0


def test_kink_raises_highest_coeff():
    basis = gauss_legendre(4)
    kink = np.abs(basis.nodes - 0.21)  # kink inside the panel
    c_full = density_coeffs(basis, kink)
    # same density restricted to either half (re-sampled at half-panel nodes)
    left_nodes = 0.5 * (basis.nodes - 1.0)
    right_nodes = 0.5 * (basis.nodes + 1.0)
    c_left = density_coeffs(basis, np.abs(left_nodes - 0.21))
    c_right = density_coeffs(basis, np.abs(right_nodes - 0.21))
    full = highest_coeff_magnitude(c_full)
    assert full > highest_coeff_magnitude(c_left)
    assert full > highest_coeff_magnitude(c_right)
