"""Gauss-Legendre nodes/weights and Legendre interpolation between panel samplings.

Density values live at the g Gauss-Legendre nodes of a panel; converting to
expansion coefficients (c = Pq^-1 * values) and back lets us evaluate the
density at arbitrary arc-length fractions, in particular at the midpoints of
the BEM line segments used for solving and evaluation.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg


class LegendreBasis:
    """Order-g Gauss-Legendre basis on [-1, 1].

    Attributes:
        order: g
        nodes, weights: quadrature rule (roots of P_g, positive weights)
        vandermonde: g x g matrix with entry [i, j] = P_j(node_i)
        inverse: its inverse (values at nodes -> Legendre coefficients)
    """

    def __init__(self, order: int):
        if not 1 <= order <= 64:
            raise ValueError(f"Legendre order {order} outside [1, 64]")
        self.order = order
        nodes, weights = npleg.leggauss(order)
        self.nodes = nodes
        self.weights = weights
        self.vandermonde = npleg.legvander(nodes, order - 1)
        self.inverse = np.linalg.inv(self.vandermonde)

    def interp_matrix(self, params) -> np.ndarray:
        """Matrix mapping node values to values at `params` (in [-1, 1]).

        Exact for polynomials of degree < g.
        """
        params = np.asarray(params, dtype=float)
        return npleg.legvander(params, self.order - 1) @ self.inverse


@lru_cache(maxsize=64)
def gauss_legendre(order: int) -> LegendreBasis:
    """Cached basis constructor."""
    return LegendreBasis(order)


def density_coeffs(basis: LegendreBasis, values) -> np.ndarray:
    """Legendre expansion coefficients of node values (c = Pq^-1 * values)."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] != basis.order:
        raise ValueError("value count does not match basis order")
    return basis.inverse @ values

def eval_density(coeffs, t) -> np.ndarray:
    """Evaluate a Legendre expansion at t in [-1, 1] (Clenshaw recurrence)."""
    return npleg.legval(np.asarray(t, dtype=float), np.asarray(coeffs))


def interp_to_midpoints(basis: LegendreBasis, values, params) -> np.ndarray:
    """Interpolate node values to arbitrary arc-length fractions in [-1, 1]."""
    return basis.interp_matrix(params) @ np.asarray(values, dtype=float)


def highest_coeff_magnitude(coeffs) -> float:
    """|c_g|, the subdivision indicator: large highest-order coefficient means
    the density is under-resolved on this panel."""
    coeffs = np.asarray(coeffs)
    return float(np.abs(coeffs[..., -1]).max())
