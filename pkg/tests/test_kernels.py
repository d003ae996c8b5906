import numpy as np
import pytest

from diffcurve.discretize import Segment
from diffcurve.errors import KernelDomainError
from diffcurve.kernels import (
    classify_target,
    eval_F,
    eval_G,
    integrate_F_pairs,
    integrate_F_segment,
    integrate_G_pairs,
    integrate_G_segment,
    integrate_G_singular,
    integrate_F_singular,
    integrate_G_singular_values,
)
from diffcurve.verify import quad_F, quad_G


def seg(p1, p2, arc=None):
    arc = abs(p2 - p1) if arc is None else arc
    return Segment(p1, p2, 0, 0.0, 1.0, arc)


def test_eval_G_values():
    assert abs(eval_G(0j, 1 + 0j)) < 1e-15
    assert abs(eval_G(0j, np.e + 0j) + 1 / (2 * np.pi)) < 1e-12


def test_eval_G_symmetric():
    rng = np.random.default_rng(0)
    for _ in range(32):
        p = rng.standard_normal() + 1j * rng.standard_normal()
        q = rng.standard_normal() + 1j * rng.standard_normal()
        assert abs(eval_G(p, q) - eval_G(q, p)) < 1e-15


def test_eval_G_domain_error():
    with pytest.raises(KernelDomainError):
        eval_G(1 + 1j, 1 + 1j)


def test_eval_F_orthogonal_zero():
    # (p - q) perpendicular to n
    assert abs(eval_F(0j, 1 + 0j, 0 + 1j)) < 1e-15


def test_eval_F_unit_normal_offset():
    n = np.exp(0.3j)
    p = 0j
    q = p - n  # p - q = n
    assert abs(eval_F(p, q, n) + 1 / (2 * np.pi)) < 1e-14


def test_eval_F_finite_difference_of_G():
    rng = np.random.default_rng(1)
    h = 1e-6
    for _ in range(20):
        p = rng.standard_normal() + 1j * rng.standard_normal()
        q = p + (1 + rng.random()) * np.exp(2j * np.pi * rng.random())
        n = np.exp(2j * np.pi * rng.random())
        fd = (eval_G(p + h * n, q) - eval_G(p - h * n, q)) / (2 * h)
        assert abs(eval_F(p, q, n) - fd) < 1e-6


def test_integrate_G_translation_rotation_invariance():
    s = seg(0.1 + 0.2j, 0.9 - 0.3j, arc=1.1)
    q = 2.0 + 1.5j
    base = integrate_G_segment(s, q)
    shift = 3.7 - 2.2j
    shifted = integrate_G_segment(seg(s.p1 + shift, s.p2 + shift, s.arc), q + shift)
    assert abs(base - shifted) < 1e-12
    rot = np.exp(0.77j)
    rotated = integrate_G_segment(seg(q + rot * (s.p1 - q), q + rot * (s.p2 - q), s.arc), q)
    assert abs(base - rotated) < 1e-12


@pytest.mark.parametrize("kernel", ["G", "F"])
def test_closed_forms_match_adaptive_quadrature(kernel):
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(100):
        p1 = rng.standard_normal() + 1j * rng.standard_normal()
        p2 = p1 + (0.05 + rng.random()) * np.exp(2j * np.pi * rng.random())
        arc = abs(p2 - p1) * (1 + 0.4 * rng.random())
        q = 2.5 * (rng.standard_normal() + 1j * rng.standard_normal())
        if kernel == "G":
            got = float(integrate_G_pairs(p1, p2, arc, q))
            ref = quad_G(p1, p2, arc, q)
        else:
            got = float(integrate_F_pairs(p1, p2, arc, q))
            ref = quad_F(p1, p2, arc, q)
        worst = max(worst, abs(got - ref) / max(abs(ref), 1e-12))
    assert worst < 1e-10


def test_integrate_F_on_supporting_line_is_zero():
    s = seg(0j, 1 + 0j)
    for x in (-0.5, 1.5, 3.0):
        assert abs(integrate_F_segment(s, complex(x, 0.0))) < 1e-12


def test_gauss_identity_polygon():
    n = 1000
    th = 2 * np.pi * np.arange(n + 1) / n
    verts = np.exp(1j * th)
    p1, p2 = verts[:-1], verts[1:]
    arc = np.abs(p2 - p1)
    inside = integrate_F_pairs(p1, p2, arc, 0.2 + 0.1j).sum()
    outside = integrate_F_pairs(p1, p2, arc, 2.0 + 1.0j).sum()
    assert abs(inside + 1.0) < 1e-10
    assert abs(outside) < 1e-10


def test_singular_G_known_values():
    # arc s=2, q at midpoint: e1 = e2 = 1 -> 1/pi
    s = seg(-1 + 0j, 1 + 0j, arc=2.0)
    assert abs(integrate_G_singular(s, 0j) - 1 / np.pi) < 1e-14
    # s=1, q at an endpoint: e1=0, e2=1 -> 1/(2 pi)
    s2 = seg(0j, 1 + 0j, arc=1.0)
    assert abs(integrate_G_singular(s2, 0j) - 1 / (2 * np.pi)) < 1e-14


def test_singular_G_matches_principal_value_quadrature():
    # PV integral computed by symmetric exclusion of the singular point
    s = seg(-1 + 0j, 1 + 0j, arc=2.0)
    q = 0.3 + 0j
    eps_vals = [1e-4, 1e-5, 1e-6]
    pv = []
    from scipy.integrate import quad

    for eps in eps_vals:
        left, _ = quad(lambda x: -np.log(abs(x - 0.3)) / (2 * np.pi), -1, 0.3 - eps, limit=200)
        right, _ = quad(lambda x: -np.log(abs(x - 0.3)) / (2 * np.pi), 0.3 + eps, 1, limit=200)
        pv.append(left + right)
    # the excluded mass vanishes as eps -> 0
    assert abs(integrate_G_singular(s, q) - pv[-1]) < 1e-4


def test_singular_continuity_with_offset():
    s = seg(-1 + 0j, 1 + 0j, arc=2.0)
    on = integrate_G_singular(s, 0.2 + 0j)
    off = float(integrate_G_pairs(s.p1, s.p2, s.arc, 0.2 + 1e-6j))
    assert abs(on - off) < 1e-4


def test_singular_F_zero_and_classification():
    s = seg(0j, 2 + 0j)
    assert integrate_F_singular(s, 1 + 0j) == 0.0
    assert classify_target(s, 1 + 0j) == "singular"
    assert classify_target(s, 1 + 2j) == "regular"
    # junction point of two segments is singular for both
    s2 = seg(2 + 0j, 4 + 0j)
    assert classify_target(s, 2 + 0j) == "singular"
    assert classify_target(s2, 2 + 0j) == "singular"


def test_arc_consistency_collinear_split():
    rng = np.random.default_rng(7)
    for _ in range(20):
        p1 = rng.standard_normal() + 1j * rng.standard_normal()
        p2 = p1 + np.exp(2j * np.pi * rng.random())
        arc = abs(p2 - p1) * 1.21
        q = p1 + 2.5 * np.exp(2j * np.pi * rng.random())
        mid = 0.5 * (p1 + p2)
        whole_g = float(integrate_G_pairs(p1, p2, arc, q))
        parts_g = float(integrate_G_pairs(p1, mid, arc / 2, q)) + float(
            integrate_G_pairs(mid, p2, arc / 2, q)
        )
        assert abs(whole_g - parts_g) < 1e-12
        whole_f = float(integrate_F_pairs(p1, p2, arc, q))
        parts_f = float(integrate_F_pairs(p1, mid, arc / 2, q)) + float(
            integrate_F_pairs(mid, p2, arc / 2, q)
        )
        assert abs(whole_f - parts_f) < 1e-12
