import numpy as np
import pytest

from diffcurve import fmm
from diffcurve.dense import kernel_matrices
from diffcurve.discretize import Discretization, TargetSet
from diffcurve.errors import ContractViolationError, StaleCacheError
from diffcurve.fixtures import random_scene
from diffcurve.fmm import (
    FmmContext,
    fmm_eval,
    incoming_from_incoming,
    incoming_from_outgoing,
    incoming_from_source,
    local_fmm,
    outgoing_from_outgoing,
    outgoing_from_source,
    pre_fmm,
    target_from_incoming,
    target_from_outgoing,
    target_from_source,
    update_pre_fmm,
)
from diffcurve.kernels import integrate_F_pairs, integrate_G_pairs
from diffcurve.quadtree import build_quadtree
from diffcurve.solver import scene_root_box

RATE = np.sqrt(2.0) / 3.0


def far_segment(seed=0):
    rng = np.random.default_rng(seed)
    p1 = 0.1 * (rng.standard_normal() + 1j * rng.standard_normal())
    p2 = p1 + 0.2 * np.exp(2j * np.pi * rng.random())
    arc = abs(p2 - p1) * (1 + 0.3 * rng.random())
    return np.array([p1]), np.array([p2]), np.array([arc])


def test_ofs_constant_zeroth_moment_is_arc():
    p1, p2, arc = far_segment(1)
    sig = outgoing_from_source("G", 0j, p1, p2, arc, np.ones(1), k=8)
    assert abs(sig[0, 0] - arc[0]) < 1e-14
    zero = outgoing_from_source("G", 0j, p1, p2, arc, np.zeros(1), k=8)
    assert np.abs(zero).max() == 0.0


def test_ofs_matches_quadrature():
    from scipy.integrate import quad

    p1, p2, arc = far_segment(2)
    k = 10
    sig = outgoing_from_source("G", 0j, p1, p2, arc, np.ones(1), k=k)
    d = p2[0] - p1[0]
    scale = arc[0] / abs(d)
    for kk in range(k + 1):
        fact = 1.0
        for j in range(1, kk + 1):
            fact *= j

        def f(t, part):
            z = p1[0] + t * d
            v = z**kk / fact
            return v.real if part == 0 else v.imag

        re = quad(lambda t: f(t, 0), 0, 1, limit=100)[0]
        im = quad(lambda t: f(t, 1), 0, 1, limit=100)[0]
        ref = (re + 1j * im) * abs(d) * scale
        assert abs(sig[kk, 0] - ref) < 1e-12 * max(1, abs(ref))


def test_ifs_matches_quadrature():
    from scipy.integrate import quad

    rng = np.random.default_rng(3)
    ctr = 2.5 * np.exp(2j * np.pi * rng.random())
    d = 0.5 * np.exp(2j * np.pi * rng.random())
    p1, p2 = np.array([ctr - d / 2]), np.array([ctr + d / 2])
    arc = np.abs(p2 - p1) * 1.17
    k = 8
    inc = incoming_from_source("G", 0j, p1, p2, arc, np.ones(1), k=k)
    scale = arc[0] / abs(p2[0] - p1[0])
    for kk in range(1, k + 1):  # k = 0 row needs the branch-safe antiderivative
        fact = 1.0
        for j in range(1, kk):
            fact *= j

        def f(t, part):
            z = p1[0] + t * (p2[0] - p1[0])
            v = fact / z**kk
            return v.real if part == 0 else v.imag

        re = quad(lambda t: f(t, 0), 0, 1, limit=200)[0]
        im = quad(lambda t: f(t, 1), 0, 1, limit=200)[0]
        ref = (re + 1j * im) * abs(p2[0] - p1[0]) * scale
        assert abs(inc[kk, 0] - ref) < 1e-10 * max(1, abs(ref))


@pytest.mark.parametrize("kernel,exact", [("G", integrate_G_pairs), ("F", integrate_F_pairs)])
def test_single_route_equivalences(kernel, exact):
    p1, p2, arc = far_segment(4)
    q = 2.6 + 1.9j
    k = 16
    ref = float(exact(p1, p2, arc, np.array([q]))[0])
    sig = outgoing_from_source(kernel, 0j, p1, p2, arc, np.ones(1), k=k)
    # target-from-outgoing within the truncation rate
    tfo = float(target_from_outgoing(sig, 0j, q)[0, 0])
    assert abs(tfo - ref) < 2 * RATE**k + 1e-12
    # through the parent (outgoing-from-outgoing)
    sig_p = outgoing_from_outgoing(sig, 0j, 0.05 + 0.05j)
    tfo_p = float(target_from_outgoing(sig_p, 0.05 + 0.05j, q)[0, 0])
    assert abs(tfo_p - ref) < 4 * RATE**k + 1e-12
    # incoming-from-outgoing then target-from-incoming
    ca = 2.5 + 2.0j
    inc = incoming_from_outgoing(sig, 0j, ca)
    tfi = float(target_from_incoming(inc, ca, q)[0, 0])
    assert abs(tfi - ref) < 4 * RATE**k + 1e-12
    # incoming-from-incoming is exact on truncated expansions
    child = 2.55 + 1.95j
    inc_c = incoming_from_incoming(inc, ca, child)
    tfi_c = float(target_from_incoming(inc_c, child, q)[0, 0])
    assert abs(tfi_c - tfi) < 1e-12
    # incoming-from-source route
    inc_s = incoming_from_source(kernel, ca, p1, p2, arc, np.ones(1), k=k)
    tfi_s = float(target_from_incoming(inc_s, ca, q)[0, 0])
    assert abs(tfi_s - ref) < 2 * RATE**k + 1e-12


def test_identity_translations():
    rng = np.random.default_rng(5)
    exp = rng.standard_normal((17, 1)) + 1j * rng.standard_normal((17, 1))
    out = outgoing_from_outgoing(exp, 0.3 + 0.4j, 0.3 + 0.4j)
    assert np.abs(out - exp).max() < 1e-14
    inc = incoming_from_incoming(exp, -1j, -1j)
    assert np.abs(inc - exp).max() < 1e-14
    # linearity
    a = outgoing_from_outgoing(2 * exp, 0j, 1j)
    b = 2 * outgoing_from_outgoing(exp, 0j, 1j)
    assert np.abs(a - b).max() < 1e-12


def test_ifo_contract_violation():
    exp = np.zeros((9, 1), dtype=complex)
    with pytest.raises(ContractViolationError):
        incoming_from_outgoing(exp, 0j, 0.5 + 0j, src_half=0.5, tgt_half=0.5)


def test_truncation_error_decreases_with_k():
    p1, p2, arc = far_segment(6)
    q = 1.2 + 0.9j  # moderately separated: visible truncation error
    ref = float(integrate_G_pairs(p1, p2, arc, np.array([q]))[0])
    errs = []
    for k in (4, 8, 16):
        sig = outgoing_from_source("G", 0j, p1, p2, arc, np.ones(1), k=k)
        errs.append(abs(float(target_from_outgoing(sig, 0j, q)[0, 0]) - ref))
    assert errs[0] > errs[1] > errs[2] or errs[2] < 1e-13


def test_target_from_source_matches_definition_and_singular():
    scene = random_scene(2, seed=9)
    disc = Discretization(scene)
    seg = disc.solve
    dens = np.linspace(0.1, 1.0, len(seg))
    tg = disc.node_targets()
    mats = kernel_matrices(tg, seg.p1, seg.p2, seg.arc)
    got = target_from_source("G", seg.p1, seg.p2, seg.arc, dens, tg)
    assert np.abs(got[:, 0] - mats["G"] @ dens).max() < 1e-12


def make_ctx(seed, k=16, n_curves=8, cache=True):
    rng = np.random.default_rng(seed)
    scene = random_scene(n_curves, seed=seed)
    disc = Discretization(scene)
    seg = disc.solve
    pts = rng.random(120) * 1.4 - 0.2 + 1j * (rng.random(120) * 1.4 - 0.2)
    tg = TargetSet(pts)
    ctx = FmmContext(seg, tg, k=k, cache_targets=cache, cache_near=cache)
    dens = rng.standard_normal((len(seg), 3))
    return disc, seg, tg, ctx, dens


def test_fmm_matches_dense_oracle():
    worst = 0.0
    for seed in range(6):
        disc, seg, tg, ctx, dens = make_ctx(seed)
        mats = kernel_matrices(tg, seg.p1, seg.p2, seg.arc)
        for kern in ("G", "F"):
            u = fmm_eval(kern, seg, dens, ctx=ctx)
            worst = max(worst, np.abs(u - mats[kern] @ dens).max())
    assert worst <= 1e-6


def test_fmm_linearity_and_empty_targets():
    disc, seg, tg, ctx, dens = make_ctx(3)
    u1 = fmm_eval("G", seg, dens, ctx=ctx)
    u2 = fmm_eval("G", seg, 2 * dens, ctx=ctx)
    assert np.abs(u2 - 2 * u1).max() < 1e-12
    empty_ctx = FmmContext(seg, TargetSet(np.empty(0, dtype=complex)), k=8,
                           cache_targets=False, cache_near=False)
    out = fmm_eval("G", seg, dens, ctx=empty_ctx)
    assert out.shape == (0, 3)


def test_cached_vs_uncached_bit_identical():
    for seed in range(3):
        disc, seg, tg, ctx_cached, dens = make_ctx(seed, cache=True)
        ctx_plain = FmmContext(seg, tg, k=16, tree=ctx_cached.tree,
                               cache_targets=False, cache_near=False)
        for kern in ("G", "F"):
            a = fmm_eval(kern, seg, dens, ctx=ctx_cached)
            b = fmm_eval(kern, seg, dens, ctx=ctx_plain)
            np.testing.assert_array_equal(a, b)


def test_stale_cache_detection():
    disc, seg, tg, ctx, dens = make_ctx(1)
    other = Discretization(random_scene(8, seed=77)).solve
    with pytest.raises(StaleCacheError):
        fmm_eval("G", other, np.zeros((len(other), 1)), ctx=ctx)


def test_local_fmm_subsets():
    disc, seg, tg, ctx, dens = make_ctx(2)
    n_seg = len(seg)
    full_src = np.ones(n_seg, dtype=bool)
    full_tgt = np.ones(len(tg.pos), dtype=bool)
    u_full = fmm_eval("G", seg, dens, ctx=ctx)
    # subset = full set
    u_same = local_fmm("G", seg, dens, ctx, full_src, full_tgt)
    np.testing.assert_allclose(u_same, u_full, atol=1e-12)
    # disjoint source subsets sum to the full potential
    half = np.zeros(n_seg, dtype=bool)
    half[: n_seg // 2] = True
    u_a = local_fmm("G", seg, dens, ctx, half, full_tgt)
    u_b = local_fmm("G", seg, dens, ctx, ~half, full_tgt)
    assert np.abs(u_a + u_b - u_full).max() < 1e-10
    # subset equals the dense double loop over the subset
    mats = kernel_matrices(tg, seg.p1[half], seg.p2[half], seg.arc[half])
    assert np.abs(u_a - mats["G"] @ dens[half]).max() < 1e-6
    # masked-out targets report zero
    tgt_mask = np.zeros(len(tg.pos), dtype=bool)
    tgt_mask[::3] = True
    u_m = local_fmm("G", seg, dens, ctx, full_src, tgt_mask)
    assert np.abs(u_m[~tgt_mask]).max() == 0.0
    np.testing.assert_allclose(u_m[tgt_mask], u_full[tgt_mask], atol=1e-12)


def _subdivided_context(seed, k=16):
    from diffcurve.adaptive import _segment_maps

    scene = random_scene(6 + seed % 4, seed=seed)
    disc = Discretization(scene)
    box = scene_root_box(scene)
    tree = build_quadtree(disc.solve, b=k, root_box=box)
    ctx = pre_fmm(disc.solve, disc.node_targets(), tree, k=k)
    rng = np.random.default_rng(seed)
    split = sorted(rng.choice(disc.n_panels, size=1 + seed % 2, replace=False).tolist())
    new_disc = disc.subdivide_panels(split)
    index_map, replaced_old, new_ids, seg_map = _segment_maps(disc, new_disc)
    tree.update(new_disc.solve, replaced_old, new_ids, index_map)
    new_ctx = update_pre_fmm(ctx, new_disc.solve, new_disc.node_targets(), seg_map=seg_map)
    return disc, new_disc, new_ctx, box


def test_update_pre_fmm_equals_from_scratch():
    for seed in range(6):
        disc, new_disc, new_ctx, box = _subdivided_context(seed)
        fresh_tree = build_quadtree(new_disc.solve, b=16, root_box=box)
        fresh = pre_fmm(new_disc.solve, new_disc.node_targets(), fresh_tree, k=16)
        rng = np.random.default_rng(seed + 5)
        dens = rng.standard_normal((len(new_disc.solve), 2))
        for kern in ("G", "F"):
            a = fmm_eval(kern, new_disc.solve, dens, ctx=new_ctx)
            b = fmm_eval(kern, new_disc.solve, dens, ctx=fresh)
            assert np.abs(a - b).max() < 1e-12
        # table-level comparison on the canonical cell keying
        assert new_ctx.tree.canonical_lists() == fresh_tree.canonical_lists()


def test_update_pre_fmm_touches_few_entries():
    scene = random_scene(40, seed=11)
    disc = Discretization(scene)
    box = scene_root_box(scene)
    tree = build_quadtree(disc.solve, b=16, root_box=box)
    ctx = pre_fmm(disc.solve, disc.node_targets(), tree, k=16)
    from diffcurve.adaptive import _segment_maps

    new_disc = disc.subdivide_panels([7])
    index_map, replaced_old, new_ids, seg_map = _segment_maps(disc, new_disc)
    tree.update(new_disc.solve, replaced_old, new_ids, index_map)
    new_ctx = update_pre_fmm(ctx, new_disc.solve, new_disc.node_targets(), seg_map=seg_map)
    frac = new_ctx.pre.touched / max(new_ctx.pre.total_entries, 1)
    assert frac < 0.10


def test_noop_update_pre_fmm_is_bitwise_copy():
    scene = random_scene(10, seed=4)
    disc = Discretization(scene)
    box = scene_root_box(scene)
    tree = build_quadtree(disc.solve, b=16, root_box=box)
    ctx = pre_fmm(disc.solve, disc.node_targets(), tree, k=16)
    seg_map = {i: i for i in range(len(disc.solve))}
    new_ctx = update_pre_fmm(ctx, disc.solve, disc.node_targets(), seg_map=seg_map)
    np.testing.assert_array_equal(new_ctx.pre.ofs["G"], ctx.pre.ofs["G"])
    np.testing.assert_array_equal(new_ctx.pre.ifs["F"], ctx.pre.ifs["F"])
    assert new_ctx.pre.touched == 0


def test_truncation_bound_with_fit_constant():
    # sources in one cell, targets one cell width away: the truncation error
    # fits C * RATE^K * |sigma|_1 with small C
    rng = np.random.default_rng(8)
    w = 1.0
    p1 = (rng.random(30) - 0.5) * w + 1j * (rng.random(30) - 0.5) * w
    p2 = p1 + 0.05 * np.exp(2j * np.pi * rng.random(30))
    arc = np.abs(p2 - p1)
    dens = rng.standard_normal(30)
    q = complex(1.5 * w, 0.3 * w)  # one cell width from the cell boundary
    ref = float(integrate_G_pairs(p1, p2, arc, np.full(30, q)) @ dens)
    l1 = float(np.abs(dens * arc).sum())
    for k in (8, 12, 16):
        sig = outgoing_from_source("G", 0j, p1, p2, arc, dens, k=k)
        err = abs(float(target_from_outgoing(sig, 0j, q)[0, 0]) - ref)
        assert err <= 10.0 * RATE ** k * l1
