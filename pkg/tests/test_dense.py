import numpy as np
import pytest

from diffcurve import dense
from diffcurve.dense import (
    DensitySet,
    assemble_bem,
    assemble_hybrid,
    eval_potential_dense,
    kernel_matrices,
    solve_bem_dense,
    solve_dirichlet_double_sided_dense,
    solve_mixed_neumann_dense,
)
from diffcurve.discretize import Discretization, TargetSet
from diffcurve.errors import SingularSystemError
from diffcurve.fixtures import (
    circle_curve,
    dirichlet_bc,
    line_curve,
    mixed_scene,
    single_source_scene,
    unit_source_potential,
)
from diffcurve.kernels import integrate_F_segment, integrate_G_segment
from diffcurve.scene import BoundaryCondition, Scene


def spanwise_disc(scene, g=8, s_mult=5, per_curve=4):
    disc = Discretization(scene, g=g, s_mult=s_mult)
    panels = []
    for ci in range(len(scene.curves)):
        for k in range(per_curve):
            panels.append(disc._make_panel(ci, k / per_curve, (k + 1) / per_curve))
    return Discretization(scene, g=g, s_mult=s_mult, panels=panels)


def test_bem_single_segment_diagonal():
    scene = Scene([line_curve("a", -1 + 0j, 1 + 0j)])
    disc = Discretization(scene, g=1, s_mult=1)  # one segment
    gbar, fbar = assemble_bem(disc)
    assert gbar.shape == (1, 1)
    assert abs(gbar[0, 0] - 1 / np.pi) < 1e-12  # s = 2 -> 1/pi
    assert fbar[0, 0] == 0.0


def test_bem_entries_match_kernel_integrals():
    scene = Scene([line_curve("a", 0j, 1 + 0.5j), circle_curve("b", 2 + 0j, 0.4)])
    disc = Discretization(scene, g=2, s_mult=3)
    gbar, fbar = assemble_bem(disc)
    seg = disc.solve
    rng = np.random.default_rng(0)
    for _ in range(40):
        i = int(rng.integers(len(seg)))
        j = int(rng.integers(len(seg)))
        q = seg.mid[i]
        if i == j:
            continue
        assert abs(gbar[i, j] - integrate_G_segment(seg.segment(j), q)) < 1e-12
        assert abs(fbar[i, j] - integrate_F_segment(seg.segment(j), q)) < 1e-12
    assert np.abs(np.diag(fbar)).max() == 0.0


def test_hybrid_block_shapes_and_triple_product():
    scene = Scene([line_curve("a", 0j, 1 + 0j)])
    disc = Discretization(scene, g=4, s_mult=5)
    tg = disc.node_targets()
    seg = disc.solve
    mats = kernel_matrices(tg, seg.p1, seg.p2, seg.arc)
    assert mats["G"].shape == (4, 20)  # per-panel block 4x20 before interpolation
    gq, fq = assemble_hybrid(disc)
    assert gq.shape == (4, 4)
    explicit = mats["G"] @ np.kron(np.eye(1), disc.solve_interp)
    assert np.abs(gq - explicit).max() < 1e-12


def test_hybrid_constant_density_consistency():
    scene = Scene([circle_curve("a", 0j, 1.0)])
    disc = Discretization(scene, g=4, s_mult=5)
    gq, _ = assemble_hybrid(disc)
    tg = disc.node_targets()
    seg = disc.solve
    mats = kernel_matrices(tg, seg.p1, seg.p2, seg.arc)
    # hybrid row applied to constant density == BEM row sum with that constant
    lhs = gq @ np.ones(disc.n_nodes)
    rhs = mats["G"] @ np.ones(len(seg))
    assert np.abs(lhs - rhs).max() < 1e-10


def test_constant_dirichlet_interior_and_mu():
    scene = Scene([circle_curve("a", 0j, 1.0, dirichlet_bc([0.25, 0.5, 0.75]))])
    disc = Discretization(scene, g=4, s_mult=5)
    up, um = disc.sample_dirichlet()
    ds = solve_dirichlet_double_sided_dense(disc, up, um)
    np.testing.assert_array_equal(ds.double, up - um)  # mu is the exact jump
    pts = TargetSet(np.array([0j, 0.3 + 0.2j, 0.5 - 0.4j]))
    u = eval_potential_dense(disc, ds, pts)
    for ch, c in enumerate([0.25, 0.5, 0.75]):
        assert np.abs(u[:, ch] - c).max() < 1e-3


def test_single_source_interior_accuracy_and_bem_comparison():
    scene, z0, centers, r = single_source_scene()
    uex = unit_source_potential(z0)
    disc = spanwise_disc(scene, g=8, s_mult=5, per_curve=4)
    vals = np.repeat(uex(disc.node_pos)[:, None], 3, axis=1)
    ds = solve_dirichlet_double_sided_dense(disc, vals, vals.copy())
    xs = np.linspace(-0.4, 1.4, 64)
    grid = (xs[None, :] + 1j * xs[:, None]).ravel()
    band = 2 * disc.evalseg.arc.mean()
    keep = np.zeros(len(grid), dtype=bool)
    for c in centers:
        keep |= np.abs(grid - c) < r - band
    u = eval_potential_dense(disc, ds, TargetSet(grid[keep]))[:, 0]
    rel = np.linalg.norm(u - uex(grid[keep])) / np.linalg.norm(uex(grid[keep]))
    assert rel <= 1e-3
    # coarse BEM (s = e = 8 per curve) is strictly worse
    disc_bem = Discretization(scene, g=4, s_mult=2)  # 8 segments per curve
    mid_t = 0.5 * (disc_bem.solve.t1 + disc_bem.solve.t2)
    vals_mid = np.repeat(uex(disc_bem.solve.mid)[:, None], 3, axis=1)
    sbar, mubar, cbem = solve_bem_dense(disc_bem, vals_mid, vals_mid.copy())
    mats = kernel_matrices(TargetSet(grid[keep]), disc_bem.solve.p1,
                           disc_bem.solve.p2, disc_bem.solve.arc)
    u_bem = mats["G"] @ sbar[:, 0] + mats["F"] @ mubar[:, 0] + cbem[0]
    rel_bem = np.linalg.norm(u_bem - uex(grid[keep])) / np.linalg.norm(uex(grid[keep]))
    assert rel_bem > rel


def test_mixed_constant_case():
    scene = mixed_scene()
    disc = Discretization(scene, g=6, s_mult=5)
    up, um = disc.sample_dirichlet()
    psi = np.zeros((disc.n_nodes, 3))
    ds = solve_mixed_neumann_dense(disc, 0.5 * (up + um), psi, mu_d=up - um)
    th = np.linspace(0, 2 * np.pi, 32, endpoint=False)
    pts = TargetSet(np.concatenate([0.2 * np.exp(1j * th), 0.7 * np.exp(1j * th)]))
    u = eval_potential_dense(disc, ds, pts)
    assert np.abs(u - 0.5).max() < 1e-3


def test_mixed_reduces_to_dirichlet_path():
    scene = Scene([circle_curve("a", 0j, 1.0, dirichlet_bc([0.8, 0.1, 0.4], [0.2, 0.9, 0.4]))])
    disc = Discretization(scene, g=4, s_mult=5)
    up, um = disc.sample_dirichlet()
    ds1 = solve_dirichlet_double_sided_dense(disc, up, um)
    ds2 = solve_mixed_neumann_dense(disc, 0.5 * (up + um), np.zeros_like(up), mu_d=up - um)
    assert np.abs(ds1.single - ds2.single).max() < 1e-10
    assert np.abs(ds1.constant - ds2.constant).max() < 1e-10


def test_mixed_single_source():
    scene = mixed_scene()
    disc = Discretization(scene, g=8, s_mult=5)
    z0 = 4.0 + 3.0j
    uex = unit_source_potential(z0)
    vals = np.repeat(uex(disc.node_pos)[:, None], 3, axis=1)
    nrm = disc.node_normal
    flux = -((disc.node_pos - z0) * np.conj(nrm)).real / (
        2 * np.pi * np.abs(disc.node_pos - z0) ** 2
    )
    psi = np.repeat(flux[:, None], 3, axis=1)
    kinds = np.array([c.bc.kind for c in scene.curves])[disc.node_curve]
    psi[kinds == "dirichlet2"] = 0.0
    ds = solve_mixed_neumann_dense(disc, vals, psi, mu_d=np.zeros_like(vals))
    th = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    pts = 0.65 * np.exp(1j * th)  # inside the wall, outside the core
    u = eval_potential_dense(disc, ds, TargetSet(pts))[:, 0]
    rel = np.linalg.norm(u - uex(pts)) / np.linalg.norm(uex(pts))
    assert rel <= 1e-2


def test_all_neumann_rejected():
    wall = circle_curve("w", 0j, 1.0, BoundaryCondition("neumann", flux=0.0))
    scene = Scene([wall])
    disc = Discretization(scene, g=4, s_mult=5)
    with pytest.raises(SingularSystemError):
        solve_mixed_neumann_dense(disc, np.zeros((disc.n_nodes, 3)),
                                  np.zeros((disc.n_nodes, 3)))


def test_eval_zero_density_and_eval_segment_independence():
    scene = Scene([circle_curve("a", 0j, 1.0, dirichlet_bc([0.3, 0.6, 0.9], [0.1, 0.2, 0.3]))])
    disc = Discretization(scene, g=4, s_mult=5)
    zero = DensitySet(np.zeros((disc.n_nodes, 3)), np.zeros((disc.n_nodes, 3)), np.zeros(3))
    pts = TargetSet(np.array([0.2 + 0.1j, 2 + 2j]))
    assert np.abs(eval_potential_dense(disc, zero, pts)).max() == 0.0
    # e-independence: doubling eval segments barely changes the far field
    # (one panel per span, e = 20 vs e = 40 per panel)
    disc1 = spanwise_disc(scene, g=4, s_mult=5, per_curve=4)
    up, um = disc1.sample_dirichlet()
    ds1 = solve_dirichlet_double_sided_dense(disc1, up, um)
    xs = np.linspace(-2, 2, 9)
    far = (xs[None, :] + 1j * xs[:, None]).ravel()
    far = far[np.abs(np.abs(far) - 1.0) > 0.3]
    u1 = eval_potential_dense(disc1, ds1, TargetSet(far))
    disc2 = spanwise_disc(scene, g=4, s_mult=10, per_curve=4)
    u2 = eval_potential_dense(disc2, ds1, TargetSet(far))
    assert np.abs(u1 - u2).max() <= 1e-3


def test_jump_relation_across_curve():
    scene = Scene([circle_curve("a", 0j, 1.0, dirichlet_bc([0.9, 0.8, 0.7], [0.1, 0.2, 0.3]))])
    # segments must hug the true curve much closer than the probe offset
    disc = spanwise_disc(scene, g=8, s_mult=5, per_curve=8)
    up, um = disc.sample_dirichlet()
    ds = solve_dirichlet_double_sided_dense(disc, up, um)
    total_len = sum(ch.total_length for ch in disc.chains)
    delta = 1e-4 * total_len
    th = np.linspace(0.1, 2 * np.pi - 0.1, 25)
    on = np.exp(1j * th)
    nrm = on  # outward normal of the unit circle
    u_plus = eval_potential_dense(disc, ds, TargetSet(on + delta * nrm))
    u_minus = eval_potential_dense(disc, ds, TargetSet(on - delta * nrm))
    jump = u_plus - u_minus
    # mu at those angles (constant per channel here)
    mu = (up - um)[0]
    for ch in range(3):
        assert np.abs(jump[:, ch] - mu[ch]).max() < 0.02 * max(abs(mu[ch]), 1e-9) + 2e-3


def test_eval_side_jump_on_curve():
    scene = Scene([circle_curve("a", 0j, 1.0, dirichlet_bc([1.0, 1.0, 1.0], [0.0, 0.0, 0.0]))])
    disc = Discretization(scene, g=6, s_mult=5)
    up, um = disc.sample_dirichlet()
    ds = solve_dirichlet_double_sided_dense(disc, up, um)
    tg = disc.node_targets()
    pv = eval_potential_dense(disc, ds, tg, stage="solve", side=0)
    plus = eval_potential_dense(disc, ds, tg, stage="solve", side=+1)
    minus = eval_potential_dense(disc, ds, tg, stage="solve", side=-1)
    assert np.abs((plus - minus) - 1.0).max() < 1e-9  # exactly mu at nodes
    assert np.abs(0.5 * (plus + minus) - pv).max() < 1e-12
