"""Direct (no-FMM) assembly and solution of the BEM and hybrid systems.

Serves as the correctness oracle for the FMM path and as the solver for tiny
scenes.  The candidate solution is

    u(x) = int_S [G(p,x) a(p) + F(p,x) b(p)] dS(p) + C,

where on double-sided Dirichlet curves a = sigma (unknown) and b = mu =
u+ - u- (known), and on closed Neumann curves a = psi* (known flux) and
b = -u_n (unknown boundary value, outward normal).  The additive constant C
together with a zero-total-charge constraint on the unknown single-layer
density removes the logarithmic drift of the plain single layer at infinity,
so that constant boundary data reproduces a constant field exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .discretize import Discretization, SegmentSet, TargetSet
from .errors import SingularSystemError
from .kernels import (
    SINGULAR_RTOL,
    integrate_F_pairs,
    integrate_G_pairs,
    integrate_G_singular_piece,
    segment_distance,
)

_CHUNK = 4_000_000  # max pairs per vectorized block


@dataclass
class DensitySet:
    """Node densities per channel: single-layer and double-layer values, plus
    the additive constant per channel."""

    single: np.ndarray  # (n_nodes, C)
    double: np.ndarray  # (n_nodes, C)
    constant: np.ndarray  # (C,)

    @property
    def channels(self):
        return self.single.shape[1]


def kernel_matrices(
    targets: TargetSet,
    p1,
    p2,
    arc,
    parent=None,
    u1=None,
    u2=None,
    want_g=True,
    want_f=True,
):
    """Closed-form integral matrices (T, S) for kernels G and F with singular
    dispatch.

    `parent`, `u1`, `u2` describe clipped pieces of parent segments (piece j
    covers chord fractions [u1[j], u2[j]] of segment parent[j]); for plain
    segments pass parent = arange and u1 = 0, u2 = 1.  Targets annotated as
    lying on a parent segment are integrated in the chord frame of that
    segment, which reproduces the principal value exactly and keeps dense and
    clipped (FMM) evaluations consistent.
    """
    p1 = np.asarray(p1, dtype=complex)
    p2 = np.asarray(p2, dtype=complex)
    arc = np.asarray(arc, dtype=float)
    n_src = len(p1)
    if parent is None:
        parent = np.arange(n_src)
        u1 = np.zeros(n_src)
        u2 = np.ones(n_src)
    q = targets.pos
    out = {}
    gmat = np.empty((len(q), n_src)) if want_g else None
    fmat = np.empty((len(q), n_src)) if want_f else None
    rows_per_chunk = max(1, _CHUNK // max(n_src, 1))
    for lo in range(0, len(q), rows_per_chunk):
        hi = min(lo + rows_per_chunk, len(q))
        qc = q[lo:hi, None]
        if want_g:
            gmat[lo:hi] = integrate_G_pairs(p1[None, :], p2[None, :], arc[None, :], qc)
        if want_f:
            f = integrate_F_pairs(p1[None, :], p2[None, :], arc[None, :], qc)
            # on-chord targets take the principal value 0
            d = segment_distance(p1[None, :], p2[None, :], qc)
            f[d <= SINGULAR_RTOL * np.abs(p2 - p1)[None, :]] = 0.0
            fmat[lo:hi] = f
    # principal-value treatment for annotated (on-polyline) targets: the
    # piece whose parameter window contains the target takes the singular
    # closed form (targets are expected to lie on the chord there)
    ann = np.nonzero(targets.sing_seg >= 0)[0]
    if len(ann):
        hit_t, hit_s = np.nonzero(targets.sing_seg[ann, None] == parent[None, :])
        if len(hit_t):
            frac = targets.sing_frac[ann[hit_t]]
            inside = (frac >= u1[hit_s]) & (frac <= u2[hit_s])
            ti = ann[hit_t[inside]]
            si = hit_s[inside]
            if len(ti):
                q_on = targets.pos[ti]
                if want_f:
                    fmat[ti, si] = 0.0
                if want_g:
                    chord = np.abs(p2[si] - p1[si])
                    parent_chord = chord / (u2[si] - u1[si])
                    parent_arc = arc[si] / (u2[si] - u1[si])
                    gmat[ti, si] = integrate_G_singular_piece(
                        arc[si], np.abs(q_on - p1[si]), np.abs(q_on - p2[si]),
                        chord, parent_arc, parent_chord,
                    )
    if want_g:
        out["G"] = gmat
    if want_f:
        out["F"] = fmat
    return out


def _collocation_targets(segset: SegmentSet) -> TargetSet:
    """Segment midpoints as targets, each annotated to its own segment."""
    n = len(segset)
    return TargetSet(segset.mid, np.arange(n), np.full(n, 0.5))


def assemble_bem(disc: Discretization):
    """BEM matrices (s x s): collocation at solve-segment midpoints; diagonal
    entries use the singular closed forms (F diagonal is 0)."""
    seg = disc.solve
    mats = kernel_matrices(_collocation_targets(seg), seg.p1, seg.p2, seg.arc)
    return mats["G"], mats["F"]


def assemble_hybrid(disc: Discretization, check_rank=False):
    """Hybrid matrices (g x g blocks): quadrature-node collocation composed
    with Legendre interpolation onto the solve segments."""
    seg = disc.solve
    mats = kernel_matrices(disc.node_targets(), seg.p1, seg.p2, seg.arc)
    gbar, fbar = mats["G"], mats["F"]
    gq = _fold_interp(disc, gbar)
    fq = _fold_interp(disc, fbar)
    if check_rank:
        cond = np.linalg.cond(gq)
        if not np.isfinite(cond) or cond > 1e14:
            bad = _suspect_panels(disc)
            raise SingularSystemError(
                f"hybrid system numerically rank deficient (cond={cond:.3e})",
                cond=cond,
                panels=bad,
            )
    return gq, fq


def _fold_interp(disc: Discretization, mat_bar):
    """Right-multiply a (T, n_solve_segments) matrix by the block-diagonal
    interpolation operator, giving (T, n_nodes)."""
    t = mat_bar.shape[0]
    s = disc.s_per_panel
    folded = mat_bar.reshape(t, disc.n_panels, s)
    return np.einsum("tps,sg->tpg", folded, disc.solve_interp).reshape(t, disc.n_nodes)


def _suspect_panels(disc: Discretization):
    """Panels with (near-)coincident quadrature nodes; the usual culprit."""
    bad = []
    pos = disc.node_pos.reshape(disc.n_panels, disc.g)
    for i in range(disc.n_panels):
        for j in range(i + 1, disc.n_panels):
            if np.max(np.abs(pos[i] - pos[j])) < 1e-12 * (1.0 + disc.scene.diagonal):
                bad.extend([i, j])
    return sorted(set(bad))


def _charge_row(disc: Discretization):
    """Row vector mapping node densities to total charge sum(arc_j * interp)."""
    return _fold_interp(disc, disc.solve.arc[None, :])[0]


def _dirichlet_mask(disc: Discretization):
    kinds = np.array([c.bc.kind for c in disc.scene.curves])
    return kinds[disc.node_curve] == "dirichlet2"


def solve_dirichlet_double_sided_dense(disc: Discretization, u_plus, u_minus) -> DensitySet:
    """Solve the all-Dirichlet double-sided system directly.

    mu is the boundary-value jump (set exactly, never solved for); sigma and
    the additive constant solve the bordered system
        [Gq  1][sigma]   [ (u+ + u-)/2 - Fq mu ]
        [w^T 0][  C  ] = [          0          ].
    """
    u_plus = np.atleast_2d(np.asarray(u_plus, dtype=float).T).T
    u_minus = np.atleast_2d(np.asarray(u_minus, dtype=float).T).T
    mu = u_plus - u_minus
    gq, fq = assemble_hybrid(disc)
    rhs = 0.5 * (u_plus + u_minus) - fq @ mu
    n = disc.n_nodes
    sys = np.zeros((n + 1, n + 1))
    sys[:n, :n] = gq
    sys[:n, n] = 1.0
    sys[n, :n] = _charge_row(disc)
    rhs_full = np.vstack([rhs, np.zeros((1, rhs.shape[1]))])
    sol = _lu_solve(sys, rhs_full)
    return DensitySet(single=sol[:n], double=mu, constant=sol[n])


def solve_bem_dense(disc: Discretization, u_plus_mid, u_minus_mid):
    """Plain-BEM variant (piecewise-constant densities on solve segments,
    collocation at midpoints) with the same constant augmentation; returns
    (sigma_bar, mu_bar, C)."""
    u_plus_mid = np.atleast_2d(np.asarray(u_plus_mid, dtype=float).T).T
    u_minus_mid = np.atleast_2d(np.asarray(u_minus_mid, dtype=float).T).T
    mu = u_plus_mid - u_minus_mid
    gbar, fbar = assemble_bem(disc)
    rhs = 0.5 * (u_plus_mid + u_minus_mid) - fbar @ mu
    s = len(disc.solve)
    sys = np.zeros((s + 1, s + 1))
    sys[:s, :s] = gbar
    sys[:s, s] = 1.0
    sys[s, :s] = disc.solve.arc
    rhs_full = np.vstack([rhs, np.zeros((1, rhs.shape[1]))])
    sol = _lu_solve(sys, rhs_full)
    return sol[:s], mu, sol[s]


def solve_mixed_neumann_dense(disc: Discretization, u_d, psi_n, mu_d=None) -> DensitySet:
    """Solve the mixed Dirichlet/Neumann block system directly.

    u_d: (n_nodes, C) Dirichlet data (average of the two sides): only rows on
    Dirichlet curves are used.  psi_n: (n_nodes, C) Neumann flux data on
    closed Neumann curves.  mu_d: optional double-layer jump on Dirichlet
    curves.  Unknowns are sigma on Dirichlet nodes, the boundary value u_n on
    Neumann nodes, and the constant C.  Returns full Cauchy data as a
    DensitySet (single = sigma | psi*, double = mu | -u_n).
    """
    u_d = np.atleast_2d(np.asarray(u_d, dtype=float).T).T
    psi_n = np.atleast_2d(np.asarray(psi_n, dtype=float).T).T
    nch = u_d.shape[1]
    d_mask = _dirichlet_mask(disc)
    if not np.any(d_mask):
        raise SingularSystemError(
            "all-Neumann problem: solution defined only up to a constant"
        )
    if mu_d is None:
        mu_d = np.zeros((disc.n_nodes, nch))
    gq, fq = assemble_hybrid(disc)
    n = disc.n_nodes
    didx = np.nonzero(d_mask)[0]
    nidx = np.nonzero(~d_mask)[0]
    nd, nn = len(didx), len(nidx)
    # unknown vector x = [sigma_d, u_n, C]
    m = nd + nn + 1
    sys = np.zeros((m, m))
    rhs = np.zeros((m, nch))
    # Dirichlet rows: PV u = (u+ + u-)/2
    sys[:nd, :nd] = gq[np.ix_(didx, didx)]
    sys[:nd, nd : nd + nn] = -fq[np.ix_(didx, nidx)]
    sys[:nd, m - 1] = 1.0
    rhs[:nd] = u_d[didx] - fq[np.ix_(didx, didx)] @ mu_d[didx] - gq[np.ix_(didx, nidx)] @ psi_n[nidx]
    # Neumann rows: u_n/2 = PV u + C
    sys[nd : nd + nn, :nd] = gq[np.ix_(nidx, didx)]
    sys[nd : nd + nn, nd : nd + nn] = -(
        fq[np.ix_(nidx, nidx)] + 0.5 * np.eye(nn)
    )
    sys[nd : nd + nn, m - 1] = 1.0
    rhs[nd : nd + nn] = (
        -fq[np.ix_(nidx, didx)] @ mu_d[didx] - gq[np.ix_(nidx, nidx)] @ psi_n[nidx]
    )
    # zero total charge over the unknown single layer
    w = _charge_row(disc)
    sys[m - 1, :nd] = w[didx]
    sol = _lu_solve(sys, rhs)
    single = np.zeros((n, nch))
    double = np.zeros((n, nch))
    single[didx] = sol[:nd]
    single[nidx] = psi_n[nidx]
    double[didx] = mu_d[didx]
    double[nidx] = -sol[nd : nd + nn]
    return DensitySet(single=single, double=double, constant=sol[m - 1])


def _lu_solve(sys, rhs):
    try:
        lu, piv = scipy.linalg.lu_factor(sys)
    except scipy.linalg.LinAlgError as e:
        raise SingularSystemError(f"singular system: {e}") from e
    diag = np.abs(np.diag(lu))
    if diag.min() == 0.0 or diag.max() / max(diag.min(), 1e-300) > 1e16:
        raise SingularSystemError(
            "singular system", cond=float(diag.max() / max(diag.min(), 1e-300))
        )
    return scipy.linalg.lu_solve((lu, piv), rhs)


def eval_potential_dense(
    disc: Discretization,
    dens: DensitySet,
    targets: TargetSet,
    stage="eval",
    side=0,
):
    """Evaluate the layer potentials at targets by the closed-form double loop.

    stage selects the segment discretization ("eval" or "solve").  For targets
    annotated as lying on a segment, `side` = +1/-1 adds the one-half jump of
    the double layer on the requested side (0 keeps the principal value).
    """
    segset = disc.evalseg if stage == "eval" else disc.solve
    abar = disc.interp_to_segments(dens.single, segset)
    bbar = disc.interp_to_segments(dens.double, segset)
    mats = kernel_matrices(targets, segset.p1, segset.p2, segset.arc)
    u = mats["G"] @ abar + mats["F"] @ bbar + dens.constant[None, :]
    if side:
        ann = np.nonzero(targets.sing_seg >= 0)[0]
        if len(ann):
            u[ann] += 0.5 * side * bbar[targets.sing_seg[ann]]
    return u
