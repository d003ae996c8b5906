"""Fast multipole evaluation of the single- and double-layer potentials on a
non-uniform quadtree.

Expansions are truncated complex series with K+1 coefficients built from

    I_k(z) = z^k / k!          O_0(z) = -log z,   O_k(z) = (k-1)! / z^k

computed by recurrences (no explicit factorials).  The rendered potential is
the real part of the complex-valued series; the zeroth outgoing coefficient
is real (it is the charge), which keeps every principal-branch choice of the
single-point logarithms harmless.  The incoming-from-source moments integrate
O_0 and its antiderivative along a chord; there the branch is rotated per
clip so the chord never crosses the cut.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .dense import kernel_matrices
from .discretize import TargetSet
from .errors import ContractViolationError, StaleCacheError
from .kernels import (
    SINGULAR_RTOL,
    integrate_F_pairs,
    integrate_G_pairs,
    integrate_G_singular_piece,
    segment_distance,
)
from .quadtree import FrozenTree, Quadtree, build_quadtree

TWO_PI = 2.0 * np.pi
_TGT_CHUNK = 65536


# ---------------------------------------------------------------------------
# coefficient tables


def i_table(z, kmax):
    """I_k(z) for k = 0..kmax; shape z.shape + (kmax+1,)."""
    z = np.asarray(z, dtype=complex)
    out = np.empty(z.shape + (kmax + 1,), dtype=complex)
    out[..., 0] = 1.0
    for k in range(1, kmax + 1):
        out[..., k] = out[..., k - 1] * z / k
    return out


def o_table(z, kmax):
    """O_k(z) for k = 0..kmax (principal branch of O_0)."""
    z = np.asarray(z, dtype=complex)
    out = np.empty(z.shape + (kmax + 1,), dtype=complex)
    out[..., 0] = -np.log(z)
    if kmax >= 1:
        out[..., 1] = 1.0 / z
    for k in range(2, kmax + 1):
        out[..., k] = out[..., k - 1] * (k - 1) / z
    return out


def _chord_rotation(za, zb):
    mid = 0.5 * (za + zb)
    a = np.abs(mid)
    return np.where(a == 0.0, 1.0 + 0j, mid / np.where(a == 0.0, 1.0, a))


def _rotated_log_diff(za, zb):
    """log(za) - log(zb) on a branch whose cut avoids the chord [za, zb]
    (a segment never subtends a full half-turn from an external point)."""
    rot = _chord_rotation(za, zb)
    return np.log(za / rot) - np.log(zb / rot)


def _rotated_A_diff(za, zb):
    """A(za) - A(zb) for A(z) = z (log z - 1), branch cut avoiding the chord."""
    rot = _chord_rotation(za, zb)
    lrot = np.log(rot)  # purely imaginary
    la = np.log(za / rot) + lrot
    lb = np.log(zb / rot) + lrot
    return za * (la - 1.0) - zb * (lb - 1.0)


# ---------------------------------------------------------------------------
# moment builders


def _clip_frames(p1, p2, arc):
    d = np.asarray(p2) - np.asarray(p1)
    chord = np.abs(d)
    wbar = np.conj(d / chord)
    scale = np.asarray(arc) / chord
    return wbar, scale


def outgoing_moment_table(kernel, p1, p2, arc, center, kmax):
    """Per-piece outgoing moment rows (n, kmax+1); coefficients = rows^T @ dens."""
    wbar, scale = _clip_frames(p1, p2, arc)
    za = np.asarray(p1) - center
    zb = np.asarray(p2) - center
    if kernel == "G":
        ia = i_table(za, kmax + 1)
        ib = i_table(zb, kmax + 1)
        return (wbar * scale)[..., None] * (ib[..., 1:] - ia[..., 1:])
    # kernel F: n * wbar = -i for n the chord tangent rotated by -90 degrees
    ia = i_table(za, kmax)
    ib = i_table(zb, kmax)
    rows = (-1j * scale)[..., None] * (ib - ia)
    rows[..., 0] = 0.0
    return rows


def incoming_moment_table(kernel, p1, p2, arc, center, kmax):
    """Per-piece incoming moment rows (n, kmax+1) for far sources."""
    wbar, scale = _clip_frames(p1, p2, arc)
    za = np.asarray(p1) - center
    zb = np.asarray(p2) - center
    if kernel == "G":
        rows = np.empty(np.shape(za) + (kmax + 1,), dtype=complex)
        rows[..., 0] = _rotated_A_diff(za, zb)  # int O_0 needs the A antiderivative
        if kmax >= 1:
            rows[..., 1] = -_rotated_log_diff(za, zb)  # O_0(za) - O_0(zb)
        if kmax >= 2:
            oa = o_table(za, kmax - 1)
            ob = o_table(zb, kmax - 1)
            rows[..., 2:] = oa[..., 1:kmax] - ob[..., 1:kmax]
        return (wbar * scale)[..., None] * rows
    # kernel F: mu n wbar [O_k(zb) - O_k(za)] with n wbar = -i
    oa = o_table(za, kmax)
    ob = o_table(zb, kmax)
    rows = ob - oa
    rows[..., 0] = -_rotated_log_diff(zb, za)
    return (-1j * scale)[..., None] * rows


# ---------------------------------------------------------------------------
# translation matrices


def ofo_matrix(delta, kmax):
    """Lower-triangular Toeplitz L[k, l] = I_{k-l}(delta): child outgoing ->
    parent outgoing."""
    iv = i_table(delta, kmax)
    idx = np.arange(kmax + 1)
    diff = idx[:, None] - idx[None, :]
    return np.where(diff >= 0, iv[np.clip(diff, 0, kmax)], 0.0)


def ifi_matrix(delta, kmax):
    """U[l, k] = I_{k-l}(delta) for k >= l: parent incoming -> child incoming."""
    return ofo_matrix(delta, kmax).T


def ifo_matrix(delta, kmax):
    """M[l, k] = (-1)^l O_{l+k}(delta): source outgoing -> target incoming."""
    ov = o_table(delta, 2 * kmax)
    idx = np.arange(kmax + 1)
    mat = ov[idx[:, None] + idx[None, :]]
    mat[1::2, :] *= -1.0
    return mat


# ---------------------------------------------------------------------------
# spec-level single-expansion operations (unit tests, probes)


def outgoing_from_source(kernel, center, p1, p2, arc, dens, k=16):
    dens = np.atleast_2d(np.asarray(dens, dtype=float).T).T
    table = outgoing_moment_table(
        kernel, np.asarray(p1, dtype=complex), np.asarray(p2, dtype=complex),
        np.asarray(arc, dtype=float), center, k,
    )
    return np.einsum("nk,nc->kc", table, dens)


def incoming_from_source(kernel, center, p1, p2, arc, dens, k=16):
    dens = np.atleast_2d(np.asarray(dens, dtype=float).T).T
    table = incoming_moment_table(
        kernel, np.asarray(p1, dtype=complex), np.asarray(p2, dtype=complex),
        np.asarray(arc, dtype=float), center, k,
    )
    return np.einsum("nk,nc->kc", table, dens)


def outgoing_from_outgoing(expansion, child_center, parent_center):
    k = expansion.shape[0] - 1
    return ofo_matrix(child_center - parent_center, k) @ expansion


def incoming_from_incoming(expansion, parent_center, child_center):
    k = expansion.shape[0] - 1
    return ifi_matrix(child_center - parent_center, k) @ expansion


def incoming_from_outgoing(expansion, src_center, tgt_center, src_half=None, tgt_half=None):
    if src_half is not None and tgt_half is not None:
        d = tgt_center - src_center
        gap = max(abs(d.real), abs(d.imag))
        if gap < 2.0 * max(src_half, tgt_half) - 1e-12:
            raise ContractViolationError("incoming_from_outgoing requires well-separated cells")
    k = expansion.shape[0] - 1
    return ifo_matrix(tgt_center - src_center, k) @ expansion


def target_from_outgoing(expansion, center, q):
    k = expansion.shape[0] - 1
    rows = o_table(np.atleast_1d(np.asarray(q, dtype=complex)) - center, k)
    return np.einsum("tk,kc->tc", rows, expansion).real / TWO_PI


def target_from_incoming(expansion, center, q):
    k = expansion.shape[0] - 1
    rows = i_table(np.atleast_1d(np.asarray(q, dtype=complex)) - center, k)
    return np.einsum("tk,kc->tc", rows, expansion).real / TWO_PI


def target_from_source(kernel, p1, p2, arc, dens, targets: TargetSet):
    """Direct near-field evaluation (closed forms with singular dispatch)."""
    dens = np.atleast_2d(np.asarray(dens, dtype=float).T).T
    mats = kernel_matrices(
        targets, np.asarray(p1, dtype=complex), np.asarray(p2, dtype=complex),
        np.asarray(arc, dtype=float),
        want_g=kernel == "G", want_f=kernel == "F",
    )
    return mats[kernel] @ dens


# ---------------------------------------------------------------------------
# near-field flat pair evaluation (shared by cached and uncached paths)


def near_pair_values(kernel, ft: FrozenTree, targets: TargetSet, t_idx, c_idx):
    """Closed-form integrals for flat (target, clip) pairs with the same
    singular dispatch as dense.kernel_matrices."""
    if not len(t_idx):
        return np.empty(0)
    q = targets.pos[t_idx]
    p1 = ft.clip_p1[c_idx]
    p2 = ft.clip_p2[c_idx]
    arc = ft.clip_arc[c_idx]
    if kernel == "G":
        vals = integrate_G_pairs(p1, p2, arc, q)
    else:
        vals = integrate_F_pairs(p1, p2, arc, q)
        d = segment_distance(p1, p2, q)
        vals[d <= SINGULAR_RTOL * np.abs(p2 - p1)] = 0.0
    ann = targets.sing_seg[t_idx] == ft.clip_seg[c_idx]
    ann &= targets.sing_seg[t_idx] >= 0
    if np.any(ann):
        frac = targets.sing_frac[t_idx]
        ann &= (frac >= ft.clip_u1[c_idx]) & (frac <= ft.clip_u2[c_idx])
        ai = np.nonzero(ann)[0]
        if len(ai):
            if kernel == "F":
                vals[ai] = 0.0
            else:
                pp1, pp2 = p1[ai], p2[ai]
                seg = ft.segments
                par = ft.clip_seg[c_idx[ai]]
                vals[ai] = integrate_G_singular_piece(
                    arc[ai], np.abs(q[ai] - pp1), np.abs(q[ai] - pp2),
                    np.abs(pp2 - pp1), seg.arc[par], np.abs(seg.p2[par] - seg.p1[par]),
                )
    return vals


# ---------------------------------------------------------------------------
# precomputations


def _seg_checksum(segments):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(segments.p1).tobytes())
    h.update(np.ascontiguousarray(segments.p2).tobytes())
    h.update(np.ascontiguousarray(segments.arc).tobytes())
    return h.hexdigest()


class PrecomputedOps:
    """Density-independent tables for both kernels over one (tree, targets)
    configuration.  `touched`/`total_entries` count entries recomputed by the
    last (re)build, for the locality instrumentation."""

    def __init__(self, ft, targets, k, cache_targets=True, cache_near=True,
                 reuse=None, seg_map=None, changed_keys=None):
        self.ft = ft
        self.k = k
        self.targets = targets
        self.cache_targets = cache_targets
        self.cache_near = cache_near
        self.seg_checksum = _seg_checksum(ft.segments)
        self.touched = 0
        self.total_entries = 0
        self._changed_keys = changed_keys
        self._build(reuse, seg_map)

    # content keys -----------------------------------------------------------

    def _cell_key(self, i):
        t = self.ft.tree
        c = self.ft.ids[i]
        return (t.level[c], t.ix[c], t.iy[c])

    def _clip_sig(self, i, seg_map=None):
        """Clip content of leaf row i; seg_map translates segment ids into the
        post-update numbering (None entries poison the signature)."""
        ft = self.ft
        lo, hi = int(ft.clip_start[i]), int(ft.clip_start[i + 1])
        segs = ft.clip_seg[lo:hi]
        if seg_map is not None:
            segs = [seg_map.get(int(s)) for s in segs]
            if any(s is None for s in segs):
                return None
            segs = tuple(segs)
        else:
            segs = tuple(int(s) for s in segs)
        return (segs, ft.clip_u1[lo:hi].tobytes(), ft.clip_u2[lo:hi].tobytes())

    def _tgt_sig(self, rows):
        t = self.targets
        return (
            t.pos[rows].tobytes(),
            t.sing_frac[rows].tobytes(),
            self._ann_geom(rows).tobytes(),
        )

    def _ann_geom(self, rows):
        """Geometry of each target's annotated segment (index-free)."""
        seg = self.ft.segments
        s = self.targets.sing_seg[rows]
        out = np.zeros((len(rows), 2), dtype=complex)
        has = s >= 0
        out[has, 0] = seg.p1[s[has]]
        out[has, 1] = seg.p2[s[has]]
        return out

    # build -------------------------------------------------------------------

    def _build(self, old, seg_map):
        ft = self.ft
        k = self.k

        # --- outgoing-from-source tables, per leaf clip slice
        n_clips = len(ft.clip_seg)
        self.ofs = {
            "G": np.empty((n_clips, k + 1), dtype=complex),
            "F": np.empty((n_clips, k + 1), dtype=complex),
        }
        changed = self._changed_keys
        old_by_key = {}
        old_ofs = {}
        if old is not None:
            for i in range(old.ft.n_cells):
                lo, hi = int(old.ft.clip_start[i]), int(old.ft.clip_start[i + 1])
                if hi > lo:
                    key = old._cell_key(i)
                    if changed is not None and key not in changed:
                        # clip content untouched by the update: match by key
                        old_by_key[key] = (old.ofs["G"][lo:hi], old.ofs["F"][lo:hi])
                        continue
                    sig = old._clip_sig(i, seg_map)
                    if sig is not None:
                        old_ofs[(key, sig)] = (
                            old.ofs["G"][lo:hi],
                            old.ofs["F"][lo:hi],
                        )
        for i in range(ft.n_cells):
            lo, hi = int(ft.clip_start[i]), int(ft.clip_start[i + 1])
            if hi <= lo:
                continue
            key = self._cell_key(i)
            hit = None
            if old is not None:
                if changed is not None and key not in changed:
                    hit = old_by_key.get(key)
                else:
                    hit = old_ofs.get((key, self._clip_sig(i)))
            if hit is not None and hit[0].shape[0] == hi - lo:
                self.ofs["G"][lo:hi] = hit[0]
                self.ofs["F"][lo:hi] = hit[1]
            else:
                c = ft.center[i]
                for kern in ("G", "F"):
                    self.ofs[kern][lo:hi] = outgoing_moment_table(
                        kern, ft.clip_p1[lo:hi], ft.clip_p2[lo:hi],
                        ft.clip_arc[lo:hi], c, k,
                    )
                self.touched += 2 * (hi - lo)
        self.total_entries += 2 * n_clips

        # --- per-level translation tables (deduplicated by offset class)
        tree = ft.tree
        self.ofo = [None]
        for lvl in range(1, len(ft.levels)):
            h = 0.5 * tree.width / (1 << lvl)
            self.ofo.append(
                [
                    ofo_matrix(complex((2 * qx - 1) * h, (2 * qy - 1) * h), k)
                    for qy in (0, 1)
                    for qx in (0, 1)
                ]
            )
        self.ifo_groups = []
        for lvl, cells in enumerate(ft.levels):
            groups = {}
            for a in cells:
                ca = ft.ids[a]
                for b in ft.interaction[a]:
                    cb = ft.ids[b]
                    key = (tree.ix[ca] - tree.ix[cb], tree.iy[ca] - tree.iy[cb])
                    groups.setdefault(key, ([], []))
                    groups[key][0].append(a)
                    groups[key][1].append(b)
            w = tree.width / (1 << lvl) if lvl else tree.width
            self.ifo_groups.append(
                {
                    key: (
                        ifo_matrix(complex(key[0] * w, key[1] * w), k),
                        np.array(ta, dtype=int),
                        np.array(sb, dtype=int),
                    )
                    for key, (ta, sb) in groups.items()
                }
            )
        self.quadrant = np.array(
            [(tree.ix[c] & 1) + 2 * (tree.iy[c] & 1) for c in ft.ids], dtype=int
        )
        self.level_quads = []
        for lvl, cells in enumerate(ft.levels):
            if lvl == 0:
                self.level_quads.append([np.empty(0, dtype=int)] * 4)
            else:
                self.level_quads.append(
                    [cells[self.quadrant[cells] == q] for q in range(4)]
                )
        self.leaf_nonempty = np.nonzero(np.diff(ft.clip_start) > 0)[0]

        # --- incoming-from-source pair tables
        pair_tgt, pair_src = [], []
        for a in range(ft.n_cells):
            for b in ft.big_sep[a]:
                pair_tgt.append(a)
                pair_src.append(b)
        rows_t, rows_c, pair_slices = [], [], []
        for a, b in zip(pair_tgt, pair_src):
            lo, hi = int(ft.clip_start[b]), int(ft.clip_start[b + 1])
            pair_slices.append((len(rows_c), len(rows_c) + hi - lo, a, b))
            rows_t.extend([a] * (hi - lo))
            rows_c.extend(range(lo, hi))
        self.ifs_tgt = np.array(rows_t, dtype=int)
        self.ifs_clip = np.array(rows_c, dtype=int)
        if len(self.ifs_tgt):
            change = np.nonzero(np.diff(self.ifs_tgt) != 0)[0] + 1
            self.ifs_block_starts = np.concatenate([[0], change])
        else:
            self.ifs_block_starts = np.empty(0, dtype=int)
        n = len(self.ifs_clip)
        self.ifs = {
            "G": np.empty((n, k + 1), dtype=complex),
            "F": np.empty((n, k + 1), dtype=complex),
        }
        old_ifs = {}
        old_ifs_by_key = {}
        if old is not None:
            for (lo, hi, a, b) in old._ifs_slices:
                akey, bkey = old._cell_key(a), old._cell_key(b)
                if changed is not None and akey not in changed and bkey not in changed:
                    old_ifs_by_key[(akey, bkey)] = (
                        old.ifs["G"][lo:hi], old.ifs["F"][lo:hi]
                    )
                    continue
                sig = old._clip_sig(b, seg_map)
                if sig is not None:
                    old_ifs[(akey, bkey, sig)] = (
                        old.ifs["G"][lo:hi],
                        old.ifs["F"][lo:hi],
                    )
        self._ifs_slices = pair_slices
        for (lo, hi, a, b) in pair_slices:
            akey, bkey = self._cell_key(a), self._cell_key(b)
            hit = None
            if old is not None:
                if changed is not None and akey not in changed and bkey not in changed:
                    hit = old_ifs_by_key.get((akey, bkey))
                else:
                    hit = old_ifs.get((akey, bkey, self._clip_sig(b)))
            if hit is not None and hit[0].shape[0] == hi - lo:
                self.ifs["G"][lo:hi] = hit[0]
                self.ifs["F"][lo:hi] = hit[1]
            else:
                ci = self.ifs_clip[lo:hi]
                c = ft.center[a]
                for kern in ("G", "F"):
                    self.ifs[kern][lo:hi] = incoming_moment_table(
                        kern, ft.clip_p1[ci], ft.clip_p2[ci], ft.clip_arc[ci], c, k
                    )
                self.touched += 2 * (hi - lo)
        self.total_entries += 2 * n

        # --- target assignment and target tables (-1 = outside the root:
        # such targets are evaluated directly against all source pieces)
        self.tgt_cell = ft.locate_targets(self.targets.pos)
        order = np.argsort(self.tgt_cell, kind="stable")
        self.tgt_order = order
        self.tgt_start = np.searchsorted(
            self.tgt_cell[order], np.arange(ft.n_cells + 1)
        )
        self.tgt_outside = np.nonzero(self.tgt_cell < 0)[0]
        if self.cache_targets:
            self._build_target_tables(old)
        else:
            self.tfi_rows = None
            self.tfo = None
        if self.cache_near:
            self._build_near(old, seg_map)
        else:
            self.near = None
            t_all, c_all = [], []
            for (a, b, tids, cids) in self._near_blocks():
                t_all.append(np.repeat(tids, len(cids)))
                c_all.append(np.tile(cids, len(tids)))
            if t_all:
                self.near_t = np.concatenate(t_all)
                self.near_c = np.concatenate(c_all)
            else:
                self.near_t = np.empty(0, dtype=int)
                self.near_c = np.empty(0, dtype=int)

    def _build_target_tables(self, old):
        ft = self.ft
        n_t = len(self.targets.pos)
        self.tfi_rows = np.empty((n_t, self.k + 1), dtype=complex)
        old_tfi = {}
        if old is not None and old.tfi_rows is not None:
            old_tfi = {
                (old.targets.pos[i], old._cell_key(old.tgt_cell[i])): i
                for i in range(len(old.targets.pos))
                if old.tgt_cell[i] >= 0
            }
        need = []
        for i in range(n_t):
            if self.tgt_cell[i] < 0:
                self.tfi_rows[i] = 0.0
                continue
            j = old_tfi.get((self.targets.pos[i], self._cell_key(self.tgt_cell[i])), -1) if old_tfi else -1
            if j >= 0:
                self.tfi_rows[i] = old.tfi_rows[j]
            else:
                need.append(i)
        if need:
            idx = np.array(need, dtype=int)
            self.tfi_rows[idx] = i_table(
                self.targets.pos[idx] - ft.center[self.tgt_cell[idx]], self.k
            )
            self.touched += len(idx)
        self.total_entries += n_t
        # target-from-outgoing rows per (leaf, small-list cell) pair
        old_tfo = {}
        if old is not None and old.tfo is not None:
            for tids, b, rows in old.tfo:
                old_tfo[
                    (old._cell_key(b), old.targets.pos[tids].tobytes())
                ] = rows
        self.tfo = []
        for a in range(ft.n_cells):
            lo, hi = self.tgt_start[a], self.tgt_start[a + 1]
            if hi <= lo or not ft.leaf[a]:
                continue
            tids = self.tgt_order[lo:hi]
            for b in ft.small_sep[a]:
                key = (self._cell_key(b), self.targets.pos[tids].tobytes())
                rows = old_tfo.get(key)
                if rows is None:
                    rows = o_table(self.targets.pos[tids] - ft.center[b], self.k)
                    self.touched += len(tids)
                self.tfo.append((tids, b, rows))
                self.total_entries += len(tids)
        # flattened view for the unmasked evaluation path
        if self.tfo:
            self.tfo_tgt = np.concatenate([t for t, _, _ in self.tfo])
            self.tfo_src = np.concatenate(
                [np.full(len(t), b, dtype=int) for t, b, _ in self.tfo]
            )
            self.tfo_rows = np.concatenate([r for _, _, r in self.tfo])
        else:
            self.tfo_tgt = np.empty(0, dtype=int)
            self.tfo_src = np.empty(0, dtype=int)
            self.tfo_rows = np.empty((0, self.k + 1), dtype=complex)

    def _near_blocks(self):
        """Per (target leaf, source leaf) near-field blocks: own cell + neighbors."""
        ft = self.ft
        blocks = []
        for a in range(ft.n_cells):
            lo, hi = self.tgt_start[a], self.tgt_start[a + 1]
            if hi <= lo:
                continue
            tids = self.tgt_order[lo:hi]
            for b in [a] + list(ft.neighbors[a]):
                clo, chi = int(ft.clip_start[b]), int(ft.clip_start[b + 1])
                if chi <= clo:
                    continue
                blocks.append((a, b, tids, np.arange(clo, chi)))
        return blocks

    def _build_near(self, old, seg_map):
        ft = self.ft
        changed = self._changed_keys
        old_blocks = {}
        old_blocks_by_key = {}
        if old is not None and old.near is not None:
            for (a, b, tids, cids, gv, fv) in old._near_store:
                akey, bkey = old._cell_key(a), old._cell_key(b)
                if changed is not None and akey not in changed and bkey not in changed:
                    old_blocks_by_key[(akey, bkey)] = (gv, fv, len(tids), len(cids))
                    continue
                sig = (
                    akey,
                    bkey,
                    old._tgt_sig(tids),
                    old._clip_geom_sig(cids),
                )
                old_blocks[sig] = (gv, fv)
        self._near_store = []
        t_all, c_all, g_all, f_all = [], [], [], []
        for (a, b, tids, cids) in self._near_blocks():
            akey, bkey = self._cell_key(a), self._cell_key(b)
            hit = None
            if old is not None and old.near is not None:
                if changed is not None and akey not in changed and bkey not in changed:
                    cand = old_blocks_by_key.get((akey, bkey))
                    if cand is not None and cand[2] == len(tids) and cand[3] == len(cids):
                        hit = (cand[0], cand[1])
                else:
                    sig = (akey, bkey, self._tgt_sig(tids), self._clip_geom_sig(cids))
                    hit = old_blocks.get(sig)
            tt = np.repeat(tids, len(cids))
            cc = np.tile(cids, len(tids))
            if hit is not None:
                gv, fv = hit
            else:
                gv = near_pair_values("G", ft, self.targets, tt, cc)
                fv = near_pair_values("F", ft, self.targets, tt, cc)
                self.touched += 2 * len(tt)
            self._near_store.append((a, b, tids, cids, gv, fv))
            t_all.append(tt)
            c_all.append(cc)
            g_all.append(gv)
            f_all.append(fv)
            self.total_entries += 2 * len(tt)
        if t_all:
            self.near_t = np.concatenate(t_all)
            self.near_c = np.concatenate(c_all)
            self.near = {"G": np.concatenate(g_all), "F": np.concatenate(f_all)}
        else:
            self.near_t = np.empty(0, dtype=int)
            self.near_c = np.empty(0, dtype=int)
            self.near = {"G": np.empty(0), "F": np.empty(0)}

    def _clip_geom_sig(self, cids):
        ft = self.ft
        seg = ft.segments
        parents = ft.clip_seg[cids]
        return (
            ft.clip_p1[cids].tobytes(),
            ft.clip_p2[cids].tobytes(),
            ft.clip_arc[cids].tobytes(),
            seg.p1[parents].tobytes(),
            seg.p2[parents].tobytes(),
        )

    def near_pairs(self):
        """Flat (target index, clip index) arrays for the near field."""
        return self.near_t, self.near_c


# ---------------------------------------------------------------------------
# evaluation


class FmmContext:
    """Segments + targets + quadtree + precomputed tables for both kernels."""

    def __init__(self, segments, targets, k=16, b=None, max_depth=40,
                 tree=None, cache_targets=True, cache_near=True, root_box=None):
        self.segments = segments
        self.targets = targets if isinstance(targets, TargetSet) else TargetSet(targets)
        self.k = k
        if tree is None:
            tree = build_quadtree(
                segments, b=b if b is not None else k, max_depth=max_depth,
                root_box=root_box,
            )
        self.tree = tree
        self.ft = tree.frozen()
        self.pre = PrecomputedOps(self.ft, self.targets, k, cache_targets, cache_near)

    def check(self, segments):
        if segments is not self.segments:
            if _seg_checksum(segments) != self.pre.seg_checksum:
                raise StaleCacheError("precomputed tables do not match these segments")


def _as_2d(dens):
    dens = np.asarray(dens, dtype=float)
    if dens.ndim == 1:
        return dens[:, None], True
    return dens, False


def fmm_eval(kernel, segments, dens, targets=None, ctx: FmmContext | None = None,
             k=16, src_mask=None, tgt_mask=None):
    """FMM evaluation of the layer potential of `kernel` ("G" | "F") with
    densities given at segment midpoints.

    Either pass a prebuilt FmmContext (tree + precomputations) or raw targets
    (a throwaway context is then built).  Masks restrict sources/targets for
    the local FMM; masked-out targets report 0."""
    if ctx is None:
        if targets is None:
            raise ValueError("need either a context or targets")
        tset = targets if isinstance(targets, TargetSet) else TargetSet(np.asarray(targets, dtype=complex))
        ctx = FmmContext(segments, tset, k=k, cache_targets=False, cache_near=False)
    else:
        ctx.check(segments)
    dens, squeeze = _as_2d(dens)
    u = _fmm_passes(kernel, ctx, dens, src_mask=src_mask, tgt_mask=tgt_mask)
    return u[:, 0] if squeeze else u


def local_fmm(kernel, segments, dens, ctx: FmmContext, src_mask, tgt_mask):
    """Potential created by a subset of sources at a subset of targets,
    reusing the cached configuration (identical to fmm_eval on the masked
    densities; skipped contributions are exact zeros)."""
    ctx.check(segments)
    src_mask = np.asarray(src_mask, dtype=bool)
    tgt_mask = np.asarray(tgt_mask, dtype=bool)
    if len(src_mask) != len(segments.p1) or len(tgt_mask) != len(ctx.targets.pos):
        raise StaleCacheError("subset masks do not match the cached configuration")
    return fmm_eval(kernel, segments, dens, ctx=ctx, src_mask=src_mask, tgt_mask=tgt_mask)


def _fmm_passes(kernel, ctx: FmmContext, dens, src_mask=None, tgt_mask=None):
    ft = ctx.ft
    pre = ctx.pre
    k = ctx.k
    nch = dens.shape[1]
    if src_mask is not None:
        dens = dens * np.asarray(src_mask, dtype=float)[:, None]
    dens_clip = dens[ft.clip_seg]

    if src_mask is not None:
        clip_active = np.asarray(src_mask, dtype=bool)[ft.clip_seg]
        up_active = np.zeros(ft.n_cells, dtype=bool)
        np.logical_or.at(up_active, ft.clip_cell, clip_active)
        for lvl in range(len(ft.levels) - 1, 0, -1):
            cells = ft.levels[lvl]
            if len(cells):
                np.logical_or.at(up_active, ft.parent[cells], up_active[cells])
    else:
        clip_active = None
        up_active = np.ones(ft.n_cells, dtype=bool)
    if tgt_mask is not None:
        rows_sel = np.nonzero(tgt_mask)[0]
        down_active = np.zeros(ft.n_cells, dtype=bool)
        down_active[np.unique(pre.tgt_cell[rows_sel])] = True
        for lvl in range(len(ft.levels) - 1, 0, -1):
            cells = ft.levels[lvl]
            if len(cells):
                np.logical_or.at(down_active, ft.parent[cells], down_active[cells])
    else:
        rows_sel = None
        down_active = np.ones(ft.n_cells, dtype=bool)

    masked = src_mask is not None or tgt_mask is not None

    # upward pass: outgoing-from-source at leaves, then outgoing-from-outgoing
    sig = np.zeros((ft.n_cells, k + 1, nch), dtype=complex)
    if clip_active is None:
        contrib = pre.ofs[kernel][:, :, None] * dens_clip[:, None, :]
        nonempty = pre.leaf_nonempty
        if len(nonempty):
            sums = np.add.reduceat(contrib, ft.clip_start[nonempty], axis=0)
            sig[nonempty] = sums
    else:
        act = np.nonzero(clip_active)[0]
        np.add.at(
            sig, ft.clip_cell[act], pre.ofs[kernel][act][:, :, None] * dens_clip[act][:, None, :]
        )
    for lvl in range(len(ft.levels) - 1, 0, -1):
        if masked:
            cells = ft.levels[lvl]
            cells = cells[up_active[cells]]
            if not len(cells):
                continue
            for q in range(4):
                sel = cells[pre.quadrant[cells] == q]
                if len(sel):
                    sig[ft.parent[sel]] += np.einsum(
                        "kl,nlc->nkc", pre.ofo[lvl][q], sig[sel]
                    )
        else:
            for q, sel in enumerate(pre.level_quads[lvl]):
                if len(sel):
                    sig[ft.parent[sel]] += np.einsum(
                        "kl,nlc->nkc", pre.ofo[lvl][q], sig[sel]
                    )

    # downward pass: first accumulate all per-cell source terms
    # (incoming-from-outgoing and incoming-from-source), then sweep
    # incoming-from-incoming coarse to fine
    inc = np.zeros((ft.n_cells, k + 1, nch), dtype=complex)
    for lvl in range(1, len(ft.levels)):
        for _, (mat, ta, sb) in pre.ifo_groups[lvl].items():
            if masked:
                keep = down_active[ta] & up_active[sb]
                if not keep.any():
                    continue
                inc[ta[keep]] += np.einsum("lk,nkc->nlc", mat, sig[sb[keep]])
            else:
                inc[ta] += np.einsum("lk,nkc->nlc", mat, sig[sb])
    if len(pre.ifs_clip):
        if masked:
            keep = down_active[pre.ifs_tgt]
            if clip_active is not None:
                keep = keep & clip_active[pre.ifs_clip]
            if keep.any():
                rows = pre.ifs[kernel][keep][:, :, None] * dens_clip[pre.ifs_clip[keep], None, :]
                np.add.at(inc, pre.ifs_tgt[keep], rows)
        else:
            rows = pre.ifs[kernel][:, :, None] * dens_clip[pre.ifs_clip, None, :]
            # ifs_tgt is non-decreasing (built in cell order)
            starts = pre.ifs_block_starts
            inc[pre.ifs_tgt[starts]] += np.add.reduceat(rows, starts, axis=0)
    for lvl in range(1, len(ft.levels)):
        if masked:
            cells = ft.levels[lvl]
            act = cells[down_active[cells]]
            if len(act):
                quad = pre.quadrant[act]
                for q in range(4):
                    sel = act[quad == q]
                    if len(sel):
                        inc[sel] += np.einsum(
                            "kl,nlc->nkc", pre.ofo[lvl][q].T, inc[ft.parent[sel]]
                        )
        else:
            for q, sel in enumerate(pre.level_quads[lvl]):
                if len(sel):
                    inc[sel] += np.einsum(
                        "kl,nlc->nkc", pre.ofo[lvl][q].T, inc[ft.parent[sel]]
                    )

    # target pass
    n_t = len(ctx.targets.pos)
    u = np.zeros((n_t, nch))
    sel_rows = np.arange(n_t) if rows_sel is None else rows_sel
    sel_rows = sel_rows[pre.tgt_cell[sel_rows] >= 0]
    for lo in range(0, len(sel_rows), _TGT_CHUNK):
        rs = sel_rows[lo : lo + _TGT_CHUNK]
        if pre.tfi_rows is not None:
            tfi = pre.tfi_rows[rs]
        else:
            tfi = i_table(ctx.targets.pos[rs] - ft.center[pre.tgt_cell[rs]], k)
        u[rs] += np.einsum("tk,tkc->tc", tfi, inc[pre.tgt_cell[rs]]).real / TWO_PI
    # target-from-outgoing over smaller separated lists
    if pre.tfo is not None:
        if not masked:
            if len(pre.tfo_tgt):
                vals = np.einsum(
                    "tk,tkc->tc", pre.tfo_rows, sig[pre.tfo_src]
                ).real / TWO_PI
                np.add.at(u, pre.tfo_tgt, vals)
        else:
            for tids, b, rows in pre.tfo:
                if not up_active[b]:
                    continue
                if tgt_mask is not None:
                    m = tgt_mask[tids]
                    if not m.any():
                        continue
                    u[tids[m]] += np.einsum("tk,kc->tc", rows[m], sig[b]).real / TWO_PI
                else:
                    u[tids] += np.einsum("tk,kc->tc", rows, sig[b]).real / TWO_PI
    else:
        for a in range(ft.n_cells):
            lo, hi = pre.tgt_start[a], pre.tgt_start[a + 1]
            if hi <= lo or not ft.leaf[a] or not len(ft.small_sep[a]):
                continue
            tids = pre.tgt_order[lo:hi]
            if tgt_mask is not None:
                tids = tids[tgt_mask[tids]]
                if not len(tids):
                    continue
            for b in ft.small_sep[a]:
                if not up_active[b]:
                    continue
                rows = o_table(ctx.targets.pos[tids] - ft.center[b], k)
                u[tids] += np.einsum("tk,kc->tc", rows, sig[b]).real / TWO_PI
    # near field (target-from-source)
    t_idx, c_idx = pre.near_pairs()
    if pre.near is not None:
        vals = pre.near[kernel]
    else:
        vals = None
    keep = None
    if tgt_mask is not None:
        keep = tgt_mask[t_idx]
    if clip_active is not None:
        ka = clip_active[c_idx]
        keep = ka if keep is None else (keep & ka)
    if keep is not None:
        t_idx, c_idx = t_idx[keep], c_idx[keep]
        if vals is not None:
            vals = vals[keep]
    if vals is None:
        vals = near_pair_values(kernel, ft, ctx.targets, t_idx, c_idx)
    if len(t_idx):
        np.add.at(u, t_idx, vals[:, None] * dens[ft.clip_seg[c_idx]])
    # targets outside the root square: direct evaluation over all pieces
    out_rows = pre.tgt_outside
    if tgt_mask is not None and len(out_rows):
        out_rows = out_rows[tgt_mask[out_rows]]
    if len(out_rows):
        cids = np.arange(len(ft.clip_seg))
        if clip_active is not None:
            cids = cids[clip_active]
        for lo in range(0, len(out_rows), max(1, _TGT_CHUNK // max(len(cids), 1))):
            rows = out_rows[lo : lo + max(1, _TGT_CHUNK // max(len(cids), 1))]
            tt = np.repeat(rows, len(cids))
            cc = np.tile(cids, len(rows))
            vv = near_pair_values(kernel, ft, ctx.targets, tt, cc)
            np.add.at(u, tt, vv[:, None] * dens[ft.clip_seg[cc]])
    return u


def pre_fmm(segments, targets, tree: Quadtree, k=16, cache_targets=True, cache_near=True):
    """Build an FmmContext with precomputed tables over an existing tree."""
    ctx = FmmContext.__new__(FmmContext)
    ctx.segments = segments
    ctx.targets = targets if isinstance(targets, TargetSet) else TargetSet(targets)
    ctx.k = k
    ctx.tree = tree
    ctx.ft = tree.frozen()
    ctx.pre = PrecomputedOps(ctx.ft, ctx.targets, k, cache_targets, cache_near)
    return ctx


def update_pre_fmm(ctx: FmmContext, segments, targets, seg_map=None,
                   changed_cells=None) -> FmmContext:
    """Rebuild the precomputed tables after a local quadtree update.

    Entries whose inputs are unchanged are copied bitwise from the old cache;
    the rest are recomputed.  `seg_map` maps old segment indices to new ones
    (omit entries for replaced segments).  `changed_cells` optionally passes
    the tree's affected/clip-touched cell ids so unchanged entries copy by
    cell key without content-signature work."""
    new = FmmContext.__new__(FmmContext)
    new.segments = segments
    new.targets = targets if isinstance(targets, TargetSet) else TargetSet(targets)
    new.k = ctx.k
    new.tree = ctx.tree
    new.ft = ctx.tree.frozen()
    changed_keys = None
    if changed_cells is not None:
        t = ctx.tree
        changed_keys = {(t.level[c], t.ix[c], t.iy[c]) for c in changed_cells}
    new.pre = PrecomputedOps(
        new.ft, new.targets, ctx.k,
        cache_targets=ctx.pre.cache_targets, cache_near=ctx.pre.cache_near,
        reuse=ctx.pre, seg_map=seg_map, changed_keys=changed_keys,
    )
    return new
