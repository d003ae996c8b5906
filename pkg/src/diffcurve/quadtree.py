"""Non-uniform quadtree over clipped BEM segments, with the cell relation
lists used by the fast multipole evaluator, and incremental local update.

Cells carry integer coordinates (level, ix, iy) relative to the root square,
so box-touching tests are exact.  Leaf capacity counts degrees of freedom by
segment-midpoint ownership; segments are clipped to leaf cells so that every
piece of a segment is handled by exactly one evaluation route.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ContractViolationError

MAX_DEPTH = 40


def _touch_spans(l1, x1, l2, x2):
    """Closed-interval overlap of dyadic ranges [x1, x1+1]/2^l1 and [x2, x2+1]/2^l2."""
    if l1 <= l2:
        shift = l2 - l1
        a0, a1 = x1 << shift, (x1 + 1) << shift
        b0, b1 = x2, x2 + 1
    else:
        shift = l1 - l2
        a0, a1 = x1, x1 + 1
        b0, b1 = x2 << shift, (x2 + 1) << shift
    return a0 <= b1 and b0 <= a1


class Quadtree:
    """Mutable quadtree; cells are integer ids into parallel per-cell lists."""

    def __init__(self, segments, b=16, max_depth=MAX_DEPTH, root_box=None):
        """Build over a SegmentSet: subdivide until each leaf owns <= b segment
        midpoints (or max_depth), then clip segments to leaves and compute the
        relation lists.  `root_box` optionally fixes (x0, y0, width)."""
        self.b = b
        self.max_depth = max_depth
        self.segments = segments
        if root_box is None:
            pts = np.concatenate([segments.p1, segments.p2])
            x0, x1 = pts.real.min(), pts.real.max()
            y0, y1 = pts.imag.min(), pts.imag.max()
            w = max(x1 - x0, y1 - y0, 1e-300)
            pad = 0.05 * w
            cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
            half = 0.5 * w + pad
            root_box = (cx - half, cy - half, 2 * half)
        self.x0, self.y0, self.width = root_box
        # per-cell storage
        self.level = [0]
        self.ix = [0]
        self.iy = [0]
        self.parent = [-1]
        self.children = [None]
        self.alive = [True]
        self.mid_segs = [list(range(len(segments)))]  # owned segment midpoints
        self.clips = [[]]  # per-leaf list of (seg, u1, u2)
        self.colleagues = [[]]
        self.coarse_nbrs = [[]]  # coarser leaf cells touching this cell
        self.interaction = [[]]
        self.big_sep = [[]]
        self.small_sep = [[]]
        self.neighbors = [[]]
        self._mids = segments.mid
        self._subdivide_to_capacity(0)
        for s in range(len(segments)):
            self._insert_clip(s)
        self.recompute_lists(self.cell_ids())

    # -- geometry ----------------------------------------------------------

    def cell_ids(self):
        return [c for c in range(len(self.level)) if self.alive[c]]

    def is_leaf(self, c):
        return self.children[c] is None

    def cell_box(self, c):
        w = self.width / (1 << self.level[c])
        return (self.x0 + self.ix[c] * w, self.y0 + self.iy[c] * w, w)

    def cell_center(self, c):
        x, y, w = self.cell_box(c)
        return complex(x + 0.5 * w, y + 0.5 * w)

    def cell_half(self, c):
        return 0.5 * self.width / (1 << self.level[c])

    def touches(self, a, b):
        return _touch_spans(self.level[a], self.ix[a], self.level[b], self.ix[b]) and _touch_spans(
            self.level[a], self.iy[a], self.level[b], self.iy[b]
        )

    def locate_points(self, pts):
        """Leaf cell id owning each point (vectorized descent)."""
        pts = np.asarray(pts, dtype=complex)
        cell = np.zeros(len(pts), dtype=int)
        active = np.arange(len(pts))
        while len(active):
            cur = cell[active]
            has_kids = np.array([not self.is_leaf(c) for c in cur])
            active = active[has_kids]
            if not len(active):
                break
            cur = cell[active]
            cx = np.array([self.cell_center(c).real for c in cur])
            cy = np.array([self.cell_center(c).imag for c in cur])
            qx = (pts[active].real >= cx).astype(int)
            qy = (pts[active].imag >= cy).astype(int)
            kids = np.array([self.children[c][qx[i] + 2 * qy[i]] for i, c in enumerate(cur)])
            cell[active] = kids
        return cell

    # -- construction ------------------------------------------------------

    def _new_cell(self, parent, qx, qy):
        self.level.append(self.level[parent] + 1)
        self.ix.append(2 * self.ix[parent] + qx)
        self.iy.append(2 * self.iy[parent] + qy)
        self.parent.append(parent)
        self.children.append(None)
        self.alive.append(True)
        self.mid_segs.append([])
        self.clips.append([])
        self.colleagues.append([])
        self.coarse_nbrs.append([])
        self.interaction.append([])
        self.big_sep.append([])
        self.small_sep.append([])
        self.neighbors.append([])
        return len(self.level) - 1

    def _split(self, c):
        """Subdivide leaf c, redistributing midpoints and clips."""
        touched = getattr(self, "clip_touched", None)
        if touched is not None:
            touched.add(c)
        kids = [self._new_cell(c, qx, qy) for qy in (0, 1) for qx in (0, 1)]
        self.children[c] = kids
        ctr = self.cell_center(c)
        for s in self.mid_segs[c]:
            m = self._mids[s]
            q = int(m.real >= ctr.real) + 2 * int(m.imag >= ctr.imag)
            self.mid_segs[kids[q]].append(s)
        self.mid_segs[c] = []
        old_clips = self.clips[c]
        self.clips[c] = []
        for seg, u1, u2 in old_clips:
            self._route_clip(c, seg, u1, u2)

    def _subdivide_to_capacity(self, c):
        stack = [c]
        while stack:
            c = stack.pop()
            if self.is_leaf(c) and len(self.mid_segs[c]) > self.b and self.level[c] < self.max_depth:
                self._split(c)
            if not self.is_leaf(c):
                stack.extend(self.children[c])

    def _route_clip(self, c, seg, u1, u2):
        """Distribute the chord-fraction window [u1, u2] of segment seg over
        the leaves under cell c (windows partition exactly)."""
        stack = [(c, u1, u2)]
        p1 = self.segments.p1[seg]
        p2 = self.segments.p2[seg]
        d = p2 - p1
        touched = getattr(self, "clip_touched", None)
        while stack:
            c, u1, u2 = stack.pop()
            if self.is_leaf(c):
                self.clips[c].append((seg, u1, u2))
                if touched is not None:
                    touched.add(c)
                continue
            ctr = self.cell_center(c)
            cuts = [u1]
            if d.real != 0.0:
                t = (ctr.real - p1.real) / d.real
                if u1 < t < u2:
                    cuts.append(t)
            if d.imag != 0.0:
                t = (ctr.imag - p1.imag) / d.imag
                if u1 < t < u2:
                    cuts.append(t)
            cuts.append(u2)
            cuts = sorted(set(cuts))
            for a, b in zip(cuts[:-1], cuts[1:]):
                if b <= a:
                    continue
                m = p1 + 0.5 * (a + b) * d
                q = int(m.real >= ctr.real) + 2 * int(m.imag >= ctr.imag)
                stack.append((self.children[c][q], a, b))

    def _insert_clip(self, seg):
        """Clip a whole segment into the tree from the root."""
        self._route_clip(0, seg, 0.0, 1.0)

    # -- relation lists ------------------------------------------------------

    def _cells_by_level(self, cells):
        order = sorted(cells, key=lambda c: self.level[c])
        return order

    def recompute_lists(self, cells):
        """Recompute colleagues/coarse-neighbor structures and all four
        relation lists for the given cells (must include every cell whose
        relations may have changed; processed coarse to fine)."""
        cells = [c for c in cells if self.alive[c]]
        cellset = set(cells)
        for c in self._cells_by_level(cells):
            self._compute_colleagues(c)
        for c in self._cells_by_level(cells):
            self._compute_lists_one(c)
        # symmetry: relations with one endpoint outside `cells` are unchanged,
        # so only re-derive reverse entries among the recomputed set; both
        # endpoints of any changed relation are recomputed (see update notes).
        return cellset

    def _compute_colleagues(self, c):
        if self.parent[c] == -1:
            self.colleagues[c] = []
            self.coarse_nbrs[c] = []
            return
        p = self.parent[c]
        cand = []
        for g in [p] + self.colleagues[p]:
            if self.children[g] is not None:
                cand.extend(self.children[g])
        self.colleagues[c] = sorted(g for g in cand if g != c and self.touches(c, g))
        cn = [g for g in self.coarse_nbrs[p] if self.touches(c, g)]
        cn += [g for g in self.colleagues[p] if self.is_leaf(g) and self.touches(c, g)]
        self.coarse_nbrs[c] = sorted(cn)

    def _compute_lists_one(self, c):
        p = self.parent[c]
        # interaction list: same level, parents touch, not touching
        if p == -1:
            self.interaction[c] = []
        else:
            cand = []
            for g in [p] + self.colleagues[p]:
                if self.children[g] is not None:
                    cand.extend(self.children[g])
            self.interaction[c] = sorted(
                g for g in cand if g != c and not self.touches(c, g)
            )
        # bigger separated list: coarser leaves touching the parent, not touching c
        if p == -1:
            self.big_sep[c] = []
        else:
            cand = list(self.coarse_nbrs[p])
            cand += [g for g in self.colleagues[p] if self.is_leaf(g)]
            self.big_sep[c] = sorted(
                g for g in set(cand) if not self.touches(c, g)
            )
        # smaller separated list and neighbor list (leaves only)
        if not self.is_leaf(c):
            self.small_sep[c] = []
            self.neighbors[c] = []
            return
        small = []
        nbrs = [g for g in self.coarse_nbrs[c]]
        stack = [g for g in self.colleagues[c]]
        for g in stack:
            if self.is_leaf(g):
                nbrs.append(g)
        stack = [g for g in stack if not self.is_leaf(g)]
        while stack:
            g = stack.pop()
            for k in self.children[g]:
                if self.touches(c, k):
                    if self.is_leaf(k):
                        nbrs.append(k)
                    else:
                        stack.append(k)
                else:
                    small.append(k)
        self.small_sep[c] = sorted(small)
        self.neighbors[c] = sorted(set(nbrs))

    # -- incremental update --------------------------------------------------

    def update(self, new_segments, replaced_old, new_ids, index_map):
        """Replace segments and locally repair structure, clips, and lists.

        new_segments: the new SegmentSet (becomes self.segments).
        replaced_old: old segment indices whose geometry was replaced.
        new_ids: new segment indices that replace them.
        index_map: array mapping old unchanged segment index -> new index
                   (-1 for replaced entries).
        Returns the set of cells whose lists were recomputed (instrumentation).
        """
        replaced_old = set(int(s) for s in replaced_old)
        self.clip_touched = set()
        # remap surviving clip/midpoint indices, dropping replaced segments
        for c in self.cell_ids():
            if not self.alive[c]:
                continue
            self.mid_segs[c] = [
                int(index_map[s]) for s in self.mid_segs[c] if s not in replaced_old
            ]
            kept = [
                (int(index_map[s]), u1, u2)
                for (s, u1, u2) in self.clips[c]
                if s not in replaced_old
            ]
            if len(kept) != len(self.clips[c]):
                self.clip_touched.add(c)
            self.clips[c] = kept
        self.segments = new_segments
        self._mids = new_segments.mid
        # insert new segment midpoints + clips
        new_ids = [int(s) for s in new_ids]
        if new_ids:
            leaves = self.locate_points(new_segments.mid[np.array(new_ids)])
            for s, leaf in zip(new_ids, leaves):
                self.mid_segs[int(leaf)].append(s)
                self._insert_clip(s)
        # capacity repair: split over-full leaves, collapse under-full internals
        structure_changed = []
        for c in self.cell_ids():
            if (
                self.is_leaf(c)
                and len(self.mid_segs[c]) > self.b
                and self.level[c] < self.max_depth
            ):
                self._subdivide_to_capacity(c)
                structure_changed.append(c)
        for c in sorted(self.cell_ids(), key=lambda c: -self.level[c]):
            if not self.alive[c] or self.is_leaf(c):
                continue
            if self._subtree_midcount(c) <= self.b:
                self._collapse(c)
                structure_changed.append(c)
        affected = self._repair_lists(structure_changed)
        self.clip_touched = {c for c in self.clip_touched if self.alive[c]}
        return affected

    def _cells_touching(self, f):
        """All alive cells touching cell f, found by pruned descent."""
        out = []
        stack = [0]
        while stack:
            g = stack.pop()
            if not self.alive[g] or not self.touches(g, f):
                continue
            out.append(g)
            if not self.is_leaf(g):
                stack.extend(self.children[g])
        return out

    def _subtree_midcount(self, c):
        n = len(self.mid_segs[c])
        if not self.is_leaf(c):
            for k in self.children[c]:
                if self.alive[k]:
                    n += self._subtree_midcount(k)
        return n

    def _collapse(self, c):
        """Merge the subtree under c back into a leaf."""
        touched = getattr(self, "clip_touched", None)
        if touched is not None:
            touched.add(c)
        mids = []
        segs = set()
        stack = [c]
        while stack:
            g = stack.pop()
            mids.extend(self.mid_segs[g])
            segs.update(s for s, _, _ in self.clips[g])
            if not self.is_leaf(g):
                for k in self.children[g]:
                    stack.append(k)
                    self.alive[k] = False
            self.mid_segs[g] = []
            self.clips[g] = []
        self.children[c] = None
        self.alive[c] = True
        self.mid_segs[c] = mids
        for s in sorted(segs):
            # re-clip the whole segment: pieces outside c are unaffected by
            # construction (windows are cut at cell boundaries), so re-route
            # only the portion covering c by removing and reinserting pieces.
            self._reclip_segment_under(c, s)

    def _reclip_segment_under(self, c, seg):
        self.clips[c] = [cl for cl in self.clips[c] if cl[0] != seg]
        # find the window of seg covering cell c by walking from the root
        # and keeping pieces routed into c
        p1 = self.segments.p1[seg]
        p2 = self.segments.p2[seg]
        d = p2 - p1
        windows = [(0, 0.0, 1.0)]
        final = []
        while windows:
            g, u1, u2 = windows.pop()
            if g == c:
                final.append((u1, u2))
                continue
            if self.is_leaf(g):
                continue
            ctr = self.cell_center(g)
            cuts = [u1]
            if d.real != 0.0:
                t = (ctr.real - p1.real) / d.real
                if u1 < t < u2:
                    cuts.append(t)
            if d.imag != 0.0:
                t = (ctr.imag - p1.imag) / d.imag
                if u1 < t < u2:
                    cuts.append(t)
            cuts.append(u2)
            cuts = sorted(set(cuts))
            for a, bb in zip(cuts[:-1], cuts[1:]):
                if bb <= a:
                    continue
                m = p1 + 0.5 * (a + bb) * d
                q = int(m.real >= ctr.real) + 2 * int(m.imag >= ctr.imag)
                windows.append((self.children[g][q], a, bb))
        for u1, u2 in final:
            self.clips[c].append((seg, u1, u2))

    def _repair_lists(self, structure_changed):
        """Recompute lists for every cell whose relations may reference the
        structurally changed region (new/removed/leafness-changed cells)."""
        frontier = set()
        for c in structure_changed:
            stack = [c]
            while stack:
                g = stack.pop()
                if not self.alive[g]:
                    continue
                frontier.add(g)
                if not self.is_leaf(g):
                    stack.extend(self.children[g])
        affected = set(frontier)
        for f in frontier:
            affected.update(self._cells_touching(f))
        # cells whose parent touches a frontier cell = children of touch-set cells
        extra = set()
        for g in list(affected):
            if not self.is_leaf(g):
                extra.update(k for k in self.children[g] if self.alive[k])
        affected |= extra
        # drop references to dead cells everywhere they could appear
        for c in affected:
            for lst in (self.colleagues, self.coarse_nbrs, self.interaction,
                        self.big_sep, self.small_sep, self.neighbors):
                lst[c] = [g for g in lst[c] if self.alive[g]]
        self.recompute_lists(affected)
        return affected

    # -- freezing and diagnostics ---------------------------------------------

    def frozen(self):
        return FrozenTree(self)

    def clone(self):
        """Independent copy sharing nothing mutable (cheap: list copies)."""
        t = Quadtree.__new__(Quadtree)
        t.b = self.b
        t.max_depth = self.max_depth
        t.segments = self.segments
        t.x0, t.y0, t.width = self.x0, self.y0, self.width
        t._mids = self._mids
        for name in ("level", "ix", "iy", "parent", "alive"):
            setattr(t, name, list(getattr(self, name)))
        t.children = [None if c is None else list(c) for c in self.children]
        for name in ("mid_segs", "clips", "colleagues", "coarse_nbrs",
                     "interaction", "big_sep", "small_sep", "neighbors"):
            setattr(t, name, [list(row) for row in getattr(self, name)])
        return t

    def canonical_lists(self):
        """Relation lists keyed by (level, ix, iy) for structural comparison."""
        key = {c: (self.level[c], self.ix[c], self.iy[c]) for c in self.cell_ids()}
        out = {}
        for c in self.cell_ids():
            out[key[c]] = {
                "leaf": self.is_leaf(c),
                "interaction": sorted(key[g] for g in self.interaction[c]),
                "neighbors": sorted(key[g] for g in self.neighbors[c]),
                "small": sorted(key[g] for g in self.small_sep[c]),
                "big": sorted(key[g] for g in self.big_sep[c]),
                "clips": sorted(
                    (int(s), round(u1, 12), round(u2, 12)) for s, u1, u2 in self.clips[c]
                ),
            }
        return out

    def debug_dump(self):
        """Cell rectangles + levels + list sizes as JSON (viewer overlay)."""
        cells = []
        for c in self.cell_ids():
            x, y, w = self.cell_box(c)
            cells.append(
                {
                    "x": x, "y": y, "w": w,
                    "level": self.level[c],
                    "leaf": self.is_leaf(c),
                    "n_clips": len(self.clips[c]),
                    "list_sizes": [
                        len(self.neighbors[c]), len(self.interaction[c]),
                        len(self.small_sep[c]), len(self.big_sep[c]),
                    ],
                }
            )
        return json.dumps({"cells": cells})


class FrozenTree:
    """Immutable array view of a Quadtree for the FMM kernels."""

    def __init__(self, tree: Quadtree):
        ids = tree.cell_ids()
        self.tree = tree
        self.segments = tree.segments  # snapshot: the mutable tree may move on
        self.ids = ids
        self.index = {c: i for i, c in enumerate(ids)}  # cell id -> dense row
        n = len(ids)
        self.center = np.array([tree.cell_center(c) for c in ids])
        self.half = np.array([tree.cell_half(c) for c in ids])
        self.level = np.array([tree.level[c] for c in ids])
        self.leaf = np.array([tree.is_leaf(c) for c in ids])
        self.parent = np.array(
            [self.index[tree.parent[c]] if tree.parent[c] != -1 else -1 for c in ids]
        )
        # clips flattened, grouped by owning leaf (dense row order)
        clip_seg, clip_u1, clip_u2, clip_cell = [], [], [], []
        self.clip_start = np.zeros(n + 1, dtype=int)
        for i, c in enumerate(ids):
            self.clip_start[i] = len(clip_seg)
            for s, u1, u2 in tree.clips[c]:
                clip_seg.append(s)
                clip_u1.append(u1)
                clip_u2.append(u2)
                clip_cell.append(i)
        self.clip_start[n] = len(clip_seg)
        self.clip_seg = np.array(clip_seg, dtype=int)
        self.clip_u1 = np.array(clip_u1)
        self.clip_u2 = np.array(clip_u2)
        self.clip_cell = np.array(clip_cell, dtype=int)
        seg = tree.segments
        d = seg.p2[self.clip_seg] - seg.p1[self.clip_seg]
        self.clip_p1 = seg.p1[self.clip_seg] + self.clip_u1 * d
        self.clip_p2 = seg.p1[self.clip_seg] + self.clip_u2 * d
        self.clip_arc = seg.arc[self.clip_seg] * (self.clip_u2 - self.clip_u1)
        self.levels = [np.nonzero(self.level == l)[0] for l in range(self.level.max() + 1)]
        self.interaction = [
            np.array([self.index[g] for g in tree.interaction[c]], dtype=int) for c in ids
        ]
        self.neighbors = [
            np.array([self.index[g] for g in tree.neighbors[c]], dtype=int) for c in ids
        ]
        self.small_sep = [
            np.array([self.index[g] for g in tree.small_sep[c]], dtype=int) for c in ids
        ]
        self.big_sep = [
            np.array([self.index[g] for g in tree.big_sep[c]], dtype=int) for c in ids
        ]
        self.children = [
            (
                np.array([self.index[k] for k in tree.children[c]], dtype=int)
                if tree.children[c] is not None
                else None
            )
            for c in ids
        ]
        self.children_mat = np.full((len(ids), 4), -1, dtype=int)
        for i, kids in enumerate(self.children):
            if kids is not None:
                self.children_mat[i] = kids

    @property
    def n_cells(self):
        return len(self.ids)

    def inside_root(self, pts):
        pts = np.asarray(pts, dtype=complex)
        t = self.tree
        return (
            (pts.real >= t.x0)
            & (pts.real <= t.x0 + t.width)
            & (pts.imag >= t.y0)
            & (pts.imag <= t.y0 + t.width)
        )

    def locate_targets(self, pts):
        """Owning leaf row per point (vectorized descent); -1 for points
        outside the root square (those are evaluated directly, expansions are
        not valid for them)."""
        pts = np.asarray(pts, dtype=complex)
        rows = np.zeros(len(pts), dtype=int)
        active = np.nonzero(~self.leaf[rows]) if len(pts) else (np.empty(0, int),)
        active = np.arange(len(pts))
        while len(active):
            cur = rows[active]
            not_leaf = ~self.leaf[cur]
            active = active[not_leaf]
            if not len(active):
                break
            cur = rows[active]
            ctr = self.center[cur]
            q = (pts[active].real >= ctr.real).astype(int) + 2 * (
                pts[active].imag >= ctr.imag
            ).astype(int)
            rows[active] = self.children_mat[cur, q]
        rows[~self.inside_root(pts)] = -1
        return rows


def build_quadtree(segments, b=16, max_depth=MAX_DEPTH, root_box=None) -> Quadtree:
    return Quadtree(segments, b=b, max_depth=max_depth, root_box=root_box)


def clip_lengths_consistent(tree: Quadtree, rtol=1e-12):
    """Check sum of clip chord fractions equals 1 per segment."""
    total = np.zeros(len(tree.segments))
    for c in tree.cell_ids():
        for s, u1, u2 in tree.clips[c]:
            total[s] += u2 - u1
    return np.allclose(total, 1.0, rtol=rtol, atol=1e-12)
