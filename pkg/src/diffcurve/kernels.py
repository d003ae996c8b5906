"""Laplace Green's-function kernels and their closed-form integrals over line segments.

Points are complex numbers.  All segment integrals are "arc-length scaled":
the chord-parameterized closed form is multiplied by (true arc length / chord
length), so that integrating the same curve piece with different segment
counts gives consistent results.

The closed forms are evaluated through complex antiderivatives:

  int log|p - q| dS  ->  Re[ |a| * (log a + A(1 - t*) - A(-t*)) ],
      a = p2 - p1,  t* = -(p1 - q)/a,  A(z) = z (log z - 1)

  int F dS           ->  -(1/2pi) arg((p2 - q)/(p1 - q))

These agree with the real-variable antiderivatives everywhere off the
segment, and the G form reproduces the principal value when q lies on the
segment.  The F form is the signed angle subtended by the chord; its
principal value on the segment is 0 and is dispatched explicitly.
"""

from __future__ import annotations

import numpy as np

from .errors import KernelDomainError

TWO_PI = 2.0 * np.pi

# Distance below which a target counts as lying on a segment, relative to
# the segment chord: under double-precision noise amplification, above
# cancellation danger.
SINGULAR_RTOL = 1e-8


def eval_G(p, q):
    """Green's function G(p, q) = -log ||p - q|| / 2pi."""
    r = np.abs(np.asarray(p, dtype=complex) - np.asarray(q, dtype=complex))
    if np.any(r == 0.0):
        raise KernelDomainError("eval_G requires p != q")
    return -np.log(r) / TWO_PI

def eval_F(p, q, n):
    """Normal-derivative kernel F(p, q) = -((p - q) . n(p)) / (2pi ||p - q||^2)."""
    d = np.asarray(p, dtype=complex) - np.asarray(q, dtype=complex)
    r2 = np.abs(d) ** 2
    if np.any(r2 == 0.0):
        raise KernelDomainError("eval_F requires p != q")
    n = np.asarray(n, dtype=complex)
    return -(d * n.conjugate()).real / (TWO_PI * r2)


def _A(z):
    """Antiderivative of log: A(z) = z (log z - 1), with 0 log 0 := 0."""
    z = np.asarray(z, dtype=complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = z * (np.log(z) - 1.0)
    return np.where(z == 0.0, 0.0 + 0.0j, out)


def integrate_G_pairs(p1, p2, arc, q):
    """Arc-length-scaled int G dS over chords (p1, p2), broadcast over inputs."""
    p1 = np.asarray(p1, dtype=complex)
    p2 = np.asarray(p2, dtype=complex)
    q = np.asarray(q, dtype=complex)
    arc = np.asarray(arc, dtype=float)
    a = p2 - p1
    tstar = -(p1 - q) / a
    body = np.log(a).real + (_A(1.0 - tstar) - _A(-tstar)).real
    return -(arc / TWO_PI) * body


def integrate_F_pairs(p1, p2, arc, q):
    """Arc-length-scaled int F dS over chords; the normal is the chord tangent
    rotated by -90 degrees.  Returns the jump-free (principal-value) branch
    only for targets off the chord; on-chord targets must be dispatched to
    integrate_F_singular by the caller."""
    p1 = np.asarray(p1, dtype=complex)
    p2 = np.asarray(p2, dtype=complex)
    q = np.asarray(q, dtype=complex)
    arc = np.asarray(arc, dtype=float)
    chord = np.abs(p2 - p1)
    ratio = (p2 - q) / (p1 - q)
    return -(arc / chord) * np.angle(ratio) / TWO_PI


def _xlogx(x):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0.0, x * np.log(np.where(x > 0.0, x, 1.0)), 0.0)


def integrate_G_singular_values(arc, d1, d2, chord):
    """Singular int G dS for a target on the segment.

    (1/2pi)(s - e1 log e1 - e2 log e2) with s the true arc length and
    e1, e2 the endpoint distances scaled by s/chord; 0 log 0 := 0.
    """
    arc = np.asarray(arc, dtype=float)
    scale = arc / np.asarray(chord, dtype=float)
    e1 = np.asarray(d1, dtype=float) * scale
    e2 = np.asarray(d2, dtype=float) * scale
    return (arc - _xlogx(e1) - _xlogx(e2)) / TWO_PI


def integrate_G_singular_piece(arc, d1, d2, chord, parent_arc, parent_chord):
    """Singular int G dS over a clipped piece of a segment, for a target on
    the piece.

    Splits the parent segment's arc-length singular value additively: the
    piece carries the parent's full log-scale correction -s_parent log(s/chord)
    so piece values plus the plain (linearly arc-scaled) values of the sibling
    pieces sum exactly to integrate_G_singular_values of the whole segment.
    """
    arc = np.asarray(arc, dtype=float)
    scale = np.asarray(parent_arc, dtype=float) / np.asarray(parent_chord, dtype=float)
    body = arc - scale * (_xlogx(np.asarray(d1, dtype=float)) + _xlogx(np.asarray(d2, dtype=float)))
    return (body - np.asarray(parent_arc, dtype=float) * np.log(scale)) / TWO_PI


def segment_distance(p1, p2, q):
    """Euclidean distance from q to the closed segment (p1, p2), broadcast."""
    p1 = np.asarray(p1, dtype=complex)
    p2 = np.asarray(p2, dtype=complex)
    q = np.asarray(q, dtype=complex)
    a = p2 - p1
    denom = (a.conjugate() * a).real
    t = np.clip(((q - p1) * a.conjugate()).real / np.where(denom == 0.0, 1.0, denom), 0.0, 1.0)
    return np.abs(p1 + t * a - q)


# Thin per-segment wrappers; `seg` is anything with .p1, .p2, .arc attributes.

def integrate_G_segment(seg, q):
    """Closed-form int G over one segment at target q (singular-safe)."""
    if classify_target(seg, q) == "singular":
        return integrate_G_singular(seg, q)
    return float(integrate_G_pairs(seg.p1, seg.p2, seg.arc, q))


def integrate_F_segment(seg, q):
    """Closed-form int F over one segment at target q; 0 on the segment."""
    if classify_target(seg, q) == "singular":
        return integrate_F_singular(seg, q)
    return float(integrate_F_pairs(seg.p1, seg.p2, seg.arc, q))


def integrate_G_singular(seg, q):
    """Principal-value int G dS for q on the segment."""
    chord = abs(seg.p2 - seg.p1)
    return float(
        integrate_G_singular_values(seg.arc, abs(q - seg.p1), abs(q - seg.p2), chord)
    )


def integrate_F_singular(seg, q):
    """Principal-value int F dS for q on the segment: exactly 0.

    The +-(1/2) mu jump of the double layer is applied by the caller,
    depending on which side of the curve the evaluation limit is taken.
    """
    return 0.0


def classify_target(seg, q):
    """'singular' iff q lies within SINGULAR_RTOL * chord of the segment.

    Points at segment junctions classify as singular for both adjacent
    segments (they are within tolerance of both)."""
    chord = abs(seg.p2 - seg.p1)
    d = float(segment_distance(seg.p1, seg.p2, q))
    return "singular" if d <= SINGULAR_RTOL * chord else "regular"
