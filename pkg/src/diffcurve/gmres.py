"""GMRES with modified Gram-Schmidt Arnoldi and Givens rotations (no restart)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GmresError


@dataclass
class GmresResult:
    x: np.ndarray
    converged: bool
    iterations: int
    residuals: list = field(default_factory=list)  # relative residual history


def gmres(matvec, x0, b, tol=1e-6, maxiter=500) -> GmresResult:
    """Solve matvec(x) = b to relative residual `tol`.

    The residual history is monotone non-increasing by construction of the
    least-squares minimization; a (happy) breakdown of the Arnoldi process is
    reported as convergence.
    """
    b = np.asarray(b, dtype=float)
    n = len(b)
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return GmresResult(np.zeros(n), True, 0, [0.0])
    r = b - matvec(x0)
    if not np.all(np.isfinite(r)):
        raise GmresError("matvec produced non-finite values")
    rnorm = np.linalg.norm(r)
    res0 = rnorm / bnorm
    if res0 <= tol:
        return GmresResult(x0.copy(), True, 0, [res0])
    maxiter = min(maxiter, n)
    basis = np.empty((maxiter + 1, n))
    basis[0] = r / rnorm
    h = np.zeros((maxiter + 1, maxiter))
    cs = np.zeros(maxiter)
    sn = np.zeros(maxiter)
    g = np.zeros(maxiter + 1)
    g[0] = rnorm
    residuals = [res0]
    k_used = 0
    converged = False
    for k in range(maxiter):
        # copy: matvec may return (a view of) its input
        w = np.array(matvec(basis[k]), dtype=float, copy=True)
        if not np.all(np.isfinite(w)):
            raise GmresError("matvec produced non-finite values")
        for j in range(k + 1):
            h[j, k] = np.dot(basis[j], w)
            w -= h[j, k] * basis[j]
        h[k + 1, k] = np.linalg.norm(w)
        breakdown = h[k + 1, k] <= 1e-14 * max(1.0, np.abs(h[: k + 1, k]).max())
        if not breakdown:
            basis[k + 1] = w / h[k + 1, k]
        for j in range(k):
            t = cs[j] * h[j, k] + sn[j] * h[j + 1, k]
            h[j + 1, k] = -sn[j] * h[j, k] + cs[j] * h[j + 1, k]
            h[j, k] = t
        denom = np.hypot(h[k, k], h[k + 1, k])
        cs[k] = h[k, k] / denom if denom else 1.0
        sn[k] = h[k + 1, k] / denom if denom else 0.0
        h[k, k] = denom
        h[k + 1, k] = 0.0
        g[k + 1] = -sn[k] * g[k]
        g[k] = cs[k] * g[k]
        k_used = k + 1
        residuals.append(abs(g[k + 1]) / bnorm)
        if residuals[-1] <= tol or breakdown:
            converged = True
            break
    y = np.linalg.solve(
        np.triu(h[:k_used, :k_used]), g[:k_used]
    ) if k_used else np.zeros(0)
    x = x0 + basis[:k_used].T @ y
    if converged and residuals[-1] > tol:
        # breakdown case: verify the actual residual
        residuals[-1] = np.linalg.norm(b - matvec(x)) / bnorm
        converged = residuals[-1] <= max(tol, 1e-12)
    return GmresResult(x, converged, k_used, residuals)
