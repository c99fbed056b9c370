"""Generalized SVD of a pair ``(A, L)`` and the step diagnostics built on it.

For ``A`` (m x n) and a full-row-rank ``L`` (p x n) with ``m >= n >= p``
and no common null vector::

    A = U diag(Sigma, I_{n-p}) X^{-1},     L = V [M 0] X^{-1}

with ``sigma`` ascending, ``mu`` descending and ``sigma**2 + mu**2 == 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError, DomainError, SingularPairError

__all__ = [
    "GsvdFactors",
    "PsiMax",
    "gsvd_pair",
    "gen_singular_values",
    "gamma_filter",
    "psi",
    "psi_max",
    "step_norm_bound",
]

# relative threshold on the smallest eigenvalue of A^T A + L^T L
SINGULAR_PAIR_RTOL = 1e-13


@dataclass(frozen=True)
class GsvdFactors:
    U: np.ndarray
    V: np.ndarray
    X: np.ndarray
    sigma: np.ndarray
    mu: np.ndarray

    @property
    def p(self) -> int:
        return self.sigma.size

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def x_inv(self) -> np.ndarray:
        return np.linalg.inv(self.X)

    def reconstruct(self) -> tuple[np.ndarray, np.ndarray]:
        """Rebuild ``(A, L)`` from the factors."""
        n, p = self.n, self.p
        xinv = self.x_inv()
        d = np.ones(n)
        d[:p] = self.sigma
        a = (self.U * d) @ xinv
        ml = np.zeros((p, n))
        ml[np.arange(p), np.arange(p)] = self.mu
        return a, self.V @ ml @ xinv


def _orthonormal_completion(u: np.ndarray, good: np.ndarray) -> np.ndarray:
    """Replace the columns of ``u`` not flagged in ``good`` by an orthonormal
    basis of the complement of the flagged ones."""
    missing = np.flatnonzero(~good)
    if missing.size == 0:
        return u
    basis = u[:, good]
    m = u.shape[0]
    q, _ = np.linalg.qr(np.hstack([basis, np.eye(m)]))
    extra = q[:, basis.shape[1]:basis.shape[1] + missing.size]
    out = u.copy()
    out[:, missing] = extra
    return out


def gsvd_pair(A, L) -> GsvdFactors:
    """GSVD via QR of the stacked matrix and an SVD of its ``L`` block.

    ``[A; L] = Q R``; with ``Q_L = V [M 0] W^T`` the columns of ``Q_A W`` are
    mutually orthogonal with norms ``(sigma, 1, ..., 1)``, and
    ``X = R^{-1} W``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    L = np.asarray(L, dtype=float)
    if L.ndim == 1:
        L = L.reshape(1, -1)
    m, n = A.shape
    p = L.shape[0]
    if L.shape[1] != n:
        raise DimensionError(f"column mismatch: A has {n}, L has {L.shape[1]}")
    if not (m >= n >= p):
        raise DimensionError(f"need m >= n >= p, got m={m}, n={n}, p={p}")

    q, r = np.linalg.qr(np.vstack([A, L]))
    rs = np.linalg.svd(r, compute_uv=False)
    if rs[-1] ** 2 <= SINGULAR_PAIR_RTOL * max(rs[0] ** 2, 1e-300):
        raise SingularPairError("N(A) and N(L) intersect: A^T A + L^T L is singular")
    qa, ql = q[:m], q[m:]

    if p > 0:
        v, mu, wt = np.linalg.svd(ql, full_matrices=True)
        mu = mu[:p]
        if mu[-1] <= 1e-12:
            raise DimensionError("L is not of full row rank")
        w = wt.T
    else:
        v = np.zeros((0, 0))
        mu = np.zeros(0)
        w = np.eye(n)

    b = qa @ w
    norms = np.linalg.norm(b, axis=0)
    sigma = np.clip(norms[:p], 0.0, 1.0)
    good = norms > 1e-14
    u = np.zeros_like(b)
    u[:, good] = b[:, good] / norms[good]
    u = _orthonormal_completion(u, good)

    x = sla.solve_triangular(r, w)
    v = v[:, :p] if p else v
    # sign convention: nonnegative diagonal of X
    flip = np.where(np.diag(x) < 0, -1.0, 1.0)
    x = x * flip
    u = u * flip
    if p:
        v = v * flip[:p]
    return GsvdFactors(U=u, V=v, X=x, sigma=sigma, mu=mu)


def gen_singular_values(f: GsvdFactors) -> np.ndarray:
    """``gamma_i = sigma_i / mu_i``."""
    return f.sigma / f.mu


def gamma_filter(f: GsvdFactors, lam: float) -> np.ndarray:
    """Diagonal filter ``(Sigma^2 + lam M^2)^{-1} Sigma`` of the LM step."""
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    return np.diag(f.sigma / (f.sigma**2 + lam * f.mu**2))


def psi(gamma, lam):
    """``gamma sqrt(1 + gamma^2) / (gamma^2 + lam)``; vectorized."""
    gamma = np.asarray(gamma, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if np.any(gamma < 0) or np.any(~(lam > 0)):
        raise DomainError("psi needs gamma >= 0 and lambda > 0")
    out = gamma * np.sqrt(1.0 + gamma**2) / (gamma**2 + lam)
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class PsiMax:
    """Supremum of ``psi(., lam)`` over ``gamma >= 0``.

    ``argmax`` is ``None`` when the supremum is only approached as
    ``gamma -> inf`` (``lam >= 1/2``); ``attained`` tells the two cases apart.
    """

    value: float
    argmax: float | None

    @property
    def attained(self) -> bool:
        return self.argmax is not None


def psi_max(lam: float) -> PsiMax:
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    if lam < 0.5:
        return PsiMax(value=1.0 / (2.0 * np.sqrt(lam - lam * lam)),
                      argmax=float(np.sqrt(-lam / (2.0 * lam - 1.0))))
    return PsiMax(value=1.0, argmax=None)


def step_norm_bound(f: GsvdFactors, lam: float, F, gamma_hat: float) -> float:
    """Upper bound ``max(||Gamma||, 1) ||F|| / sqrt(gamma_hat)`` on ``||d||``."""
    if not gamma_hat > 0:
        raise DomainError(f"completeness constant must be positive, got {gamma_hat}")
    g = np.diag(gamma_filter(f, lam))
    gnorm = float(np.max(g)) if g.size else 0.0
    return max(gnorm, 1.0) * float(np.linalg.norm(F)) / np.sqrt(gamma_hat)
