"""Frechet distance between Gaussian fits and the Inception Score functional.

Both are implemented over caller-supplied features / class-probability
tables; no pretrained feature extractor is involved. Matrix square roots
come from a cyclic Jacobi eigensolver, which is plenty for the desk-scale
dimensions (d <= 64) these run at.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError

PSD_TOL = 1e-10
SYM_TOL = 1e-8


@dataclass
class GaussianFit:
    mu: np.ndarray
    cov: np.ndarray

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


def fit_gaussian(features) -> GaussianFit:
    """Sample mean and unbiased covariance of row-vector features."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigError(f"features must be N x d, got shape {x.shape}")
    n = x.shape[0]
    if n < 2:
        raise ConfigError(f"need at least 2 samples, got {n}")
    mu = x.mean(axis=0)
    centered = x - mu
    cov = centered.T @ centered / (n - 1)
    cov = 0.5 * (cov + cov.T)
    return GaussianFit(mu=mu, cov=cov)


def jacobi_eigh(a: np.ndarray, sweep_tol: float = 1e-13, max_sweeps: int = 64):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) with A == V diag(w) V^T.
    """
    a = np.array(a, dtype=np.float64)
    d = a.shape[0]
    if a.shape != (d, d):
        raise ConfigError(f"matrix must be square, got {a.shape}")
    v = np.eye(d)
    if d == 1:
        return a.diagonal().copy(), v
    scale = max(1.0, float(np.abs(a).max()))
    for _ in range(max_sweeps):
        off_sq = (a * a).sum() - (a.diagonal() ** 2).sum()
        # recompute without cancellation once the cheap estimate gets small
        if off_sq <= (1e-6 * scale) ** 2:
            strict = a.copy()
            np.fill_diagonal(strict, 0.0)
            off_sq = (strict * strict).sum()
        if np.sqrt(max(off_sq, 0.0)) <= sweep_tol * scale:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                a[p, q] = a[q, p] = 0.0
                rot_p = c * v[:, p] - s * v[:, q]
                rot_q = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q
    return a.diagonal().copy(), v


def _check_fit(fit: GaussianFit, name: str):
    c = fit.cov
    if c.shape != (fit.dim, fit.dim):
        raise ConfigError(f"{name}: covariance shape {c.shape} != ({fit.dim}, {fit.dim})")
    asym = float(np.abs(c - c.T).max())
    if asym > SYM_TOL * max(1.0, float(np.abs(c).max())):
        raise NumericError(f"{name}: covariance asymmetry {asym:g} beyond tolerance")


def _psd_sqrt(c: np.ndarray, name: str) -> np.ndarray:
    w, v = jacobi_eigh(c)
    floor = -PSD_TOL * max(1.0, float(np.abs(w).max()))
    if w.min() < floor:
        raise NumericError(f"{name}: eigenvalue {w.min():g} below PSD tolerance")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(p: GaussianFit, q: GaussianFit) -> float:
    """|mu_p - mu_q|^2 + trace(C_p + C_q - 2 (C_p C_q)^{1/2}).

    The trace of the matrix square root is taken via the eigenvalues of
    the symmetric product C_p^{1/2} C_q C_p^{1/2}.
    """
    if p.dim != q.dim:
        raise ConfigError(f"dimension mismatch: {p.dim} vs {q.dim}")
    _check_fit(p, "p")
    _check_fit(q, "q")
    sp = _psd_sqrt(p.cov, "p")
    m = sp @ q.cov @ sp
    m = 0.5 * (m + m.T)
    w, _ = jacobi_eigh(m)
    floor = -PSD_TOL * max(1.0, float(np.abs(w).max()))
    if w.min() < floor:
        raise NumericError(f"product matrix eigenvalue {w.min():g} below tolerance")
    trace_sqrt = float(np.sqrt(np.clip(w, 0.0, None)).sum())
    dmu = p.mu - q.mu
    out = float(dmu @ dmu + np.trace(p.cov) + np.trace(q.cov) - 2.0 * trace_sqrt)
    if out < -1e-9:
        raise NumericError(f"frechet distance {out:g} below the negative clamp")
    return max(out, 0.0)


def inception_score(table) -> float:
    """exp(E[KL(p(l|x) || p(l))]) over rows of class probabilities."""
    rows = np.asarray(table, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 1:
        raise ConfigError(f"table must be N x K, got shape {rows.shape}")
    if (rows < 0).any():
        raise ConfigError("probability rows must be nonnegative")
    sums = rows.sum(axis=1)
    if np.abs(sums - 1.0).max() > 1e-9:
        raise ConfigError("probability rows must sum to 1 within 1e-9")
    marginal = rows.mean(axis=0)
    # 0 log 0 := 0; the marginal is positive wherever any row is
    mask = rows > 0
    logs = np.zeros_like(rows)
    logs[mask] = np.log(rows[mask] / np.broadcast_to(marginal, rows.shape)[mask])
    kl = (rows * logs).sum(axis=1)
    return float(np.exp(kl.mean()))
