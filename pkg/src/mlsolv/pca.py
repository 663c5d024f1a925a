"""Principal-component projection by power iteration with deflation."""

from __future__ import annotations

import numpy as np

TOL = 1e-8


def _top_eigvec(C: np.ndarray, rng: np.random.Generator, tol: float, max_iter: int) -> tuple[np.ndarray, float]:
    x = rng.standard_normal(C.shape[0])
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = C @ x
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return x, 0.0
        y /= norm
        # compare up to sign so a negative eigenvalue cannot stall convergence
        delta = min(np.linalg.norm(y - x), np.linalg.norm(y + x))
        x = y
        lam = float(x @ C @ x)
        if delta < tol:
            break
    return x, lam


def principal_components(vectors, dims: int = 2, tol: float = TOL, max_iter: int = 10_000, seed: int = 0):
    """Top ``dims`` covariance eigenvectors (rows) and eigenvalues.

    Each component's sign is chosen so its largest-magnitude loading is positive.
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least two vectors")
    if not 1 <= dims <= X.shape[1]:
        raise ValueError(f"dims must be in [1, {X.shape[1]}]")
    Xc = X - X.mean(axis=0)
    C = Xc.T @ Xc / (X.shape[0] - 1)
    scale = np.abs(C).max()
    rng = np.random.default_rng(seed)
    comps, lams = np.zeros((dims, X.shape[1])), np.zeros(dims)
    for k in range(dims):
        if scale == 0.0:
            break
        v, lam = _top_eigvec(C, rng, tol, max_iter)
        if lam <= tol * scale:  # rank exhausted
            break
        v *= np.sign(v[np.argmax(np.abs(v))])
        comps[k], lams[k] = v, lam
        C = C - lam * np.outer(v, v)
    return comps, lams


def pca_project(vectors, dims: int = 2, tol: float = TOL) -> np.ndarray:
    """Mean-centred coordinates on the top ``dims`` principal components.

    Identical input vectors project to zeros.
    """
    X = np.asarray(vectors, dtype=np.float64)
    comps, _ = principal_components(X, dims, tol)
    return (X - X.mean(axis=0)) @ comps.T
