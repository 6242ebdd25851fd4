"""2-D PCA of representation matrices via power iteration with deflation.

Deterministic: the iteration starts from a fixed ramp vector and each
component's sign is fixed so its largest-magnitude coordinate is positive.
"""

from __future__ import annotations

import warnings
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np

RANK_TOL = 1e-10


def _power_iteration(cov: np.ndarray, max_iter: int = 1000, tol: float = 1e-12) -> Tuple[np.ndarray, float]:
    d = cov.shape[0]
    v = 1.0 + np.arange(d) / d  # fixed, seed-free start
    v /= np.linalg.norm(v)
    eigval = 0.0
    for _ in range(max_iter):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return v, 0.0
        w /= norm
        if np.linalg.norm(w - v) < tol or np.linalg.norm(w + v) < tol:
            v = w
            break
        v = w
    eigval = float(v @ cov @ v)
    return v, eigval


def _fix_sign(v: np.ndarray) -> np.ndarray:
    return v if v[np.argmax(np.abs(v))] >= 0 else -v


def project_2d(representations: np.ndarray, labels=None) -> np.ndarray:
    """Mean-centered PCA onto the top two principal components.

    Returns (M x 2) coordinates; if the centered data has rank < 2 the
    second column is zeroed with a warning.
    """
    x = np.asarray(representations, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3 or x.shape[1] < 2:
        raise ValueError(f"project_2d: need at least 3 rows and 2 columns, got {x.shape}")
    centered = x - x.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / x.shape[0]
    v1, l1 = _power_iteration(cov)
    v1 = _fix_sign(v1)
    deflated = cov - l1 * np.outer(v1, v1)
    v2, l2 = _power_iteration(deflated)
    v2 = _fix_sign(v2)
    coords = np.empty((x.shape[0], 2))
    coords[:, 0] = centered @ v1
    if l1 <= 0 or l2 / max(l1, RANK_TOL) < RANK_TOL:
        warnings.warn("project_2d: data rank < 2, second component zeroed")
        coords[:, 1] = 0.0
    else:
        coords[:, 1] = centered @ v2
    return coords


def write_projection_csv(coords: np.ndarray, label_names: Sequence[str], path) -> None:
    """CSV ``x,y,label_name`` with a header row, one point per line."""
    lines = ["x,y,label_name"]
    for (x, y), name in zip(coords, label_names):
        lines.append(f"{float(x)!r},{float(y)!r},{name}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
