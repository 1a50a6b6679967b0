"""Sparse Jacobians by central finite differences over colored columns.

Columns that share no constraint row are structurally orthogonal and can
be perturbed together, so the number of evaluator calls is twice the
number of colors, independent of the trajectory length for banded
problems.  Entries outside the declared sparsity pattern are never
probed.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import EvaluatorError


def color_columns(pattern) -> list[np.ndarray]:
    """Greedy structurally-orthogonal column groups of a boolean pattern.

    Deterministic: columns are visited in index order and get the
    smallest color not already used by a column sharing a row.
    """
    csc = sp.csc_matrix(pattern, dtype=bool)
    n_rows, n_cols = csc.shape
    colors = np.full(n_cols, -1, dtype=int)
    row_used: list[set[int]] = [set() for _ in range(n_rows)]
    for j in range(n_cols):
        rows = csc.indices[csc.indptr[j]:csc.indptr[j + 1]]
        forbidden = set()
        for r in rows:
            forbidden |= row_used[r]
        c = 0
        while c in forbidden:
            c += 1
        colors[j] = c
        for r in rows:
            row_used[r].add(c)
    n_colors = colors.max() + 1 if n_cols else 0
    return [np.flatnonzero(colors == c) for c in range(n_colors)]


def fd_jacobian(fn, z, pattern, step=1e-6, groups=None) -> sp.csr_matrix:
    """Central-difference Jacobian of ``fn`` restricted to ``pattern``."""
    csc = sp.csc_matrix(pattern, dtype=bool)
    m, n = csc.shape
    z = np.asarray(z, dtype=float)
    if groups is None:
        groups = color_columns(csc)
    rows_out, cols_out, vals_out = [], [], []
    for group in groups:
        e = np.zeros(n)
        e[group] = step
        fp = fn(z + e)
        fm = fn(z - e)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            bad = np.flatnonzero(~(np.isfinite(fp) & np.isfinite(fm)))
            raise EvaluatorError(
                f"non-finite constraint value at finite-difference probe "
                f"(columns {group.tolist()}, first bad row {bad[0]})",
                constraint_index=int(bad[0]))
        diff = (fp - fm) / (2.0 * step)
        for j in group:
            rr = csc.indices[csc.indptr[j]:csc.indptr[j + 1]]
            rows_out.append(rr)
            cols_out.append(np.full(rr.shape, j))
            vals_out.append(diff[rr])
    if rows_out:
        rows_cat = np.concatenate(rows_out)
        cols_cat = np.concatenate(cols_out)
        vals_cat = np.concatenate(vals_out)
    else:
        rows_cat = cols_cat = vals_cat = np.zeros(0)
    return sp.csr_matrix((vals_cat, (rows_cat, cols_cat)), shape=(m, n))


def fd_gradient(fn, z, step=1e-6) -> np.ndarray:
    """Dense central-difference gradient of a scalar function."""
    z = np.asarray(z, dtype=float)
    g = np.zeros_like(z)
    for j in range(z.size):
        e = np.zeros_like(z)
        e[j] = step
        g[j] = (fn(z + e) - fn(z - e)) / (2.0 * step)
    return g
