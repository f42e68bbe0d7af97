"""Sparse pixel affinity graph and its row-stochastic transition matrix.

Affinities connect every unordered pixel pair strictly closer than the
inference radius; each edge weight is 1 minus the strongest boundary
value on the rasterized segment between the endpoints. Line pixel
offsets are translation invariant, so each of the few hundred distinct
pair offsets is rasterized once and applied to every base pixel.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .core import BoundaryMap, GridShape
from .lines import line_flat_offsets
from .relations import half_offsets


@dataclass
class AffinityGraph:
    """Symmetric sparse affinity matrix with a configurable diagonal."""

    shape: GridShape
    radius: float
    matrix: sparse.csr_matrix  # (n, n) float64

    def __post_init__(self):
        n = self.shape.size
        if self.matrix.shape != (n, n):
            raise ValueError(f"affinity matrix must be {n}x{n}")


@dataclass
class TransitionMatrix:
    """Row-stochastic random-walk operator derived from an affinity graph."""

    shape: GridShape
    matrix: sparse.csr_matrix

    def __post_init__(self):
        n = self.shape.size
        if self.matrix.shape != (n, n):
            raise ValueError(f"transition matrix must be {n}x{n}")


def build_affinity_graph(boundary: BoundaryMap, gamma: float,
                         diagonal: str = "one") -> AffinityGraph:
    """Assemble the graph over all pairs with distance < gamma.

    diagonal: "one" fixes every self-affinity at 1 (the stock choice);
    "inv-boundary" uses 1 - boundary(x) instead.
    """
    if gamma < 1.0:
        raise ValueError("gamma must be >= 1")
    if diagonal not in ("one", "inv-boundary"):
        raise ValueError(f"unknown diagonal mode {diagonal!r}")
    h, w = boundary.shape.height, boundary.shape.width
    n = boundary.shape.size
    bflat = boundary.values.ravel()
    flat = np.arange(n, dtype=np.int64).reshape(h, w)

    rows, cols, vals = [], [], []
    for dy, dx in half_offsets(float(gamma)):
        ys1 = h - dy
        xs0, xs1 = max(0, -dx), min(w, w - dx)
        if ys1 <= 0 or xs0 >= xs1:
            continue
        base = flat[0:ys1, xs0:xs1].ravel()
        offs = line_flat_offsets(dy, dx, w)
        seg = bflat[base[:, None] + offs[None, :]].max(axis=1)
        a = 1.0 - seg
        other = base + (dy * w + dx)
        rows.append(base)
        cols.append(other)
        vals.append(a)
        rows.append(other)
        cols.append(base)
        vals.append(a)
    diag = np.ones(n) if diagonal == "one" else 1.0 - bflat
    rows.append(np.arange(n, dtype=np.int64))
    cols.append(np.arange(n, dtype=np.int64))
    vals.append(diag)
    matrix = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n)).tocsr()
    return AffinityGraph(boundary.shape, float(gamma), matrix)


def transition_matrix(graph: AffinityGraph, beta: float = 10.0) -> TransitionMatrix:
    """Sharpen affinities with an elementwise power and normalize each row.

    Rows whose sharpened weights sum to zero (possible only with the
    inv-boundary diagonal under a saturated boundary) fall back to an
    identity row, so the result is always row stochastic.
    """
    if beta < 1.0:
        raise ValueError("beta must be >= 1")
    m = graph.matrix.copy().astype(np.float64)
    m.data = np.power(m.data, beta)
    rowsum = np.asarray(m.sum(axis=1)).ravel()
    dead = rowsum == 0.0
    if dead.any():
        fix = sparse.coo_matrix(
            (np.ones(dead.sum()), (np.flatnonzero(dead), np.flatnonzero(dead))),
            shape=m.shape)
        m = (m + fix).tocsr()
        rowsum = np.asarray(m.sum(axis=1)).ravel()
    inv = sparse.diags(1.0 / rowsum)
    return TransitionMatrix(graph.shape, (inv @ m).tocsr())
