"""Displacement and boundary losses over mined pixel pairs.

All three losses expose exact values and exact (sub)gradients with
respect to the raw per-pixel fields, so they can be checked against
central finite differences and driven by a first-order optimizer.

Gradient conventions: the L1 displacement terms use sign(0) = 0; the
boundary terms route each pair's derivative to the first maximal pixel
in canonical line order, and clamped affinities contribute zero slope.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import BoundaryMap, DisplacementField, GridShape
from .lines import line_flat_offsets
from .relations import PairSet, pair_displacement


@dataclass
class LossReport:
    """Loss value with optional gradients and bookkeeping flags."""

    value: float
    grad_d: np.ndarray | None = None  # (H, W, 2) d value / d displacement
    grad_b: np.ndarray | None = None  # (H, W)    d value / d boundary
    empty_partitions: tuple[str, ...] = ()
    parts: dict = field(default_factory=dict)


def _line_table(pairs: PairSet, part: str) -> np.ndarray:
    """(N, Lmax) flat pixel indices of each pair's segment, columns in
    canonical line order, short rows padded with their first pixel."""
    key = ("lines", part)
    cached = pairs._caches.get(key)
    if cached is not None:
        return cached
    arr = getattr(pairs, part)
    w = pairs.shape.width
    n = len(arr)
    if n == 0:
        table = np.empty((0, 1), dtype=np.int64)
        pairs._caches[key] = table
        return table
    i, j = arr[:, 0], arr[:, 1]
    dy = j // w - i // w
    dx = j % w - i % w
    code = dy * (2 * w + 1) + dx
    order = np.argsort(code, kind="stable")
    sorted_code = code[order]
    starts = np.r_[0, 1 + np.flatnonzero(sorted_code[1:] != sorted_code[:-1])]
    ends = np.r_[starts[1:], n]
    groups = []
    lmax = 1
    for s, e in zip(starts, ends):
        row = order[s]
        offs = line_flat_offsets(int(dy[row]), int(dx[row]), w)
        groups.append((order[s:e], offs))
        lmax = max(lmax, len(offs))
    table = np.repeat(i[:, None], lmax, axis=1)
    for rows, offs in groups:
        table[rows[:, None], np.arange(len(offs))[None, :]] = i[rows, None] + offs[None, :]
    pairs._caches[key] = table
    return table


def _l1_pair_loss(vectors: np.ndarray, prs: np.ndarray, shape: GridShape,
                  match_geometry: bool, want_grad: bool):
    n = len(prs)
    flat = vectors.reshape(-1, 2)
    i, j = prs[:, 0], prs[:, 1]
    delta = flat[i] - flat[j]
    if match_geometry:
        delta = delta - pair_displacement(i, j, shape)
    value = float(np.abs(delta).sum() / n)
    if not want_grad:
        return value, None
    s = np.sign(delta) / n
    npix = flat.shape[0]
    grad = np.stack([
        np.bincount(i, weights=s[:, 0], minlength=npix) - np.bincount(j, weights=s[:, 0], minlength=npix),
        np.bincount(i, weights=s[:, 1], minlength=npix) - np.bincount(j, weights=s[:, 1], minlength=npix),
    ], axis=1)
    return value, grad.reshape(vectors.shape)


def _disp_loss_raw(vectors: np.ndarray, pairs: PairSet, part: str,
                   match_geometry: bool, want_grad: bool) -> LossReport:
    # raw-array entry point shared with the optimizer, which must be able
    # to score parameters that do not yet satisfy the field invariants
    prs = getattr(pairs, part)
    if len(prs) == 0:
        grad = np.zeros_like(vectors) if want_grad else None
        return LossReport(0.0, grad_d=grad, empty_partitions=(part,))
    value, grad = _l1_pair_loss(vectors, prs, pairs.shape, match_geometry, want_grad)
    return LossReport(value, grad_d=grad)


def loss_disp_fg(disp: DisplacementField, pairs: PairSet, want_grad: bool = True) -> LossReport:
    """Mean L1 gap between the displacement difference D(i) - D(j) and the
    geometric offset j - i, over same-class foreground pairs."""
    return _disp_loss_raw(disp.vectors, pairs, "fg_pos", True, want_grad)


def loss_disp_bg(disp: DisplacementField, pairs: PairSet, want_grad: bool = True) -> LossReport:
    """Mean L1 magnitude of D(i) - D(j) over background pairs (target 0)."""
    return _disp_loss_raw(disp.vectors, pairs, "bg_pos", False, want_grad)


def _boundary_terms(bflat: np.ndarray, pairs: PairSet, part: str, positive: bool,
                    weight: float, eps: float, grad: np.ndarray | None):
    table = _line_table(pairs, part)
    vals = bflat[table]
    cols = vals.argmax(axis=1)
    rows = np.arange(len(table))
    m = vals[rows, cols]
    pix = table[rows, cols]
    if positive:
        # -log(affinity), affinity = 1 - max boundary on the segment
        raw = 1.0 - m
        clamped = np.clip(raw, eps, 1.0 - eps)
        value = weight * float(-np.log(clamped).sum())
        if grad is not None:
            slope = np.where((raw > eps) & (raw < 1.0 - eps), weight / clamped, 0.0)
            grad += np.bincount(pix, weights=slope, minlength=grad.size)
    else:
        # -log(1 - affinity) = -log(max boundary on the segment)
        clamped = np.clip(m, eps, 1.0 - eps)
        value = weight * float(-np.log(clamped).sum())
        if grad is not None:
            slope = np.where((m > eps) & (m < 1.0 - eps), -weight / clamped, 0.0)
            grad += np.bincount(pix, weights=slope, minlength=grad.size)
    return value


def _boundary_loss_raw(b: np.ndarray, pairs: PairSet, eps_clamp: float,
                       want_grad: bool) -> LossReport:
    grad = np.zeros(b.size) if want_grad else None
    value = 0.0
    empty = []
    for part, positive in (("fg_pos", True), ("bg_pos", True), ("neg", False)):
        prs = getattr(pairs, part)
        if len(prs) == 0:
            empty.append(part)
            continue
        weight = 1.0 / (2 * len(prs)) if positive else 1.0 / len(prs)
        value += _boundary_terms(b.ravel(), pairs, part, positive, weight, eps_clamp, grad)
    return LossReport(value,
                      grad_b=None if grad is None else grad.reshape(b.shape),
                      empty_partitions=tuple(empty))


def loss_boundary(boundary: BoundaryMap, pairs: PairSet, eps_clamp: float = 1e-5,
                  want_grad: bool = True) -> LossReport:
    """Multiple-instance boundary loss: positive pairs push the strongest
    boundary pixel on their segment down, negative pairs pull it up.

    Positive partitions carry weight 1/(2 |partition|) each; the negative
    partition carries 1/|negative|. Affinities are clamped to
    [eps_clamp, 1 - eps_clamp] before the logs.
    """
    return _boundary_loss_raw(boundary.values, pairs, eps_clamp, want_grad)


def total_loss(disp: DisplacementField, boundary: BoundaryMap, pairs: PairSet,
               weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
               eps_clamp: float = 1e-5, want_grad: bool = True) -> LossReport:
    """Weighted sum of the two displacement losses and the boundary loss."""
    w_fg, w_bg, w_b = weights
    r_fg = loss_disp_fg(disp, pairs, want_grad)
    r_bg = loss_disp_bg(disp, pairs, want_grad)
    r_b = loss_boundary(boundary, pairs, eps_clamp, want_grad)
    value = w_fg * r_fg.value + w_bg * r_bg.value + w_b * r_b.value
    grad_d = grad_b = None
    if want_grad:
        grad_d = w_fg * r_fg.grad_d + w_bg * r_bg.grad_d
        grad_b = w_b * r_b.grad_b
    empty = tuple(dict.fromkeys(r_fg.empty_partitions + r_bg.empty_partitions
                                + r_b.empty_partitions))
    return LossReport(value, grad_d=grad_d, grad_b=grad_b, empty_partitions=empty,
                      parts={"disp_fg": r_fg.value, "disp_bg": r_bg.value,
                             "boundary": r_b.value})
