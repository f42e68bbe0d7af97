"""Direct per-pixel optimization of the displacement and boundary fields.

There is no learned predictor here: every pixel's displacement vector
and boundary logit is a free parameter, driven by momentum gradient
descent on the pair losses. The boundary map is parametrized as
logistic(logits) so it stays inside (0, 1) throughout.

Randomness comes from numpy's PCG64 generator seeded explicitly, so a
(seed, config) pair always reproduces the same fit bit for bit.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .core import BoundaryMap, DisplacementField, GridShape
from .losses import _boundary_loss_raw, _disp_loss_raw
from .relations import PairSet


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings; the defaults are stable for the stock losses."""

    steps: int = 500
    step_size: float = 0.1
    momentum: float = 0.9
    init_scale: float = 0.01   # stdev of the random displacement init
    seed: int = 0
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    eps_clamp: float = 1e-5

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.init_scale < 0:
            raise ValueError("init_scale must be non-negative")


class DivergedError(RuntimeError):
    """Raised when the fitted loss turns non-finite."""

    def __init__(self, step: int, value: float):
        super().__init__(f"loss became non-finite ({value!r}) at step {step}")
        self.step = step
        self.value = value


def init_fields(shape: GridShape, cfg: FitConfig) -> tuple[np.ndarray, np.ndarray]:
    """Fresh parameters: displacement ~ Normal(0, init_scale^2) i.i.d.
    per component, boundary logits all zero (boundary 0.5)."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    vectors = rng.normal(0.0, cfg.init_scale, size=(shape.height, shape.width, 2))
    logits = np.zeros((shape.height, shape.width))
    return vectors, logits


def _evaluate(vectors, logits, pairs, cfg, want_grad):
    # raw-array losses: mid-fit parameters may violate the invariants the
    # public field types enforce, and must still be scorable so divergence
    # surfaces as a non-finite loss rather than a construction error
    bvals = expit(logits)
    w_fg, w_bg, w_b = cfg.loss_weights
    r_fg = _disp_loss_raw(vectors, pairs, "fg_pos", True, want_grad)
    r_bg = _disp_loss_raw(vectors, pairs, "bg_pos", False, want_grad)
    r_b = _boundary_loss_raw(bvals, pairs, cfg.eps_clamp, want_grad)
    value = w_fg * r_fg.value + w_bg * r_bg.value + w_b * r_b.value
    if not want_grad:
        return value, None, None
    grad_d = w_fg * r_fg.grad_d + w_bg * r_bg.grad_d
    grad_logits = w_b * r_b.grad_b * bvals * (1.0 - bvals)
    return value, grad_d, grad_logits


def fit_fields(pairs: PairSet, shape: GridShape, cfg: FitConfig = FitConfig()
               ) -> tuple[DisplacementField, BoundaryMap, np.ndarray]:
    """Fit both fields to the mined pairs.

    Returns the final fields and the loss trace: entry s is the loss at
    the parameters entering step s, plus one trailing entry for the
    post-update loss, so the trace has steps + 1 values. Raises
    DivergedError the moment the loss stops being finite.
    """
    if shape != pairs.shape:
        raise ValueError("pair set was mined on a different grid shape")
    if pairs.total == 0:
        raise ValueError("cannot fit fields with no pairs in any partition")
    vectors, logits = init_fields(shape, cfg)
    vel_d = np.zeros_like(vectors)
    vel_l = np.zeros_like(logits)
    trace = np.empty(cfg.steps + 1)
    for step in range(cfg.steps):
        value, grad_d, grad_l = _evaluate(vectors, logits, pairs, cfg, True)
        if not np.isfinite(value):
            raise DivergedError(step, value)
        trace[step] = value
        vel_d = cfg.momentum * vel_d - cfg.step_size * grad_d
        vel_l = cfg.momentum * vel_l - cfg.step_size * grad_l
        vectors = vectors + vel_d
        logits = logits + vel_l
    final, _, _ = _evaluate(vectors, logits, pairs, cfg, False)
    if not np.isfinite(final):
        raise DivergedError(cfg.steps, final)
    trace[cfg.steps] = final
    return DisplacementField(shape, vectors), BoundaryMap(shape, expit(logits)), trace
