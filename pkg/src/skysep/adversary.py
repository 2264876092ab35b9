"""Closed-form worst-case perturbation and its numerical certification.

The first-order adversary perturbs each component of the state matrix by
its corruption radius against the sign of the value gradient. A
brute-force oracle (grid + corner enumeration + box-constrained
refinement) and a sampled gradient-Lipschitz estimate certify the
second-order remainder bound numerically.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .observation import HEADING_COL, CorruptionBounds
from .sim import wrap_angle


@dataclass
class FOAdversaryOutput:
    perturbed: np.ndarray       # worst-case observation, inside the box
    predicted_drop: float       # sum of bounds * |gradient| over valid rows
    gradient: np.ndarray


def _valid_rows(shape, mask):
    rows = np.ones(shape[0], dtype=bool)
    if mask is not None:
        rows[1:] = mask
    return rows


def fo_perturbation(rows: np.ndarray, grad: np.ndarray,
                    bounds: CorruptionBounds, mask: np.ndarray | None = None,
                    wrap_heading: bool = True) -> FOAdversaryOutput:
    """rows - bounds * sign(grad), with sign(0) = 0 leaving zero-gradient
    components unperturbed; masked rows are untouched."""
    if grad.shape != rows.shape or bounds.matrix.shape != rows.shape:
        raise ValueError("shape mismatch between state, gradient and bounds")
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient")
    valid = _valid_rows(rows.shape, mask)
    offset = -bounds.matrix * np.sign(grad)
    offset[~valid] = 0.0
    perturbed = rows + offset
    if wrap_heading:
        perturbed[:, HEADING_COL] = wrap_angle(perturbed[:, HEADING_COL])
    drop = float(np.sum((bounds.matrix * np.abs(grad))[valid]))
    return FOAdversaryOutput(perturbed, drop, grad)


def fo_value_drop(value: float, grad: np.ndarray, bounds: CorruptionBounds,
                  mask: np.ndarray | None = None) -> float:
    """First-order estimate of the worst-case value over the box."""
    valid = _valid_rows(grad.shape, mask)
    return float(value - np.sum((bounds.matrix * np.abs(grad))[valid]))


def _fd_gradient(value_fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    flat = x.ravel()
    pts = np.repeat(flat[None, :], 2 * flat.size, axis=0)
    idx = np.arange(flat.size)
    pts[2 * idx, idx] += h
    pts[2 * idx + 1, idx] -= h
    vals = value_fn(pts.reshape((-1,) + x.shape))
    return ((vals[0::2] - vals[1::2]) / (2 * h)).reshape(x.shape)


def brute_force_worst_case(value_fn, rows: np.ndarray,
                           bounds: CorruptionBounds,
                           mask: np.ndarray | None = None,
                           grid_per_dim: int = 5,
                           max_grid_dims: int = 8,
                           max_corner_dims: int = 20,
                           refine_steps: int = 100,
                           grad_fn=None):
    """Oracle minimum of value_fn over the box around `rows`.

    value_fn must accept a batch shaped (N, *rows.shape) and return (N,)
    values. Exhaustive grid for up to `max_grid_dims` active dimensions;
    corner enumeration plus box-constrained refinement otherwise. The
    result is an upper bound on the true minimum (exact for linear
    functions, where a corner is optimal).
    """
    valid = _valid_rows(rows.shape, mask)
    radius = bounds.matrix.copy()
    radius[~valid] = 0.0
    active = np.flatnonzero(radius.ravel() > 0)
    k = active.size
    base = rows.ravel().copy()

    def assemble(offsets):  # (N, k) -> (N, *rows.shape)
        pts = np.repeat(base[None, :], offsets.shape[0], axis=0)
        pts[:, active] += offsets
        return pts.reshape((-1,) + rows.shape)

    if k == 0:
        return float(value_fn(rows[None])[0]), rows.copy()

    rad = radius.ravel()[active]
    candidates = [np.zeros((1, k))]
    if k <= max_corner_dims:
        corners = np.array(list(itertools.product((-1.0, 1.0), repeat=k)))
        candidates.append(corners * rad)
    if k <= max_grid_dims:
        axes = [np.linspace(-r, r, grid_per_dim) for r in rad]
        grid = np.array(list(itertools.product(*axes)))
        candidates.append(grid)
    if k > max_corner_dims:
        raise ValueError(f"{k} active dimensions exceed the oracle budget")
    offsets = np.concatenate(candidates, axis=0)
    vals = value_fn(assemble(offsets))
    order = np.argsort(vals)
    best_val = float(vals[order[0]])
    best_off = offsets[order[0]]

    if refine_steps > 0:
        def scalar_fn(off):
            return float(value_fn(assemble(off[None, :]))[0])

        jac = None
        if grad_fn is not None:
            def jac(off):
                g = grad_fn(assemble(off[None, :])[0])
                return g.ravel()[active]

        for start in offsets[order[:4]]:
            res = minimize(scalar_fn, start, method="L-BFGS-B", jac=jac,
                           bounds=list(zip(-rad, rad)),
                           options={"maxiter": refine_steps})
            if res.fun < best_val:
                best_val = float(res.fun)
                best_off = res.x
    argmin = assemble(best_off[None, :])[0]
    return best_val, argmin


def estimate_lipschitz_grad(value_fn, rows: np.ndarray,
                            bounds: CorruptionBounds, n_samples: int,
                            rng: np.random.Generator,
                            mask: np.ndarray | None = None,
                            grad_fn=None) -> float:
    """Sampled lower estimate of the gradient-Lipschitz constant over the
    box: max ||grad(x) - grad(y)|| / ||x - y|| over random pairs."""
    if n_samples < 2:
        raise ValueError("need at least two samples")
    valid = _valid_rows(rows.shape, mask)
    radius = np.where(valid[:, None], bounds.matrix, 0.0)
    if grad_fn is None:
        grad_fn = lambda x: _fd_gradient(value_fn, x)  # noqa: E731
    pts = [rows + radius * rng.uniform(-1, 1, rows.shape)
           for _ in range(n_samples)]
    grads = [grad_fn(p).ravel() for p in pts]
    best = 0.0
    for i in range(n_samples):
        for j in range(i + 1, n_samples):
            dx = np.linalg.norm(pts[i].ravel() - pts[j].ravel())
            if dx == 0.0:
                continue
            best = max(best, np.linalg.norm(grads[i] - grads[j]) / dx)
    return best


@dataclass
class BoundReport:
    oracle_min: float
    fo_estimate: float
    gap: float
    bound: float
    lipschitz: float
    passed: bool

    CSV_HEADER = "oracle_min,fo_estimate,gap,bound,lipschitz,pass"

    def csv_row(self) -> str:
        return (f"{self.oracle_min!r},{self.fo_estimate!r},{self.gap!r},"
                f"{self.bound!r},{self.lipschitz!r},{int(self.passed)}")


def remainder_bound_check(value_fn, rows: np.ndarray,
                          bounds: CorruptionBounds, lipschitz: float,
                          mask: np.ndarray | None = None,
                          grad_fn=None, slack: float = 1e-9,
                          **oracle_kwargs) -> BoundReport:
    """Certify that the first-order worst-case estimate is within
    (lipschitz / 2) * ||bounds||_2^2 of the brute-force oracle minimum."""
    if grad_fn is None:
        grad_fn = lambda x: _fd_gradient(value_fn, x)  # noqa: E731
    value = float(value_fn(rows[None])[0])
    grad = grad_fn(rows)
    fo_est = fo_value_drop(value, grad, bounds, mask)
    oracle_min, _ = brute_force_worst_case(value_fn, rows, bounds, mask,
                                           grad_fn=grad_fn, **oracle_kwargs)
    valid = _valid_rows(rows.shape, mask)
    radius = np.where(valid[:, None], bounds.matrix, 0.0)
    bound = 0.5 * lipschitz * float(np.sum(radius**2))
    gap = abs(oracle_min - fo_est)
    return BoundReport(oracle_min, fo_est, gap, bound, lipschitz,
                       passed=gap <= bound + slack)
