"""Per-agent state matrices and the observation-corruption kernel.

Each agent sees a (1+m) x 6 matrix: its own state in row 0 and the m
nearest intruders (inside the detection radius) in the remaining rows,
with a validity mask. With probability R the whole matrix is replaced by
an adversarial matrix drawn from the element-wise box around the truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sim import SPEED_STEP, TrafficState, wrap_angle

N_FEATURES = 6
HEADING_COL = 2
BOX_TOL = 1e-9


@dataclass
class StateMatrix:
    rows: np.ndarray   # (1+m, 6); row 0 = ownship, absolute coordinates
    mask: np.ndarray   # (m,) bool; True marks a valid intruder row

    def copy(self) -> "StateMatrix":
        return StateMatrix(self.rows.copy(), self.mask.copy())


@dataclass(frozen=True)
class CorruptionBounds:
    """Element-wise corruption radii, one row per state-matrix row."""
    matrix: np.ndarray  # (1+m, 6), nonnegative

    def __post_init__(self):
        if np.any(self.matrix < 0):
            raise ValueError("corruption bounds must be nonnegative")


def default_corruption_bounds(max_intruders: int = 5) -> CorruptionBounds:
    # position-like components share the urban GNSS error scale; the
    # previous own command is known exactly, so its radius is zero
    row = np.array([60.0, 60.0, math.radians(5.0), 2.0, 60.0, 0.0])
    return CorruptionBounds(np.tile(row, (1 + max_intruders, 1)))


@dataclass
class ObservationSample:
    observed: StateMatrix
    corrupted: bool
    true_state: StateMatrix


def assemble_state(traffic: TrafficState, ownship_id: int,
                   detect_radius: float, max_intruders: int) -> StateMatrix:
    """Ownship row plus the nearest intruders within the (closed)
    detection ball, sorted by ascending distance; unused rows are
    zero-filled and masked out."""
    own = traffic.get(ownship_id).state
    rows = np.zeros((1 + max_intruders, N_FEATURES))
    mask = np.zeros(max_intruders, dtype=bool)
    rows[0] = own.as_row()
    cand = []
    for ac in traffic.aircraft:
        if ac.ident == ownship_id:
            continue
        d = math.hypot(ac.state.x - own.x, ac.state.y - own.y)
        if d <= detect_radius:
            cand.append((d, ac.ident, ac.state.as_row()))
    cand.sort(key=lambda c: (c[0], c[1]))
    for k, (_, _, row) in enumerate(cand[:max_intruders]):
        rows[1 + k] = row
        mask[k] = True
    return StateMatrix(rows, mask)


def _active(mask: np.ndarray, n_rows: int) -> np.ndarray:
    """Row-validity vector including the always-valid ownship row."""
    return np.concatenate(([True], mask)) if mask is not None else np.ones(n_rows, bool)


def box_contains(candidate: np.ndarray, center: np.ndarray,
                 bounds: CorruptionBounds, mask: np.ndarray | None = None) -> bool:
    """Element-wise |candidate - center| <= bounds on valid rows; the
    heading column is compared with wrapped angular difference."""
    diff = np.abs(candidate - center)
    diff[:, HEADING_COL] = np.abs(
        wrap_angle(candidate[:, HEADING_COL] - center[:, HEADING_COL]))
    ok = diff <= bounds.matrix + BOX_TOL
    return bool(np.all(ok[_active(mask, candidate.shape[0])]))


def project_to_box(candidate: StateMatrix, center: StateMatrix,
                   bounds: CorruptionBounds) -> StateMatrix:
    """Clamp into [center - bounds, center + bounds]; masked rows pass
    through unchanged."""
    lo = center.rows - bounds.matrix
    hi = center.rows + bounds.matrix
    rows = np.clip(candidate.rows, lo, hi)
    rows[1:][~candidate.mask] = candidate.rows[1:][~candidate.mask]
    return StateMatrix(rows, candidate.mask.copy())


def sample_observation(true_next: StateMatrix, rate: float,
                       adversarial: StateMatrix | None,
                       bounds: CorruptionBounds,
                       rng: np.random.Generator) -> ObservationSample:
    """R-contamination draw: the true matrix with probability 1-R, the
    adversarial matrix with probability R."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("corruption rate must lie in [0, 1)")
    if rate > 0.0:
        if adversarial is None:
            raise ValueError("adversarial observation required when rate > 0")
        if not box_contains(adversarial.rows, true_next.rows, bounds,
                            true_next.mask):
            raise ValueError("adversarial observation outside the "
                             "uncertainty box")
    corrupted = rate > 0.0 and rng.random() < rate
    observed = adversarial.copy() if corrupted else true_next.copy()
    return ObservationSample(observed, corrupted, true_next)


@dataclass(frozen=True)
class FeatureNorms:
    """Invertible per-column affine normalization: (x - offset) / scale."""
    offset: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        if np.any(self.scale == 0):
            raise ValueError("zero normalization scale")


def default_feature_norms() -> FeatureNorms:
    return FeatureNorms(
        offset=np.array([5000.0, 0.0, 0.0, 20.0, 5000.0, 0.0]),
        scale=np.array([5000.0, 2000.0, math.pi, 10.0, 5000.0, SPEED_STEP]),
    )


def normalize_features(sm: StateMatrix, norms: FeatureNorms) -> np.ndarray:
    """Affine per-column transform; masked intruder rows are zeroed so the
    sentinel fill can never leak into the network."""
    out = (sm.rows - norms.offset) / norms.scale
    out[1:][~sm.mask] = 0.0
    return out


def denormalize_features(rows: np.ndarray, norms: FeatureNorms) -> np.ndarray:
    return rows * norms.scale + norms.offset
