"""2D NDT: Gaussian-cell grids over point clouds and maximization of the
exp(-0.5 * Mahalanobis^2) score over SE(2) with analytic derivatives.

Four lattices shifted by half a cell in x, y and both remove discretization
bias without interpolation. Cell covariances are sample covariances (ddof=1),
regularized so the smaller eigenvalue is at least 1e-3 of the larger one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Pose2D, wrap_angle

GRID_SHIFTS = ((0.0, 0.0), (0.5, 0.0), (0.0, 0.5), (0.5, 0.5))
MIN_CELL_POINTS = 3
EIG_RATIO_FLOOR = 1e-3
EIG_ABS_FLOOR = 1e-6  # m^2

# Cell coordinate packing into a single int64 key for vectorized lookup.
_KEY_OFFSET = 1 << 24
_KEY_STRIDE = 1 << 25


@dataclass
class MatchOptions:
    max_iterations: int = 50
    convergence_tol: float = 1e-6
    max_halvings: int = 10
    max_step_translation: float = 0.5  # m, trust-region style clamp
    max_step_rotation: float = 0.5     # rad


@dataclass
class MatchResult:
    pose: Pose2D
    score: float
    iterations: int
    converged: bool
    hessian: np.ndarray
    associated_ratio: float


class NdtGrid:
    """One shifted lattice of Gaussian cells, stored as flat arrays sorted by
    packed cell key for O(log n) vectorized lookup."""

    __slots__ = ("cell_size", "shift", "keys", "means", "covs", "inv_covs", "counts")

    def __init__(self, cell_size, shift, keys, means, covs, inv_covs, counts):
        self.cell_size = cell_size
        self.shift = shift
        self.keys = keys
        self.means = means
        self.covs = covs
        self.inv_covs = inv_covs
        self.counts = counts

    def __len__(self):
        return len(self.keys)

    def _cell_keys(self, points: np.ndarray) -> np.ndarray:
        ij = np.floor((points - self.shift) / self.cell_size).astype(np.int64)
        return (ij[:, 0] + _KEY_OFFSET) * _KEY_STRIDE + (ij[:, 1] + _KEY_OFFSET)

    def lookup(self, points: np.ndarray) -> np.ndarray:
        """Index of the containing cell per point, -1 if the cell is empty."""
        if len(self.keys) == 0 or len(points) == 0:
            return np.full(len(points), -1, dtype=np.int64)
        keys = self._cell_keys(points)
        pos = np.searchsorted(self.keys, keys)
        pos = np.clip(pos, 0, len(self.keys) - 1)
        out = np.where(self.keys[pos] == keys, pos, -1)
        return out

    def debug_dump(self) -> str:
        """Cell coordinates, mean, covariance as delimited text."""
        lines = []
        for k in range(len(self.keys)):
            ix = int(self.keys[k] // _KEY_STRIDE - _KEY_OFFSET)
            iy = int(self.keys[k] % _KEY_STRIDE - _KEY_OFFSET)
            m = self.means[k]
            c = self.covs[k]
            lines.append(" ".join(repr(v) for v in
                                  [ix, iy, float(m[0]), float(m[1]),
                                   float(c[0, 0]), float(c[0, 1]), float(c[1, 1]),
                                   int(self.counts[k])]))
        return "\n".join(lines)


def _regularize_covariances(covs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Floor the smaller eigenvalue of each symmetric 2x2 covariance; returns
    (regularized covariances, their inverses)."""
    a = covs[:, 0, 0]
    b = covs[:, 0, 1]
    c = covs[:, 1, 1]
    half_tr = 0.5 * (a + c)
    disc = np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b ** 2, 0.0))
    l1 = half_tr + disc  # larger eigenvalue
    l2 = half_tr - disc
    l1r = np.maximum(l1, EIG_ABS_FLOOR)
    l2r = np.maximum(l2, np.maximum(EIG_RATIO_FLOOR * l1r, EIG_ABS_FLOOR))

    # Eigenvector for l1: (b, l1 - a), or the x-axis when already diagonal.
    vx = np.where(np.abs(b) > 1e-30, b, np.where(a >= c, 1.0, 0.0))
    vy = np.where(np.abs(b) > 1e-30, l1 - a, np.where(a >= c, 0.0, 1.0))
    norm = np.sqrt(vx ** 2 + vy ** 2)
    vx, vy = vx / norm, vy / norm

    reg = np.empty_like(covs)
    reg[:, 0, 0] = l1r * vx * vx + l2r * vy * vy
    reg[:, 0, 1] = reg[:, 1, 0] = l1r * vx * vy - l2r * vx * vy
    reg[:, 1, 1] = l1r * vy * vy + l2r * vx * vx

    det = reg[:, 0, 0] * reg[:, 1, 1] - reg[:, 0, 1] ** 2
    inv = np.empty_like(reg)
    inv[:, 0, 0] = reg[:, 1, 1] / det
    inv[:, 1, 1] = reg[:, 0, 0] / det
    inv[:, 0, 1] = inv[:, 1, 0] = -reg[:, 0, 1] / det
    return reg, inv


def _build_single_grid(points: np.ndarray, cell_size: float, shift: np.ndarray,
                       min_points: int) -> NdtGrid:
    if len(points) == 0:
        empty = np.empty((0,), dtype=np.int64)
        return NdtGrid(cell_size, shift, empty, np.empty((0, 2)),
                       np.empty((0, 2, 2)), np.empty((0, 2, 2)), np.empty((0,)))
    ij = np.floor((points - shift) / cell_size).astype(np.int64)
    keys = (ij[:, 0] + _KEY_OFFSET) * _KEY_STRIDE + (ij[:, 1] + _KEY_OFFSET)
    order = np.argsort(keys, kind="stable")
    keys_sorted = keys[order]
    pts_sorted = points[order]
    uniq_keys, starts, counts = np.unique(keys_sorted, return_index=True,
                                          return_counts=True)
    keep = counts >= min_points
    uniq_keys, starts, counts = uniq_keys[keep], starts[keep], counts[keep]
    m = len(uniq_keys)
    means = np.empty((m, 2))
    covs = np.empty((m, 2, 2))
    for k in range(m):
        seg = pts_sorted[starts[k]:starts[k] + counts[k]]
        mu = seg.mean(axis=0)
        d = seg - mu
        means[k] = mu
        covs[k] = d.T @ d / (counts[k] - 1)
    covs, inv_covs = _regularize_covariances(covs) if m else (covs, covs.copy())
    return NdtGrid(cell_size, shift, uniq_keys, means, covs, inv_covs,
                   counts.astype(float))


def build_grids(points: np.ndarray, cell_size: float,
                min_points: int = MIN_CELL_POINTS) -> list[NdtGrid]:
    """Build the four half-cell-shifted NDT grids for a point cloud."""
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    return [
        _build_single_grid(pts, cell_size,
                           np.array(s) * cell_size, min_points)
        for s in GRID_SHIFTS
    ]


def score(grids, points: np.ndarray, pose: Pose2D):
    """NDT score, gradient and Hessian w.r.t. (x, y, theta) at a pose.

    Returns (score, gradient (3,), hessian (3,3), associated_ratio).
    """
    s, g, h, n_assoc, n_pts = score_terms(grids, points, pose)
    ratio = n_assoc / n_pts if n_pts else 0.0
    return s, g, h, ratio


def score_terms(grids, points: np.ndarray, pose: Pose2D):
    """Like score() but returns raw association counts so callers can merge
    several point classes into one ratio."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n_pts = len(pts)
    total = 0.0
    grad = np.zeros(3)
    hess = np.zeros((3, 3))
    associated = np.zeros(n_pts, dtype=bool)
    if n_pts == 0:
        return total, grad, hess, 0, 0

    c, sn = math.cos(pose.theta), math.sin(pose.theta)
    R = np.array([[c, -sn], [sn, c]])
    dR = np.array([[-sn, -c], [c, -sn]])
    tp = pts @ R.T + np.array([pose.x, pose.y])
    drp = pts @ dR.T          # du/dtheta per point
    d2rp = -(pts @ R.T)       # d2u/dtheta2 per point

    for grid in grids:
        idx = grid.lookup(tp)
        valid = idx >= 0
        if not valid.any():
            continue
        associated |= valid
        vi = idx[valid]
        u = tp[valid] - grid.means[vi]                      # (K,2)
        icov = grid.inv_covs[vi]                            # (K,2,2)
        ic00, ic01, ic11 = icov[:, 0, 0], icov[:, 0, 1], icov[:, 1, 1]
        u0, u1 = u[:, 0], u[:, 1]
        a0 = ic00 * u0 + ic01 * u1                          # Sigma^-1 u
        a1 = ic01 * u0 + ic11 * u1
        mah = u0 * a0 + u1 * a1
        sterm = np.exp(-0.5 * mah)                          # (K,)
        total += float(sterm.sum())

        # Jacobian columns of u: (1,0), (0,1), dR p.
        j0, j1 = drp[valid, 0], drp[valid, 1]
        b2 = a0 * j0 + a1 * j1
        grad[0] -= float(sterm @ a0)
        grad[1] -= float(sterm @ a1)
        grad[2] -= float(sterm @ b2)

        # Hessian: sum s * (b b^T - J^T Sigma^-1 J - a . d2u), where only the
        # theta-theta entry has a nonzero second derivative of u.
        icj0 = ic00 * j0 + ic01 * j1
        icj1 = ic01 * j0 + ic11 * j1
        hess[0, 0] += float(sterm @ (a0 * a0 - ic00))
        hess[0, 1] += float(sterm @ (a0 * a1 - ic01))
        hess[1, 1] += float(sterm @ (a1 * a1 - ic11))
        hess[0, 2] += float(sterm @ (a0 * b2 - icj0))
        hess[1, 2] += float(sterm @ (a1 * b2 - icj1))
        hess[2, 2] += float(sterm @ (b2 * b2 - (j0 * icj0 + j1 * icj1)
                                     - (a0 * d2rp[valid, 0] + a1 * d2rp[valid, 1])))

    hess[1, 0] = hess[0, 1]
    hess[2, 0] = hess[0, 2]
    hess[2, 1] = hess[1, 2]
    return total, grad, hess, int(associated.sum()), n_pts


# Eigenvalue floor for the step computation, relative to the stiffest
# direction. Only guards against singular / indefinite Hessians; it must stay
# far below any genuine stiffness ratio (x vs theta curvature differs by ~1e4
# in a corridor) or soft-direction corrections get crushed. Step length in
# truly unconstrained directions is bounded by the trust-region caps instead.
STEP_EIG_FLOOR = 1e-8


def _ascent_direction(grad: np.ndarray, hess: np.ndarray) -> np.ndarray:
    """Newton ascent direction from a possibly indefinite / near-singular
    Hessian: eigenvalues of -H are floored so the step cannot blow up along
    unconstrained directions."""
    A = -hess
    evals, evecs = np.linalg.eigh(A)
    emax = evals.max()
    if emax <= 0.0:
        n = np.linalg.norm(grad)
        return grad / n if n > 0 else grad
    clamped = np.maximum(evals, STEP_EIG_FLOOR * emax)
    return evecs @ ((evecs.T @ grad) / clamped)


def newton_ascent(objective, initial: Pose2D, opts: MatchOptions | None = None) -> MatchResult:
    """Damped Newton maximization of a smooth objective over (x, y, theta).

    objective(pose) must return (score, grad, hess, associated_ratio).
    The step is halved until the score is non-decreasing; the best pose seen
    is returned.
    """
    if opts is None:
        opts = MatchOptions()
    pose = initial
    s, g, h, ratio = objective(pose)
    if ratio == 0.0:
        return MatchResult(initial, s, 0, False, h, 0.0)
    best_pose, best_score, best_h, best_ratio = pose, s, h, ratio
    converged = False
    iterations = 0

    for iterations in range(1, opts.max_iterations + 1):
        step = _ascent_direction(g, h)
        tn = math.hypot(step[0], step[1])
        if tn > opts.max_step_translation:
            step = step * (opts.max_step_translation / tn)
        if abs(step[2]) > opts.max_step_rotation:
            step = step * (opts.max_step_rotation / abs(step[2]))

        alpha = 1.0
        accepted = False
        for _ in range(opts.max_halvings + 1):
            cand = Pose2D(pose.x + alpha * step[0], pose.y + alpha * step[1],
                          wrap_angle(pose.theta + alpha * step[2]))
            cs, cg, ch, cratio = objective(cand)
            if cs >= s:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            converged = True
            break

        update_norm = alpha * float(np.linalg.norm(step))
        pose, s, g, h, ratio = cand, cs, cg, ch, cratio
        if s >= best_score:
            best_pose, best_score, best_h, best_ratio = pose, s, h, ratio
        if update_norm < opts.convergence_tol:
            converged = True
            break

    return MatchResult(best_pose, best_score, iterations, converged,
                       best_h, best_ratio)


def match(grids, points: np.ndarray, initial: Pose2D,
          opts: MatchOptions | None = None) -> MatchResult:
    """Match a point cloud against NDT grids starting from an initial pose."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)

    def objective(pose):
        return score(grids, pts, pose)

    return newton_ascent(objective, initial, opts)


DEFAULT_CELL_SIZE = 0.5  # m
