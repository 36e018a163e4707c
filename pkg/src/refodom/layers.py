"""Two-layer NDT matching: regular points and marker points live in separate
grids and the match maximizes the weighted sum of both layer scores.

Marker points may be too sparse to fill an NDT cell on their own, so each one
is augmented with points synthesized on a surrounding circle before grid
construction (construction only; synthesized points are never query points).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose2D
from .ndt import (DEFAULT_CELL_SIZE, MatchOptions, MatchResult, NdtGrid,
                  build_grids, newton_ascent, score_terms)

DEFAULT_MARKER_WEIGHT = 10.0
DEFAULT_SYNTH_RADIUS = 0.05  # m
SYNTH_CIRCLE_POINTS = 8


@dataclass
class LayeredGrids:
    regular: list
    marker: list
    marker_weight: float = DEFAULT_MARKER_WEIGHT
    synth_radius: float = DEFAULT_SYNTH_RADIUS


def split_points(points: np.ndarray, beam_indices: np.ndarray, detections):
    """Partition scan points into (regular, marker) by detection support
    ranges. Overlapping support ranges merge silently; the partition is exact.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    beam_indices = np.asarray(beam_indices)
    is_marker = np.zeros(len(pts), dtype=bool)
    for det in detections:
        is_marker |= (beam_indices >= det.support_start) & (beam_indices <= det.support_end)
    return pts[~is_marker], pts[is_marker]


def synthesize_marker_cloud(marker_points: np.ndarray, radius: float) -> np.ndarray:
    """Each marker point plus SYNTH_CIRCLE_POINTS equally spaced on a circle
    of the given radius around it."""
    pts = np.asarray(marker_points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return pts
    if radius <= 0:
        raise ValueError("synth radius must be positive")
    ang = np.arange(SYNTH_CIRCLE_POINTS) * (2.0 * math.pi / SYNTH_CIRCLE_POINTS)
    circle = radius * np.column_stack((np.cos(ang), np.sin(ang)))
    cloud = pts[:, None, :] + circle[None, :, :]
    return np.vstack((pts, cloud.reshape(-1, 2)))


def build_marker_layer(marker_points: np.ndarray, radius: float = DEFAULT_SYNTH_RADIUS,
                       cell_size: float = DEFAULT_CELL_SIZE) -> list:
    """NDT grids over marker points augmented with synthesized circle points,
    so even an isolated marker point yields a valid cell."""
    return build_grids(synthesize_marker_cloud(marker_points, radius), cell_size)


def layered_score(g: LayeredGrids, regular_points: np.ndarray,
                  marker_points: np.ndarray, pose: Pose2D):
    """Weighted two-layer score with gradient/Hessian; the association ratio
    counts regular and marker points jointly."""
    s_r, g_r, h_r, a_r, n_r = score_terms(g.regular, regular_points, pose)
    s_m, g_m, h_m, a_m, n_m = score_terms(g.marker, marker_points, pose)
    w = g.marker_weight
    total = s_r + w * s_m
    grad = g_r + w * g_m
    hess = h_r + w * h_m
    n_total = n_r + n_m
    ratio = (a_r + a_m) / n_total if n_total else 0.0
    return total, grad, hess, ratio


def match_layered(g: LayeredGrids, regular_points: np.ndarray,
                  marker_points: np.ndarray, initial: Pose2D,
                  opts: MatchOptions | None = None) -> MatchResult:
    regular_points = np.asarray(regular_points, dtype=float).reshape(-1, 2)
    marker_points = np.asarray(marker_points, dtype=float).reshape(-1, 2)

    def objective(pose):
        return layered_score(g, regular_points, marker_points, pose)

    return newton_ascent(objective, initial, opts)
