"""Detection of wall-mounted retroreflective markers in a single laser scan.

A marker is a strip of known width on a flat wall. Candidates are
high-intensity beams; each candidate is validated by a chain of gates
(range, wall-segment size, intensity-jump borders, line straightness,
incidence angle, predicted point count) before duplicates are merged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .scan import LaserScan

# Near-equal intensity jumps (within this relative tolerance of the maximum)
# occur when beam divergence splits a marker border into two steps; we then
# prefer the outermost jump so both partially-hit edge beams count as marker
# points, consistent with the +2 point-count correction.
_JUMP_TIE_REL = 0.01


@dataclass(frozen=True)
class DetectorParams:
    r_min: float = 0.5              # m, reject returns from the vehicle itself
    r_max: float = 6.0              # m, too few beams hit a marker beyond this
    window: float = 0.15            # m, wall-segment growth radius
    l_min: float = 0.15             # m, minimum wall-segment extent
    p_min: int = 5                  # minimum wall-segment point count
    fit_error_max: float = 0.01     # m^2, max line-fit MSE
    jump_fraction: float = 0.333    # c_i: min jump magnitude as fraction of i_min
    marker_width: float = 0.05      # m
    flat_angle_max: float = math.radians(80.0)
    duplicate_merge_dist: float = 0.10  # m
    reject_head_on: bool = False    # drop markers whose normal points at the lidar
    head_on_angle: float = math.radians(1.0)
    center_mode: str = "mass"       # "mass" or "peak"

    def __post_init__(self):
        if not (0 < self.r_min < self.r_max):
            raise ValueError("require 0 < r_min < r_max")
        if self.window <= 0 or self.l_min <= 0:
            raise ValueError("window and l_min must be positive")
        if self.p_min < 3:
            raise ValueError("p_min must be >= 3")
        if self.fit_error_max <= 0:
            raise ValueError("fit_error_max must be positive")
        if not (0 < self.jump_fraction <= 1):
            raise ValueError("jump_fraction must be in (0, 1]")
        if self.marker_width <= 0:
            raise ValueError("marker_width must be positive")
        if self.flat_angle_max >= math.pi / 2:
            raise ValueError("flat_angle_max must be < pi/2")
        if self.center_mode not in ("mass", "peak"):
            raise ValueError("center_mode must be 'mass' or 'peak'")


@dataclass(frozen=True)
class MarkerDetection:
    center: np.ndarray          # (2,), sensor frame
    normal: np.ndarray          # (2,), unit, oriented toward the sensor
    support_start: int          # first beam index on the marker
    support_end: int            # last beam index on the marker (inclusive)
    incidence_angle: float      # radians
    mean_intensity: float
    has_normal: bool = True

    @property
    def point_count(self) -> int:
        return self.support_end - self.support_start + 1


def fit_line(points: np.ndarray):
    """Total-least-squares line fit.

    Returns (direction, normal, mse) where mse is the mean squared
    perpendicular distance and the normal points toward the origin.
    """
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        raise ValueError("need at least 2 points for a line fit")
    centroid = pts.mean(axis=0)
    d = pts - centroid
    cov = d.T @ d / len(pts)
    if np.allclose(cov, 0.0, atol=1e-18):
        raise ValueError("degenerate input: all points coincident")
    evals, evecs = np.linalg.eigh(cov)
    direction = evecs[:, 1]  # eigenvector of the larger eigenvalue
    mse = float(evals[0])
    normal = np.array([-direction[1], direction[0]])
    if np.dot(normal, -centroid) < 0:
        normal = -normal
    return direction, normal, mse


def expected_point_count(center, incidence: float, marker_width: float,
                         resolution: float) -> int:
    """Predicted number of beams on a marker of the given width.

    Uses the angular extent of the marker as seen from the sensor, plus 2
    for the edge beams that partially hit the marker due to beam divergence.
    """
    dist = float(np.linalg.norm(center))
    if dist <= marker_width:
        raise ValueError("marker must be farther than its own width")
    dx = 0.5 * marker_width * math.sin(incidence)
    dy = 0.5 * marker_width * math.cos(incidence)
    alpha = math.atan2(dy, dist - dx)
    beta = math.atan2(dy, dist + dx)
    return int(math.floor((alpha + beta) / resolution + 0.5)) + 2


def _grow_wall_segment(points, finite, j, window):
    """Extend [lo, hi] from beam j while neighbors stay within the Euclidean
    window of p_j; stops at invalid beams and thus at depth jumps."""
    n = len(points)
    pj = points[j]
    lo = j
    while lo - 1 >= 0 and finite[lo - 1] and np.linalg.norm(points[lo - 1] - pj) <= window:
        lo -= 1
    hi = j
    while hi + 1 < n and finite[hi + 1] and np.linalg.norm(points[hi + 1] - pj) <= window:
        hi += 1
    return lo, hi


def _find_marker_borders(intensities, lo, hi, j, min_jump):
    """Locate the marker inside a wall segment from the largest intensity
    jumps. Returns (start, end) beam indices or None.

    The border is inclusive on the upward jump and exclusive on the downward
    one. Among near-equal maximal jumps the outermost is taken (see
    _JUMP_TIE_REL).
    """
    seg = intensities[lo:hi + 1]
    jumps = np.diff(seg)  # jumps[k] = I[lo+k+1] - I[lo+k]
    if len(jumps) == 0:
        return None
    up_max = jumps.max()
    down_max = -jumps.min()
    if up_max < min_jump or down_max < min_jump:
        return None
    up_candidates = np.nonzero(jumps >= up_max * (1.0 - _JUMP_TIE_REL))[0]
    down_candidates = np.nonzero(-jumps >= down_max * (1.0 - _JUMP_TIE_REL))[0]
    start = lo + int(up_candidates[0]) + 1   # first point after the upward jump
    end = lo + int(down_candidates[-1])      # last point before the downward jump
    if not (start <= j <= end):
        return None
    return start, end


def detect(scan: LaserScan, params: DetectorParams | None = None,
           i_min: float | None = None):
    """Run the full marker detector on one scan.

    i_min overrides the sensor preset threshold (used for PR sweeps).
    Returns detections sorted by support start index.
    """
    if params is None:
        params = DetectorParams()
    if i_min is None:
        i_min = scan.spec.i_min
    min_jump = params.jump_fraction * i_min

    ranges = scan.ranges
    intensities = scan.intensities
    finite = np.isfinite(ranges)
    bearings = scan.bearings()
    points = np.column_stack((np.where(finite, ranges, 0.0) * np.cos(bearings),
                              np.where(finite, ranges, 0.0) * np.sin(bearings)))

    candidate_idx = np.nonzero(
        finite & (intensities >= i_min)
        & (ranges >= params.r_min) & (ranges <= params.r_max)
    )[0]

    raw = []
    seen_spans = set()
    for j in candidate_idx:
        lo, hi = _grow_wall_segment(points, finite, int(j), params.window)
        if hi - lo + 1 < params.p_min:
            continue
        if np.linalg.norm(points[lo] - points[hi]) < params.l_min:
            continue
        borders = _find_marker_borders(intensities, lo, hi, int(j), min_jump)
        if borders is None:
            continue
        start, end = borders
        span_key = (start, end)
        if span_key in seen_spans:
            continue
        marker_pts = points[start:end + 1]
        if params.center_mode == "peak":
            center = marker_pts[np.argmax(intensities[start:end + 1])]
        else:
            center = marker_pts.mean(axis=0)
        try:
            _, normal, mse = fit_line(points[lo:hi + 1])
        except ValueError:
            continue
        if mse > params.fit_error_max:
            continue
        dist = np.linalg.norm(center)
        if dist < 1e-9:
            continue
        cos_inc = float(np.dot(normal, -center) / dist)
        incidence = math.acos(min(1.0, max(-1.0, cos_inc)))
        if incidence > params.flat_angle_max:
            continue
        if params.reject_head_on and incidence < params.head_on_angle:
            continue
        expected = expected_point_count(center, incidence, params.marker_width,
                                        scan.spec.angular_resolution)
        actual = end - start + 1
        if abs(actual - expected) > scan.spec.p_d:
            continue
        seen_spans.add(span_key)
        raw.append(MarkerDetection(
            center=center,
            normal=normal,
            support_start=start,
            support_end=end,
            incidence_angle=incidence,
            mean_intensity=float(intensities[start:end + 1].mean()),
        ))

    return _merge_duplicates(raw, params.duplicate_merge_dist)


def _merge_duplicates(detections, merge_dist):
    """Keep the strongest of any cluster of detections closer than
    merge_dist (larger point count wins, ties by smaller start index)."""
    order = sorted(detections, key=lambda d: (-d.point_count, d.support_start))
    kept = []
    for det in order:
        if all(np.linalg.norm(det.center - k.center) >= merge_dist for k in kept):
            kept.append(det)
    kept.sort(key=lambda d: d.support_start)
    return kept


def detection_to_line(timestamp: float, det: MarkerDetection) -> str:
    """Structured-text record for the CLI detect command."""
    normal_angle = math.atan2(det.normal[1], det.normal[0]) if det.has_normal else math.nan
    return " ".join([
        repr(float(timestamp)),
        repr(float(det.center[0])),
        repr(float(det.center[1])),
        repr(float(normal_angle)),
        str(det.point_count),
        repr(math.degrees(det.incidence_angle)),
    ])
