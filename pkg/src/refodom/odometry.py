"""Scan-to-local-map lidar odometry.

The local map is a bounded FIFO of keyframes whose merged NDT grids are the
matching target. Markers enter the estimate either as a weighted semantic NDT
layer ("layer" mode) or through persistent tracks added to the score
("tracking" mode). Keyframes are promoted when the match quality / overlap /
motion checks fail, after which the current scan is re-matched; if that also
fails, the constant-velocity prediction is emitted with inflated covariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .detector import DetectorParams, detect
from .geometry import Pose2D, compose, inverse, relative, transform_points, wrap_angle
from .layers import (DEFAULT_MARKER_WEIGHT, DEFAULT_SYNTH_RADIUS, LayeredGrids,
                     build_marker_layer, match_layered, split_points)
from .ndt import DEFAULT_CELL_SIZE, MatchOptions, MatchResult, build_grids, match
from .scan import LaserScan
from .tracking import (DEFAULT_W_TRACKS, Tracker, TrackerParams,
                       match_tracked, merge_reference_tracks)

MODES = ("plain", "layer", "tracking")


@dataclass(frozen=True)
class KeyframeCriteria:
    min_score: float = 0.3                  # score per associated point
    min_overlap: float = 0.7                # associated-point ratio
    max_translation: float = 1.0            # m from the current keyframe
    max_rotation: float = math.radians(30.0)

    def __post_init__(self):
        if not (0 < self.min_overlap <= 1):
            raise ValueError("min_overlap must be in (0, 1]")
        if self.min_score <= 0 or self.max_translation <= 0 or self.max_rotation <= 0:
            raise ValueError("criteria thresholds must be positive")


@dataclass
class OdometryConfig:
    mode: str = "plain"
    cell_size: float = DEFAULT_CELL_SIZE
    n_keyframes: int = 10
    marker_weight: float = DEFAULT_MARKER_WEIGHT
    synth_radius: float = DEFAULT_SYNTH_RADIUS
    w_tracks: float = DEFAULT_W_TRACKS
    duplicate_track_policy: str = "oldest"
    detector: DetectorParams = field(default_factory=DetectorParams)
    tracker: TrackerParams = field(default_factory=TrackerParams)
    criteria: KeyframeCriteria = field(default_factory=KeyframeCriteria)
    match: MatchOptions = field(default_factory=MatchOptions)
    covariance_inflation: float = 1e3
    match_stride: int = 1   # match every k-th regular point (map keeps all)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.n_keyframes < 1:
            raise ValueError("n_keyframes must be >= 1")
        if self.match_stride < 1:
            raise ValueError("match_stride must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, rec: dict) -> "OdometryConfig":
        rec = dict(rec)
        for key, sub in (("detector", DetectorParams), ("tracker", TrackerParams),
                         ("criteria", KeyframeCriteria), ("match", MatchOptions)):
            if key in rec and isinstance(rec[key], dict):
                rec[key] = sub(**rec[key])
        return cls(**rec)


@dataclass
class Keyframe:
    scan: LaserScan
    pose: Pose2D
    detections: list
    regular_points: np.ndarray      # odometry frame
    marker_points: np.ndarray       # odometry frame
    tracks_snapshot: dict           # mature track id -> position (odometry frame)


@dataclass
class OdometryOutput:
    timestamp: float
    pose: Pose2D
    is_keyframe: bool
    match_ok: bool
    covariance_hint: np.ndarray


@dataclass
class _ProcessedScan:
    """Cache of the most recent scan that passed the keyframe checks."""
    scan: LaserScan
    pose: Pose2D
    detections: list
    regular_sensor: np.ndarray
    marker_sensor: np.ndarray


class LocalMap:
    """Bounded FIFO of keyframes; grids are rebuilt from scratch on change so
    the map is always exactly what the buffer contents imply."""

    def __init__(self, config: OdometryConfig):
        self.config = config
        self.keyframes: list[Keyframe] = []
        self.grids = None           # plain/tracking: regular grids
        self.layered: LayeredGrids | None = None

    def __len__(self):
        return len(self.keyframes)

    def add(self, keyframe: Keyframe):
        self.keyframes.append(keyframe)
        if len(self.keyframes) > self.config.n_keyframes:
            self.keyframes.pop(0)
        self.rebuild()

    def rebuild(self):
        cfg = self.config
        if cfg.mode == "layer":
            regular = _stack([k.regular_points for k in self.keyframes])
            marker = _stack([k.marker_points for k in self.keyframes])
            self.layered = LayeredGrids(
                regular=build_grids(regular, cfg.cell_size),
                marker=build_marker_layer(marker, cfg.synth_radius, cfg.cell_size),
                marker_weight=cfg.marker_weight,
                synth_radius=cfg.synth_radius,
            )
        elif cfg.mode == "tracking":
            # Markers are carried by the track references; folding their
            # tight point clusters into the grids would add a second, keyframe
            # pose dependent anchor that fights the track term.
            regular = _stack([k.regular_points for k in self.keyframes])
            self.grids = build_grids(regular, cfg.cell_size)
        else:
            pts = _stack([np.vstack((k.regular_points.reshape(-1, 2),
                                     k.marker_points.reshape(-1, 2)))
                          for k in self.keyframes])
            self.grids = build_grids(pts, cfg.cell_size)

    def reference_tracks(self) -> dict:
        return merge_reference_tracks((k.tracks_snapshot for k in self.keyframes),
                                      self.config.duplicate_track_policy)


def _stack(arrays):
    arrays = [np.asarray(a, dtype=float).reshape(-1, 2) for a in arrays]
    if not arrays:
        return np.empty((0, 2))
    return np.vstack(arrays)


class Odometry:
    """Stateful scan-in / pose-out pipeline; scans must arrive in time order."""

    def __init__(self, config: OdometryConfig | None = None):
        self.config = config or OdometryConfig()
        self.local_map = LocalMap(self.config)
        self.tracker = Tracker(self.config.tracker) if self.config.mode == "tracking" else None
        self.pose_history: list[Pose2D] = []
        self.last_timestamp = None
        self.last_passing: _ProcessedScan | None = None
        self.keyframe_log: list[tuple[float, Pose2D]] = []
        self.track_log: list[tuple] = []

    # -- prediction ---------------------------------------------------------

    def _predict(self) -> Pose2D:
        if len(self.pose_history) < 2:
            return self.pose_history[-1] if self.pose_history else Pose2D()
        prev, last = self.pose_history[-2], self.pose_history[-1]
        return compose(last, relative(prev, last))

    # -- per-scan processing ------------------------------------------------

    def process_scan(self, scan: LaserScan) -> OdometryOutput:
        if self.last_timestamp is not None and scan.timestamp <= self.last_timestamp:
            raise ValueError(
                f"scan timestamps must be strictly increasing "
                f"({scan.timestamp} after {self.last_timestamp})")
        self.last_timestamp = scan.timestamp

        cfg = self.config
        points, _, beam_idx = scan.to_cartesian()
        detections = detect(scan, cfg.detector) if cfg.mode != "plain" else []
        regular, marker = split_points(points, beam_idx, detections)
        # The map keeps every point; matching may subsample the (dense,
        # redundant) regular returns to bound per-scan cost.
        reg_match = regular[::cfg.match_stride]

        if not self.local_map.keyframes:
            return self._bootstrap(scan, detections, regular, marker)

        initial = self._predict()
        newly_mature: set = set()
        current_tracks: dict = {}

        if cfg.mode == "tracking":
            centers_sensor = np.array([d.center for d in detections],
                                      dtype=float).reshape(-1, 2)
            centers_odom = transform_points(initial, centers_sensor)
            assignments = self.tracker.assign(centers_odom)
            mature_ids = set(self.tracker.mature_tracks())
            for di, tj in assignments:
                track = self.tracker.tracks[tj]
                if track.track_id in mature_ids:
                    current_tracks[track.track_id] = centers_sensor[di]

        result = self._match(reg_match, marker, current_tracks, initial)

        if cfg.mode == "tracking":
            centers_final = transform_points(result.pose, centers_sensor)
            newly_mature = self.tracker.update(centers_final, assignments)
            self._log_tracks(scan.timestamp)

        n_points = len(reg_match) + (len(marker) if cfg.mode == "layer" else 0)
        ok, _ = self._check(result, n_points)
        triggered = not ok or bool(newly_mature)
        is_keyframe = False

        if triggered:
            is_keyframe = self._promote_cached_keyframe()
            if is_keyframe:
                if cfg.mode == "tracking":
                    current_tracks = self._refresh_current_tracks(detections, result.pose)
                result = self._match(reg_match, marker, current_tracks, initial)
                ok, _ = self._check(result, n_points)
            if not ok:
                cov = self._covariance(result, inflated=True)
                self.pose_history.append(initial)
                return OdometryOutput(scan.timestamp, initial, is_keyframe, False, cov)

        self.pose_history.append(result.pose)
        self.last_passing = _ProcessedScan(scan, result.pose, detections,
                                           regular, marker)
        return OdometryOutput(scan.timestamp, result.pose, is_keyframe, True,
                              self._covariance(result))

    def run(self, scans):
        """Process a scan stream; returns (outputs, keyframe log)."""
        outputs = [self.process_scan(scan) for scan in scans]
        return outputs, list(self.keyframe_log)

    # -- internals ----------------------------------------------------------

    def _bootstrap(self, scan, detections, regular, marker) -> OdometryOutput:
        pose = Pose2D()
        if self.tracker is not None:
            centers = np.array([d.center for d in detections], dtype=float).reshape(-1, 2)
            self.tracker.update(transform_points(pose, centers))
            self._log_tracks(scan.timestamp)
        self._add_keyframe(scan, pose, detections, regular, marker)
        self.pose_history.append(pose)
        self.last_passing = _ProcessedScan(scan, pose, detections, regular, marker)
        return OdometryOutput(scan.timestamp, pose, True, True, np.eye(3) * 1e-6)

    def _match(self, regular, marker, current_tracks, initial) -> MatchResult:
        cfg = self.config
        if cfg.mode == "layer":
            return match_layered(self.local_map.layered, regular, marker,
                                 initial, cfg.match)
        if cfg.mode == "tracking":
            return match_tracked(self.local_map.grids, regular, current_tracks,
                                 self.local_map.reference_tracks(),
                                 cfg.w_tracks, initial, cfg.match)
        return match(self.local_map.grids, regular, initial, cfg.match)

    def _check(self, result: MatchResult, n_points: int):
        crit = self.config.criteria
        reasons = []
        if not result.converged:
            reasons.append("diverged")
        n_assoc = result.associated_ratio * n_points
        if n_assoc <= 0:
            reasons.append("no-association")
        elif result.score / n_assoc < crit.min_score:
            reasons.append("score")
        if result.associated_ratio < crit.min_overlap:
            reasons.append("overlap")
        kf_pose = self.local_map.keyframes[-1].pose
        delta = relative(kf_pose, result.pose)
        if math.hypot(delta.x, delta.y) > crit.max_translation:
            reasons.append("translation")
        if abs(delta.theta) > crit.max_rotation:
            reasons.append("rotation")
        return (not reasons), reasons

    def _promote_cached_keyframe(self) -> bool:
        cached = self.last_passing
        if cached is None:
            return False
        if self.local_map.keyframes and \
                self.local_map.keyframes[-1].scan.timestamp == cached.scan.timestamp:
            return False  # already in the map; nothing new to add
        regular_odom = transform_points(cached.pose, cached.regular_sensor)
        marker_odom = transform_points(cached.pose, cached.marker_sensor)
        snapshot = self.tracker.all_tracks() if self.tracker is not None else {}
        kf = Keyframe(cached.scan, cached.pose, cached.detections,
                      regular_odom, marker_odom, snapshot)
        self.local_map.add(kf)
        self.keyframe_log.append((cached.scan.timestamp, cached.pose))
        return True

    def _add_keyframe(self, scan, pose, detections, regular, marker):
        regular_odom = transform_points(pose, regular)
        marker_odom = transform_points(pose, marker)
        snapshot = self.tracker.all_tracks() if self.tracker is not None else {}
        kf = Keyframe(scan, pose, detections, regular_odom, marker_odom, snapshot)
        self.local_map.add(kf)
        self.keyframe_log.append((scan.timestamp, pose))

    def _refresh_current_tracks(self, detections, pose) -> dict:
        """Re-derive the current scan's mature track positions (scan frame)
        after the tracker state changed."""
        centers_sensor = np.array([d.center for d in detections],
                                  dtype=float).reshape(-1, 2)
        centers_odom = transform_points(pose, centers_sensor)
        assignments = self.tracker.assign(centers_odom)
        mature_ids = set(self.tracker.mature_tracks())
        current = {}
        for di, tj in assignments:
            track = self.tracker.tracks[tj]
            if track.track_id in mature_ids:
                current[track.track_id] = centers_sensor[di]
        return current

    def _covariance(self, result: MatchResult, inflated: bool = False) -> np.ndarray:
        A = -result.hessian
        try:
            cov = np.linalg.pinv(A, rcond=1e-9, hermitian=True)
        except np.linalg.LinAlgError:
            cov = np.eye(3)
        if inflated:
            cov = cov * self.config.covariance_inflation
        return cov

    def _log_tracks(self, timestamp: float):
        for t in self.tracker.tracks:
            self.track_log.append((timestamp, t.track_id, float(t.position[0]),
                                   float(t.position[1]), t.observations, t.missed))


# -- trajectory file format --------------------------------------------------

def write_trajectory(path, outputs) -> None:
    """One line per scan: timestamp x y theta is_keyframe match_ok."""
    with open(path, "w") as f:
        for out in outputs:
            f.write(" ".join([repr(out.timestamp), repr(out.pose.x),
                              repr(out.pose.y), repr(out.pose.theta),
                              str(int(out.is_keyframe)), str(int(out.match_ok))]))
            f.write("\n")


def read_trajectory(path):
    """Read (timestamp, Pose2D) pairs; tolerates files without the flag
    columns (ground-truth files)."""
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 4:
                raise ValueError(f"{path}:{lineno}: expected at least 4 columns")
            t, x, y, th = (float(v) for v in parts[:4])
            rows.append((t, Pose2D(x, y, th)))
    return rows


def write_ground_truth(path, poses, frequency: float) -> None:
    dt = 1.0 / frequency
    with open(path, "w") as f:
        for k, pose in enumerate(poses):
            f.write(" ".join([repr(k * dt), repr(pose.x), repr(pose.y),
                              repr(pose.theta)]))
            f.write("\n")


def write_track_log(path, track_log) -> None:
    with open(path, "w") as f:
        for t, tid, x, y, obs, missed in track_log:
            f.write(f"{t!r} {tid} {x!r} {y!r} {obs} {missed}\n")
