import math

import numpy as np
import pytest

from refodom.evaluation import compute_ate
from refodom.geometry import Pose2D
from refodom.odometry import (KeyframeCriteria, Odometry, OdometryConfig,
                              read_trajectory, write_ground_truth,
                              write_trajectory)
from refodom.scan import get_sensor
from refodom.simulator import (SimConfig, builtin_trajectory, builtin_worlds,
                               simulate_scan, simulate_trajectory)


def room_scans(x1=6.0, seed=0, mode_sensor="lms151", noise=0.005):
    world = builtin_worlds()["room"]
    wps = [Pose2D(2.0, 5.0, 0.0), Pose2D(x1, 5.0, 0.0)]
    cfg = SimConfig(spec=get_sensor(mode_sensor), seed=seed,
                    range_noise_sigma=noise)
    return simulate_trajectory(world, wps, 2.0, cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        OdometryConfig(mode="magic")
    with pytest.raises(ValueError):
        OdometryConfig(n_keyframes=0)
    with pytest.raises(ValueError):
        OdometryConfig(match_stride=0)
    with pytest.raises(ValueError):
        KeyframeCriteria(min_overlap=0.0)


def test_config_dict_roundtrip():
    cfg = OdometryConfig(mode="layer", n_keyframes=4, match_stride=3)
    back = OdometryConfig.from_dict(cfg.to_dict())
    assert back == cfg


def test_bootstrap_first_scan_is_keyframe():
    scans, _ = room_scans(x1=2.4)
    odo = Odometry(OdometryConfig())
    out = odo.process_scan(scans[0])
    assert out.is_keyframe
    assert out.match_ok
    assert out.pose == Pose2D()


def test_out_of_order_scan_rejected():
    scans, _ = room_scans(x1=2.4)
    odo = Odometry(OdometryConfig())
    odo.process_scan(scans[1])
    with pytest.raises(ValueError):
        odo.process_scan(scans[0])


def test_stationary_sequence_stays_put():
    world = builtin_worlds()["room"]
    cfg = SimConfig(spec=get_sensor("lms151"), seed=1)
    rng = np.random.default_rng(1)
    pose = Pose2D(5.0, 5.0, 0.3)
    scans = [simulate_scan(world, pose, cfg, rng=rng, timestamp=0.02 * k)
             for k in range(20)]
    odo = Odometry(OdometryConfig())
    outputs, _ = odo.run(scans)
    for out in outputs:
        assert math.hypot(out.pose.x, out.pose.y) < 0.02
        assert abs(out.pose.theta) < 0.01


def test_keyframe_buffer_bounded():
    scans, _ = room_scans(x1=10.0)
    odo = Odometry(OdometryConfig(n_keyframes=3))
    odo.run(scans)
    assert len(odo.local_map) <= 3
    assert len(odo.keyframe_log) > 3  # more promoted than retained


def test_layer_mode_without_markers_equals_plain_exactly():
    # In a markerless world the detector returns nothing, every point is
    # regular, the marker layer is empty: layer mode must equal plain mode
    # output for output.
    scans, _ = room_scans(x1=5.0)
    plain = Odometry(OdometryConfig(mode="plain"))
    layer = Odometry(OdometryConfig(mode="layer"))
    out_p, kf_p = plain.run(scans)
    out_l, kf_l = layer.run(scans)
    assert len(out_p) == len(out_l)
    for a, b in zip(out_p, out_l):
        assert a.pose == b.pose
        assert a.is_keyframe == b.is_keyframe
    assert kf_p == kf_l


def test_room_short_traverse_accuracy():
    scans, poses = room_scans(x1=8.0)
    odo = Odometry(OdometryConfig(match_stride=2))
    outputs, _ = odo.run(scans)
    est = [(o.timestamp, o.pose) for o in outputs]
    ref = [(k * 0.02, p) for k, p in enumerate(poses)]
    report = compute_ate(est, ref)
    assert report.rmse < 0.05
    assert report.max_error < 0.15


def test_tracking_mode_builds_tracks():
    world = builtin_worlds()["corridor_marked"]
    wps = [Pose2D(0.0, 1.5, 0.0), Pose2D(2.0, 1.5, 0.0)]
    cfg = SimConfig(spec=get_sensor("r2000"), seed=0)
    scans, _ = simulate_trajectory(world, wps, 2.0, cfg)
    odo = Odometry(OdometryConfig(mode="tracking", match_stride=8))
    odo.run(scans[:30])
    assert odo.tracker.mature_tracks(), "expected mature tracks near markers"
    assert odo.track_log


def test_covariance_inflated_on_failure():
    scans, _ = room_scans(x1=2.4)
    odo = Odometry(OdometryConfig())
    out0 = odo.process_scan(scans[0])
    assert np.all(np.isfinite(out0.covariance_hint))


def test_trajectory_file_roundtrip(tmp_path):
    scans, _ = room_scans(x1=3.0)
    odo = Odometry(OdometryConfig())
    outputs, _ = odo.run(scans[:10])
    path = tmp_path / "traj.txt"
    write_trajectory(path, outputs)
    back = read_trajectory(path)
    assert len(back) == 10
    for out, (t, pose) in zip(outputs, back):
        assert t == out.timestamp      # repr round-trip is exact
        assert pose == out.pose


def test_ground_truth_file(tmp_path):
    poses = [Pose2D(0.1 * k, 0, 0) for k in range(5)]
    path = tmp_path / "gt.txt"
    write_ground_truth(path, poses, 50.0)
    back = read_trajectory(path)
    assert back[2][0] == pytest.approx(0.04)
    assert back[4][1] == poses[4]


def test_read_trajectory_malformed(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("0.0 1.0\n")
    with pytest.raises(ValueError) as exc:
        read_trajectory(path)
    assert ":1:" in str(exc.value)
