"""Reflector-marker-aided 2D lidar odometry toolkit."""

__version__ = "0.1.0"

from .geometry import Pose2D, compose, inverse, transform_points
from .scan import LaserScan, LidarSpec, SENSOR_PRESETS, get_sensor

__all__ = [
    "Pose2D", "compose", "inverse", "transform_points",
    "LaserScan", "LidarSpec", "SENSOR_PRESETS", "get_sensor",
    "__version__",
]
