"""Analysis toolkit for gaze-coded, geo-located pedestrian trajectories of smartphone users."""

from gazewalk.observation import (
    GazeClass,
    GazeCode,
    GazeSample,
    ObservationArea,
    ParseError,
    Posture,
    TrajectoryRecord,
    filter_eligible,
    parse_records,
    path_length,
)

__version__ = "0.1.0"

__all__ = [
    "GazeClass",
    "GazeCode",
    "GazeSample",
    "ObservationArea",
    "ParseError",
    "Posture",
    "TrajectoryRecord",
    "filter_eligible",
    "parse_records",
    "path_length",
    "__version__",
]
