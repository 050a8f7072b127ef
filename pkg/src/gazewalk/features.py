"""Per-record analysis variables: gaze shares by posture, wandering shares, speed, stops."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields
from typing import IO, Iterable

import numpy as np

from gazewalk.observation import GazeClass, Posture, TrajectoryRecord, path_length

ACTIVITY_GROUPS = {
    "listening": "G1",
    "speaking": "G1",
    "reading": "G2",
    "typing": "G2",
    "photo_taking": "G3",
    "video_recording": "G3",
    "navigating": "G3",
    "holding": "G4",
    "checking": "G4",
}

GROUP_NAMES = {
    "G1": "listening/speaking",
    "G2": "typing/reading",
    "G3": "photo/video/navigating",
    "G4": "holding/checking",
}


class NoWalkingPhase(ValueError):
    """Raised when a speed is requested for a record without walking seconds."""

    def __init__(self, record_id: str):
        self.record_id = record_id
        super().__init__(f"no_walking_phase: record {record_id} has no walking seconds")


@dataclass(frozen=True)
class GazeFractions:
    walking: dict[GazeClass, float] | None
    stationary: dict[GazeClass, float] | None

    @staticmethod
    def screen_based(shares: dict[GazeClass, float] | None) -> float | None:
        if shares is None:
            return None
        return shares[GazeClass.ENV_THROUGH_SCREEN] + shares[GazeClass.SCREEN]


def _class_shares(codes) -> dict[GazeClass, float] | None:
    if not codes:
        return None
    n = len(codes)
    counts = {c: 0 for c in GazeClass}
    for code in codes:
        counts[code.gaze_class] += 1
    return {c: counts[c] / n for c in GazeClass}


def gaze_fractions(record: TrajectoryRecord) -> GazeFractions:
    """Share of each gaze class over walking seconds and over stationary seconds.

    A posture with no seconds yields ``None`` rather than zeros.
    """
    codes = record.codes()
    walking = [c for c in codes if c.is_walking]
    stationary = [c for c in codes if not c.is_walking]
    return GazeFractions(_class_shares(walking), _class_shares(stationary))


def wandering_fraction(record: TrajectoryRecord, posture: Posture | str) -> float | None:
    """Share of the posture's seconds spent on wandering codes; ``None`` if the posture never occurs."""
    posture = Posture(posture)
    codes = [c for c in record.codes() if c.posture is posture]
    if not codes:
        return None
    return sum(c.is_wandering for c in codes) / len(codes)


def walking_speed(record: TrajectoryRecord, mode: str = "net") -> float:
    """Walking speed in m/s.

    ``net``: distance covered during walking-coded seconds divided by the
    number of walking seconds. The step from sample i to i+1 belongs to
    second i, so it counts only when sample i carries a walking code.
    ``gross``: total path length over total coded time.
    """
    walk = record.walking_mask()
    n_walk = int(walk.sum())
    if n_walk == 0:
        raise NoWalkingPhase(record.id)
    if mode == "gross":
        return path_length(record) / record.duration
    if mode != "net":
        raise ValueError(f"unknown speed mode {mode!r}")
    p = record.positions()
    if len(p) < 2:
        return 0.0
    steps = np.hypot(*np.diff(p, axis=0).T)
    return float(steps[walk[:-1]].sum() / n_walk)


@dataclass(frozen=True)
class StopEpisode:
    start_t: int
    end_t: int
    centroid: tuple[float, float]
    screen_seconds: int
    wander_seconds: int

    @property
    def duration(self) -> int:
        return self.end_t - self.start_t + 1


def detect_stops(record: TrajectoryRecord) -> list[StopEpisode]:
    """Maximal runs of consecutive stationary-coded seconds."""
    episodes = []
    run: list = []
    for s in record.samples + (None,):
        if s is not None and not s.code.is_walking:
            run.append(s)
            continue
        if run:
            episodes.append(
                StopEpisode(
                    start_t=run[0].t,
                    end_t=run[-1].t,
                    centroid=(float(np.mean([r.x for r in run])), float(np.mean([r.y for r in run]))),
                    screen_seconds=sum(r.code.gaze_class.screen_based for r in run),
                    wander_seconds=sum(r.code.is_wandering for r in run),
                )
            )
            run = []
    return episodes


def activity_groups(activities: Iterable[str]) -> frozenset[str]:
    return frozenset(ACTIVITY_GROUPS[a] for a in activities)


@dataclass(frozen=True)
class FeatureVector:
    record_id: str
    pct_screen_walk: float | None
    pct_wander_walk: float | None
    pct_screen_stat: float | None
    pct_wander_stat: float | None
    walking_speed: float | None
    gross_speed: float
    walk_seconds: int
    stat_seconds: int
    n_stops: int
    total_stop_duration: int
    activity_groups: frozenset[str]

    def get(self, name: str) -> float | None:
        return getattr(self, name)


def extract_features(record: TrajectoryRecord) -> FeatureVector:
    fr = gaze_fractions(record)
    stops = detect_stops(record)
    walk = record.walking_mask()
    try:
        speed = walking_speed(record)
    except NoWalkingPhase:
        speed = None
    return FeatureVector(
        record_id=record.id,
        pct_screen_walk=GazeFractions.screen_based(fr.walking),
        pct_wander_walk=wandering_fraction(record, Posture.WALKING),
        pct_screen_stat=GazeFractions.screen_based(fr.stationary),
        pct_wander_stat=wandering_fraction(record, Posture.STATIONARY),
        walking_speed=speed,
        gross_speed=path_length(record) / record.duration,
        walk_seconds=int(walk.sum()),
        stat_seconds=int((~walk).sum()),
        n_stops=len(stops),
        total_stop_duration=sum(e.duration for e in stops),
        activity_groups=activity_groups(record.activities),
    )


FEATURE_COLUMNS = tuple(f.name for f in fields(FeatureVector))
_INT_COLUMNS = {"walk_seconds", "stat_seconds", "n_stops", "total_stop_duration"}


def write_feature_table(vectors: Iterable[FeatureVector], out: IO[str] | None = None) -> str:
    """CSV with one row per record; missing values become empty cells."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FEATURE_COLUMNS)
    for v in vectors:
        row = []
        for name, value in asdict(v).items():
            if value is None:
                row.append("")
            elif name == "activity_groups":
                row.append(";".join(sorted(value)))
            else:
                row.append(repr(value) if isinstance(value, float) else str(value))
        w.writerow(row)
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


def read_feature_table(source: str | IO[str]) -> list[FeatureVector]:
    text = source if isinstance(source, str) else source.read()
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in FEATURE_COLUMNS if c not in (reader.fieldnames or ())]
    if missing:
        raise ValueError(f"feature table missing columns: {', '.join(missing)}")
    out = []
    for row in reader:
        kw: dict = {}
        for name in FEATURE_COLUMNS:
            raw = row[name]
            if name == "record_id":
                kw[name] = raw
            elif name == "activity_groups":
                kw[name] = frozenset(g for g in raw.split(";") if g)
            elif name in _INT_COLUMNS:
                kw[name] = int(raw)
            else:
                kw[name] = float(raw) if raw != "" else None
        out.append(FeatureVector(**kw))
    return out


def corpus_gaze_shares(records: Iterable[TrajectoryRecord]) -> dict[str, float]:
    """Pooled second-weighted shares of environment vs. screen-based gaze over all records."""
    total = env = walk_total = walk_env = stat_total = stat_screen = 0
    for r in records:
        for c in r.codes():
            total += 1
            is_env = c.gaze_class is GazeClass.ENV
            env += is_env
            if c.is_walking:
                walk_total += 1
                walk_env += is_env
            else:
                stat_total += 1
                stat_screen += not is_env
    nan = math.nan
    return {
        "env": env / total if total else nan,
        "screen_based": 1 - env / total if total else nan,
        "walking_screen_based": 1 - walk_env / walk_total if walk_total else nan,
        "stationary_screen_based": stat_screen / stat_total if stat_total else nan,
    }
