"""Coded-observation data model: gaze codes, trajectory records, observation areas.

Records are per-second (1 Hz) observations of one smartphone user. Each second
carries a planar position in meters and one of 24 gaze codes; the code also
encodes whether the person was walking or stationary during that second.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable, Iterator, Sequence

import numpy as np
from shapely.geometry import LineString, Point, Polygon, mapping, shape

logger = logging.getLogger(__name__)

#: Consecutive samples further apart than this (meters, at 1 Hz) are flagged.
MAX_STEP_M = 3.0


class GazeClass(str, Enum):
    ENV = "ENV"
    ENV_THROUGH_SCREEN = "ENV_THROUGH_SCREEN"
    SCREEN = "SCREEN"

    @property
    def screen_based(self) -> bool:
        return self is not GazeClass.ENV


class Posture(str, Enum):
    WALKING = "walking"
    STATIONARY = "stationary"


_WALKING = {1, 2, 3, 4, 5, 6, 12, 13, 14, 19, 20, 21}
_WANDERING = {2, 3, 4, 8, 9, 10}

_DESCRIPTIONS = {
    1: "gaze on the destination or a companion",
    2: "showing directions",
    3: "wandering gaze",
    4: "photo and video hunting",
    5: "speaking on the phone",
    6: "speaking on the phone holding it in front of the face",
    7: "gaze on a companion or an object",
    8: "showing directions",
    9: "wandering gaze",
    10: "photo and video hunting",
    11: "speaking on the phone",
    12: "recording video",
    13: "taking photo",
    14: "taking selfie",
    15: "recording video",
    16: "taking photo",
    17: "taking selfie",
    18: "posing for a photo",
    19: "gaze on the screen",
    20: "sharing own screen",
    21: "speaking on a video call",
    22: "gaze on the screen",
    23: "sharing own screen",
    24: "sharing someone's screen",
}


class GazeCode(str, Enum):
    """One coded second. C1-C11 environment, C12-C18 through the screen, C19-C24 screen."""

    C1 = "C1"
    C2 = "C2"
    C3 = "C3"
    C4 = "C4"
    C5 = "C5"
    C6 = "C6"
    C7 = "C7"
    C8 = "C8"
    C9 = "C9"
    C10 = "C10"
    C11 = "C11"
    C12 = "C12"
    C13 = "C13"
    C14 = "C14"
    C15 = "C15"
    C16 = "C16"
    C17 = "C17"
    C18 = "C18"
    C19 = "C19"
    C20 = "C20"
    C21 = "C21"
    C22 = "C22"
    C23 = "C23"
    C24 = "C24"

    @property
    def number(self) -> int:
        return int(self.value[1:])

    @property
    def gaze_class(self) -> GazeClass:
        n = self.number
        if n <= 11:
            return GazeClass.ENV
        if n <= 18:
            return GazeClass.ENV_THROUGH_SCREEN
        return GazeClass.SCREEN

    @property
    def posture(self) -> Posture:
        return Posture.WALKING if self.number in _WALKING else Posture.STATIONARY

    @property
    def is_walking(self) -> bool:
        return self.number in _WALKING

    @property
    def is_wandering(self) -> bool:
        return self.number in _WANDERING

    @property
    def description(self) -> str:
        return _DESCRIPTIONS[self.number]

    @classmethod
    def parse(cls, text: str) -> "GazeCode":
        try:
            return cls(text.strip().upper())
        except ValueError:
            raise ValueError(f"unknown gaze code {text!r}") from None


def codes_for(gaze_class: GazeClass, posture: Posture) -> list[GazeCode]:
    return [c for c in GazeCode if c.gaze_class is gaze_class and c.posture is posture]


GENDERS = ("female", "male", "unknown")
AGE_GROUPS = ("teenager", "young_adult", "adult", "elderly", "unknown")
ACTIVITIES = (
    "holding",
    "checking",
    "listening",
    "speaking",
    "reading",
    "typing",
    "navigating",
    "photo_taking",
    "video_recording",
)


@dataclass(frozen=True)
class GazeSample:
    t: int
    x: float
    y: float
    code: GazeCode


@dataclass(frozen=True)
class TrajectoryRecord:
    """One smartphone user observed between entry and exit gates."""

    id: str
    gender: str
    age_group: str
    companions: int
    activities: frozenset[str]
    entry_gate: str
    exit_gate: str
    samples: tuple[GazeSample, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "activities", frozenset(self.activities))
        object.__setattr__(self, "samples", tuple(self.samples))
        if not self.samples:
            raise ValueError(f"record {self.id}: no samples")
        if self.gender not in GENDERS:
            raise ValueError(f"record {self.id}: unknown gender {self.gender!r}")
        if self.age_group not in AGE_GROUPS:
            raise ValueError(f"record {self.id}: unknown age group {self.age_group!r}")
        if self.companions < 0:
            raise ValueError(f"record {self.id}: companions must be non-negative")
        if not 1 <= len(self.activities) <= 2:
            raise ValueError(f"record {self.id}: expected 1 or 2 activities, got {len(self.activities)}")
        unknown = self.activities - set(ACTIVITIES)
        if unknown:
            raise ValueError(f"record {self.id}: unknown activities {sorted(unknown)}")
        for i, s in enumerate(self.samples):
            if s.t != i:
                raise ValueError(f"record {self.id}: timestamps must be consecutive from 0, got t={s.t} at index {i}")

    @property
    def duration(self) -> int:
        """Coded duration in seconds."""
        return len(self.samples)

    def positions(self) -> np.ndarray:
        return np.array([(s.x, s.y) for s in self.samples], dtype=float)

    def codes(self) -> list[GazeCode]:
        return [s.code for s in self.samples]

    def walking_mask(self) -> np.ndarray:
        return np.array([s.code.is_walking for s in self.samples], dtype=bool)


def path_length(record: TrajectoryRecord) -> float:
    """Sum of straight-line distances between consecutive samples, in meters."""
    p = record.positions()
    if len(p) < 2:
        return 0.0
    return float(np.hypot(*np.diff(p, axis=0).T).sum())


def large_steps(record: TrajectoryRecord, limit: float = MAX_STEP_M) -> list[int]:
    """Indices i where the step from sample i to i+1 exceeds ``limit`` meters."""
    p = record.positions()
    if len(p) < 2:
        return []
    steps = np.hypot(*np.diff(p, axis=0).T)
    return [int(i) for i in np.flatnonzero(steps > limit)]


# --------------------------------------------------------------------------- parsing


class ParseError(ValueError):
    def __init__(self, message: str, record_id: str | None = None, line: int | None = None):
        self.record_id = record_id
        self.line = line
        where = []
        if record_id is not None:
            where.append(f"record {record_id}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


SAMPLE_COLUMNS = ("record_id", "t", "x_m", "y_m", "code")
METADATA_COLUMNS = ("record_id", "gender", "age_group", "companions", "activities", "entry_gate", "exit_gate")


def _text(stream: str | bytes | IO | None) -> str:
    if stream is None:
        return ""
    if isinstance(stream, bytes):
        return stream.decode("utf-8")
    if isinstance(stream, str):
        return stream
    data = stream.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def _parse_t(raw: str, record_id: str, line: int) -> int:
    try:
        value = float(raw)
    except ValueError:
        raise ParseError(f"timestamp {raw!r} is not a number", record_id, line) from None
    if not value.is_integer():
        raise ParseError(f"timestamp {raw!r} is not an integer second (1 Hz input only)", record_id, line)
    return int(value)


def _parse_float(raw: str, name: str, record_id: str, line: int) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ParseError(f"{name} {raw!r} is not a number", record_id, line) from None
    if not math.isfinite(value):
        raise ParseError(f"{name} must be finite", record_id, line)
    return value


def _parse_code(raw: str, record_id: str, line: int) -> GazeCode:
    try:
        return GazeCode.parse(raw)
    except ValueError:
        raise ParseError(f"unknown gaze code {raw!r}", record_id, line) from None


def _build(meta: dict, samples: list[GazeSample], record_id: str, line: int | None) -> TrajectoryRecord:
    try:
        companions = int(meta["companions"])
    except (TypeError, ValueError):
        raise ParseError(f"companions {meta['companions']!r} is not an integer", record_id, line) from None
    try:
        rec = TrajectoryRecord(
            id=record_id,
            gender=str(meta["gender"]).strip().lower(),
            age_group=str(meta["age_group"]).strip().lower(),
            companions=companions,
            activities=frozenset(meta["activities"]),
            entry_gate=str(meta["entry_gate"]),
            exit_gate=str(meta["exit_gate"]),
            samples=tuple(samples),
        )
    except ValueError as exc:
        raise ParseError(str(exc).split(": ", 1)[-1], record_id, line) from None
    steps = large_steps(rec)
    if steps:
        logger.warning("record %s: %d step(s) longer than %.1f m (first at t=%d)", record_id, len(steps), MAX_STEP_M, steps[0])
    return rec


def _check_columns(header: Sequence[str] | None, required: Sequence[str], what: str) -> None:
    missing = [c for c in required if c not in (header or ())]
    if missing:
        raise ParseError(f"{what}: missing required column(s) {', '.join(missing)}", line=1)


def read_csv(samples: str | bytes | IO, metadata: str | bytes | IO | None) -> list[TrajectoryRecord]:
    """Read the two-file CSV layout (per-sample rows plus per-record metadata rows)."""
    sample_text = _text(samples)
    meta_text = _text(metadata)
    if not sample_text.strip() and not meta_text.strip():
        return []

    meta_rows: dict[str, tuple[dict, int]] = {}
    order: list[str] = []
    reader = csv.DictReader(io.StringIO(meta_text))
    if meta_text.strip():
        _check_columns(reader.fieldnames, METADATA_COLUMNS, "metadata")
    for row in reader:
        line = reader.line_num
        rid = (row.get("record_id") or "").strip()
        if not rid:
            raise ParseError("missing required field record_id", line=line)
        for col in METADATA_COLUMNS:
            if row.get(col) is None or row[col].strip() == "":
                raise ParseError(f"missing required field {col}", rid, line)
        if rid in meta_rows:
            raise ParseError("duplicate metadata row", rid, line)
        acts = [a.strip() for a in row["activities"].split(";") if a.strip()]
        meta_rows[rid] = ({**row, "activities": acts}, line)
        order.append(rid)

    per_record: dict[str, list[GazeSample]] = {}
    first_line: dict[str, int] = {}
    reader = csv.DictReader(io.StringIO(sample_text))
    if sample_text.strip():
        _check_columns(reader.fieldnames, SAMPLE_COLUMNS, "samples")
    for row in reader:
        line = reader.line_num
        rid = (row.get("record_id") or "").strip()
        if not rid:
            raise ParseError("missing required field record_id", line=line)
        for col in SAMPLE_COLUMNS:
            if row.get(col) is None or row[col].strip() == "":
                raise ParseError(f"missing required field {col}", rid, line)
        if rid not in meta_rows:
            raise ParseError("samples without a metadata row", rid, line)
        t = _parse_t(row["t"], rid, line)
        x = _parse_float(row["x_m"], "x_m", rid, line)
        y = _parse_float(row["y_m"], "y_m", rid, line)
        code = _parse_code(row["code"], rid, line)
        bucket = per_record.setdefault(rid, [])
        first_line.setdefault(rid, line)
        if t != len(bucket):
            raise ParseError(f"non-consecutive timestamps: expected t={len(bucket)}, got t={t}", rid, line)
        bucket.append(GazeSample(t, x, y, code))

    records = []
    for rid in order:
        meta, line = meta_rows[rid]
        if rid not in per_record:
            raise ParseError("record has no samples", rid, line)
        records.append(_build(meta, per_record[rid], rid, line))
    return records


def read_jsonl(stream: str | bytes | IO) -> list[TrajectoryRecord]:
    records = []
    seen: set[str] = set()
    for line_no, line in enumerate(_text(stream).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=line_no) from None
        rid = obj.get("id")
        if rid is None:
            raise ParseError("missing required field id", line=line_no)
        rid = str(rid)
        for key in ("gender", "age_group", "companions", "activities", "entry_gate", "exit_gate", "samples"):
            if key not in obj:
                raise ParseError(f"missing required field {key}", rid, line_no)
        if rid in seen:
            raise ParseError("duplicate record id", rid, line_no)
        seen.add(rid)
        samples = []
        for i, s in enumerate(obj["samples"]):
            for key in ("t", "x", "y", "code"):
                if key not in s:
                    raise ParseError(f"sample {i}: missing required field {key}", rid, line_no)
            t = _parse_t(str(s["t"]), rid, line_no)
            if t != i:
                raise ParseError(f"non-consecutive timestamps: expected t={i}, got t={t}", rid, line_no)
            samples.append(
                GazeSample(
                    t,
                    _parse_float(str(s["x"]), "x", rid, line_no),
                    _parse_float(str(s["y"]), "y", rid, line_no),
                    _parse_code(str(s["code"]), rid, line_no),
                )
            )
        if not samples:
            raise ParseError("record has no samples", rid, line_no)
        records.append(_build(obj, samples, rid, line_no))
    return records


def parse_records(
    stream: str | bytes | IO,
    format: str = "json_lines",
    metadata: str | bytes | IO | None = None,
) -> list[TrajectoryRecord]:
    """Parse records; any error aborts the whole file.

    ``format`` is ``"csv"`` (``stream`` holds samples, ``metadata`` the
    per-record sidecar) or ``"json_lines"`` (one record object per line).
    """
    if format == "csv":
        return read_csv(stream, metadata)
    if format in ("json_lines", "jsonl"):
        return read_jsonl(stream)
    raise ValueError(f"unsupported format {format!r}")


def record_to_dict(rec: TrajectoryRecord) -> dict:
    return {
        "id": rec.id,
        "gender": rec.gender,
        "age_group": rec.age_group,
        "companions": rec.companions,
        "activities": sorted(rec.activities),
        "entry_gate": rec.entry_gate,
        "exit_gate": rec.exit_gate,
        "samples": [{"t": s.t, "x": s.x, "y": s.y, "code": s.code.value} for s in rec.samples],
    }


def dumps_jsonl(records: Iterable[TrajectoryRecord]) -> str:
    return "".join(json.dumps(record_to_dict(r), separators=(",", ":")) + "\n" for r in records)


def dumps_csv(records: Iterable[TrajectoryRecord]) -> tuple[str, str]:
    """Return ``(samples_csv, metadata_csv)`` text."""
    samples = io.StringIO()
    meta = io.StringIO()
    sw = csv.writer(samples, lineterminator="\n")
    mw = csv.writer(meta, lineterminator="\n")
    sw.writerow(SAMPLE_COLUMNS)
    mw.writerow(METADATA_COLUMNS)
    for r in records:
        mw.writerow(
            [r.id, r.gender, r.age_group, r.companions, ";".join(sorted(r.activities)), r.entry_gate, r.exit_gate]
        )
        for s in r.samples:
            sw.writerow([r.id, s.t, repr(s.x), repr(s.y), s.code.value])
    return samples.getvalue(), meta.getvalue()


# --------------------------------------------------------------------------- eligibility


@dataclass(frozen=True)
class Exclusion:
    record: TrajectoryRecord
    reason: str  # "short_path" | "runner" | "no_walking_phase"


def filter_eligible(
    records: Iterable[TrajectoryRecord],
    min_path: float = 20.0,
    runner_speed: float = 2.5,
) -> tuple[list[TrajectoryRecord], list[Exclusion]]:
    """Split records into eligible ones and exclusions with a reason tag.

    A path of exactly ``min_path`` meters is kept; a walking speed of exactly
    ``runner_speed`` is excluded.
    """
    from gazewalk.features import NoWalkingPhase, walking_speed

    eligible, excluded = [], []
    for rec in records:
        if path_length(rec) < min_path:
            excluded.append(Exclusion(rec, "short_path"))
            continue
        try:
            speed = walking_speed(rec)
        except NoWalkingPhase:
            excluded.append(Exclusion(rec, "no_walking_phase"))
            continue
        if speed >= runner_speed:
            excluded.append(Exclusion(rec, "runner"))
        else:
            eligible.append(rec)
    return eligible, excluded


# --------------------------------------------------------------------------- area


@dataclass(frozen=True)
class Corridor:
    name: str
    polygon: Polygon
    gates: tuple[str, str]


@dataclass(frozen=True)
class ObservationArea:
    """Observation area in a local planar frame (meters)."""

    boundary: Polygon
    gates: dict[str, LineString]
    landmarks: tuple[Polygon, ...] = ()
    obstacles: tuple[Polygon, ...] = ()
    corridors: tuple[Corridor, ...] = ()
    grid_origin: tuple[float, float] | None = None
    grid_cell: float = 0.5
    gate_tolerance: float = field(default=1e-6, repr=False)

    def __post_init__(self) -> None:
        if self.grid_cell <= 0:
            raise ValueError("grid_cell must be positive")
        if not self.boundary.is_valid or self.boundary.area <= 0:
            raise ValueError("boundary must be a valid, non-empty polygon")
        ring = self.boundary.exterior
        near_ring = self.boundary.exterior.buffer(self.gate_tolerance)
        for name, gate in self.gates.items():
            if not gate.difference(near_ring).is_empty:
                raise ValueError(f"gate {name!r} does not lie on the boundary")
        for c in self.corridors:
            for g in c.gates:
                if g not in self.gates:
                    raise ValueError(f"corridor {c.name!r} references unknown gate {g!r}")
        if self.grid_origin is None:
            minx, miny, _, _ = self.boundary.bounds
            object.__setattr__(self, "grid_origin", (minx, miny))

    def check_gates(self, record: TrajectoryRecord) -> None:
        for g in (record.entry_gate, record.exit_gate):
            if g not in self.gates:
                raise ValueError(f"record {record.id}: gate {g!r} is not declared in the observation area")

    def grid_shape(self, cell: float | None = None) -> tuple[int, int]:
        """(ncols, nrows) covering the boundary's bounding box from ``grid_origin``."""
        cell = cell or self.grid_cell
        ox, oy = self.grid_origin
        _, _, maxx, maxy = self.boundary.bounds
        return max(1, math.ceil((maxx - ox) / cell - 1e-9)), max(1, math.ceil((maxy - oy) / cell - 1e-9))

    def to_geojson(self) -> dict:
        feats = [
            {
                "type": "Feature",
                "properties": {"role": "boundary", "grid_origin": list(self.grid_origin), "grid_cell": self.grid_cell},
                "geometry": mapping(self.boundary),
            }
        ]
        for name, g in self.gates.items():
            feats.append({"type": "Feature", "properties": {"role": "gate", "name": name}, "geometry": mapping(g)})
        for i, p in enumerate(self.landmarks):
            feats.append({"type": "Feature", "properties": {"role": "landmark", "name": f"landmark{i}"}, "geometry": mapping(p)})
        for i, p in enumerate(self.obstacles):
            feats.append({"type": "Feature", "properties": {"role": "obstacle", "name": f"obstacle{i}"}, "geometry": mapping(p)})
        for c in self.corridors:
            feats.append(
                {
                    "type": "Feature",
                    "properties": {"role": "corridor", "name": c.name, "gates": list(c.gates)},
                    "geometry": mapping(c.polygon),
                }
            )
        return {"type": "FeatureCollection", "features": json.loads(json.dumps(feats))}

    @classmethod
    def from_geojson(cls, doc: dict | str) -> "ObservationArea":
        if isinstance(doc, str):
            doc = json.loads(doc)
        if doc.get("type") != "FeatureCollection":
            raise ValueError("observation area must be a GeoJSON FeatureCollection")
        boundary = None
        gates: dict[str, LineString] = {}
        landmarks, obstacles, corridors = [], [], []
        origin, cell = None, 0.5
        for i, feat in enumerate(doc.get("features", [])):
            props = feat.get("properties") or {}
            role = props.get("role")
            geom = shape(feat["geometry"])
            if role == "boundary":
                if boundary is not None:
                    raise ValueError("more than one boundary feature")
                boundary = geom
                if props.get("grid_origin") is not None:
                    origin = tuple(float(v) for v in props["grid_origin"])
                cell = float(props.get("grid_cell", cell))
            elif role == "gate":
                name = props.get("name") or f"gate{i}"
                gates[str(name)] = geom
            elif role == "landmark":
                landmarks.append(geom)
            elif role == "obstacle":
                obstacles.append(geom)
            elif role == "corridor":
                g = props.get("gates") or []
                if len(g) != 2:
                    raise ValueError("corridor features need a two-element 'gates' property")
                corridors.append(Corridor(str(props.get("name", f"corridor{i}")), geom, (str(g[0]), str(g[1]))))
            else:
                raise ValueError(f"feature {i}: unknown role {role!r}")
        if boundary is None:
            raise ValueError("observation area has no boundary feature")
        return cls(boundary, gates, tuple(landmarks), tuple(obstacles), tuple(corridors), origin, cell)


def iter_samples(records: Iterable[TrajectoryRecord]) -> Iterator[tuple[TrajectoryRecord, GazeSample]]:
    for r in records:
        for s in r.samples:
            yield r, s
