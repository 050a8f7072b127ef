"""Seeded synthetic corpora of gaze-coded trajectories built from figure archetypes.

Every record gets its own generator derived from ``SeedSequence(seed,
spawn_key=(archetype_index, record_index))`` so a corpus is reproducible bit
for bit and records can be generated in any order.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from statistics import NormalDist
from typing import Mapping, Sequence

import numpy as np
import yaml
from shapely.geometry import LineString, Point

from gazewalk.features import ACTIVITY_GROUPS
from gazewalk.figures import FigureLabel
from gazewalk.observation import (
    AGE_GROUPS,
    GazeCode,
    GazeSample,
    ObservationArea,
    TrajectoryRecord,
)

PATH_STYLES = ("linear_flow", "organic_wander")
MIN_SPEED, MAX_SPEED = 0.3, 2.2
MAX_STOP_SECONDS = 114

# code choices per (posture, category); one code is drawn per run
_CODE_TABLE = {
    ("walk", "screen"): ((19, 20, 21, 12, 13, 14), (0.80, 0.03, 0.02, 0.06, 0.06, 0.03)),
    ("walk", "wander"): ((3, 4, 2), (0.75, 0.15, 0.10)),
    ("walk", "other"): ((1, 5, 6), (0.85, 0.10, 0.05)),
    ("stat", "screen"): ((22, 23, 24, 15, 16, 17, 18), (0.75, 0.04, 0.03, 0.06, 0.07, 0.03, 0.02)),
    ("stat", "wander"): ((9, 10, 8), (0.75, 0.15, 0.10)),
    ("stat", "other"): ((7, 11), (0.85, 0.15)),
}


class InfeasibleGeometry(ValueError):
    pass


@dataclass(frozen=True)
class Archetype:
    """Target behaviour of one figure. Gaze shares are fractions in [0, 1]."""

    name: FigureLabel
    count: int
    screen_walk: float
    wander_walk: float
    screen_stat: float | None = None
    wander_stat: float | None = None
    fraction_sd: float = 0.08
    speed: float = 1.1
    speed_sd: float = 0.27
    stops: tuple[int, int] = (0, 0)
    stop_seconds: tuple[int, int] = (20, 90)
    path_style: str = "linear_flow"
    age_weights: dict[str, float] = field(default_factory=dict)
    activity_weights: dict[str, float] = field(default_factory=dict)
    id_prefix: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "name", FigureLabel(self.name))
        object.__setattr__(self, "stops", tuple(int(v) for v in self.stops))
        object.__setattr__(self, "stop_seconds", tuple(int(v) for v in self.stop_seconds))
        if not self.id_prefix:
            object.__setattr__(self, "id_prefix", self.name.value.lower())
        if self.count < 0:
            raise ValueError(f"{self.name.value}: count must be non-negative")
        for attr in ("screen_walk", "wander_walk", "screen_stat", "wander_stat"):
            v = getattr(self, attr)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{self.name.value}: {attr} must be a fraction in [0, 1], got {v}")
        if self.screen_walk + self.wander_walk > 1.0:
            raise ValueError(f"{self.name.value}: walking screen and wandering shares exceed 1")
        if self.speed <= 0 or self.speed_sd < 0 or self.fraction_sd < 0:
            raise ValueError(f"{self.name.value}: speed must be positive and SDs non-negative")
        lo, hi = self.stops
        if not 0 <= lo <= hi:
            raise ValueError(f"{self.name.value}: invalid stop-count range {self.stops}")
        if hi > 0:
            if self.screen_stat is None or self.wander_stat is None:
                raise ValueError(f"{self.name.value}: stopping archetypes need stationary gaze targets")
            if self.screen_stat + self.wander_stat > 1.0:
                raise ValueError(f"{self.name.value}: stationary screen and wandering shares exceed 1")
            a, b = self.stop_seconds
            if not 1 <= a <= b <= MAX_STOP_SECONDS:
                raise ValueError(f"{self.name.value}: stop durations must lie in [1, {MAX_STOP_SECONDS}] s")
        if self.path_style not in PATH_STYLES:
            raise ValueError(f"{self.name.value}: unknown path style {self.path_style!r}")
        bad_age = set(self.age_weights) - set(AGE_GROUPS)
        bad_group = set(self.activity_weights) - set(ACTIVITY_GROUPS.values())
        if bad_age or bad_group:
            raise ValueError(f"{self.name.value}: unknown weight keys {sorted(bad_age | bad_group)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["name"] = self.name.value
        d["stops"] = list(self.stops)
        d["stop_seconds"] = list(self.stop_seconds)
        return d


def load_archetypes(source: str | Path | Sequence[Mapping]) -> list[Archetype]:
    """Archetypes from a YAML file path, YAML text, or a list of mappings."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).exists()):
        doc = yaml.safe_load(Path(source).read_text())
    elif isinstance(source, str):
        doc = yaml.safe_load(source)
    else:
        doc = list(source)
    if isinstance(doc, Mapping):
        doc = doc.get("archetypes", [])
    archetypes = [Archetype(**entry) for entry in doc or []]
    prefixes = [a.id_prefix for a in archetypes]
    if len(set(prefixes)) != len(prefixes):
        raise ValueError("archetype id prefixes must be unique")
    return archetypes


def default_archetypes() -> list[Archetype]:
    return load_archetypes(resources.files("gazewalk").joinpath("data/archetypes.yaml").read_text())


def default_area() -> ObservationArea:
    return ObservationArea.from_geojson(resources.files("gazewalk").joinpath("data/area.geojson").read_text())


def ground_truth(record_id: str, archetypes: Sequence[Archetype]) -> FigureLabel:
    """Generating archetype of a synthetic record, recovered from its id."""
    prefix = record_id.rsplit("-", 1)[0]
    for a in archetypes:
        if a.id_prefix == prefix:
            return a.name
    raise KeyError(record_id)


# --------------------------------------------------------------------------- gaze shares


def _postprocess(screen: np.ndarray, wander: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = np.clip(screen, 0.0, 1.0)
    w = np.clip(wander, 0.0, 1.0)
    total = s + w
    scale = np.where(total > 1.0, 1.0 / np.maximum(total, 1e-12), 1.0)
    return s * scale, w * scale


@lru_cache(maxsize=256)
def calibrate(screen: float, wander: float, sd: float) -> tuple[float, float]:
    """Pre-clip normal means whose clipped, renormalised expectation hits the targets.

    Expectations use a 2-D Gauss-Hermite rule; the means are found by fixed-point
    iteration.
    """
    if sd == 0:
        return screen, wander
    nodes, weights = np.polynomial.hermite_e.hermegauss(48)
    weights = weights / weights.sum()
    za, zb = np.meshgrid(nodes, nodes, indexing="ij")
    ww = np.outer(weights, weights)
    mu = np.array([screen, wander], dtype=float)
    target = mu.copy()
    for _ in range(200):
        s, w = _postprocess(mu[0] + sd * za, mu[1] + sd * zb)
        got = np.array([(ww * s).sum(), (ww * w).sum()])
        err = target - got
        mu = np.clip(mu + err, -3.0 * sd - 1.0, 1.0 + 3.0 * sd)
        if np.abs(err).max() < 1e-10:
            break
    return float(mu[0]), float(mu[1])


def _draw_shares(rng: np.random.Generator, screen: float, wander: float, sd: float) -> tuple[float, float]:
    ms, mw = calibrate(screen, wander, sd)
    s, w = _postprocess(np.array(rng.normal(ms, sd)), np.array(rng.normal(mw, sd)))
    return float(s), float(w)


def _category_runs(rng: np.random.Generator, counts: Mapping[str, int], mean_run: float) -> list[str]:
    """Exactly ``counts`` seconds per category, arranged as shuffled multi-second runs."""
    runs = []
    p = 1.0 / mean_run
    for cat, n in counts.items():
        left = n
        while left > 0:
            length = min(left, int(rng.geometric(p)))
            runs.append((cat, length))
            left -= length
    order = rng.permutation(len(runs))
    out: list[str] = []
    for i in order:
        cat, length = runs[i]
        out.extend([cat] * length)
    return out


def _codes(rng: np.random.Generator, posture: str, n: int, screen: float, wander: float, mean_run: float) -> list[GazeCode]:
    n_screen = int(round(screen * n))
    n_wander = min(int(round(wander * n)), n - n_screen)
    cats = _category_runs(rng, {"screen": n_screen, "wander": n_wander, "other": n - n_screen - n_wander}, mean_run)
    codes = []
    prev = None
    for cat in cats:
        if cat != prev:
            options, probs = _CODE_TABLE[(posture, cat)]
            current = GazeCode.parse(f"C{rng.choice(options, p=probs)}")
            prev = cat
        codes.append(current)
    return codes


# --------------------------------------------------------------------------- geometry


def _gate_point(rng: np.random.Generator, gate: LineString) -> np.ndarray:
    p = gate.interpolate(rng.uniform(0.15, 0.85), normalized=True)
    return np.array([p.x, p.y])


def _resample(poly: np.ndarray, n: int) -> np.ndarray:
    """``n`` points equally spaced by arc length along a polyline (endpoints kept)."""
    seg = np.hypot(*np.diff(poly, axis=0).T)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, arc[-1], n)
    return np.column_stack([np.interp(targets, arc, poly[:, 0]), np.interp(targets, arc, poly[:, 1])])


def _chaikin(poly: np.ndarray, rounds: int = 2) -> np.ndarray:
    for _ in range(rounds):
        q = 0.75 * poly[:-1] + 0.25 * poly[1:]
        r = 0.25 * poly[:-1] + 0.75 * poly[1:]
        mid = np.empty((2 * len(q), 2))
        mid[0::2], mid[1::2] = q, r
        poly = np.vstack([poly[:1], mid[1:-1], poly[-1:]])
    return poly


def _length(poly: np.ndarray) -> float:
    return float(np.hypot(*np.diff(poly, axis=0).T).sum())


class _Router:
    def __init__(self, area: ObservationArea, min_path: float):
        if len(area.gates) < 2:
            raise InfeasibleGeometry("the observation area needs at least two gates")
        self.area = area
        self.min_path = min_path
        self.inside = area.boundary.buffer(1e-6)
        self.blocked = [p for p in (*area.landmarks, *area.obstacles)]
        centers = {n: np.array(g.interpolate(0.5, normalized=True).coords[0]) for n, g in area.gates.items()}
        self.centers = centers
        self.corridor_of_gate = {g: c for c in area.corridors for g in c.gates}
        if area.corridors:
            self.linear_pairs = [(c.gates, c) for c in area.corridors]
        else:
            names = sorted(area.gates)
            self.linear_pairs = [((a, b), None) for a in names for b in names if a < b]
        self.linear_pairs = [
            (pair, c) for pair, c in self.linear_pairs if np.linalg.norm(centers[pair[0]] - centers[pair[1]]) >= min_path
        ]
        self.landmark = (
            np.array(area.landmarks[0].centroid.coords[0]) if area.landmarks else None
        )
        self.landmark_radius = (
            max(area.landmarks[0].centroid.distance(Point(xy)) for xy in area.landmarks[0].exterior.coords)
            if area.landmarks
            else 0.0
        )

    def _clear(self, poly: np.ndarray, envelope=None) -> bool:
        line = LineString(poly)
        if not self.inside.contains(line):
            return False
        if envelope is not None and not envelope.buffer(0.05).contains(line):
            return False
        return not any(line.intersects(b) for b in self.blocked)

    def linear(self, rng: np.random.Generator) -> tuple[np.ndarray, str, str]:
        if not self.linear_pairs:
            raise InfeasibleGeometry(
                f"no gate pair for straight routes is at least {self.min_path} m apart"
            )
        pair, corridor = self.linear_pairs[rng.integers(len(self.linear_pairs))]
        entry, exit_ = pair if rng.random() < 0.5 else pair[::-1]
        a = _gate_point(rng, self.area.gates[entry])
        b = _gate_point(rng, self.area.gates[exit_])
        d = b - a
        normal = np.array([-d[1], d[0]]) / np.linalg.norm(d)
        s = np.linspace(0.0, 1.0, 120)
        coef = rng.normal(0.0, 0.5 / np.arange(1, 4))
        lateral = np.clip((coef[:, None] * np.sin(np.pi * np.arange(1, 4)[:, None] * s)).sum(0), -1.2, 1.2)
        envelope = corridor.polygon if corridor is not None else None
        for _ in range(8):
            poly = a + s[:, None] * d + lateral[:, None] * normal
            if self._clear(poly, envelope):
                return poly, entry, exit_
            lateral = lateral * 0.5
        poly = np.vstack([a, b])
        if not self._clear(poly, envelope):
            raise InfeasibleGeometry(f"straight route {entry}->{exit_} leaves its corridor or hits an obstacle")
        return poly, entry, exit_

    def _approach(self, rng: np.random.Generator, gate: str, start: np.ndarray) -> np.ndarray:
        """Point on the gate's corridor just before the landmark, or a point toward it."""
        c = self.landmark
        corridor = self.corridor_of_gate.get(gate)
        if corridor is not None:
            g0, g1 = (self.centers[g] for g in corridor.gates)
            u = (g1 - g0) / np.linalg.norm(g1 - g0)
            foot = g0 + np.dot(c - g0, u) * u
            side = 1.0 if np.dot(start - foot, u) >= 0 else -1.0
            lateral = (start - g0) - np.dot(start - g0, u) * u
            return foot + side * rng.uniform(1.0, 2.5) * u + lateral
        v = start - c
        return c + v / np.linalg.norm(v) * min(np.linalg.norm(v), self.landmark_radius + 6.5)

    def organic(self, rng: np.random.Generator) -> tuple[np.ndarray, str, str]:
        if self.landmark is None:
            raise InfeasibleGeometry("organic routes need a landmark in the observation area")
        names = sorted(self.area.gates)
        c = self.landmark
        for _ in range(50):
            entry = names[rng.integers(len(names))]
            # the far gate of the entry corridor is preferred; any other gate is possible
            partner = self.corridor_of_gate.get(entry)
            others = [n for n in names if n != entry]
            w = np.array([2.0 if partner is not None and n in partner.gates else 1.0 for n in others])
            exit_ = others[int(rng.choice(len(others), p=w / w.sum()))]
            a = _gate_point(rng, self.area.gates[entry])
            b = _gate_point(rng, self.area.gates[exit_])
            e1 = self._approach(rng, entry, a)
            x1 = self._approach(rng, exit_, b)
            th0 = math.atan2(*(e1 - c)[::-1])
            th1 = math.atan2(*(x1 - c)[::-1])
            gap = (th1 - th0 + math.pi) % (2 * math.pi) - math.pi
            radius = rng.uniform(3.0, 3.8)
            n_arc = max(3, int(abs(math.degrees(gap)) / 10))
            ang = th0 + np.linspace(0.0, gap, n_arc)
            wobble = np.clip(rng.normal(0.0, 0.25, 3) @ np.sin(np.outer(np.arange(1, 4), np.linspace(0, np.pi, n_arc))), -0.5, 0.5)
            r = radius + wobble
            arc = c + np.column_stack([r * np.cos(ang), r * np.sin(ang)])
            poly = _chaikin(np.vstack([a, e1, arc, x1, b]), rounds=3)
            if _length(poly) >= self.min_path + 0.5 and self._clear(poly):
                return poly, entry, exit_
        raise InfeasibleGeometry("could not route an organic path around the landmark inside the area")


# --------------------------------------------------------------------------- records


def _pick(rng: np.random.Generator, weights: Mapping[str, float], universe: Sequence[str]) -> str:
    keys = [k for k in universe if weights.get(k, 0) > 0] if weights else list(universe)
    w = np.array([weights.get(k, 1.0) if weights else 1.0 for k in keys], dtype=float)
    return keys[int(rng.choice(len(keys), p=w / w.sum()))]


def _activities(rng: np.random.Generator, arch: Archetype) -> frozenset[str]:
    groups = sorted(set(ACTIVITY_GROUPS.values()))
    first = _pick(rng, arch.activity_weights, groups)
    chosen = {first}
    if rng.random() < 0.15:
        others = [g for g in groups if g != first]
        chosen.add(others[int(rng.integers(len(others)))])
    acts = set()
    for g in sorted(chosen):
        members = sorted(a for a, grp in ACTIVITY_GROUPS.items() if grp == g)
        acts.add(members[int(rng.integers(len(members)))])
    return frozenset(acts)


def _stop_anchors(rng: np.random.Generator, arch: Archetype, pts: np.ndarray, router: _Router, k: int) -> list[int]:
    """Walking indices after which a stop is inserted (the stop sits at the next point)."""
    n = len(pts)
    candidates = np.arange(1, n - 2)
    if len(candidates) < k:
        raise InfeasibleGeometry("route too short for the requested stops")
    if arch.path_style == "organic_wander" and router.landmark is not None:
        d = np.hypot(*(pts[candidates + 1] - router.landmark).T)
        near = candidates[d <= np.quantile(d, 0.3)]
        pool = near if len(near) >= k else candidates
    else:
        mid = candidates[(candidates >= 0.35 * n) & (candidates <= 0.65 * n)]
        pool = mid if len(mid) >= k else candidates
    return sorted(int(v) for v in rng.choice(pool, size=k, replace=False))


def generate_record(
    arch: Archetype,
    index: int,
    rng: np.random.Generator,
    router: _Router,
    mean_run: float = 6.0,
    speed_quantile: float | None = None,
) -> TrajectoryRecord:
    """One record. ``speed_quantile`` in (0, 1) fixes the speed draw to that normal quantile."""
    z = NormalDist().inv_cdf(speed_quantile) if speed_quantile is not None else rng.standard_normal()
    speed = float(np.clip(arch.speed + arch.speed_sd * z, MIN_SPEED, MAX_SPEED))
    route = router.organic if arch.path_style == "organic_wander" else router.linear
    poly, entry, exit_ = route(rng)
    length = _length(poly)
    n_walk = max(2, int(round(length / speed)))
    pts = _resample(poly, n_walk)

    k = int(rng.integers(arch.stops[0], arch.stops[1] + 1))
    anchors = _stop_anchors(rng, arch, pts, router, k) if k else []
    durations = [int(rng.integers(arch.stop_seconds[0], arch.stop_seconds[1] + 1)) for _ in anchors]

    s_w, w_w = _draw_shares(rng, arch.screen_walk, arch.wander_walk, arch.fraction_sd)
    walk_codes = _codes(rng, "walk", n_walk, s_w, w_w, mean_run)
    stat_codes: list[GazeCode] = []
    if anchors:
        s_s, w_s = _draw_shares(rng, arch.screen_stat, arch.wander_stat, arch.fraction_sd)
        stat_codes = _codes(rng, "stat", sum(durations), s_s, w_s, mean_run)

    samples = []
    stops = dict(zip(anchors, durations))
    used = 0
    for j in range(n_walk):
        x, y = pts[j]
        samples.append(GazeSample(len(samples), float(x), float(y), walk_codes[j]))
        if j in stops:
            sx, sy = pts[j + 1]
            for code in stat_codes[used : used + stops[j]]:
                samples.append(GazeSample(len(samples), float(sx), float(sy), code))
            used += stops[j]

    return TrajectoryRecord(
        id=f"{arch.id_prefix}-{index:04d}",
        gender=("female", "male")[int(rng.integers(2))],
        age_group=_pick(rng, arch.age_weights, AGE_GROUPS[:4]),
        companions=int(min(rng.poisson(0.4), 4)),
        activities=_activities(rng, arch),
        entry_gate=entry,
        exit_gate=exit_,
        samples=tuple(samples),
    )


def generate(
    area: ObservationArea,
    archetypes: Sequence[Archetype],
    seed: int,
    min_path: float = 20.0,
    mean_run: float = 6.0,
) -> list[TrajectoryRecord]:
    """Synthetic corpus, archetype by archetype, deterministic for a given seed.

    Speeds are stratified within an archetype: record i draws from its own
    1/count slice of the speed distribution (slices assigned by a seeded
    permutation), so group mean speeds track the target closely.
    """
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    if mean_run < 1:
        raise ValueError("mean_run must be at least 1 second")
    if not any(a.count for a in archetypes):
        return []
    router = _Router(area, min_path)
    records = []
    for ai, arch in enumerate(archetypes):
        strata = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(ai,))).permutation(arch.count)
        for i in range(arch.count):
            rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(ai, i)))
            q = (strata[i] + rng.uniform(0.01, 0.99)) / arch.count
            records.append(generate_record(arch, i, rng, router, mean_run, speed_quantile=q))
    return records
