"""Figure taxonomy: name fitted clusters from their centroids and summarise figures."""
from __future__ import annotations

import logging
import math
import operator
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from gazewalk.features import ACTIVITY_GROUPS, FeatureVector, extract_features
from gazewalk.observation import AGE_GROUPS, TrajectoryRecord
from gazewalk.twostep import ClusterModel

logger = logging.getLogger(__name__)


class FigureLabel(str, Enum):
    POST_FLANEUR = "POST_FLANEUR"
    STATIONARY_POST_FLANEUR = "STATIONARY_POST_FLANEUR"
    IMMERSED_POST_FLANEUR = "IMMERSED_POST_FLANEUR"
    SMARTPHONE_ZOMBIE = "SMARTPHONE_ZOMBIE"
    SECOND_DEGREE_ZOMBIE = "SECOND_DEGREE_ZOMBIE"
    IMMERSED_ZOMBIE = "IMMERSED_ZOMBIE"
    DESTINATION_ORIENTED = "DESTINATION_ORIENTED"
    IN_BETWEEN = "IN_BETWEEN"
    DISINTERESTED = "DISINTERESTED"
    UNCLASSIFIED = "UNCLASSIFIED"

    @property
    def short(self) -> str:
        return _SHORT.get(self, self.value.lower())

    @property
    def family(self) -> str:
        return _FAMILY[self]


_SHORT = {
    FigureLabel.POST_FLANEUR: "Pf1",
    FigureLabel.STATIONARY_POST_FLANEUR: "Pf2",
    FigureLabel.IMMERSED_POST_FLANEUR: "Pf3",
    FigureLabel.SMARTPHONE_ZOMBIE: "Sz1",
    FigureLabel.SECOND_DEGREE_ZOMBIE: "Sz2",
    FigureLabel.IMMERSED_ZOMBIE: "Sz3",
}

_FAMILY = {
    FigureLabel.POST_FLANEUR: "post_flaneur",
    FigureLabel.STATIONARY_POST_FLANEUR: "post_flaneur",
    FigureLabel.IMMERSED_POST_FLANEUR: "post_flaneur",
    FigureLabel.SMARTPHONE_ZOMBIE: "smartphone_zombie",
    FigureLabel.SECOND_DEGREE_ZOMBIE: "smartphone_zombie",
    FigureLabel.IMMERSED_ZOMBIE: "smartphone_zombie",
    FigureLabel.DESTINATION_ORIENTED: "destination_oriented",
    FigureLabel.IN_BETWEEN: "in_between",
    FigureLabel.DISINTERESTED: "disinterested",
    FigureLabel.UNCLASSIFIED: "unclassified",
}

MODEL_LABELS = {
    "walkers": {
        FigureLabel.POST_FLANEUR,
        FigureLabel.SMARTPHONE_ZOMBIE,
        FigureLabel.SECOND_DEGREE_ZOMBIE,
        FigureLabel.DESTINATION_ORIENTED,
        FigureLabel.IN_BETWEEN,
        FigureLabel.UNCLASSIFIED,
    },
    "walk_stop": {
        FigureLabel.STATIONARY_POST_FLANEUR,
        FigureLabel.IMMERSED_POST_FLANEUR,
        FigureLabel.IMMERSED_ZOMBIE,
        FigureLabel.DISINTERESTED,
        FigureLabel.UNCLASSIFIED,
    },
}

# centroid variables as seen by rules; gaze shares are in percent
RULE_VARIABLES = {
    "screen_walk": "pct_screen_walk",
    "wander_walk": "pct_wander_walk",
    "screen_stat": "pct_screen_stat",
    "wander_stat": "pct_wander_stat",
    "speed": "walking_speed",
}
_PERCENT = {"screen_walk", "wander_walk", "screen_stat", "wander_stat"}

_OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge, "==": operator.eq}
_COND = re.compile(r"^\s*([a-z_]+)\s*(<=|>=|==|<|>)\s*([A-Za-z_]+|-?\d+(?:\.\d+)?)\s*$")


@dataclass(frozen=True)
class Condition:
    lhs: str
    op: str
    rhs: str | float

    @classmethod
    def parse(cls, text: str) -> "Condition":
        m = _COND.match(text)
        if not m:
            raise ValueError(f"cannot parse rule condition {text!r}")
        lhs, op, rhs = m.groups()
        if lhs not in RULE_VARIABLES:
            raise ValueError(f"unknown variable {lhs!r} in condition {text!r}")
        try:
            value: str | float = float(rhs)
        except ValueError:
            value = rhs
            if rhs not in RULE_VARIABLES and rhs not in ("max", "min", "corpus_mean"):
                raise ValueError(f"unknown operand {rhs!r} in condition {text!r}") from None
            if rhs in ("max", "min") and op != "==":
                raise ValueError(f"extremum conditions must use '==': {text!r}")
        return cls(lhs, op, value)

    @property
    def extremal(self) -> bool:
        return self.rhs in ("max", "min")

    def variables(self) -> set[str]:
        out = {self.lhs}
        if isinstance(self.rhs, str) and self.rhs in RULE_VARIABLES:
            out.add(self.rhs)
        return out

    def evaluate(self, row: Mapping[str, float], table: Sequence[Mapping[str, float]], corpus_mean: float) -> tuple[bool, float]:
        """(holds, margin). The margin is how far the condition is satisfied by."""
        x = row[self.lhs]
        if x is None or (isinstance(x, float) and math.isnan(x)):
            return False, -math.inf
        if self.rhs == "max":
            others = [r[self.lhs] for r in table if r is not row]
            top = max(others, default=-math.inf)
            return x >= top, x - top
        if self.rhs == "min":
            others = [r[self.lhs] for r in table if r is not row]
            low = min(others, default=math.inf)
            return x <= low, low - x
        y = corpus_mean if self.rhs == "corpus_mean" else row[self.rhs] if isinstance(self.rhs, str) else self.rhs
        if y is None:
            return False, -math.inf
        ok = _OPS[self.op](x, y)
        margin = (x - y) if self.op in (">", ">=") else (y - x) if self.op in ("<", "<=") else -abs(x - y)
        return ok, margin


@dataclass(frozen=True)
class Rule:
    label: FigureLabel
    conditions: tuple[Condition, ...]


@dataclass(frozen=True)
class TaxonomyRules:
    """Ordered rules per model kind (``walkers`` and ``walk_stop``); first match wins."""

    rules: dict[str, tuple[Rule, ...]]

    @classmethod
    def from_mapping(cls, doc: Mapping) -> "TaxonomyRules":
        out = {}
        for model_kind, entries in doc.items():
            if model_kind not in MODEL_LABELS:
                raise ValueError(f"unknown model kind {model_kind!r} (expected walkers or walk_stop)")
            rules = []
            for e in entries or []:
                label = FigureLabel(e["label"])
                if label not in MODEL_LABELS[model_kind]:
                    raise ValueError(f"label {label.value} cannot come from the {model_kind} model")
                rules.append(Rule(label, tuple(Condition.parse(c) for c in e.get("when", []))))
            out[model_kind] = tuple(rules)
        return cls(out)

    @classmethod
    def from_yaml(cls, text: str) -> "TaxonomyRules":
        return cls.from_mapping(yaml.safe_load(text) or {})

    @classmethod
    def load(cls, path: str | Path) -> "TaxonomyRules":
        return cls.from_yaml(Path(path).read_text())

    @classmethod
    def default(cls) -> "TaxonomyRules":
        return cls.from_yaml(resources.files("gazewalk").joinpath("data/rules.yaml").read_text())


@dataclass(frozen=True)
class CorpusStats:
    mean_speed: float

    @classmethod
    def from_features(cls, vectors: Sequence[FeatureVector]) -> "CorpusStats":
        speeds = [v.walking_speed for v in vectors if v.walking_speed is not None]
        return cls(float(np.mean(speeds)) if speeds else math.nan)


def centroid_table(model: ClusterModel) -> list[dict[str, float | None]]:
    """Per-cluster rule variables (percent for gaze shares, m/s for speed)."""
    rows = []
    for c in range(model.k):
        cen = model.centroid(c)
        row: dict[str, float | None] = {}
        for short, name in RULE_VARIABLES.items():
            v = cen.get(name)
            row[short] = None if v is None else (100.0 * v if short in _PERCENT else float(v))
        rows.append(row)
    return rows


def label_clusters(
    model: ClusterModel,
    rules: TaxonomyRules,
    corpus_stats: CorpusStats,
    model_kind: str = "walkers",
) -> dict[int, FigureLabel]:
    """Assign exactly one figure label per cluster.

    Rules run in order. A rule with a max/min condition names at most one
    cluster; if several qualify the one with the largest summed margin wins.
    Clusters matching no rule are UNCLASSIFIED.
    """
    if model_kind not in rules.rules:
        raise ValueError(f"no rules for model kind {model_kind!r}")
    table = centroid_table(model)
    for rule in rules.rules[model_kind]:
        for cond in rule.conditions:
            for v in cond.variables():
                if all(row[v] is None for row in table):
                    raise ValueError(f"rule for {rule.label.value} needs {v!r}, which the model does not report")
    labels: dict[int, FigureLabel] = {}
    for rule in rules.rules[model_kind]:
        hits = []
        for c, row in enumerate(table):
            if c in labels:
                continue
            results = [cond.evaluate(row, table, corpus_stats.mean_speed) for cond in rule.conditions]
            if all(ok for ok, _ in results):
                hits.append((sum(m for _, m in results if math.isfinite(m)), c))
        if not hits:
            continue
        if any(cond.extremal for cond in rule.conditions):
            hits.sort(key=lambda t: (-t[0], t[1]))
            if len(hits) > 1:
                logger.info(
                    "clusters %s all match %s; keeping cluster %d (largest margin)",
                    [c for _, c in hits], rule.label.value, hits[0][1],
                )
            hits = hits[:1]
        for _, c in hits:
            labels[c] = rule.label
    for c in range(model.k):
        labels.setdefault(c, FigureLabel.UNCLASSIFIED)
    return dict(sorted(labels.items()))


def record_labels(model: ClusterModel, cluster_labels: Mapping[int, FigureLabel]) -> dict[str, FigureLabel]:
    return {rid: cluster_labels[c] for rid, c in model.assignments.items()}


def _mean_sd(values: list[float]) -> tuple[float | None, float | None]:
    if not values:
        return None, None
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=1)) if len(arr) > 1 else 0.0


def _group_rows(groups: dict[str, list[FeatureVector]], total: int, key: str) -> list[dict]:
    rows = []
    for name, vecs in groups.items():
        sp_m, sp_sd = _mean_sd([v.walking_speed for v in vecs if v.walking_speed is not None])
        scr = [v.pct_screen_walk for v in vecs if v.pct_screen_walk is not None]
        wan = [v.pct_wander_walk for v in vecs if v.pct_wander_walk is not None]
        scs = [v.pct_screen_stat for v in vecs if v.pct_screen_stat is not None]
        was = [v.pct_wander_stat for v in vecs if v.pct_wander_stat is not None]
        rows.append(
            {
                key: name,
                "n": len(vecs),
                "share_pct": 100.0 * len(vecs) / total if total else 0.0,
                "speed_mean": sp_m,
                "speed_sd": sp_sd,
                "screen_walk_pct": 100.0 * float(np.mean(scr)) if scr else None,
                "wander_walk_pct": 100.0 * float(np.mean(wan)) if wan else None,
                "screen_stat_pct": 100.0 * float(np.mean(scs)) if scs else None,
                "wander_stat_pct": 100.0 * float(np.mean(was)) if was else None,
            }
        )
    return rows


def _crosstab(records: Sequence[TrajectoryRecord], names: Mapping[str, str], columns: Sequence[str], column_of) -> list[dict]:
    counts: dict[str, dict[str, int]] = {}
    col_totals = {c: 0 for c in columns}
    for r in records:
        if r.id not in names:
            continue
        row = counts.setdefault(names[r.id], {c: 0 for c in columns})
        for c in column_of(r):
            row[c] += 1
            col_totals[c] += 1
    out = []
    for name in sorted(counts):
        row = {"figure": name}
        for c in columns:
            row[f"n_{c}"] = counts[name][c]
        for c in columns:
            row[f"pct_{c}"] = 100.0 * counts[name][c] / col_totals[c] if col_totals[c] else 0.0
        out.append(row)
    return out


def figure_summary(
    records: Sequence[TrajectoryRecord],
    labels: Mapping[str, FigureLabel],
    features: Sequence[FeatureVector] | None = None,
) -> dict[str, list[dict]]:
    """Figure tables: per-figure and per-family statistics plus age and activity-group cross-tabs.

    Cross-tab percentages are shares of each age or activity group; a record
    with two activity groups counts in both.
    """
    feats = {v.record_id: v for v in (features or [extract_features(r) for r in records])}
    labelled = [r for r in records if r.id in labels]
    total = len(labelled)
    by_fig: dict[str, list[FeatureVector]] = {}
    by_fam: dict[str, list[FeatureVector]] = {}
    for r in labelled:
        lab = FigureLabel(labels[r.id])
        by_fig.setdefault(lab.value, []).append(feats[r.id])
        by_fam.setdefault(lab.family, []).append(feats[r.id])
    figure_names = {r.id: FigureLabel(labels[r.id]).value for r in labelled}
    family_names = {r.id: FigureLabel(labels[r.id]).family for r in labelled}
    groups = sorted(set(ACTIVITY_GROUPS.values()))
    ages = list(AGE_GROUPS)
    return {
        "figures": _group_rows(dict(sorted(by_fig.items())), total, "figure"),
        "families": _group_rows(dict(sorted(by_fam.items())), total, "family"),
        "age_by_figure": _crosstab(labelled, figure_names, ages, lambda r: [r.age_group]),
        "age_by_family": _crosstab(labelled, family_names, ages, lambda r: [r.age_group]),
        "activity_by_figure": _crosstab(
            labelled, figure_names, groups, lambda r: sorted({ACTIVITY_GROUPS[a] for a in r.activities})
        ),
        "activity_by_family": _crosstab(
            labelled, family_names, groups, lambda r: sorted({ACTIVITY_GROUPS[a] for a in r.activities})
        ),
    }
