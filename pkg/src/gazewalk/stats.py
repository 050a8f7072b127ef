"""Supporting statistics: t-tests, Cochran sample size, coder disagreement, descriptive tables."""
from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats as sps

from gazewalk.features import detect_stops
from gazewalk.observation import AGE_GROUPS, ACTIVITIES, TrajectoryRecord


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: float
    p: float
    mean_a: float
    mean_b: float
    sd_a: float
    sd_b: float
    n_a: int
    n_b: int
    variant: str

    def report(self) -> str:
        return f"t({self.df:.4g}) = {self.t:.2f}, p = {self.p:.3f}"


def t_test(group_a: Sequence[float], group_b: Sequence[float], variant: str = "pooled") -> TTestResult:
    """Independent two-sample t-test with a two-sided p-value.

    ``pooled`` is Student's test (df = n_a + n_b - 2); ``welch`` uses the
    Welch-Satterthwaite df.
    """
    a = np.asarray(group_a, dtype=float)
    b = np.asarray(group_b, dtype=float)
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise ValueError("each group needs at least two observations")
    # work relative to the pooled minimum: it is symmetric in the groups and
    # moves with shifts and scalings, so those leave t bit-identical on
    # exactly representable data (and it tames cancellation for large offsets)
    ref = min(a.min(), b.min())
    a, b = a - ref, b - ref
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if variant == "pooled":
        df = na + nb - 2
        sp2 = ((na - 1) * va + (nb - 1) * vb) / df
        se2 = sp2 * (1 / na + 1 / nb)
    elif variant == "welch":
        qa, qb = va / na, vb / nb
        se2 = qa + qb
        df = se2**2 / (qa**2 / (na - 1) + qb**2 / (nb - 1)) if se2 > 0 else math.nan
    else:
        raise ValueError(f"unknown t-test variant {variant!r}")
    if not se2 > 0:
        raise ValueError("degenerate variance: both groups are constant")
    t = float((ma - mb) / math.sqrt(se2))
    p = float(min(1.0, 2.0 * sps.t.sf(abs(t), df)))
    return TTestResult(t, float(df), p, float(ma + ref), float(mb + ref), float(math.sqrt(va)), float(math.sqrt(vb)), na, nb, variant)


@dataclass(frozen=True)
class SampleSizeParams:
    N: int
    confidence: float = 0.90
    precision: float = 0.05
    proportion: float = 0.5

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ValueError("population size must be at least 1")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must be in (0, 1)")
        if not 0 < self.precision < 1:
            raise ValueError("precision must be in (0, 1)")
        if not 0 <= self.proportion <= 1:
            raise ValueError("proportion must be in [0, 1]")


def cochran_n0(confidence: float, precision: float, proportion: float = 0.5) -> float:
    z = sps.norm.ppf(0.5 + confidence / 2)
    return z * z * proportion * (1 - proportion) / (precision * precision)


def cochran_n(params: SampleSizeParams) -> int:
    """Cochran's sample size with finite-population correction, rounded up."""
    n0 = cochran_n0(params.confidence, params.precision, params.proportion)
    n = n0 / (1 + (n0 - 1) / params.N)
    # guard against 152.0000000001-style float noise before the ceiling
    return int(math.ceil(round(n, 9)))


class CodingMismatch(ValueError):
    def __init__(self, only_a: set, only_b: set):
        self.only_a, self.only_b = only_a, only_b
        super().__init__(
            f"codings cover different record ids; only in A: {sorted(only_a)}, only in B: {sorted(only_b)}"
        )


def disagreement_rates(
    coding_a: Mapping[str, Mapping[str, object]],
    coding_b: Mapping[str, Mapping[str, object]],
    attributes: Sequence[str],
) -> dict[str, float]:
    """Percentage of records whose value differs between two coders, per attribute.

    Values are full precision; round to 2 decimals for reporting.
    """
    ids_a, ids_b = set(coding_a), set(coding_b)
    if ids_a != ids_b:
        raise CodingMismatch(ids_a - ids_b, ids_b - ids_a)
    out = {}
    for attr in attributes:
        if not ids_a:
            out[attr] = 0.0
            continue
        diff = sum(coding_a[i].get(attr) != coding_b[i].get(attr) for i in ids_a)
        out[attr] = 100.0 * diff / len(ids_a)
    return out


def pct(part: float, whole: float) -> float:
    return 100.0 * part / whole if whole else 0.0


@dataclass(frozen=True)
class CountRow:
    age_group: str
    gender: str
    passersby: int
    smartphone_users: int


def read_counts(text: str) -> list[CountRow]:
    """Rows of ``age_group,gender,passersby,smartphone_users``."""
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        rows.append(
            CountRow(row["age_group"].strip(), row["gender"].strip(), int(row["passersby"]), int(row["smartphone_users"]))
        )
    return rows


def smartphone_share_table(counts: Iterable[CountRow]) -> list[dict]:
    """Smartphone-user share per age group x gender, with totals."""
    counts = list(counts)
    genders = sorted({c.gender for c in counts})
    ages = [a for a in AGE_GROUPS if any(c.age_group == a for c in counts)]
    ages += sorted({c.age_group for c in counts} - set(ages))
    table = []
    for age in ages + ["overall"]:
        row: dict = {"age_group": age}
        tot_p = tot_u = 0
        for g in genders:
            sel = [c for c in counts if (age == "overall" or c.age_group == age) and c.gender == g]
            p = sum(c.passersby for c in sel)
            u = sum(c.smartphone_users for c in sel)
            row[f"passersby_{g}"] = p
            row[f"users_{g}"] = u
            row[f"pct_{g}"] = pct(u, p)
            tot_p += p
            tot_u += u
        row["passersby_total"] = tot_p
        row["users_total"] = tot_u
        row["pct_total"] = pct(tot_u, tot_p)
        table.append(row)
    return table


def descriptive_report(counts: Iterable[CountRow], records: Sequence[TrajectoryRecord]) -> dict[str, list[dict]]:
    """Descriptive tables: smartphone shares, activity, companion and stop-behaviour shares.

    Records with two activities contribute to both activity rows.
    """
    records = list(records)
    n = len(records)
    report: dict[str, list[dict]] = {"smartphone_share": smartphone_share_table(counts)}

    acts = Counter(a for r in records for a in r.activities)
    total_mentions = sum(acts.values())
    report["activities"] = [
        {"activity": a, "count": acts.get(a, 0), "pct_of_mentions": pct(acts.get(a, 0), total_mentions), "pct_of_users": pct(acts.get(a, 0), n)}
        for a in ACTIVITIES
    ]

    alone = sum(r.companions == 0 for r in records)
    report["companions"] = [
        {"category": "alone", "count": alone, "pct": pct(alone, n)},
        {"category": "accompanied", "count": n - alone, "pct": pct(n - alone, n)},
    ]

    stopped = screen_when_stopped = screen_only_when_stopped = 0
    for r in records:
        stops = detect_stops(r)
        if not stops:
            continue
        stopped += 1
        if any(e.screen_seconds > 0 for e in stops):
            screen_when_stopped += 1
            if not any(s.code.is_walking and s.code.gaze_class.screen_based for s in r.samples):
                screen_only_when_stopped += 1
    report["stop_behaviour"] = [
        {"category": "walked_without_stopping", "count": n - stopped, "pct": pct(n - stopped, n)},
        {"category": "paused", "count": stopped, "pct": pct(stopped, n)},
        {"category": "paused_and_used_phone_while_stationary", "count": screen_when_stopped, "pct": pct(screen_when_stopped, stopped)},
        {"category": "used_phone_only_when_stationary", "count": screen_only_when_stopped, "pct": pct(screen_only_when_stopped, n)},
    ]
    return report


def table_to_csv(rows: Sequence[Mapping], decimals: int | None = 2) -> str:
    """CSV text; floats rounded to ``decimals`` places (``None`` keeps full precision)."""
    if not rows:
        return ""
    cols = list(rows[0].keys())
    for r in rows[1:]:
        cols += [c for c in r.keys() if c not in cols]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        out = []
        for c in cols:
            v = r.get(c, "")
            if v is None:
                v = ""
            elif isinstance(v, float):
                v = f"{v:.{decimals}f}" if decimals is not None else repr(v)
            out.append(v)
        w.writerow(out)
    return buf.getvalue()
