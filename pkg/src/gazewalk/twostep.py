"""Two-step cluster analysis.

Step one folds the input vectors into sub-clusters, each summarised by its
count, linear sum and per-variable sum of squares. Step two merges the
sub-clusters agglomeratively by centroid distance, and the number of
clusters is picked from the merge tree with an information criterion. Final
memberships are obtained by assigning every original vector to the nearest
final centroid.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from gazewalk.features import FeatureVector


@dataclass
class SubCluster:
    """Sufficient statistics of a group of vectors."""

    index: int
    n: int
    ls: np.ndarray
    ss: np.ndarray
    members: list[int] = field(default_factory=list)

    @property
    def center(self) -> np.ndarray:
        return self.ls / self.n

    def absorb(self, x: np.ndarray, member: int) -> None:
        self.n += 1
        self.ls = self.ls + x
        self.ss = self.ss + x * x
        self.members.append(member)


def pre_cluster(vectors: np.ndarray, threshold: float = 0.0) -> list[SubCluster]:
    """Sequential leader-style pre-clustering in input order.

    Each vector joins the nearest existing sub-cluster (ties: earliest
    created) when that center is within ``threshold``; otherwise it starts a
    new sub-cluster. Results therefore depend on input order whenever
    ``threshold > 0``.
    """
    X = np.asarray(vectors, dtype=float)
    if X.ndim != 2:
        raise ValueError("vectors must be a 2-D array")
    if not np.isfinite(X).all():
        raise ValueError("vectors must be finite")
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    subs: list[SubCluster] = []
    centers = np.empty((0, X.shape[1]))
    for i, x in enumerate(X):
        if len(subs):
            d = np.sqrt(((centers - x) ** 2).sum(axis=1))
            j = int(np.argmin(d))
            if d[j] <= threshold:
                subs[j].absorb(x, i)
                centers[j] = subs[j].center
                continue
        subs.append(SubCluster(len(subs), 1, x.copy(), x * x, [i]))
        centers = np.vstack([centers, x])
    return subs


@dataclass(frozen=True)
class Merge:
    left: int
    right: int
    distance: float
    size: int


@dataclass(frozen=True)
class Dendrogram:
    """Merge sequence over ``n_leaves`` sub-clusters.

    Leaves are numbered ``0..n_leaves-1`` by creation; merge ``t`` creates node
    ``n_leaves + t``.
    """

    n_leaves: int
    merges: tuple[Merge, ...]

    def height(self, k: int) -> float:
        """Distance of the merge that reduced ``k + 1`` clusters to ``k``."""
        return self.merges[self.n_leaves - k - 1].distance

    def cut(self, k: int) -> np.ndarray:
        """Leaf labels for the ``k``-cluster partition, numbered by smallest leaf."""
        if not 1 <= k <= self.n_leaves:
            raise ValueError(f"cannot cut {self.n_leaves} leaves into {k} clusters")
        parent = list(range(self.n_leaves + len(self.merges)))

        def find(a: int) -> int:
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for t, m in enumerate(self.merges[: self.n_leaves - k]):
            node = self.n_leaves + t
            parent[find(m.left)] = node
            parent[find(m.right)] = node
        roots = [find(i) for i in range(self.n_leaves)]
        relabel: dict[int, int] = {}
        for r in roots:
            relabel.setdefault(r, len(relabel))
        return np.array([relabel[r] for r in roots], dtype=int)


def agglomerate(subclusters: Sequence[SubCluster]) -> Dendrogram:
    """Centroid-linkage agglomeration of sub-clusters.

    Each step joins the pair whose centers (linear sum / count) are closest.
    Exact ties go to the lexicographically smallest pair of node ids.
    """
    m = len(subclusters)
    if m == 0:
        raise ValueError("need at least one sub-cluster")
    ls = np.array([s.ls for s in subclusters], dtype=float)
    n = np.array([s.n for s in subclusters], dtype=float)
    node = np.arange(m)
    active = np.ones(m, dtype=bool)
    centers = ls / n[:, None]
    D = np.sqrt(((centers[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1))
    np.fill_diagonal(D, np.inf)
    merges = []
    for t in range(m - 1):
        dmin = D.min()
        ii, jj = np.nonzero(D == dmin)
        best = None
        for i, j in zip(ii, jj):
            key = (min(node[i], node[j]), max(node[i], node[j]))
            if best is None or key < best[0]:
                best = (key, i, j)
        (a, b), i, j = best
        if node[i] != a:
            i, j = j, i
        merges.append(Merge(int(a), int(b), float(dmin), int(n[i] + n[j])))
        ls[i] += ls[j]
        n[i] += n[j]
        node[i] = m + t
        active[j] = False
        D[j, :] = np.inf
        D[:, j] = np.inf
        c = ls[i] / n[i]
        d = np.sqrt(((ls[active] / n[active][:, None] - c) ** 2).sum(axis=1))
        row = np.full(m, np.inf)
        row[active] = d
        row[i] = np.inf
        D[i, :] = row
        D[:, i] = row
    return Dendrogram(m, tuple(merges))


def _pooled(subclusters: Sequence[SubCluster], labels: np.ndarray, k: int):
    d = len(subclusters[0].ls)
    n = np.zeros(k)
    ls = np.zeros((k, d))
    ss = np.zeros((k, d))
    for s, lab in zip(subclusters, labels):
        n[lab] += s.n
        ls[lab] += s.ls
        ss[lab] += s.ss
    return n, ls, ss


def log_likelihood(
    subclusters: Sequence[SubCluster],
    labels: np.ndarray,
    variance_floor: float = 0.1,
    covariance: str = "diagonal",
) -> tuple[float, int]:
    """Classification log-likelihood of a Gaussian mixture, and its parameter count.

    ``diagonal`` gives every cluster its own variance per variable (variables
    treated as independent normals); ``spherical`` one variance per cluster
    shared across variables. Each variance is inflated by ``variance_floor``
    times the pooled variance of that variable so tiny or coincident clusters
    keep a finite likelihood.
    """
    k = int(labels.max()) + 1
    n, ls, ss = _pooled(subclusters, labels, k)
    d = ls.shape[1]
    N = n.sum()
    pooled_var = np.maximum(ss.sum(axis=0) - ls.sum(axis=0) ** 2 / N, 0.0) / N
    sse = np.maximum(ss - ls**2 / n[:, None], 0.0)  # k x d
    if covariance == "diagonal":
        var = sse / n[:, None] + variance_floor * pooled_var
        if np.any(var <= 0):
            return math.inf, 2 * k * d + k - 1
        ll = float(np.sum(-0.5 * n[:, None] * np.log(2 * np.pi * var) - sse / (2 * var)))
        params = 2 * k * d + k - 1
    elif covariance == "spherical":
        var = sse.sum(axis=1) / (n * d) + variance_floor * pooled_var.mean()
        if np.any(var <= 0):
            return math.inf, k * d + k + k - 1
        ll = float(np.sum(-0.5 * n * d * np.log(2 * np.pi * var) - sse.sum(axis=1) / (2 * var)))
        params = k * d + k + k - 1
    else:
        raise ValueError(f"unknown covariance model {covariance!r}")
    return ll + float(np.sum(n * np.log(n / N))), params


def information_criterion(ll: float, params: int, n: int, kind: str = "aic") -> float:
    if kind == "aic":
        return -2.0 * ll + 2.0 * params
    if kind == "bic":
        return -2.0 * ll + params * math.log(n)
    raise ValueError(f"unknown criterion {kind!r}")


@dataclass(frozen=True)
class Selection:
    k: int
    criterion_trace: dict[int, float]
    distance_ratios: dict[int, float]
    candidates: tuple[int, ...]


def select_k(
    dendrogram: Dendrogram,
    subclusters: Sequence[SubCluster],
    criterion: str = "aic",
    k_range: tuple[int, int] = (1, 15),
    variance_floor: float = 0.1,
    support_margin: float = 2.0,
    covariance: str = "diagonal",
) -> Selection:
    """Choose the number of clusters from the merge tree.

    Coarse stage: every k whose criterion is within ``support_margin`` of the
    best value is a candidate. If k = 1 is a candidate it wins; otherwise the
    candidate with the largest ratio between the merge distance leaving k and
    the one reaching k is returned.
    """
    k_min, k_max = k_range
    m = dendrogram.n_leaves
    if k_min < 1 or k_min > k_max or k_min > m:
        raise ValueError(f"k_range {k_range} infeasible for {m} sub-cluster(s)")
    k_max = min(k_max, m)
    N = sum(s.n for s in subclusters)
    total_ss = sum(float(s.ss.sum()) for s in subclusters)
    total_ls = sum(s.ls for s in subclusters)
    degenerate = total_ss - float((total_ls ** 2).sum()) / N <= 1e-12 * max(1.0, total_ss)

    trace: dict[int, float] = {}
    for k in range(k_min, k_max + 1):
        if degenerate:
            trace[k] = math.nan
            continue
        ll, p = log_likelihood(subclusters, dendrogram.cut(k), variance_floor, covariance)
        trace[k] = information_criterion(ll, p, N, criterion)
    if degenerate:
        return Selection(k_min, trace, {}, (k_min,))

    best = min(trace.values())
    cands = tuple(k for k, v in trace.items() if v <= best + support_margin)
    ratios: dict[int, float] = {}
    for k in cands:
        if k < 2:
            continue
        below = dendrogram.height(k - 1)
        above = dendrogram.height(k) if k < m else 0.0
        ratios[k] = below / above if above > 0 else (math.inf if below > 0 else 1.0)
    if 1 in cands or not ratios:
        k = cands[0]
    else:
        top = max(ratios.values())
        k = min(kk for kk, r in ratios.items() if r == top)
    return Selection(k, trace, ratios, cands)


def standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Column z-scores (population SD); constant columns are centred only."""
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    scale = np.where(sd > 0, sd, 1.0)
    return (X - mean) / scale, mean, scale


def silhouette_avg(vectors: np.ndarray, labels: Sequence[int]) -> float | None:
    """Mean silhouette width; ``None`` when fewer than two clusters.

    Points in singleton clusters score 0.
    """
    X = np.asarray(vectors, dtype=float)
    lab = np.asarray(labels)
    uniq = np.unique(lab)
    if len(uniq) < 2:
        return None
    D = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=-1))
    s = np.zeros(len(X))
    masks = {u: lab == u for u in uniq}
    sizes = {u: int(m.sum()) for u, m in masks.items()}
    for i in range(len(X)):
        own = lab[i]
        if sizes[own] == 1:
            continue
        a = D[i, masks[own]].sum() / (sizes[own] - 1)
        b = min(D[i, masks[u]].mean() for u in uniq if u != own)
        denom = max(a, b)
        s[i] = (b - a) / denom if denom > 0 else 0.0
    return float(s.mean())


def variable_importance(
    vectors: np.ndarray, labels: Sequence[int], names: Sequence[str], method: str = "log_p"
) -> dict[str, float]:
    """Per-variable importance from a one-way ANOVA F test across clusters.

    ``log_p`` scores each variable by -log10(p); ``one_minus_p`` by 1 - p.
    Scores are divided by the largest so the top variable gets 1.0; constant
    variables score 0.
    """
    X = np.asarray(vectors, dtype=float)
    lab = np.asarray(labels)
    uniq = np.unique(lab)
    k, n = len(uniq), len(X)
    raw = {}
    for j, name in enumerate(names):
        col = X[:, j]
        grand = col.mean()
        ssb = sum(col[lab == u].size * (col[lab == u].mean() - grand) ** 2 for u in uniq)
        ssw = sum(((col[lab == u] - col[lab == u].mean()) ** 2).sum() for u in uniq)
        if k < 2 or np.ptp(col) == 0 or n <= k:
            raw[name] = 0.0
            continue
        if ssw <= 0:
            raw[name] = math.inf
            continue
        F = (ssb / (k - 1)) / (ssw / (n - k))
        if method == "log_p":
            raw[name] = float(-stats.f.logsf(F, k - 1, n - k) / math.log(10))
        elif method == "one_minus_p":
            raw[name] = float(1.0 - stats.f.sf(F, k - 1, n - k))
        else:
            raise ValueError(f"unknown importance method {method!r}")
    if any(math.isinf(v) for v in raw.values()):
        # zero within-cluster spread: that variable separates perfectly
        return {k_: 1.0 if math.isinf(v) else 0.0 for k_, v in raw.items()}
    top = max(raw.values(), default=0.0)
    if top <= 0:
        return {k_: 0.0 for k_ in raw}
    return {k_: v / top for k_, v in raw.items()}


@dataclass(frozen=True)
class ClusterConfig:
    variables: tuple[str, ...]
    distance: str = "euclidean"
    criterion: str = "aic"
    k_range: tuple[int, int] = (1, 15)
    pre_cluster_threshold: float = 0.0
    standardize: bool = True
    evaluation: tuple[str, ...] = ()
    variance_floor: float = 0.1
    support_margin: float = 2.0
    covariance: str = "diagonal"
    importance: str = "log_p"

    def __post_init__(self) -> None:
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "evaluation", tuple(self.evaluation))
        object.__setattr__(self, "k_range", tuple(int(v) for v in self.k_range))
        if not self.variables:
            raise ValueError("at least one clustering variable is required")
        if self.distance != "euclidean":
            raise ValueError(f"unsupported distance {self.distance!r}")
        if self.covariance not in ("diagonal", "spherical"):
            raise ValueError(f"unsupported covariance model {self.covariance!r}")
        if self.criterion not in ("aic", "bic"):
            raise ValueError(f"unsupported criterion {self.criterion!r}")
        if self.k_range[0] < 1 or self.k_range[0] > self.k_range[1]:
            raise ValueError(f"invalid k_range {self.k_range}")
        if self.pre_cluster_threshold < 0:
            raise ValueError("pre_cluster_threshold must be non-negative")

    def to_dict(self) -> dict:
        return {
            "variables": list(self.variables),
            "distance": self.distance,
            "criterion": self.criterion,
            "k_range": list(self.k_range),
            "pre_cluster_threshold": self.pre_cluster_threshold,
            "standardize": self.standardize,
            "evaluation": list(self.evaluation),
            "variance_floor": self.variance_floor,
            "covariance": self.covariance,
            "support_margin": self.support_margin,
            "importance": self.importance,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClusterConfig":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


@dataclass(frozen=True)
class ClusterModel:
    config: ClusterConfig
    k: int
    centroids: np.ndarray  # k x d, original units
    centroids_std: np.ndarray  # k x d, standardized units
    assignments: dict[str, int]
    sizes: tuple[int, ...]
    avg_silhouette: float | None
    importance: dict[str, float]
    criterion_trace: dict[int, float]
    distance_ratios: dict[int, float]
    evaluation_means: dict[str, tuple[float | None, ...]]
    n_subclusters: int

    def centroid(self, cluster: int) -> dict[str, float]:
        """Centroid as ``variable -> value``, with evaluation-field means appended."""
        out = {v: float(self.centroids[cluster, j]) for j, v in enumerate(self.config.variables)}
        for name, vals in self.evaluation_means.items():
            out[name] = vals[cluster]
        return out

    def members(self, cluster: int) -> list[str]:
        return [rid for rid, c in self.assignments.items() if c == cluster]

    def to_dict(self) -> dict:
        def num(x):
            return None if x is None or (isinstance(x, float) and not math.isfinite(x)) else float(x)

        return {
            "config": self.config.to_dict(),
            "k": self.k,
            "variables": list(self.config.variables),
            "centroids": [[float(v) for v in row] for row in self.centroids],
            "centroids_standardized": [[float(v) for v in row] for row in self.centroids_std],
            "sizes": list(self.sizes),
            "assignments": dict(self.assignments),
            "avg_silhouette": num(self.avg_silhouette),
            "importance": {k: float(v) for k, v in self.importance.items()},
            "criterion_trace": {str(k): num(v) for k, v in self.criterion_trace.items()},
            "distance_ratios": {str(k): num(v) for k, v in self.distance_ratios.items()},
            "evaluation_means": {k: [num(v) for v in vals] for k, vals in self.evaluation_means.items()},
            "n_subclusters": self.n_subclusters,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClusterModel":
        def num(x):
            return math.nan if x is None else float(x)

        return cls(
            config=ClusterConfig.from_dict(d["config"]),
            k=int(d["k"]),
            centroids=np.array(d["centroids"], dtype=float),
            centroids_std=np.array(d["centroids_standardized"], dtype=float),
            assignments={str(k): int(v) for k, v in d["assignments"].items()},
            sizes=tuple(int(s) for s in d["sizes"]),
            avg_silhouette=d["avg_silhouette"],
            importance={k: float(v) for k, v in d["importance"].items()},
            criterion_trace={int(k): num(v) for k, v in d["criterion_trace"].items()},
            distance_ratios={int(k): num(v) for k, v in d["distance_ratios"].items()},
            evaluation_means={k: tuple(v) for k, v in d["evaluation_means"].items()},
            n_subclusters=int(d["n_subclusters"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "ClusterModel":
        return cls.from_dict(json.loads(text))


class MissingValues(ValueError):
    def __init__(self, record_ids: Sequence[str]):
        self.record_ids = list(record_ids)
        shown = ", ".join(self.record_ids[:10]) + (" ..." if len(self.record_ids) > 10 else "")
        super().__init__(f"missing clustering variable values for {len(self.record_ids)} record(s): {shown}")


def _matrix(vectors, names: Sequence[str], ids: Sequence[str] | None, allow_missing: bool = False):
    if isinstance(vectors, np.ndarray) or (len(vectors) and not isinstance(vectors[0], FeatureVector)):
        X = np.asarray(vectors, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        rids = list(ids) if ids is not None else [str(i) for i in range(len(X))]
        return X, rids
    rids = [v.record_id for v in vectors]
    rows, bad = [], []
    for v in vectors:
        row = [v.get(name) for name in names]
        if any(x is None for x in row):
            bad.append(v.record_id)
            row = [math.nan if x is None else x for x in row]
        rows.append(row)
    if bad and not allow_missing:
        raise MissingValues(bad)
    return np.array(rows, dtype=float).reshape(len(rows), len(names)), rids


def cluster(vectors, config: ClusterConfig, ids: Sequence[str] | None = None, k: int | None = None) -> ClusterModel:
    """Fit a two-step cluster model.

    ``vectors`` is a sequence of :class:`FeatureVector` (variables looked up
    by name) or a plain array with optional ``ids``. Passing ``k`` fixes the
    number of clusters instead of selecting it.
    """
    X, rids = _matrix(vectors, config.variables, ids)
    if len(X) == 0:
        raise ValueError("no vectors to cluster")
    if len(set(rids)) != len(rids):
        raise ValueError("record ids must be unique")
    Z, _, _ = standardize(X) if config.standardize else (X.copy(), None, None)
    subs = pre_cluster(Z, config.pre_cluster_threshold)
    dendro = agglomerate(subs)
    if k is None:
        sel = select_k(dendro, subs, config.criterion, config.k_range, config.variance_floor, config.support_margin, config.covariance)
    else:
        sel = select_k(dendro, subs, config.criterion, (k, k), config.variance_floor, config.support_margin, config.covariance)

    leaf_labels = dendro.cut(sel.k)
    n, ls, _ = _pooled(subs, leaf_labels, sel.k)
    centers = ls / n[:, None]
    d2 = ((Z[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
    labels = np.argmin(d2, axis=1)
    # renumber non-empty clusters by first member
    order: dict[int, int] = {}
    for lab in labels:
        order.setdefault(int(lab), len(order))
    labels = np.array([order[int(lab)] for lab in labels])
    kk = len(order)

    cent_std = np.array([Z[labels == c].mean(axis=0) for c in range(kk)])
    cent = np.array([X[labels == c].mean(axis=0) for c in range(kk)])
    sizes = tuple(int((labels == c).sum()) for c in range(kk))
    sil = silhouette_avg(Z, labels)
    imp = variable_importance(Z, labels, config.variables, config.importance) if kk >= 2 else {
        v: 0.0 for v in config.variables
    }

    evaluation: dict[str, tuple[float | None, ...]] = {}
    if config.evaluation and not isinstance(vectors, np.ndarray):
        E, _ = _matrix(vectors, config.evaluation, None, allow_missing=True)
        for j, name in enumerate(config.evaluation):
            vals = []
            for c in range(kk):
                col = E[labels == c, j]
                col = col[~np.isnan(col)]
                vals.append(float(col.mean()) if col.size else None)
            evaluation[name] = tuple(vals)

    return ClusterModel(
        config=config,
        k=kk,
        centroids=cent,
        centroids_std=cent_std,
        assignments={rid: int(lab) for rid, lab in zip(rids, labels)},
        sizes=sizes,
        avg_silhouette=sil,
        importance=imp,
        criterion_trace=sel.criterion_trace,
        distance_ratios=sel.distance_ratios,
        evaluation_means=evaluation,
        n_subclusters=len(subs),
    )
