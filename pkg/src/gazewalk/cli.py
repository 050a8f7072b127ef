"""Command-line driver: subcommands for each pipeline stage plus a full ``run``."""
from __future__ import annotations

import argparse
import copy
import csv
import datetime as _dt
import hashlib
import io
import json
import os
import platform
import shutil
import sys
from dataclasses import dataclass
from importlib import metadata as importlib_metadata
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from gazewalk import __version__
from gazewalk.features import (
    FeatureVector,
    corpus_gaze_shares,
    detect_stops,
    extract_features,
    read_feature_table,
    write_feature_table,
)
from gazewalk.figures import CorpusStats, FigureLabel, TaxonomyRules, figure_summary, label_clusters, record_labels
from gazewalk.observation import ObservationArea, TrajectoryRecord, dumps_csv, dumps_jsonl, filter_eligible, parse_records
from gazewalk.spatial import GridField, GridSpec, KernelSpec, export_geojson, export_raster, kde, rasterize_mean, route_counts
from gazewalk.stats import SampleSizeParams, cochran_n, descriptive_report, read_counts, t_test, table_to_csv
from gazewalk.synth import generate, load_archetypes
from gazewalk.twostep import ClusterConfig, ClusterModel, cluster

ENV_OUT = "GAZEWALK_OUT"
DEFAULT_OUT = "gazewalk-out"
SUBSETS = ("walkers_only", "walk_stop")
MODEL_KIND = {"walkers_only": "walkers", "walk_stop": "walk_stop"}
BUNDLED = {
    "area": "data/area.geojson",
    "counts": "data/passersby_counts.csv",
    "archetypes": "data/archetypes.yaml",
    "rules": "data/rules.yaml",
}


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException | str):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {cause}")


class MissingInput(FileNotFoundError):
    def __init__(self, role: str, path: Path):
        self.role, self.path = role, path
        super().__init__(f"{role} file not found: {path}")


# --------------------------------------------------------------------------- config


def _bundled_text(rel: str) -> str:
    return resources.files("gazewalk").joinpath(rel).read_text()


def _deep_merge(base: dict, override: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass(frozen=True)
class RunConfig:
    """Resolved pipeline configuration; ``settings`` is the merged config document."""

    settings: dict

    @classmethod
    def load(cls, path: str | Path | None = None, seed: int | None = None) -> "RunConfig":
        doc = yaml.safe_load(_bundled_text("data/config.yaml"))
        if path is not None:
            path = Path(path)
            if not path.is_file():
                raise MissingInput("config", path)
            user = yaml.safe_load(path.read_text()) or {}
            if not isinstance(user, Mapping):
                raise ValueError(f"config {path} must be a mapping")
            unknown = set(user) - set(doc)
            if unknown:
                raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
            for role, value in (user.get("inputs") or {}).items():
                if role not in doc["inputs"]:
                    raise ValueError(f"unknown input {role!r}")
                if value is not None and not Path(value).is_absolute():
                    user["inputs"][role] = str((path.parent / value).resolve())
            doc = _deep_merge(doc, user)
        if seed is not None:
            doc["seed"] = int(seed)
        cfg = cls(doc)
        cfg.cluster_configs()  # validate early
        cfg.kernel()
        cfg.ttest_groups()
        return cfg

    @property
    def seed(self) -> int:
        return int(self.settings["seed"])

    def input_path(self, role: str) -> Path | None:
        v = self.settings["inputs"].get(role)
        return Path(v) if v is not None else None

    def input_text(self, role: str) -> str:
        """Text of an input file, or of the bundled default when unset."""
        p = self.input_path(role)
        if p is None:
            return _bundled_text(BUNDLED[role])
        if not p.is_file():
            raise MissingInput(role, p)
        return p.read_text()

    def cluster_configs(self) -> dict[str, ClusterConfig]:
        return {s: ClusterConfig.from_dict(self.settings["clustering"][s]) for s in SUBSETS}

    def kernel(self) -> KernelSpec:
        k = self.settings["kernel"]
        return KernelSpec(float(k["bandwidth"]), k["shape"], k["normalization"])

    def ttest_groups(self) -> tuple[str, str]:
        groups = self.settings["ttest"].get("groups")
        known = {f.family for f in FigureLabel} | {f.value for f in FigureLabel}
        if not isinstance(groups, (list, tuple)) or len(groups) != 2 or not set(groups) <= known or groups[0] == groups[1]:
            raise ValueError(f"ttest.groups must name two different figure families or labels, got {groups!r}")
        if self.settings["ttest"].get("variant") not in ("pooled", "welch"):
            raise ValueError(f"unknown t-test variant {self.settings['ttest'].get('variant')!r}")
        return tuple(groups)

    def digest(self) -> str:
        canon = json.dumps(self.settings, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def check_inputs(self) -> None:
        for role in self.settings["inputs"]:
            p = self.input_path(role)
            if p is not None and not p.is_file():
                raise MissingInput(role, p)
        if self.input_path("metadata") is not None and self.input_path("records") is None:
            raise ValueError("inputs.metadata is set but inputs.records is not")


# --------------------------------------------------------------------------- stage helpers


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def load_area(cfg: RunConfig, path: str | Path | None = None) -> ObservationArea:
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise MissingInput("area", path)
        return ObservationArea.from_geojson(path.read_text())
    return ObservationArea.from_geojson(cfg.input_text("area"))


def read_records_file(path: str | Path, metadata: str | Path | None = None) -> list[TrajectoryRecord]:
    path = Path(path)
    if not path.is_file():
        raise MissingInput("records", path)
    if path.suffix.lower() == ".csv":
        if metadata is None:
            raise ValueError("CSV samples need a metadata CSV (--metadata)")
        meta = Path(metadata)
        if not meta.is_file():
            raise MissingInput("metadata", meta)
        return parse_records(path.read_text(), format="csv", metadata=meta.read_text())
    return parse_records(path.read_text(), format="json_lines")


def load_features(path: str | Path) -> list[FeatureVector]:
    path = Path(path)
    if not path.is_file():
        raise MissingInput("features", path)
    return read_feature_table(path.read_text())


def split_subsets(vectors: Sequence[FeatureVector]) -> dict[str, list[FeatureVector]]:
    """Walkers who never paused vs walkers with at least one stop."""
    return {
        "walkers_only": [v for v in vectors if v.n_stops == 0],
        "walk_stop": [v for v in vectors if v.n_stops > 0],
    }


def fit_subset(vectors: Sequence[FeatureVector], config: ClusterConfig, k: int | None = None) -> ClusterModel:
    return cluster(list(vectors), config, ids=[v.record_id for v in vectors], k=k)


def model_kind(model: ClusterModel) -> str:
    return "walk_stop" if any(v.endswith("_stat") for v in model.config.variables) else "walkers"


def labels_rows(subset: str, model: ClusterModel, names: Mapping[int, FigureLabel]) -> list[dict]:
    return [
        {"record_id": rid, "subset": subset, "cluster": c, "figure": names[c].value, "family": names[c].family}
        for rid, c in sorted(model.assignments.items())
    ]


def cluster_rows(subset: str, model: ClusterModel, names: Mapping[int, FigureLabel]) -> list[dict]:
    rows = []
    for c in range(model.k):
        row = {"subset": subset, "cluster": c, "figure": names[c].value, "size": model.sizes[c]}
        for name, value in model.centroid(c).items():
            row[name] = value
        rows.append(row)
    return rows


def read_labels(path: str | Path) -> dict[str, FigureLabel]:
    path = Path(path)
    if not path.is_file():
        raise MissingInput("labels", path)
    return {row["record_id"]: FigureLabel(row["figure"]) for row in csv.DictReader(io.StringIO(path.read_text()))}


def spatial_fields(
    records: Sequence[TrajectoryRecord],
    features: Mapping[str, FeatureVector],
    area: ObservationArea,
    cell: float,
    kernel: KernelSpec,
    labels: Mapping[str, FigureLabel] | None = None,
) -> dict[str, GridField]:
    grid = GridSpec.covering(area.boundary.bounds, cell, area.grid_origin)
    routes = [(r, r.positions()) for r in records]
    stops = [(e, r.id) for r in records for e in detect_stops(r)]
    pts = np.array([e.centroid for e, _ in stops], dtype=float).reshape(-1, 2)
    fields = {
        "screen_walk_mean": rasterize_mean([(p, features[r.id].pct_screen_walk) for r, p in routes], grid),
        "wander_walk_mean": rasterize_mean([(p, features[r.id].pct_wander_walk) for r, p in routes], grid),
        "route_count": route_counts([p for _, p in routes], grid),
        "stop_density": kde(pts, [e.duration for e, _ in stops], grid, kernel),
        "stop_screen_density": kde(pts, [e.screen_seconds for e, _ in stops], grid, kernel),
    }
    if labels:
        for family in ("post_flaneur", "smartphone_zombie"):
            fields[f"route_count_{family}"] = route_counts(
                [p for r, p in routes if r.id in labels and labels[r.id].family == family], grid
            )
    return fields


def write_fields(fields: Mapping[str, GridField], out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, f in fields.items():
        export_raster(f, out / f"{name}.asc")
        export_geojson(f, out / f"{name}.geojson", name=name)


def stats_tables(
    cfg: RunConfig,
    records: Sequence[TrajectoryRecord],
    features: Mapping[str, FeatureVector] | None = None,
    labels: Mapping[str, FigureLabel] | None = None,
) -> dict[str, list[dict]]:
    tables = descriptive_report(read_counts(cfg.input_text("counts")), records)
    if records:
        shares = corpus_gaze_shares(records)
        tables["gaze_shares"] = [{"measure": k, "pct": 100.0 * v} for k, v in shares.items()]
        n = cochran_n(SampleSizeParams(N=len(records)))
        tables["sample_size"] = [{"population": len(records), "confidence": 0.90, "precision": 0.05, "proportion": 0.5, "n": n}]
    if labels and features:
        # each group is a figure family or a single figure label
        group_a, group_b = cfg.ttest_groups()
        speeds = {group_a: [], group_b: []}
        for rid, lab in sorted(labels.items()):
            v = features.get(rid)
            if v is None or v.walking_speed is None:
                continue
            for g in speeds:
                if g in (lab.family, lab.value):
                    speeds[g].append(v.walking_speed)
        if all(len(v) >= 2 for v in speeds.values()):
            res = t_test(speeds[group_a], speeds[group_b], cfg.settings["ttest"]["variant"])
            tables["speed_ttest"] = [
                {
                    "group_a": group_a,
                    "group_b": group_b,
                    "variant": res.variant,
                    "n_a": res.n_a,
                    "n_b": res.n_b,
                    "mean_a": res.mean_a,
                    "mean_b": res.mean_b,
                    "sd_a": res.sd_a,
                    "sd_b": res.sd_b,
                    "t": res.t,
                    "df": res.df,
                    "p": res.p,
                }
            ]
    return tables


def write_tables(tables: Mapping[str, list[dict]], out: Path, decimals: int | None = 4) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, rows in tables.items():
        (out / f"{name}.csv").write_text(table_to_csv(rows, decimals=decimals))


def _versions() -> dict[str, str]:
    out = {"gazewalk": __version__, "python": platform.python_version()}
    for dist in ("numpy", "scipy", "shapely", "PyYAML"):
        try:
            out[dist.lower()] = importlib_metadata.version(dist)
        except importlib_metadata.PackageNotFoundError:
            out[dist.lower()] = "unknown"
    return out


# --------------------------------------------------------------------------- full run


def _stage(name: str):
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, (PipelineError, MissingInput)):
                raise PipelineError(name, exc) from exc
            return False

    return _Ctx()


def run_pipeline(cfg: RunConfig, out: str | Path) -> dict:
    """Run every stage into ``out``; returns the manifest.

    The bundle is assembled in a sibling temporary directory and moved into
    place only when complete, so a failed run leaves nothing behind.
    """
    out = Path(out)
    cfg.check_inputs()
    if out.exists() and any(out.iterdir()) and not (out / "manifest.json").is_file():
        raise PipelineError("setup", f"output directory {out} is not empty and holds no previous bundle")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.parent / f".{out.name}.partial"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir()
    try:
        manifest = _build_bundle(cfg, tmp)
        if out.exists():
            shutil.rmtree(out)
        tmp.rename(out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return manifest


def _build_bundle(cfg: RunConfig, tmp: Path) -> dict:
    with _stage("ingest"):
        area = load_area(cfg)
        rec_path = cfg.input_path("records")
        if rec_path is None:
            raw = generate(area, load_archetypes(cfg.input_text("archetypes")), cfg.seed, min_path=cfg.settings["filter"]["min_path"])
        else:
            raw = read_records_file(rec_path, cfg.input_path("metadata"))
        for r in raw:
            area.check_gates(r)
        records, excluded = filter_eligible(raw, cfg.settings["filter"]["min_path"], cfg.settings["filter"]["runner_speed"])
        if not records:
            raise ValueError("no eligible records")
        (tmp / "records.jsonl").write_text(dumps_jsonl(records))
        rows = [{"record_id": e.record.id, "reason": e.reason} for e in excluded]
        (tmp / "exclusions.csv").write_text(table_to_csv(rows) or "record_id,reason\n")

    with _stage("features"):
        vectors = [extract_features(r) for r in records]
        by_id = {v.record_id: v for v in vectors}
        (tmp / "features.csv").write_text(write_feature_table(vectors))

    with _stage("cluster"):
        models = {}
        for subset, vecs in split_subsets(vectors).items():
            if len(vecs) < 2:
                raise ValueError(f"subset {subset} has {len(vecs)} records; at least 2 are needed")
            models[subset] = fit_subset(vecs, cfg.cluster_configs()[subset])
            (tmp / f"model_{subset}.json").write_text(models[subset].to_json() + "\n")

    with _stage("classify"):
        rules = TaxonomyRules.from_yaml(cfg.input_text("rules"))
        corpus = CorpusStats.from_features(vectors)
        labels: dict[str, FigureLabel] = {}
        label_table, cluster_table = [], []
        for subset, model in models.items():
            names = label_clusters(model, rules, corpus, MODEL_KIND[subset])
            labels.update(record_labels(model, names))
            label_table += labels_rows(subset, model, names)
            cluster_table += cluster_rows(subset, model, names)
        write_tables({"labels": label_table, "clusters": cluster_table}, tmp, decimals=None)
        write_tables(figure_summary(records, labels, vectors), tmp / "figures")

    with _stage("spatial"):
        fields = spatial_fields(records, by_id, area, float(cfg.settings["grid"]["cell"]), cfg.kernel(), labels)
        write_fields(fields, tmp / "rasters")

    with _stage("stats"):
        write_tables(stats_tables(cfg, records, by_id, labels), tmp / "stats")

    with _stage("manifest"):
        inputs = {}
        for role in cfg.settings["inputs"]:
            p = cfg.input_path(role)
            if p is not None:
                inputs[role] = {"path": str(p), "sha256": sha256_file(p)}
            elif role in BUNDLED:
                inputs[role] = {"path": f"<bundled>/{BUNDLED[role]}", "sha256": hashlib.sha256(_bundled_text(BUNDLED[role]).encode()).hexdigest()}
        outputs = {
            str(p.relative_to(tmp)): sha256_file(p) for p in sorted(tmp.rglob("*")) if p.is_file()
        }
        manifest = {
            "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            "seed": cfg.seed,
            "config_sha256": cfg.digest(),
            "config": cfg.settings,
            "inputs": inputs,
            "versions": _versions(),
            "counts": {
                "eligible": len(records),
                "excluded": len(excluded),
                **{f"{s}_records": len(m.assignments) for s, m in models.items()},
                **{f"{s}_k": m.k for s, m in models.items()},
            },
            "outputs": outputs,
        }
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# --------------------------------------------------------------------------- subcommands


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(ENV_OUT) or DEFAULT_OUT)


def _cmd_synth(args, cfg: RunConfig) -> int:
    area = load_area(cfg, args.area)
    if args.archetypes and not Path(args.archetypes).is_file():
        raise MissingInput("archetypes", Path(args.archetypes))
    text = Path(args.archetypes).read_text() if args.archetypes else cfg.input_text("archetypes")
    records = generate(area, load_archetypes(text), cfg.seed, min_path=cfg.settings["filter"]["min_path"])
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    if args.format == "csv":
        samples, meta = dumps_csv(records)
        (out / "samples.csv").write_text(samples)
        (out / "metadata.csv").write_text(meta)
    else:
        (out / "records.jsonl").write_text(dumps_jsonl(records))
    print(f"wrote {len(records)} synthetic records to {out}")
    return 0


def _cmd_ingest(args, cfg: RunConfig) -> int:
    records = read_records_file(args.records, args.metadata)
    area = load_area(cfg, args.area)
    for r in records:
        area.check_gates(r)
    eligible, excluded = filter_eligible(records, cfg.settings["filter"]["min_path"], cfg.settings["filter"]["runner_speed"])
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    (out / "records.jsonl").write_text(dumps_jsonl(eligible))
    rows = [{"record_id": e.record.id, "reason": e.reason} for e in excluded]
    (out / "exclusions.csv").write_text(table_to_csv(rows) or "record_id,reason\n")
    print(f"{len(eligible)} eligible, {len(excluded)} excluded")
    return 0


def _cmd_features(args, cfg: RunConfig) -> int:
    records = read_records_file(args.records, args.metadata)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    (out / "features.csv").write_text(write_feature_table(extract_features(r) for r in records))
    print(f"wrote features for {len(records)} records")
    return 0


def _cmd_cluster(args, cfg: RunConfig) -> int:
    vectors = load_features(args.features)
    subsets = split_subsets(vectors)
    chosen = SUBSETS if args.subset == "both" else (args.subset,)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    for subset in chosen:
        model = fit_subset(subsets[subset], cfg.cluster_configs()[subset], k=args.k)
        (out / f"model_{subset}.json").write_text(model.to_json() + "\n")
        sil = "n/a" if model.avg_silhouette is None else f"{model.avg_silhouette:.2f}"
        print(f"{subset}: k={model.k} sizes={list(model.sizes)} silhouette={sil}")
    return 0


def _cmd_classify(args, cfg: RunConfig) -> int:
    vectors = load_features(args.features)
    rules = TaxonomyRules.load(args.rules) if args.rules else TaxonomyRules.from_yaml(cfg.input_text("rules"))
    corpus = CorpusStats.from_features(vectors)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    labels: dict[str, FigureLabel] = {}
    label_table, cluster_table = [], []
    for path in args.models:
        p = Path(path)
        if not p.is_file():
            raise MissingInput("model", p)
        model = ClusterModel.from_json(p.read_text())
        kind = model_kind(model)
        subset = "walk_stop" if kind == "walk_stop" else "walkers_only"
        names = label_clusters(model, rules, corpus, kind)
        labels.update(record_labels(model, names))
        label_table += labels_rows(subset, model, names)
        cluster_table += cluster_rows(subset, model, names)
        for c, lab in names.items():
            print(f"{subset} cluster {c}: {lab.value}")
    write_tables({"labels": label_table, "clusters": cluster_table}, out, decimals=None)
    if args.records:
        records = read_records_file(args.records, args.metadata)
        write_tables(figure_summary(records, labels, vectors), out / "figures")
    return 0


def _cmd_heatmap(args, cfg: RunConfig) -> int:
    records = read_records_file(args.records, args.metadata)
    area = load_area(cfg, args.area)
    vectors = load_features(args.features) if args.features else [extract_features(r) for r in records]
    labels = read_labels(args.labels) if args.labels else None
    fields = spatial_fields(
        records, {v.record_id: v for v in vectors}, area, float(cfg.settings["grid"]["cell"]), cfg.kernel(), labels
    )
    out = _out_dir(args) / "rasters"
    write_fields(fields, out)
    print(f"wrote {len(fields)} raster fields to {out}")
    return 0


def _cmd_stats(args, cfg: RunConfig) -> int:
    records = read_records_file(args.records, args.metadata) if args.records else []
    if args.counts:
        p = Path(args.counts)
        if not p.is_file():
            raise MissingInput("counts", p)
        cfg.settings["inputs"]["counts"] = str(p)
    features = {v.record_id: v for v in (extract_features(r) for r in records)}
    labels = read_labels(args.labels) if args.labels else None
    tables = stats_tables(cfg, records, features, labels)
    if not records:
        tables = {"smartphone_share": tables["smartphone_share"]}
    out = _out_dir(args) / "stats"
    write_tables(tables, out)
    for row in tables["smartphone_share"]:
        print(f"{row['age_group']}: {row['pct_total']:.2f}% smartphone users")
    return 0


def _cmd_run(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    manifest = run_pipeline(cfg, out)
    c = manifest["counts"]
    print(
        f"bundle written to {out}: {c['eligible']} records, "
        f"walkers_only k={c['walkers_only_k']}, walk_stop k={c['walk_stop_k']}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="YAML config file merged over the defaults")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (overrides the config)")
    common.add_argument(
        "--out", default=argparse.SUPPRESS, help=f"output directory (default: ${ENV_OUT} or ./{DEFAULT_OUT})"
    )

    parser = argparse.ArgumentParser(
        prog="gazewalk",
        description="Gaze-coded pedestrian trajectories: features, two-step clustering, figures, heatmaps, statistics.",
        parents=[common],
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def records_args(p, required=True):
        if required:
            p.add_argument("records", help="records file (.jsonl, or samples .csv with --metadata)")
        else:
            p.add_argument("--records", help="records file (.jsonl, or samples .csv with --metadata)")
        p.add_argument("--metadata", help="per-record metadata CSV for CSV samples")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus from archetypes")
    p.add_argument("--archetypes", help="archetypes YAML (default: bundled)")
    p.add_argument("--area", help="observation area GeoJSON (default: bundled)")
    p.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", parents=[common], help="parse, validate and filter records")
    records_args(p)
    p.add_argument("--area", help="observation area GeoJSON used to check gates (default: bundled)")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("features", parents=[common], help="write the per-record feature table")
    records_args(p)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("cluster", parents=[common], help="fit two-step cluster models from a feature table")
    p.add_argument("features", help="feature table CSV")
    p.add_argument("--subset", choices=(*SUBSETS, "both"), default="both")
    p.add_argument("--k", type=int, help="fix the number of clusters instead of selecting it")
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("classify", parents=[common], help="label clusters with figures and summarise them")
    p.add_argument("models", nargs="+", help="cluster model JSON files")
    p.add_argument("--features", required=True, help="feature table CSV (gives the corpus mean speed)")
    p.add_argument("--rules", help="taxonomy rules YAML (default: bundled)")
    records_args(p, required=False)
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("heatmap", parents=[common], help="rasterise routes and stop densities")
    records_args(p)
    p.add_argument("--features", help="feature table CSV (computed from records when omitted)")
    p.add_argument("--labels", help="labels CSV from classify, adds per-family route counts")
    p.add_argument("--area", help="observation area GeoJSON (default: bundled)")
    p.set_defaults(func=_cmd_heatmap)

    p = sub.add_parser("stats", parents=[common], help="descriptive tables, sample size and speed t-test")
    records_args(p, required=False)
    p.add_argument("--counts", help="passer-by counts CSV (default: bundled)")
    p.add_argument("--labels", help="labels CSV from classify, enables the speed t-test")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("run", parents=[common], help="run the full pipeline and write a bundle")
    p.set_defaults(func=_cmd_run)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("config", "seed", "out"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        cfg = RunConfig.load(args.config, args.seed)
        return args.func(args, cfg)
    except MissingInput as exc:
        print(f"gazewalk: error: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        cause = exc.cause
        if isinstance(cause, MissingInput):
            print(f"gazewalk: error: {cause}", file=sys.stderr)
        else:
            print(f"gazewalk: error in stage {exc.stage}: {cause}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"gazewalk: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
