"""Population data model: strata contain clusters, clusters contain points.

A dataset is stored on disk as a bundle directory:

    meta.json      feature_dim, counts, split seed/fraction, strata list
    points.csv     point_id, x, y, label|NA, cluster_id, stratum_id
    features.csv   point_id, f0..f{d-1}        (or features.bin, see below)
    costs.json     c1, c2, budget, overrides   (written by save_cost_model)

``features.bin`` is little-endian float32, row-major, preceded by a 16-byte
header: magic ``GSOF``, u32 rows, u32 dim, u32 reserved.

All ordering is lexicographic by identifier so that identical seeds give
identical runs across platforms.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

FEATURES_BIN_MAGIC = b"GSOF"


class DatasetError(ValueError):
    """Raised when a dataset bundle or in-memory dataset violates an invariant."""


class CostError(ValueError):
    """Raised for invalid cost models or cost queries."""


@dataclass(frozen=True)
class Point:
    """One prediction unit: a feature vector at a location, optionally labeled."""

    point_id: str
    coords: tuple[float, float]
    features: np.ndarray
    label: float | None
    cluster_id: str
    stratum_id: str


@dataclass(frozen=True)
class Cluster:
    """A sampling unit: selecting it permits labeling up to k of its points."""

    cluster_id: str
    stratum_id: str
    point_ids: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.point_ids)


@dataclass(frozen=True)
class Stratum:
    """Top-level region grouping clusters; initial samples are confined to strata."""

    stratum_id: str
    cluster_ids: tuple[str, ...]
    in_initial: bool = False


@dataclass(frozen=True)
class Dataset:
    """Immutable population over which sampling and prediction happen.

    Points are kept in parallel arrays aligned with ``point_ids`` (sorted
    lexicographically). ``labels`` uses NaN for unknown (prediction-only)
    points. The train/test split is assigned at the cluster level so that the
    source set is a set of sampling units; masks are derived from
    ``split_seed`` and are reproducible from the bundle alone.
    """

    point_ids: tuple[str, ...]
    coords: np.ndarray          # (n, 2) float64
    features: np.ndarray        # (n, d) float64
    labels: np.ndarray          # (n,) float64, NaN = unknown
    point_cluster: tuple[str, ...]
    clusters: tuple[Cluster, ...]
    strata: tuple[Stratum, ...]
    train_mask: np.ndarray      # (n,) bool
    test_mask: np.ndarray       # (n,) bool
    split_seed: int = 0
    test_fraction: float = 0.2

    def __post_init__(self):
        _validate_dataset(self)

    # -- basic shape -----------------------------------------------------

    @property
    def n_points(self) -> int:
        return len(self.point_ids)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    # -- lookups (cached, ids are immutable) ------------------------------

    @cached_property
    def point_index(self) -> dict[str, int]:
        return {pid: i for i, pid in enumerate(self.point_ids)}

    @cached_property
    def cluster_index(self) -> dict[str, int]:
        return {c.cluster_id: i for i, c in enumerate(self.clusters)}

    @cached_property
    def stratum_index(self) -> dict[str, int]:
        return {s.stratum_id: i for i, s in enumerate(self.strata)}

    @cached_property
    def cluster_sizes(self) -> np.ndarray:
        return np.array([c.size for c in self.clusters], dtype=np.int64)

    @cached_property
    def point_rows_by_cluster(self) -> dict[str, np.ndarray]:
        rows: dict[str, list[int]] = {c.cluster_id: [] for c in self.clusters}
        for i, cid in enumerate(self.point_cluster):
            rows[cid].append(i)
        return {cid: np.array(r, dtype=np.int64) for cid, r in rows.items()}

    @cached_property
    def cluster_is_source(self) -> np.ndarray:
        """True for clusters whose points belong to the train split."""
        out = np.zeros(self.n_clusters, dtype=bool)
        for j, c in enumerate(self.clusters):
            rows = self.point_rows_by_cluster[c.cluster_id]
            out[j] = bool(self.train_mask[rows].all())
        return out

    @cached_property
    def labeled_mask(self) -> np.ndarray:
        return ~np.isnan(self.labels)

    def cluster(self, cluster_id: str) -> Cluster:
        try:
            return self.clusters[self.cluster_index[cluster_id]]
        except KeyError:
            raise DatasetError(f"unknown cluster id {cluster_id!r}") from None

    def stratum_of_cluster(self, cluster_id: str) -> str:
        return self.cluster(cluster_id).stratum_id

    def point(self, point_id: str) -> Point:
        try:
            i = self.point_index[point_id]
        except KeyError:
            raise DatasetError(f"unknown point id {point_id!r}") from None
        label = None if np.isnan(self.labels[i]) else float(self.labels[i])
        cid = self.point_cluster[i]
        return Point(
            point_id=point_id,
            coords=(float(self.coords[i, 0]), float(self.coords[i, 1])),
            features=self.features[i],
            label=label,
            cluster_id=cid,
            stratum_id=self.stratum_of_cluster(cid),
        )

    def source_cluster_ids(self) -> tuple[str, ...]:
        return tuple(
            c.cluster_id for j, c in enumerate(self.clusters) if self.cluster_is_source[j]
        )

    def with_initial_strata(self, stratum_ids: Iterable[str]) -> "Dataset":
        """Return a copy whose strata carry ``in_initial`` flags."""
        chosen = frozenset(stratum_ids)
        unknown = chosen - {s.stratum_id for s in self.strata}
        if unknown:
            raise DatasetError(f"unknown stratum id {sorted(unknown)[0]!r}")
        strata = tuple(
            replace(s, in_initial=s.stratum_id in chosen) for s in self.strata
        )
        return replace(self, strata=strata)


def _validate_dataset(ds: Dataset) -> None:
    n = len(ds.point_ids)
    if ds.features.ndim != 2 or ds.features.shape[0] != n:
        raise DatasetError("feature matrix shape inconsistent with point count")
    if ds.features.shape[1] < 1:
        raise DatasetError("feature dimension must be >= 1")
    if ds.coords.shape != (n, 2):
        raise DatasetError("coords must have shape (n, 2)")
    if ds.labels.shape != (n,):
        raise DatasetError("labels must have shape (n,)")
    if ds.train_mask.shape != (n,) or ds.test_mask.shape != (n,):
        raise DatasetError("split masks must have shape (n,)")
    if list(ds.point_ids) != sorted(ds.point_ids):
        raise DatasetError("point ids must be sorted lexicographically")
    if len(set(ds.point_ids)) != n:
        raise DatasetError("duplicate point ids")

    cluster_ids = [c.cluster_id for c in ds.clusters]
    if cluster_ids != sorted(cluster_ids) or len(set(cluster_ids)) != len(cluster_ids):
        raise DatasetError("cluster ids must be sorted and unique")
    stratum_ids = [s.stratum_id for s in ds.strata]
    if stratum_ids != sorted(stratum_ids) or len(set(stratum_ids)) != len(stratum_ids):
        raise DatasetError("stratum ids must be sorted and unique")

    known_clusters = set(cluster_ids)
    known_strata = set(stratum_ids)

    # points -> clusters
    for pid, cid in zip(ds.point_ids, ds.point_cluster):
        if cid not in known_clusters:
            raise DatasetError(f"point {pid!r} references unknown cluster {cid!r}")

    # clusters partition points; stratum references valid; size >= 1
    seen_points: set[str] = set()
    point_set = set(ds.point_ids)
    for c in ds.clusters:
        if c.size < 1:
            raise DatasetError(f"cluster {c.cluster_id!r} is empty")
        if c.stratum_id not in known_strata:
            raise DatasetError(
                f"cluster {c.cluster_id!r} references unknown stratum {c.stratum_id!r}"
            )
        for pid in c.point_ids:
            if pid not in point_set:
                raise DatasetError(
                    f"cluster {c.cluster_id!r} lists unknown point {pid!r}"
                )
            if pid in seen_points:
                raise DatasetError(f"point {pid!r} appears in more than one cluster")
            seen_points.add(pid)
    if seen_points != point_set:
        missing = sorted(point_set - seen_points)[0]
        raise DatasetError(f"point {missing!r} belongs to no cluster")

    # membership arrays agree with cluster rosters
    idx = {pid: i for i, pid in enumerate(ds.point_ids)}
    for c in ds.clusters:
        for pid in c.point_ids:
            if ds.point_cluster[idx[pid]] != c.cluster_id:
                raise DatasetError(
                    f"point {pid!r} membership disagrees with cluster {c.cluster_id!r}"
                )

    # strata partition clusters
    seen_clusters: set[str] = set()
    for s in ds.strata:
        for cid in s.cluster_ids:
            if cid not in known_clusters:
                raise DatasetError(
                    f"stratum {s.stratum_id!r} lists unknown cluster {cid!r}"
                )
            if cid in seen_clusters:
                raise DatasetError(f"cluster {cid!r} appears in more than one stratum")
            seen_clusters.add(cid)
    if seen_clusters != known_clusters:
        missing = sorted(known_clusters - seen_clusters)[0]
        raise DatasetError(f"cluster {missing!r} belongs to no stratum")
    by_stratum = {s.stratum_id: set(s.cluster_ids) for s in ds.strata}
    for c in ds.clusters:
        if c.cluster_id not in by_stratum[c.stratum_id]:
            raise DatasetError(
                f"cluster {c.cluster_id!r} missing from stratum {c.stratum_id!r}"
            )

    # split masks: disjoint, cover all labeled points
    if np.any(ds.train_mask & ds.test_mask):
        raise DatasetError("train/test masks overlap")
    labeled = ~np.isnan(ds.labels)
    uncovered = labeled & ~(ds.train_mask | ds.test_mask)
    if np.any(uncovered):
        pid = ds.point_ids[int(np.flatnonzero(uncovered)[0])]
        raise DatasetError(f"labeled point {pid!r} not covered by the split")


def split_masks_from_seed(
    clusters: tuple[Cluster, ...],
    point_ids: tuple[str, ...],
    labels: np.ndarray,
    split_seed: int,
    test_fraction: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Assign whole clusters to the test side until it holds ~``test_fraction``
    of the labeled points; everything else is train. Deterministic in the seed.
    """
    idx = {pid: i for i, pid in enumerate(point_ids)}
    labeled = ~np.isnan(labels)
    total_labeled = int(labeled.sum())
    rng = np.random.default_rng(split_seed)
    order = rng.permutation(len(clusters))
    test_cluster_rows: list[np.ndarray] = []
    got = 0
    target = test_fraction * total_labeled
    for j in order:
        if got >= target:
            break
        rows = np.array([idx[pid] for pid in clusters[j].point_ids], dtype=np.int64)
        test_cluster_rows.append(rows)
        got += int(labeled[rows].sum())
    test_mask = np.zeros(len(point_ids), dtype=bool)
    for rows in test_cluster_rows:
        test_mask[rows] = True
    train_mask = ~test_mask
    # prediction-only points (unknown label) stay out of both masks
    train_mask &= labeled
    test_mask &= labeled
    return train_mask, test_mask


def build_dataset(
    point_ids: Iterable[str],
    coords: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    point_cluster: Iterable[str],
    cluster_stratum: Mapping[str, str],
    split_seed: int = 0,
    test_fraction: float = 0.2,
) -> Dataset:
    """Assemble a validated Dataset from per-point rows, sorting everything
    by identifier and deriving cluster/stratum rosters and split masks."""
    pids = list(point_ids)
    pcl = list(point_cluster)
    order = np.argsort(np.array(pids, dtype=object))
    pids = [pids[i] for i in order]
    pcl = [pcl[i] for i in order]
    coords = np.asarray(coords, dtype=np.float64)[order]
    features = np.asarray(features, dtype=np.float64)[order]
    labels = np.asarray(labels, dtype=np.float64)[order]

    members: dict[str, list[str]] = {}
    for pid, cid in zip(pids, pcl):
        members.setdefault(cid, []).append(pid)
    for cid in members:
        if cid not in cluster_stratum:
            raise DatasetError(f"point references unknown cluster {cid!r}")
    clusters = tuple(
        Cluster(cid, cluster_stratum[cid], tuple(members[cid]))
        for cid in sorted(members)
    )
    rosters: dict[str, list[str]] = {}
    for cid, sid in cluster_stratum.items():
        if cid not in members:
            raise DatasetError(f"cluster {cid!r} is empty")
        rosters.setdefault(sid, []).append(cid)
    strata = tuple(
        Stratum(sid, tuple(sorted(rosters[sid]))) for sid in sorted(rosters)
    )
    train_mask, test_mask = split_masks_from_seed(
        clusters, tuple(pids), labels, split_seed, test_fraction
    )
    return Dataset(
        point_ids=tuple(pids),
        coords=coords,
        features=features,
        labels=labels,
        point_cluster=tuple(pcl),
        clusters=clusters,
        strata=strata,
        train_mask=train_mask,
        test_mask=test_mask,
        split_seed=split_seed,
        test_fraction=test_fraction,
    )


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    """Field-by-field equality (arrays compared exactly, NaN == NaN)."""
    return (
        a.point_ids == b.point_ids
        and a.point_cluster == b.point_cluster
        and a.clusters == b.clusters
        and a.strata == b.strata
        and a.split_seed == b.split_seed
        and a.test_fraction == b.test_fraction
        and np.array_equal(a.coords, b.coords)
        and np.array_equal(a.features, b.features)
        and np.array_equal(a.labels, b.labels, equal_nan=True)
        and np.array_equal(a.train_mask, b.train_mask)
        and np.array_equal(a.test_mask, b.test_mask)
    )


# -- cost model -----------------------------------------------------------


@dataclass(frozen=True)
class CostModel:
    """Per-cluster monetary costs plus a total budget.

    ``c1`` applies to clusters inside the initial strata, ``c2`` outside;
    ``per_cluster_override`` wins over both. ``initial_strata`` must be bound
    (via :meth:`with_initial_strata`) before stratum-dependent costs can be
    queried, unless ``c1 == c2``.
    """

    c1: float
    c2: float
    budget: float
    per_cluster_override: Mapping[str, float] | None = None
    initial_strata: frozenset[str] | None = None
    budget_scope: str = "augmentation"  # or "total"

    def __post_init__(self):
        if not (self.c2 >= self.c1 > 0):
            raise CostError("cost model requires c2 >= c1 > 0")
        if self.budget < 0:
            raise CostError("budget must be non-negative")
        if self.budget_scope not in ("augmentation", "total"):
            raise CostError(f"unknown budget_scope {self.budget_scope!r}")
        if self.per_cluster_override:
            for cid, v in self.per_cluster_override.items():
                if v <= 0:
                    raise CostError(f"override for {cid!r} must be positive")

    def with_initial_strata(self, stratum_ids: Iterable[str]) -> "CostModel":
        return replace(self, initial_strata=frozenset(stratum_ids))

    def with_budget(self, budget: float) -> "CostModel":
        return replace(self, budget=float(budget))


def cluster_cost(cm: CostModel, cluster: Cluster) -> float:
    """Monetary cost of adding one cluster: override, else c1 in-strata, c2 out."""
    if cm.per_cluster_override and cluster.cluster_id in cm.per_cluster_override:
        return float(cm.per_cluster_override[cluster.cluster_id])
    if cm.c1 == cm.c2:
        return float(cm.c1)
    if cm.initial_strata is None:
        raise CostError(
            "initial strata not fixed; bind the cost model with with_initial_strata()"
        )
    return float(cm.c1 if cluster.stratum_id in cm.initial_strata else cm.c2)


def set_cost(cm: CostModel, ds: Dataset, cluster_ids: Iterable[str]) -> float:
    """Sum of cluster costs over a set of cluster ids."""
    total = 0.0
    for cid in cluster_ids:
        total += cluster_cost(cm, ds.cluster(cid))
    return total


def save_cost_model(cm: CostModel, bundle: str | Path) -> None:
    path = Path(bundle) / "costs.json"
    doc = {
        "c1": cm.c1,
        "c2": cm.c2,
        "budget": cm.budget,
        "overrides": dict(cm.per_cluster_override) if cm.per_cluster_override else {},
        "budget_scope": cm.budget_scope,
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_cost_model(bundle: str | Path) -> CostModel:
    path = Path(bundle) / "costs.json"
    if not path.exists():
        raise CostError(f"missing costs.json in {bundle}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    for key in ("c1", "c2", "budget"):
        if key not in doc:
            raise CostError(f"costs.json missing field {key!r}")
    return CostModel(
        c1=float(doc["c1"]),
        c2=float(doc["c2"]),
        budget=float(doc["budget"]),
        per_cluster_override=dict(doc.get("overrides") or {}) or None,
        budget_scope=doc.get("budget_scope", "augmentation"),
    )


# -- sample state ---------------------------------------------------------


@dataclass(frozen=True)
class SampleState:
    """The realized labeled set: chosen clusters and the points labeled in them.

    ``spent`` counts the cost of augmentation clusters only (the initial
    sample is treated as sunk cost under the default budget convention).
    """

    initial_cluster_ids: tuple[str, ...]
    augment_cluster_ids: tuple[str, ...]
    labeled_points: Mapping[str, tuple[str, ...]]
    k: int
    spent: float
    initial_strata: frozenset[str]
    infeasible: bool = False
    lineage: tuple[str, ...] = ()

    def __post_init__(self):
        overlap = set(self.initial_cluster_ids) & set(self.augment_cluster_ids)
        if overlap:
            raise DatasetError(
                f"cluster {sorted(overlap)[0]!r} is in both the initial and augment sets"
            )
        if self.k < 1:
            raise DatasetError("k must be >= 1")
        for cid in self.labeled_points:
            if cid not in self.initial_cluster_ids and cid not in self.augment_cluster_ids:
                raise DatasetError(f"labeled points recorded for unselected cluster {cid!r}")

    def all_cluster_ids(self) -> tuple[str, ...]:
        return tuple(self.initial_cluster_ids) + tuple(self.augment_cluster_ids)

    def labeled_point_ids(self) -> tuple[str, ...]:
        out: list[str] = []
        for cid in self.all_cluster_ids():
            out.extend(self.labeled_points.get(cid, ()))
        return tuple(out)

    @property
    def n_labeled(self) -> int:
        return sum(len(v) for v in self.labeled_points.values())

    def with_lineage(self, *entries: str) -> "SampleState":
        return replace(self, lineage=self.lineage + entries)


def validate_sample_state(ds: Dataset, state: SampleState) -> None:
    """Check a sample against its dataset: cluster refs, per-cluster caps."""
    for cid in state.all_cluster_ids():
        c = ds.cluster(cid)
        labeled = state.labeled_points.get(cid, ())
        if len(labeled) > min(state.k, c.size):
            raise DatasetError(
                f"cluster {cid!r} has {len(labeled)} labeled points, cap is "
                f"{min(state.k, c.size)}"
            )
        member = set(c.point_ids)
        for pid in labeled:
            if pid not in member:
                raise DatasetError(f"point {pid!r} labeled under wrong cluster {cid!r}")


def save_sample_state(state: SampleState, path: str | Path) -> None:
    doc = {
        "initial_cluster_ids": list(state.initial_cluster_ids),
        "augment_cluster_ids": list(state.augment_cluster_ids),
        "labeled_points": {cid: list(pids) for cid, pids in state.labeled_points.items()},
        "k": state.k,
        "spent": state.spent,
        "initial_strata": sorted(state.initial_strata),
        "infeasible": state.infeasible,
        "lineage": list(state.lineage),
    }
    Path(path).write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_sample_state(path: str | Path) -> SampleState:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return SampleState(
        initial_cluster_ids=tuple(doc["initial_cluster_ids"]),
        augment_cluster_ids=tuple(doc["augment_cluster_ids"]),
        labeled_points={cid: tuple(pids) for cid, pids in doc["labeled_points"].items()},
        k=int(doc["k"]),
        spent=float(doc["spent"]),
        initial_strata=frozenset(doc["initial_strata"]),
        infeasible=bool(doc.get("infeasible", False)),
        lineage=tuple(doc.get("lineage", ())),
    )


# -- expected labeled-point counts ----------------------------------------


@dataclass(frozen=True)
class ExpectedCounts:
    """Per-cluster expected labeled points under uniform within-cluster choice.

    ``e[i] = min(k, size_i)`` and ``e_group[i, g]`` splits ``e[i]``
    proportionally to the cluster's group composition, so the group marginals
    sum back to ``e[i]`` exactly.
    """

    cluster_ids: tuple[str, ...]
    e: np.ndarray           # (m,)
    e_group: np.ndarray     # (m, G); G = 0 when built without groups
    k: int


def expected_counts(ds: Dataset, gm, k: int) -> ExpectedCounts:
    """Expected labeled points per cluster (and per group) when labeling
    ``min(k, size)`` points uniformly at random within each selected cluster.

    ``gm`` may be None for group-free (size-only) uses.
    """
    if k < 1:
        raise DatasetError("k must be >= 1")
    m = ds.n_clusters
    sizes = ds.cluster_sizes.astype(np.float64)
    e = np.minimum(float(k), sizes)
    if gm is None:
        e_group = np.zeros((m, 0))
    else:
        G = len(gm.gamma)
        e_group = np.zeros((m, G))
        for j, c in enumerate(ds.clusters):
            rows = ds.point_rows_by_cluster[c.cluster_id]
            counts = np.bincount(gm.assignment[rows], minlength=G).astype(np.float64)
            e_group[j] = e[j] * counts / sizes[j]
    return ExpectedCounts(
        cluster_ids=tuple(c.cluster_id for c in ds.clusters),
        e=e,
        e_group=e_group,
        k=k,
    )


# -- bundle I/O -----------------------------------------------------------


def _format_float(x: float) -> str:
    return repr(float(x))


def save_dataset(ds: Dataset, path: str | Path, features_format: str = "csv") -> None:
    """Write a dataset bundle; ``load_dataset`` reproduces it exactly.

    ``features_format='bin'`` stores features as float32 and is only lossless
    when the feature values are float32-representable.
    """
    if features_format not in ("csv", "bin"):
        raise DatasetError(f"unknown features format {features_format!r}")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)

    features_file = "features.csv" if features_format == "csv" else "features.bin"
    meta = {
        "feature_dim": ds.feature_dim,
        "n_points": ds.n_points,
        "n_clusters": ds.n_clusters,
        "n_strata": len(ds.strata),
        "split_seed": ds.split_seed,
        "test_fraction": ds.test_fraction,
        "features_file": features_file,
        "strata": [
            {
                "stratum_id": s.stratum_id,
                "cluster_ids": list(s.cluster_ids),
                "in_initial": s.in_initial,
            }
            for s in ds.strata
        ],
    }
    (out / "meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    with (out / "points.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["point_id", "x", "y", "label", "cluster_id", "stratum_id"])
        for i, pid in enumerate(ds.point_ids):
            label = ds.labels[i]
            cid = ds.point_cluster[i]
            w.writerow(
                [
                    pid,
                    _format_float(ds.coords[i, 0]),
                    _format_float(ds.coords[i, 1]),
                    "NA" if np.isnan(label) else _format_float(label),
                    cid,
                    ds.stratum_of_cluster(cid),
                ]
            )

    if features_format == "csv":
        with (out / "features.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["point_id"] + [f"f{j}" for j in range(ds.feature_dim)])
            for i, pid in enumerate(ds.point_ids):
                w.writerow([pid] + [_format_float(v) for v in ds.features[i]])
    else:
        with (out / "features.bin").open("wb") as fh:
            fh.write(FEATURES_BIN_MAGIC)
            fh.write(struct.pack("<III", ds.n_points, ds.feature_dim, 0))
            fh.write(ds.features.astype("<f4").tobytes(order="C"))


def load_dataset(path: str | Path) -> Dataset:
    """Load and fully validate a dataset bundle written by :func:`save_dataset`."""
    root = Path(path)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise DatasetError(f"missing meta.json in {root}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    d = int(meta["feature_dim"])

    points_path = root / "points.csv"
    if not points_path.exists():
        raise DatasetError(f"missing points.csv in {root}")
    with points_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expect = ["point_id", "x", "y", "label", "cluster_id", "stratum_id"]
        if header != expect:
            missing = [c for c in expect if header is None or c not in header]
            raise DatasetError(f"points.csv missing columns {missing}")
        rows = list(reader)

    pids = [r[0] for r in rows]
    coords = np.array([[float(r[1]), float(r[2])] for r in rows], dtype=np.float64)
    labels = np.array(
        [np.nan if r[3] == "NA" else float(r[3]) for r in rows], dtype=np.float64
    )
    point_cluster = [r[4] for r in rows]

    # the strata list in meta.json is the authoritative cluster table
    cluster_stratum: dict[str, str] = {}
    for entry in meta.get("strata", []):
        for cid in entry.get("cluster_ids", []):
            if cid in cluster_stratum:
                raise DatasetError(f"cluster {cid!r} listed under two strata")
            cluster_stratum[cid] = entry["stratum_id"]
    if not cluster_stratum:
        raise DatasetError("meta.json strata list carries no cluster rosters")
    for r in rows:
        if r[4] not in cluster_stratum:
            raise DatasetError(
                f"point {r[0]!r} references cluster {r[4]!r} absent from the "
                f"cluster table"
            )
        if cluster_stratum[r[4]] != r[5]:
            raise DatasetError(
                f"cluster {r[4]!r} stratum mismatch: table says "
                f"{cluster_stratum[r[4]]!r}, points.csv says {r[5]!r}"
            )
    if len(cluster_stratum) != int(meta.get("n_clusters", len(cluster_stratum))):
        raise DatasetError("meta.json n_clusters disagrees with the cluster table")

    features_file = meta.get("features_file")
    if features_file is None:
        if (root / "features.csv").exists():
            features_file = "features.csv"
        elif (root / "features.bin").exists():
            features_file = "features.bin"
        else:
            raise DatasetError(f"no features.csv or features.bin in {root}")
    fpath = root / features_file
    if not fpath.exists():
        raise DatasetError(f"missing {features_file} in {root}")

    if features_file.endswith(".csv"):
        with fpath.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            expect = ["point_id"] + [f"f{j}" for j in range(d)]
            if header != expect:
                raise DatasetError(
                    f"features.csv header mismatch: expected {len(expect)} columns"
                )
            feat_rows = {r[0]: r[1:] for r in reader}
        if set(feat_rows) != set(pids):
            orphan = sorted(set(pids) ^ set(feat_rows))[0]
            raise DatasetError(f"feature table does not match points ({orphan!r})")
        features = np.array(
            [[float(v) for v in feat_rows[pid]] for pid in pids], dtype=np.float64
        )
        if features.shape[1] != d:
            raise DatasetError(
                f"inconsistent feature dimension: meta says {d}, table has "
                f"{features.shape[1]}"
            )
    else:
        blob = fpath.read_bytes()
        if blob[:4] != FEATURES_BIN_MAGIC:
            raise DatasetError("features.bin has wrong magic")
        nrows, dim, _reserved = struct.unpack("<III", blob[4:16])
        if nrows != len(pids) or dim != d:
            raise DatasetError(
                f"features.bin header ({nrows} x {dim}) disagrees with meta "
                f"({len(pids)} x {d})"
            )
        features = (
            np.frombuffer(blob[16:], dtype="<f4", count=nrows * dim)
            .reshape(nrows, dim)
            .astype(np.float64)
        )

    ds = build_dataset(
        point_ids=pids,
        coords=coords,
        features=features,
        labels=labels,
        point_cluster=point_cluster,
        cluster_stratum=cluster_stratum,
        split_seed=int(meta.get("split_seed", 0)),
        test_fraction=float(meta.get("test_fraction", 0.2)),
    )
    in_initial = [
        s["stratum_id"] for s in meta.get("strata", []) if s.get("in_initial")
    ]
    if in_initial:
        ds = ds.with_initial_strata(in_initial)
    return ds
