"""Experiment orchestration: augmentation comparison, utility rank study,
cost-structure sweep, and initial-size sweep.

Every emitted table carries provenance columns (seed, config hash, dataset
content hash) and is written deterministically: rerunning a command with the
same config and seeds into a fresh directory reproduces the files byte for
byte. Aggregates report both the standard deviation and the standard error;
infeasible cells are reported as such, never silently truncated.
"""

from __future__ import annotations

import csv
import hashlib
import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import CostModel, Dataset, SampleState, load_dataset, set_cost
from .groups import GroupModel, admin_groups, feature_kmeans_groups
from .learner import LearnerError, evaluate_sample, spearman_rho
from .samplers import (
    ConvenienceConfig,
    SamplerConfig,
    SamplingError,
    convenience_sample,
    default_cluster_augment,
    draw_initial_sample,
    greedy_size_augment,
    optimized_augment,
    random_cluster_augment,
    random_point_sample,
)
from .optimizer import SolveOptions
from .synth import SynthConfig, generate
from .utility import UtilitySpec, utility_of_sample


class ConfigError(ValueError):
    pass


BASELINES = ("default", "greedy", "random")


@dataclass(frozen=True)
class UtilityConfig:
    """JSON-friendly description of an optimized-augmentation method."""

    kind: str = "group_rep"      # size | group_rep
    groups: str = "admin"        # admin | feature (group_rep only)
    lam: float = 0.5
    epsilon: float = 1e-6
    n_groups: int = 8
    group_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("size", "group_rep"):
            raise ConfigError(f"unknown utility kind {self.kind!r}")
        if self.kind == "group_rep" and self.groups not in ("admin", "feature"):
            raise ConfigError(f"unknown group source {self.groups!r}")

    def method_name(self) -> str:
        return "opt-size" if self.kind == "size" else f"rep-{self.groups}"


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str | None = None
    synth: SynthConfig | None = None
    # initial sample
    n_strata: int = 2
    k: int = 10
    initial_size: int = 100
    strata_seed: int = 0
    # costs
    c1: float = 25.0
    c2: float = 50.0
    budgets: tuple[float, ...] = (100.0,)
    c2_sweep: tuple[float, ...] = (25.0, 30.0, 40.0, 50.0)
    budget_scope: str = "augmentation"
    # methods
    baselines: tuple[str, ...] = BASELINES
    utilities: tuple[UtilityConfig, ...] = (UtilityConfig(),)
    # rank study
    rank_sizes: tuple[int, ...] = tuple(range(100, 1001, 100))
    convenience_temperature: float = 0.025
    convenience_anchors: tuple[tuple[float, float], ...] | None = None
    n_anchors: int = 3
    # initial-size sweep
    initial_sizes: tuple[int, ...] = (50, 100, 150)
    # seeds and solver
    seeds: tuple[int, ...] = (0,)
    max_iters: int = 500
    gap_tol: float = 1e-6
    step_rule: str = "diminishing"

    def __post_init__(self):
        if (self.dataset is None) == (self.synth is None):
            raise ConfigError("exactly one of dataset path or synth config is required")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if any(b < 0 for b in self.budgets):
            raise ConfigError("budgets must be non-negative")
        for m in self.baselines:
            if m not in BASELINES:
                raise ConfigError(f"unknown baseline {m!r}")

    def solve_options(self) -> SolveOptions:
        return SolveOptions(
            max_iters=self.max_iters, gap_tol=self.gap_tol, step_rule=self.step_rule
        )

    def sampler_config(self, initial_size: int | None = None) -> SamplerConfig:
        return SamplerConfig(
            n_strata=self.n_strata,
            k=self.k,
            initial_size=initial_size if initial_size is not None else self.initial_size,
            strata_seed=self.strata_seed,
        )

    def cost_model(self, c2: float | None = None) -> CostModel:
        return CostModel(
            c1=self.c1,
            c2=self.c2 if c2 is None else c2,
            budget=0.0,
            budget_scope=self.budget_scope,
        )


def config_to_dict(cfg: ExperimentConfig) -> dict:
    doc = asdict(cfg)
    doc["synth"] = asdict(cfg.synth) if cfg.synth is not None else None
    doc["utilities"] = [asdict(u) for u in cfg.utilities]
    return doc


def config_from_dict(doc: dict) -> ExperimentConfig:
    doc = dict(doc)
    if doc.get("synth") is not None:
        synth = dict(doc["synth"])
        for key in ("strata_grid", "points_per_cluster"):
            if key in synth:
                synth[key] = tuple(synth[key])
        doc["synth"] = SynthConfig(**synth)
    if "utilities" in doc:
        doc["utilities"] = tuple(
            UtilityConfig(**u) if isinstance(u, dict) else u for u in doc["utilities"]
        )
    for key in ("budgets", "c2_sweep", "rank_sizes", "initial_sizes", "seeds",
                "baselines"):
        if key in doc and doc[key] is not None:
            doc[key] = tuple(doc[key])
    if doc.get("convenience_anchors") is not None:
        doc["convenience_anchors"] = tuple(tuple(a) for a in doc["convenience_anchors"])
    try:
        return ExperimentConfig(**doc)
    except TypeError as exc:
        raise ConfigError(f"bad experiment config: {exc}") from None


def config_hash(cfg: ExperimentConfig) -> str:
    payload = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def dataset_content_hash(ds: Dataset) -> str:
    h = hashlib.sha256()
    h.update("\x00".join(ds.point_ids).encode("utf-8"))
    h.update("\x00".join(ds.point_cluster).encode("utf-8"))
    for c in ds.clusters:
        h.update(f"{c.cluster_id}|{c.stratum_id}".encode("utf-8"))
    h.update(ds.coords.tobytes())
    h.update(ds.features.tobytes())
    h.update(ds.labels.tobytes())
    h.update(ds.train_mask.tobytes())
    h.update(ds.test_mask.tobytes())
    return h.hexdigest()[:16]


def load_population(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset is not None:
        return load_dataset(cfg.dataset)
    ds, _ = generate(cfg.synth)
    return ds


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_meta(out: Path, cfg: ExperimentConfig, ds: Dataset, extra: dict | None = None) -> None:
    doc = {
        "config": config_to_dict(cfg),
        "config_hash": config_hash(cfg),
        "dataset_hash": dataset_content_hash(ds),
    }
    if extra:
        doc.update(extra)
    (out / "meta.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def build_group_model(ds: Dataset, ucfg: UtilityConfig) -> GroupModel | None:
    if ucfg.kind == "size":
        return None
    if ucfg.groups == "admin":
        return admin_groups(ds)
    return feature_kmeans_groups(ds, ucfg.n_groups, seed=ucfg.group_seed)


def build_utility_spec(ds: Dataset, ucfg: UtilityConfig) -> UtilitySpec:
    return UtilitySpec(
        kind=ucfg.kind,
        lam=ucfg.lam,
        epsilon=ucfg.epsilon,
        groups=build_group_model(ds, ucfg),
    )


def _methods(cfg: ExperimentConfig) -> list[str]:
    return list(cfg.baselines) + [u.method_name() for u in cfg.utilities]


def _apply_method(
    ds: Dataset,
    state: SampleState,
    cm: CostModel,
    budget: float,
    method: str,
    specs: dict[str, UtilitySpec],
    opts: SolveOptions,
    rng: np.random.Generator,
) -> SampleState:
    if method == "default":
        return default_cluster_augment(ds, state, cm, budget, rng)
    if method == "greedy":
        return greedy_size_augment(ds, state, cm, budget, rng)
    if method == "random":
        return random_cluster_augment(ds, state, cm, budget, rng)
    return optimized_augment(ds, state, cm, budget, specs[method], opts, rng)


def _aggregate(values: list[float]) -> tuple[float, float, float]:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    stderr = std / np.sqrt(len(arr)) if len(arr) > 1 else 0.0
    return mean, std, float(stderr)


PROVENANCE = ["seed", "config_hash", "dataset_hash"]


def run_augmentation(cfg: ExperimentConfig, out_dir: str | Path) -> list[dict]:
    """One row per (budget, method, seed): augment the seed's initial sample
    and score the result; aggregate to a budget x method table."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = load_population(cfg)
    chash, dhash = config_hash(cfg), dataset_content_hash(ds)
    specs = {u.method_name(): build_utility_spec(ds, u) for u in cfg.utilities}
    methods = _methods(cfg)
    opts = cfg.solve_options()

    records = []
    for seed in cfg.seeds:
        state0 = draw_initial_sample(
            ds, cfg.sampler_config(), np.random.default_rng([seed, 0])
        )
        r0 = evaluate_sample(ds, state0, seed=seed)
        for bi, budget in enumerate(cfg.budgets):
            for mi, method in enumerate(methods):
                rng = np.random.default_rng([seed, 1 + bi, mi])
                state = _apply_method(ds, state0, cfg.cost_model(), budget, method, specs, opts, rng)
                r2 = evaluate_sample(ds, state, seed=seed)
                records.append(
                    {
                        "budget": budget,
                        "method": method,
                        "seed": seed,
                        "r2": r2,
                        "initial_r2": r0,
                        "delta_r2": r2 - r0,
                        "spent": state.spent,
                        "clusters_added": len(state.augment_cluster_ids),
                        "points_added": state.n_labeled - state0.n_labeled,
                        "infeasible": state.infeasible,
                    }
                )

    header = [
        "budget", "method", "seed", "r2", "initial_r2", "delta_r2",
        "spent", "clusters_added", "points_added", "infeasible",
        "config_hash", "dataset_hash",
    ]
    rows = [
        [rec["budget"], rec["method"], rec["seed"], rec["r2"], rec["initial_r2"],
         rec["delta_r2"], rec["spent"], rec["clusters_added"], rec["points_added"],
         int(rec["infeasible"]), chash, dhash]
        for rec in records
    ]
    _write_csv(out / "runs.csv", header, rows)

    agg_rows = []
    for budget in cfg.budgets:
        for method in methods:
            cell = [r for r in records if r["budget"] == budget and r["method"] == method]
            n_inf = sum(r["infeasible"] for r in cell)
            if n_inf:
                agg_rows.append(
                    [budget, method, "", "", "", len(cell), "infeasible", chash, dhash]
                )
            else:
                mean, std, stderr = _aggregate([r["r2"] for r in cell])
                agg_rows.append(
                    [budget, method, mean, std, stderr, len(cell), "ok", chash, dhash]
                )
    _write_csv(
        out / "table.csv",
        ["budget", "method", "mean_r2", "std_r2", "stderr_r2", "n_seeds", "status",
         "config_hash", "dataset_hash"],
        agg_rows,
    )
    _write_meta(out, cfg, ds)
    return records


def _auto_anchors(ds: Dataset, n_anchors: int) -> tuple[tuple[float, float], ...]:
    """Centers of the largest source clusters (deterministic stand-ins for
    urban areas)."""
    sizes = [
        (c.size, c.cluster_id) for j, c in enumerate(ds.clusters) if ds.cluster_is_source[j]
    ]
    chosen = sorted(sizes, key=lambda t: (-t[0], t[1]))[:n_anchors]
    anchors = []
    for _, cid in chosen:
        rows = ds.point_rows_by_cluster[cid]
        anchors.append((float(ds.coords[rows, 0].mean()), float(ds.coords[rows, 1].mean())))
    return tuple(anchors)


def run_rank_study(cfg: ExperimentConfig, out_dir: str | Path) -> list[dict]:
    """Samples of growing size under cluster / convenience / random sampling,
    scored by the prediction head and by each utility; Spearman rho per
    sampling type plus overall."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = load_population(cfg)
    chash, dhash = config_hash(cfg), dataset_content_hash(ds)
    specs = {u.method_name(): build_utility_spec(ds, u) for u in cfg.utilities}
    size_spec = UtilitySpec(kind="size")
    anchors = cfg.convenience_anchors or _auto_anchors(ds, cfg.n_anchors)

    records = []
    for seed in cfg.seeds:
        for si, size in enumerate(cfg.rank_sizes):
            draws = {}
            try:
                draws["cluster"] = draw_initial_sample(
                    ds, cfg.sampler_config(initial_size=size),
                    np.random.default_rng([seed, 2, si]),
                )
            except SamplingError as exc:
                warnings.warn(f"cluster sample of size {size} skipped: {exc}")
            try:
                draws["convenience"] = convenience_sample(
                    ds,
                    ConvenienceConfig(
                        anchors=anchors,
                        temperature=cfg.convenience_temperature,
                        size=size,
                    ),
                    np.random.default_rng([seed, 3, si]),
                )
                draws["random"] = random_point_sample(
                    ds, size, np.random.default_rng([seed, 4, si])
                )
            except SamplingError as exc:
                warnings.warn(f"point sample of size {size} skipped: {exc}")
            for stype, state in sorted(draws.items()):
                try:
                    r2 = evaluate_sample(ds, state, seed=seed)
                except LearnerError as exc:
                    warnings.warn(f"degenerate sample ({stype}, {size}): {exc}")
                    continue
                rec = {
                    "sampling_type": stype,
                    "size": size,
                    "seed": seed,
                    "r2": r2,
                    "u_size": utility_of_sample(ds, state, size_spec),
                }
                for name, spec in specs.items():
                    rec[f"u_{name}"] = utility_of_sample(ds, state, spec)
                records.append(rec)

    u_cols = ["u_size"] + [f"u_{name}" for name in specs]
    header = ["sampling_type", "size", "seed", "r2"] + u_cols + ["config_hash", "dataset_hash"]
    rows = [
        [r["sampling_type"], r["size"], r["seed"], r["r2"]]
        + [r[c] for c in u_cols]
        + [chash, dhash]
        for r in records
    ]
    _write_csv(out / "samples.csv", header, rows)

    types = sorted({r["sampling_type"] for r in records})
    rho_rows = []
    for ucol in u_cols:
        for scope in types + ["overall"]:
            sub = [
                r for r in records if scope == "overall" or r["sampling_type"] == scope
            ]
            try:
                rho = spearman_rho(
                    np.array([r[ucol] for r in sub]), np.array([r["r2"] for r in sub])
                )
                rho_out = rho
            except LearnerError:
                rho_out = "NA"
            rho_rows.append([scope, ucol, rho_out, len(sub), chash, dhash])
    _write_csv(
        out / "rho.csv",
        ["scope", "utility", "rho", "n_samples", "config_hash", "dataset_hash"],
        rho_rows,
    )
    _write_meta(out, cfg, ds, {"anchors": [list(a) for a in anchors]})
    return records


def run_cost_sweep(cfg: ExperimentConfig, out_dir: str | Path) -> list[dict]:
    """Fix c1, vary c2; report the R^2 gain over the initial sample per
    method and cost level."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = load_population(cfg)
    chash, dhash = config_hash(cfg), dataset_content_hash(ds)
    specs = {u.method_name(): build_utility_spec(ds, u) for u in cfg.utilities}
    methods = _methods(cfg)
    opts = cfg.solve_options()
    budget = cfg.budgets[0]

    records = []
    for seed in cfg.seeds:
        state0 = draw_initial_sample(
            ds, cfg.sampler_config(), np.random.default_rng([seed, 0])
        )
        r0 = evaluate_sample(ds, state0, seed=seed)
        for ci, c2 in enumerate(cfg.c2_sweep):
            if c2 < cfg.c1:
                raise ConfigError(f"swept c2 {c2} below c1 {cfg.c1}")
            for mi, method in enumerate(methods):
                rng = np.random.default_rng([seed, 5, ci, mi])
                state = _apply_method(
                    ds, state0, cfg.cost_model(c2=c2), budget, method, specs, opts, rng
                )
                r2 = evaluate_sample(ds, state, seed=seed)
                records.append(
                    {
                        "c2": c2,
                        "method": method,
                        "seed": seed,
                        "r2": r2,
                        "initial_r2": r0,
                        "delta_r2": r2 - r0,
                        "spent": state.spent,
                        "infeasible": state.infeasible,
                    }
                )

    header = ["c2", "method", "seed", "r2", "initial_r2", "delta_r2", "spent",
              "infeasible", "config_hash", "dataset_hash"]
    _write_csv(
        out / "sweep_runs.csv",
        header,
        [
            [r["c2"], r["method"], r["seed"], r["r2"], r["initial_r2"], r["delta_r2"],
             r["spent"], int(r["infeasible"]), chash, dhash]
            for r in records
        ],
    )
    agg_rows = []
    for c2 in cfg.c2_sweep:
        for method in methods:
            cell = [r for r in records if r["c2"] == c2 and r["method"] == method]
            mean, std, stderr = _aggregate([r["delta_r2"] for r in cell])
            agg_rows.append([c2, method, mean, std, stderr, len(cell), chash, dhash])
    _write_csv(
        out / "sweep.csv",
        ["c2", "method", "mean_delta_r2", "std_delta_r2", "stderr_delta_r2",
         "n_seeds", "config_hash", "dataset_hash"],
        agg_rows,
    )
    _write_meta(out, cfg, ds)
    return records


def run_initial_size_sweep(cfg: ExperimentConfig, out_dir: str | Path) -> list[dict]:
    """Optimized augmentation versus extending default cluster sampling, for a
    range of initial sample sizes at matched cost."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = load_population(cfg)
    chash, dhash = config_hash(cfg), dataset_content_hash(ds)
    ucfg = cfg.utilities[0]
    spec = build_utility_spec(ds, ucfg)
    opts = cfg.solve_options()
    budget = cfg.budgets[0]
    arms = ("optimized", "default")

    records = []
    for seed in cfg.seeds:
        for ii, initial_size in enumerate(cfg.initial_sizes):
            state0 = draw_initial_sample(
                ds, cfg.sampler_config(initial_size=initial_size),
                np.random.default_rng([seed, 6, ii]),
            )
            r0 = evaluate_sample(ds, state0, seed=seed)
            cm = cfg.cost_model().with_initial_strata(state0.initial_strata)
            initial_cost = set_cost(cm, ds, state0.initial_cluster_ids)
            for ai, arm in enumerate(arms):
                rng = np.random.default_rng([seed, 7, ii, ai])
                if arm == "optimized":
                    state = optimized_augment(ds, state0, cm, budget, spec, opts, rng)
                else:
                    state = default_cluster_augment(ds, state0, cm, budget, rng)
                r2 = evaluate_sample(ds, state, seed=seed)
                records.append(
                    {
                        "initial_size": initial_size,
                        "arm": arm,
                        "seed": seed,
                        "r2": r2,
                        "initial_r2": r0,
                        "delta_r2": r2 - r0,
                        "budget": budget,
                        "spent": state.spent,
                        "total_cost": initial_cost + state.spent,
                        "infeasible": state.infeasible,
                    }
                )

    header = ["initial_size", "arm", "seed", "r2", "initial_r2", "delta_r2",
              "budget", "spent", "total_cost", "infeasible",
              "config_hash", "dataset_hash"]
    _write_csv(
        out / "size_runs.csv",
        header,
        [
            [r["initial_size"], r["arm"], r["seed"], r["r2"], r["initial_r2"],
             r["delta_r2"], r["budget"], r["spent"], r["total_cost"],
             int(r["infeasible"]), chash, dhash]
            for r in records
        ],
    )
    agg_rows = []
    for initial_size in cfg.initial_sizes:
        for arm in arms:
            cell = [
                r for r in records
                if r["initial_size"] == initial_size and r["arm"] == arm
            ]
            mean, std, stderr = _aggregate([r["r2"] for r in cell])
            mean_cost, _, _ = _aggregate([r["total_cost"] for r in cell])
            agg_rows.append(
                [initial_size, arm, mean, std, stderr, mean_cost, len(cell), chash, dhash]
            )
    _write_csv(
        out / "size_sweep.csv",
        ["initial_size", "arm", "mean_r2", "std_r2", "stderr_r2", "mean_total_cost",
         "n_seeds", "config_hash", "dataset_hash"],
        agg_rows,
    )
    _write_meta(out, cfg, ds)
    return records
