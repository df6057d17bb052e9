"""Synthetic spatial datasets with controllable heterogeneity.

The map is a grid of rectangular strata; each stratum holds clusters of
points scattered around cluster centers. Features are a smooth function of
location plus isotropic noise, and labels follow a per-stratum linear model
y = w_r . x + noise. The dispersion of the w_r across strata is the single
knob that decides whether spatial representativeness matters: at zero
dispersion one global model fits everywhere, at high dispersion a model
trained in few strata transfers poorly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, build_dataset


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    strata_grid: tuple[int, int] = (3, 2)
    clusters_per_stratum: int = 8
    points_per_cluster: tuple[int, int] = (10, 30)   # inclusive range
    feature_dim: int = 5
    coef_dispersion: float = 0.0     # between-stratum spread of the w_r
    noise: float = 0.1               # label noise sigma
    feature_noise: float = 0.5
    feature_scale: float = 1.0
    target_snr: float | None = None  # overrides `noise` when set
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if min(self.strata_grid) < 1 or self.clusters_per_stratum < 1:
            raise SynthError("grid dimensions and clusters per stratum must be >= 1")
        lo, hi = self.points_per_cluster
        if lo < 1 or hi < lo:
            raise SynthError("points_per_cluster must be a range with 1 <= lo <= hi")
        if self.feature_dim < 1:
            raise SynthError("feature_dim must be >= 1")
        if self.noise < 0 or self.feature_noise < 0:
            raise SynthError("noise levels must be non-negative")
        if self.target_snr is not None and self.target_snr <= 0:
            raise SynthError("target_snr must be positive")


@dataclass(frozen=True)
class GroundTruth:
    coefficients: dict[str, np.ndarray]   # stratum id -> w_r
    noise_sigma: float
    signal_variance: float
    snr: float | None


def generate(cfg: SynthConfig) -> tuple[Dataset, GroundTruth]:
    """Generate a dataset bundle-compatible population with known truth."""
    rng = np.random.default_rng(cfg.seed)
    rx, ry = cfg.strata_grid
    n_strata = rx * ry
    d = cfg.feature_dim

    # feature field: smooth sinusoidal mean per feature over the map
    freq = rng.normal(0.0, 1.5, size=(d, 2))
    phase = rng.uniform(0.0, 2 * np.pi, size=d)

    w_base = rng.normal(0.0, 1.0, size=d)
    w_by_stratum: dict[str, np.ndarray] = {}

    sid_width = len(str(n_strata - 1)) if n_strata > 1 else 1
    point_rows = []
    s_index = 0
    for gx in range(rx):
        for gy in range(ry):
            sid = f"s{s_index:0{sid_width}d}"
            w_by_stratum[sid] = w_base + cfg.coef_dispersion * rng.normal(size=d)
            for ci in range(cfg.clusters_per_stratum):
                center = np.array([gx, gy]) + rng.uniform(0.1, 0.9, size=2)
                n_pts = int(
                    rng.integers(cfg.points_per_cluster[0], cfg.points_per_cluster[1] + 1)
                )
                offsets = rng.uniform(-0.08, 0.08, size=(n_pts, 2))
                for p in range(n_pts):
                    point_rows.append((sid, ci, center + offsets[p]))
            s_index += 1

    n = len(point_rows)
    pid_width = len(str(n - 1))
    cid_width = len(str(n_strata * cfg.clusters_per_stratum - 1))

    point_ids = []
    coords = np.empty((n, 2))
    point_cluster = []
    cluster_stratum: dict[str, str] = {}
    cluster_counter: dict[tuple[str, int], str] = {}
    next_cluster = 0
    for i, (sid, ci, xy) in enumerate(point_rows):
        key = (sid, ci)
        if key not in cluster_counter:
            cluster_counter[key] = f"c{next_cluster:0{cid_width}d}"
            cluster_stratum[cluster_counter[key]] = sid
            next_cluster += 1
        point_ids.append(f"p{i:0{pid_width}d}")
        coords[i] = xy
        point_cluster.append(cluster_counter[key])

    mean = cfg.feature_scale * np.sin(coords @ freq.T + phase)
    features = mean + cfg.feature_noise * rng.normal(size=(n, d))

    signal = np.empty(n)
    for i, (sid, _, _) in enumerate(point_rows):
        signal[i] = w_by_stratum[sid] @ features[i]

    signal_var = float(np.var(signal))
    if cfg.target_snr is not None:
        sigma = float(np.sqrt(signal_var / cfg.target_snr)) if signal_var > 0 else 0.0
    else:
        sigma = cfg.noise
    labels = signal + sigma * rng.normal(size=n)

    split_seed = int(rng.integers(2**31 - 1))
    ds = build_dataset(
        point_ids=point_ids,
        coords=coords,
        features=features,
        labels=labels,
        point_cluster=point_cluster,
        cluster_stratum=cluster_stratum,
        split_seed=split_seed,
        test_fraction=cfg.test_fraction,
    )
    truth = GroundTruth(
        coefficients=w_by_stratum,
        noise_sigma=sigma,
        signal_variance=signal_var,
        snr=(signal_var / sigma**2) if sigma > 0 else None,
    )
    return ds, truth


def save_truth(truth: GroundTruth, bundle: str | Path) -> None:
    doc = {
        "coefficients": {sid: [float(v) for v in w] for sid, w in truth.coefficients.items()},
        "noise_sigma": truth.noise_sigma,
        "signal_variance": truth.signal_variance,
        "snr": truth.snr,
    }
    (Path(bundle) / "truth.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
