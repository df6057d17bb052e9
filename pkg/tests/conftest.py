import numpy as np
import pytest

from geosampler.data import build_dataset
from geosampler.synth import SynthConfig, generate


def toy_dataset(
    cluster_sizes: dict[str, int],
    cluster_stratum: dict[str, str],
    d: int = 3,
    seed: int = 0,
    test_fraction: float = 0.0,
    label_fn=None,
):
    """Hand-rolled dataset: clusters with given sizes, simple features/labels."""
    rng = np.random.default_rng(seed)
    point_ids, point_cluster = [], []
    i = 0
    for cid in sorted(cluster_sizes):
        for _ in range(cluster_sizes[cid]):
            point_ids.append(f"p{i:04d}")
            point_cluster.append(cid)
            i += 1
    n = len(point_ids)
    coords = rng.uniform(0, 10, size=(n, 2))
    features = rng.normal(size=(n, d))
    if label_fn is None:
        labels = rng.normal(size=n)
    else:
        labels = np.array([label_fn(features[j]) for j in range(n)], dtype=float)
    return build_dataset(
        point_ids=point_ids,
        coords=coords,
        features=features,
        labels=labels,
        point_cluster=point_cluster,
        cluster_stratum=cluster_stratum,
        split_seed=seed,
        test_fraction=test_fraction,
    )


@pytest.fixture
def small_ds():
    return toy_dataset(
        cluster_sizes={"ca": 4, "cb": 6, "cc": 5},
        cluster_stratum={"ca": "s0", "cb": "s0", "cc": "s1"},
        d=3,
        seed=11,
    )


@pytest.fixture
def synth_ds():
    cfg = SynthConfig(
        strata_grid=(3, 2),
        clusters_per_stratum=6,
        points_per_cluster=(12, 20),
        feature_dim=4,
        coef_dispersion=0.8,
        target_snr=10.0,
        seed=5,
    )
    ds, _ = generate(cfg)
    return ds
