import math
from pathlib import Path

import pytest

import fssl_lab

CONFIGS = Path(__file__).resolve().parents[2] / "configs"

TINY = {
    "seed": 3,
    "data": {"classes": 4, "dim": 8, "per_class": 30, "probe_per_class": 20, "test_per_class": 10},
    "model": {"hidden": [8], "embedding": 4},
    "train": {"rounds": 2, "local_epochs": 1, "batch_size": 8, "lr": 0.01, "queue_size": 32},
    "federation": {"clients": 3, "malicious": [0]},
    "attack": {
        "mu": 0.5,
        "top_k": 16,
        "prototypes": 4,
        "poison_ratio": 0.1,
        "trigger": {"coords": [6, 7], "values": [2, 2]},
        "target_class": 0,
    },
    "defense": {"fltrust_root": 8},
    "eval": {"probe_epochs": 20, "clean_loss_samples": 16},
}


def test_load_config_fills_defaults():
    cfg = fssl_lab.load_config(CONFIGS / "toy_hpe.json")
    assert cfg["attack"]["mu"] == 0.95
    assert cfg["attack"]["model_replacement"] is True
    assert cfg["federation"]["clients"] == 5


def test_run_returns_one_row_per_round():
    rows, summary = fssl_lab.run(TINY)
    assert [r["round"] for r in rows] == [0, 1, 2]
    for r in rows:
        assert 0.0 <= r["acc"] <= 1.0
        assert 0.0 <= r["asr"] <= 1.0
    assert summary["config"]["attack"]["mu"] == 0.5


def test_run_is_deterministic_across_threads():
    a, _ = fssl_lab.run(TINY, threads=1)
    b, _ = fssl_lab.run(TINY, threads=3)
    assert a == b


def test_overrides_apply():
    _, summary = fssl_lab.run(TINY, overrides=["attack.mu=0.3"])
    assert summary["config"]["attack"]["mu"] == 0.3


def test_invalid_config_raises():
    with pytest.raises(fssl_lab.FsslError, match="attack.mu"):
        fssl_lab.run(TINY, overrides=["attack.mu=7"])


def test_gradcheck_passes():
    groups = fssl_lab.gradcheck(instances=10)
    assert [g[0] for g in groups] == ["encoder", "info_nce", "loss_he", "loss_bfe"]
    assert all(g[3] for g in groups)


def test_geometry_helpers():
    assert fssl_lab.cosine_sim([1.0, 0.0], [0.0, 2.0]) == 0.0
    assert fssl_lab.krum([[0.0], [0.1], [10.0]], 0) in (0, 1)
    assert fssl_lab.foolsgold([[1.0, 2.0], [1.0, 2.0], [3.0, -1.0]])[:2] == [0.0, 0.0]
    with pytest.raises(fssl_lab.FsslError):
        fssl_lab.cosine_sim([0.0, 0.0], [1.0, 0.0])


def test_dirichlet_heterogeneity_orders_alpha():
    labels = [c for c in range(10) for _ in range(100)]
    lo = fssl_lab.dirichlet_chi2(labels, 5, 0.1, 10, seed=1)
    hi = fssl_lab.dirichlet_chi2(labels, 5, 10.0, 10, seed=1)
    assert math.isfinite(lo) and lo > hi
