import csv
import json

import numpy as np
import pytest

from mcm.cli import main
from mcm.harness import (
    ABLATION_COLUMNS,
    QUALITY_COLUMNS,
    DiagnosticsConfig,
    ExperimentConfig,
    export_projection,
    make_memory,
    project_2d,
    run_ablate,
    run_clusterability,
    run_scaling,
    run_simulate,
    simulate,
)

TINY = {
    "stream": {"num_classes": 20, "images_per_class": 2, "height": 8, "width": 8, "total_steps": 40, "batch_size": 16},
    "memory": {"capacity": 8, "k_max": 3},
    "diagnostics": {"window": 40, "stride": 10, "refresh": 20, "k_cap": 4, "fit_restarts": 1},
}


@pytest.fixture
def tiny():
    return ExperimentConfig.from_dict(TINY)


@pytest.fixture
def tiny_json(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(TINY))
    return p


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_config_round_trip(tiny):
    assert ExperimentConfig.from_dict(tiny.to_dict()) == tiny
    assert tiny.memory.num_classes == 20
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        ExperimentConfig(variant="lru")
    with pytest.raises(ValueError):
        DiagnosticsConfig(window=0)


def test_simulate_rows_and_lockstep(tiny):
    runs = simulate(tiny, ("mcm", "scm"))
    assert [r.step for r in runs["mcm"].rows] == [9, 19, 29, 39]
    assert [r.step for r in runs["scm"].rows] == [9, 19, 29, 39]
    assert runs["mcm"].counters["inserts"] == runs["scm"].counters["inserts"] == 40 * 16
    assert all(k <= 3 for k in runs["mcm"].cluster_counts)


def test_quality_csv_schema_and_determinism(tiny, tmp_path):
    run_simulate(tiny, ("mcm", "scm"), tmp_path / "a")
    run_simulate(tiny, ("mcm", "scm"), tmp_path / "b")
    a, b = (tmp_path / "a" / "quality.csv").read_bytes(), (tmp_path / "b" / "quality.csv").read_bytes()
    assert a == b
    rows = read_csv(tmp_path / "a" / "quality.csv")
    assert tuple(rows[0]) == QUALITY_COLUMNS and len(rows) == 8
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 0 and "timings" in manifest


def test_seed_changes_output(tiny):
    a = simulate(tiny)["mcm"].rows
    b = simulate(tiny.with_seed(1))["mcm"].rows
    assert [r.energy_distance for r in a] != [r.energy_distance for r in b]


def test_diagnostic_labels_do_not_steer_memory(tiny):
    def relabel(_t, mems):
        for m in mems["mcm"].samples():
            m.diag_mode, m.diag_class = 7 - m.diag_mode, 3 * m.diag_class + 1

    plain, touched = make_memory(tiny, "mcm"), make_memory(tiny, "mcm")
    simulate(tiny, memories={"mcm": plain})
    simulate(tiny, memories={"mcm": touched}, on_step=relabel)
    assert np.array_equal(plain.snapshot().ids, touched.snapshot().ids)


def test_ablate_and_scaling(tiny, tmp_path):
    rows = run_ablate(tiny, "strategy", ["acc", "gcc"], tmp_path)
    assert [r["value"] for r in rows] == ["acc", "gcc"]
    assert tuple(read_csv(tmp_path / "ablate_strategy.csv")[0]) == ABLATION_COLUMNS
    with pytest.raises(ValueError):
        run_ablate(tiny, "colour", [1])
    rows = run_scaling(tiny, [8, 16], tmp_path)
    assert [(r["total"], r["variant"]) for r in rows] == [(8, "mcm"), (8, "scm"), (16, "mcm"), (16, "scm")]
    with pytest.raises(ValueError):
        run_scaling(tiny, [12])


def test_clusterability_csv(tiny, tmp_path):
    reps = run_clusterability(tiny, ["channel_stats"], window=20, stride=10, k_range=range(1, 4), out_dir=tmp_path)
    assert reps["channel_stats"].starts == (0, 10, 20)
    rows = read_csv(tmp_path / "clusterability.csv")
    assert list(rows[0]) == ["kind", "window_start", "k_star", "bic"] and len(rows) == 3


def test_projection_axes():
    x = np.array([[0.0, 0.0], [2.0, 0.1], [4.0, -0.1], [6.0, 0.0]])
    coords, comps = project_2d(x)
    assert np.allclose(np.abs(comps[0]), [1.0, 0.0], atol=0.02)
    assert comps[0][np.argmax(np.abs(comps[0]))] > 0
    assert np.allclose(coords.mean(axis=0), 0.0)
    with pytest.raises(ValueError):
        project_2d(np.ones((5, 3)))


def test_export_projection(tiny, tmp_path):
    mem = make_memory(tiny, "mcm")
    simulate(tiny, memories={"mcm": mem})
    snap = mem.snapshot()
    window = np.random.default_rng(0).random((10, 6))
    rows = export_projection(snap, window, tmp_path / "p.csv")
    assert len(rows) == 10 + len(snap)
    assert {r[1] for r in rows[:10]} == {-1}


def test_cli_commands(tiny_json, tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(tiny_json), "--out-dir", str(out), "--paired"]) == 0
    assert (out / "quality.csv").exists()
    assert main(["simulate", "--config", str(tiny_json), "--out-dir", str(out), "--variant", "scm", "--seed", "3"]) == 0
    assert {r["variant"] for r in read_csv(out / "quality.csv")} == {"scm"}
    assert main(["ablate", "--config", str(tiny_json), "--out-dir", str(out), "--axis", "tau", "--values", "0.2", "0.4"]) == 0
    assert main(["scaling", "--config", str(tiny_json), "--out-dir", str(out), "--totals", "8", "16"]) == 0
    assert main(["clusterability", "--config", str(tiny_json), "--out-dir", str(out), "--kinds", "channel_stats",
                 "--window", "20", "--stride", "20", "--k-max", "3"]) == 0
    assert main(["project", "--config", str(tiny_json), "--out-dir", str(out), "--window", "30"]) == 0
    assert main(["project", "--config", str(tiny_json), "--out-dir", str(out), "--snapshot", str(out / "snapshot.json")]) == 0
    assert (out / "projection.csv").exists()


def test_cli_errors(tiny_json, tmp_path, capsys):
    assert main(["scaling", "--config", str(tiny_json), "--totals", "12", "--out-dir", str(tmp_path)]) != 0
    assert "error" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text('{"memory": {"tau": -1}}')
    assert main(["simulate", "--config", str(bad), "--out-dir", str(tmp_path)]) != 0
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) != 0
    with pytest.raises(SystemExit):
        main(["simulate", "--variant", "lru"])


def test_principal_axes_beat_random_directions():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(300, 5)) * np.array([3.0, 2.0, 1.0, 0.5, 0.2]) @ np.linalg.qr(rng.normal(size=(5, 5)))[0]
    coords, comps = project_2d(x)
    v1, v2 = coords.var(axis=0)
    assert v1 >= v2
    centred = x - x.mean(axis=0)
    for _ in range(500):
        u = rng.normal(size=5)
        u /= np.linalg.norm(u)
        assert (centred @ u).var() <= v1 + 1e-9
        w = u - (u @ comps[0]) * comps[0]  # restrict to the complement of PC1
        w /= np.linalg.norm(w)
        assert (centred @ w).var() <= v2 + 1e-9


@pytest.mark.slow
def test_larger_tau_never_adds_clusters():
    rows = run_ablate(ExperimentConfig(seed=0, workers=4), "tau", [0.1, 0.3, 0.5, 0.7])
    k = [r["mean_clusters"] for r in rows]
    assert all(a >= b for a, b in zip(k, k[1:])) and k[0] > k[-1]
