import logging

import numpy as np
import pytest

from mambpo.plotting import aggregate_curves, plot_runs, read_curve_csv, read_returns


def fake_run(path, returns):
    path.mkdir(parents=True)
    lines = ["episode,env_steps,return"] + [f"{k + 1},{25 * (k + 1)},{r!r}" for k, r in enumerate(returns)]
    (path / "metrics.csv").write_text("\n".join(lines) + "\n")
    return path


def test_single_run_has_no_band(tmp_path):
    run = fake_run(tmp_path / "a", np.linspace(-50, -20, 30).tolist())
    svg, csv_path = plot_runs([run], tmp_path / "out" / "curve", window=5)
    ep, mean, sem = read_curve_csv(csv_path)["return"]
    assert len(ep) == 30 and not sem.any()
    assert svg.exists() and svg.read_text().startswith("<?xml")


def test_constant_runs_flat_line(tmp_path):
    runs = [fake_run(tmp_path / f"r{k}", [3.5] * 40) for k in range(5)]
    _, csv_path = plot_runs(runs, tmp_path / "c", window=200)
    _, mean, sem = read_curve_csv(csv_path)["return"]
    np.testing.assert_array_equal(mean, 3.5)
    np.testing.assert_array_equal(sem, 0.0)


def test_long_series_keeps_length():
    ep, mean, sem = aggregate_curves([np.random.default_rng(0).normal(size=5000)], 200)
    assert len(ep) == len(mean) == 5000 and ep[0] == 1


def test_sem_matches_definition():
    rng = np.random.default_rng(1)
    series = [rng.normal(size=50) for _ in range(4)]
    _, mean, sem = aggregate_curves(series, 1)
    stacked = np.stack(series)
    np.testing.assert_allclose(mean, stacked.mean(0))
    np.testing.assert_allclose(sem, stacked.std(0, ddof=1) / 2.0)


def test_mismatched_lengths_truncate(tmp_path, caplog):
    a = fake_run(tmp_path / "a", [1.0] * 30)
    b = fake_run(tmp_path / "b", [2.0] * 20)
    with caplog.at_level(logging.WARNING):
        _, csv_path = plot_runs([a, b], tmp_path / "t", window=10)
    assert "truncating" in caplog.text
    assert len(read_curve_csv(csv_path)["return"][0]) == 20


def test_csv_carries_exact_values(tmp_path):
    rng = np.random.default_rng(2)
    series = [rng.normal(-30, 5, size=60) for _ in range(3)]
    runs = [fake_run(tmp_path / f"r{k}", s.tolist()) for k, s in enumerate(series)]
    _, csv_path = plot_runs(runs, tmp_path / "x", window=7)
    _, mean, sem = read_curve_csv(csv_path)["return"]
    _, m2, s2 = aggregate_curves([read_returns(r) for r in runs], 7)
    np.testing.assert_array_equal(mean, m2)
    np.testing.assert_array_equal(sem, s2)


def test_labelled_groups_and_determinism(tmp_path):
    groups = {"mambpo": [fake_run(tmp_path / "m", [1.0, 2.0, 3.0])],
              "masac": [fake_run(tmp_path / "s", [0.0, 0.5, 1.0])]}
    svg1, csv1 = plot_runs(groups, tmp_path / "one", window=2, title="t")
    svg2, _ = plot_runs(groups, tmp_path / "two", window=2, title="t")
    assert set(read_curve_csv(csv1)) == {"mambpo", "masac"}
    assert svg1.read_bytes() == svg2.read_bytes()


def test_missing_metrics(tmp_path):
    with pytest.raises(FileNotFoundError):
        plot_runs([tmp_path / "nothing"], tmp_path / "o")
