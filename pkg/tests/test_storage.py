import pytest

pytest.importorskip("duckdb")

from pseudolab.simulation.runner import FixedSchedule, SummaryRow, run_schedule  # noqa: E402
from pseudolab.simulation.teacher import TeacherSkill, WorldConfig  # noqa: E402
from pseudolab.storage.duckdb import MetricsStore  # noqa: E402

WORLD = WorldConfig(n_images=2, boxes_per_image=2)


@pytest.fixture
def store():
    with MetricsStore(":memory:") as s:
        yield s


@pytest.fixture(scope="module")
def metrics():
    return run_schedule(WORLD, TeacherSkill(horizon=20), FixedSchedule(0.4), steps=20, checkpoint_every=10)


def test_run_round_trip(store, metrics):
    run_id = store.store_run(metrics, seed=3)
    assert store.count_runs() == 1
    assert store.get_tau_trajectory(run_id) == pytest.approx(metrics.tau_trajectory.tolist())


def test_summary_filter(store):
    store.store_summary([
        SummaryRow("fixed", 4.0, 0.5, 1.2, True),
        SummaryRow("gmm", 3.0, 0.1, 0.8, True),
    ])
    rows = store.get_summary("gmm")
    assert rows == [{
        "schedule": "gmm",
        "mean_pseudo": 3.0,
        "cv_pseudo": 0.1,
        "final_inconsistency": 0.8,
        "inconsistency_defined": True,
    }]
    assert len(store.get_summary()) == 2


def test_aiou_rows(store):
    store.store_aiou([{"assigner": "asa", "rho": 0.1, "mean_aiou": 0.9, "std_aiou": 0.05}], seed=7)
    assert store.conn.execute("SELECT assigner, rho, seed FROM aiou").fetchall() == [("asa", 0.1, 7)]


def test_file_store_persists(tmp_path, metrics):
    path = str(tmp_path / "db" / "runs.duckdb")
    with MetricsStore(path) as s:
        s.store_run(metrics)
    with MetricsStore(path) as s:
        assert s.count_runs() == 1


def test_cli_archives_runs(tmp_path):
    from main import main

    config = tmp_path / "sim.toml"
    config.write_text('[run]\nsteps = 10\ncheckpoint_every = 5\n\n[schedule.fixed]\nkind = "fixed"\n')
    db = str(tmp_path / "sim.duckdb")
    assert main(["simulate", str(config), "-o", str(tmp_path / "out"), "--db", db]) == 0
    with MetricsStore(db) as s:
        assert s.count_runs() == 1
        assert [r["schedule"] for r in s.get_summary()] == ["fixed"]
