import pytest

from database.db_manager import check_connection, default_database_url, get_engine
from services.metrics import ScoreTriple
from services.run_registry import RunRegistry


@pytest.fixture
def registry(tmp_path):
    return RunRegistry(f"sqlite:///{tmp_path / 'runs.db'}")


def test_default_url_lives_under_reports(tmp_path, monkeypatch):
    monkeypatch.delenv("CRACK_DATABASE_URL", raising=False)
    url = default_database_url(tmp_path)
    assert url.startswith("sqlite:///") and url.endswith("reports/runs.db")
    assert (tmp_path / "reports").is_dir()
    monkeypatch.setenv("CRACK_DATABASE_URL", "sqlite://")
    assert default_database_url(tmp_path) == "sqlite://"


def test_connection_check(tmp_path):
    assert check_connection(get_engine(f"sqlite:///{tmp_path / 'x.db'}"))
    assert not check_connection(None)


def test_run_lifecycle(registry):
    run_id = registry.start_run("evaluate", "abc123", "/tmp/out", dataset="cfd")
    registry.record_score(run_id, "evaluate:macro", ScoreTriple(0.9, 0.8, 0.847), member_count=3, threshold=0.6)
    registry.finish_run(run_id, 0)

    (run,) = registry.list_runs()
    assert run["command"] == "evaluate"
    assert run["status"] == "succeeded"
    assert run["exit_code"] == 0
    assert run["finished_at"] is not None
    assert run["scores"][0]["f1"] == pytest.approx(0.847)
    assert run["scores"][0]["member_count"] == 3


def test_failed_runs_and_ordering(registry):
    first = registry.start_run("train", "d1", "/o")
    second = registry.start_run("predict", "d2", "/o")
    registry.finish_run(second, 3, "missing model")
    runs = registry.list_runs()
    assert [r["id"] for r in runs] == [second, first]
    assert runs[0]["status"] == "failed" and runs[0]["message"] == "missing model"
    assert runs[1]["status"] == "running"
    assert len(registry.list_runs(limit=1)) == 1


def test_finishing_unknown_run_is_harmless(registry):
    registry.finish_run(999, 0)
    assert registry.list_runs() == []
