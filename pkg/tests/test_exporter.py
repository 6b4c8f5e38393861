import csv
from io import StringIO

from core.evaluate import CriterionResult, EpisodeRecord, EvalReport
from core.exporter import CRITERIA_HEADER, EPISODE_HEADER, ReportExporter


def _report() -> EvalReport:
    criteria = [
        CriterionResult(distance=0.05, yaw_deg=5.0, successes=1, success_rate=50.0, mean_time=1.25,
                        final_success_rate=50.0),
        CriterionResult(distance=0.1, yaw_deg=10.0, successes=0, success_rate=0.0, mean_time=None,
                        final_success_rate=0.0),
    ]
    records = [
        EpisodeRecord(index=0, seed=10000, outcome="success", first_success_times=[1.25, None],
                      final_success=[True, False], final_distance=0.01, final_yaw_deg=2.0, duration=30.0),
        EpisodeRecord(index=1, seed=10001, outcome="timeout", first_success_times=[None, None],
                      final_success=[False, False], final_distance=1.2, final_yaw_deg=40.0, duration=30.0,
                      yaw_offset_deg=90.0),
    ]
    return EvalReport(controller="policy", encoder="student", protocol="random", ablation="none",
                      episodes=2, criteria=criteria, records=records)


def test_criteria_csv():
    rows = list(csv.reader(StringIO(ReportExporter().export_to_csv(_report()))))
    assert rows[0] == CRITERIA_HEADER
    assert rows[1] == ["0.05", "5", "1", "2", "50.0", "1.25", "50.0"]
    assert rows[2][5] == ""


def test_episodes_csv():
    rows = list(csv.reader(StringIO(ReportExporter().export_episodes_to_csv(_report()))))
    assert rows[0] == EPISODE_HEADER
    assert len(rows) == 3
    assert rows[1][2] == "success"
    assert rows[1][-1] == "1.25;"
    assert rows[2][6] == "90.00"


def test_write_csv(tmp_path):
    paths = ReportExporter().write_csv(_report(), tmp_path / "eval")
    assert [p.name for p in paths] == ["criteria.csv", "episodes.csv"]
    assert all(p.exists() for p in paths)


def test_pdf_export():
    data = ReportExporter().export_to_pdf(_report(), title="Ablation <none> & friends").getvalue()
    assert data.startswith(b"%PDF")
    assert len(data) > 1000
