import logging
import threading

import pytest

from conftest import box_natset, straight_trajectory
from core.dynamics import double_integrator
from core.errors import HorizonZero
from core.middleware import tracked_command
from core.projector import project
from core.solve_tracker import SolveRecord, SolveTracker, current_run_id, solve_tracker


def test_records_attach_to_the_named_run():
    tracker = SolveTracker()
    run_id = tracker.start_run("project")
    tracker.track_solve(SolveRecord(kind="relaxation", status="Optimal", iterations=4, nodes=1),
                        run_id=run_id)
    tracker.track_solve(SolveRecord(kind="leaf", status="Optimal", iterations=2, nodes=1),
                        run_id=run_id)
    tracker.track_solve(SolveRecord(kind="leaf", status="Optimal"), run_id="unknown")
    summary = tracker.finish_run(run_id)
    assert summary.total_nodes == 2
    assert summary.total_qp_iterations == 6
    assert summary.count("leaf") == 1
    assert tracker.get_run_summary(run_id) is summary
    assert tracker.finish_run(run_id) is None
    totals = tracker.totals()
    assert totals["runs"] == 1 and totals["kind_breakdown"]["relaxation"]["solves"] == 1


def test_records_without_a_run_are_dropped():
    tracker = SolveTracker()
    tracker.track_solve(SolveRecord(kind="leaf", status="Optimal"))
    assert tracker.totals()["runs"] == 0


def test_concurrent_records_are_all_kept():
    tracker = SolveTracker()
    run_id = tracker.start_run("benchmark")

    def work():
        for _ in range(200):
            tracker.track_solve(SolveRecord(kind="relaxation", status="Optimal", nodes=1),
                                run_id=run_id)

    threads = [threading.Thread(target=work) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert tracker.finish_run(run_id).total_nodes == 800


def test_tracked_command_summarizes_solves(caplog):
    frames = [[(-1, 1, -1, 1)], [(-0.5, 1.5, -1, 1)], [(0, 2, 0.5, 1.5), (0, 2, -2.5, -1.5)]]

    @tracked_command("project")
    def run():
        assert current_run_id.get() is not None
        project(box_natset(frames, 0.5), double_integrator(0.5), straight_trajectory(2, 0.5))
        return 0

    with caplog.at_level(logging.INFO, logger="core.middleware"):
        assert run() == 0
    assert "=== RUN SUMMARY ===" in caplog.text
    assert "Command: project" in caplog.text
    assert "Success: True" in caplog.text
    summary = solve_tracker.completed_runs[-1]
    assert summary.count("relaxation") >= 1
    assert summary.count("projection") == 1
    assert current_run_id.get() is None


def test_tracked_command_marks_failures(caplog):
    @tracked_command("gen-natset")
    def fails_with_code():
        return 3

    @tracked_command("gen-natset")
    def raises():
        raise HorizonZero("frame 0 too small")

    with caplog.at_level(logging.INFO, logger="core.middleware"):
        assert fails_with_code() == 3
        with pytest.raises(HorizonZero):
            raises()
    assert not solve_tracker.completed_runs[-1].success
    assert "HorizonZero" in solve_tracker.completed_runs[-1].error_message
