from dataclasses import replace

import numpy as np
import pytest

from api.models import FilterSpec, RegionSpec
from core.dynamics import Trajectory
from core.errors import NonContiguousFrames, ParseError
from core.ingest import (CSV_COLUMNS, align_to_start, filter_tasks, load_csv, read_raw_states,
                         write_csv)

HEADER = ",".join(CSV_COLUMNS)


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def moving(traj_id, start, velocity, n=10, dt=0.04, actor_class="car"):
    t = np.arange(n)[:, None] * dt
    pos = np.asarray(start) + t * np.asarray(velocity)
    states = np.column_stack([pos[:, 0], np.full(n, velocity[0]), pos[:, 1], np.full(n, velocity[1])])
    return Trajectory(states=states, dt=dt, id=traj_id, actor_class=actor_class)


def test_write_then_load_keeps_states(tmp_path):
    trajs = [moving("a", (0, 0), (5, 0)), moving("b", (1, 2), (0, -3), actor_class="truck")]
    path = write_csv(trajs, tmp_path / "data.csv")
    loaded = load_csv(path, dt=0.04)
    assert [t.id for t in loaded] == ["a", "b"]
    assert loaded[1].actor_class == "truck"
    np.testing.assert_allclose(loaded[0].states, trajs[0].states, rtol=0, atol=1e-12)


def test_rows_are_grouped_and_sorted_per_actor(tmp_path):
    path = write_lines(tmp_path / "raw.csv", [
        HEADER,
        "7,11,1,0,1,0,0,0,0,car",
        "7,10,0,0,1,0,0,0,0,car",
        "8,3,5,5,0,1,0,0,1.57,pedestrian",
        "8,4,5,6,0,1,0,0,1.57,pedestrian",
    ])
    trajs = load_csv(path, dt=1.0)
    assert trajs[0].id == "7" and trajs[0].start_frame == 10
    np.testing.assert_array_equal(trajs[0].states[:, 0], [0, 1])


def test_non_contiguous_frames_name_the_actor(tmp_path):
    path = write_lines(tmp_path / "raw.csv", [
        HEADER,
        "1,0,0,0,0,0,0,0,0,car",
        "1,2,0,0,0,0,0,0,0,car",
    ])
    with pytest.raises(NonContiguousFrames) as info:
        load_csv(path)
    assert str(info.value) == "NonContiguousFrames('1')"


def test_parse_errors_carry_line_numbers(tmp_path):
    bad_number = write_lines(tmp_path / "bad.csv", [
        HEADER,
        "1,0,0,0,0,0,0,0,0,car",
        "1,1,zero,0,0,0,0,0,0,car",
    ])
    with pytest.raises(ParseError) as info:
        read_raw_states(bad_number)
    assert info.value.line == 3

    bad_header = write_lines(tmp_path / "header.csv", ["id,frame,x", "1,0,0"])
    with pytest.raises(ParseError) as info:
        read_raw_states(bad_header)
    assert info.value.line == 1

    fractional = write_lines(tmp_path / "frac.csv", [HEADER, "1,0.5,0,0,0,0,0,0,0,car"])
    with pytest.raises(ParseError):
        read_raw_states(fractional)

    with pytest.raises(ParseError):
        read_raw_states(tmp_path / "missing.csv")


def circle(x, y, r):
    return RegionSpec(shape="circle", center=[x, y], radius=r)


def test_align_to_start_trims_to_first_frame_inside():
    traj = moving("a", (-1.0, 0.0), (10.0, 0.0), n=20, dt=0.04)
    aligned = align_to_start(traj, circle(0.0, 0.0, 0.25))
    # x = -1 + 0.4 t; the first x >= -0.25 is at t = 2 (x = -0.2)
    assert aligned.start_frame == 2
    assert aligned.states[0, 0] == pytest.approx(-0.2)
    assert align_to_start(traj, circle(100.0, 0.0, 1.0)) is None


def test_filter_tasks():
    start = circle(0.0, 0.0, 1.0)
    end = RegionSpec(shape="polygon", vertices=[[2, -1], [4, -1], [4, 1], [2, 1]])
    spec = FilterSpec(start=start, end=end)
    trajs = [
        moving("goes", (0, 0), (8, 0)),                       # ends at x = 2.88
        moving("parked", (0, 0), (0.01, 0)),                  # too slow
        moving("turns", (0, 0), (0, 8)),                      # wrong end set
        moving("walker", (0, 0), (8, 0), actor_class="pedestrian"),
        moving("elsewhere", (10, 10), (8, 0)),                # never in the start set
    ]
    kept = filter_tasks(trajs, spec)
    assert [t.id for t in kept] == ["goes"]

    relaxed = filter_tasks(trajs, FilterSpec(start=start, moving_only=False))
    assert {t.id for t in relaxed} == {"goes", "parked", "turns", "walker"}


def test_filter_keeps_only_actors_whose_recording_starts_in_the_start_set():
    start = circle(0.0, 0.0, 1.0)
    trajs = [
        moving("a", (0.0, 0.0), (8, 0)),
        moving("b", (0.2, 0.0), (8, 0)),
        moving("late", (-2.0, 0.0), (8, 0)),                  # enters the start set at t = 4
    ]
    kept = filter_tasks(trajs, FilterSpec(start=start))
    assert [t.id for t in kept] == ["a", "b"]
    assert filter_tasks(trajs, FilterSpec(start=start, align=False))[1].states[0, 0] == 0.2


def test_filter_restarts_the_clock_of_kept_trajectories():
    recorded = replace(moving("a", (0.0, 0.0), (8, 0)), start_frame=350)
    (aligned,) = filter_tasks([recorded], FilterSpec(start=circle(0.0, 0.0, 1.0)))
    assert aligned.start_frame == 0
    np.testing.assert_array_equal(aligned.states, recorded.states)
    (untouched,) = filter_tasks([recorded], FilterSpec(start=circle(0.0, 0.0, 1.0), align=False))
    assert untouched.start_frame == 350


def test_region_validation():
    with pytest.raises(ValueError):
        RegionSpec(shape="polygon", vertices=[[0, 0], [0, 1], [1, 1], [1, 0]])  # clockwise
    with pytest.raises(ValueError):
        RegionSpec(shape="circle", center=[0, 0], radius=0)


def test_ingest_script_writes_filtered_dataset(tmp_path, capsys):
    from scripts.ingest import main

    raw_a = write_csv([moving("1", (0, 0), (8, 0)), moving("2", (50, 50), (8, 0))],
                      tmp_path / "a.csv")
    raw_b = write_csv([moving("1", (0.1, 0), (8, 0))], tmp_path / "b.csv")
    spec = tmp_path / "filter.json"
    spec.write_text(FilterSpec(start=circle(0.0, 0.0, 1.0)).model_dump_json(), encoding="utf-8")
    out = tmp_path / "dataset.csv"

    assert main(["--raw", f"{raw_a},{raw_b}", "--filter", str(spec), "--out", str(out)]) == 0
    assert [t.id for t in load_csv(out, dt=0.04)] == ["a:1", "b:1"]
    assert "Ingestion Complete" in capsys.readouterr().out

    far = tmp_path / "far.json"
    far.write_text(FilterSpec(start=circle(500.0, 0.0, 1.0)).model_dump_json(), encoding="utf-8")
    assert main(["--raw", str(raw_a), "--filter", str(far), "--out", str(out)]) == 3
