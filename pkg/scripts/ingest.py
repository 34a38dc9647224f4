import argparse
import os
import sys
import traceback
from typing import List, Optional

from api.models import FilterSpec
from core.config import settings
from core.dynamics import Trajectory
from core.errors import NatsetError
from core.ingest import filter_tasks, load_csv, write_csv


def load_raw_trajectories(raw_paths: List[str]) -> List[Trajectory]:
    """
    Loads every raw recording and concatenates the per-actor trajectories.
    Actor ids are prefixed with the recording name when several files are given,
    so ids stay unique across recordings.
    """
    all_trajectories = []
    for raw_path in raw_paths:
        name = os.path.splitext(os.path.basename(raw_path))[0]
        print(f"\nProcessing file: {raw_path}")
        trajectories = load_csv(raw_path, dt=settings.sample_period)
        if len(raw_paths) > 1:
            trajectories = [
                Trajectory(states=t.states, dt=t.dt, id=f"{name}:{t.id}",
                           actor_class=t.actor_class, start_frame=t.start_frame)
                for t in trajectories
            ]
        print(f"  -> {len(trajectories)} actors")
        all_trajectories.extend(trajectories)

    print(f"\nTotal trajectories from all files: {len(all_trajectories)}")
    return all_trajectories


def main(argv: Optional[List[str]] = None) -> int:
    """Raw recordings -> task-filtered, start-aligned dataset CSV."""
    parser = argparse.ArgumentParser(description=main.__doc__)
    parser.add_argument("--raw", required=True, help="comma-separated raw CSV recordings")
    parser.add_argument("--filter", required=True, help="FilterSpec JSON (start/end regions)")
    parser.add_argument("--out", default=os.path.join(settings.data_path, "dataset.csv"))
    args = parser.parse_args(argv)

    try:
        print("--- Starting Trajectory Ingestion ---")
        print(f"FRAME RATE: {settings.frames_per_second} fps")

        with open(args.filter, encoding="utf-8") as f:
            spec = FilterSpec.model_validate_json(f.read())

        # 1. Load every recording
        trajectories = load_raw_trajectories(args.raw.split(","))
        if not trajectories:
            print("ERROR: No trajectories were loaded! Exiting.")
            return 3

        # 2. Keep moving vehicles that perform the task
        kept = filter_tasks(trajectories, spec)
        if not kept:
            print("ERROR: No trajectory passed the task filter! Exiting.")
            return 3

        # 3. Write the dataset
        path = write_csv(kept, args.out)
        print("\n--- Ingestion Complete! ---")
        print(f"Dataset written to {path} with {len(kept)} trajectories.")
        return 0

    except NatsetError as e:
        print(f"ERROR during ingestion ({e.stage}): {e}")
        return e.exit_code
    except Exception as e:
        print(f"FATAL ERROR during ingestion: {e}")
        print(f"Error type: {type(e).__name__}")
        print("Full traceback:")
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
