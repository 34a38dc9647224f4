import functools
import logging
import time
from typing import Callable

from .errors import NatsetError
from .solve_tracker import current_run_id, solve_tracker

logger = logging.getLogger(__name__)


def tracked_command(name: str) -> Callable:
    """Wrap a command so every solve inside it is tallied and summarized.

    The wrapped function returns an exit code; a non-zero code or an exception
    marks the run as failed.
    """
    def decorator(func: Callable[..., int]) -> Callable[..., int]:
        @functools.wraps(func)
        def wrapper(*args, **kwargs) -> int:
            run_id = solve_tracker.start_run(name)
            token = current_run_id.set(run_id)
            start = time.perf_counter()
            success, error_message = True, None
            try:
                code = func(*args, **kwargs)
                if code:
                    success, error_message = False, f"exit code {code}"
                return code
            except NatsetError as e:
                success, error_message = False, f"{type(e).__name__}: {e}"
                raise
            finally:
                current_run_id.reset(token)
                duration_ms = (time.perf_counter() - start) * 1000.0
                summary = solve_tracker.finish_run(run_id, success, error_message)
                if summary:
                    lines = [
                        "=== RUN SUMMARY ===",
                        f"Run ID: {summary.run_id}",
                        f"Command: {summary.command}",
                        f"Duration: {duration_ms:.0f}ms",
                        f"Solves: {len(summary.solves)} "
                        f"(relaxation {summary.count('relaxation')}, leaf {summary.count('leaf')}, "
                        f"heuristic {summary.count('heuristic')})",
                        f"B&B nodes: {summary.total_nodes}",
                        f"QP iterations: {summary.total_qp_iterations}",
                        f"Success: {summary.success}",
                    ]
                    if not summary.success and summary.error_message:
                        lines.append(f"Error: {summary.error_message}")
                    lines.append("=== END RUN SUMMARY ===")
                    logger.info("\n".join(lines))
        return wrapper
    return decorator
