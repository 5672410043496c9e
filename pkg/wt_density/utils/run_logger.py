"""
Run-specific logging utilities.

When a log directory is configured, every CLI invocation gets a
``run_<timestamp>/`` directory with a ``session_summary.md`` recording the
command, the operator, each refinement iteration of a density scan, the
verification report and the final artifact. Without a log directory all
functions here are no-ops.
"""

from datetime import datetime
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

# Global variables to store the run directory and session ID
RUN_LOGS_DIR: Optional[Path] = None
SESSION_ID: Optional[str] = None


def setup_run_logging(log_dir: Optional[str], command: str) -> Optional[Path]:
    """
    Set up a dedicated directory for this run.

    Args:
        log_dir: Base log directory; None disables run logs.
        command: The CLI command line, recorded in the summary.

    Returns:
        Optional[Path]: The run directory, or None when disabled.
    """
    global RUN_LOGS_DIR, SESSION_ID

    if not log_dir:
        RUN_LOGS_DIR = None
        return None

    SESSION_ID = datetime.now().strftime("%Y%m%d_%H%M%S_%f")
    run_dir = Path(log_dir) / f"run_{SESSION_ID}"
    run_dir.mkdir(parents=True, exist_ok=True)
    RUN_LOGS_DIR = run_dir

    with open(run_dir / "session_summary.md", "w") as f:
        f.write(f"# Spectral Density Run {SESSION_ID}\n\n")
        f.write(f"## Command\n\n`{command}`\n\n")
        f.write(f"Started at {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}\n\n")
    return run_dir


def _append(text: str) -> None:
    if RUN_LOGS_DIR is None:
        return
    with open(RUN_LOGS_DIR / "session_summary.md", "a") as f:
        f.write(text)


def log_operator(description: Iterable[str]) -> None:
    """Record the operator under study."""
    _append("## Operator\n\n" + "".join(f"- {line}\n" for line in description) + "\n")


def log_refinement_iteration(iteration: int, n_points: int, n_failed: int, added: Sequence[float]) -> None:
    """
    Record one pass of the density scan.

    Args:
        iteration: Pass number (0 is the initial grid).
        n_points: Points evaluated so far.
        n_failed: Points that carry a failure reason.
        added: Refinement points added by this pass.
    """
    text = f"### Scan iteration {iteration}\n\n"
    text += f"Points evaluated: {n_points} ({n_failed} with a failure reason)\n"
    if added:
        text += f"Refinement points added: {len(added)} in [{min(added):.10g}, {max(added):.10g}]\n"
    _append(text + "\n")


def log_verification(rows: Sequence[dict]) -> None:
    """Record a verification report as a markdown table."""
    failed = [r for r in rows if not r["passed"]]
    text = "## Verification\n\n| suite | check | passed | measured | threshold |\n|---|---|---|---|---|\n"
    for r in rows:
        mark = "✅" if r["passed"] else "❌"
        text += f"| {r['suite']} | {r['check']} | {mark} | {r['measured']:.3e} | {r['threshold']:.1e} |\n"
    text += f"\n{len(rows) - len(failed)} of {len(rows)} checks passed\n\n"
    _append(text)


def log_notes(title: str, lines: List[str]) -> None:
    _append(f"## {title}\n\n" + "".join(f"- {line}\n" for line in lines) + "\n")


def log_artifact(path: Optional[str], n_rows: int) -> None:
    """Record the final artifact and close the summary."""
    target = path or "<stdout>"
    _append(f"## Artifact\n\n{n_rows} rows written to {target}\n\n")
    _append(f"## Run Complete\n\nRun completed at {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}\n")
