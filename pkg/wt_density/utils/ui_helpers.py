"""
UI helpers for displaying status messages, errors and run summaries.

Everything here prints to stderr: stdout is reserved for artifacts.
"""

import sys
from typing import Iterable, List, Optional, Sequence

from wt_density.utils.debugging import setup_logging

logger = setup_logging()

BOX_WIDTH = 70


def print_friendly_system_error(error_message: str, suggestions: Optional[List[str]] = None) -> None:
    """
    Print a user-friendly system error with suggestions.

    Args:
        error_message: The main error message
        suggestions: List of suggestions to help resolve the issue
    """
    out = sys.stderr
    print("\n" + "!" * BOX_WIDTH, file=out)
    print(f"SYSTEM MESSAGE: {error_message}".center(BOX_WIDTH), file=out)
    print("-" * BOX_WIDTH, file=out)

    if suggestions:
        print("Suggestions to fix this:", file=out)
        for i, suggestion in enumerate(suggestions, 1):
            print(f"{i}. {suggestion}", file=out)

    print("!" * BOX_WIDTH + "\n", file=out)


def config_error_suggestions(field: str) -> List[str]:
    """Suggestions shown with a configuration error for ``field``."""
    suggestions = [f"Check the field '{field}' in your run configuration"]
    if field.startswith("operator.wvn"):
        suggestions.append("gamma must lie in (1/2, 1]; omega must be a real number")
    elif field.startswith("operator.periodic"):
        suggestions.append("Use type 'zero', 'trigonometric' (constant, cos, sin) or "
                           "'piecewise_constant' (breakpoints, values)")
    elif field.startswith("operator.q1"):
        suggestions.append("Use type 'none', 'power' (amplitude, power > 1) or 'bump' (height, start, end)")
    elif field == "preset":
        suggestions.append("Run with a known preset: free, free_neumann, mathieu, mathieu_wvn, wvn_only, step")
    suggestions.append("See configs/ for complete examples")
    return suggestions


def print_status(title: str, rows: Iterable[Sequence[object]]) -> None:
    """Print a short framed status table on stderr."""
    out = sys.stderr
    print("=" * BOX_WIDTH, file=out)
    print(title, file=out)
    print("-" * BOX_WIDTH, file=out)
    for row in rows:
        print("  ".join(str(cell) for cell in row), file=out)
    print("=" * BOX_WIDTH, file=out)
