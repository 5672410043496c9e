#!/usr/bin/env python
"""
Test script for error handling and user-facing messages.

Covers the exception hierarchy, the friendly error box, the run summary
written next to the logs and the CLI's handling of unexpected failures.
"""

import glob
import io
import os
import sys
import tempfile
from contextlib import redirect_stderr

# Add the repository root to the path so we can import the wt_density modules
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from wt_density import main as cli
from wt_density.utils import errors
from wt_density.utils.run_logger import (
    log_artifact,
    log_notes,
    log_operator,
    log_verification,
    setup_run_logging,
)
from wt_density.utils.ui_helpers import BOX_WIDTH, config_error_suggestions, print_friendly_system_error, print_status

CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "configs")


def test_error_hierarchy():
    leaves = [
        errors.ConfigError("grid.stop", "bad"),
        errors.InvalidArgumentError("x"),
        errors.StepSizeUnderflowError("tiny step", x=1.5),
        errors.NonFiniteStateError("overflow"),
        errors.BandStructureError("x"),
        errors.BranchError("x"),
        errors.EdgeDegeneracyError("x"),
        errors.FrequencyConditionError("x"),
        errors.ResonanceProximityError("x"),
        errors.NeighbourhoodError("x"),
        errors.NearResonantModeError("x"),
        errors.CriticalPointError("x"),
        errors.GrowthBoundViolation("bound", x=2.0, ratio=1.5),
        errors.ConvergenceError("x"),
        errors.DegenerateCoefficientError("x"),
    ]
    for exc in leaves:
        assert isinstance(exc, errors.WTDensityError), type(exc).__name__
    assert isinstance(errors.ConfigError("a", "b"), ValueError)
    assert str(errors.StepSizeUnderflowError("tiny step", x=1.5)) == "tiny step (at x=1.5)"
    violation = errors.GrowthBoundViolation("bound", x=2.0, ratio=1.5)
    assert violation.x == 2.0 and violation.ratio == 1.5


def test_friendly_error_box():
    buffer = io.StringIO()
    with redirect_stderr(buffer):
        print_friendly_system_error("density failed", ["first fix", "second fix"])
    lines = buffer.getvalue().strip("\n").split("\n")
    assert lines[0] == "!" * BOX_WIDTH
    assert lines[-1] == "!" * BOX_WIDTH
    assert "SYSTEM MESSAGE: density failed" in lines[1]
    assert "1. first fix" in lines
    assert "2. second fix" in lines


def test_status_table_goes_to_stderr():
    buffer = io.StringIO()
    with redirect_stderr(buffer):
        print_status("Band structure", [(0, "[0, 1]"), (1, "[2, 3]")])
    text = buffer.getvalue()
    assert "Band structure" in text
    assert "1  [2, 3]" in text


def test_config_error_suggestions():
    assert any("gamma" in s for s in config_error_suggestions("operator.wvn.gamma"))
    assert any("power > 1" in s for s in config_error_suggestions("operator.q1"))
    assert any("mathieu_wvn" in s for s in config_error_suggestions("preset"))
    assert config_error_suggestions("grid.stop")[0] == "Check the field 'grid.stop' in your run configuration"


def test_session_summary():
    with tempfile.TemporaryDirectory() as tmp:
        run_dir = setup_run_logging(tmp, "wt_density verify --config configs/free.json")
        assert run_dir is not None
        log_operator(["period a = 1", "q1: ZeroPotential"])
        log_notes("Dips", ["lambda=1: depth 0.5"])
        log_verification([
            {"suite": "ode", "check": "airy_backward", "passed": True, "measured": 1e-11, "threshold": 1e-8},
            {"suite": "spectral", "check": "m_oracle", "passed": False, "measured": 2e-3, "threshold": 1e-3},
        ])
        log_artifact(None, 2)
        with open(os.path.join(run_dir, "session_summary.md")) as f:
            summary = f.read()
        assert "`wt_density verify --config configs/free.json`" in summary
        assert "- period a = 1" in summary
        assert "| spectral | m_oracle | ❌ |" in summary
        assert "1 of 2 checks passed" in summary
        assert "2 rows written to <stdout>" in summary
        assert "## Run Complete" in summary

    assert setup_run_logging(None, "wt_density bands") is None
    log_artifact("ignored.csv", 1)


def test_unexpected_failure_exits_with_runtime_code():
    def boom(run_config, args):
        raise RuntimeError("solver exploded")

    saved = cli.COMMANDS["bands"]
    cli.COMMANDS["bands"] = boom
    buffer = io.StringIO()
    try:
        with redirect_stderr(buffer):
            code = cli.main(["bands", "--config", os.path.join(CONFIG_DIR, "free.json")])
    finally:
        cli.COMMANDS["bands"] = saved
    assert code == cli.EXIT_FAILURE
    assert "bands failed: solver exploded" in buffer.getvalue()


def test_config_error_box():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "bad.json")
        with open(path, "w") as f:
            f.write('{"preset": "mathieu", "operator": {"q1": {"type": "power", "amplitude": 1, "power": 0.5}}}')
        buffer = io.StringIO()
        with redirect_stderr(buffer):
            code = cli.main(["bands", "--config", path])
        assert code == cli.EXIT_CONFIG
        assert "operator.q1" in buffer.getvalue()
        assert "power > 1" in buffer.getvalue()
        assert not glob.glob(os.path.join(tmp, "*.csv"))


def main():
    """Run all error-handling tests."""
    tests = [
        test_error_hierarchy,
        test_friendly_error_box,
        test_status_table_goes_to_stderr,
        test_config_error_suggestions,
        test_session_summary,
        test_unexpected_failure_exits_with_runtime_code,
        test_config_error_box,
    ]
    failed = 0
    for test in tests:
        try:
            test()
            print(f"✅ {test.__name__}")
        except Exception as e:
            failed += 1
            print(f"❌ {test.__name__}: {e}")
    print(f"\n{len(tests) - failed} of {len(tests)} tests passed")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
