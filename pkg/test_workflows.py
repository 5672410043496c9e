#!/usr/bin/env python
"""
Tests for the scan state machine and the verification helpers.
"""

import math
import os
import sys

import numpy as np
import pytest

# Add the repository root to the path so we can import the wt_density modules
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from wt_density.solvers.periodic import bloch_at
from wt_density.solvers.reduction import critical_points, epsilon_gap
from wt_density.solvers.spectral import DensityRecord
from wt_density.utils.config import GridConfig, parse_run_config
from wt_density.utils.errors import ConfigError
from wt_density.workflows.orchestrator import (
    END,
    EDGES,
    NODES,
    grid_points,
    refine_node,
    resolve_bands,
    run_density_workflow,
)
from wt_density.workflows.verifier import free_density, sample_band_points, spectral_suite


def test_uniform_grid_and_band_selection():
    config = parse_run_config({"preset": "mathieu"})
    bands = resolve_bands(config)
    assert bands.n_bands >= 2
    points = grid_points(config.grid, bands)
    assert len(points) == 2 * config.grid.points_per_band
    for p in points[:10]:
        lo, hi = bands.band(0)
        assert lo < p < hi

    uniform = grid_points(GridConfig(start=0.5, stop=2.5, num=5), bands)
    assert uniform == pytest.approx([0.5, 1.0, 1.5, 2.0, 2.5])

    with pytest.raises(ConfigError):
        grid_points(GridConfig(bands=(bands.n_bands + 3,), points_per_band=2), bands)


def test_resolve_bands_reaches_selected_band():
    config = parse_run_config({"preset": "step", "numerics": {"lambda_max": 5.0},
                               "grid": {"bands": [3], "points_per_band": 2}})
    bands = resolve_bands(config)
    assert bands.n_bands >= 4

    uniform = parse_run_config({"preset": "free", "numerics": {"lambda_max": 5.0}})
    bands = resolve_bands(uniform)
    assert bands.bands[-1][1] >= uniform.grid.stop


def test_state_machine_wiring():
    assert set(NODES) == set(EDGES)
    assert EDGES["finalize"]({}) == END
    assert EDGES["plan_grid"]({}) == "evaluate"


def test_free_scan_matches_closed_form():
    config = parse_run_config({"preset": "free", "grid": {"start": 1.0, "stop": 12.0, "num": 4}})
    state = run_density_workflow(config, workers=1)
    assert state["done"]
    assert state["resonances"] is None
    assert [r.lam for r in state["records"]] == sorted(r.lam for r in state["records"])
    assert len(state["records"]) == 4
    for record in state["records"]:
        assert record.ok, record.reason
        assert abs(record.rho - free_density(record.lam, 0.0)) <= 1e-6
    assert state["dips"] == []


def test_refine_node_shrinks_radius():
    config = parse_run_config({"preset": "wvn_only"})
    bands = resolve_bands(config)
    resonances = critical_points(config.operator.periodic, bands, config.operator.wvn.omega)
    records = [DensityRecord(lam=float(x), rho=1.0) for x in np.linspace(0.6, 1.4, 9)]
    state = {"config": config, "records": records, "resonances": resonances, "bands": bands, "iteration": 0}
    first = refine_node(state)
    assert first["iteration"] == 1
    centre = 1.0
    assert min(abs(x - centre) for x in first["pending"]) == pytest.approx(0.1 * 2.0 ** -3)
    assert all(x not in {r.lam for r in records} for x in first["pending"])

    state.update(first)
    second = refine_node(state)
    assert second["iteration"] == 2
    assert max(abs(x - centre) for x in second["pending"] if abs(x - centre) < 0.1) <= 0.1 * 2.0 ** -4 + 1e-12


def test_sample_band_points_avoid_critical_points():
    config = parse_run_config({"preset": "mathieu_wvn"})
    spec = config.operator
    bands = resolve_bands(config)
    points = sample_band_points(spec, bands, 6)
    assert 0 < len(points) <= 6
    for lam in points:
        assert bands.is_interior(lam, 0.04)
        k = bloch_at(spec.periodic, lam, bands=bands).k.real
        assert epsilon_gap(lam, k, spec.a, spec.wvn.omega, strict=False).epsilon >= 1e-2


def test_wvn_only_scan_reports_dip_at_critical_point():
    config = parse_run_config({"preset": "wvn_only", "grid": {"start": 0.8, "stop": 1.2, "num": 5}})
    state = run_density_workflow(config, workers=1)
    dips = [d for d in state["dips"] if abs(d.centre - 1.0) <= 1e-8]
    assert len(dips) == 1
    dip = dips[0]
    assert dip.nearest_left < 1.0 < dip.nearest_right
    for value in (dip.rho_left, dip.rho_right, dip.rho_min, dip.depth):
        assert math.isfinite(value) and value > 0
    near = [r for r in state["records"] if r.ok and abs(r.lam - 1.0) <= config.refinement.radius]
    assert any(r.lam < 1.0 for r in near) and any(r.lam > 1.0 for r in near)
    assert all(math.isfinite(r.rho) and r.rho > 0 for r in near)


def test_spectral_suite_on_perturbed_mathieu():
    config = parse_run_config({"preset": "mathieu_wvn"})
    bands = resolve_bands(config)
    points = sample_band_points(config.operator, bands, 2)
    rows = {row["check"]: row for row in spectral_suite(config, bands, points)}
    for check in ("points_evaluated", "wronskian_identity", "density_positive", "window_residual_trend",
                  "gauge_invariance", "m_oracle"):
        assert rows[check]["passed"], rows[check]
    assert "free_closed_form" not in rows


def test_free_density_formula():
    assert free_density(4.0, 0.0) == pytest.approx(2.0 / math.pi)
    assert free_density(4.0, math.pi / 2) == pytest.approx(1.0 / (2.0 * math.pi))


def main():
    """Run all workflow tests."""
    tests = [
        test_uniform_grid_and_band_selection,
        test_resolve_bands_reaches_selected_band,
        test_state_machine_wiring,
        test_free_scan_matches_closed_form,
        test_refine_node_shrinks_radius,
        test_sample_band_points_avoid_critical_points,
        test_wvn_only_scan_reports_dip_at_critical_point,
        test_spectral_suite_on_perturbed_mathieu,
        test_free_density_formula,
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
