"""
Orchestrator module for density scans.

The scan runs as a small state machine over a TypedDict state:

    plan_grid -> evaluate -> refine -> evaluate -> ... -> finalize

``plan_grid`` resolves the band structure and the critical points and lays
out the initial lambda-grid; ``evaluate`` runs every pending point through
the spectral pipeline (in a process pool when more than one worker is
requested); ``refine`` adds geometric points toward the critical points
inside the scanned range; ``finalize`` sorts the records by lambda, flags
possible subordinate points and builds the dip reports.
"""

from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from typing_extensions import TypedDict

from wt_density.solvers.periodic import BandStructure, bands_covering
from wt_density.solvers.reduction import ResonanceSet, critical_points, validate_frequency
from wt_density.solvers.spectral import (
    DensityRecord,
    DipReport,
    SpectralSettings,
    density_scan,
    dip_report,
    flag_subordinate,
    refine_grid,
)
from wt_density.utils.config import GridConfig, RunConfig
from wt_density.utils.debugging import setup_logging
from wt_density.utils.errors import ConfigError, InvalidArgumentError
from wt_density.utils.run_logger import log_refinement_iteration

# Set up logging
logger = setup_logging()

END = "__end__"


class ScanState(TypedDict):
    # Input
    config: RunConfig
    settings: SpectralSettings
    workers: int
    seed: Optional[int]

    # Working data
    bands: Optional[BandStructure]
    resonances: Optional[ResonanceSet]
    pending: List[float]
    records: List[DensityRecord]
    iteration: int

    # Output
    dips: List[DipReport]
    done: bool


def grid_points(grid: GridConfig, bands: BandStructure) -> List[float]:
    """
    The initial lambda-grid.

    A uniform range is taken as is; a band selection places
    ``points_per_band`` equally spaced interior points in every chosen band.
    """
    if not grid.by_band:
        return [float(x) for x in np.linspace(grid.start, grid.stop, grid.num)]
    points: List[float] = []
    for n in grid.bands:
        if n >= bands.n_bands:
            raise ConfigError("grid.bands", f"band {n} not resolved (only {bands.n_bands} complete bands)")
        lo, hi = bands.band(n)
        m = grid.points_per_band
        points.extend(lo + (j + 1) * (hi - lo) / (m + 1) for j in range(m))
    return points


def _grid_top(config: RunConfig) -> float:
    grid = config.grid
    if grid.by_band:
        return -np.inf
    return float(grid.stop)


def resolve_bands(config: RunConfig) -> BandStructure:
    """Band structure covering the configured grid: its top value or its highest selected band."""
    periodic = config.operator.periodic
    bands = bands_covering(periodic, _grid_top(config), config.numerics.lambda_max)
    if config.grid.by_band:
        for _ in range(max(config.grid.bands) + 1):
            if max(config.grid.bands) < bands.n_bands:
                break
            bands = bands_covering(periodic, bands.edges[-1] + 1.0, bands.lambda_max)
    return bands


def plan_grid_node(state: ScanState) -> Dict[str, Any]:
    config = state["config"]
    spec = config.operator
    bands = resolve_bands(config)
    resonances = None
    if spec.wvn.active:
        if validate_frequency(spec.a, spec.wvn.omega).passed:
            resonances = critical_points(spec.periodic, bands, spec.wvn.omega)
        else:
            logger.warning("⚠️ frequency condition fails: no critical points, density values are not covered")
    pending = grid_points(config.grid, bands)
    logger.info(f"Planned {len(pending)} grid points over {bands.n_bands} bands")
    return {"bands": bands, "resonances": resonances, "pending": sorted(pending), "iteration": 0}


def _map_function(workers: int) -> Callable:
    if workers <= 1:
        return map

    def pooled(fn, items):
        items = list(items)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))

    return pooled


def evaluate_node(state: ScanState) -> Dict[str, Any]:
    pending = state["pending"]
    logger.info(f"Evaluating {len(pending)} points (iteration {state['iteration']}, workers={state['workers']})")
    new_records = density_scan(state["config"].operator, state["bands"], pending, state["settings"],
                               map_fn=_map_function(state["workers"]))
    records = sorted(state["records"] + new_records, key=lambda r: r.lam)
    failed = sum(1 for r in records if not r.ok)
    log_refinement_iteration(state["iteration"], len(records), failed, pending if state["iteration"] else [])
    return {"records": records, "pending": []}


def refine_node(state: ScanState) -> Dict[str, Any]:
    config = state["config"]
    iteration = state["iteration"] + 1
    policy = config.refinement
    radius = policy.radius * 2.0 ** (-(iteration - 1) * policy.levels)
    done_lams = [r.lam for r in state["records"]]
    candidates = refine_grid(done_lams, state["resonances"], state["bands"], radius, policy.levels)
    seen = set(done_lams)
    pending = [x for x in candidates if x not in seen]
    logger.info(f"Refinement pass {iteration}: {len(pending)} new points (radius {radius:.3g})")
    return {"pending": pending, "iteration": iteration}


def finalize_node(state: ScanState) -> Dict[str, Any]:
    records = flag_subordinate(sorted(state["records"], key=lambda r: r.lam))
    dips: List[DipReport] = []
    if state["resonances"] is not None:
        for point in state["resonances"].points:
            try:
                dips.append(dip_report(records, point.lam, radius=state["config"].refinement.radius))
            except InvalidArgumentError:
                continue
    for dip in dips:
        logger.info(f"Dip near lambda={dip.centre:.10g}: rho_min={dip.rho_min:.6g} at {dip.lam_min:.10g}, "
                    f"depth {dip.depth:.4g}")
    ok = sum(1 for r in records if r.ok)
    logger.info(f"✅ density scan finished: {ok} of {len(records)} points evaluated")
    return {"records": records, "dips": dips, "done": True}


def _after_evaluate(state: ScanState) -> str:
    config = state["config"]
    if state["resonances"] is None or state["iteration"] >= config.refinement.iterations:
        return "finalize"
    return "refine"


def _after_refine(state: ScanState) -> str:
    return "evaluate" if state["pending"] else "finalize"


NODES: Dict[str, Callable[[ScanState], Dict[str, Any]]] = {
    "plan_grid": plan_grid_node,
    "evaluate": evaluate_node,
    "refine": refine_node,
    "finalize": finalize_node,
}

EDGES: Dict[str, Callable[[ScanState], str]] = {
    "plan_grid": lambda state: "evaluate",
    "evaluate": _after_evaluate,
    "refine": _after_refine,
    "finalize": lambda state: END,
}


def run_density_workflow(run_config: RunConfig, workers: int = 1, seed: Optional[int] = None) -> ScanState:
    """
    Run the density scan state machine.

    Args:
        run_config: Validated run configuration.
        workers: Worker processes for the evaluation node; results are
            ordered by lambda regardless of scheduling.
        seed: Recorded in the state; the scan itself is deterministic.

    Returns:
        ScanState: Final state with ``records`` sorted by lambda and ``dips``.
    """
    state: ScanState = {
        "config": run_config,
        "settings": run_config.numerics.spectral_settings(),
        "workers": max(1, int(workers)),
        "seed": seed,
        "bands": None,
        "resonances": None,
        "pending": [],
        "records": [],
        "iteration": 0,
        "dips": [],
        "done": False,
    }
    node = "plan_grid"
    while node != END:
        logger.debug(f"workflow node: {node}")
        state.update(NODES[node](state))
        node = EDGES[node](state)
    return state
