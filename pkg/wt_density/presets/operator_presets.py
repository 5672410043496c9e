"""
Named operator configurations.

Each preset is a run-configuration fragment in the serialized JSON form
(see ``wt_density.utils.config``); a run config that names a preset is
deep-merged on top of it, so any field can be overridden.
"""

import copy
import math
from typing import Any, Dict, List

# Free operator, Dirichlet boundary: rho' = sqrt(lambda)/pi
FREE = {
    "operator": {
        "period": 1.0,
        "periodic": {"type": "zero"},
        "wvn": {"c": 0.0, "omega": 0.3, "delta": 0.0, "gamma": 1.0},
        "q1": {"type": "none"},
        "alpha": 0.0,
    },
    "grid": {"start": 0.5, "stop": 25.0, "num": 50},
}

# Free operator, Neumann boundary: rho' = 1/(pi sqrt(lambda))
FREE_NEUMANN = {
    "operator": {
        "period": 1.0,
        "periodic": {"type": "zero"},
        "wvn": {"c": 0.0, "omega": 0.3, "delta": 0.0, "gamma": 1.0},
        "q1": {"type": "none"},
        "alpha": math.pi / 2,
    },
    "grid": {"start": 0.5, "stop": 25.0, "num": 50},
}

# q(x) = 2 cos(2x), a = pi
MATHIEU = {
    "operator": {
        "period": math.pi,
        "periodic": {"type": "trigonometric", "constant": 0.0, "cos": [2.0], "sin": []},
        "wvn": {"c": 0.0, "omega": 0.8, "delta": 0.0, "gamma": 0.9},
        "q1": {"type": "none"},
        "alpha": 0.0,
    },
    "grid": {"bands": [0, 1], "points_per_band": 10},
}

MATHIEU_WVN = {
    "operator": {
        "period": math.pi,
        "periodic": {"type": "trigonometric", "constant": 0.0, "cos": [2.0], "sin": []},
        "wvn": {"c": 1.0, "omega": 0.8, "delta": 0.0, "gamma": 0.9},
        "q1": {"type": "none"},
        "alpha": 0.0,
    },
    "grid": {"bands": [0, 1], "points_per_band": 5},
    "refinement": {"radius": 0.05, "levels": 4, "iterations": 1},
}

# Pure WvN perturbation of the free operator; the critical point sits at lambda = omega^2 = 1
WVN_ONLY = {
    "operator": {
        "period": 1.0,
        "periodic": {"type": "zero"},
        "wvn": {"c": 1.0, "omega": 1.0, "delta": 0.0, "gamma": 1.0},
        "q1": {"type": "none"},
        "alpha": 0.0,
    },
    "grid": {"start": 0.6, "stop": 1.4, "num": 9},
    "refinement": {"radius": 0.1, "levels": 4, "iterations": 1},
}

# Kronig-Penney cell: barrier of height 5 on [0.5, 1)
STEP = {
    "operator": {
        "period": 1.0,
        "periodic": {"type": "piecewise_constant", "breakpoints": [0.5], "values": [0.0, 5.0]},
        "wvn": {"c": 0.0, "omega": 0.3, "delta": 0.0, "gamma": 1.0},
        "q1": {"type": "none"},
        "alpha": 0.0,
    },
    "grid": {"bands": [0, 1], "points_per_band": 10},
}

PRESETS: Dict[str, Dict[str, Any]] = {
    "free": FREE,
    "free_neumann": FREE_NEUMANN,
    "mathieu": MATHIEU,
    "mathieu_wvn": MATHIEU_WVN,
    "wvn_only": WVN_ONLY,
    "step": STEP,
}


def preset_names() -> List[str]:
    return sorted(PRESETS)


def get_preset(name: str) -> Dict[str, Any]:
    """
    Get a deep copy of a named preset.

    Args:
        name: One of ``preset_names()``.

    Returns:
        Dict[str, Any]: Run-configuration fragment.

    Raises:
        KeyError: Unknown preset.
    """
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return copy.deepcopy(PRESETS[name])
