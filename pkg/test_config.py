#!/usr/bin/env python
"""
Tests for run-configuration loading: field errors by dotted path, preset
merging and the bundled example configurations.
"""

import argparse
import glob
import json
import os
import sys
import tempfile

import pytest

# Add the repository root to the path so we can import the wt_density modules
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from wt_density.presets.operator_presets import get_preset, preset_names
from wt_density.solvers.potentials import TrigonometricPotential, ZeroPotential
from wt_density.utils.config import Config, describe_operator, load_run_config, parse_run_config
from wt_density.utils.errors import ConfigError

CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "configs")


def _field_of(document) -> str:
    with pytest.raises(ConfigError) as info:
        parse_run_config(document)
    return info.value.field


def _free_with(**blocks):
    document = {"preset": "free"}
    document.update(blocks)
    return document


def test_bundled_configs_load():
    paths = sorted(glob.glob(os.path.join(CONFIG_DIR, "*.json")))
    assert paths
    for path in paths:
        config = load_run_config(path)
        assert config.operator.a > 0


def test_every_preset_parses():
    for name in preset_names():
        config = parse_run_config({"preset": name})
        assert config.preset == name
    with pytest.raises(KeyError):
        get_preset("nope")


def test_explicit_free_config():
    config = load_run_config(os.path.join(CONFIG_DIR, "free.json"))
    assert isinstance(config.operator.periodic.q, ZeroPotential)
    assert config.operator.unperturbed
    assert config.grid.num == 50 and not config.grid.by_band
    assert config.numerics.tolerance.rtol == 1e-10


def test_field_errors_name_dotted_path():
    assert _field_of(_free_with(operator={"wvn": {"gamma": 0.3}})) == "operator.wvn.gamma"
    assert _field_of(_free_with(operator={"wvn": {"phase": 1.0}})) == "operator.wvn.phase"
    assert _field_of(_free_with(extra=1)) == "extra"
    assert _field_of({"preset": "preset"}) == "preset"
    assert _field_of(_free_with(numerics={"rtol": 0.05})) == "numerics.rtol"
    assert _field_of(_free_with(numerics={"atol": -1.0})) == "numerics.atol"
    assert _field_of(_free_with(grid={"start": 3.0, "stop": 1.0, "num": 5})) == "grid.stop"
    assert _field_of(_free_with(grid={"bands": [-1], "points_per_band": 3})) == "grid.bands"
    assert _field_of(_free_with(operator={"period": 0.0})) == "operator.period"
    assert _field_of(_free_with(operator={"alpha": 4.0})) == "operator.alpha"
    assert _field_of(_free_with(operator={"q1": {"type": "power", "amplitude": 1.0, "power": 0.5}})) == "operator.q1"
    assert _field_of(_free_with(operator={"periodic": {"type": "sawtooth"}})) == "operator.periodic.type"
    assert _field_of({"numerics": {}}) == "operator"


def test_error_message_format():
    with pytest.raises(ConfigError) as info:
        parse_run_config(_free_with(operator={"wvn": {"gamma": 0.3}}))
    assert str(info.value).startswith("operator.wvn.gamma: ")
    assert "(1/2, 1]" in str(info.value)


def test_preset_merge_keeps_untouched_fields():
    config = parse_run_config({"preset": "mathieu_wvn", "operator": {"wvn": {"c": 2.0}}})
    assert config.operator.wvn.c == 2.0
    assert config.operator.wvn.omega == 0.8
    assert config.operator.wvn.gamma == 0.9
    assert isinstance(config.operator.periodic.q, TrigonometricPotential)
    assert config.grid.bands == (0, 1)


def test_block_replaced_when_form_changes():
    # uniform grid over a by-band preset
    config = parse_run_config({"preset": "mathieu", "grid": {"start": 0.5, "stop": 3.0, "num": 5}})
    assert not config.grid.by_band
    assert config.grid.num == 5

    # a different cell type drops the preset's cos/sin coefficients
    config = parse_run_config({"preset": "mathieu", "operator": {"periodic": {"type": "zero"}}})
    assert isinstance(config.operator.periodic.q, ZeroPotential)


def test_file_errors():
    with tempfile.TemporaryDirectory() as tmp:
        missing = os.path.join(tmp, "missing.json")
        with pytest.raises(ConfigError) as info:
            load_run_config(missing)
        assert info.value.field == "<file>"

        broken = os.path.join(tmp, "broken.json")
        with open(broken, "w") as f:
            f.write('{"preset": "free",')
        with pytest.raises(ConfigError) as info:
            load_run_config(broken)
        assert info.value.field == "<file>"

        listed = os.path.join(tmp, "list.json")
        with open(listed, "w") as f:
            json.dump([1, 2], f)
        with pytest.raises(ConfigError) as info:
            load_run_config(listed)
        assert info.value.field == "<root>"


def test_ambient_config_from_environment():
    saved = os.environ.get("WT_LOG_LEVEL")
    os.environ["WT_LOG_LEVEL"] = "debug"
    try:
        config = Config(argparse.Namespace(workers=3))
        assert config.log_level == "DEBUG"
        assert config.workers == 3
        assert Config().workers >= 1
    finally:
        if saved is None:
            os.environ.pop("WT_LOG_LEVEL", None)
        else:
            os.environ["WT_LOG_LEVEL"] = saved


def test_describe_operator():
    lines = describe_operator(parse_run_config({"preset": "mathieu_wvn"}).operator)
    assert any(line.startswith("period a = 3.14159") for line in lines)
    assert any("omega=0.8" in line for line in lines)


def main():
    """Run all configuration tests."""
    tests = [
        test_bundled_configs_load,
        test_every_preset_parses,
        test_explicit_free_config,
        test_field_errors_name_dotted_path,
        test_error_message_format,
        test_preset_merge_keeps_untouched_fields,
        test_block_replaced_when_form_changes,
        test_file_errors,
        test_ambient_config_from_environment,
        test_describe_operator,
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
