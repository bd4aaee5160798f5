#!/usr/bin/env python3
"""
Tests for configuration loading and the Numerics value object.
"""

import pytest
import yaml

from config import Config, Numerics


def write_config(tmp_path, document):
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(document), encoding="utf-8")
    return Config(str(path))


def test_numerics_read_from_sections(tmp_path, monkeypatch):
    monkeypatch.delenv("DKDESK_THREADS", raising=False)
    cfg = write_config(tmp_path, {
        "numerics": {"circle_points": 48, "sphere_order": 20},
        "tolerances": {"accept": 1e-5},
        "runner": {"threads": 3},
    })
    assert cfg.get("numerics.circle_points") == 48
    numerics = Numerics.from_config(cfg)
    assert numerics.circle_points == 48
    assert numerics.sphere_order == 20 and numerics.sphere_phi_points == 20
    assert numerics.accept_tolerance == 1e-5
    assert numerics.assert_tolerance == 1e-7
    assert numerics.threads == 3


def test_empty_sections_fall_back_to_defaults(tmp_path, monkeypatch):
    monkeypatch.delenv("DKDESK_THREADS", raising=False)
    cfg = write_config(tmp_path, {"numerics": None, "runner": {}})
    assert cfg.numerics_config == {} and cfg.tolerance_config == {}
    assert Numerics.from_config(cfg) == Numerics()


def test_thread_environment_overrides_runner_section(tmp_path, monkeypatch):
    monkeypatch.setenv("DKDESK_THREADS", "2")
    cfg = write_config(tmp_path, {"runner": {"threads": 5}})
    assert Numerics.from_config(cfg).threads == 2


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        Config(str(tmp_path / "absent.yaml"))


def test_out_of_range_numerics_rejected():
    with pytest.raises(ValueError):
        Numerics(circle_points=4)
    with pytest.raises(ValueError):
        Numerics(sphere_order=15)
