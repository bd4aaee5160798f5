#!/usr/bin/env python3
"""
Tests for manifest validation, report files and the command line.
"""

import pytest
import yaml

from main import main
from manifest import ManifestError, Workspace, validate_manifest, create_operation_tools
from runner import (
    EXIT_OK, EXIT_PARSE, EXIT_VALIDATION, run_manifest, dump_report, strip_timing, execute_manifest,
    collect_warnings,
)
from config import Numerics


COARSE = {"circle_points": 16, "sphere_order": 16, "interval_order": 8, "t_quadrature": 8,
          "simplex_quadrature": 8, "holonomy_steps": 128}


def write_manifest(tmp_path, document, name="manifest.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(document, sort_keys=False), encoding="utf-8")
    return path


def flux_manifest():
    return {
        "version": "dkdesk/1",
        "numerics": COARSE,
        "manifolds": {"S2": ["sphere"], "S1": ["circle"]},
        "bundles": {
            "H3": {"kind": "monopole", "manifold": "S2", "n": 3},
            "A": {"kind": "flat_line", "manifold": "S1", "holonomies": [0.2]},
        },
        "requests": [
            {"op": "c1_flux", "key": "flux", "args": {"bundle": "H3"}},
            {"op": "holonomy", "key": "hol", "args": {"bundle": "A", "factor": 0}},
        ],
    }


def test_dangling_reference_names_key():
    document = flux_manifest()
    document["requests"][0]["args"]["bundle"] = "H7"
    with pytest.raises(ManifestError) as info:
        validate_manifest(document)
    assert info.value.key == "requests[0].args.bundle"


def test_unknown_manifold_names_key():
    document = flux_manifest()
    document["bundles"]["H3"]["manifold"] = "S3"
    with pytest.raises(ManifestError) as info:
        validate_manifest(document)
    assert info.value.key == "bundles.H3.manifold"


def test_validation_failure_exit_code(tmp_path):
    document = flux_manifest()
    document["requests"][0]["args"]["bundle"] = "H7"
    path = write_manifest(tmp_path, document)
    assert run_manifest(str(path), out=str(tmp_path / "report.yaml")) == EXIT_VALIDATION
    assert not (tmp_path / "report.yaml").exists()


def test_unreadable_manifest_exit_code(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("requests: [unclosed", encoding="utf-8")
    assert run_manifest(str(path), out=str(tmp_path / "report.yaml")) == EXIT_PARSE


def test_empty_request_list(tmp_path):
    path = write_manifest(tmp_path, {"version": "dkdesk/1", "requests": []})
    out = tmp_path / "empty_report.yaml"
    assert run_manifest(str(path), out=str(out)) == EXIT_OK
    report = yaml.safe_load(out.read_text(encoding="utf-8"))
    assert report["requests"] == []
    assert report["summary"]["total"] == 0


def test_monopole_flux_report(tmp_path):
    path = write_manifest(tmp_path, flux_manifest())
    out = tmp_path / "flux_report.yaml"
    assert run_manifest(str(path), out=str(out)) == EXIT_OK
    report = yaml.safe_load(out.read_text(encoding="utf-8"))
    flux, hol = report["requests"]
    assert flux["key"] == "flux" and flux["status"] == "ok"
    assert abs(flux["result"] - 3.0) < 1e-8
    assert hol["key"] == "hol"


def test_floats_round_trip():
    values = [0.1, 1 / 3, 2.718281828459045, 1e-300, -123456.789012345678]
    text = dump_report({"values": values})
    assert yaml.safe_load(text)["values"] == values


def test_threads_do_not_change_results():
    document = flux_manifest()
    validate_manifest(document)
    base = Numerics.from_config().with_overrides(**COARSE)
    single = execute_manifest(document, base.with_overrides(threads=1))
    parallel = execute_manifest(document, base.with_overrides(threads=4))
    assert dump_report(strip_timing(single)) == dump_report(strip_timing(parallel))


def test_operations_command():
    assert main(["operations"]) == EXIT_OK
    names = {tool["name"] for tool in create_operation_tools()}
    assert {"c1_flux", "reduced_eta", "verify_index_theorem", "odd_index_point"} <= names


def test_missing_command_is_parse_error():
    assert main([]) == EXIT_PARSE


def test_single_factor_combination_keeps_operand_name():
    document = flux_manifest()
    document["bundles"]["B"] = {"kind": "tensor", "of": "A"}
    document["bundles"]["C"] = {"kind": "direct_sum", "of": ["A"]}
    validate_manifest(document)
    workspace = Workspace(document, Numerics.from_config().with_overrides(**COARSE))
    assert workspace.bundle("B").name == "B"
    assert workspace.bundle("C").name == "C"
    assert workspace.bundle("A").name == "A"
    assert workspace.bundle("B").potential is workspace.bundle("A").potential


def test_collect_warnings_walks_nested_details():
    details = {
        "warnings": ["outer"],
        "kunneth": {"terms": [{"warnings": ["first term"]}, {"value": 1}]},
        "pushforward": {"warnings": []},
    }
    assert collect_warnings(details) == ["outer", "first term"]
    assert collect_warnings(None) == []
