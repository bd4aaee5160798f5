#!/usr/bin/env python3
"""
Manifest runner: executes operation requests and writes YAML reports.

Each request is dispatched like a tool call: the handler returns a result
dictionary, and any failure becomes an {'error', 'error_kind'} entry so one
bad request never aborts the others. Every scalar result is recomputed at
the coarse numerics level to form a convergence table with a Richardson
column.
"""

import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Any, Optional

import numpy as np
import pandas as pd
import yaml

from config import config, Numerics
from graded_core import (
    StructuredManifold, Sphere2, LaurentScalar, EtaValue, ToleranceBreach, UnsupportedInputError,
    integrate, period, circular_distance, reduce_mod_one,
)
from bundles import holonomy_at_basepoint, dagger, ConnectionPath, monopole
from charforms import c1_form, chern_form, cs_two
from diffk import (
    DKClassEven, DKClassOdd, generator_class, observables, observable_residual,
    suspend_odd, desuspend, homotopy_compare, period_vector,
)
from spectral import (
    SpectralModel, reduced_eta, zeta_oracle_eta, eta_class, torus_kernel_dim, sphere_kernel_dim,
)
from index import ProductFamily, fiber_todd, fiber_index, verify_index_theorem, even_class_odd_fiber_index, point_value
from manifest import (
    OPERATIONS, SCHEMA_VERSION, ManifestError, Workspace,
    load_manifest, validate_manifest, manifest_numerics,
)

EXIT_OK = 0
EXIT_SELFTEST = 1
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4
EXIT_TOLERANCE = 5

# fields that may differ between otherwise identical runs
TIMING_KEYS = ("wall_time", "threads", "timestamp")


# ---------------------------------------------------------------------------
# Report serialization
# ---------------------------------------------------------------------------

class ReportDumper(yaml.SafeDumper):
    """SafeDumper writing floats with 17 significant digits."""


def _represent_float(dumper: yaml.SafeDumper, value: float) -> yaml.Node:
    if math.isnan(value):
        text = ".nan"
    elif math.isinf(value):
        text = ".inf" if value > 0 else "-.inf"
    else:
        text = format(value, ".17g")
        mantissa, _, exponent = text.partition("e")
        if "." not in mantissa:
            mantissa += ".0"
        text = mantissa + ("e" + exponent if exponent else "")
    return dumper.represent_scalar("tag:yaml.org,2002:float", text)


ReportDumper.add_representer(float, _represent_float)


def to_plain(value: Any) -> Any:
    """Convert results to YAML-safe builtins."""
    if isinstance(value, (LaurentScalar, EtaValue)):
        return value.to_dict()
    if isinstance(value, dict):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_plain(value.tolist())
    if isinstance(value, np.generic):
        return to_plain(value.item())
    if isinstance(value, complex):
        return {"re": float(value.real), "im": float(value.imag)}
    if isinstance(value, bool) or value is None or isinstance(value, (int, str)):
        return value
    if isinstance(value, float):
        return float(value)
    return str(value)


def dump_report(report: Dict[str, Any]) -> str:
    return yaml.dump(to_plain(report), Dumper=ReportDumper, sort_keys=False, allow_unicode=True)


def write_report(report: Dict[str, Any], path: Path) -> Path:
    """Atomic write: temp file in the target directory, then os.replace."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, 'w', encoding='utf-8', newline="\n") as f:
        f.write(dump_report(report))
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)
    return path


def strip_timing(value: Any) -> Any:
    """Report with timing and thread-count fields removed (determinism comparisons)."""
    if isinstance(value, dict):
        return {k: strip_timing(v) for k, v in value.items() if k not in TIMING_KEYS}
    if isinstance(value, list):
        return [strip_timing(v) for v in value]
    return value


# ---------------------------------------------------------------------------
# Operation handlers
# ---------------------------------------------------------------------------

def _real(value: complex) -> float:
    return float(np.real(value))


def _lattice(value: float) -> float:
    return abs(value - round(value))


def _laurent_imaginary(scalars) -> float:
    return max((abs(np.imag(c)) for s in scalars for c in s.terms.values()), default=0.0)


def _c1_flux(ws: Workspace, args: Dict[str, Any]) -> Dict[str, Any]:
    bundle = ws.bundle(args["bundle"])
    m = bundle.base
    if not m.closed or m.dimension != 2:
        raise UnsupportedInputError(f"c1_flux needs a closed surface, got {m.describe()}")
    value = _real(integrate(c1_form(bundle)).coefficient(-1))
    return {"value": value, "residual": _lattice(value)}


def _chern_integral(ws: Workspace, args: Dict[str, Any]) -> Dict[str, Any]:
    bundle = ws.bundle(args["bundle"])
    integral = integrate(chern_form(bundle, args.get("degree", 0)))
    return {"value": integral, "residual": _laurent_imaginary([integral]),
            "details": {"lattice_residual": integral.lattice_residual()}}


def _holonomy(ws: Workspace, args: Dict[str, Any]) -> Dict[str, Any]:
    bundle = ws.bundle(args["bundle"])
    value = holonomy_at_basepoint(bundle, args["factor"])
    phases = sorted(reduce_mod_one(float(np.angle(z)) / (2 * math.pi)) for z in np.linalg.eigvals(value))
    unitarity = float(np.max(np.abs(dagger(value) @ value - np.eye(bundle.rank)), initial=0.0))
    return {"value": phases, "residual": unitarity}


def _observables(ws: Workspace, args: Dict[str, Any]) -> Dict[str, Any]:
    obs = observables(ws.dk_class(args["class"]))
    return {"value": obs.to_dict(), "residual": _laurent_imaginary(obs.periods.values())}


def _cs_period(ws: Workspace, args: Dict[str, Any]) -> Dict[str, Any]:
    first, second = ws.bundle(args["first"]), ws.bundle(args["second"])
    cs = cs_two(first, second)
    m = first.base
    cycle = args.get("cycle", [p for p, f in enumerate(m.factors) if f.closed])
    cocycle = (cs.d() - (chern_form(first) - chern_form(second))).max_abs()
    return {"value": period(cs, cycle), "residual": cocycle, "details": {"cycle": list(cycle)}}


def _reduced_eta(ws: Workspace, args: Dict[str, Any]) -> Dict[str, Any]:
    m = ws.manifold(args["manifold"])
    model = SpectralModel(m, tuple(args["twist"]))
    eta = reduced_eta(model, args.get("degree", 0))
    residual = 0.0
    details: Dict[str, Any] = {}
    if m.dimension == 1:
        oracle = zeta_oracle_eta(model.twist[0])
        residual = circular_distance(eta.value_mod_1, oracle)
        details["zeta_oracle"] = oracle
    return {"value": eta, "residual": residual, "details": details}


def _eta_class(ws: Workspace, args: Dict[str, Any]) -> Dict[str, Any]:
    provenance: Dict[str, Any] = {}
    eta = eta_class(ws.dk_class(args["class"]), args.get("spin_offset"), provenance)
    return {"value": eta, "residual": 0.0, "details": provenance}


def _torus_kernel_dim(ws: Workspace, args: Dict[str, Any]) -> Dict[str, Any]:
    m = ws.manifold(args["manifold"])
    flux = args["flux"]
    plus, minus = torus_kernel_dim(SpectralModel(m, tuple(args.get("twist", ())), flux=flux))
    return {"value": {"plus": plus, "minus": minus, "index": plus - minus}, "residual": float(abs(plus - minus - flux))}


def _sphere_kernel_dim(ws: Workspace, args: Dict[str, Any]) -> Dict[str, Any]:
    n = args["n"]
    spin_c = args.get("spin_c", "complex") == "complex"
    plus, minus = sphere_kernel_dim(n, spin_c)
    sphere = StructuredManifold([Sphere2()], ws.numerics)
    point = StructuredManifold((), ws.numerics)
    family = ProductFamily("sphere", sphere, point, spin_c=spin_c)
    warnings: List[str] = []
    _, raw, _ = fiber_index(generator_class(monopole(sphere, n), degree=2), family, warnings)
    return {"value": {"plus": plus, "minus": minus, "index": plus - minus},
            "residual": abs(plus - minus - raw), "details": {"todd_chern_integral": raw, "warnings": warnings}}


def _todd_integral(ws: Workspace, args: Dict[str, Any]) -> Dict[str, Any]:
    m = ws.manifold(args["manifold"])
    todd = fiber_todd(m, args.get("spin_c", "complex") == "complex")
    value = _real(integrate(todd).coefficient(-(m.dimension // 2)))
    return {"value": value, "residual": _lattice(value)}


def _verify_index_theorem(ws: Workspace, args: Dict[str, Any]) -> Dict[str, Any]:
    report = verify_index_theorem(ws.family(args["family"]), args.get("spin_offset"))
    if "error" in report:
        return {"error": report["error"], "error_kind": "numerical"}
    return {"value": {"success": report["success"], "max_residual": report["max_residual"]},
            "residual": report["max_residual"], "details": report}


def _odd_index_point(ws: Workspace, args: Dict[str, Any]) -> Dict[str, Any]:
    e = ws.dk_class(args["class"])
    if not isinstance(e, DKClassEven):
        raise UnsupportedInputError(f"odd_index_point needs an even class, got {type(e).__name__}")
    report: Dict[str, Any] = {}
    g = even_class_odd_fiber_index(e, args.get("circumference", 1.0), args.get("spin_offset"), report)
    value = point_value(g)
    expected = eta_class(e, args.get("spin_offset")).value_mod_1
    report["eta_class"] = expected
    return {"value": value, "residual": circular_distance(value, expected), "details": report}


def _suspension_roundtrip(ws: Workspace, args: Dict[str, Any]) -> Dict[str, Any]:
    g = ws.dk_class(args["class"])
    if not isinstance(g, DKClassOdd):
        raise UnsupportedInputError(f"suspension_roundtrip needs an odd class, got {type(g).__name__}")
    back = desuspend(suspend_odd(g, args.get("circumference", 1.0)))
    return {"value": observables(g).to_dict(), "residual": observable_residual(back, g)}


def _homotopy_certificate(ws: Workspace, args: Dict[str, Any]) -> Dict[str, Any]:
    path = ConnectionPath([ws.bundle(args["start"]), ws.bundle(args["end"])])
    _, integral, residual = homotopy_compare(path, degree=args.get("degree", 0), tolerance=math.inf)
    return {"value": period_vector(integral), "residual": residual}


HANDLERS = {
    "c1_flux": _c1_flux,
    "chern_integral": _chern_integral,
    "holonomy": _holonomy,
    "observables": _observables,
    "cs_period": _cs_period,
    "reduced_eta": _reduced_eta,
    "eta_class": _eta_class,
    "torus_kernel_dim": _torus_kernel_dim,
    "sphere_kernel_dim": _sphere_kernel_dim,
    "todd_integral": _todd_integral,
    "verify_index_theorem": _verify_index_theorem,
    "odd_index_point": _odd_index_point,
    "suspension_roundtrip": _suspension_roundtrip,
    "homotopy_certificate": _homotopy_certificate,
}


def call_tool(ws: Workspace, tool_name: str, arguments: Dict[str, Any]) -> Dict[str, Any]:
    """Run one operation; failures come back as {'error', 'error_kind'}."""
    if tool_name not in HANDLERS:
        return {"error": f"Tool '{tool_name}' not found. Available tools: {', '.join(OPERATIONS)}",
                "error_kind": "numerical"}
    try:
        result = HANDLERS[tool_name](ws, arguments)
    except ToleranceBreach as e:
        return {"error": str(e), "error_kind": "tolerance", "residual": e.residual}
    except Exception as e:
        return {"error": f"Error calling tool '{tool_name}': {e}", "error_kind": "numerical"}
    if "error" not in result:
        result.setdefault("tolerance", ws.numerics.accept_tolerance)
    return result


# ---------------------------------------------------------------------------
# Convergence
# ---------------------------------------------------------------------------

def scalar_entries(value: Any, prefix: str = "value") -> Dict[str, float]:
    """Flatten numeric leaves of a result value into dotted keys."""
    value = to_plain(value)
    if isinstance(value, bool) or value is None or isinstance(value, str):
        return {}
    if isinstance(value, (int, float)):
        return {prefix: float(value)}
    out: Dict[str, float] = {}
    if isinstance(value, dict):
        for k, v in value.items():
            out.update(scalar_entries(v, f"{prefix}.{k}"))
    elif isinstance(value, list):
        for k, v in enumerate(value):
            out.update(scalar_entries(v, f"{prefix}[{k}]"))
    return out


def richardson(coarse: float, fine: float, order: int) -> float:
    return fine + (fine - coarse) / (2 ** order - 1)


def convergence_table(fine_value: Any, coarse_value: Any, order: int) -> List[Dict[str, Any]]:
    fine, coarse = scalar_entries(fine_value), scalar_entries(coarse_value)
    rows = []
    for quantity in fine:
        if quantity not in coarse:
            continue
        rows.append({"quantity": quantity, "coarse": coarse[quantity], "fine": fine[quantity],
                     "richardson": richardson(coarse[quantity], fine[quantity], order),
                     "difference": abs(fine[quantity] - coarse[quantity])})
    return rows


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

class LockedWorkspace(Workspace):
    """Workspace shared by worker threads; object construction is serialized."""

    def __init__(self, document: Dict[str, Any], numerics: Numerics):
        super().__init__(document, numerics)
        self._lock = threading.RLock()

    def get(self, section: str, name: str) -> Any:
        with self._lock:
            return super().get(section, name)


def execute_request(request: Dict[str, Any], fine: Workspace, coarse: Workspace) -> Dict[str, Any]:
    start = time.perf_counter()
    args = request.get("args", {}) or {}
    entry: Dict[str, Any] = {"key": request["key"], "op": request["op"], "inputs": args,
                             "grid_levels": {"fine": fine.numerics.grid_levels(),
                                             "coarse": coarse.numerics.grid_levels()}}
    result = call_tool(fine, request["op"], args)
    if "error" in result:
        entry.update({"status": "error", "error": result["error"], "error_kind": result["error_kind"]})
    else:
        entry.update({
            "status": "ok" if result["residual"] <= result["tolerance"] else "tolerance",
            "result": result["value"],
            "residual": result["residual"],
            "tolerance": result["tolerance"],
        })
        if result.get("details"):
            entry["details"] = result["details"]
        coarse_result = call_tool(coarse, request["op"], args)
        if "error" in coarse_result:
            entry["convergence"] = {"error": coarse_result["error"]}
        else:
            entry["convergence"] = convergence_table(result["value"], coarse_result["value"],
                                                     fine.numerics.richardson_order)
    entry["wall_time"] = time.perf_counter() - start
    return entry


def summarize(entries: List[Dict[str, Any]]) -> Dict[str, Any]:
    numerical = sum(1 for e in entries if e["status"] == "error" and e["error_kind"] == "numerical")
    breaches = sum(1 for e in entries if e["status"] == "tolerance"
                   or (e["status"] == "error" and e["error_kind"] == "tolerance"))
    exit_code = EXIT_NUMERICAL if numerical else EXIT_TOLERANCE if breaches else EXIT_OK
    return {"total": len(entries), "passed": sum(1 for e in entries if e["status"] == "ok"),
            "numerical_failures": numerical, "tolerance_breaches": breaches, "exit_code": exit_code}


def execute_manifest(document: Dict[str, Any], numerics: Numerics) -> Dict[str, Any]:
    """Run every request of a validated manifest; results keep request order."""
    start = time.perf_counter()
    fine = LockedWorkspace(document, numerics)
    coarse = LockedWorkspace(document, numerics.coarsened())
    requests = document.get("requests", []) or []
    with ThreadPoolExecutor(max_workers=numerics.threads) as pool:
        entries = list(pool.map(lambda r: execute_request(r, fine, coarse), requests))
    numerics_block = numerics.as_dict()
    return {
        "schema_version": SCHEMA_VERSION,
        "numerics": numerics_block,
        "requests": entries,
        "summary": summarize(entries),
        "wall_time": time.perf_counter() - start,
    }


def apply_flags(numerics: Numerics, grid: Optional[int] = None, quad: Optional[int] = None,
                tol: Optional[float] = None, threads: Optional[int] = None) -> Numerics:
    """CLI overrides: --grid sets circle and sphere grids, --quad every quadrature order."""
    overrides: Dict[str, Any] = {"accept_tolerance": tol, "threads": threads}
    if grid is not None:
        overrides.update(circle_points=grid, sphere_order=grid)
    if quad is not None:
        overrides.update(interval_order=quad, t_quadrature=quad, simplex_quadrature=quad)
    return numerics.with_overrides(**overrides)


def format_tool_result(entry: Dict[str, Any]) -> str:
    """One status line per request."""
    if entry["status"] == "error":
        return f"❌ Error: {entry['key']} ({entry['op']}): {entry['error']}"
    marker = "✅" if entry["status"] == "ok" else "⚠️ "
    value = entry["result"]
    shown = f"{value:.12g}" if isinstance(value, float) else str(to_plain(value))
    if len(shown) > 80:
        shown = shown[:77] + "..."
    return f"{marker} {entry['key']} ({entry['op']}): {shown}  [residual {entry['residual']:.2e}]"


def collect_warnings(details: Any) -> List[str]:
    """Entries of every `warnings` list nested in a request's details."""
    if isinstance(details, dict):
        found = list(details["warnings"]) if isinstance(details.get("warnings"), list) else []
        for key, value in details.items():
            if key != "warnings":
                found += collect_warnings(value)
        return found
    if isinstance(details, list):
        return [w for item in details for w in collect_warnings(item)]
    return []


def print_report(report: Dict[str, Any]) -> None:
    print("\n📊 RESULTS")
    print("=" * 60)
    for entry in report["requests"]:
        print(format_tool_result(entry))
        for warning in collect_warnings(entry.get("details")):
            print(f"   ⚠️  {warning}")
    rows = [dict(row, key=entry["key"]) for entry in report["requests"]
            for row in entry.get("convergence", []) if isinstance(entry.get("convergence"), list)]
    if rows:
        table = pd.DataFrame(rows, columns=["key", "quantity", "coarse", "fine", "richardson", "difference"])
        print("\n📈 CONVERGENCE")
        print(table.to_string(index=False))
    summary = report["summary"]
    print(f"\n{summary['passed']}/{summary['total']} requests within tolerance")


def default_report_path(manifest_path: str) -> Path:
    directory = Path(config.get('runner.report_directory', './reports'))
    return directory / f"{Path(manifest_path).stem}_report.yaml"


def run_manifest(path: str, out: Optional[str] = None, grid: Optional[int] = None, quad: Optional[int] = None,
                 tol: Optional[float] = None, threads: Optional[int] = None) -> int:
    """Parse, validate, execute and report; returns the process exit code."""
    print(f"🚀 Running manifest {path}")
    try:
        document = load_manifest(path)
    except (yaml.YAMLError, OSError) as e:
        print(f"❌ Could not parse manifest: {e}")
        return EXIT_PARSE
    try:
        validate_manifest(document)
        numerics = apply_flags(manifest_numerics(document), grid, quad, tol, threads)
    except ManifestError as e:
        print(f"❌ Invalid manifest: {e}")
        return EXIT_VALIDATION
    except ValueError as e:
        print(f"❌ Invalid manifest: numerics: {e}")
        return EXIT_VALIDATION
    print(f"🔧 {len(document.get('requests', []) or [])} requests, threads={numerics.threads}")
    report = execute_manifest(document, numerics)
    report["manifest"] = str(path)
    target = write_report(report, Path(out) if out else default_report_path(path))
    print_report(report)
    print(f"\n💾 Report saved to: {target.absolute()}")
    return report["summary"]["exit_code"]
