#!/usr/bin/env python3
"""
Acceptance battery for the differential K-theory engine.
Runs categories of exactly-known checks and tallies pass/fail per category.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Any, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from config import config, Numerics
from graded_core import (
    StructuredManifold, GradedForm, Circle, Sphere2, add_component,
    integrate, circular_distance,
)
from bundles import (
    BundleWithConnection, ConnectionPath, matrix_field,
    trivial_bundle, flat_line, monopole, poincare, direct_sum,
)
from charforms import c1_form, chern_form, cs_two, phase_automorphism
from diffk import (
    generator_class, odd_generator_class, rewrite_reconnect, rewrite_exact, rewrite_merge, rewrite_split,
    homotopy_compare, suspend_odd, desuspend, observable_residual,
)
from spectral import (
    SpectralModel, closed_form_eta, zeta_oracle_eta, regulated_eta, reduced_eta, eta_class, torus_kernel_dim,
)
from index import verify_index_theorem, even_class_odd_fiber_index, point_value
from manifest import Workspace, load_manifest, validate_manifest
from runner import EXIT_OK, EXIT_SELFTEST, execute_manifest, dump_report, strip_timing, write_report

ETA_GRID = [k / 97 for k in range(97)]

DETERMINISM_MANIFEST = {
    "version": config.get('runner.schema_version', 'dkdesk/1'),
    "manifolds": {"S2": ["sphere"], "S1": ["circle"], "T2": ["circle", "circle"]},
    "bundles": {
        "H3": {"kind": "monopole", "manifold": "S2", "n": 3},
        "A": {"kind": "flat_line", "manifold": "S1", "holonomies": [0.2]},
        "B": {"kind": "flat_line", "manifold": "S1", "holonomies": [0.65]},
        "P": {"kind": "poincare", "manifold": "T2"},
    },
    "classes": {"a": {"kind": "even", "manifold": "S1", "degree": 0, "generators": [{"bundle": "A"}]}},
    "requests": [
        {"op": "c1_flux", "key": "flux_h3", "args": {"bundle": "H3"}},
        {"op": "c1_flux", "key": "flux_p", "args": {"bundle": "P"}},
        {"op": "cs_period", "key": "cs_ab", "args": {"first": "A", "second": "B"}},
        {"op": "holonomy", "key": "hol_b", "args": {"bundle": "B", "factor": 0}},
        {"op": "reduced_eta", "key": "eta_s1", "args": {"manifold": "S1", "twist": [0.3]}},
        {"op": "eta_class", "key": "eta_a", "args": {"class": "a"}},
    ],
}


# ---------------------------------------------------------------------------
# Test fixtures
# ---------------------------------------------------------------------------

def perturbation_form(m: StructuredManifold, seed: int) -> GradedForm:
    """Smooth real 1-form with seeded coefficients (circle modes, sin²θ dφ and exact parts on S²)."""
    rng = np.random.default_rng(seed)
    terms: Dict[Tuple[int, ...], Any] = {}
    for position, factor in enumerate(m.factors):
        c = m.offsets[position]
        if isinstance(factor, Circle):
            a0, a1, b1 = rng.uniform(-0.5, 0.5, 3)
            length = factor.circumference
            terms[(c,)] = lambda x, c=c, a0=a0, a1=a1, b1=b1, L=length: \
                a0 + a1 * np.cos(2 * np.pi * x[c] / L) + b1 * np.sin(2 * np.pi * x[c] / L)
        elif isinstance(factor, Sphere2):
            rot, ex, ez = rng.uniform(-0.5, 0.5, 3)
            # rot·(x dy − y dx) + ex·d(sinθ cosφ) + ez·d(cosθ)
            terms[(c,)] = lambda x, c=c, ex=ex, ez=ez: \
                ex * np.cos(x[c]) * np.cos(x[c + 1]) - ez * np.sin(x[c])
            terms[(c + 1,)] = lambda x, c=c, rot=rot, ex=ex: \
                rot * np.sin(x[c]) ** 2 - ex * np.sin(x[c]) * np.sin(x[c + 1])
    return GradedForm.from_global(m, 1, terms)


def perturbed(bundle: BundleWithConnection, form: GradedForm, name: Optional[str] = None) -> BundleWithConnection:
    """Same bundle with connection ∇ + i·form·1."""
    m = bundle.base
    charts = {}
    for key in m.chart_keys:
        comps = dict(bundle.potential.charts.get(key, {}))
        for index, value in form.charts[key].items():
            add_component(comps, index, 1j * value[..., None, None] * np.eye(bundle.rank))
        charts[key] = comps
    return BundleWithConnection(m, bundle.rank, matrix_field(m, charts), bundle.drifts, bundle.seams,
                                bundle.sphere_transitions, bundle.parity, name or f"{bundle.name}'")


def circle_form(m: StructuredManifold, degree: int, constant: float, wave: float = 0.0) -> GradedForm:
    index = () if degree % 2 == 0 else (0,)
    return GradedForm.from_global(m, degree, {index: lambda x: constant + wave * np.cos(2 * np.pi * x[0])})


class AcceptanceTester:
    """Acceptance battery organised by categories of checks."""

    def __init__(self, grid: Optional[int] = None, threads: Optional[int] = None):
        self.test_results = []
        self.numerics = self._selftest_numerics(grid, threads)
        self.product_numerics = self.numerics.with_overrides(
            circle_points=config.get('selftest.product_circle_points', 8),
            sphere_order=config.get('selftest.product_sphere_order', 24),
        )
        self.workspace, self.family_names = self._load_families_from_config()

        circle_pairs = ((0.1, 0.35), (0.8, 0.05), (0.45, 0.55))
        self.test_cases = {
            "flux_integrality": [
                {"name": f"∫c1 monopole({n})", "n": n, "tolerance": 1e-8} for n in range(-3, 4)
            ],
            "cs_transgression": (
                [{"name": f"cocycle {surface} #{seed}", "surface": surface, "seed": seed, "tolerance": 1e-6}
                 for surface in ("T2", "S2") for seed in range(5)]
                + [{"name": f"∮CS flat({t0}) → flat({t1})", "thetas": (t0, t1), "tolerance": 1e-7} for t0, t1 in circle_pairs]
            ),
            "homotopy_formula": [
                {"name": "flat line on S1", "path": "circle", "tolerance": 1e-6},
                {"name": "monopole(1) on S2", "path": "sphere", "tolerance": 1e-6},
                {"name": "monopole(-2) on S2", "path": "sphere_negative", "tolerance": 1e-6},
                {"name": "Poincaré line on T2", "path": "poincare", "tolerance": 1e-6},
                {"name": "graded rank 2 on T2", "path": "graded", "tolerance": 1e-6},
            ],
            "eta_closed_form": [
                {"name": "closed form vs zeta oracle (97 points)", "check": "zeta", "tolerance": 1e-8},
                {"name": "spectral model vs closed form", "check": "model", "tolerance": 1e-8},
                {"name": "symmetry θ ↔ 1 − θ", "check": "symmetry", "tolerance": 1e-8},
                {"name": "regulated partial sums", "check": "regulated", "tolerance": 1e-6},
                {"name": "variation law", "check": "variation", "tolerance": 1e-8},
            ],
            "eta_invariance": [
                {"name": f"rewrite chain step {k}", "steps": k, "tolerance": 1e-7} for k in range(1, 11)
            ],
            "product_pushforward": [
                {"name": f"Z={z}, B={b}", "fiber": z, "base": b, "tolerance": 1e-6}
                for z in ("S2", "T2") for b in ("S1", "T3")
            ],
            "index_theorem": [
                {"name": name, "family": name, "tolerance": 1e-6} for name in self.family_names
            ],
            "odd_index": [
                {"name": f"θ={theta}, φ={phi}", "theta": theta, "phi": phi, "tolerance": 1e-6}
                for theta in (0.0, 0.15, 0.4, 0.75) for phi in ("zero", "constant", "wave")
            ],
            "suspension": (
                [{"name": f"D∘S {label}", "odd_class": label, "tolerance": 1e-6}
                 for label in ("winding 1", "winding 2", "flat winding -1", "rank 2", "torus", "with form")]
                + [{"name": "Poincaré ∫c1 = 1", "check": "poincare_flux", "tolerance": 1e-9}]
                + [{"name": f"torus index at flux {n}", "check": "torus_index", "flux": n, "tolerance": 0.5}
                   for n in (1, 2, -1)]
            ),
            "determinism": [
                {"name": "threads 1 vs 4", "tolerance": 0.0},
            ],
        }

    def _selftest_numerics(self, grid: Optional[int], threads: Optional[int]) -> Numerics:
        base = Numerics.from_config().with_overrides(
            circle_points=config.get('selftest.circle_points', 32),
            sphere_order=config.get('selftest.sphere_order', 32),
        )
        overrides: Dict[str, Any] = {"threads": threads}
        if grid is not None:
            overrides.update(circle_points=grid, sphere_order=grid)
        return base.with_overrides(**overrides)

    def _load_families_from_config(self) -> Tuple[Optional[Workspace], List[str]]:
        """Load the product families from families.yaml for consistent evaluation."""
        families_file = Path(config.get('selftest.families_file', 'families.yaml'))
        if not families_file.is_absolute():
            families_file = Path(__file__).resolve().parent / families_file
        try:
            document = load_manifest(str(families_file))
            validate_manifest(document)
            return Workspace(document, self.product_numerics), list(document.get("families", {}))
        except Exception as e:
            print(f"⚠️  Could not load families from {families_file}: {e}")
            return None, []

    # category checks -----------------------------------------------------
    def _manifold(self, *factors, numerics: Optional[Numerics] = None) -> StructuredManifold:
        return StructuredManifold(factors, numerics or self.numerics)

    def check_flux_integrality(self, case: Dict[str, Any]) -> Tuple[float, float]:
        s2 = self._manifold(Sphere2())
        value = float(np.real(integrate(c1_form(monopole(s2, case["n"]))).coefficient(-1)))
        return value, abs(value - case["n"])

    def check_cs_transgression(self, case: Dict[str, Any]) -> Tuple[float, float]:
        if "thetas" in case:
            t0, t1 = case["thetas"]
            s1 = self._manifold(Circle())
            cs = cs_two(flat_line(s1, [t0]), flat_line(s1, [t1]))
            value = float(np.real(integrate(cs).coefficient(-1)))
            # ∮ CS(∇₀, ∇₁) = −(θ₀ − θ₁) u⁻¹
            return value, abs(value + (t0 - t1))
        if case["surface"] == "T2":
            m = self._manifold(Circle(), Circle())
            first = poincare(m) if case["seed"] % 2 else flat_line(m, [0.3, 0.6])
        else:
            m = self._manifold(Sphere2())
            first = monopole(m, case["seed"] - 2)
        first = perturbed(first, perturbation_form(m, 100 + case["seed"]))
        second = perturbed(first, perturbation_form(m, 200 + case["seed"]))
        cs = cs_two(first, second)
        residual = (cs.d() - (chern_form(first) - chern_form(second))).max_abs()
        return residual, residual

    def check_homotopy_formula(self, case: Dict[str, Any]) -> Tuple[float, float]:
        kind = case["path"]
        if kind == "circle":
            m = self._manifold(Circle())
            start = flat_line(m, [0.2])
        elif kind in ("sphere", "sphere_negative"):
            m = self._manifold(Sphere2())
            start = monopole(m, 1 if kind == "sphere" else -2)
        elif kind == "poincare":
            m = self._manifold(Circle(), Circle())
            start = poincare(m)
        else:
            m = self._manifold(Circle(), Circle())
            start = trivial_bundle(m, 2, grading=[1, -1])
        end = perturbed(start, perturbation_form(m, len(kind)))
        _, _, residual = homotopy_compare(ConnectionPath([start, end]), tolerance=math.inf)
        return residual, residual

    def check_eta_closed_form(self, case: Dict[str, Any]) -> Tuple[float, float]:
        check = case["check"]
        s1 = self._manifold(Circle())
        if check == "zeta":
            worst = max(circular_distance(closed_form_eta(t), zeta_oracle_eta(t)) for t in ETA_GRID)
        elif check == "model":
            worst = max(circular_distance(reduced_eta(SpectralModel(s1, (t,))).value_mod_1, closed_form_eta(t))
                        for t in ETA_GRID)
        elif check == "symmetry":
            worst = max(circular_distance(zeta_oracle_eta(t) + zeta_oracle_eta(1.0 - t), 0.0) for t in ETA_GRID)
        elif check == "regulated":
            worst = max(circular_distance(regulated_eta(t), closed_form_eta(t)) for t in (0.1, 0.3, 0.45, 0.8))
        else:
            delta = 0.1
            worst = max(circular_distance(closed_form_eta(t + delta) - closed_form_eta(t), -delta)
                        for t in (0.2, 0.35, 0.5, 0.75))
        return worst, worst

    def eta_rewrite_chain(self, steps: int):
        """Base class on S¹ and its image after `steps` relation rewrites."""
        s1 = self._manifold(Circle())
        a, b = flat_line(s1, [0.25]), flat_line(s1, [0.7])
        x = generator_class(a, circle_form(s1, -1, 0.05)) + generator_class(b)
        original = x
        rewrites = [
            lambda y: rewrite_reconnect(y, 0, perturbed(a, perturbation_form(s1, 11))),
            lambda y: rewrite_reconnect(y, 1, perturbed(b, perturbation_form(s1, 12))),
            lambda y: rewrite_exact(y, 0, circle_form(s1, -2, 0.0, 0.3)),
            lambda y: rewrite_exact(y, 1, circle_form(s1, -2, 0.7, -0.2)),
            lambda y: rewrite_merge(y, 0, 1),
            lambda y: rewrite_reconnect(y, 0, direct_sum(a, b)),
            lambda y: rewrite_exact(y, 0, circle_form(s1, -2, 0.1, 0.45)),
            lambda y: rewrite_split(y, 0, a, b, circle_form(s1, -1, 0.02, 0.1)),
            lambda y: rewrite_reconnect(y, 1, flat_line(s1, [0.9])),
            lambda y: y + generator_class(flat_line(s1, [0.33])) - generator_class(flat_line(s1, [0.33])),
        ]
        for rewrite in rewrites[:steps]:
            x = rewrite(x)
        return original, x

    def check_eta_invariance(self, case: Dict[str, Any]) -> Tuple[float, float]:
        original, rewritten = self.eta_rewrite_chain(case["steps"])
        before, after = eta_class(original), eta_class(rewritten)
        return after.value_mod_1, before.distance(after)

    def _family_for(self, fiber: str, base: str) -> Optional[str]:
        fibers = {"S2": "S2(1)", "T2": "S1(1)×S1(1)"}
        bases = {"S1": "S1(1)", "T3": "S1(1)×S1(1)×S1(1)"}
        for name in self.family_names:
            family = self.workspace.family(name)
            if family.fiber.describe() == fibers[fiber] and family.base.describe() == bases[base]:
                return name
        return None

    def check_product_pushforward(self, case: Dict[str, Any]) -> Tuple[float, float]:
        name = self._family_for(case["fiber"], case["base"])
        if name is None:
            raise LookupError(f"no family with fibre {case['fiber']} over {case['base']}")
        report = verify_index_theorem(self.workspace.family(name))
        if "error" in report:
            raise RuntimeError(report["error"])
        keys = ("observables", "omega_analytic", "omega_topological", "eta_form")
        residual = max(report["residuals"][k] for k in keys)
        return residual, residual

    def check_index_theorem(self, case: Dict[str, Any]) -> Tuple[float, float]:
        report = verify_index_theorem(self.workspace.family(case["family"]))
        if "error" in report:
            raise RuntimeError(report["error"])
        return report["max_residual"], report["max_residual"]

    def check_odd_index(self, case: Dict[str, Any]) -> Tuple[float, float]:
        s1 = self._manifold(Circle())
        phi = {"zero": None,
               "constant": circle_form(s1, -1, 0.1),
               "wave": circle_form(s1, -1, 0.05, 0.2)}[case["phi"]]
        e = generator_class(flat_line(s1, [case["theta"]]), phi)
        expected = eta_class(e).value_mod_1
        unit_length = point_value(even_class_odd_fiber_index(e, 1.0))
        double_length = point_value(even_class_odd_fiber_index(e, 2.0))
        residual = max(circular_distance(unit_length, expected), circular_distance(double_length, unit_length))
        return unit_length, residual

    def _odd_class(self, label: str):
        if label == "torus":
            t2 = self._manifold(Circle(), Circle())
            line = trivial_bundle(t2, 1)
            return odd_generator_class(line, phase_automorphism(line, [1, 0]))
        s1 = self._manifold(Circle())
        if label == "rank 2":
            bundle = trivial_bundle(s1, 2)
            return odd_generator_class(bundle, phase_automorphism(bundle, [[1], [-2]]))
        if label == "flat winding -1":
            bundle = flat_line(s1, [0.3])
            return odd_generator_class(bundle, phase_automorphism(bundle, [-1]))
        bundle = trivial_bundle(s1, 1)
        winding = 2 if label == "winding 2" else 1
        phi = circle_form(s1, -2, 0.3, 0.1) if label == "with form" else None
        return odd_generator_class(bundle, phase_automorphism(bundle, [winding]), phi)

    def check_suspension(self, case: Dict[str, Any]) -> Tuple[float, float]:
        t2 = self._manifold(Circle(), Circle())
        if case.get("check") == "poincare_flux":
            value = float(np.real(integrate(c1_form(poincare(t2))).coefficient(-1)))
            return value, abs(value - 1.0)
        if case.get("check") == "torus_index":
            flux = case["flux"]
            plus, minus = torus_kernel_dim(SpectralModel(t2, flux=flux))
            return float(plus - minus), float(abs(plus - minus - flux))
        g = self._odd_class(case["odd_class"])
        residual = observable_residual(desuspend(suspend_odd(g)), g)
        return residual, residual

    def check_determinism(self, case: Dict[str, Any]) -> Tuple[float, float]:
        single = execute_manifest(DETERMINISM_MANIFEST, self.numerics.with_overrides(threads=1))
        parallel = execute_manifest(DETERMINISM_MANIFEST, self.numerics.with_overrides(threads=4))
        identical = dump_report(strip_timing(single)) == dump_report(strip_timing(parallel))
        return float(identical), 0.0 if identical else 1.0

    # harness ---------------------------------------------------------------
    def run_single_test(self, category: str, case: Dict[str, Any]) -> Dict[str, Any]:
        """Run one check and compare its residual with the case tolerance."""
        result = {
            "category": category,
            "name": case["name"],
            "passed": False,
            "tolerance": case["tolerance"],
            "issues": [],
        }
        start_time = time.perf_counter()
        try:
            value, residual = getattr(self, f"check_{category}")(case)
            result["value"] = value
            result["residual"] = residual
            result["passed"] = bool(residual <= case["tolerance"])
            if not result["passed"]:
                result["issues"].append(f"residual {residual:.3e} exceeds {case['tolerance']:.1e}")
        except Exception as e:
            result["error"] = str(e)
            result["issues"].append(f"{type(e).__name__}: {e}")
        result["wall_time"] = time.perf_counter() - start_time
        return result

    def run_all_tests(self, filter_text: Optional[str] = None) -> Dict[str, Any]:
        """Run every category (or those whose name contains `filter_text`)."""
        print("🚀 Starting acceptance battery")
        print("=" * 60)
        all_results = {
            "test_suite_version": config.get('runner.schema_version', 'dkdesk/1'),
            "timestamp": datetime.now().isoformat(),
            "numerics": self.numerics.as_dict(),
            "product_numerics": self.product_numerics.as_dict(),
            "categories": {},
            "summary": {},
        }
        selected = [(category, case) for category, cases in self.test_cases.items()
                    if not filter_text or filter_text in category
                    for case in cases]
        if not selected:
            print(f"⚠️  No categories match '{filter_text}'")
        if (not filter_text or filter_text in "index_theorem") and not self.family_names:
            all_results["categories"]["index_theorem"] = [{
                "category": "index_theorem", "name": "families.yaml", "passed": False, "tolerance": 0.0,
                "error": "no product families loaded", "issues": ["no product families loaded"]}]
        with ThreadPoolExecutor(max_workers=self.numerics.threads) as pool:
            futures = [pool.submit(self.run_single_test, category, case) for category, case in selected]
            for future in tqdm(futures, desc="🧪 battery", unit="check"):
                result = future.result()
                all_results["categories"].setdefault(result["category"], []).append(result)
        self.test_results = [r for results in all_results["categories"].values() for r in results]
        for category, results in all_results["categories"].items():
            passed = sum(1 for r in results if r["passed"])
            marker = "✅" if passed == len(results) else "❌"
            print(f"{marker} {category}: {passed}/{len(results)}")
        all_results["summary"] = self.generate_summary(all_results["categories"])
        return all_results

    def generate_summary(self, categories: Dict[str, List[Dict[str, Any]]]) -> Dict[str, Any]:
        """Generate a summary of all test results."""
        results = [r for rs in categories.values() for r in rs]
        failed = [f"{r['category']}/{r['name']}" for r in results if not r["passed"]]
        residuals = [r["residual"] for r in results if "residual" in r]
        return {
            "total_tests": len(results),
            "passed_tests": len(results) - len(failed),
            "failed_tests": failed,
            "pass_rate": 100.0 * (len(results) - len(failed)) / len(results) if results else 0.0,
            "worst_residual": max(residuals) if residuals else 0.0,
            "all_passed": bool(results) and not failed,
        }

    def save_results(self, results: Dict[str, Any], filename: Optional[str] = None) -> Path:
        """Save test results to a YAML report."""
        if not filename:
            timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
            filename = str(Path(config.get('runner.report_directory', './reports')) / f"selftest_results_{timestamp}.yaml")
        filepath = write_report(results, Path(filename))
        print(f"\n💾 Results saved to: {filepath.absolute()}")
        return filepath

    def print_detailed_report(self, results: Dict[str, Any]):
        """Print a pass/fail table and the issues of failing checks."""
        print("\n" + "=" * 60)
        print("📊 DETAILED TEST RESULTS REPORT")
        print("=" * 60)
        rows = [{
            "category": r["category"],
            "check": r["name"][:40],
            "status": "PASS" if r["passed"] else "FAIL",
            "residual": r.get("residual", float("nan")),
            "tolerance": r["tolerance"],
            "ms": 1000.0 * r.get("wall_time", 0.0),
        } for rs in results["categories"].values() for r in rs]
        if rows:
            print(pd.DataFrame(rows).to_string(index=False, float_format=lambda v: f"{v:.2e}"))
        summary = results["summary"]
        print(f"\n🏆 SUMMARY: {summary['passed_tests']}/{summary['total_tests']} passed "
              f"({summary['pass_rate']:.1f}%), worst residual {summary['worst_residual']:.2e}")
        for rs in results["categories"].values():
            for r in rs:
                for issue in r.get("issues", []):
                    print(f"  ⚠️  {r['category']}/{r['name']}: {issue}")


def run_selftest(filter_text: Optional[str] = None, grid: Optional[int] = None, threads: Optional[int] = None,
                 out: Optional[str] = None) -> int:
    tester = AcceptanceTester(grid=grid, threads=threads)
    results = tester.run_all_tests(filter_text)
    tester.save_results(results, out)
    tester.print_detailed_report(results)
    if results["summary"]["all_passed"]:
        print("\n🎉 All acceptance checks passed")
        return EXIT_OK
    print("\n❌ Some acceptance checks failed")
    return EXIT_SELFTEST


def main():
    """Run the battery with default settings."""
    raise SystemExit(run_selftest())


if __name__ == "__main__":
    main()
