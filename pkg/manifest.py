#!/usr/bin/env python3
"""
Computation manifests: schema, operation registry and object construction.

A manifest is a YAML document naming manifolds, forms, bundles,
automorphisms, classes and product families, plus a list of operation
requests. Validation happens in two passes (JSON-Schema, then references)
before any numerics are touched; `Workspace` builds the named objects for one
`Numerics` level.
"""

import math
from pathlib import Path
from typing import Dict, List, Any, Optional, Tuple

import numpy as np
import yaml
from jsonschema import Draft7Validator

from config import config, Numerics, NUMERICS_RANGES
from graded_core import (
    StructuredManifold, GradedForm, Circle, Sphere2, Interval01, EngineError,
)
from bundles import (
    trivial_bundle, zero_bundle, flat_line, monopole, poincare,
    tensor, direct_sum, dual, regrade, pullback,
)
from charforms import identity_automorphism, phase_automorphism, constant_automorphism
from diffk import DKClassEven, DKClassOdd, EvenGenerator, OddGenerator, j_map, suspend_odd
from index import ProductFamily

SCHEMA_VERSION = config.get('runner.schema_version', 'dkdesk/1')


class ManifestError(Exception):
    """Invalid manifest content; `key` names the offending entry."""

    def __init__(self, message: str, key: str = ""):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


# ---------------------------------------------------------------------------
# Operation registry
# ---------------------------------------------------------------------------

def _ref(description: str) -> Dict[str, Any]:
    return {"type": "string", "description": description}


def _obj(properties: Dict[str, Any], required: List[str] = ()) -> Dict[str, Any]:
    return {"type": "object", "properties": properties, "required": list(required),
            "additionalProperties": False}


def create_operation_tools() -> List[Dict[str, Any]]:
    """The operations a manifest request may name, with their argument schemas."""
    return [
        {
            "name": "c1_flux",
            "description": "∫ c₁ of a line bundle (or det of a bundle) over a closed surface.",
            "inputSchema": _obj({"bundle": _ref("bundle name")}, ["bundle"]),
        },
        {
            "name": "chern_integral",
            "description": "∫ ω(∇) of a bundle over its closed base, as a Laurent scalar.",
            "inputSchema": _obj({"bundle": _ref("bundle name"),
                                 "degree": {"type": "integer", "description": "total degree r (default 0)"}},
                                ["bundle"]),
        },
        {
            "name": "holonomy",
            "description": "Eigen-phases (mod 1) of the holonomy around a circle factor at the basepoint.",
            "inputSchema": _obj({"bundle": _ref("bundle name"),
                                 "factor": {"type": "integer", "minimum": 0}}, ["bundle", "factor"]),
        },
        {
            "name": "observables",
            "description": "Rank, ω-periods and determinant data of a differential K-class.",
            "inputSchema": _obj({"class": _ref("class name")}, ["class"]),
        },
        {
            "name": "cs_period",
            "description": "Period of the Chern-Simons form CS(∇₀, ∇₁) over a reference cycle.",
            "inputSchema": _obj({"first": _ref("bundle name"), "second": _ref("bundle name"),
                                 "cycle": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
                                ["first", "second"]),
        },
        {
            "name": "reduced_eta",
            "description": "η̄ of the flat-twisted Dirac operator on S¹ or T³, with the zeta oracle on S¹.",
            "inputSchema": _obj({"manifold": _ref("manifold name"),
                                 "twist": {"type": "array", "items": {"type": "number"}},
                                 "degree": {"type": "integer"}}, ["manifold", "twist"]),
        },
        {
            "name": "eta_class",
            "description": "η̄(X, 𝓔) of an even class on an odd flat torus.",
            "inputSchema": _obj({"class": _ref("class name"), "spin_offset": {"type": "number"}}, ["class"]),
        },
        {
            "name": "torus_kernel_dim",
            "description": "Kernel dimensions of the Dirac operator on T² twisted by flux n.",
            "inputSchema": _obj({"manifold": _ref("manifold name"),
                                 "flux": {"type": "integer"},
                                 "twist": {"type": "array", "items": {"type": "number"}}},
                                ["manifold", "flux"]),
        },
        {
            "name": "sphere_kernel_dim",
            "description": "Kernel dimensions of the Dirac operator on S² twisted by monopole(n).",
            "inputSchema": _obj({"n": {"type": "integer"},
                                 "spin_c": {"type": "string", "enum": ["complex", "spin"]}}, ["n"]),
        },
        {
            "name": "todd_integral",
            "description": "∫ Td of an even-dimensional closed fibre with its spin^c data.",
            "inputSchema": _obj({"manifold": _ref("manifold name"),
                                 "spin_c": {"type": "string", "enum": ["complex", "spin"]}}, ["manifold"]),
        },
        {
            "name": "verify_index_theorem",
            "description": "Analytic vs Künneth pushforward of a product family, with η̄ functoriality.",
            "inputSchema": _obj({"family": _ref("family name"), "spin_offset": {"type": "number"}}, ["family"]),
        },
        {
            "name": "odd_index_point",
            "description": "Odd index over a point of an even class on S¹, compared with its η̄.",
            "inputSchema": _obj({"class": _ref("class name"),
                                 "circumference": {"type": "number", "exclusiveMinimum": 0},
                                 "spin_offset": {"type": "number"}}, ["class"]),
        },
        {
            "name": "suspension_roundtrip",
            "description": "Observable residual of D∘S on an odd class.",
            "inputSchema": _obj({"class": _ref("class name"),
                                 "circumference": {"type": "number", "exclusiveMinimum": 0}}, ["class"]),
        },
        {
            "name": "homotopy_certificate",
            "description": "Residual of 𝓔₁ − 𝓔₀ − j(∫₀¹ω) along the affine path between two connections.",
            "inputSchema": _obj({"start": _ref("bundle name"), "end": _ref("bundle name"),
                                 "degree": {"type": "integer"}}, ["start", "end"]),
        },
    ]


OPERATIONS = {tool["name"]: tool for tool in create_operation_tools()}

# request arguments that name manifest objects
REFERENCE_ARGS = {
    "bundle": "bundles", "first": "bundles", "second": "bundles", "start": "bundles", "end": "bundles",
    "class": "classes", "family": "families", "manifold": "manifolds",
}


# ---------------------------------------------------------------------------
# Manifest schema
# ---------------------------------------------------------------------------

def _numerics_schema() -> Dict[str, Any]:
    properties: Dict[str, Any] = {}
    for name, (low, high) in NUMERICS_RANGES.items():
        properties[name] = {"type": "integer", "minimum": low, "maximum": high}
    properties["richardson_order"] = {"type": "integer", "minimum": 1, "maximum": 16}
    for name in ("assert_tolerance", "accept_tolerance", "fiber_index_hard"):
        properties[name] = {"type": "number", "exclusiveMinimum": 0}
    return _obj(properties)


FACTOR_SCHEMA = {
    "oneOf": [
        {"type": "string", "enum": ["circle", "sphere", "interval"]},
        _obj({"circle": {"type": "number", "exclusiveMinimum": 0}}, ["circle"]),
        _obj({"sphere": {"type": "number", "exclusiveMinimum": 0}}, ["sphere"]),
    ]
}

TERM_SCHEMA = _obj({
    "dx": {"type": "array", "items": {"type": "integer", "minimum": 0}},
    "coefficient": {"type": "number"},
    "mode": {"type": "array", "items": {"type": "integer"}},
    "wave": {"type": "string", "enum": ["cos", "sin"]},
}, ["coefficient"])

FORM_SCHEMA = _obj({
    "manifold": {"type": "string"},
    "degree": {"type": "integer"},
    "terms": {"type": "array", "items": TERM_SCHEMA},
}, ["manifold", "degree"])

NAME_LIST = {"type": "array", "items": {"type": "string"}, "minItems": 1}

BUNDLE_SCHEMA = _obj({
    "kind": {"type": "string", "enum": ["trivial", "zero", "flat_line", "monopole", "poincare",
                                        "tensor", "direct_sum", "dual", "regrade", "pullback"]},
    "manifold": {"type": "string"},
    "rank": {"type": "integer", "minimum": 0},
    "grading": {"type": "array", "items": {"type": "integer", "enum": [1, -1]}},
    "holonomies": {"type": "array", "items": {"type": "number"}},
    "n": {"type": "integer"},
    "of": {"oneOf": [{"type": "string"}, NAME_LIST]},
    "positions": {"type": "array", "items": {"type": "integer", "minimum": 0}},
}, ["kind"])

AUTOMORPHISM_SCHEMA = _obj({
    "kind": {"type": "string", "enum": ["identity", "phase", "constant", "compose", "inverse"]},
    "bundle": {"type": "string"},
    "windings": {"type": "array"},
    "phases": {"type": "array", "items": {"type": "number"}},
    "of": {"oneOf": [{"type": "string"}, NAME_LIST]},
}, ["kind"])

GENERATOR_SCHEMA = _obj({
    "bundle": {"type": "string"},
    "automorphism": {"type": "string"},
    "form": {"type": "string"},
    "coefficient": {"type": "integer"},
}, ["bundle"])

CLASS_SCHEMA = _obj({
    "kind": {"type": "string", "enum": ["even", "odd", "j", "combination", "suspension"]},
    "manifold": {"type": "string"},
    "degree": {"type": "integer"},
    "generators": {"type": "array", "items": GENERATOR_SCHEMA},
    "form": {"type": "string"},
    "terms": {"type": "array", "items": _obj({"class": {"type": "string"}, "coefficient": {"type": "integer"}},
                                             ["class"]), "minItems": 1},
    "of": {"type": "string"},
    "circumference": {"type": "number", "exclusiveMinimum": 0},
}, ["kind"])

FAMILY_SCHEMA = _obj({
    "fiber": {"type": "string"},
    "base": {"type": "string"},
    "spin_c": {"type": "string", "enum": ["complex", "spin"]},
    "terms": {"type": "array", "items": _obj({"fiber_class": {"type": "string"}, "base_class": {"type": "string"}},
                                             ["fiber_class", "base_class"])},
    "phi": {"type": "string"},
    "notes": {"type": "string"},
}, ["fiber", "base"])

REQUEST_SCHEMA = _obj({
    "op": {"type": "string", "enum": sorted(OPERATIONS)},
    "key": {"type": "string"},
    "args": {"type": "object"},
}, ["op", "key"])


def _named(schema: Dict[str, Any]) -> Dict[str, Any]:
    return {"type": "object", "additionalProperties": schema}


MANIFEST_SCHEMA = _obj({
    "version": {"type": "string", "const": SCHEMA_VERSION},
    "numerics": _numerics_schema(),
    "manifolds": _named({"type": "array", "items": FACTOR_SCHEMA}),
    "forms": _named(FORM_SCHEMA),
    "bundles": _named(BUNDLE_SCHEMA),
    "automorphisms": _named(AUTOMORPHISM_SCHEMA),
    "classes": _named(CLASS_SCHEMA),
    "families": _named(FAMILY_SCHEMA),
    "requests": {"type": "array", "items": REQUEST_SCHEMA},
}, ["version"])


# ---------------------------------------------------------------------------
# Loading and validation
# ---------------------------------------------------------------------------

def load_manifest(path: str) -> Dict[str, Any]:
    """Read a manifest; yaml.YAMLError and OSError propagate (exit 2)."""
    with open(Path(path), 'r', encoding='utf-8') as f:
        document = yaml.safe_load(f)
    if document is None:
        document = {}
    if not isinstance(document, dict):
        raise yaml.YAMLError(f"{path}: manifest must be a mapping, got {type(document).__name__}")
    return document


def _path_key(path) -> str:
    key = ""
    for part in path:
        key += f"[{part}]" if isinstance(part, int) else (f".{part}" if key else str(part))
    return key or "<root>"


def _first_error(validator: Draft7Validator, instance: Any) -> Optional[Tuple[str, str]]:
    errors = sorted(validator.iter_errors(instance), key=lambda e: list(map(str, e.absolute_path)))
    if not errors:
        return None
    return _path_key(errors[0].absolute_path), errors[0].message


def validate_manifest(document: Dict[str, Any]) -> None:
    """Schema and reference validation; raises ManifestError naming the offending key."""
    problem = _first_error(Draft7Validator(MANIFEST_SCHEMA), document)
    if problem:
        raise ManifestError(problem[1], problem[0])
    for k, request in enumerate(document.get("requests", []) or []):
        schema = OPERATIONS[request["op"]]["inputSchema"]
        problem = _first_error(Draft7Validator(schema), request.get("args", {}))
        if problem:
            raise ManifestError(problem[1], f"requests[{k}].args" + ("" if problem[0] == "<root>" else "." + problem[0]))
    check_references(document)


def _require(document: Dict[str, Any], section: str, name: Any, key: str) -> None:
    names = [name] if isinstance(name, str) else list(name)
    for item in names:
        if item not in (document.get(section) or {}):
            raise ManifestError(f"unknown {section[:-1]} '{item}'", key)


def check_references(document: Dict[str, Any]) -> None:
    """Every name used in the manifest must be declared in the matching section."""
    for name, form in (document.get("forms") or {}).items():
        _require(document, "manifolds", form["manifold"], f"forms.{name}.manifold")
    for name, spec in (document.get("bundles") or {}).items():
        key = f"bundles.{name}"
        if spec["kind"] in ("tensor", "direct_sum", "dual", "regrade", "pullback"):
            if "of" not in spec:
                raise ManifestError(f"'{spec['kind']}' needs 'of'", key)
            _require(document, "bundles", spec["of"], key + ".of")
        if spec["kind"] not in ("tensor", "direct_sum", "dual", "regrade") or "manifold" in spec:
            if "manifold" not in spec:
                raise ManifestError(f"'{spec['kind']}' needs 'manifold'", key)
            _require(document, "manifolds", spec["manifold"], key + ".manifold")
    for name, spec in (document.get("automorphisms") or {}).items():
        key = f"automorphisms.{name}"
        if spec["kind"] in ("compose", "inverse"):
            if "of" not in spec:
                raise ManifestError(f"'{spec['kind']}' needs 'of'", key)
            _require(document, "automorphisms", spec["of"], key + ".of")
        else:
            if "bundle" not in spec:
                raise ManifestError(f"'{spec['kind']}' needs 'bundle'", key)
            _require(document, "bundles", spec["bundle"], key + ".bundle")
    for name, spec in (document.get("classes") or {}).items():
        key = f"classes.{name}"
        kind = spec["kind"]
        if kind in ("even", "odd"):
            for field in ("manifold", "degree"):
                if field not in spec:
                    raise ManifestError(f"'{kind}' class needs '{field}'", key)
            _require(document, "manifolds", spec["manifold"], key + ".manifold")
            for k, generator in enumerate(spec.get("generators", [])):
                gkey = f"{key}.generators[{k}]"
                _require(document, "bundles", generator["bundle"], gkey + ".bundle")
                if "form" in generator:
                    _require(document, "forms", generator["form"], gkey + ".form")
                if kind == "odd":
                    if "automorphism" not in generator:
                        raise ManifestError("odd generators need 'automorphism'", gkey)
                    _require(document, "automorphisms", generator["automorphism"], gkey + ".automorphism")
        elif kind == "j":
            if "form" not in spec:
                raise ManifestError("'j' class needs 'form'", key)
            _require(document, "forms", spec["form"], key + ".form")
        elif kind == "combination":
            if "terms" not in spec:
                raise ManifestError("'combination' class needs 'terms'", key)
            for k, term in enumerate(spec["terms"]):
                _require(document, "classes", term["class"], f"{key}.terms[{k}].class")
        else:
            if "of" not in spec:
                raise ManifestError("'suspension' class needs 'of'", key)
            _require(document, "classes", spec["of"], key + ".of")
    for name, spec in (document.get("families") or {}).items():
        key = f"families.{name}"
        _require(document, "manifolds", spec["fiber"], key + ".fiber")
        _require(document, "manifolds", spec["base"], key + ".base")
        for k, term in enumerate(spec.get("terms", [])):
            _require(document, "classes", term["fiber_class"], f"{key}.terms[{k}].fiber_class")
            _require(document, "classes", term["base_class"], f"{key}.terms[{k}].base_class")
        if "phi" in spec:
            _require(document, "forms", spec["phi"], key + ".phi")
    for k, request in enumerate(document.get("requests", []) or []):
        for arg, section in REFERENCE_ARGS.items():
            if arg in request.get("args", {}):
                _require(document, section, request["args"][arg], f"requests[{k}].args.{arg}")


def manifest_numerics(document: Dict[str, Any], base: Optional[Numerics] = None) -> Numerics:
    """Config defaults overridden by the manifest's numerics block."""
    base = base or Numerics.from_config()
    try:
        return base.with_overrides(**(document.get("numerics") or {}))
    except ValueError as e:
        raise ManifestError(str(e), "numerics")


# ---------------------------------------------------------------------------
# Workspace: named objects at one numerics level
# ---------------------------------------------------------------------------

def _factor(spec) -> Any:
    if spec == "circle":
        return Circle()
    if spec == "sphere":
        return Sphere2()
    if spec == "interval":
        return Interval01()
    if "circle" in spec:
        return Circle(float(spec["circle"]))
    return Sphere2(float(spec["sphere"]))


class Workspace:
    """Lazily built manifolds, forms, bundles, automorphisms, classes and families."""

    SECTIONS = ("manifolds", "forms", "bundles", "automorphisms", "classes", "families")

    def __init__(self, document: Dict[str, Any], numerics: Numerics):
        self.document = document
        self.numerics = numerics
        self._built: Dict[str, Dict[str, Any]] = {section: {} for section in self.SECTIONS}
        self._building: set = set()

    def get(self, section: str, name: str) -> Any:
        cache = self._built[section]
        if name in cache:
            return cache[name]
        key = f"{section}.{name}"
        if key in self._building:
            raise ManifestError("circular reference", key)
        spec = (self.document.get(section) or {}).get(name)
        if spec is None:
            raise ManifestError(f"unknown {section[:-1]} '{name}'", key)
        self._building.add(key)
        try:
            cache[name] = getattr(self, f"_build_{section}")(name, spec)
        except EngineError as e:
            raise ManifestError(str(e), key)
        finally:
            self._building.discard(key)
        return cache[name]

    def manifold(self, name: str) -> StructuredManifold:
        return self.get("manifolds", name)

    def form(self, name: str) -> GradedForm:
        return self.get("forms", name)

    def bundle(self, name: str):
        return self.get("bundles", name)

    def automorphism(self, name: str):
        return self.get("automorphisms", name)

    def dk_class(self, name: str):
        return self.get("classes", name)

    def family(self, name: str) -> ProductFamily:
        return self.get("families", name)

    def names(self, section: str) -> List[str]:
        return list((self.document.get(section) or {}).keys())

    # builders --------------------------------------------------------------
    def _build_manifolds(self, name: str, spec) -> StructuredManifold:
        return StructuredManifold([_factor(f) for f in spec], self.numerics)

    def _build_forms(self, name: str, spec) -> GradedForm:
        m = self.manifold(spec["manifold"])
        grouped: Dict[Tuple[int, ...], List[Dict[str, Any]]] = {}
        for term in spec.get("terms", []):
            index = tuple(term.get("dx", []))
            if any(c >= m.dimension for c in index):
                raise ManifestError(f"dx{list(index)} exceeds dimension {m.dimension}", f"forms.{name}")
            for c in index:
                if isinstance(m.factors[m.coordinate_owner[c][0]], Sphere2):
                    raise ManifestError(f"coordinate {c} is a sphere coordinate; terms take circle or interval differentials",
                                        f"forms.{name}")
            grouped.setdefault(index, []).append(term)
        functions = {index: self._term_function(m, terms, f"forms.{name}") for index, terms in grouped.items()}
        return GradedForm.from_global(m, spec["degree"], functions)

    @staticmethod
    def _term_function(m: StructuredManifold, terms: List[Dict[str, Any]], key: str):
        waves = []
        for term in terms:
            mode = list(term.get("mode", []))
            if mode and len(mode) != m.dimension:
                raise ManifestError(f"mode has {len(mode)} entries for dimension {m.dimension}", key)
            frequencies = []
            for c, k in enumerate(mode):
                if not k:
                    continue
                factor = m.factors[m.coordinate_owner[c][0]]
                if not isinstance(factor, Circle):
                    raise ManifestError(f"mode on non-circle coordinate {c}", key)
                frequencies.append((c, 2 * math.pi * k / factor.circumference))
            waves.append((float(term["coefficient"]), term.get("wave", "cos"), frequencies))

        def evaluate(coords):
            total = 0.0
            for coefficient, wave, frequencies in waves:
                phase = sum(w * coords[c] for c, w in frequencies) if frequencies else 0.0
                total = total + coefficient * (np.cos(phase) if wave == "cos" else np.sin(phase))
            return total

        return evaluate

    def _build_bundles(self, name: str, spec):
        kind = spec["kind"]
        key = f"bundles.{name}"
        if kind in ("tensor", "direct_sum"):
            parts = [self.bundle(b) for b in ([spec["of"]] if isinstance(spec["of"], str) else spec["of"])]
            combine = tensor if kind == "tensor" else direct_sum
            result = parts[0]
            for part in parts[1:]:
                result = combine(result, part)
            return result.renamed(name)
        if kind in ("dual", "regrade", "pullback"):
            source = self.bundle(spec["of"] if isinstance(spec["of"], str) else spec["of"][0])
            if kind == "dual":
                return dual(source)
            if kind == "regrade":
                if "grading" not in spec:
                    raise ManifestError("'regrade' needs 'grading'", key)
                return regrade(source, spec["grading"])
            return pullback(source, self.manifold(spec["manifold"]), spec.get("positions", []))
        m = self.manifold(spec["manifold"])
        if kind == "trivial":
            return trivial_bundle(m, spec.get("rank", 1), spec.get("grading"), name=name)
        if kind == "zero":
            return zero_bundle(m)
        if kind == "flat_line":
            return flat_line(m, spec.get("holonomies", [0.0] * len(m.factors)), name=name)
        if kind == "monopole":
            return monopole(m, spec.get("n", 1), name=name)
        return poincare(m, name=name)

    def _build_automorphisms(self, name: str, spec):
        kind = spec["kind"]
        if kind == "compose":
            names = [spec["of"]] if isinstance(spec["of"], str) else spec["of"]
            result = self.automorphism(names[0])
            for other in names[1:]:
                result = result.compose(self.automorphism(other))
            return result
        if kind == "inverse":
            return self.automorphism(spec["of"] if isinstance(spec["of"], str) else spec["of"][0]).inverse()
        bundle = self.bundle(spec["bundle"])
        if kind == "identity":
            return identity_automorphism(bundle)
        if kind == "phase":
            return phase_automorphism(bundle, spec.get("windings", [0] * len(bundle.base.factors)), name=name)
        phases = spec.get("phases", [0.0] * bundle.rank)
        if len(phases) != bundle.rank:
            raise ManifestError(f"{len(phases)} phases for rank {bundle.rank}", f"automorphisms.{name}")
        return constant_automorphism(bundle, np.diag(np.exp(2j * np.pi * np.asarray(phases, dtype=float))), name)

    def _build_classes(self, name: str, spec):
        kind = spec["kind"]
        key = f"classes.{name}"
        if kind == "j":
            return j_map(self.form(spec["form"]))
        if kind == "combination":
            result = None
            for term in spec["terms"]:
                piece = self.dk_class(term["class"]).scale(term.get("coefficient", 1))
                result = piece if result is None else result + piece
            return result
        if kind == "suspension":
            source = self.dk_class(spec["of"])
            if not isinstance(source, DKClassOdd):
                raise ManifestError(f"'{spec['of']}' is not an odd class", key)
            return suspend_odd(source, spec.get("circumference", 1.0))
        m = self.manifold(spec["manifold"])
        degree = spec["degree"]
        generators = []
        for k, g in enumerate(spec.get("generators", [])):
            bundle = self.bundle(g["bundle"])
            if not bundle.base.same_as(m):
                raise ManifestError(f"bundle '{g['bundle']}' lives on {bundle.base.describe()}", f"{key}.generators[{k}]")
            phi = self.form(g["form"]) if "form" in g else GradedForm.zero(m, degree - 1)
            coefficient = g.get("coefficient", 1)
            if kind == "even":
                generators.append(EvenGenerator(coefficient, bundle, phi))
            else:
                automorphism = self.automorphism(g["automorphism"]).on(bundle)
                generators.append(OddGenerator(coefficient, bundle, automorphism, phi))
        if kind == "even":
            if degree % 2:
                raise ManifestError(f"even class with odd degree {degree}", key)
            return DKClassEven(m, degree, generators)
        if degree % 2 == 0:
            raise ManifestError(f"odd class with even degree {degree}", key)
        return DKClassOdd(m, degree, generators)

    def _build_families(self, name: str, spec) -> ProductFamily:
        terms = [(self.dk_class(t["fiber_class"]), self.dk_class(t["base_class"])) for t in spec.get("terms", [])]
        phi = self.form(spec["phi"]) if "phi" in spec else None
        fiber, base = self.manifold(spec["fiber"]), self.manifold(spec["base"])
        family = ProductFamily(name, fiber, base, terms, phi, spec.get("spin_c", "complex") == "complex")
        if phi is not None and not phi.manifold.same_as(family.total):
            raise ManifestError(f"phi lives on {phi.manifold.describe()}, expected {family.total.describe()}",
                                f"families.{name}.phi")
        return family
