#!/usr/bin/env python3
"""
Differential K-theory classes at desk scale.

Even classes are formal integer sums of generators (E, ∇, φ) with φ of total
degree r − 1; odd classes are sums of (E, ∇, U, φ). Relations are applied as
explicit rewrites that keep ω and every observable fixed. Equality of classes
is decided through observables: rank, ω-periods over reference cycles,
determinant holonomies (degree 0) or determinant-circle windings (degree −1).
"""

from dataclasses import dataclass, field
from typing import Dict, List, Any, Optional, Tuple, Sequence, Union

import numpy as np

from graded_core import (
    StructuredManifold, GradedForm, LaurentScalar, EtaValue, Circle, Interval01, Components,
    DegreeError, BundleMismatchError, ManifoldMismatchError, UnsupportedInputError, ToleranceBreach,
    fiber_integrate, reference_cycles, cycle_name, period, add_component,
)
from bundles import (
    BundleWithConnection, ConnectionPath, matrix_field, dagger,
    trivial_bundle, zero_bundle, tensor, direct_sum, pullback as pullback_bundle, restrict as restrict_bundle,
    holonomy, holonomy_at_basepoint, poincare,
)
from charforms import (
    UnitaryAutomorphism, chern_form, odd_chern_form, cs_two, cs_three, cs_aut,
    identity_automorphism, pullback_automorphism, family_transgression, bundle_vertex, gauge_vertex,
)


@dataclass(frozen=True)
class EvenGenerator:
    coefficient: int
    bundle: BundleWithConnection
    phi: GradedForm


@dataclass(frozen=True)
class OddGenerator:
    coefficient: int
    bundle: BundleWithConnection
    automorphism: UnitaryAutomorphism
    phi: GradedForm


class _DKClass:
    """Shared bookkeeping of the even and odd models."""

    parity_name = ""

    def __init__(self, base: StructuredManifold, degree: int, generators: Sequence = ()):
        self.base = base
        self.degree = int(degree)
        self.generators = list(generators)
        for generator in self.generators:
            if not generator.bundle.base.same_as(base):
                raise ManifoldMismatchError(f"generator {generator.bundle.name} lives on {generator.bundle.base.describe()}")
            if not generator.phi.manifold.same_as(base):
                raise ManifoldMismatchError(f"φ of {generator.bundle.name} lives on {generator.phi.manifold.describe()}")
            if generator.phi.total_degree != self.degree - 1:
                raise DegreeError(f"φ has total degree {generator.phi.total_degree}, expected {self.degree - 1}")

    def _new(self, generators):
        return type(self)(self.base, self.degree, generators)

    def _check_compatible(self, other) -> None:
        if type(other) is not type(self):
            raise DegreeError("cannot combine even and odd classes")
        if not other.base.same_as(self.base):
            raise ManifoldMismatchError(f"{self.base.describe()} != {other.base.describe()}")
        if other.degree != self.degree:
            raise DegreeError(f"degrees {self.degree} and {other.degree} differ")

    def __add__(self, other):
        self._check_compatible(other)
        return self._new(self.generators + other.generators)

    def scale(self, n: int):
        return self._new([_with_coefficient(g, n * g.coefficient) for g in self.generators])

    def __neg__(self):
        return self.scale(-1)

    def __sub__(self, other):
        return self + (-other)

    def __len__(self) -> int:
        return len(self.generators)

    def __repr__(self) -> str:
        names = " + ".join(f"{g.coefficient}·{g.bundle.name}" for g in self.generators) or "0"
        return f"DKClass{self.parity_name}(deg {self.degree} on {self.base.describe()}: {names})"


def _with_coefficient(generator, coefficient: int):
    if isinstance(generator, EvenGenerator):
        return EvenGenerator(coefficient, generator.bundle, generator.phi)
    return OddGenerator(coefficient, generator.bundle, generator.automorphism, generator.phi)


class DKClassEven(_DKClass):
    parity_name = "Even"

    def __init__(self, base: StructuredManifold, degree: int, generators: Sequence[EvenGenerator] = ()):
        if degree % 2:
            raise DegreeError(f"even classes need even degree, got {degree}")
        super().__init__(base, degree, generators)

    def pullback(self, total: StructuredManifold, positions: Sequence[int]) -> "DKClassEven":
        return DKClassEven(total, self.degree, [
            EvenGenerator(g.coefficient, pullback_bundle(g.bundle, total, positions), g.phi.pullback(total, positions))
            for g in self.generators])


class DKClassOdd(_DKClass):
    parity_name = "Odd"

    def __init__(self, base: StructuredManifold, degree: int, generators: Sequence[OddGenerator] = ()):
        if degree % 2 == 0:
            raise DegreeError(f"odd classes need odd degree, got {degree}")
        super().__init__(base, degree, generators)

    def pullback(self, total: StructuredManifold, positions: Sequence[int]) -> "DKClassOdd":
        generators = []
        for g in self.generators:
            lifted = pullback_bundle(g.bundle, total, positions)
            generators.append(OddGenerator(g.coefficient, lifted, pullback_automorphism(g.automorphism, lifted, positions),
                                           g.phi.pullback(total, positions)))
        return DKClassOdd(total, self.degree, generators)


DKClass = Union[DKClassEven, DKClassOdd]


# ---------------------------------------------------------------------------
# Constructors and structure maps
# ---------------------------------------------------------------------------

def generator_class(bundle: BundleWithConnection, phi: Optional[GradedForm] = None, degree: int = 0,
                    coefficient: int = 1) -> DKClassEven:
    phi = phi if phi is not None else GradedForm.zero(bundle.base, degree - 1)
    return DKClassEven(bundle.base, degree, [EvenGenerator(coefficient, bundle, phi)])


def odd_generator_class(bundle: BundleWithConnection, automorphism: UnitaryAutomorphism,
                        phi: Optional[GradedForm] = None, degree: int = -1, coefficient: int = 1) -> DKClassOdd:
    phi = phi if phi is not None else GradedForm.zero(bundle.base, degree - 1)
    return DKClassOdd(bundle.base, degree, [OddGenerator(coefficient, bundle, automorphism.on(bundle), phi)])


def unit_class(base: StructuredManifold, degree: int = 0) -> DKClassEven:
    return generator_class(trivial_bundle(base, 1), degree=degree)


def zero_class(base: StructuredManifold, degree: int = 0) -> DKClass:
    return DKClassEven(base, degree) if degree % 2 == 0 else DKClassOdd(base, degree)


def j_map(alpha: GradedForm) -> DKClass:
    """j(α): the rank-0 generator carrying φ = α; ω(j(α)) = dα."""
    degree = alpha.total_degree + 1
    empty = zero_bundle(alpha.manifold)
    if degree % 2 == 0:
        return DKClassEven(alpha.manifold, degree, [EvenGenerator(1, empty, alpha)])
    return DKClassOdd(alpha.manifold, degree, [OddGenerator(1, empty, identity_automorphism(empty), alpha)])


def omega_map(x: DKClass) -> GradedForm:
    """ω(x) = Σ n (ω(∇) + dφ), closed of total degree r."""
    total = GradedForm.zero(x.base, x.degree)
    for g in x.generators:
        if isinstance(g, EvenGenerator):
            piece = chern_form(g.bundle, x.degree)
        else:
            piece = odd_chern_form(g.bundle, g.automorphism, x.degree)
        total = total + (piece + g.phi.d()).scale(g.coefficient)
    return total


def virtual_rank(x: DKClass) -> Optional[int]:
    if isinstance(x, DKClassOdd):
        return None
    return sum(g.coefficient * sum(g.bundle.parity) for g in x.generators)


@dataclass
class KClassObservable:
    """Chern-character shadow of c(x): rank and ω-periods over reference cycles."""

    rank: Optional[int]
    period_vector: Dict[str, LaurentScalar]

    def lattice_residual(self) -> float:
        return max((p.lattice_residual() for p in self.period_vector.values()), default=0.0)


def period_vector(form: GradedForm) -> Dict[str, LaurentScalar]:
    return {cycle_name(form.manifold, cycle): period(form, cycle) for cycle in reference_cycles(form.manifold)}


def c_map(x: DKClass) -> KClassObservable:
    return KClassObservable(virtual_rank(x), period_vector(omega_map(x)))


# ---------------------------------------------------------------------------
# Relation rewrites
# ---------------------------------------------------------------------------

def _replace(x: DKClass, index: int, replacements: Sequence) -> DKClass:
    generators = x.generators[:index] + list(replacements) + x.generators[index + 1:]
    return x._new(generators)


def rewrite_split(x: DKClassEven, index: int, first: BundleWithConnection, third: BundleWithConnection,
                  phi_third: Optional[GradedForm] = None) -> DKClassEven:
    """(E₂, φ₂) ↦ (E₁, φ₂ + CS − φ₃) + (E₃, φ₃) for E₂ = E₁⊕E₃."""
    g = x.generators[index]
    phi_third = phi_third if phi_third is not None else GradedForm.zero(x.base, x.degree - 1)
    cs = cs_three(first, g.bundle, third, x.degree)
    return _replace(x, index, [EvenGenerator(g.coefficient, first, g.phi + cs - phi_third),
                               EvenGenerator(g.coefficient, third, phi_third)])


def rewrite_merge(x: DKClassEven, first_index: int, third_index: int,
                  middle: Optional[BundleWithConnection] = None) -> DKClassEven:
    """(E₁, φ₁) + (E₃, φ₃) ↦ (E₂, φ₁ + φ₃ − CS) with E₂ = E₁⊕E₃."""
    a, b = x.generators[first_index], x.generators[third_index]
    if a.coefficient != b.coefficient:
        raise BundleMismatchError("merged generators must carry the same coefficient")
    middle = middle or direct_sum(a.bundle, b.bundle)
    cs = cs_three(a.bundle, middle, b.bundle, x.degree)
    merged = EvenGenerator(a.coefficient, middle, a.phi + b.phi - cs)
    rest = [g for k, g in enumerate(x.generators) if k not in (first_index, third_index)]
    return x._new(rest + [merged])


def rewrite_reconnect(x: DKClassEven, index: int, bundle: BundleWithConnection) -> DKClassEven:
    """(E, ∇', φ) ↦ (E, ∇, φ + CS(∇', ∇))."""
    g = x.generators[index]
    cs = cs_two(g.bundle, bundle, x.degree)
    return _replace(x, index, [EvenGenerator(g.coefficient, bundle, g.phi + cs)])


def rewrite_exact(x: DKClass, index: int, beta: GradedForm) -> DKClass:
    """φ ↦ φ + dβ."""
    g = x.generators[index]
    phi = g.phi + beta.d()
    if isinstance(g, EvenGenerator):
        return _replace(x, index, [EvenGenerator(g.coefficient, g.bundle, phi)])
    return _replace(x, index, [OddGenerator(g.coefficient, g.bundle, g.automorphism, phi)])


def rewrite_decompose(x: DKClassOdd, index: int, first: UnitaryAutomorphism, second: UnitaryAutomorphism) -> DKClassOdd:
    """(E, U₁U₂, φ) ↦ (E, U₁, φ + cs_aut) + (E, U₂, 0)."""
    g = x.generators[index]
    first, second = first.on(g.bundle), second.on(g.bundle)
    product = first.compose(second)
    for key in g.bundle.base.chart_keys:
        if np.max(np.abs(product.values(key) - g.automorphism.values(key)), initial=0.0) > 1e-8:
            raise BundleMismatchError(f"{first.name}∘{second.name} is not {g.automorphism.name}")
    cs = cs_aut(g.bundle, first, second, x.degree)
    return _replace(x, index, [OddGenerator(g.coefficient, g.bundle, first, g.phi + cs),
                               OddGenerator(g.coefficient, g.bundle, second, GradedForm.zero(x.base, x.degree - 1))])


def rewrite_compose(x: DKClassOdd, first_index: int, second_index: int) -> DKClassOdd:
    """(E, U₁, φ₁) + (E, U₂, φ₂) ↦ (E, U₁U₂, φ₁ + φ₂ − cs_aut)."""
    a, b = x.generators[first_index], x.generators[second_index]
    if a.coefficient != b.coefficient:
        raise BundleMismatchError("composed generators must carry the same coefficient")
    second = b.automorphism.on(a.bundle)
    cs = cs_aut(a.bundle, a.automorphism, second, x.degree)
    merged = OddGenerator(a.coefficient, a.bundle, a.automorphism.compose(second), a.phi + b.phi - cs)
    rest = [g for k, g in enumerate(x.generators) if k not in (first_index, second_index)]
    return x._new(rest + [merged])


def rewrite_odd_reconnect(x: DKClassOdd, index: int, bundle: BundleWithConnection) -> DKClassOdd:
    """(E, ∇', U, φ) ↦ (E, ∇, U, φ + CS) with dCS = ω(∇', U) − ω(∇, U).

    CS is minus the sum of the simplex transgressions over (∇, ∇', ∇'^U)
    and (∇, ∇'^U, ∇^U).
    """
    g = x.generators[index]
    automorphism = g.automorphism.on(bundle)
    old = g.automorphism
    first = family_transgression(bundle.base, [bundle_vertex(bundle), bundle_vertex(g.bundle), gauge_vertex(old)],
                                 bundle.parity, x.degree + 1)
    second = family_transgression(bundle.base, [bundle_vertex(bundle), gauge_vertex(old), gauge_vertex(automorphism)],
                                  bundle.parity, x.degree + 1)
    return _replace(x, index, [OddGenerator(g.coefficient, bundle, automorphism, g.phi - first - second)])


# ---------------------------------------------------------------------------
# Product and homotopy formula
# ---------------------------------------------------------------------------

def product(a: DKClassEven, b: DKClassEven) -> DKClassEven:
    """Generatorwise tensor with φ = φ₁∧ω(∇₂) + ω(∇₁)∧φ₂ + φ₁∧dφ₂."""
    if not a.base.same_as(b.base):
        raise ManifoldMismatchError(f"product of classes on {a.base.describe()} and {b.base.describe()}")
    generators = []
    for g in a.generators:
        omega_g = chern_form(g.bundle, a.degree)
        for h in b.generators:
            omega_h = chern_form(h.bundle, b.degree)
            phi = g.phi.wedge(omega_h) + omega_g.wedge(h.phi) + g.phi.wedge(h.phi.d())
            generators.append(EvenGenerator(g.coefficient * h.coefficient, tensor(g.bundle, h.bundle), phi))
    return DKClassEven(a.base, a.degree + b.degree, generators)


def cylinder_bundle(path: ConnectionPath) -> BundleWithConnection:
    """Bundle on [0,1]×X with connection (1−t)∇₀ + t∇₁ and no dt component."""
    if path.simplex_dimension != 1:
        raise BundleMismatchError("the cylinder needs a segment of connections")
    x = path.base
    cyl = StructuredManifold((Interval01(),) + x.factors, x.numerics)
    positions = list(range(1, len(x.factors) + 1))
    start, end = path.vertices
    t = cyl.coordinate_field(0, cyl.chart_keys[0])[..., None, None]

    def blend(first, second):
        low = first.pullback_charts(cyl, positions)
        high = second.pullback_charts(cyl, positions)
        charts: Dict[Tuple, Components] = {}
        for key in cyl.chart_keys:
            comps: Components = {}
            for index, value in low[key].items():
                add_component(comps, index, (1.0 - t) * value)
            for index, value in high[key].items():
                add_component(comps, index, t * value)
            charts[key] = comps
        return matrix_field(cyl, charts)

    empty = matrix_field(x, {})
    drifts = {p + 1: blend(start.drifts.get(p, empty), end.drifts.get(p, empty))
              for p in set(start.drifts) | set(end.drifts)}
    lift = lambda f: matrix_field(cyl, f.pullback_charts(cyl, positions))
    return BundleWithConnection(cyl, start.rank, blend(start.potential, end.potential), drifts,
                                {p + 1: lift(f) for p, f in start.seams.items()},
                                {p + 1: lift(f) for p, f in start.sphere_transitions.items()},
                                start.parity, name=f"cyl({start.name})")


def homotopy_compare(path: ConnectionPath, phi_start: Optional[GradedForm] = None,
                     phi_end: Optional[GradedForm] = None, degree: int = 0,
                     tolerance: Optional[float] = None) -> Tuple[DKClassEven, GradedForm, float]:
    """Certificate 𝓔₁ − 𝓔₀ − j(∫₀¹ ω(𝓔')) of the homotopy formula.

    Returns (certificate class, ∫₀¹ω, observable residual); raises
    ToleranceBreach when the certificate's observables do not vanish.
    """
    x = path.base
    tolerance = tolerance if tolerance is not None else x.numerics.accept_tolerance
    phi_start = phi_start if phi_start is not None else GradedForm.zero(x, degree - 1)
    phi_end = phi_end if phi_end is not None else GradedForm.zero(x, degree - 1)
    cyl_bundle = cylinder_bundle(path)
    cyl = cyl_bundle.base
    positions = list(range(1, len(x.factors) + 1))
    t = cyl.coordinate_field(0, cyl.chart_keys[0])
    low, high = phi_start.pullback(cyl, positions), phi_end.pullback(cyl, positions)
    phi_cyl = low + (high - low).scale(t)
    omega_cyl = chern_form(cyl_bundle, degree) + phi_cyl.d()
    integral = fiber_integrate(omega_cyl, [0], allow_boundary=True)
    start, end = path.vertices
    certificate = generator_class(end, phi_end, degree) - generator_class(start, phi_start, degree) - j_map(integral)
    residual = observables(certificate).residual(observables(zero_class(x, degree)))
    if residual > tolerance:
        raise ToleranceBreach(f"homotopy certificate residual {residual:.3e} exceeds {tolerance:.1e}", residual)
    return certificate, integral, residual


# ---------------------------------------------------------------------------
# Suspension
# ---------------------------------------------------------------------------

def _clutching_drift(bundle: BundleWithConnection, automorphism: UnitaryAutomorphism):
    """J = U A U⁻¹ − dU U⁻¹ − A on the periodic part, after checking U commutes with seam drifts."""
    m = bundle.base
    for position, drift in bundle.drifts.items():
        for key in m.chart_keys:
            u = automorphism.values(key)
            for value in drift.charts[key].values():
                if np.max(np.abs(u @ value - value @ u), initial=0.0) > 1e-9:
                    raise UnsupportedInputError(
                        f"clutching by {automorphism.name} does not commute with the seam of factor {position}")
    d_u = automorphism.differential()
    charts: Dict[Tuple, Components] = {}
    for key in m.chart_keys:
        u = automorphism.values(key)
        comps: Components = {}
        for index, value in bundle.potential.charts[key].items():
            add_component(comps, index, u @ value @ dagger(u) - value)
        for index, value in d_u.charts[key].items():
            add_component(comps, index, -value @ dagger(u))
        charts[key] = comps
    return matrix_field(m, charts)


def suspension_manifold(base: StructuredManifold, circumference: float = 1.0) -> StructuredManifold:
    return StructuredManifold((Circle(circumference),) + base.factors, base.numerics)


def suspend_odd(g: DKClassOdd, circumference: float = 1.0) -> DKClassEven:
    """S: mapping torus of U over S¹(a)×X, A(t) = p*A + (t/a)J, seam U⁻¹, Φ = (dt/a)∧p*φ."""
    x = g.base
    total = suspension_manifold(x, circumference)
    positions = list(range(1, len(x.factors) + 1))
    dt = GradedForm.coordinate_differential(total, 0, 1.0 / circumference)
    lift = lambda f: matrix_field(total, f.pullback_charts(total, positions))
    generators = []
    for gen in g.generators:
        bundle = gen.bundle
        phi = dt.wedge(gen.phi.pullback(total, positions))
        if bundle.rank == 0:
            generators.append(EvenGenerator(gen.coefficient, zero_bundle(total), phi))
            continue
        automorphism = gen.automorphism.on(bundle)
        drift = _clutching_drift(bundle, automorphism)
        drifts = {p + 1: lift(f) for p, f in bundle.drifts.items()}
        drifts[0] = lift(drift)
        seams = {p + 1: lift(f) for p, f in bundle.seams.items()}
        seams[0] = lift(automorphism.inverse().field)
        torus = BundleWithConnection(total, bundle.rank, lift(bundle.potential), drifts, seams,
                                     {p + 1: lift(f) for p, f in bundle.sphere_transitions.items()},
                                     bundle.parity, name=f"S({bundle.name},{automorphism.name})")
        generators.append(EvenGenerator(gen.coefficient, torus, phi))
    return DKClassEven(total, g.degree + 1, generators)


def desuspend(e: DKClassEven, position: int = 0) -> DKClassOdd:
    """D: restriction to the basepoint of circle `position`, holonomy U around it, φ = ∫_{S¹}Φ."""
    total = e.base
    if not isinstance(total.factors[position], Circle):
        raise UnsupportedInputError(f"factor {position} of {total.describe()} is not a circle")
    keep = [p for p in range(len(total.factors)) if p != position]
    x = total.sub_manifold(keep)
    axis = total.offsets[position]
    generators = []
    for gen in e.generators:
        phi = fiber_integrate(gen.phi, [position])
        restricted = restrict_bundle(gen.bundle, keep)
        if gen.bundle.rank == 0:
            generators.append(OddGenerator(gen.coefficient, restricted, identity_automorphism(restricted), phi))
            continue
        batched = holonomy(gen.bundle, position)
        charts = {}
        for key in x.chart_keys:
            full_key = key[:position] + (0,) + key[position:]
            charts[key] = {(): np.take(batched[full_key], 0, axis=axis)}
        automorphism = UnitaryAutomorphism(restricted, matrix_field(x, charts), f"hol({gen.bundle.name})", check=False)
        generators.append(OddGenerator(gen.coefficient, restricted, automorphism, phi))
    return DKClassOdd(x, e.degree - 1, generators)


def double_suspend(e: DKClassEven, lengths: Tuple[float, float] = (1.0, 1.0)) -> DKClassEven:
    """S²: (E, ∇, φ) ↦ (p₁*P ⊗ p₂*E, p₁*∇^P ⊗ 1 + 1 ⊗ p₂*∇^E, dt₁∧dt₂∧p₂*φ) on T²×X.

    tᵢ are the unit-period coordinates of the two circles, so ∫_{T²} dt₁∧dt₂ = 1.
    Generator order follows `e`.
    """
    x = e.base
    torus = StructuredManifold((Circle(lengths[0]), Circle(lengths[1])), x.numerics)
    total = StructuredManifold(torus.factors + x.factors, x.numerics)
    positions = list(range(2, 2 + len(x.factors)))
    p_bundle = pullback_bundle(poincare(torus), total, [0, 1])
    area = GradedForm.coordinate_differential(total, 0, 1.0 / lengths[0]).wedge(
        GradedForm.coordinate_differential(total, 1, 1.0 / lengths[1]))
    generators = []
    for gen in e.generators:
        phi = area.wedge(gen.phi.pullback(total, positions))
        if gen.bundle.rank == 0:
            bundle = zero_bundle(total)
        else:
            bundle = tensor(p_bundle, pullback_bundle(gen.bundle, total, positions))
        generators.append(EvenGenerator(gen.coefficient, bundle, phi))
    return DKClassEven(total, e.degree + 2, generators)


# ---------------------------------------------------------------------------
# Determinant maps
# ---------------------------------------------------------------------------

def superdeterminant(values: np.ndarray, parity: Sequence[int]) -> np.ndarray:
    even = [i for i, s in enumerate(parity) if s > 0]
    odd = [i for i, s in enumerate(parity) if s < 0]
    result = np.ones(values.shape[:-2], dtype=complex)
    if even:
        result = result * np.linalg.det(values[..., even, :][..., :, even])
    if odd:
        result = result / np.linalg.det(values[..., odd, :][..., :, odd])
    return result


def _supertrace(values: np.ndarray, parity: Sequence[int]) -> np.ndarray:
    return np.einsum('...ii,i->...', values, np.asarray(parity, dtype=float))


def det_line(e: DKClassEven) -> BundleWithConnection:
    """⊗ (Λ^max E)^n with connection shifted by −2πi Σ n φ₍₁₎."""
    if e.degree != 0:
        raise DegreeError(f"det_line needs a degree-0 class, got degree {e.degree}")
    m = e.base
    potential: Dict[Tuple, Components] = {key: {} for key in m.chart_keys}
    drifts: Dict[int, Dict[Tuple, Components]] = {}
    seams: Dict[int, Dict[Tuple, Components]] = {}
    transitions: Dict[int, Dict[Tuple, Components]] = {}
    for g in e.generators:
        n, bundle = g.coefficient, g.bundle
        for key in m.chart_keys:
            for index, value in bundle.potential.charts[key].items():
                add_component(potential[key], index, n * _supertrace(value, bundle.parity)[..., None, None])
            for index, value in g.phi.charts[key].items():
                if len(index) == 1:
                    add_component(potential[key], index, -2j * np.pi * n * np.real(value)[..., None, None])
        if bundle.rank == 0:
            continue
        for position, drift in bundle.drifts.items():
            target = drifts.setdefault(position, {key: {} for key in m.chart_keys})
            for key in m.chart_keys:
                for index, value in drift.charts[key].items():
                    add_component(target[key], index, n * _supertrace(value, bundle.parity)[..., None, None])
        for store, source in ((seams, bundle.seams), (transitions, bundle.sphere_transitions)):
            for position, glue in source.items():
                target = store.setdefault(position, {key: {} for key in m.chart_keys})
                for key in m.chart_keys:
                    if () not in glue.charts[key]:
                        continue
                    factor = superdeterminant(glue.charts[key][()], bundle.parity) ** n
                    current = target[key].get((), np.ones((1,) * m.dimension + (1, 1), dtype=complex))
                    target[key][()] = current * factor[..., None, None]
    # sphere transitions only live on north-cap keys
    return BundleWithConnection(
        m, 1, matrix_field(m, potential),
        {p: matrix_field(m, c) for p, c in drifts.items()},
        {p: matrix_field(m, c) for p, c in seams.items()},
        {p: matrix_field(m, c) for p, c in transitions.items()},
        name="det")


def det_circle(g: DKClassOdd) -> GradedForm:
    """Sampled map x ↦ Π (e^{2πiφ₍₀₎(x)} sdet U(x))^n, as a total-degree-0 function."""
    if g.degree != -1:
        raise DegreeError(f"det_circle needs a degree −1 class, got degree {g.degree}")
    m = g.base
    charts: Dict[Tuple, Components] = {}
    for key in m.chart_keys:
        value = np.ones((1,) * m.dimension, dtype=complex)
        for gen in g.generators:
            phi0 = gen.phi.charts[key].get(())
            factor = np.exp(2j * np.pi * np.real(phi0)) if phi0 is not None else 1.0
            if gen.bundle.rank:
                factor = factor * superdeterminant(gen.automorphism.values(key), gen.bundle.parity)
            value = value * np.asarray(factor) ** gen.coefficient
        charts[key] = {(): value}
    return GradedForm(m, 0, charts)


def winding_numbers(det_map: GradedForm) -> Dict[str, float]:
    """Winding of a unit-circle valued function around each circle factor through the basepoint."""
    m = det_map.manifold
    out: Dict[str, float] = {}
    for position in m.circle_positions():
        samples = det_map.restrict([position]).charts[(0,)].get((), np.ones(1))
        samples = np.asarray(samples).reshape(-1)
        if samples.size < 2:
            out[cycle_name(m, (position,))] = 0.0
            continue
        steps = np.angle(np.roll(samples, -1) / samples)
        out[cycle_name(m, (position,))] = float(np.sum(steps) / (2 * np.pi))
    return out


# ---------------------------------------------------------------------------
# Observables
# ---------------------------------------------------------------------------

@dataclass
class ClassObservables:
    rank: Optional[int]
    periods: Dict[str, LaurentScalar]
    det_holonomies: Dict[str, complex] = field(default_factory=dict)
    det_windings: Dict[str, float] = field(default_factory=dict)
    det_value: Optional[complex] = None
    eta: Optional[EtaValue] = None

    def residual(self, other: "ClassObservables") -> float:
        worst = 0.0
        if self.rank is not None and other.rank is not None:
            worst = max(worst, float(abs(self.rank - other.rank)))
        for name in set(self.periods) | set(other.periods):
            worst = max(worst, self.periods.get(name, LaurentScalar()).distance(other.periods.get(name, LaurentScalar())))
        for name in set(self.det_holonomies) & set(other.det_holonomies):
            worst = max(worst, abs(self.det_holonomies[name] - other.det_holonomies[name]))
        for name in set(self.det_windings) & set(other.det_windings):
            worst = max(worst, abs(self.det_windings[name] - other.det_windings[name]))
        if self.det_value is not None and other.det_value is not None:
            worst = max(worst, abs(self.det_value - other.det_value))
        if self.eta is not None and other.eta is not None:
            worst = max(worst, self.eta.distance(other.eta))
        return worst

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"rank": self.rank,
                               "periods": {k: v.to_dict() for k, v in sorted(self.periods.items())}}
        if self.det_holonomies:
            out["det_holonomies"] = {k: {"re": float(v.real), "im": float(v.imag)}
                                     for k, v in sorted(self.det_holonomies.items())}
        if self.det_windings:
            out["det_windings"] = dict(sorted(self.det_windings.items()))
        if self.det_value is not None:
            out["det_value"] = {"re": float(self.det_value.real), "im": float(self.det_value.imag)}
        if self.eta is not None:
            out["eta"] = self.eta.to_dict()
        return out


def observables(x: DKClass) -> ClassObservables:
    """Rank, ω-periods and the determinant data that applies to the class degree."""
    result = ClassObservables(virtual_rank(x), period_vector(omega_map(x)))
    m = x.base
    if isinstance(x, DKClassEven) and x.degree == 0:
        line = det_line(x)
        for position in m.circle_positions():
            result.det_holonomies[cycle_name(m, (position,))] = complex(holonomy_at_basepoint(line, position)[0, 0])
    if isinstance(x, DKClassOdd) and x.degree == -1:
        det_map = det_circle(x)
        result.det_windings = winding_numbers(det_map)
        result.det_value = complex(np.asarray(det_map.restrict([]).charts[()][()]).reshape(-1)[0])
    return result


def observable_residual(a: DKClass, b: DKClass) -> float:
    return observables(a).residual(observables(b))
