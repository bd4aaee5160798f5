#!/usr/bin/env python3
"""
Index maps for product families Z × B → B.

The analytic pushforward of Σ p*𝓔ᵢ^Z · π*𝓔ᵢ^B + j(φ) is
Σ ind(D^Z ⊗ Eᵢ^Z)·𝓔ᵢ^B + j(∫_Z Td∧φ); the eta form vanishes for product
geometry. The topological side uses the Künneth formula over the basis
{u·1, u·x} of the fibre, with decomposition coordinates read off the fibre
class (virtual rank and c₁-flux). Odd indices go through (de)suspension.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Any, Optional, Tuple, Union

import numpy as np

from config import config
from graded_core import (
    StructuredManifold, GradedForm, DeltaCurrent, EtaValue, Sphere2,
    NormalizationError, UnsupportedInputError, DegreeError,
    fiber_integrate, integrate, product_manifold, reduce_mod_one, circular_distance, spectral_derivative,
)
from bundles import BundleWithConnection, trivial_bundle, monopole, poincare, tangent_curvature, holonomy
from charforms import todd_form, chern_form
from diffk import (
    DKClassEven, DKClassOdd, generator_class, zero_class, j_map, omega_map, product,
    suspend_odd, desuspend, double_suspend, observables, observable_residual,
    virtual_rank,
)
from spectral import (
    SpectralModel, torus_kernel_dim, dirac_index, eta_class, spectral_eta, separated_eta,
    flat_twists, suspension_eta_density,
)


def fiber_spin_line(fiber: StructuredManifold, spin_c: bool = True):
    """Characteristic line of the fibre spin^c structure: monopole(2) on S² (complex), trivial otherwise."""
    if spin_c and len(fiber.factors) == 1 and isinstance(fiber.factors[0], Sphere2):
        return monopole(fiber, 2, name="K⁻¹")
    return trivial_bundle(fiber, 1, name="L")


def fiber_todd(fiber: StructuredManifold, spin_c: bool = True) -> GradedForm:
    return todd_form(tangent_curvature(fiber), fiber_spin_line(fiber, spin_c))


@dataclass
class ProductFamily:
    """Decomposed class Σ p*𝓔ᵢ^Z · π*𝓔ᵢ^B + j(φ) on Z × B (fibre first)."""

    name: str
    fiber: StructuredManifold
    base: StructuredManifold
    terms: List[Tuple[DKClassEven, DKClassEven]] = field(default_factory=list)
    phi: Optional[GradedForm] = None
    spin_c: bool = True

    def __post_init__(self):
        if not self.fiber.closed or self.fiber.dimension % 2:
            raise UnsupportedInputError(f"fibre {self.fiber.describe()} must be closed and even-dimensional")
        self.total = product_manifold(self.fiber, self.base)
        for fiber_class, base_class in self.terms:
            if not fiber_class.base.same_as(self.fiber) or not base_class.base.same_as(self.base):
                raise UnsupportedInputError(f"term of {self.name} does not live on {self.fiber.describe()} / {self.base.describe()}")
        degrees = {f.degree + b.degree for f, b in self.terms}
        if self.phi is not None:
            degrees.add(self.phi.total_degree + 1)
        if len(degrees) > 1:
            raise DegreeError(f"terms of {self.name} have mixed degrees {sorted(degrees)}")
        self.degree = degrees.pop() if degrees else self.fiber.dimension

    @property
    def fiber_positions(self) -> List[int]:
        return list(range(len(self.fiber.factors)))

    @property
    def base_positions(self) -> List[int]:
        return list(range(len(self.fiber.factors), len(self.total.factors)))

    @property
    def result_degree(self) -> int:
        return self.degree - self.fiber.dimension

    def todd(self) -> GradedForm:
        return fiber_todd(self.fiber, self.spin_c)

    def total_todd(self) -> GradedForm:
        return self.todd().pullback(self.total, self.fiber_positions)

    def total_class(self) -> DKClassEven:
        result = DKClassEven(self.total, self.degree)
        for fiber_class, base_class in self.terms:
            result = result + product(fiber_class.pullback(self.total, self.fiber_positions),
                                      base_class.pullback(self.total, self.base_positions))
        if self.phi is not None:
            result = result + j_map(self.phi)
        return result

    def describe(self) -> Dict[str, Any]:
        return {"name": self.name, "fiber": self.fiber.describe(), "base": self.base.describe(),
                "terms": len(self.terms), "degree": self.degree, "spin_c": "complex" if self.spin_c else "spin"}


@dataclass
class IndexResult:
    index_class: DKClassEven
    eta_form_used: GradedForm
    report: Dict[str, Any] = field(default_factory=dict)
    currents: List[DeltaCurrent] = field(default_factory=list)


def todd_pushforward(phi: Union[GradedForm, DeltaCurrent], family: ProductFamily) -> GradedForm:
    """∫_Z Td(∇^{TZ}) ∧ φ."""
    todd = family.total_todd()
    if isinstance(phi, DeltaCurrent):
        return fiber_integrate(phi.wedge_left(todd), family.fiber_positions)
    family.total.require_same(phi.manifold)
    return fiber_integrate(todd.wedge(phi), family.fiber_positions)


def fiber_index(fiber_class: DKClassEven, family: ProductFamily,
                warnings: Optional[List[str]] = None) -> Tuple[int, float, float]:
    """(rounded ∫_Z Td∧ω, raw value, residual); NormalizationError past the hard tolerance.

    A residual above the assertion tolerance is appended to `warnings`.
    """
    numerics = family.fiber.numerics
    omega = omega_map(fiber_class)
    raw = integrate(family.todd().wedge(omega))
    value = float(np.real(raw.coefficient((fiber_class.degree - family.fiber.dimension) // 2)))
    rounded = int(round(value))
    residual = abs(value - rounded)
    if residual > numerics.fiber_index_hard:
        raise NormalizationError(f"fibre index {value:.8f} of {family.name} is not an integer")
    if residual > numerics.assert_tolerance and warnings is not None:
        warnings.append(f"fibre index {value:.10f} rounded to {rounded} (residual {residual:.2e})")
    return rounded, value, residual


def fiber_coordinates(fiber_class: DKClassEven, family: ProductFamily) -> Tuple[int, int]:
    """(virtual rank, c₁-flux) of a fibre class: its coordinates on {u·1, u·x}."""
    rank = virtual_rank(fiber_class)
    flux = 0.0
    for g in fiber_class.generators:
        if g.bundle.rank:
            flux += g.coefficient * float(np.real(integrate(chern_form(g.bundle, fiber_class.degree))
                                                  .coefficient((fiber_class.degree - family.fiber.dimension) // 2)))
    return rank, int(round(flux))


def spectral_fiber_index(fiber_class: DKClassEven, family: ProductFamily) -> int:
    rank, flux = fiber_coordinates(fiber_class, family)
    return dirac_index(family.fiber, rank, flux, family.spin_c)


def analytic_index_product(family: ProductFamily) -> IndexResult:
    """Σ ind(D^Z⊗Eᵢ^Z)·𝓔ᵢ^B + j(∫_Z Td∧φ), with zero eta form."""
    result = zero_class(family.base, family.result_degree)
    report: Dict[str, Any] = {"family": family.describe(), "fiber_indices": [], "rounding_residuals": [],
                              "spectral_indices": [], "warnings": []}
    for fiber_class, base_class in family.terms:
        index, raw, residual = fiber_index(fiber_class, family, report["warnings"])
        spectral = spectral_fiber_index(fiber_class, family)
        report["fiber_indices"].append(index)
        report["rounding_residuals"].append(residual)
        report["spectral_indices"].append(spectral)
        if spectral != index:
            report["warnings"].append(f"spectral index {spectral} differs from ∫Td∧ω = {raw:.8f}")
        if index:
            result = result + base_class.scale(index)
    if family.phi is not None:
        result = result + j_map(todd_pushforward(family.phi, family))
    eta_form = GradedForm.zero(family.base, family.result_degree - 1)
    report["eta_form_max"] = eta_form.max_abs()
    return IndexResult(result, eta_form, report)


def kunneth_normalization(family: ProductFamily) -> Tuple[int, int, Dict[str, Any]]:
    """(t₁, t₂) = (π_*(u·1), π_*(u·x)) from the basis bundles; t₂ = 1 is required."""
    fiber = family.fiber
    degree = fiber.dimension
    unit = generator_class(trivial_bundle(fiber, 1), degree=degree)
    if fiber.is_torus():
        generator = poincare(fiber)
    else:
        generator = monopole(fiber, 1, name="H")
    x = generator_class(generator, degree=degree) - unit
    warnings: List[str] = []
    _, t1_raw, t1_residual = fiber_index(unit, family, warnings)
    _, t2_raw, t2_residual = fiber_index(x, family, warnings)
    t1, t2 = int(round(t1_raw)), int(round(t2_raw))
    if t2 != 1:
        raise NormalizationError(f"π_*(u·x) = {t2_raw:.8f} on {fiber.describe()}, expected 1")
    return t1, t2, {"t1": t1_raw, "t2": t2_raw, "t1_residual": t1_residual, "t2_residual": t2_residual,
                    "warnings": warnings}


def kunneth_pushforward(family: ProductFamily, report: Optional[Dict[str, Any]] = None) -> DKClassEven:
    """Σ (aᵢ t₁ + bᵢ t₂)·𝓔ᵢ^B + j(∫_Z Td∧φ) for fibre coordinates 𝓔ᵢ^Z = aᵢ·u1 + bᵢ·ux."""
    t1, t2, raw = kunneth_normalization(family)
    result = zero_class(family.base, family.result_degree)
    coordinates = []
    for fiber_class, base_class in family.terms:
        rank, flux = fiber_coordinates(fiber_class, family)
        # u·1 carries rank, u·x the flux beyond it
        weight = rank * t1 + flux * t2
        coordinates.append([rank, flux])
        if weight:
            result = result + base_class.scale(weight)
    if family.phi is not None:
        result = result + j_map(todd_pushforward(family.phi, family))
    if report is not None:
        report.update({"normalization": {"t1": t1, "t2": t2, **raw}, "coordinates": coordinates})
    return result


def gauge_move(family: ProductFamily, alphas: List[Optional[GradedForm]]) -> ProductFamily:
    """𝓔ᵢ^Z ↦ 𝓔ᵢ^Z + j(αᵢ), φ ↦ φ − Σ p*αᵢ ∧ π*ω(𝓔ᵢ^B); the total class is unchanged."""
    if len(alphas) != len(family.terms):
        raise UnsupportedInputError(f"{len(alphas)} gauge forms for {len(family.terms)} terms")
    phi = family.phi if family.phi is not None else GradedForm.zero(family.total, family.degree - 1)
    terms = []
    for (fiber_class, base_class), alpha in zip(family.terms, alphas):
        if alpha is None:
            terms.append((fiber_class, base_class))
            continue
        terms.append((fiber_class + j_map(alpha), base_class))
        correction = alpha.pullback(family.total, family.fiber_positions).wedge(
            omega_map(base_class).pullback(family.total, family.base_positions))
        phi = phi - correction
    return ProductFamily(family.name, family.fiber, family.base, terms, phi, family.spin_c)


# ---------------------------------------------------------------------------
# Odd indices
# ---------------------------------------------------------------------------

def odd_index(fiber_class: DKClassEven, g: DKClassOdd, spin_c: bool = True,
              circumference: float = 1.0) -> DKClassOdd:
    """D ∘ ind ∘ S for the family Z × B → B with class p*𝓔^Z · π*g."""
    suspended = suspend_odd(g, circumference)
    family = ProductFamily("odd", fiber_class.base, suspended.base, [(fiber_class, suspended)], spin_c=spin_c)
    pushed = analytic_index_product(family).index_class
    return desuspend(pushed, 0)


def fiber_circle_phase(bundle: BundleWithConnection) -> Tuple[np.ndarray, np.ndarray, int]:
    """x(t₁), x′(t₁) and the winding of the holonomy phase e^{2πix} around factor 1, along factor 0.

    Read at the basepoint of the remaining factors; t₁ is the unit-period coordinate of factor 0.
    """
    m = bundle.base
    batched = holonomy(bundle, 1)[m.basepoint_key()]
    points = m.grids[0].points
    values = batched[(slice(None),) + (0,) * (m.dimension - 1)]
    values = np.broadcast_to(values, (points,) + values.shape[1:])
    phases = np.angle(np.trace(values, axis1=-2, axis2=-1) / bundle.rank) / (2 * np.pi)
    steps = np.diff(np.append(phases, phases[0]))
    steps = steps - np.round(steps)
    winding = int(round(float(np.sum(steps))))
    unwrapped = phases[0] + np.concatenate([[0.0], np.cumsum(steps[:-1])])
    t = np.arange(points) / points
    periodic = unwrapped - winding * t
    slope = winding + np.real(spectral_derivative(periodic, 0, 1.0))
    return unwrapped, slope, winding


def suspension_pushforward(suspended: DKClassEven, source: DKClassEven,
                           spin_offset: Optional[float] = None) -> IndexResult:
    """Index along T²×Z → S¹ with fibre S¹×Z, for the double suspension of `source`.

    P twists the fibre circle by a phase that winds over the base, so the fibre
    operators have index 0 and the pushforward is j(η̃ + ∫_F φ) with η̃ the eta
    form of the family. Zero modes of D^Z cross zero where the phase is integral
    and enter as a point current on the base.
    """
    total = suspended.base
    base = total.sub_manifold([0])
    fiber_positions = list(range(1, len(total.factors)))
    z = total.sub_manifold(list(range(2, len(total.factors))))
    degree = suspended.degree - (total.dimension - 1)
    length = total.factors[1].circumference
    spin_offset = config.get('spectral.spin_offset', 0.0) if spin_offset is None else spin_offset
    density = np.zeros(base.grids[0].points)
    kernel_weight = 0.0
    fiber_form = GradedForm.zero(base, degree - 1)
    report: Dict[str, Any] = {"windings": [], "kernel_dims": []}
    for source_gen, gen in zip(source.generators, suspended.generators):
        fiber_form = fiber_form + fiber_integrate(gen.phi, fiber_positions).scale(gen.coefficient)
        if gen.bundle.rank == 0:
            continue
        phase, slope, winding = fiber_circle_phase(gen.bundle)
        report["windings"].append(winding)
        for sign, angles in flat_twists(source_gen.bundle):
            part, kernel = suspension_eta_density(z, [a + spin_offset for a in angles], phase, slope, length)
            density = density + gen.coefficient * sign * part
            kernel_weight -= gen.coefficient * sign * winding * kernel / 2.0
            report["kernel_dims"].append(kernel)
    scale = 1.0 / base.factors[0].circumference
    eta_form = GradedForm.from_global(base, degree - 1, {(0,): lambda x: density * scale})
    point = base.sub_manifold([])
    currents = [DeltaCurrent(base, [], GradedForm.constant(point, degree - 2, kernel_weight))] if kernel_weight else []
    report.update({"eta_form_max": eta_form.max_abs(), "kernel_weight": kernel_weight})
    return IndexResult(j_map(eta_form + fiber_form), eta_form, report, currents)


def even_class_odd_fiber_index(e: DKClassEven, circumference: float = 1.0, spin_offset: Optional[float] = None,
                               report: Optional[Dict[str, Any]] = None) -> DKClassOdd:
    """D ∘ ind ∘ S² over a point for an odd flat fibre Z, an ℝ/ℤ value in K̆^{−dim Z}(pt).

    The suspension circles have length `circumference`; the value does not depend on it.
    """
    z = e.base
    if not z.is_torus() or z.dimension % 2 == 0:
        raise UnsupportedInputError(f"odd-fibre index needs an odd flat torus, got {z.describe()}")
    suspended = double_suspend(e, (circumference, circumference))
    pushed = suspension_pushforward(suspended, e, spin_offset)
    result = desuspend(pushed.index_class, 0)
    for current in pushed.currents:
        result = result + j_map(fiber_integrate(current, [0]))
    if report is not None:
        separated = separated_fiber_eta(e, suspended, spin_offset)
        value = point_value(result)
        report.update({**separated, "pushforward": pushed.report, "circumference": circumference,
                       "separated_residual": circular_distance(value, separated["eta"]["value_mod_1"])})
    return result


def separated_fiber_eta(e: DKClassEven, suspended: DKClassEven,
                        spin_offset: Optional[float] = None) -> Dict[str, Any]:
    """Index(D^{T²,P})·η̄(D^{Z,E}) + ∫ dt₁dt₂∧φ: the value the composition must reproduce."""
    torus = suspended.base.sub_manifold([0, 1])
    flux_raw = float(np.real(integrate(chern_form(poincare(torus), 2)).coefficient(0)))
    plus, minus = torus_kernel_dim(SpectralModel(torus, flux=int(round(flux_raw))))
    torus_index = plus - minus
    u_degree = (suspended.degree - suspended.base.dimension - 1) // 2
    spectral = sum(g.coefficient * spectral_eta(g.bundle, spin_offset) for g in e.generators if g.bundle.rank)
    form_part = sum(g.coefficient * float(np.real(integrate(g.phi).coefficient(u_degree)))
                    for g in suspended.generators)
    eta = separated_eta(torus_index, EtaValue(u_degree, spectral)) + EtaValue(u_degree, form_part)
    return {"torus_index": torus_index, "poincare_flux": flux_raw, "eta": eta.to_dict()}


def point_value(g: DKClassOdd) -> float:
    """ℝ/ℤ value of an odd class on a point (φ₍₀₎ plus the determinant phase), any u-degree."""
    if g.base.dimension or g.degree % 2 == 0:
        raise UnsupportedInputError("point_value needs an odd class on a point")
    total = 0.0
    for gen in g.generators:
        phi0 = gen.phi.charts[()].get(())
        if phi0 is not None:
            total += gen.coefficient * float(np.real(np.asarray(phi0).reshape(-1)[0]))
        if gen.bundle.rank:
            det = np.linalg.det(gen.automorphism.values(()).reshape(gen.bundle.rank, gen.bundle.rank))
            total += gen.coefficient * float(np.angle(det)) / (2 * np.pi)
    return reduce_mod_one(total)


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------

def total_space_eta(family: ProductFamily, spin_offset: Optional[float] = None) -> EtaValue:
    """η̄(Z×B, 𝓔) by separation of variables: Σ ind(Eᵢ^Z)·η̄(Eᵢ^B) + ∫_{Z×B} Td∧φ."""
    u_degree = (family.degree - family.total.dimension - 1) // 2
    total = EtaValue(u_degree, 0.0)
    for fiber_class, base_class in family.terms:
        index = spectral_fiber_index(fiber_class, family)
        spectral = sum(g.coefficient * spectral_eta(g.bundle, spin_offset)
                       for g in base_class.generators if g.bundle.rank)
        total = total + separated_eta(index, EtaValue(u_degree, spectral))
    todd = family.total_todd()
    form_part = 0.0
    for g in family.total_class().generators:
        form_part += g.coefficient * float(np.real(integrate(todd.wedge(g.phi)).coefficient(u_degree)))
    return total + EtaValue(u_degree, form_part)


def verify_index_theorem(family: ProductFamily, spin_offset: Optional[float] = None) -> Dict[str, Any]:
    """Compare the analytic and Künneth pushforwards on every observable; never raises on mismatch."""
    report: Dict[str, Any] = {"family": family.describe(), "success": False}
    try:
        analytic = analytic_index_product(family)
        topological_report: Dict[str, Any] = {}
        topological = kunneth_pushforward(family, topological_report)
    except Exception as e:
        report["error"] = str(e)
        return report
    residuals: Dict[str, float] = {"observables": observable_residual(analytic.index_class, topological)}
    pushed_omega = todd_pushforward(omega_map(family.total_class()), family)
    residuals["omega_analytic"] = (omega_map(analytic.index_class) - pushed_omega).max_abs()
    residuals["omega_topological"] = (omega_map(topological) - pushed_omega).max_abs()
    residuals["eta_form"] = analytic.eta_form_used.max_abs()
    base = family.base
    if base.is_torus() and base.dimension % 2:
        eta_analytic = eta_class(analytic.index_class, spin_offset)
        eta_topological = eta_class(topological, spin_offset)
        eta_total = total_space_eta(family, spin_offset)
        residuals["eta_sides"] = eta_analytic.distance(eta_topological)
        residuals["eta_functoriality"] = eta_analytic.distance(eta_total)
        report["eta"] = {"analytic": eta_analytic.to_dict(), "topological": eta_topological.to_dict(),
                         "total_space": eta_total.to_dict()}
    tolerance = family.base.numerics.accept_tolerance
    report.update({
        "analytic": analytic.report,
        "topological": topological_report,
        "observables": observables(analytic.index_class).to_dict(),
        "residuals": residuals,
        "max_residual": max(residuals.values()),
        "success": max(residuals.values()) < tolerance,
    })
    return report
