#!/usr/bin/env python3
"""
Chern-Weil and transgression forms.

Chern character form of degree r (even):
    ω(∇) = u^{r/2} R_u str e^{−u⁻¹F} = Σ_k (−1)^k (2πi)^{−k}/k! · u^{r/2−k} str F^k,
so ∫_{S²} c₁(monopole(1)) = +1. Transgressions integrate str e^{−u⁻¹F_tot} over
an affine segment or 2-simplex of connections, with F_tot = d_X A(t) + A∧A +
Σ dt_i∧∂A/∂t_i. Parameter differentials are carried as negative coordinate
indices so they sort in front of the manifold differentials; the stripped
coefficient is the fiber-first integrand.
"""

import math
from fractions import Fraction
from typing import Dict, List, Optional, Tuple, Sequence, Union

import numpy as np

from graded_core import (
    StructuredManifold, FormField, GradedForm, Components, Index, Circle,
    BundleMismatchError, DegreeError, UnsupportedInputError,
    merge_sign, multiply_values, add_component, gauss_legendre,
)
from bundles import (
    BundleWithConnection, ConnectionPath, matrix_field, dagger, identity_values,
    conjugation_residual, direct_sum,
)

BERNOULLI = {2: Fraction(1, 6), 4: Fraction(-1, 30), 6: Fraction(1, 42)}


def _supertrace(value: np.ndarray, parity: Sequence[int]) -> np.ndarray:
    return np.einsum('...ii,i->...', value, np.asarray(parity, dtype=float))


def _wedge_components(a: Components, b: Components, limit: int) -> Components:
    out: Components = {}
    for i, x in a.items():
        for j, y in b.items():
            sign, index = merge_sign(i, j)
            if sign == 0 or len(index) > limit:
                continue
            add_component(out, index, sign * multiply_values(x, y, 2, 2))
    return out


def curvature_power_traces(curvature: FormField, parity: Sequence[int], max_power: int) -> Dict[int, Dict[Tuple, Components]]:
    """str F^k per chart for k = 1..max_power."""
    m = curvature.manifold
    traces: Dict[int, Dict[Tuple, Components]] = {}
    for key in m.chart_keys:
        power = curvature.charts[key]
        for k in range(1, max_power + 1):
            if k > 1:
                power = _wedge_components(power, curvature.charts[key], m.dimension)
            traces.setdefault(k, {})[key] = {i: _supertrace(v, parity) for i, v in power.items()}
    return traces


def chern_form(bundle: BundleWithConnection, r: int = 0) -> GradedForm:
    """Chern character form of total degree r; supertrace for graded bundles."""
    if r % 2:
        raise DegreeError(f"chern_form needs even degree, got {r}")
    m = bundle.base
    form = GradedForm.constant(m, r, float(sum(bundle.parity))) if bundle.rank else GradedForm.zero(m, r)
    if bundle.rank == 0:
        return form
    traces = curvature_power_traces(bundle.curvature, bundle.parity, m.dimension // 2)
    for k, charts in traces.items():
        coefficient = (-1) ** k * (2j * np.pi) ** (-k) / math.factorial(k)
        scaled = {key: {i: coefficient * v for i, v in comps.items()} for key, comps in charts.items()}
        form = form + GradedForm(m, r, scaled)
    return form


def c1_form(bundle: BundleWithConnection) -> GradedForm:
    """−(2πi)⁻¹ u⁻¹ tr F."""
    m = bundle.base
    charts = {key: {i: -np.einsum('...ii->...', v) / (2j * np.pi) for i, v in comps.items()}
              for key, comps in bundle.curvature.charts.items()}
    return GradedForm(m, 0, charts)


def pontryagin_form(curvature: FormField) -> GradedForm:
    """u⁻²p₁ with p₁ = −tr Ω²/(8π²), total degree 0."""
    m = curvature.manifold
    traces = curvature_power_traces(curvature, (1,) * curvature_rank(curvature), 2) if m.dimension >= 4 else {}
    charts = {key: {i: -v / (8 * np.pi ** 2) for i, v in comps.items()}
              for key, comps in traces.get(2, {}).items()}
    return GradedForm(m, 0, charts)


def curvature_rank(curvature: FormField) -> int:
    for comps in curvature.charts.values():
        for value in comps.values():
            return value.shape[-1]
    return curvature.manifold.dimension


def a_hat_form(curvature: FormField) -> GradedForm:
    """R_u √det(x / sinh x), x = u⁻¹Ω/2, by the even log-series truncated at the dimension.

    log √det(x/sinh x) = −½ Σ_k 2^{2k} B_{2k} / (2k (2k)!) · tr x^{2k}.
    """
    m = curvature.manifold
    rank = curvature_rank(curvature)
    exponent = GradedForm.zero(m, 0)
    max_k = m.dimension // 4
    if max_k:
        traces = curvature_power_traces(curvature, (1,) * rank, 2 * max_k)
        for k in range(1, max_k + 1):
            series = Fraction(2 ** (2 * k)) * BERNOULLI[2 * k] / (2 * k * math.factorial(2 * k))
            # tr x^{2k} = (2πi)^{−2k} 2^{−2k} u^{−2k} tr Ω^{2k}
            scale = -0.5 * float(series) * (2j * np.pi) ** (-2 * k) / 2 ** (2 * k)
            charts = {key: {i: scale * v for i, v in comps.items()} for key, comps in traces[2 * k].items()}
            exponent = exponent + GradedForm(m, 0, charts)
    return exponent.exp().real_part(m.numerics.imaginary_tolerance)


def todd_form(curvature: FormField, line: BundleWithConnection) -> GradedForm:
    """Â(∇^W) ∧ e^{c₁(∇^L)/2}."""
    if line.rank != 1:
        raise BundleMismatchError(f"the spin^c characteristic bundle must be a line, got rank {line.rank}")
    half = c1_form(line).scale(0.5)
    return a_hat_form(curvature).wedge(half.exp())


# ---------------------------------------------------------------------------
# Automorphisms
# ---------------------------------------------------------------------------

class UnitaryAutomorphism:
    """Unitary bundle automorphism U, one matrix field per chart.

    U must commute with circle seams and satisfy U_S = g⁻¹U_N g on cap overlaps.
    """

    def __init__(self, bundle: BundleWithConnection, field: FormField, name: str = "U", check: bool = True):
        self.bundle = bundle
        self.field = field
        self.name = name
        m = bundle.base
        for key in m.chart_keys:
            if () not in field.charts[key]:
                field.charts[key][()] = identity_values(m, bundle.rank)
        if check and bundle.rank:
            self._check()

    def _check(self) -> None:
        tolerance = 1e-8
        m = self.bundle.base
        for key in m.chart_keys:
            u = self.field.charts[key][()]
            ident = np.eye(self.bundle.rank)
            if np.max(np.abs(u @ dagger(u) - ident)) > tolerance:
                raise UnsupportedInputError(f"automorphism {self.name} is not unitary")
            for position, seam in self.bundle.seams.items():
                g = seam.charts[key][()]
                if np.max(np.abs(u @ g - g @ u)) > tolerance:
                    raise UnsupportedInputError(f"automorphism {self.name} does not commute with the seam on factor {position}")
        if conjugation_residual(self.bundle, self.field) > tolerance:
            raise UnsupportedInputError(f"automorphism {self.name} is inconsistent across cap overlaps")

    def values(self, key: Tuple) -> np.ndarray:
        return self.field.charts[key][()]

    def compose(self, other: "UnitaryAutomorphism") -> "UnitaryAutomorphism":
        """Pointwise product U·V."""
        m = self.bundle.base
        charts = {key: {(): self.values(key) @ other.values(key)} for key in m.chart_keys}
        return UnitaryAutomorphism(self.bundle, matrix_field(m, charts), f"{self.name}∘{other.name}", check=False)

    def inverse(self) -> "UnitaryAutomorphism":
        m = self.bundle.base
        charts = {key: {(): dagger(self.values(key))} for key in m.chart_keys}
        return UnitaryAutomorphism(self.bundle, matrix_field(m, charts), f"{self.name}⁻¹", check=False)

    def on(self, bundle: BundleWithConnection) -> "UnitaryAutomorphism":
        """Same matrices viewed on another connection of the same bundle."""
        if not bundle.same_underlying(self.bundle):
            raise BundleMismatchError(f"{self.name} does not act on {bundle.name}")
        return UnitaryAutomorphism(bundle, self.field, self.name, check=False)

    def differential(self) -> FormField:
        return matrix_field(self.bundle.base, self.field.d_charts())

    def gauge_potential(self) -> FormField:
        """A^U = U A U⁻¹ − dU U⁻¹ (full potential)."""
        m = self.bundle.base
        potential = self.bundle.potential_field()
        d_u = self.differential()
        charts: Dict[Tuple, Components] = {}
        for key in m.chart_keys:
            u = self.values(key)
            u_inv = dagger(u)
            comps: Components = {}
            for index, value in potential.charts[key].items():
                add_component(comps, index, u @ value @ u_inv)
            for index, value in d_u.charts[key].items():
                add_component(comps, index, -value @ u_inv)
            charts[key] = comps
        return matrix_field(m, charts)

    def gauge_curvature(self) -> FormField:
        m = self.bundle.base
        charts = {key: {i: self.values(key) @ v @ dagger(self.values(key)) for i, v in comps.items()}
                  for key, comps in self.bundle.curvature.charts.items()}
        return matrix_field(m, charts)

    def determinant(self, key: Tuple) -> np.ndarray:
        return np.linalg.det(self.values(key)) if self.bundle.rank else np.ones(self.values(key).shape[:-2])


def identity_automorphism(bundle: BundleWithConnection) -> UnitaryAutomorphism:
    m = bundle.base
    return UnitaryAutomorphism(bundle, matrix_field(m, {key: {(): identity_values(m, bundle.rank)}
                                                        for key in m.chart_keys}), "id")


def phase_automorphism(bundle: BundleWithConnection, windings: Sequence, name: Optional[str] = None) -> UnitaryAutomorphism:
    """U = diag(e^{2πi Σ_p k_{s,p} x_p/L_p}) on circle factors.

    `windings` is either one list (per factor position, applied to every slot)
    or one such list per slot.
    """
    m = bundle.base
    per_slot = [list(w) for w in windings] if windings and isinstance(windings[0], (list, tuple)) \
        else [list(windings)] * bundle.rank
    if len(per_slot) != bundle.rank:
        raise BundleMismatchError(f"{len(per_slot)} winding rows for rank {bundle.rank}")
    charts: Dict[Tuple, Components] = {}
    for key in m.chart_keys:
        diagonal = np.zeros((1,) * m.dimension + (bundle.rank,), dtype=complex)
        for slot, row in enumerate(per_slot):
            if len(row) != len(m.factors):
                raise BundleMismatchError(f"winding row {row} has the wrong length for {m.describe()}")
            phase = np.zeros((1,) * m.dimension)
            for position, k in enumerate(row):
                if not k:
                    continue
                if not isinstance(m.factors[position], Circle):
                    raise UnsupportedInputError(f"winding on non-circle factor {position}")
                c = m.offsets[position]
                phase = phase + 2 * np.pi * k * m.coordinate_field(c, key) / m.factors[position].circumference
            diagonal = np.broadcast_to(diagonal, np.broadcast_shapes(diagonal.shape, phase.shape + (bundle.rank,))).copy()
            diagonal[..., slot] = np.exp(1j * phase)
        charts[key] = {(): np.einsum('...i,ij->...ij', diagonal, np.eye(bundle.rank))}
    label = name or "U(" + ";".join(",".join(f"{k:g}" for k in row) for row in per_slot) + ")"
    return UnitaryAutomorphism(bundle, matrix_field(m, charts), label)


def constant_automorphism(bundle: BundleWithConnection, matrix: np.ndarray, name: str = "U") -> UnitaryAutomorphism:
    m = bundle.base
    value = np.asarray(matrix, dtype=complex).reshape((1,) * m.dimension + (bundle.rank, bundle.rank))
    return UnitaryAutomorphism(bundle, matrix_field(m, {key: {(): value} for key in m.chart_keys}), name)


def pullback_automorphism(automorphism: UnitaryAutomorphism, bundle: BundleWithConnection,
                          positions: Sequence[int]) -> UnitaryAutomorphism:
    """U pulled back to `bundle` = p*E on the product containing the factors `positions`."""
    field = matrix_field(bundle.base, automorphism.field.pullback_charts(bundle.base, positions))
    return UnitaryAutomorphism(bundle, field, automorphism.name, check=False)


# ---------------------------------------------------------------------------
# Transgressions
# ---------------------------------------------------------------------------

Vertex = Tuple[FormField, FormField]


def bundle_vertex(bundle: BundleWithConnection) -> Vertex:
    """(full potential A, d-part F − A∧A) of a connection."""
    potential = bundle.potential_field()
    d_part = matrix_field(bundle.base, bundle.curvature.subtract(matrix_field(bundle.base, potential.wedge_charts(potential))))
    return potential, d_part


def gauge_vertex(automorphism: UnitaryAutomorphism) -> Vertex:
    potential = automorphism.gauge_potential()
    m = automorphism.bundle.base
    curvature = automorphism.gauge_curvature()
    return potential, matrix_field(m, curvature.subtract(matrix_field(m, potential.wedge_charts(potential))))


def parameter_nodes(simplex_dimension: int, numerics) -> List[Tuple[Tuple[float, ...], float]]:
    """Gauss-Legendre nodes on [0,1], or the Duffy-collapsed square for the 2-simplex."""
    if simplex_dimension == 1:
        nodes, weights = gauss_legendre(numerics.t_quadrature, 0.0, 1.0)
        return [((float(t),), float(w)) for t, w in zip(nodes, weights)]
    nodes, weights = gauss_legendre(numerics.simplex_quadrature, 0.0, 1.0)
    out = []
    for s, ws in zip(nodes, weights):
        for v, wv in zip(nodes, weights):
            out.append(((float(s * (1.0 - v)), float(s * v)), float(ws * wv * s)))
    return out


def family_transgression(manifold: StructuredManifold, vertices: Sequence[Vertex], parity: Sequence[int],
                         r_even: int = 0) -> GradedForm:
    """∫ over the affine simplex spanned by `vertices` of u^{r/2} R_u str e^{−u⁻¹F_tot} (top parameter part).

    Total degree r_even − (number of vertices − 1). For a segment the result
    T satisfies dT = ω(last vertex) − ω(first vertex).
    """
    if r_even % 2:
        raise DegreeError(f"transgression needs an even base degree, got {r_even}")
    simplex = len(vertices) - 1
    if simplex not in (1, 2):
        raise BundleMismatchError("transgressions run over a segment or a 2-simplex")
    params: Index = tuple(range(-simplex, 0))
    limit = manifold.dimension + simplex
    max_k = limit // 2
    coefficients = [(-1) ** k * (2j * np.pi) ** (-k) / math.factorial(k) for k in range(max_k + 1)]
    result: Dict[Tuple, Components] = {key: {} for key in manifold.chart_keys}
    velocities = [matrix_field(manifold, v[0].subtract(vertices[0][0])) for v in vertices[1:]]
    for parameters, weight in parameter_nodes(simplex, manifold.numerics):
        lam = [1.0 - sum(parameters)] + list(parameters)
        for key in manifold.chart_keys:
            potential: Components = {}
            total: Components = {}
            for coefficient, (a, d) in zip(lam, vertices):
                for index, value in a.charts[key].items():
                    add_component(potential, index, coefficient * value)
                for index, value in d.charts[key].items():
                    add_component(total, index, coefficient * value)
            for index, value in _wedge_components(potential, potential, manifold.dimension).items():
                add_component(total, index, value)
            for param, velocity in zip(params, velocities):
                for index, value in velocity.charts[key].items():
                    add_component(total, (param,) + index, value)
            power: Components = dict(total)
            for k in range(1, max_k + 1):
                if k > 1:
                    power = _wedge_components(power, total, limit)
                for index, value in power.items():
                    if index[:simplex] != params:
                        continue
                    add_component(result[key], index[simplex:], weight * coefficients[k] * _supertrace(value, parity))
    return GradedForm(manifold, r_even - simplex, result)


def _as_path(first, second) -> ConnectionPath:
    if isinstance(first, ConnectionPath):
        return first
    return ConnectionPath([first, second])


def cs_two(first: Union[ConnectionPath, BundleWithConnection], second: Optional[BundleWithConnection] = None,
           r: int = 0) -> GradedForm:
    """CS(∇₀, ∇₁) with d CS = ω(∇₀) − ω(∇₁); a representative modulo exact forms."""
    path = _as_path(first, second)
    if path.simplex_dimension != 1:
        raise BundleMismatchError("cs_two needs a segment of connections")
    start, end = path.vertices
    return family_transgression(path.base, [bundle_vertex(end), bundle_vertex(start)], start.parity, r)


def cs_three(first: BundleWithConnection, middle: BundleWithConnection, third: BundleWithConnection,
             r: int = 0) -> GradedForm:
    """CS(∇₁, ∇₂, ∇₃) for E₂ = E₁⊕E₃, with d CS = ω(∇₂) − ω(∇₁) − ω(∇₃)."""
    if first.rank + third.rank != middle.rank:
        raise BundleMismatchError(f"ranks {first.rank} + {third.rank} != {middle.rank}")
    split = direct_sum(first, third)
    if not split.same_underlying(middle):
        raise BundleMismatchError(f"{middle.name} is not the direct sum {split.name}")
    return family_transgression(middle.base, [bundle_vertex(split), bundle_vertex(middle)], middle.parity, r)


def odd_chern_form(bundle: BundleWithConnection, automorphism: UnitaryAutomorphism, r: int = -1) -> GradedForm:
    """ω(∇, U) of odd total degree r: transgression from ∇ to its gauge transform by U."""
    if r % 2 == 0:
        raise DegreeError(f"odd_chern_form needs odd degree, got {r}")
    if bundle.rank == 0:
        return GradedForm.zero(bundle.base, r)
    automorphism = automorphism.on(bundle)
    return family_transgression(bundle.base, [bundle_vertex(bundle), gauge_vertex(automorphism)], bundle.parity, r + 1)


def cs_aut(bundle: BundleWithConnection, first: UnitaryAutomorphism, second: UnitaryAutomorphism,
           r: int = -1) -> GradedForm:
    """Simplex transgression with d cs_aut = ω(∇,U₁U₂) − ω(∇,U₁) − ω(∇,U₂).

    Vertices ∇, ∇^{U₁}, ∇^{U₁U₂} at (0,0), (1,0), (0,1).
    """
    if r % 2 == 0:
        raise DegreeError(f"cs_aut needs odd degree, got {r}")
    if bundle.rank == 0:
        return GradedForm.zero(bundle.base, r - 1)
    first, second = first.on(bundle), second.on(bundle)
    vertices = [bundle_vertex(bundle), gauge_vertex(first), gauge_vertex(first.compose(second))]
    return family_transgression(bundle.base, vertices, bundle.parity, r + 1)


def closedness_residual(form: GradedForm) -> float:
    return form.d().max_abs()
