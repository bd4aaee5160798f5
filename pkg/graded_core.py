#!/usr/bin/env python3
"""
Graded differential forms on structured product manifolds.

Coefficients live in R[u, u^-1] with deg u = 2. A form is sampled chart by
chart on tensor-product grids; a component dx_I of a form with total degree n
carries the power u^((n - |I|)/2). Circles use uniform periodic grids with
spectral differentiation, 2-spheres use two polar caps (Gauss-Legendre panels
in theta aligned with the overlap band, uniform in phi) glued by a raised-cosine
partition of unity, and [0,1] uses Gauss-Legendre nodes.

Orientation: the product of factor orientations, (theta, phi) on each cap.
Fiber integration moves the fiber differentials to the front before
integrating (fiber-first convention).
"""

import itertools
import math
from dataclasses import dataclass
from typing import Dict, List, Any, Optional, Tuple, Callable, Sequence, Union

import numpy as np

from config import Numerics

BAND_HALF_WIDTH = 0.4
BAND_LOW = math.pi / 2 - BAND_HALF_WIDTH
BAND_HIGH = math.pi / 2 + BAND_HALF_WIDTH

Index = Tuple[int, ...]
Components = Dict[Index, np.ndarray]


class EngineError(Exception):
    """Base class for all engine failures."""


class ManifoldMismatchError(EngineError):
    pass


class DegreeError(EngineError):
    pass


class NotClosedError(EngineError):
    pass


class FactorSubsetError(EngineError):
    pass


class UnsupportedInputError(EngineError):
    pass


class BundleMismatchError(EngineError):
    pass


class NormalizationError(EngineError):
    pass


class ToleranceBreach(EngineError):
    """An observable residual exceeded its tolerance."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


def tree_sum(values: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    """Sum over `axes` in a fixed pairwise order on a contiguous copy."""
    if not axes:
        return values
    axes = [a % values.ndim for a in axes]
    rest = [a for a in range(values.ndim) if a not in axes]
    moved = np.ascontiguousarray(np.transpose(values, rest + axes))
    flat = moved.reshape(moved.shape[:len(rest)] + (-1,))
    return np.add.reduce(flat, axis=-1)


# ---------------------------------------------------------------------------
# Coefficient ring
# ---------------------------------------------------------------------------

class LaurentScalar:
    """Element of R[u, u^-1] (or its complexification), keyed by even u-degree."""

    def __init__(self, terms: Optional[Dict[int, complex]] = None):
        self.terms: Dict[int, complex] = {}
        for degree, coefficient in (terms or {}).items():
            if int(degree) % 2:
                raise DegreeError(f"u-degree {degree} is odd (deg u = 2)")
            if coefficient != 0:
                self.terms[int(degree)] = coefficient

    @classmethod
    def power(cls, k: int, coefficient: complex) -> "LaurentScalar":
        """coefficient * u^k."""
        return cls({2 * k: coefficient})

    def coefficient(self, k: int) -> complex:
        """Coefficient of u^k."""
        return self.terms.get(2 * k, 0.0)

    def __add__(self, other: "LaurentScalar") -> "LaurentScalar":
        terms = dict(self.terms)
        for degree, coefficient in other.terms.items():
            terms[degree] = terms.get(degree, 0.0) + coefficient
        return LaurentScalar(terms)

    def __neg__(self) -> "LaurentScalar":
        return LaurentScalar({d: -c for d, c in self.terms.items()})

    def __sub__(self, other: "LaurentScalar") -> "LaurentScalar":
        return self + (-other)

    def __mul__(self, other: Union["LaurentScalar", complex, float, int]) -> "LaurentScalar":
        if not isinstance(other, LaurentScalar):
            return LaurentScalar({d: c * other for d, c in self.terms.items()})
        terms: Dict[int, complex] = {}
        for d1, c1 in self.terms.items():
            for d2, c2 in other.terms.items():
                terms[d1 + d2] = terms.get(d1 + d2, 0.0) + c1 * c2
        return LaurentScalar(terms)

    __rmul__ = __mul__

    def max_abs(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    def distance(self, other: "LaurentScalar") -> float:
        return (self - other).max_abs()

    def real(self, tolerance: float = 1e-9) -> "LaurentScalar":
        """Real part, asserting the imaginary part is below `tolerance`."""
        for degree, coefficient in self.terms.items():
            if abs(np.imag(coefficient)) > tolerance:
                raise DegreeError(f"u-degree {degree} coefficient {coefficient} is not real")
        return LaurentScalar({d: float(np.real(c)) for d, c in self.terms.items()})

    def lattice_residual(self) -> float:
        """Distance of every coefficient to the integers."""
        return max((abs(c - round(float(np.real(c)))) for c in self.terms.values()), default=0.0)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {}
        for degree in sorted(self.terms):
            c = complex(self.terms[degree])
            out[str(degree)] = c.real if c.imag == 0 else {"re": c.real, "im": c.imag}
        return out

    def __repr__(self) -> str:
        if not self.terms:
            return "LaurentScalar(0)"
        parts = [f"{self.terms[d]:.6g}·u^{d // 2}" for d in sorted(self.terms)]
        return "LaurentScalar(" + " + ".join(parts) + ")"


def reduce_mod_one(value: float) -> float:
    reduced = float(value) - math.floor(float(value))
    return 0.0 if reduced >= 1.0 else reduced


def circular_distance(a: float, b: float) -> float:
    """Distance between two classes in ℝ/ℤ."""
    gap = reduce_mod_one(a - b)
    return min(gap, 1.0 - gap)


@dataclass(frozen=True)
class EtaValue:
    """Element u^k·(ℝ/ℤ); `u_degree` is the power k."""

    u_degree: int
    value_mod_1: float

    def __post_init__(self):
        object.__setattr__(self, "value_mod_1", reduce_mod_one(self.value_mod_1))

    def __add__(self, other: "EtaValue") -> "EtaValue":
        if other.u_degree != self.u_degree:
            raise DegreeError(f"cannot add eta values in u^{self.u_degree} and u^{other.u_degree}")
        return EtaValue(self.u_degree, self.value_mod_1 + other.value_mod_1)

    def __neg__(self) -> "EtaValue":
        return EtaValue(self.u_degree, -self.value_mod_1)

    def __sub__(self, other: "EtaValue") -> "EtaValue":
        return self + (-other)

    def scale(self, n: int) -> "EtaValue":
        return EtaValue(self.u_degree, n * self.value_mod_1)

    def distance(self, other: "EtaValue") -> float:
        if other.u_degree != self.u_degree:
            return 1.0
        return circular_distance(self.value_mod_1, other.value_mod_1)

    def to_dict(self) -> Dict[str, Any]:
        return {"u_degree": self.u_degree, "value_mod_1": self.value_mod_1}


# ---------------------------------------------------------------------------
# Factors and their grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Circle:
    circumference: float = 1.0
    kind = "circle"
    dimension = 1
    closed = True


@dataclass(frozen=True)
class Sphere2:
    radius: float = 1.0
    kind = "sphere"
    dimension = 2
    closed = True


@dataclass(frozen=True)
class Interval01:
    kind = "interval"
    dimension = 1
    closed = False


Factor = Union[Circle, Sphere2, Interval01]


def gauss_legendre(n: int, low: float, high: float) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (high - low)
    return low + half * (nodes + 1.0), half * weights


def lagrange_differentiation(nodes: np.ndarray) -> np.ndarray:
    """Differentiation matrix of the interpolating polynomial (barycentric form)."""
    n = len(nodes)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    bary = 1.0 / np.prod(diff, axis=1)
    matrix = (bary[None, :] / bary[:, None]) / diff
    np.fill_diagonal(matrix, 0.0)
    np.fill_diagonal(matrix, -matrix.sum(axis=1))
    return matrix


def spectral_derivative(values: np.ndarray, axis: int, length: float) -> np.ndarray:
    n = values.shape[axis]
    wavenumbers = 2j * np.pi * np.fft.fftfreq(n, d=length / n)
    if n % 2 == 0:
        wavenumbers[n // 2] = 0.0
    shape = [1] * values.ndim
    shape[axis] = n
    transformed = np.fft.fft(values, axis=axis) * wavenumbers.reshape(shape)
    return np.fft.ifft(transformed, axis=axis)


def matrix_along_axis(matrix: np.ndarray, values: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(values, axis, -1)
    return np.moveaxis(np.einsum('...j,ij->...i', moved, matrix), -1, axis)


class CircleGrid:
    """Uniform periodic grid on Circle(L); one chart."""

    chart_keys = (0,)

    def __init__(self, factor: Circle, points: int):
        self.factor = factor
        self.points = points
        self.length = factor.circumference
        self.nodes = self.length * np.arange(points) / points

    def signature(self) -> Tuple:
        return ("circle", self.length, self.points)

    def axis_nodes(self, key, local: int) -> np.ndarray:
        return self.nodes

    def axis_weights(self, key) -> List[np.ndarray]:
        return [np.full(self.points, self.length / self.points)]

    def derivative(self, values: np.ndarray, key, local: int, axis: int) -> np.ndarray:
        return spectral_derivative(values, axis, self.length)


class SphereGrid:
    """Two polar caps on Sphere2(r), each with coordinates (theta, phi).

    The south chart uses theta' = pi - theta, phi' = -phi, so both charts are
    positively oriented and a component dx_I changes by (-1)^(sphere coords in I).
    """

    chart_keys = ("N", "S")

    def __init__(self, factor: Sphere2, order: int, phi_points: int):
        self.factor = factor
        self.order = order
        self.phi_points = phi_points
        half = order // 2
        self.half = half
        cap_nodes, cap_weights = gauss_legendre(half, 0.0, BAND_LOW)
        band_nodes, band_weights = gauss_legendre(half, BAND_LOW, BAND_HIGH)
        self.theta = np.concatenate([cap_nodes, band_nodes])
        self.theta_weights = np.concatenate([cap_weights, band_weights])
        blend = 0.5 * (1.0 + np.cos(np.pi * (band_nodes - BAND_LOW) / (BAND_HIGH - BAND_LOW)))
        self.partition = np.concatenate([np.ones(half), blend])
        self.theta_derivative = np.zeros((order, order))
        self.theta_derivative[:half, :half] = lagrange_differentiation(cap_nodes)
        self.theta_derivative[half:, half:] = lagrange_differentiation(band_nodes)
        self.phi = 2.0 * np.pi * np.arange(phi_points) / phi_points

    def signature(self) -> Tuple:
        return ("sphere", self.factor.radius, self.order, self.phi_points)

    def axis_nodes(self, key, local: int) -> np.ndarray:
        return self.theta if local == 0 else self.phi

    def axis_weights(self, key) -> List[np.ndarray]:
        return [self.theta_weights * self.partition,
                np.full(self.phi_points, 2.0 * np.pi / self.phi_points)]

    def derivative(self, values: np.ndarray, key, local: int, axis: int) -> np.ndarray:
        if local == 0:
            return matrix_along_axis(self.theta_derivative, values, axis)
        return spectral_derivative(values, axis, 2.0 * np.pi)

    def band_theta_indices(self) -> Tuple[np.ndarray, np.ndarray]:
        """North band indices and the matching south indices."""
        north = np.arange(self.half, self.order)
        return north, north[::-1]

    def phi_map(self) -> np.ndarray:
        return (-np.arange(self.phi_points)) % self.phi_points


class IntervalGrid:
    """Gauss-Legendre nodes on [0,1]; one chart."""

    chart_keys = (0,)

    def __init__(self, factor: Interval01, order: int):
        self.factor = factor
        self.order = order
        self.nodes, self.weights = gauss_legendre(order, 0.0, 1.0)
        self.diff = lagrange_differentiation(self.nodes)

    def signature(self) -> Tuple:
        return ("interval", self.order)

    def axis_nodes(self, key, local: int) -> np.ndarray:
        return self.nodes

    def axis_weights(self, key) -> List[np.ndarray]:
        return [self.weights]

    def derivative(self, values: np.ndarray, key, local: int, axis: int) -> np.ndarray:
        return matrix_along_axis(self.diff, values, axis)


def make_grid(factor: Factor, numerics: Numerics):
    if isinstance(factor, Circle):
        if factor.circumference <= 0:
            raise ValueError("circle circumference must be positive")
        return CircleGrid(factor, numerics.circle_points)
    if isinstance(factor, Sphere2):
        if factor.radius <= 0:
            raise ValueError("sphere radius must be positive")
        return SphereGrid(factor, numerics.sphere_order, numerics.sphere_phi_points)
    if isinstance(factor, Interval01):
        return IntervalGrid(factor, numerics.interval_order)
    raise UnsupportedInputError(f"unknown factor {factor!r}")


# ---------------------------------------------------------------------------
# Structured manifolds
# ---------------------------------------------------------------------------

class StructuredManifold:
    """Ordered product of Circle, Sphere2 and Interval01 factors."""

    def __init__(self, factors: Sequence[Factor], numerics: Optional[Numerics] = None):
        self.factors: Tuple[Factor, ...] = tuple(factors)
        self.numerics = numerics or Numerics.from_config()
        self.grids = [make_grid(f, self.numerics) for f in self.factors]
        self.offsets: List[int] = []
        offset = 0
        for factor in self.factors:
            self.offsets.append(offset)
            offset += factor.dimension
        self.dimension = offset
        self.coordinate_owner: List[Tuple[int, int]] = []
        for position, factor in enumerate(self.factors):
            for local in range(factor.dimension):
                self.coordinate_owner.append((position, local))
        self.chart_keys: List[Tuple] = list(itertools.product(*[g.chart_keys for g in self.grids]))

    @property
    def closed(self) -> bool:
        return all(f.closed for f in self.factors)

    def signature(self) -> Tuple:
        return tuple(g.signature() for g in self.grids)

    def same_as(self, other: "StructuredManifold") -> bool:
        return self is other or self.signature() == other.signature()

    def require_same(self, other: "StructuredManifold") -> None:
        if not self.same_as(other):
            raise ManifoldMismatchError(f"{self.describe()} != {other.describe()}")

    def describe(self) -> str:
        if not self.factors:
            return "point"
        names = []
        for f in self.factors:
            if isinstance(f, Circle):
                names.append(f"S1({f.circumference:g})")
            elif isinstance(f, Sphere2):
                names.append(f"S2({f.radius:g})")
            else:
                names.append("[0,1]")
        return "×".join(names)

    def factor_coordinates(self, position: int) -> List[int]:
        start = self.offsets[position]
        return list(range(start, start + self.factors[position].dimension))

    def positions_coordinates(self, positions: Sequence[int]) -> List[int]:
        return [c for p in positions for c in self.factor_coordinates(p)]

    def grid_shape(self, key: Tuple) -> Tuple[int, ...]:
        shape: List[int] = []
        for grid in self.grids:
            if isinstance(grid, SphereGrid):
                shape += [grid.order, grid.phi_points]
            else:
                shape.append(len(grid.nodes))
        return tuple(shape)

    def axis(self, coordinate: int, value_ndim: int = 0) -> int:
        return coordinate - self.dimension - value_ndim

    def coordinate_field(self, coordinate: int, key: Tuple) -> np.ndarray:
        """Chart-local values of one coordinate, shaped to broadcast over the grid."""
        position, local = self.coordinate_owner[coordinate]
        nodes = self.grids[position].axis_nodes(key[position], local)
        shape = [1] * self.dimension
        shape[coordinate] = len(nodes)
        return nodes.reshape(shape)

    def coordinate_fields(self, key: Tuple) -> List[np.ndarray]:
        return [self.coordinate_field(c, key) for c in range(self.dimension)]

    def global_coordinate_fields(self, key: Tuple) -> List[np.ndarray]:
        """Coordinates expressed in the north-cap convention on every sphere factor."""
        fields = self.coordinate_fields(key)
        for position, factor in enumerate(self.factors):
            if isinstance(factor, Sphere2) and key[position] == "S":
                c = self.offsets[position]
                fields[c] = np.pi - fields[c]
                fields[c + 1] = -fields[c + 1]
        return fields

    def chart_sign(self, key: Tuple, index: Index) -> int:
        """Sign relating a north-convention component to the chart component."""
        sign = 1
        for position, factor in enumerate(self.factors):
            if isinstance(factor, Sphere2) and key[position] == "S":
                coords = self.factor_coordinates(position)
                sign *= (-1) ** sum(1 for i in index if i in coords)
        return sign

    def weights(self, key: Tuple, positions: Sequence[int]) -> np.ndarray:
        """Product quadrature weights of the given factors, broadcast over the grid."""
        total = np.ones([1] * self.dimension)
        for position in positions:
            axis_weights = self.grids[position].axis_weights(key[position])
            for local, w in enumerate(axis_weights):
                shape = [1] * self.dimension
                shape[self.offsets[position] + local] = len(w)
                total = total * w.reshape(shape)
        return total

    def derivative(self, values: np.ndarray, coordinate: int, key: Tuple, value_ndim: int = 0) -> np.ndarray:
        axis = self.axis(coordinate, value_ndim)
        if values.shape[axis] == 1:
            return np.zeros_like(values, dtype=complex)
        position, local = self.coordinate_owner[coordinate]
        return self.grids[position].derivative(values, key[position], local, axis)

    def sub_manifold(self, positions: Sequence[int]) -> "StructuredManifold":
        check_positions(self, positions)
        return StructuredManifold([self.factors[p] for p in positions], self.numerics)

    def basepoint_key(self) -> Tuple:
        return tuple(g.chart_keys[0] for g in self.grids)

    def circle_positions(self) -> List[int]:
        return [p for p, f in enumerate(self.factors) if isinstance(f, Circle)]

    def is_torus(self) -> bool:
        return bool(self.factors) and all(isinstance(f, Circle) for f in self.factors)

    def with_numerics(self, numerics: Numerics) -> "StructuredManifold":
        return StructuredManifold(self.factors, numerics)


def check_positions(manifold: StructuredManifold, positions: Sequence[int]) -> None:
    positions = list(positions)
    if positions != sorted(set(positions)) or any(p < 0 or p >= len(manifold.factors) for p in positions):
        raise FactorSubsetError(f"{positions} is not an increasing list of factor positions of {manifold.describe()}")


def product_manifold(first: StructuredManifold, second: StructuredManifold) -> StructuredManifold:
    if first.numerics != second.numerics:
        raise ManifoldMismatchError("product of manifolds sampled with different numerics")
    return StructuredManifold(first.factors + second.factors, first.numerics)


def reference_cycles(manifold: StructuredManifold) -> List[Tuple[int, ...]]:
    """All sub-products of closed factors through the basepoint (the point included)."""
    closed = [p for p, f in enumerate(manifold.factors) if f.closed]
    cycles: List[Tuple[int, ...]] = []
    for size in range(len(closed) + 1):
        cycles.extend(itertools.combinations(closed, size))
    return cycles


def cycle_name(manifold: StructuredManifold, cycle: Sequence[int]) -> str:
    if not cycle:
        return "pt"
    return manifold.sub_manifold(cycle).describe() + "@" + ",".join(str(p) for p in cycle)


# ---------------------------------------------------------------------------
# Component algebra
# ---------------------------------------------------------------------------

def merge_sign(first: Index, second: Index) -> Tuple[int, Index]:
    """Sign and sorted index of dx_first ∧ dx_second (sign 0 if they overlap)."""
    if set(first) & set(second):
        return 0, ()
    inversions = sum(1 for i in first for j in second if i > j)
    return (-1) ** inversions, tuple(sorted(first + second))


def multiply_values(a: np.ndarray, b: np.ndarray, va: int, vb: int) -> np.ndarray:
    if va == 0 and vb == 0:
        return a * b
    if va == 0:
        return a[..., None, None] * b
    if vb == 0:
        return a * b[..., None, None]
    return np.matmul(a, b)


def add_component(target: Components, index: Index, value: np.ndarray) -> None:
    if index in target:
        target[index] = target[index] + value
    else:
        target[index] = value


class FormField:
    """Chart-sampled (scalar or matrix-valued) differential form without u-bookkeeping.

    Arrays have shape grid (+ (r, r) for matrix values); grid axes of size 1
    broadcast along that coordinate.
    """

    def __init__(self, manifold: StructuredManifold, charts: Dict[Tuple, Components], value_ndim: int = 0):
        self.manifold = manifold
        self.value_ndim = value_ndim
        self.charts: Dict[Tuple, Components] = {key: dict(charts.get(key, {})) for key in manifold.chart_keys}

    def _new(self, charts: Dict[Tuple, Components], value_ndim: Optional[int] = None) -> "FormField":
        return FormField(self.manifold, charts, self.value_ndim if value_ndim is None else value_ndim)

    def components(self, key: Tuple) -> Components:
        return self.charts[key]

    def indices(self) -> List[Index]:
        found = set()
        for comps in self.charts.values():
            found.update(comps.keys())
        return sorted(found, key=lambda i: (len(i), i))

    def _combine(self, other: "FormField", sign: float) -> Dict[Tuple, Components]:
        self.manifold.require_same(other.manifold)
        charts: Dict[Tuple, Components] = {}
        for key in self.manifold.chart_keys:
            comps = dict(self.charts[key])
            for index, value in other.charts[key].items():
                add_component(comps, index, sign * value)
            charts[key] = comps
        return charts

    def add(self, other: "FormField") -> Dict[Tuple, Components]:
        return self._combine(other, 1.0)

    def subtract(self, other: "FormField") -> Dict[Tuple, Components]:
        return self._combine(other, -1.0)

    def scaled(self, factor: Union[complex, np.ndarray]) -> Dict[Tuple, Components]:
        return {key: {i: factor * v for i, v in comps.items()} for key, comps in self.charts.items()}

    def wedge_charts(self, other: "FormField") -> Dict[Tuple, Components]:
        self.manifold.require_same(other.manifold)
        charts: Dict[Tuple, Components] = {}
        for key in self.manifold.chart_keys:
            comps: Components = {}
            for i, a in self.charts[key].items():
                for j, b in other.charts[key].items():
                    sign, index = merge_sign(i, j)
                    if sign == 0 or len(index) > self.manifold.dimension:
                        continue
                    add_component(comps, index, sign * multiply_values(a, b, self.value_ndim, other.value_ndim))
            charts[key] = comps
        return charts

    def d_charts(self) -> Dict[Tuple, Components]:
        charts: Dict[Tuple, Components] = {}
        for key in self.manifold.chart_keys:
            comps: Components = {}
            for index, value in self.charts[key].items():
                for c in range(self.manifold.dimension):
                    if c in index:
                        continue
                    derivative = self.manifold.derivative(value, c, key, self.value_ndim)
                    sign = (-1) ** sum(1 for i in index if i < c)
                    add_component(comps, tuple(sorted(index + (c,))), sign * derivative)
            charts[key] = comps
        return charts

    def restrict_charts(self, keep: Sequence[int]) -> Tuple[StructuredManifold, Dict[Tuple, Components]]:
        """Restriction to the sub-product `keep` through the basepoint of the other factors."""
        m = self.manifold
        check_positions(m, keep)
        sub = m.sub_manifold(keep)
        kept_coords = m.positions_coordinates(keep)
        renumber = {c: k for k, c in enumerate(kept_coords)}
        base_key = m.basepoint_key()
        charts: Dict[Tuple, Components] = {key: {} for key in sub.chart_keys}
        for key in m.chart_keys:
            if any(key[p] != base_key[p] for p in range(len(m.factors)) if p not in keep):
                continue
            sub_key = tuple(key[p] for p in keep)
            for index, value in self.charts[key].items():
                if any(i not in renumber for i in index):
                    continue
                slicer = [slice(None)] * value.ndim
                for c in range(m.dimension):
                    if c not in renumber:
                        slicer[m.axis(c, self.value_ndim)] = 0
                charts[sub_key][tuple(renumber[i] for i in index)] = value[tuple(slicer)]
        return sub, charts

    def pullback_charts(self, total: StructuredManifold, positions: Sequence[int]) -> Dict[Tuple, Components]:
        """Pullback along the projection of `total` onto the factors at `positions`."""
        check_positions(total, positions)
        self.manifold.require_same(total.sub_manifold(positions))
        coords = total.positions_coordinates(positions)
        charts: Dict[Tuple, Components] = {}
        for key in total.chart_keys:
            sub_key = tuple(key[p] for p in positions)
            comps: Components = {}
            for index, value in self.charts[sub_key].items():
                grid = value.shape[value.ndim - self.value_ndim - self.manifold.dimension:value.ndim - self.value_ndim]
                value_shape = value.shape[value.ndim - self.value_ndim:]
                shape = [1] * total.dimension
                for k, c in enumerate(coords):
                    shape[c] = grid[k]
                comps[tuple(coords[i] for i in index)] = value.reshape(tuple(shape) + tuple(value_shape))
            charts[key] = comps
        return charts

    def max_abs(self) -> float:
        return max((float(np.max(np.abs(v))) if v.size else 0.0
                    for comps in self.charts.values() for v in comps.values()), default=0.0)

    def overlap_residual(self) -> float:
        """Largest mismatch of components across sphere-cap overlaps."""
        m = self.manifold
        worst = 0.0
        for position, grid in enumerate(m.grids):
            if not isinstance(grid, SphereGrid):
                continue
            north_idx, south_idx = grid.band_theta_indices()
            phi_map = grid.phi_map()
            theta_c = m.offsets[position]
            for key in m.chart_keys:
                if key[position] != "N":
                    continue
                partner = key[:position] + ("S",) + key[position + 1:]
                for index in set(self.charts[key]) | set(self.charts[partner]):
                    full = m.grid_shape(key)
                    value_shape = ()
                    north = self.charts[key].get(index)
                    south = self.charts[partner].get(index)
                    sample = north if north is not None else south
                    if self.value_ndim:
                        value_shape = sample.shape[-self.value_ndim:]
                    zeros = np.zeros(full + tuple(value_shape))
                    north = np.broadcast_to(north, full + tuple(value_shape)) if north is not None else zeros
                    south = np.broadcast_to(south, full + tuple(value_shape)) if south is not None else zeros
                    sign = (-1) ** sum(1 for i in index if i in (theta_c, theta_c + 1))
                    n_band = np.take(north, north_idx, axis=theta_c)
                    s_band = np.take(np.take(south, south_idx, axis=theta_c), phi_map, axis=theta_c + 1)
                    worst = max(worst, float(np.max(np.abs(n_band - sign * s_band))) if n_band.size else 0.0)
        return worst


# ---------------------------------------------------------------------------
# Graded forms
# ---------------------------------------------------------------------------

class GradedForm(FormField):
    """Scalar form with Laurent coefficients and a fixed total degree."""

    def __init__(self, manifold: StructuredManifold, total_degree: int,
                 charts: Optional[Dict[Tuple, Components]] = None):
        super().__init__(manifold, charts or {}, 0)
        self.total_degree = int(total_degree)
        for comps in self.charts.values():
            for index in list(comps):
                if len(index) > manifold.dimension:
                    raise DegreeError(f"form degree {len(index)} exceeds dimension {manifold.dimension}")
                if (self.total_degree - len(index)) % 2:
                    if np.any(comps[index] != 0):
                        raise DegreeError(
                            f"component dx{index} has odd u-degree in a total-degree-{self.total_degree} form")
                    del comps[index]

    # constructors ----------------------------------------------------------
    @classmethod
    def zero(cls, manifold: StructuredManifold, total_degree: int) -> "GradedForm":
        return cls(manifold, total_degree, {})

    @classmethod
    def constant(cls, manifold: StructuredManifold, total_degree: int, value: complex) -> "GradedForm":
        if total_degree % 2:
            raise DegreeError("a constant function needs even total degree")
        ones = np.full([1] * manifold.dimension, complex(value))
        return cls(manifold, total_degree, {key: {(): ones} for key in manifold.chart_keys})

    @classmethod
    def from_global(cls, manifold: StructuredManifold, total_degree: int,
                    terms: Dict[Index, Callable[[List[np.ndarray]], Any]]) -> "GradedForm":
        """Build from coefficient functions of north-convention coordinates.

        Each callable receives the list of coordinate fields (spheres in the
        north convention) and returns a broadcastable array or a scalar.
        """
        charts: Dict[Tuple, Components] = {}
        for key in manifold.chart_keys:
            coords = manifold.global_coordinate_fields(key)
            comps: Components = {}
            for index, function in terms.items():
                index = tuple(index)
                if tuple(sorted(set(index))) != index:
                    raise DegreeError(f"component index {index} must be strictly increasing")
                value = np.asarray(function(coords), dtype=complex)
                value = value.reshape(value.shape) if value.ndim == manifold.dimension else \
                    np.broadcast_to(value, [1] * manifold.dimension).copy()
                comps[index] = manifold.chart_sign(key, index) * value
            charts[key] = comps
        return cls(manifold, total_degree, charts)

    @classmethod
    def coordinate_differential(cls, manifold: StructuredManifold, coordinate: int,
                                scale: float = 1.0, total_degree: int = 1) -> "GradedForm":
        """scale · dx_coordinate (circle or interval coordinates)."""
        return cls.from_global(manifold, total_degree, {(coordinate,): lambda x: scale})

    # algebra ---------------------------------------------------------------
    def _graded(self, charts: Dict[Tuple, Components], total_degree: Optional[int] = None) -> "GradedForm":
        return GradedForm(self.manifold, self.total_degree if total_degree is None else total_degree, charts)

    def __add__(self, other: "GradedForm") -> "GradedForm":
        if other.total_degree != self.total_degree:
            raise DegreeError(f"cannot add total degrees {self.total_degree} and {other.total_degree}")
        return self._graded(self.add(other))

    def __sub__(self, other: "GradedForm") -> "GradedForm":
        if other.total_degree != self.total_degree:
            raise DegreeError(f"cannot subtract total degrees {self.total_degree} and {other.total_degree}")
        return self._graded(self.subtract(other))

    def __neg__(self) -> "GradedForm":
        return self._graded(self.scaled(-1.0))

    def scale(self, factor: complex) -> "GradedForm":
        return self._graded(self.scaled(factor))

    def times_u(self, k: int) -> "GradedForm":
        """Multiply by u^k."""
        return self._graded(self.charts, self.total_degree + 2 * k)

    def wedge(self, other: "GradedForm") -> "GradedForm":
        return wedge(self, other)

    def d(self) -> "GradedForm":
        return exterior_d(self)

    def u_power(self, index: Index) -> int:
        return (self.total_degree - len(index)) // 2

    def component_list(self) -> List[Tuple[int, int, Index, Tuple, np.ndarray]]:
        """(u_degree, form_degree, index, chart key, samples) for every stored component."""
        out = []
        for key, comps in self.charts.items():
            for index, value in comps.items():
                out.append((2 * self.u_power(index), len(index), index, key, value))
        return out

    def form_degree_part(self, degree: int) -> "GradedForm":
        charts = {key: {i: v for i, v in comps.items() if len(i) == degree} for key, comps in self.charts.items()}
        return self._graded(charts)

    def restrict(self, keep: Sequence[int]) -> "GradedForm":
        sub, charts = self.restrict_charts(keep)
        return GradedForm(sub, self.total_degree, charts)

    def pullback(self, total: StructuredManifold, positions: Sequence[int]) -> "GradedForm":
        return GradedForm(total, self.total_degree, self.pullback_charts(total, positions))

    def real_part(self, tolerance: float = 1e-9) -> "GradedForm":
        """Real form accessor; asserts the imaginary part is below `tolerance`."""
        charts: Dict[Tuple, Components] = {}
        for key, comps in self.charts.items():
            charts[key] = {}
            for index, value in comps.items():
                imag = float(np.max(np.abs(np.imag(value)))) if value.size else 0.0
                if imag > tolerance:
                    raise DegreeError(f"component dx{index} has imaginary part {imag:.3e}")
                charts[key][index] = np.real(value).astype(float)
        return self._graded(charts)

    def exp(self) -> "GradedForm":
        """exp of a total-degree-0 form, truncated at the manifold dimension."""
        if self.total_degree != 0:
            raise DegreeError("exp needs total degree 0")
        constant = {key: comps.get((), np.zeros([1] * self.manifold.dimension)) for key, comps in self.charts.items()}
        nilpotent = self._graded({key: {i: v for i, v in comps.items() if i} for key, comps in self.charts.items()})
        result = GradedForm.constant(self.manifold, 0, 1.0)
        term = GradedForm.constant(self.manifold, 0, 1.0)
        for k in range(1, self.manifold.dimension // 2 + 1):
            term = term.wedge(nilpotent).scale(1.0 / k)
            result = result + term
        return result._graded({key: {i: np.exp(constant[key]) * v for i, v in comps.items()}
                               for key, comps in result.charts.items()})

    def __repr__(self) -> str:
        return (f"GradedForm({self.manifold.describe()}, total_degree={self.total_degree}, "
                f"indices={self.indices()})")


def wedge(a: GradedForm, b: GradedForm) -> GradedForm:
    """a ∧ b; u is central so the sign uses form degrees only."""
    if not a.manifold.same_as(b.manifold):
        raise ManifoldMismatchError(f"wedge on {a.manifold.describe()} and {b.manifold.describe()}")
    return GradedForm(a.manifold, a.total_degree + b.total_degree, a.wedge_charts(b))


def exterior_d(a: GradedForm) -> GradedForm:
    """d on every chart; total degree rises by one."""
    return GradedForm(a.manifold, a.total_degree + 1, a.d_charts())


def r_u_map(a: GradedForm) -> GradedForm:
    """Scale every u^k component by (2πi)^k."""
    charts = {key: {i: (2j * np.pi) ** a.u_power(i) * v for i, v in comps.items()}
              for key, comps in a.charts.items()}
    return GradedForm(a.manifold, a.total_degree, charts)


def _top_integral(form: GradedForm, positions: Sequence[int], key: Tuple, value: np.ndarray) -> np.ndarray:
    m = form.manifold
    axes = [m.axis(c) for c in m.positions_coordinates(positions)]
    weighted = value * m.weights(key, positions)
    full = list(weighted.shape)
    for axis in axes:
        full[axis] = m.grid_shape(key)[axis]
    return tree_sum(np.broadcast_to(weighted, full), axes)


def integrate(a: Union[GradedForm, "DeltaCurrent"]) -> LaurentScalar:
    """Integral over a closed manifold; only top-degree components contribute."""
    if isinstance(a, DeltaCurrent):
        return integrate(a.smooth_part)
    m = a.manifold
    if not m.closed:
        raise NotClosedError(f"integration over non-closed {m.describe()}")
    top = tuple(range(m.dimension))
    if (a.total_degree - m.dimension) % 2:
        return LaurentScalar()
    total = 0.0
    positions = list(range(len(m.factors)))
    for key in m.chart_keys:
        value = a.charts[key].get(top)
        if value is None:
            continue
        total = total + complex(_top_integral(a, positions, key, value))
    return LaurentScalar.power(a.u_power(top), total)


def fiber_integrate(a: Union[GradedForm, "DeltaCurrent"], fiber_positions: Sequence[int],
                    allow_boundary: bool = False) -> GradedForm:
    """Integrate over the fiber factors (fiber-first convention)."""
    if isinstance(a, DeltaCurrent):
        return a.fiber_integrate(fiber_positions, allow_boundary)
    m = a.manifold
    fiber_positions = list(fiber_positions)
    check_positions(m, fiber_positions)
    if not allow_boundary and any(not m.factors[p].closed for p in fiber_positions):
        raise NotClosedError("fiber must be a closed sub-product")
    base_positions = [p for p in range(len(m.factors)) if p not in fiber_positions]
    base = m.sub_manifold(base_positions)
    fiber_coords = m.positions_coordinates(fiber_positions)
    base_coords = m.positions_coordinates(base_positions)
    renumber = {c: k for k, c in enumerate(base_coords)}
    charts: Dict[Tuple, Components] = {key: {} for key in base.chart_keys}
    for key in m.chart_keys:
        base_key = tuple(key[p] for p in base_positions)
        for index, value in a.charts[key].items():
            if not set(fiber_coords) <= set(index):
                continue
            rest = tuple(i for i in index if i not in fiber_coords)
            sign = (-1) ** sum(1 for b in rest for f in fiber_coords if b < f)
            integrated = _top_integral(a, fiber_positions, key, value)
            add_component(charts[base_key], tuple(renumber[i] for i in rest), sign * integrated)
    return GradedForm(base, a.total_degree - len(fiber_coords), charts)


def period(form: GradedForm, cycle: Sequence[int]) -> LaurentScalar:
    """Integral of `form` over the reference cycle through the basepoint."""
    return integrate(form.restrict(list(cycle)))


class DeltaCurrent:
    """smooth_part ∧ δ of the sub-product `support` (other factors at their basepoint).

    Convention: δ_S = δ(x_N) dx_N ∧ (smooth part), normal differentials first.
    """

    def __init__(self, ambient: StructuredManifold, support: Sequence[int], smooth_part: GradedForm):
        support = list(support)
        check_positions(ambient, support)
        smooth_part.manifold.require_same(ambient.sub_manifold(support))
        self.ambient = ambient
        self.support = support
        self.smooth_part = smooth_part
        self.codimension = ambient.dimension - smooth_part.manifold.dimension

    @property
    def total_degree(self) -> int:
        return self.smooth_part.total_degree + self.codimension

    def wedge_left(self, form: GradedForm) -> "DeltaCurrent":
        """form ∧ current; the form is restricted to the support."""
        form.manifold.require_same(self.ambient)
        restricted = form.restrict(self.support)
        sign = (-1) ** (form.total_degree * self.codimension)
        return DeltaCurrent(self.ambient, self.support, wedge(restricted, self.smooth_part).scale(sign))

    def fiber_integrate(self, fiber_positions: Sequence[int], allow_boundary: bool = False) -> GradedForm:
        fiber_positions = list(fiber_positions)
        check_positions(self.ambient, fiber_positions)
        base_positions = [p for p in range(len(self.ambient.factors)) if p not in fiber_positions]
        if not set(base_positions) <= set(self.support):
            raise FactorSubsetError("support of the current must contain all base factors")
        local = [self.support.index(p) for p in fiber_positions if p in self.support]
        return fiber_integrate(self.smooth_part, local, allow_boundary)
