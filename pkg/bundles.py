#!/usr/bin/env python3
"""
Hermitian vector bundles with unitary connections on structured manifolds.

Frames are orthonormal, so a connection is a skew-Hermitian matrix-valued
1-form per chart. Circle factors may carry a seam: the potential is
A = A_per + (x/L)·J along that circle and the frames at x = L and x = 0 are
glued by g, with A(L) = g⁻¹A(0)g + g⁻¹dg. Sphere caps are glued by a
transition g (north coordinates) with A_S = g⁻¹A_N g + g⁻¹dg.
"""

import copy
from typing import Dict, List, Any, Optional, Tuple, Sequence

import numpy as np

from graded_core import (
    StructuredManifold, FormField, Circle, Sphere2, SphereGrid, Components,
    BundleMismatchError, UnsupportedInputError, FactorSubsetError,
    add_component, check_positions,
)

SKEW_TOLERANCE = 1e-9


# ---------------------------------------------------------------------------
# Matrix field helpers
# ---------------------------------------------------------------------------

def matrix_field(manifold: StructuredManifold, charts: Dict[Tuple, Components]) -> FormField:
    return FormField(manifold, charts, 2)


def identity_values(manifold: StructuredManifold, rank: int) -> np.ndarray:
    return np.broadcast_to(np.eye(rank, dtype=complex), (1,) * manifold.dimension + (rank, rank)).copy()


def kron_values(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    out = np.einsum('...ij,...kl->...ikjl', a, b)
    ra, rb = a.shape[-1], b.shape[-1]
    return np.broadcast_to(out, batch + (ra, rb, ra, rb)).reshape(batch + (ra * rb, ra * rb))


def block_values(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    ra, rb = a.shape[-1], b.shape[-1]
    out = np.zeros(batch + (ra + rb, ra + rb), dtype=complex)
    out[..., :ra, :ra] = a
    out[..., ra:, ra:] = b
    return out


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def map_field(field: FormField, function) -> FormField:
    charts = {key: {i: function(v) for i, v in comps.items()} for key, comps in field.charts.items()}
    return FormField(field.manifold, charts, field.value_ndim)


def zip_fields(first: FormField, second: FormField, function, fill_first, fill_second) -> FormField:
    """Combine two matrix fields componentwise; missing components use the fill values."""
    charts: Dict[Tuple, Components] = {}
    for key in first.manifold.chart_keys:
        a, b = first.charts[key], second.charts[key]
        charts[key] = {i: function(a.get(i, fill_first), b.get(i, fill_second)) for i in set(a) | set(b)}
    return FormField(first.manifold, charts, 2)


def zero_values(manifold: StructuredManifold, rank: int) -> np.ndarray:
    return np.zeros((1,) * manifold.dimension + (rank, rank), dtype=complex)


def scalar_one_form(manifold: StructuredManifold, coordinate: int, coefficient: float) -> FormField:
    ones = np.full((1,) * manifold.dimension, coefficient)
    return FormField(manifold, {key: {(coordinate,): ones} for key in manifold.chart_keys}, 0)


def trigonometric_evaluator(points: int, length: float, targets: np.ndarray) -> np.ndarray:
    """Matrix mapping uniform periodic samples to trigonometric-interpolant values at `targets`."""
    modes = np.fft.fftfreq(points, d=1.0 / points)
    phases = np.exp(2j * np.pi * np.outer(targets, modes) / length)
    if points % 2 == 0:
        phases[:, points // 2] = np.cos(np.pi * points * targets / length)
    return phases @ (np.fft.fft(np.eye(points), axis=0) / points)


def unitary_exp(omega: np.ndarray) -> np.ndarray:
    """exp of a batch of skew-Hermitian matrices through eigh of iΩ."""
    hermitian = 1j * omega
    hermitian = 0.5 * (hermitian + dagger(hermitian))
    eigenvalues, vectors = np.linalg.eigh(hermitian)
    return np.einsum('...ij,...j,...kj->...ik', vectors, np.exp(-1j * eigenvalues), np.conj(vectors))


# ---------------------------------------------------------------------------
# Bundles
# ---------------------------------------------------------------------------

class BundleWithConnection:
    """Rank-r Hermitian bundle with a unitary connection; immutable once built."""

    def __init__(self, base: StructuredManifold, rank: int,
                 potential: Optional[FormField] = None,
                 drifts: Optional[Dict[int, FormField]] = None,
                 seams: Optional[Dict[int, FormField]] = None,
                 sphere_transitions: Optional[Dict[int, FormField]] = None,
                 grading: Optional[Sequence[int]] = None,
                 name: str = "E"):
        if rank < 0:
            raise BundleMismatchError(f"rank must be non-negative, got {rank}")
        self.base = base
        self.rank = rank
        self.name = name
        self.potential = potential if potential is not None else matrix_field(base, {})
        self.drifts: Dict[int, FormField] = dict(drifts or {})
        self.seams: Dict[int, FormField] = dict(seams or {})
        self.sphere_transitions: Dict[int, FormField] = dict(sphere_transitions or {})
        parity = tuple(grading) if grading is not None else (1,) * rank
        if len(parity) != rank or any(s not in (1, -1) for s in parity):
            raise BundleMismatchError(f"grading {parity} does not match rank {rank}")
        self.parity = parity
        for position in set(self.drifts) | set(self.seams):
            if not isinstance(base.factors[position], Circle):
                raise UnsupportedInputError(f"seam on non-circle factor {position}")
        for position in self.sphere_transitions:
            if not isinstance(base.factors[position], Sphere2):
                raise UnsupportedInputError(f"cap transition on non-sphere factor {position}")
        self._check_skew()
        self.curvature = self._curvature()

    def renamed(self, name: str) -> "BundleWithConnection":
        clone = copy.copy(self)
        clone.name = name
        return clone

    @property
    def graded(self) -> bool:
        return any(s < 0 for s in self.parity)

    def grading_split(self) -> Tuple[int, int]:
        return sum(1 for s in self.parity if s > 0), sum(1 for s in self.parity if s < 0)

    def _check_skew(self) -> None:
        for field in [self.potential] + list(self.drifts.values()):
            for comps in field.charts.values():
                for index, value in comps.items():
                    if value.size and np.max(np.abs(value + dagger(value))) > SKEW_TOLERANCE * max(1.0, np.max(np.abs(value))):
                        raise UnsupportedInputError(f"potential component dx{index} of {self.name} is not skew-Hermitian")

    def potential_field(self) -> FormField:
        """Full potential A_per + Σ (x/L)·J on every chart."""
        m = self.base
        charts: Dict[Tuple, Components] = {}
        for key in m.chart_keys:
            comps = dict(self.potential.charts[key])
            for position, drift in self.drifts.items():
                c = m.offsets[position]
                ramp = m.coordinate_field(c, key)[..., None, None] / m.factors[position].circumference
                for index, value in drift.charts[key].items():
                    add_component(comps, index, ramp * value)
            charts[key] = comps
        return matrix_field(m, charts)

    def _curvature(self) -> FormField:
        m = self.base
        result = matrix_field(m, self.potential.d_charts())
        for position, drift in self.drifts.items():
            c = m.offsets[position]
            length = m.factors[position].circumference
            step = scalar_one_form(m, c, 1.0 / length).wedge_charts(drift)
            result = matrix_field(m, result.add(matrix_field(m, step)))
            ramp = {key: {i: m.coordinate_field(c, key)[..., None, None] / length * v
                          for i, v in comps.items()}
                    for key, comps in drift.d_charts().items()}
            result = matrix_field(m, result.add(matrix_field(m, ramp)))
        full = self.potential_field()
        return matrix_field(m, result.add(matrix_field(m, full.wedge_charts(full))))

    # checks ----------------------------------------------------------------
    def bianchi_residual(self) -> float:
        """max |dF − (F∧A − A∧F)|; meaningful when F is periodic on every chart."""
        full = self.potential_field()
        d_f = matrix_field(self.base, self.curvature.d_charts())
        commutator = matrix_field(self.base, matrix_field(self.base, self.curvature.wedge_charts(full))
                                  .subtract(matrix_field(self.base, full.wedge_charts(self.curvature))))
        return matrix_field(self.base, d_f.subtract(commutator)).max_abs()

    def overlap_curvature_residual(self) -> float:
        """max |F_S − g⁻¹F_N g| on the cap overlap bands."""
        return conjugation_residual(self, self.curvature)

    def same_underlying(self, other: "BundleWithConnection", tolerance: float = 1e-10) -> bool:
        """Same base, rank, grading and gluing data (connections may differ)."""
        if not self.base.same_as(other.base) or self.rank != other.rank or self.parity != other.parity:
            return False
        for mine, theirs in ((self.seams, other.seams), (self.sphere_transitions, other.sphere_transitions)):
            if set(mine) != set(theirs):
                return False
            for position in mine:
                if matrix_field(self.base, mine[position].subtract(theirs[position])).max_abs() > tolerance:
                    return False
        return True

    def describe(self) -> Dict[str, Any]:
        return {"name": self.name, "base": self.base.describe(), "rank": self.rank,
                "grading": list(self.grading_split()), "seams": sorted(self.seams),
                "sphere_transitions": sorted(self.sphere_transitions)}

    def __repr__(self) -> str:
        return f"BundleWithConnection({self.name}, rank={self.rank}, base={self.base.describe()})"


def conjugation_residual(bundle: "BundleWithConnection", field: FormField) -> float:
    """max |X_S − g⁻¹X_N g| of a matrix field across the cap overlap bands (north coordinates)."""
    m = bundle.base
    rank = bundle.rank
    worst = 0.0
    for position, grid in enumerate(m.grids):
        if not isinstance(grid, SphereGrid):
            continue
        north_idx, south_idx = grid.band_theta_indices()
        phi_map = grid.phi_map()
        theta_c = m.offsets[position]
        transitions = bundle.sphere_transitions.get(position)
        for key in m.chart_keys:
            if key[position] != "N":
                continue
            partner = key[:position] + ("S",) + key[position + 1:]
            full = m.grid_shape(key) + (rank, rank)
            g = identity_values(m, rank)
            if transitions is not None and () in transitions.charts[key]:
                g = transitions.charts[key][()]
            g = np.broadcast_to(g, full)
            for index in set(field.charts[key]) | set(field.charts[partner]):
                north = np.broadcast_to(field.charts[key].get(index, zero_values(m, rank)), full)
                south = np.broadcast_to(field.charts[partner].get(index, zero_values(m, rank)), full)
                sign = (-1) ** sum(1 for i in index if i in (theta_c, theta_c + 1))
                conj = dagger(g) @ north @ g
                n_band = np.take(conj, north_idx, axis=theta_c)
                s_band = np.take(np.take(south, south_idx, axis=theta_c), phi_map, axis=theta_c + 1)
                if n_band.size:
                    worst = max(worst, float(np.max(np.abs(n_band - sign * s_band))))
    return worst


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------

def trivial_bundle(base: StructuredManifold, rank: int, grading: Optional[Sequence[int]] = None,
                   name: Optional[str] = None) -> BundleWithConnection:
    return BundleWithConnection(base, rank, grading=grading, name=name or f"C^{rank}")


def zero_bundle(base: StructuredManifold) -> BundleWithConnection:
    return BundleWithConnection(base, 0, name="0")


def flat_line(base: StructuredManifold, holonomies: Sequence[float], name: Optional[str] = None) -> BundleWithConnection:
    """Flat line bundle on a torus with holonomy e^{2πiθ_j} around circle j."""
    if not base.is_torus():
        raise UnsupportedInputError(f"flat_line needs a torus base, got {base.describe()}")
    if len(holonomies) != len(base.factors):
        raise UnsupportedInputError(f"{len(holonomies)} holonomies for {len(base.factors)} circles")
    charts: Dict[Tuple, Components] = {}
    for key in base.chart_keys:
        comps: Components = {}
        for position, theta in enumerate(holonomies):
            if theta:
                length = base.factors[position].circumference
                value = 2j * np.pi * float(theta) / length
                comps[(base.offsets[position],)] = np.full((1,) * base.dimension + (1, 1), value)
        charts[key] = comps
    return BundleWithConnection(base, 1, matrix_field(base, charts),
                                name=name or "flat(" + ",".join(f"{t:g}" for t in holonomies) + ")")


def monopole(base: StructuredManifold, n: int, name: Optional[str] = None) -> BundleWithConnection:
    """Degree-n line bundle on a single 2-sphere; ∫c₁ = n."""
    if len(base.factors) != 1 or not isinstance(base.factors[0], Sphere2):
        raise UnsupportedInputError(f"monopole needs a single 2-sphere base, got {base.describe()}")
    grid = base.grids[0]
    charts: Dict[Tuple, Components] = {}
    for key in base.chart_keys:
        theta = grid.theta.reshape(-1, 1, 1, 1)
        charts[key] = {(1,): -0.5j * n * (1.0 - np.cos(theta))} if n else {}
    phi = grid.phi.reshape(1, -1, 1, 1)
    transition = matrix_field(base, {("N",): {(): np.exp(1j * n * phi)}, ("S",): {}})
    return BundleWithConnection(base, 1, matrix_field(base, charts), sphere_transitions={0: transition},
                                name=name or f"O({n})")


def poincare(base: StructuredManifold, name: str = "P") -> BundleWithConnection:
    """Flux-one line bundle on a 2-torus from the potential −2πi (x₁/L₁) dx₂/L₂."""
    if not base.is_torus() or len(base.factors) != 2:
        raise UnsupportedInputError(f"poincare needs a 2-torus base, got {base.describe()}")
    l1, l2 = base.factors[0].circumference, base.factors[1].circumference
    ones = (1,) * base.dimension + (1, 1)
    drift = matrix_field(base, {key: {(1,): np.full(ones, -2j * np.pi / l2)} for key in base.chart_keys})
    x2 = base.coordinate_field(1, base.chart_keys[0])[..., None, None]
    seam = matrix_field(base, {key: {(): np.exp(-2j * np.pi * x2 / l2)} for key in base.chart_keys})
    return BundleWithConnection(base, 1, drifts={0: drift}, seams={0: seam}, name=name)


def tangent_curvature(manifold: StructuredManifold) -> FormField:
    """Levi-Civita curvature in orthonormal frames: round S² blocks, zero on flat factors."""
    dim = manifold.dimension
    charts: Dict[Tuple, Components] = {key: {} for key in manifold.chart_keys}
    for position, grid in enumerate(manifold.grids):
        if not isinstance(grid, SphereGrid):
            continue
        c = manifold.offsets[position]
        for key in manifold.chart_keys:
            shape = [1] * dim
            shape[c] = grid.order
            block = np.zeros(tuple(shape) + (dim, dim))
            sin = np.sin(grid.theta).reshape(shape)
            block[..., c, c + 1] = -sin
            block[..., c + 1, c] = sin
            add_component(charts[key], (c, c + 1), block)
    return FormField(manifold, charts, 2)


# ---------------------------------------------------------------------------
# Bundle algebra
# ---------------------------------------------------------------------------

def _require_same_base(a: BundleWithConnection, b: BundleWithConnection) -> None:
    if not a.base.same_as(b.base):
        raise BundleMismatchError(f"bundles on {a.base.describe()} and {b.base.describe()}")


def _merged_gluing(a, b, attribute: str, combine) -> Dict[int, FormField]:
    first, second = getattr(a, attribute), getattr(b, attribute)
    out: Dict[int, FormField] = {}
    for position in set(first) | set(second):
        ident_a = identity_values(a.base, a.rank)
        ident_b = identity_values(b.base, b.rank)
        ga = first.get(position)
        gb = second.get(position)
        charts: Dict[Tuple, Components] = {}
        for key in a.base.chart_keys:
            va = ga.charts[key].get(()) if ga is not None else None
            vb = gb.charts[key].get(()) if gb is not None else None
            if va is None and vb is None:
                if attribute == "sphere_transitions" and key[position] != "N":
                    charts[key] = {}
                    continue
            va = ident_a if va is None else va
            vb = ident_b if vb is None else vb
            charts[key] = {(): combine(va, vb)}
        out[position] = matrix_field(a.base, charts)
    return out


def tensor(a: BundleWithConnection, b: BundleWithConnection) -> BundleWithConnection:
    """a ⊗ b with the connection ∇ᵃ⊗I + I⊗∇ᵇ."""
    _require_same_base(a, b)
    ia, ib = np.eye(a.rank), np.eye(b.rank)

    def induced(fa: FormField, fb: FormField) -> FormField:
        return zip_fields(fa, fb, lambda x, y: kron_values(x, ib) + kron_values(ia, y),
                          zero_values(a.base, a.rank), zero_values(b.base, b.rank))

    empty = matrix_field(a.base, {})
    drifts = {p: induced(a.drifts.get(p, empty), b.drifts.get(p, empty)) for p in set(a.drifts) | set(b.drifts)}
    parity = tuple(sa * sb for sa in a.parity for sb in b.parity)
    return BundleWithConnection(
        a.base, a.rank * b.rank, induced(a.potential, b.potential), drifts,
        _merged_gluing(a, b, "seams", kron_values),
        _merged_gluing(a, b, "sphere_transitions", kron_values),
        parity, name=f"{a.name}⊗{b.name}")


def direct_sum(a: BundleWithConnection, b: BundleWithConnection) -> BundleWithConnection:
    _require_same_base(a, b)

    def induced(fa: FormField, fb: FormField) -> FormField:
        return zip_fields(fa, fb, block_values, zero_values(a.base, a.rank), zero_values(b.base, b.rank))

    empty = matrix_field(a.base, {})
    drifts = {p: induced(a.drifts.get(p, empty), b.drifts.get(p, empty)) for p in set(a.drifts) | set(b.drifts)}
    return BundleWithConnection(
        a.base, a.rank + b.rank, induced(a.potential, b.potential), drifts,
        _merged_gluing(a, b, "seams", block_values),
        _merged_gluing(a, b, "sphere_transitions", block_values),
        a.parity + b.parity, name=f"{a.name}⊕{b.name}")


def dual(a: BundleWithConnection) -> BundleWithConnection:
    """Dual bundle; in orthonormal frames A ↦ −Aᵀ = conj(A)."""
    return BundleWithConnection(
        a.base, a.rank, map_field(a.potential, np.conj),
        {p: map_field(f, np.conj) for p, f in a.drifts.items()},
        {p: map_field(f, np.conj) for p, f in a.seams.items()},
        {p: map_field(f, np.conj) for p, f in a.sphere_transitions.items()},
        a.parity, name=f"{a.name}*")


def regrade(a: BundleWithConnection, parity: Sequence[int]) -> BundleWithConnection:
    return BundleWithConnection(a.base, a.rank, a.potential, a.drifts, a.seams, a.sphere_transitions,
                                parity, name=a.name)


def pullback(a: BundleWithConnection, total: StructuredManifold, positions: Sequence[int]) -> BundleWithConnection:
    """Pullback along the projection of `total` onto the factors at `positions`."""
    positions = list(positions)
    check_positions(total, positions)
    if not a.base.same_as(total.sub_manifold(positions)):
        raise FactorSubsetError(f"{a.base.describe()} is not the factor {positions} of {total.describe()}")

    def lift(field: FormField) -> FormField:
        return matrix_field(total, field.pullback_charts(total, positions))

    return BundleWithConnection(
        total, a.rank, lift(a.potential),
        {positions[p]: lift(f) for p, f in a.drifts.items()},
        {positions[p]: lift(f) for p, f in a.seams.items()},
        {positions[p]: lift(f) for p, f in a.sphere_transitions.items()},
        a.parity, name=a.name)


def restrict(a: BundleWithConnection, keep: Sequence[int]) -> BundleWithConnection:
    """Restriction to the sub-product `keep` through the basepoint of the other factors.

    Dropped circles sit at x = 0, where their seam ramps vanish.
    """
    keep = list(keep)

    def cut(field: FormField) -> FormField:
        sub, charts = field.restrict_charts(keep)
        return matrix_field(sub, charts)

    return BundleWithConnection(
        a.base.sub_manifold(keep), a.rank, cut(a.potential),
        {keep.index(p): cut(f) for p, f in a.drifts.items() if p in keep},
        {keep.index(p): cut(f) for p, f in a.seams.items() if p in keep},
        {keep.index(p): cut(f) for p, f in a.sphere_transitions.items() if p in keep},
        a.parity, name=a.name)


# ---------------------------------------------------------------------------
# Holonomy
# ---------------------------------------------------------------------------

def _axis_component(bundle: BundleWithConnection, key: Tuple, coordinate: int, skip_drift: int) -> np.ndarray:
    """A_c on one chart with every seam ramp except the one along `skip_drift`."""
    m = bundle.base
    value = bundle.potential.charts[key].get((coordinate,), zero_values(m, bundle.rank))
    for position, drift in bundle.drifts.items():
        if position == skip_drift:
            continue
        part = drift.charts[key].get((coordinate,))
        if part is not None:
            c = m.offsets[position]
            value = value + m.coordinate_field(c, key)[..., None, None] / m.factors[position].circumference * part
    return value


def holonomy(bundle: BundleWithConnection, position: int, steps: Optional[int] = None) -> Dict[Tuple, np.ndarray]:
    """Holonomy T(L)·g⁻¹ around circle `position` (dT/dx = T·A_x), batched over the other factors.

    Returns chart key -> array of shape grid + (r, r), size 1 along the circle axis.
    """
    m = bundle.base
    if not isinstance(m.factors[position], Circle):
        raise UnsupportedInputError(f"factor {position} of {m.describe()} is not a circle")
    steps = steps or m.numerics.holonomy_steps
    c = m.offsets[position]
    length = m.factors[position].circumference
    axis = m.axis(c, 2)
    points = m.grids[position].points
    rank = bundle.rank
    drift = bundle.drifts.get(position)
    seam = bundle.seams.get(position)
    result: Dict[Tuple, np.ndarray] = {}
    for key in m.chart_keys:
        periodic = _axis_component(bundle, key, c, position)
        ramp = drift.charts[key].get((c,)) if drift is not None else None
        glue = seam.charts[key][()] if seam is not None else None
        shapes = [periodic.shape] + [v.shape for v in (ramp, glue) if v is not None]
        other_shape = list(np.broadcast_shapes(*shapes))
        other_shape[axis] = 1
        other_shape = tuple(other_shape)
        if rank == 0:
            result[key] = np.zeros(other_shape, dtype=complex)
            continue
        if rank == 1:
            sampled = list(periodic.shape)
            sampled[axis] = points
            total = np.sum(np.broadcast_to(periodic, tuple(sampled)), axis=axis, keepdims=True) * (length / points)
            if ramp is not None:
                total = total + 0.5 * length * ramp
            transport = np.exp(total)
        else:
            transport = _magnus_transport(periodic, ramp, axis, length, points, steps, other_shape, rank)
        transport = np.broadcast_to(transport, other_shape)
        if glue is not None:
            transport = transport @ dagger(np.broadcast_to(glue, other_shape))
        result[key] = np.array(transport)
    return result


def _magnus_transport(periodic: np.ndarray, ramp: Optional[np.ndarray], axis: int, length: float,
                      points: int, steps: int, other_shape: Tuple[int, ...], rank: int) -> np.ndarray:
    """Fourth-order Magnus integration of dT/dx = T·A_x in chunks of steps."""
    h = length / steps
    offsets = np.array([0.5 - np.sqrt(3.0) / 6.0, 0.5 + np.sqrt(3.0) / 6.0])
    transport = np.broadcast_to(np.eye(rank, dtype=complex), other_shape).copy()
    samples = np.moveaxis(periodic, axis, 0)
    chunk = 64
    for start in range(0, steps, chunk):
        count = min(chunk, steps - start)
        left = (start + np.arange(count)) * h
        targets = (left[:, None] + h * offsets[None, :]).reshape(-1)
        if samples.shape[0] == 1:
            values = np.broadcast_to(samples, (len(targets),) + samples.shape[1:])
        else:
            evaluator = trigonometric_evaluator(points, length, targets)
            values = np.einsum('mj,j...->m...', evaluator, samples)
        if ramp is not None:
            ramp_moved = np.moveaxis(ramp, axis, 0)
            values = values + (targets / length).reshape((-1,) + (1,) * (values.ndim - 1)) * ramp_moved
        values = np.moveaxis(values, 0, axis)
        for k in range(count):
            a1 = np.take(values, [2 * k], axis=axis)
            a2 = np.take(values, [2 * k + 1], axis=axis)
            omega = 0.5 * h * (a1 + a2) + (np.sqrt(3.0) / 12.0) * h * h * (a1 @ a2 - a2 @ a1)
            transport = transport @ unitary_exp(np.broadcast_to(omega, other_shape))
    return transport


def holonomy_at_basepoint(bundle: BundleWithConnection, position: int) -> np.ndarray:
    """(r, r) holonomy around circle `position` through the basepoint."""
    batched = holonomy(bundle, position)
    value = batched[bundle.base.basepoint_key()]
    return value.reshape(-1, bundle.rank, bundle.rank)[0]


# ---------------------------------------------------------------------------
# Connection paths
# ---------------------------------------------------------------------------

class ConnectionPath:
    """Affine family of connections on one underlying bundle (segment or 2-simplex)."""

    def __init__(self, vertices: Sequence[BundleWithConnection]):
        self.vertices = list(vertices)
        if len(self.vertices) not in (2, 3):
            raise BundleMismatchError("a connection path has 2 (segment) or 3 (simplex) vertices")
        first = self.vertices[0]
        for vertex in self.vertices[1:]:
            if not first.same_underlying(vertex):
                raise BundleMismatchError(f"{vertex.name} is not a connection on the bundle of {first.name}")
        self.base = first.base
        self.rank = first.rank

    @property
    def simplex_dimension(self) -> int:
        return len(self.vertices) - 1

    def evaluate(self, weights: Sequence[float]) -> BundleWithConnection:
        """Connection Σ λ_i ∇_i for barycentric weights λ."""
        if len(weights) != len(self.vertices):
            raise BundleMismatchError(f"{len(weights)} weights for {len(self.vertices)} vertices")
        m = self.base
        first = self.vertices[0]

        def combine(fields: List[FormField]) -> FormField:
            charts: Dict[Tuple, Components] = {key: {} for key in m.chart_keys}
            for weight, field in zip(weights, fields):
                for key, comps in field.charts.items():
                    for index, value in comps.items():
                        add_component(charts[key], index, weight * value)
            return matrix_field(m, charts)

        empty = matrix_field(m, {})
        positions = set().union(*(v.drifts for v in self.vertices))
        drifts = {p: combine([v.drifts.get(p, empty) for v in self.vertices]) for p in positions}
        return BundleWithConnection(m, self.rank, combine([v.potential for v in self.vertices]), drifts,
                                    first.seams, first.sphere_transitions, first.parity, name=first.name)

    def at(self, *parameters: float) -> BundleWithConnection:
        """Segment: at(t) = (1−t)∇₀ + t∇₁. Simplex: at(t₁, t₂) = (1−t₁−t₂)∇₀ + t₁∇₁ + t₂∇₂."""
        if len(parameters) != self.simplex_dimension:
            raise BundleMismatchError(f"{len(parameters)} parameters for a {self.simplex_dimension}-simplex")
        return self.evaluate([1.0 - sum(parameters)] + list(parameters))

    def velocities(self) -> List[FormField]:
        """∂A/∂t_i = A_i − A_0 (full potentials)."""
        base_potential = self.vertices[0].potential_field()
        return [matrix_field(self.base, v.potential_field().subtract(base_potential)) for v in self.vertices[1:]]
