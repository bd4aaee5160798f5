#!/usr/bin/env python3
"""
Exactly solvable Dirac spectra on flat tori.

Circle: D = −i d/dx twisted by a flat line with holonomy e^{2πiθ} has
eigenvalues (2π/L)(n + θ), so η̄ = (η(0) + dim ker)/2 = ½ − θ mod 1 (½ at
θ = 0). The closed form is cross-checked by the Hurwitz zeta continuation
η(s) = (2π/L)^{−s}(ζ(s, θ) − ζ(s, 1 − θ)) and by regulated partial sums.
Flat T³ spectra are symmetric, so η̄ ≡ 0 there. Kernel dimensions on T² with
flux come from diagonalising a gauge-covariant lattice Laplacian on the bundle.
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Sequence, Any

import mpmath
import numpy as np

from config import config
from graded_core import (
    StructuredManifold, EtaValue, Circle, Sphere2, UnsupportedInputError,
    reduce_mod_one, integrate,
)
from bundles import BundleWithConnection, holonomy_at_basepoint

KERNEL_TOLERANCE = 1e-12


@dataclass(frozen=True)
class SpectralModel:
    """Twisted Dirac operator on a flat torus: holonomy offsets θ and an optional T² flux."""

    manifold: StructuredManifold
    twist: Tuple[float, ...] = ()
    flux: Optional[int] = None

    def __post_init__(self):
        if not self.manifold.is_torus():
            raise UnsupportedInputError(f"spectral models live on tori, got {self.manifold.describe()}")
        twist = tuple(self.twist) or (0.0,) * len(self.manifold.factors)
        if len(twist) != len(self.manifold.factors):
            raise UnsupportedInputError(f"twist {twist} does not match {self.manifold.describe()}")
        object.__setattr__(self, "twist", tuple(reduce_mod_one(t) for t in twist))
        if self.flux is not None and self.manifold.dimension != 2:
            raise UnsupportedInputError("flux sectors exist only on 2-tori")

    @property
    def kernel_free(self) -> bool:
        return any(min(t, 1.0 - t) > KERNEL_TOLERANCE for t in self.twist)


@dataclass(frozen=True)
class CircleSpectrum:
    """Eigenvalues spacing·(n + offset), n ∈ ℤ."""

    spacing: float
    offset: float

    def eigenvalue(self, n: int) -> float:
        return self.spacing * (n + self.offset)

    def eigenvalues(self, cutoff: int) -> np.ndarray:
        return self.spacing * (np.arange(-cutoff, cutoff + 1) + self.offset)

    @property
    def kernel_dim(self) -> int:
        return 1 if min(self.offset, 1.0 - self.offset) <= KERNEL_TOLERANCE else 0

    @property
    def lowest_abs(self) -> float:
        return self.spacing * min(self.offset, 1.0 - self.offset)


def _circle_length(model: SpectralModel) -> float:
    factors = model.manifold.factors
    if len(factors) != 1 or not isinstance(factors[0], Circle):
        raise UnsupportedInputError(f"expected a single circle, got {model.manifold.describe()}")
    return factors[0].circumference


def circle_spectrum(model: SpectralModel) -> CircleSpectrum:
    length = _circle_length(model)
    return CircleSpectrum(2.0 * math.pi / length, model.twist[0])


def closed_form_eta(theta: float) -> float:
    return reduce_mod_one(0.5 - reduce_mod_one(theta))


def eta_function(theta: float, s: complex, length: float = 1.0, digits: Optional[int] = None):
    """η(s) = (2π/L)^{−s} (ζ(s, θ) − ζ(s, 1 − θ)) with the zero mode removed at θ = 0."""
    digits = digits or config.get('spectral.zeta_digits', 30)
    theta = reduce_mod_one(theta)
    with mpmath.workdps(digits):
        scale = mpmath.power(2 * mpmath.pi / length, -s)
        if min(theta, 1.0 - theta) <= KERNEL_TOLERANCE:
            return scale * mpmath.mpf(0)
        a = mpmath.mpf(theta)
        return scale * (mpmath.zeta(s, a) - mpmath.zeta(s, 1 - a))


def zeta_oracle_eta(theta: float, digits: Optional[int] = None) -> float:
    """η̄ from the Hurwitz-zeta continuation evaluated at s = 0."""
    theta = reduce_mod_one(theta)
    kernel = 1 if min(theta, 1.0 - theta) <= KERNEL_TOLERANCE else 0
    eta0 = eta_function(theta, 0, digits=digits)
    return reduce_mod_one(0.5 * (float(mpmath.re(eta0)) + kernel))


def regulated_sign_sum(theta: float, start: float = 0.5, levels: int = 8) -> float:
    """η(0) = Σ sign(n + θ) over non-zero levels, by Σ sign(λ) e^{−s|λ|}, compensated sums and Richardson s → 0."""
    theta = reduce_mod_one(theta)
    kernel = min(theta, 1.0 - theta) <= KERNEL_TOLERANCE
    if kernel:
        theta = 0.0

    def regulated(s: float) -> float:
        terms = int(math.ceil(45.0 / s)) + 1
        n = np.arange(terms, dtype=float)
        positive = np.exp(-s * (n + theta))
        if kernel:
            positive = positive[1:]
        negative = np.exp(-s * (n + 1.0 - theta))
        return math.fsum(np.concatenate([positive, -negative]))

    table = [regulated(start / 2 ** k) for k in range(levels)]
    for order in range(1, levels):
        factor = 2.0 ** order
        table = [(factor * table[i + 1] - table[i]) / (factor - 1.0) for i in range(len(table) - 1)]
    return table[0]


def regulated_eta(theta: float, start: float = 0.5, levels: int = 8) -> float:
    """η̄ from the regulated sign sum plus the kernel."""
    theta = reduce_mod_one(theta)
    kernel = min(theta, 1.0 - theta) <= KERNEL_TOLERANCE
    return reduce_mod_one(0.5 * (regulated_sign_sum(theta, start, levels) + (1 if kernel else 0)))


def reduced_eta(model: SpectralModel, degree: int = 0) -> EtaValue:
    """η̄ of the twisted Dirac operator as an element of u^{(r − dim − 1)/2}·ℝ/ℤ."""
    m = model.manifold
    if m.dimension % 2 == 0:
        raise UnsupportedInputError(f"η̄ needs an odd-dimensional manifold, got {m.describe()}")
    if model.flux:
        raise UnsupportedInputError("flux twists are not product type")
    u_degree = (degree - m.dimension - 1) // 2
    if m.dimension == 1:
        return EtaValue(u_degree, closed_form_eta(model.twist[0]))
    # flat odd tori: symmetric spectrum; kernel 2^{(d-1)/2} at zero twist contributes an integer
    return EtaValue(u_degree, 0.0)


def separated_eta(fiber_index: int, base_eta: EtaValue) -> EtaValue:
    """η̄(Z×B) = ind(D^Z)·η̄(B) for even-dimensional Z (product spectrum).

    The fibre class is normalised to degree dim Z, so the u-degree is the base one.
    """
    return EtaValue(base_eta.u_degree, fiber_index * base_eta.value_mod_1)


def poisson_sign_kernel(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(1/π) Σ_k y/((k + x)² + y²) in closed form; its mean over x ∈ [0, 1) is sign(y)."""
    q = np.exp(-2.0 * math.pi * np.abs(y))
    return np.sign(y) * (1.0 - q ** 2) / (1.0 - 2.0 * q * np.cos(2.0 * math.pi * x) + q ** 2)


def suspension_eta_density(fiber: StructuredManifold, twists: Sequence[float], phase: np.ndarray,
                           slope: np.ndarray, length: float) -> Tuple[np.ndarray, int]:
    """Eta-form density on the base circle of S¹(length) × Z → S¹, twisted by e^{2πix(t)} along S¹(length).

    Every non-zero eigenvalue λ of D^Z adds −½ x′(t)·G(length·λ/2π, x(t)) with G the Poisson
    sign kernel. Returns the density in dt and dim ker D^Z; zero modes are left to the caller.
    """
    if not fiber.is_torus() or fiber.dimension % 2 == 0:
        raise UnsupportedInputError(f"suspension eta forms need an odd flat torus, got {fiber.describe()}")
    twists = [reduce_mod_one(t) for t in twists]
    at_kernel = all(min(t, 1.0 - t) <= KERNEL_TOLERANCE for t in twists)
    phase = np.asarray(phase, dtype=float)
    if fiber.dimension > 1:
        # ±|p| pairs cancel
        return np.zeros_like(phase), (2 ** ((fiber.dimension - 1) // 2) if at_kernel else 0)
    theta = 0.0 if at_kernel else twists[0]
    ratio = length / fiber.factors[0].circumference
    cutoff = int(math.ceil(7.0 / ratio)) + 2
    levels = np.arange(-cutoff, cutoff + 1) + theta
    y = ratio * levels[np.abs(levels) > KERNEL_TOLERANCE]
    tail = np.sum(poisson_sign_kernel(y[None, :], phase[:, None]) - np.sign(y)[None, :], axis=1)
    density = -0.5 * np.asarray(slope, dtype=float) * (regulated_sign_sum(theta) + tail)
    return density, (1 if at_kernel else 0)


# ---------------------------------------------------------------------------
# Flat bundles
# ---------------------------------------------------------------------------

def flat_twists(bundle: BundleWithConnection, tolerance: float = 1e-8) -> List[Tuple[int, Tuple[float, ...]]]:
    """(grading sign, holonomy offsets per circle) of each flat line summand."""
    m = bundle.base
    if not m.is_torus():
        raise UnsupportedInputError(f"flat twists need a torus base, got {m.describe()}")
    if bundle.rank == 0:
        return []
    if bundle.curvature.max_abs() > tolerance:
        raise UnsupportedInputError(f"{bundle.name} is not flat")
    holonomies = [holonomy_at_basepoint(bundle, p) for p in range(len(m.factors))]
    out: List[Tuple[int, Tuple[float, ...]]] = []
    for sign in (1, -1):
        slots = [i for i, s in enumerate(bundle.parity) if s == sign]
        if not slots:
            continue
        blocks = [h[np.ix_(slots, slots)] for h in holonomies]
        weights = [math.sqrt(p + 1.0) for p in range(len(blocks))]
        generic = sum(w * b for w, b in zip(weights, blocks))
        _, vectors = np.linalg.eig(generic)
        inverse = np.linalg.inv(vectors)
        diagonals = [np.diag(inverse @ b @ vectors) for b in blocks]
        for k in range(len(slots)):
            angles = tuple(reduce_mod_one(float(np.angle(d[k])) / (2 * math.pi)) for d in diagonals)
            out.append((sign, angles))
    return out


def spectral_eta(bundle: BundleWithConnection, spin_offset: Optional[float] = None) -> float:
    """Σ ± η̄ over the flat line summands of a bundle on S¹ or a flat odd torus (mod 1)."""
    spin_offset = config.get('spectral.spin_offset', 0.0) if spin_offset is None else spin_offset
    total = 0.0
    for sign, angles in flat_twists(bundle):
        model = SpectralModel(bundle.base, tuple(t + spin_offset for t in angles))
        total += sign * reduced_eta(model).value_mod_1
    return reduce_mod_one(total)


def eta_class(x, spin_offset: Optional[float] = None, provenance: Optional[Dict[str, Any]] = None) -> EtaValue:
    """η̄(X, 𝓔) = Σ n (u^{−(dim+1)/2} η̄(D^{X,E}) + ∫_X φ), Td = 1 on flat X."""
    m = x.base
    if not m.is_torus() or m.dimension % 2 == 0:
        raise UnsupportedInputError(f"eta_class needs an odd flat torus, got {m.describe()}")
    u_degree = (x.degree - m.dimension - 1) // 2
    if x.degree != 0 and provenance is not None:
        provenance.setdefault("warnings", []).append(f"η̄ bookkeeping in class degree {x.degree} uses u^{u_degree}")
    total = 0.0
    spectral_total = 0.0
    for g in x.generators:
        spectral = spectral_eta(g.bundle, spin_offset) if g.bundle.rank else 0.0
        form_part = integrate(g.phi).real(m.numerics.imaginary_tolerance).coefficient(u_degree)
        spectral_total += g.coefficient * spectral
        total += g.coefficient * (spectral + float(np.real(form_part)))
    if provenance is not None:
        provenance["spectral_part"] = reduce_mod_one(spectral_total)
        provenance["spin_offset"] = config.get('spectral.spin_offset', 0.0) if spin_offset is None else spin_offset
    return EtaValue(u_degree, total)


# ---------------------------------------------------------------------------
# Kernels on T² and S²
# ---------------------------------------------------------------------------

def torus_covariant_laplacian(model: SpectralModel, points: int) -> np.ndarray:
    """∇*∇ on the model's line bundle over T², gauge-covariant finite differences.

    Gauge A = B x dy with B = 2πn/(L₁L₂); the x-seam carries the transition e^{−iBL₁y}
    and flat twists spread evenly over the links. Every plaquette holds flux B·a₁a₂.
    """
    lengths = [f.circumference for f in model.manifold.factors]
    a1, a2 = lengths[0] / points, lengths[1] / points
    field = 2.0 * math.pi * (model.flux or 0) / (lengths[0] * lengths[1])
    j, k = np.meshgrid(np.arange(points), np.arange(points), indexing="ij")
    j, k = j.ravel(), k.ravel()
    here = j * points + k
    right = ((j + 1) % points) * points + k
    up = j * points + (k + 1) % points
    x_phase = 2.0 * math.pi * model.twist[0] / points - np.where(j == points - 1, field * lengths[0] * k * a2, 0.0)
    y_phase = 2.0 * math.pi * model.twist[1] / points + field * j * a1 * a2
    laplacian = np.zeros((points * points, points * points), dtype=complex)
    laplacian[here, here] = 2.0 / a1 ** 2 + 2.0 / a2 ** 2
    laplacian[here, right] -= np.exp(1j * x_phase) / a1 ** 2
    laplacian[right, here] -= np.exp(-1j * x_phase) / a1 ** 2
    laplacian[here, up] -= np.exp(1j * y_phase) / a2 ** 2
    laplacian[up, here] -= np.exp(-1j * y_phase) / a2 ** 2
    return laplacian


def count_zero_modes(eigenvalues: np.ndarray, gap: float, fraction: float) -> int:
    return int(np.sum(np.abs(eigenvalues) < fraction * gap))


def torus_kernel_dim(model: SpectralModel, points: Optional[int] = None,
                     fraction: Optional[float] = None) -> Tuple[int, int]:
    """(dim ker₊, dim ker₋) of the Dirac operator on T² twisted by the model's line bundle.

    With flux the chiral Laplacians are D∓D± = ∇*∇ ∓ B; both spectra come from one
    diagonalisation of the lattice ∇*∇ and zero modes are counted below a fraction of
    the Landau gap 2|B|.
    """
    m = model.manifold
    if m.dimension != 2:
        raise UnsupportedInputError(f"torus_kernel_dim needs a 2-torus, got {m.describe()}")
    if not model.flux:
        return (0, 0) if model.kernel_free else (1, 1)
    points = points or config.get('spectral.torus_lattice', 24)
    fraction = fraction or config.get('spectral.kernel_fraction', 0.5)
    if 16 * abs(model.flux) > points * points:
        raise UnsupportedInputError(f"flux {model.flux} is too large for a {points}×{points} lattice")
    area = m.factors[0].circumference * m.factors[1].circumference
    field = 2.0 * math.pi * model.flux / area
    spectrum = np.linalg.eigvalsh(torus_covariant_laplacian(model, points))
    gap = 2.0 * abs(field)
    plus = count_zero_modes(spectrum - field, gap, fraction)
    minus = count_zero_modes(spectrum + field, gap, fraction)
    return plus, minus


def sphere_kernel_dim(n: int, spin_c: bool = True) -> Tuple[int, int]:
    """Kernel of the Dirac operator on S² twisted by monopole(n).

    spin^c from the complex structure: holomorphic sections of O(n) and O(n)-cohomology.
    """
    if spin_c:
        return (n + 1, 0) if n >= -1 else (0, -n - 1)
    return (n, 0) if n >= 0 else (0, -n)


def line_index(fiber: StructuredManifold, flux: int, spin_c: bool = True) -> int:
    if len(fiber.factors) == 1 and isinstance(fiber.factors[0], Sphere2):
        plus, minus = sphere_kernel_dim(flux, spin_c)
    elif fiber.is_torus() and fiber.dimension == 2:
        plus, minus = torus_kernel_dim(SpectralModel(fiber, flux=flux))
    else:
        raise UnsupportedInputError(f"no Dirac kernel model on {fiber.describe()}")
    return plus - minus


def dirac_index(fiber: StructuredManifold, rank: int, flux: int, spin_c: bool = True) -> int:
    """Index for the K-class with given virtual rank and c₁-flux: rank·ind(1) + ind(L_flux) − ind(1)."""
    trivial = line_index(fiber, 0, spin_c)
    return rank * trivial + line_index(fiber, flux, spin_c) - trivial
