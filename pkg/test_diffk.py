#!/usr/bin/env python3
"""
Tests for differential K-classes, relation rewrites, the homotopy formula
and suspension.
"""

import numpy as np
import pytest

from config import Numerics
from graded_core import (
    Circle, Sphere2, StructuredManifold, GradedForm, DegreeError, ManifoldMismatchError, fiber_integrate,
)
from bundles import flat_line, monopole, poincare, direct_sum, holonomy_at_basepoint, ConnectionPath
from charforms import phase_automorphism
from diffk import (
    DKClassEven, generator_class, odd_generator_class, j_map, omega_map, virtual_rank, product,
    rewrite_reconnect, rewrite_exact, rewrite_merge, rewrite_split, rewrite_decompose, rewrite_compose,
    homotopy_compare, suspend_odd, desuspend, observables, observable_residual, zero_class, unit_class,
    det_line, det_circle, winding_numbers, double_suspend, c_map, rewrite_odd_reconnect,
)
from selftest import perturbation_form, perturbed, circle_form

NUMERICS = Numerics(circle_points=32, sphere_order=24, sphere_phi_points=24, interval_order=16,
                    t_quadrature=16, simplex_quadrature=16, holonomy_steps=256)

S1 = StructuredManifold([Circle()], NUMERICS)
T2 = StructuredManifold([Circle(), Circle()], NUMERICS)
S2 = StructuredManifold([Sphere2()], NUMERICS)


def test_flat_line_observables():
    obs = observables(generator_class(flat_line(S1, [0.3])))
    assert obs.rank == 1
    (holonomy,) = obs.det_holonomies.values()
    assert abs(holonomy - np.exp(0.6j * np.pi)) < 1e-9


def test_class_arithmetic():
    x = generator_class(flat_line(S1, [0.3])) + generator_class(flat_line(S1, [0.1]), coefficient=2)
    assert virtual_rank(x) == 3
    assert observable_residual(x - x, zero_class(S1)) < 1e-12
    with pytest.raises(DegreeError):
        x + generator_class(flat_line(S1, [0.3]), degree=2)
    with pytest.raises(ManifoldMismatchError):
        x + unit_class(T2)


def test_even_class_needs_even_degree():
    with pytest.raises(DegreeError):
        DKClassEven(S1, 1)


def test_reconnect_keeps_observables():
    a = flat_line(S1, [0.25])
    x = generator_class(perturbed(a, perturbation_form(S1, 3)))
    assert observable_residual(rewrite_reconnect(x, 0, a), x) < 1e-7


def test_reconnect_on_sphere_keeps_periods():
    h = monopole(S2, 2)
    x = generator_class(perturbed(h, perturbation_form(S2, 1)), degree=2)
    assert observable_residual(rewrite_reconnect(x, 0, h), x) < 1e-7


def test_merge_and_split_keep_observables():
    a, b = flat_line(S1, [0.2]), flat_line(S1, [0.65])
    x = generator_class(a) + generator_class(b)
    merged = rewrite_merge(x, 0, 1)
    assert len(merged) == 1 and merged.generators[0].bundle.rank == 2
    assert observable_residual(merged, x) < 1e-7
    split = rewrite_split(merged, 0, a, b, circle_form(S1, -1, 0.05, 0.1))
    assert observable_residual(split, x) < 1e-7


def test_exact_rewrite_keeps_observables():
    x = generator_class(flat_line(S1, [0.4]), circle_form(S1, -1, 0.1))
    y = rewrite_exact(x, 0, circle_form(S1, -2, 0.0, 0.3))
    assert observable_residual(x, y) < 1e-9


def test_j_of_exact_form_has_zero_omega():
    beta = GradedForm.from_global(T2, -2, {(): lambda x: np.cos(2 * np.pi * x[0])})
    alpha = beta.d()
    assert omega_map(j_map(alpha)).max_abs() < 1e-9


def test_product_multiplies_holonomies():
    x = product(generator_class(flat_line(S1, [0.2])), generator_class(flat_line(S1, [0.45])))
    (holonomy,) = observables(x).det_holonomies.values()
    assert abs(holonomy - np.exp(1.3j * np.pi)) < 1e-9


def test_homotopy_formula_on_circle():
    path = ConnectionPath([flat_line(S1, [0.1]), flat_line(S1, [0.6])])
    _, integral, residual = homotopy_compare(path)
    assert residual < 1e-6
    assert integral.total_degree == -1


def test_homotopy_formula_on_torus():
    p = poincare(T2)
    path = ConnectionPath([p, perturbed(p, perturbation_form(T2, 2))])
    _, _, residual = homotopy_compare(path, degree=2)
    assert residual < 1e-6


def test_odd_class_winding_observable():
    bundle = flat_line(S1, [0.15])
    g = odd_generator_class(bundle, phase_automorphism(bundle, [3]))
    (winding,) = observables(g).det_windings.values()
    assert abs(winding - 3.0) < 1e-9


def test_decompose_and_compose_keep_observables():
    bundle = flat_line(S1, [0.15])
    first, second = phase_automorphism(bundle, [1]), phase_automorphism(bundle, [2])
    g = odd_generator_class(bundle, first.compose(second))
    split = rewrite_decompose(g, 0, first, second)
    assert len(split) == 2
    assert observable_residual(split, g) < 1e-7
    assert observable_residual(rewrite_compose(split, 0, 1), g) < 1e-7


def test_suspension_roundtrip():
    bundle = flat_line(S1, [0.35])
    g = odd_generator_class(bundle, phase_automorphism(bundle, [-1]), circle_form(S1, -2, 0.2))
    e = suspend_odd(g)
    assert e.degree == 0 and e.base.dimension == 2
    assert observable_residual(desuspend(e), g) < 1e-6


def test_suspension_with_long_circle():
    bundle = direct_sum(flat_line(S1, [0.1]), flat_line(S1, [0.7]))
    g = odd_generator_class(bundle, phase_automorphism(bundle, [[1], [-2]]))
    assert observable_residual(desuspend(suspend_odd(g, 2.0)), g) < 1e-6


def test_det_line_multiplies_holonomies():
    x = generator_class(flat_line(S1, [0.2])) + generator_class(flat_line(S1, [0.45]))
    line = det_line(x)
    assert line.rank == 1
    assert abs(holonomy_at_basepoint(line, 0)[0, 0] - np.exp(1.3j * np.pi)) < 1e-9


def test_det_circle_winds_with_automorphism():
    bundle = flat_line(S1, [0.15])
    g = odd_generator_class(bundle, phase_automorphism(bundle, [-2]))
    (winding,) = winding_numbers(det_circle(g)).values()
    assert abs(winding + 2.0) < 1e-9


def test_c_of_j_is_zero():
    alpha = GradedForm.from_global(T2, -1, {(0,): lambda x: 0.3 + 0.2 * np.sin(2 * np.pi * x[1])})
    shadow = c_map(j_map(alpha))
    assert shadow.rank == 0
    assert shadow.period_vector
    assert all(p.max_abs() < 1e-9 for p in shadow.period_vector.values())


def test_odd_reconnect_keeps_omega_pointwise():
    t3 = StructuredManifold([Circle(), Circle(), Circle()], NUMERICS.with_overrides(circle_points=8))
    flat = flat_line(t3, [0.1, 0.2, 0.3])
    bent = perturbed(flat, GradedForm.from_global(t3, 1, {(1,): lambda x: 0.2 * np.cos(2 * np.pi * x[0])}))
    u = phase_automorphism(flat, [0, 0, 1])
    x = odd_generator_class(bent, u)
    assert (omega_map(odd_generator_class(flat, u)) - omega_map(x)).max_abs() > 1e-3
    y = rewrite_odd_reconnect(x, 0, flat)
    assert y.generators[0].bundle is flat
    assert (omega_map(y) - omega_map(x)).max_abs() < 1e-6


def test_double_suspension_integrates_back():
    small = NUMERICS.with_overrides(circle_points=16, sphere_order=12, sphere_phi_points=12)
    sphere = StructuredManifold([Sphere2()], small)
    e = generator_class(monopole(sphere, 1), perturbation_form(sphere, 4), degree=2)
    s = double_suspend(e)
    assert s.degree == 4 and s.base.describe().count("S1") == 2
    (lifted,), (original,) = s.generators, e.generators
    assert (fiber_integrate(lifted.phi, [0, 1]) - original.phi).max_abs() < 1e-10
    assert (fiber_integrate(omega_map(s), [0, 1]) - omega_map(e)).max_abs() < 1e-6
