#!/usr/bin/env python3
"""
Tests for product-family index maps and the odd index over a point.
"""

import numpy as np
import pytest

from config import Numerics
from graded_core import (
    Circle, Sphere2, StructuredManifold, GradedForm, DeltaCurrent, UnsupportedInputError, circular_distance, integrate,
)
from bundles import flat_line, monopole, poincare, trivial_bundle
from charforms import phase_automorphism
from diffk import generator_class, odd_generator_class, observable_residual, double_suspend, virtual_rank
from spectral import closed_form_eta
from selftest import perturbation_form, circle_form
from index import (
    ProductFamily, fiber_todd, fiber_index, kunneth_normalization, verify_index_theorem, gauge_move, todd_pushforward,
    even_class_odd_fiber_index, suspension_pushforward, point_value,
)

NUMERICS = Numerics(circle_points=8, sphere_order=16, sphere_phi_points=16, interval_order=8,
                    t_quadrature=8, simplex_quadrature=8, holonomy_steps=128)

POINT = StructuredManifold((), NUMERICS)
S1 = StructuredManifold([Circle()], NUMERICS)
T2 = StructuredManifold([Circle(), Circle()], NUMERICS)
S2 = StructuredManifold([Sphere2()], NUMERICS)

CIRCLE_NUMERICS = NUMERICS.with_overrides(circle_points=32)


def test_todd_integrals():
    assert abs(integrate(fiber_todd(S2)).coefficient(-1) - 1.0) < 1e-9
    assert abs(integrate(fiber_todd(S2, spin_c=False)).coefficient(-1)) < 1e-9
    assert abs(integrate(fiber_todd(T2)).coefficient(-1)) < 1e-12


@pytest.mark.parametrize("n,spin_c,expected", [(2, True, 3), (-1, True, 0), (2, False, 2), (-3, False, -3)])
def test_sphere_fiber_index(n, spin_c, expected):
    family = ProductFamily("sphere", S2, POINT, spin_c=spin_c)
    rounded, raw, residual = fiber_index(generator_class(monopole(S2, n), degree=2), family)
    assert rounded == expected
    assert residual < 1e-6


def test_poincare_fiber_index():
    family = ProductFamily("torus", T2, POINT)
    rounded, _, residual = fiber_index(generator_class(poincare(T2), degree=2), family)
    assert rounded == 1 and residual < 1e-8


def test_kunneth_normalization():
    t1, t2, _ = kunneth_normalization(ProductFamily("sphere", S2, POINT))
    assert (t1, t2) == (1, 1)
    t1, t2, _ = kunneth_normalization(ProductFamily("torus", T2, POINT))
    assert (t1, t2) == (0, 1)


def test_odd_fiber_rejected():
    with pytest.raises(UnsupportedInputError):
        ProductFamily("circle", S1, POINT)


def test_index_theorem_sphere_over_circle():
    fiber_class = generator_class(monopole(S2, 1), degree=2)
    base_class = generator_class(flat_line(S1, [0.25]))
    report = verify_index_theorem(ProductFamily("h1", S2, S1, [(fiber_class, base_class)]), spin_offset=0.0)
    assert "error" not in report
    assert report["success"], report["residuals"]
    assert report["analytic"]["fiber_indices"] == [2]


def test_index_theorem_torus_with_form():
    total = StructuredManifold([Circle(), Circle(), Circle()], NUMERICS)
    phi = GradedForm.from_global(total, 1, {(0, 1, 2): lambda x: 0.25 + 0.1 * np.cos(2 * np.pi * x[0])})
    fiber_class = generator_class(poincare(T2), degree=2)
    base_class = generator_class(flat_line(S1, [0.7]))
    report = verify_index_theorem(ProductFamily("p", T2, S1, [(fiber_class, base_class)], phi), spin_offset=0.0)
    assert report["success"], report.get("residuals", report.get("error"))


def test_gauge_move_keeps_total_class():
    fiber_class = generator_class(monopole(S2, 1), degree=2)
    base_class = generator_class(flat_line(S1, [0.4]))
    family = ProductFamily("h1", S2, S1, [(fiber_class, base_class)])
    alpha = perturbation_form(S2, 3)
    moved = gauge_move(family, [alpha])
    assert observable_residual(moved.total_class(), family.total_class()) < 1e-8


def test_trivial_fiber_class_has_complex_index_one():
    family = ProductFamily("unit", S2, POINT)
    rounded, _, _ = fiber_index(generator_class(trivial_bundle(S2, 1), degree=2), family)
    assert rounded == 1


@pytest.mark.parametrize("theta", [0.15, 0.4])
def test_odd_index_reproduces_eta(theta):
    circle = StructuredManifold([Circle()], CIRCLE_NUMERICS)
    e = generator_class(flat_line(circle, [theta]))
    for circumference in (1.0, 2.0):
        report = {}
        g = even_class_odd_fiber_index(e, circumference, spin_offset=0.0, report=report)
        assert report["torus_index"] == 1
        assert report["pushforward"]["windings"] == [-1]
        assert report["pushforward"]["eta_form_max"] > 0.1
        assert circular_distance(point_value(g), closed_form_eta(theta)) < 1e-6


def test_odd_index_kernel_enters_as_point_current():
    circle = StructuredManifold([Circle()], CIRCLE_NUMERICS)
    e = generator_class(flat_line(circle, [0.0]))
    suspended = double_suspend(e)
    pushed = suspension_pushforward(suspended, e, spin_offset=0.0)
    assert pushed.eta_form_used.max_abs() < 1e-12
    assert len(pushed.currents) == 1
    assert pushed.report["kernel_weight"] == 0.5
    assert circular_distance(point_value(even_class_odd_fiber_index(e, spin_offset=0.0)), 0.5) < 1e-9


def test_odd_index_carries_form_part():
    circle = StructuredManifold([Circle()], CIRCLE_NUMERICS)
    phi = circle_form(circle, -1, 0.1, 0.2)
    e = generator_class(flat_line(circle, [0.3]), phi)
    report = {}
    value = point_value(even_class_odd_fiber_index(e, 1.5, spin_offset=0.0, report=report))
    assert circular_distance(value, closed_form_eta(0.3) + 0.1) < 1e-6
    assert report["separated_residual"] < 1e-6


def test_pushforward_of_double_suspension_is_pure_form():
    circle = StructuredManifold([Circle()], CIRCLE_NUMERICS)
    e = generator_class(flat_line(circle, [0.2]))
    pushed = suspension_pushforward(double_suspend(e), e, spin_offset=0.0)
    assert pushed.index_class.degree == 0
    assert pushed.index_class.base.describe() == "S1(1)"
    assert virtual_rank(pushed.index_class) == 0


def test_fiber_index_collects_rounding_warnings():
    strict = NUMERICS.with_overrides(assert_tolerance=1e-15)
    sphere = StructuredManifold([Sphere2()], strict)
    family = ProductFamily("sphere", sphere, StructuredManifold((), strict))
    warnings = []
    rounded, raw, residual = fiber_index(generator_class(monopole(sphere, 3), degree=2), family, warnings)
    assert rounded == 4
    assert (len(warnings) == 1) == (residual > 1e-15)


def test_point_value_needs_point():
    bundle = flat_line(S1, [0.1])
    with pytest.raises(UnsupportedInputError):
        point_value(odd_generator_class(bundle, phase_automorphism(bundle, [1])))


def test_todd_pushforward_of_current_at_sphere_basepoint():
    family = ProductFamily("sphere over circle", S2, S1)
    smooth = circle_form(S1, -1, 0.3, 0.2)
    pushed = todd_pushforward(DeltaCurrent(family.total, [1], smooth), family)
    assert pushed.total_degree == -1
    assert (pushed - circle_form(pushed.manifold, -1, 0.3, 0.2)).max_abs() < 1e-9
