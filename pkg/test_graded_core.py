#!/usr/bin/env python3
"""
Tests for the graded coefficient ring, manifolds and graded forms.
"""

import math

import numpy as np
import pytest

from config import Numerics
from graded_core import (
    LaurentScalar, EtaValue, Circle, Sphere2, Interval01, StructuredManifold, GradedForm,
    DegreeError, NotClosedError, FactorSubsetError, ManifoldMismatchError, DeltaCurrent,
    tree_sum, circular_distance, integrate, fiber_integrate, period,
    reference_cycles, product_manifold, r_u_map,
)

NUMERICS = Numerics(circle_points=32, sphere_order=24, sphere_phi_points=24, interval_order=16,
                    t_quadrature=16, simplex_quadrature=16, holonomy_steps=256)

S1 = StructuredManifold([Circle()], NUMERICS)
T2 = StructuredManifold([Circle(), Circle()], NUMERICS)
S2 = StructuredManifold([Sphere2()], NUMERICS)


def test_laurent_arithmetic():
    a = LaurentScalar.power(1, 2.0) + LaurentScalar.power(-1, 3.0)
    b = LaurentScalar.power(1, 1.0)
    assert (a * b).coefficient(2) == 2.0
    assert (a * b).coefficient(0) == 3.0
    assert (a - a).max_abs() == 0.0
    assert (2 * b).coefficient(1) == 2.0


def test_laurent_rejects_odd_degree():
    with pytest.raises(DegreeError):
        LaurentScalar({1: 1.0})


def test_laurent_lattice_residual():
    assert LaurentScalar.power(0, 3.0 + 1e-12).lattice_residual() < 1e-11
    assert abs(LaurentScalar.power(0, 2.25).lattice_residual() - 0.25) < 1e-15


def test_eta_value_reduces_mod_one():
    value = EtaValue(0, 1.25) + EtaValue(0, 0.9)
    assert abs(value.value_mod_1 - 0.15) < 1e-12
    assert EtaValue(0, -0.25).value_mod_1 == 0.75
    with pytest.raises(DegreeError):
        EtaValue(0, 0.1) + EtaValue(1, 0.1)


def test_circular_distance():
    assert abs(circular_distance(0.99, 0.01) - 0.02) < 1e-12
    assert circular_distance(0.3, 1.3) < 1e-12


def test_tree_sum_matches_numpy():
    values = np.arange(24.0).reshape(2, 3, 4)
    assert np.allclose(tree_sum(values, [1, 2]), values.sum(axis=(1, 2)))
    assert np.array_equal(tree_sum(values, []), values)


def test_circle_length_integral():
    circle = StructuredManifold([Circle(2.0)], NUMERICS)
    form = GradedForm.coordinate_differential(circle, 0, 1.5)
    assert abs(integrate(form).coefficient(0) - 3.0) < 1e-12


def test_sphere_area():
    area = GradedForm.from_global(S2, 2, {(0, 1): lambda x: np.sin(x[0])})
    assert abs(integrate(area).coefficient(0) - 4 * math.pi) < 1e-9


def test_integration_needs_closed_manifold():
    interval = StructuredManifold([Interval01()], NUMERICS)
    with pytest.raises(NotClosedError):
        integrate(GradedForm.coordinate_differential(interval, 0))


def test_d_squared_vanishes():
    f = GradedForm.from_global(S2, 0, {(): lambda x: np.cos(x[0]) + np.sin(x[0]) ** 2 * np.cos(x[1])})
    assert f.d().d().max_abs() < 1e-8
    g = GradedForm.from_global(T2, 0, {(): lambda x: np.sin(2 * np.pi * x[0]) * np.cos(2 * np.pi * x[1])})
    assert g.d().d().max_abs() < 1e-9


def test_stokes_on_torus():
    beta = GradedForm.from_global(T2, 1, {(0,): lambda x: np.cos(2 * np.pi * x[1]),
                                          (1,): lambda x: 0.3 + np.sin(2 * np.pi * x[0])})
    assert integrate(beta.d()).max_abs() < 1e-10


def test_wedge_sign():
    dx = GradedForm.coordinate_differential(T2, 0)
    dy = GradedForm.coordinate_differential(T2, 1)
    assert abs(integrate(dx.wedge(dy)).coefficient(0) - 1.0) < 1e-12
    assert abs(integrate(dy.wedge(dx)).coefficient(0) + 1.0) < 1e-12
    assert dx.wedge(dx).max_abs() == 0.0


def test_fiber_integration_is_fubini():
    form = GradedForm.from_global(T2, 2, {(0, 1): lambda x: 1.0 + np.cos(2 * np.pi * x[1])})
    pushed = fiber_integrate(form, [0])
    assert pushed.total_degree == 1
    assert abs(integrate(pushed).coefficient(0) - integrate(form).coefficient(0)) < 1e-12


def test_fiber_integration_rejects_bad_positions():
    form = GradedForm.zero(T2, 2)
    with pytest.raises(FactorSubsetError):
        fiber_integrate(form, [1, 0])


def test_period_restricts_to_basepoint():
    form = GradedForm.from_global(T2, 1, {(0,): lambda x: 0.5 + np.cos(2 * np.pi * x[1])})
    assert abs(period(form, [0]).coefficient(0) - 1.5) < 1e-12


def test_reference_cycles_of_torus():
    assert reference_cycles(T2) == [(), (0,), (1,), (0, 1)]


def test_product_needs_matching_numerics():
    other = StructuredManifold([Circle()], NUMERICS.with_overrides(circle_points=16))
    with pytest.raises(ManifoldMismatchError):
        product_manifold(S1, other)
    assert product_manifold(S2, S1).dimension == 3


def test_exp_of_nilpotent_form():
    top = GradedForm.from_global(T2, 0, {(0, 1): lambda x: 0.75})
    assert abs(integrate(top.exp()).coefficient(-1) - 0.75) < 1e-12


def test_odd_u_degree_component_rejected():
    with pytest.raises(DegreeError):
        GradedForm.from_global(T2, 0, {(0,): lambda x: 1.0})


def test_r_u_scales_by_two_pi_i():
    top = GradedForm.from_global(T2, 0, {(0, 1): lambda x: 1.0})
    assert abs(integrate(r_u_map(top)).coefficient(-1) - 1 / (2j * math.pi)) < 1e-12


def test_real_part_rejects_imaginary_values():
    form = GradedForm.constant(S1, 0, 1j)
    with pytest.raises(DegreeError):
        form.real_part()


def test_delta_current_on_torus_circle():
    density = {(0,): lambda x: 0.4 + 0.1 * np.cos(2 * np.pi * x[0])}
    smooth = GradedForm.from_global(S1, -1, density)
    current = DeltaCurrent(T2, [1], smooth)
    assert current.codimension == 1
    assert current.total_degree == 0
    along_normal = fiber_integrate(current, [0])
    assert (along_normal - GradedForm.from_global(along_normal.manifold, -1, density)).max_abs() < 1e-12
    total = fiber_integrate(current, [0, 1])
    assert total.total_degree == -2
    assert (total - GradedForm.constant(total.manifold, -2, 0.4)).max_abs() < 1e-9


def test_delta_current_support_must_contain_base():
    current = DeltaCurrent(T2, [1], GradedForm.constant(S1, 0, 1.0))
    with pytest.raises(FactorSubsetError):
        fiber_integrate(current, [1])


def test_delta_current_absorbs_forms_on_its_support():
    current = DeltaCurrent(T2, [1], GradedForm.coordinate_differential(S1, 0, 0.5, total_degree=-1))
    weighted = current.wedge_left(GradedForm.constant(T2, 0, 3.0))
    total = fiber_integrate(weighted, [0, 1])
    assert (total - GradedForm.constant(total.manifold, -2, 1.5)).max_abs() < 1e-9
