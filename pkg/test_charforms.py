#!/usr/bin/env python3
"""
Tests for Chern character, Chern-Simons and automorphism forms.
"""

import numpy as np
import pytest

from config import Numerics
from graded_core import (
    Circle, Sphere2, StructuredManifold, BundleMismatchError, DegreeError, UnsupportedInputError, integrate,
)
from bundles import flat_line, monopole, poincare, direct_sum, regrade, trivial_bundle, tensor, pullback, map_field
from charforms import (
    chern_form, c1_form, cs_two, cs_three, cs_aut, odd_chern_form, a_hat_form, pontryagin_form,
    phase_automorphism, constant_automorphism, closedness_residual,
)
from selftest import perturbation_form, perturbed

NUMERICS = Numerics(circle_points=32, sphere_order=24, sphere_phi_points=24, interval_order=16,
                    t_quadrature=16, simplex_quadrature=16, holonomy_steps=256)

S1 = StructuredManifold([Circle()], NUMERICS)
T2 = StructuredManifold([Circle(), Circle()], NUMERICS)
S2 = StructuredManifold([Sphere2()], NUMERICS)


@pytest.mark.parametrize("n", [-2, 0, 1, 3])
def test_monopole_flux(n):
    assert abs(integrate(c1_form(monopole(S2, n))).coefficient(-1) - n) < 1e-8


def test_poincare_flux():
    assert abs(integrate(c1_form(poincare(T2))).coefficient(-1) - 1.0) < 1e-9


def test_chern_form_degree_shift():
    bundle = monopole(S2, 2)
    assert abs(integrate(chern_form(bundle)).coefficient(-1) - 2.0) < 1e-8
    assert abs(integrate(chern_form(bundle, 2)).coefficient(0) - 2.0) < 1e-8
    with pytest.raises(DegreeError):
        chern_form(bundle, 1)


def test_graded_bundle_uses_supertrace():
    bundle = regrade(direct_sum(monopole(S2, 1), monopole(S2, 3)), [1, -1])
    omega = chern_form(bundle)
    assert abs(integrate(omega).coefficient(-1) + 2.0) < 1e-8
    assert np.max(np.abs(omega.charts[("N",)][()])) < 1e-12


def test_chern_form_is_closed():
    assert closedness_residual(chern_form(perturbed(poincare(T2), perturbation_form(T2, 4)))) < 1e-8


@pytest.mark.parametrize("t0,t1", [(0.1, 0.35), (0.8, 0.05)])
def test_circle_transgression(t0, t1):
    cs = cs_two(flat_line(S1, [t0]), flat_line(S1, [t1]))
    assert cs.total_degree == -1
    assert abs(integrate(cs).coefficient(-1) - (t1 - t0)) < 1e-9


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_cs_cocycle_on_torus(seed):
    first = poincare(T2)
    second = perturbed(first, perturbation_form(T2, seed))
    cs = cs_two(first, second)
    target = chern_form(first) - chern_form(second)
    assert (cs.d() - target).max_abs() < 1e-6


def test_cs_cocycle_on_sphere():
    first = monopole(S2, 1)
    second = perturbed(first, perturbation_form(S2, 7))
    cs = cs_two(first, second)
    assert (cs.d() - (chern_form(first) - chern_form(second))).max_abs() < 1e-6


def test_odd_chern_form_counts_winding():
    bundle = flat_line(S1, [0.2])
    up = integrate(odd_chern_form(bundle, phase_automorphism(bundle, [2]))).coefficient(-1)
    down = integrate(odd_chern_form(bundle, phase_automorphism(bundle, [-2]))).coefficient(-1)
    assert abs(abs(up) - 2.0) < 1e-8
    assert abs(up + down) < 1e-8


def test_constant_automorphism_has_zero_odd_form():
    bundle = trivial_bundle(S1, 2)
    rotation = constant_automorphism(bundle, np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert odd_chern_form(bundle, rotation).max_abs() < 1e-12


def test_non_unitary_automorphism_rejected():
    with pytest.raises(UnsupportedInputError):
        constant_automorphism(trivial_bundle(S1, 1), np.array([[2.0]]))


def test_cs_aut_transgresses_composition():
    bundle = flat_line(S1, [0.3])
    first, second = phase_automorphism(bundle, [1]), phase_automorphism(bundle, [2])
    cs = cs_aut(bundle, first, second)
    target = (odd_chern_form(bundle, first.compose(second)) - odd_chern_form(bundle, first)
              - odd_chern_form(bundle, second))
    assert (cs.d() - target).max_abs() < 1e-6


def test_a_hat_has_no_top_part_on_torus():
    form = a_hat_form(trivial_bundle(T2, 2).curvature)
    assert abs(integrate(form).coefficient(-1)) < 1e-12


def realified(values):
    """Curvature iF of a line bundle as the so(2) block [[0, -F], [F, 0]]."""
    f = values.imag[..., 0, 0]
    out = np.zeros(values.shape[:-2] + (2, 2))
    out[..., 0, 1] = -f
    out[..., 1, 0] = f
    return out


def sphere_product_line(n, m):
    small = NUMERICS.with_overrides(sphere_order=12, sphere_phi_points=12)
    product = StructuredManifold([Sphere2(), Sphere2()], small)
    first = pullback(monopole(StructuredManifold([Sphere2()], small), n), product, [0])
    second = pullback(monopole(StructuredManifold([Sphere2()], small), m), product, [1])
    return tensor(first, second)


def test_pontryagin_of_realified_line_is_c1_squared():
    line = sphere_product_line(1, 2)
    assert abs(integrate(chern_form(line)).coefficient(-2) - 2.0) < 1e-8
    p1 = pontryagin_form(map_field(line.curvature, realified))
    assert abs(integrate(p1).coefficient(-2) - 4.0) < 1e-8


def test_a_hat_four_form_is_minus_p1_over_24():
    curvature = map_field(sphere_product_line(1, 2).curvature, realified)
    a_hat = integrate(a_hat_form(curvature))
    assert abs(a_hat.coefficient(-2) + 4.0 / 24) < 1e-8
    assert abs(a_hat.coefficient(-2) + integrate(pontryagin_form(curvature)).coefficient(-2) / 24) < 1e-10


def test_cs_three_splits_direct_sum():
    first, third = monopole(S2, 1), monopole(S2, 2)
    middle = perturbed(direct_sum(first, third), perturbation_form(S2, 5))
    cs = cs_three(first, middle, third)
    target = chern_form(middle) - chern_form(first) - chern_form(third)
    assert (cs.d() - target).max_abs() < 1e-6


def test_cs_three_needs_matching_ranks():
    first = monopole(S2, 1)
    with pytest.raises(BundleMismatchError):
        cs_three(first, first, first)
