#!/usr/bin/env python3
"""
Tests for bundles with connection, holonomy and connection paths.
"""

import numpy as np
import pytest

from config import Numerics
from graded_core import Circle, Sphere2, StructuredManifold, UnsupportedInputError, BundleMismatchError
from bundles import (
    trivial_bundle, zero_bundle, flat_line, monopole, poincare, tensor, direct_sum, dual, pullback,
    holonomy, holonomy_at_basepoint, ConnectionPath,
)

NUMERICS = Numerics(circle_points=32, sphere_order=24, sphere_phi_points=24, interval_order=16,
                    t_quadrature=16, simplex_quadrature=16, holonomy_steps=256)

S1 = StructuredManifold([Circle()], NUMERICS)
T2 = StructuredManifold([Circle(), Circle()], NUMERICS)
S2 = StructuredManifold([Sphere2()], NUMERICS)


def phase(z: complex) -> float:
    return float(np.angle(z) / (2 * np.pi)) % 1.0


def test_flat_line_holonomy():
    for theta in (0.1, 0.35, 0.8):
        hol = holonomy_at_basepoint(flat_line(S1, [theta]), 0)
        assert abs(hol[0, 0] - np.exp(2j * np.pi * theta)) < 1e-12


def test_flat_line_on_long_circle():
    circle = StructuredManifold([Circle(2.5)], NUMERICS)
    hol = holonomy_at_basepoint(flat_line(circle, [0.3]), 0)
    assert abs(hol[0, 0] - np.exp(0.6j * np.pi)) < 1e-12


def test_flat_line_needs_torus():
    with pytest.raises(UnsupportedInputError):
        flat_line(S2, [0.1])
    with pytest.raises(UnsupportedInputError):
        flat_line(T2, [0.1])


def test_monopole_gluing_is_consistent():
    for n in (-2, 1, 3):
        bundle = monopole(S2, n)
        assert bundle.overlap_curvature_residual() < 1e-10
        assert bundle.bianchi_residual() < 1e-8


def test_monopole_needs_sphere():
    with pytest.raises(UnsupportedInputError):
        monopole(T2, 1)


def test_poincare_holonomy_winds_once():
    bundle = poincare(T2)
    hol = holonomy(bundle, 1)[(0, 0)]
    x1 = np.arange(NUMERICS.circle_points) / NUMERICS.circle_points
    assert hol.shape[:2] == (NUMERICS.circle_points, 1)
    assert np.max(np.abs(hol[:, 0, 0, 0] - np.exp(-2j * np.pi * x1))) < 1e-10
    assert abs(holonomy_at_basepoint(bundle, 0)[0, 0] - 1.0) < 1e-12


def test_direct_sum_and_tensor_holonomy():
    a, b = flat_line(S1, [0.2]), flat_line(S1, [0.45])
    summed = holonomy_at_basepoint(direct_sum(a, b), 0)
    phases = sorted(phase(z) for z in np.linalg.eigvals(summed))
    assert np.allclose(phases, [0.2, 0.45], atol=1e-9)
    product = holonomy_at_basepoint(tensor(a, b), 0)
    assert abs(phase(product[0, 0]) - 0.65) < 1e-9


def test_dual_conjugates_holonomy():
    hol = holonomy_at_basepoint(dual(flat_line(S1, [0.2])), 0)
    assert abs(phase(hol[0, 0]) - 0.8) < 1e-9


def test_pullback_keeps_holonomy():
    lifted = pullback(flat_line(S1, [0.3]), T2, [1])
    assert lifted.base.same_as(T2)
    assert abs(phase(holonomy_at_basepoint(lifted, 1)[0, 0]) - 0.3) < 1e-9
    assert abs(holonomy_at_basepoint(lifted, 0)[0, 0] - 1.0) < 1e-12


def test_grading_must_match_rank():
    with pytest.raises(BundleMismatchError):
        trivial_bundle(S1, 2, grading=[1])
    bundle = trivial_bundle(S1, 2, grading=[1, -1])
    assert bundle.graded and bundle.grading_split() == (1, 1)


def test_zero_bundle_has_rank_zero():
    assert zero_bundle(S2).rank == 0


def test_connection_path_midpoint():
    path = ConnectionPath([flat_line(S1, [0.1]), flat_line(S1, [0.5])])
    hol = holonomy_at_basepoint(path.at(0.5), 0)
    assert abs(phase(hol[0, 0]) - 0.3) < 1e-9


def test_connection_path_needs_same_bundle():
    with pytest.raises(BundleMismatchError):
        ConnectionPath([monopole(S2, 1), monopole(S2, 2)])
    with pytest.raises(BundleMismatchError):
        ConnectionPath([flat_line(S1, [0.1])])
