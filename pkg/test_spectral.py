#!/usr/bin/env python3
"""
Tests for reduced eta-invariants and Dirac kernels.
"""

import numpy as np
import pytest

from config import Numerics
from graded_core import Circle, Sphere2, StructuredManifold, UnsupportedInputError, EtaValue, circular_distance
from bundles import flat_line, direct_sum, monopole
from diffk import generator_class, rewrite_reconnect, unit_class
from spectral import (
    SpectralModel, circle_spectrum, closed_form_eta, zeta_oracle_eta, regulated_eta, reduced_eta, eta_class,
    flat_twists, torus_kernel_dim, torus_covariant_laplacian, sphere_kernel_dim, dirac_index,
    separated_eta, poisson_sign_kernel, suspension_eta_density,
)
from selftest import perturbation_form, perturbed, circle_form

NUMERICS = Numerics(circle_points=32, sphere_order=24, sphere_phi_points=24, interval_order=16,
                    t_quadrature=16, simplex_quadrature=16, holonomy_steps=256)

S1 = StructuredManifold([Circle()], NUMERICS)
T2 = StructuredManifold([Circle(), Circle()], NUMERICS)
T3 = StructuredManifold([Circle(), Circle(), Circle()], NUMERICS)
S2 = StructuredManifold([Sphere2()], NUMERICS)


@pytest.mark.parametrize("theta,expected", [(0.0, 0.5), (0.25, 0.25), (0.5, 0.0), (0.8, 0.7), (1.3, 0.2)])
def test_closed_form(theta, expected):
    assert circular_distance(closed_form_eta(theta), expected) < 1e-12


@pytest.mark.parametrize("theta", [0.0, 0.03, 0.25, 0.5, 0.71, 0.97])
def test_zeta_oracle_agrees(theta):
    assert circular_distance(zeta_oracle_eta(theta), closed_form_eta(theta)) < 1e-8


def test_regulated_sums_agree():
    for theta in (0.0, 0.3):
        assert circular_distance(regulated_eta(theta), closed_form_eta(theta)) < 1e-6


def test_symmetry():
    for theta in (0.1, 0.37, 0.5):
        assert circular_distance(closed_form_eta(theta) + closed_form_eta(1 - theta), 0.0) < 1e-12


def test_variation_law():
    for theta in (0.1, 0.6):
        delta = 0.05
        jump = closed_form_eta(theta + delta) - closed_form_eta(theta)
        assert circular_distance(jump, -delta) < 1e-12


def test_reduced_eta_u_degree():
    value = reduced_eta(SpectralModel(S1, (0.3,)))
    assert value.u_degree == -1
    assert abs(value.value_mod_1 - 0.2) < 1e-12
    assert reduced_eta(SpectralModel(S1, (0.3,)), degree=2).u_degree == 0


def test_flat_three_torus_is_symmetric():
    value = reduced_eta(SpectralModel(T3, (0.1, 0.2, 0.3)))
    assert value.u_degree == -2 and value.value_mod_1 == 0.0


def test_even_dimension_rejected():
    with pytest.raises(UnsupportedInputError):
        reduced_eta(SpectralModel(T2, (0.1, 0.2)))
    with pytest.raises(UnsupportedInputError):
        SpectralModel(S2)


def test_flat_twists_of_sum():
    bundle = direct_sum(flat_line(S1, [0.2]), flat_line(S1, [0.7]))
    angles = sorted(angles[0] for _, angles in flat_twists(bundle))
    assert abs(angles[0] - 0.2) < 1e-9 and abs(angles[1] - 0.7) < 1e-9


def test_eta_class_adds_form_part():
    x = generator_class(flat_line(S1, [0.3]), circle_form(S1, -1, 0.1, 0.4))
    value = eta_class(x, spin_offset=0.0)
    assert value.u_degree == -1
    assert circular_distance(value.value_mod_1, 0.3) < 1e-9


def test_eta_class_spin_offset():
    x = generator_class(flat_line(S1, [0.3]))
    assert circular_distance(eta_class(x, spin_offset=0.5).value_mod_1, closed_form_eta(0.8)) < 1e-9


def test_eta_class_is_invariant_under_reconnection():
    a = flat_line(S1, [0.45])
    x = generator_class(perturbed(a, perturbation_form(S1, 5)))
    y = rewrite_reconnect(x, 0, a)
    assert eta_class(x, 0.0).distance(eta_class(y, 0.0)) < 1e-7


def test_eta_class_needs_odd_torus():
    with pytest.raises(UnsupportedInputError):
        eta_class(unit_class(T2))


@pytest.mark.parametrize("flux,expected", [(1, (1, 0)), (2, (2, 0)), (3, (3, 0)), (-1, (0, 1)), (-2, (0, 2))])
def test_torus_kernel_with_flux(flux, expected):
    assert torus_kernel_dim(SpectralModel(T2, flux=flux)) == expected


def test_torus_kernel_on_twisted_rectangle():
    rectangle = StructuredManifold([Circle(2.0), Circle(1.0)], NUMERICS)
    assert torus_kernel_dim(SpectralModel(rectangle, (0.3, 0.7), flux=2), points=20) == (2, 0)


def test_lowest_landau_level_is_degenerate():
    flux = 3
    spectrum = np.linalg.eigvalsh(torus_covariant_laplacian(SpectralModel(T2, flux=flux), 24))
    field = 2.0 * np.pi * flux
    assert np.all(np.abs(spectrum[:flux] - field) < 0.05 * field)
    assert spectrum[flux] > 2.5 * field


def test_torus_flux_beyond_lattice_rejected():
    with pytest.raises(UnsupportedInputError):
        torus_kernel_dim(SpectralModel(T2, flux=40), points=16)


def test_flat_torus_kernel():
    assert torus_kernel_dim(SpectralModel(T2, (0.0, 0.0))) == (1, 1)
    assert torus_kernel_dim(SpectralModel(T2, (0.3, 0.0))) == (0, 0)


def test_sphere_kernels():
    assert sphere_kernel_dim(3) == (4, 0)
    assert sphere_kernel_dim(-1) == (0, 0)
    assert sphere_kernel_dim(-3) == (0, 2)
    assert sphere_kernel_dim(2, spin_c=False) == (2, 0)
    assert sphere_kernel_dim(-2, spin_c=False) == (0, 2)


def test_dirac_index_of_reduced_classes():
    assert dirac_index(S2, 0, 1) == 1
    assert dirac_index(S2, 1, 0) == 1
    assert dirac_index(T2, 1, 0) == 0
    assert dirac_index(T2, 0, 1) == 1


def test_dirac_index_matches_monopole_flux():
    h = monopole(S2, 2)
    assert dirac_index(S2, h.rank, 2) == 3


def test_circle_spectrum_scales_with_length():
    circle = StructuredManifold([Circle(2.0)], NUMERICS)
    spectrum = circle_spectrum(SpectralModel(circle, (0.3,)))
    assert abs(spectrum.eigenvalue(0) - 0.3 * 3.141592653589793) < 1e-12
    assert spectrum.kernel_dim == 0
    assert circle_spectrum(SpectralModel(circle, (0.0,))).kernel_dim == 1


def test_separated_eta_scales_by_fiber_index():
    eta = separated_eta(2, EtaValue(-1, 0.3))
    assert eta.u_degree == -1
    assert abs(eta.value_mod_1 - 0.6) < 1e-12
    assert abs(separated_eta(-1, EtaValue(0, 0.25)).value_mod_1 - 0.75) < 1e-12


@pytest.mark.parametrize("y", [0.3, -0.3, 1.7])
def test_poisson_sign_kernel_averages_to_sign(y):
    x = np.arange(64) / 64
    assert abs(np.mean(poisson_sign_kernel(y, x)) - np.sign(y)) < 1e-10


def test_suspension_density_integrates_to_eta():
    t = np.arange(256) / 256
    density, kernel = suspension_eta_density(S1, (0.15,), -t, -np.ones_like(t), 1.0)
    assert kernel == 0
    assert abs(np.mean(density) - closed_form_eta(0.15)) < 1e-6
    density, kernel = suspension_eta_density(S1, (0.0,), -t, -np.ones_like(t), 1.0)
    assert kernel == 1
    assert abs(np.mean(density)) < 1e-6


def test_eta_class_reports_degree_shift_quietly(capsys):
    provenance = {}
    value = eta_class(generator_class(flat_line(S1, [0.3]), degree=2), 0.0, provenance)
    assert value.u_degree == 0
    assert circular_distance(value.value_mod_1, closed_form_eta(0.3)) < 1e-9
    assert len(provenance["warnings"]) == 1
    assert capsys.readouterr().out == ""
