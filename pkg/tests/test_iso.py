"""Isoenergetic surface: reference radius, root solves, scans, gradients."""

import math

import numpy as np
import pytest

from polywave.errors import ConfigError, NumericalFailure
from polywave.iso import h_gradient, kappa_solve, reference_radius, sample_surface
from polywave.lattice import ModelContext, cosine_potential, decompose, momentum
from polywave.nonres import sample_nonresonant

from conftest import make_context


@pytest.fixture(scope="module")
def ctx_iso():
    return make_context(3, 0.05)


@pytest.fixture(scope="module")
def admitted_direction(ctx_iso):
    """A direction whose base momentum at ktilde = 8 passes admission."""
    stats = sample_nonresonant(ctx_iso, 8.0, 400, seed=0, keep_reports=True)
    reports = [r for r in stats.reports if r.admitted]
    assert reports, "no admitted direction in 400 draws"
    p = momentum(reports[0].j, reports[0].t)
    return p / np.linalg.norm(p)


# -- reference radius -------------------------------------------------

def test_reference_radius_splits_cubic_shift():
    ctx = make_context(1, 0.25, sigma=1.0, amp2=1e-3)
    assert reference_radius(ctx, 100.001) == (10.0, 0.0)


def test_reference_radius_exact_power(ctx_iso):
    assert reference_radius(ctx_iso, 8.0 ** 6) == (8.0, 0.0)


def test_reference_radius_rounding_defect_is_small(ctx_iso):
    lam = 1234.5678
    kt, c0 = reference_radius(ctx_iso, lam)
    # c0 is the double-rounding defect of kt; the half-ulp error in kt is
    # amplified by d(kt^6)/dkt, i.e. a factor 2l on the scale of lam
    assert abs(c0) <= 6 * np.spacing(lam)
    assert kt ** 6 == pytest.approx(lam + c0, rel=1e-15)


def test_reference_radius_guards():
    nl = make_context(3, 0.05, sigma=1.0, amp2=1e-3)
    with pytest.raises(ConfigError):
        reference_radius(nl, 5e-4)  # below the cubic shift
    with pytest.raises(ConfigError):
        reference_radius(nl, 1.0)   # radius under the working floor


# -- single root solves -----------------------------------------------

def test_kappa_solve_certifies_and_repeats(ctx_iso, admitted_direction):
    lam = 8.0 ** 6
    s = kappa_solve(ctx_iso, lam, admitted_direction)
    assert abs(s.f_at_root) <= 1e-9 * lam
    assert abs(s.h) / s.ktilde < 1e-3
    assert s.kappa == pytest.approx(s.ktilde, rel=1e-3)
    j, t = decompose(s.kappa * np.asarray(admitted_direction))
    assert s.j == j
    assert np.allclose(s.t, t)
    again = kappa_solve(ctx_iso, lam, admitted_direction)
    assert again.h == s.h and again.kappa == s.kappa and again.evals == s.evals


def test_kappa_solve_refuses_resonant_axis(ctx_iso):
    # kappa * (1, 0) stays glued to the lattice line: every trial is punctured
    with pytest.raises(NumericalFailure):
        kappa_solve(ctx_iso, 8.0 ** 6, (1.0, 0.0))


def test_kappa_solve_unknown_solver(ctx_iso, admitted_direction):
    with pytest.raises(ConfigError):
        kappa_solve(ctx_iso, 8.0 ** 6, admitted_direction, solver="secant")


# -- scans ------------------------------------------------------------

def test_sample_surface_accounts_every_direction(ctx_iso):
    scan = sample_surface(ctx_iso, 8.0 ** 6, 6, seed=0)
    assert scan.requested == 6
    assert len(scan.resolved) + scan.holes + scan.failures == 6
    repeat = sample_surface(ctx_iso, 8.0 ** 6, 6, seed=0)
    assert repeat.holes == scan.holes
    assert np.array_equal(repeat.kappa_values, scan.kappa_values)


def test_sample_surface_sweep_needs_plane():
    line = ModelContext(n=1, l=1, sigma=0.0, A=0.0,
                        V=cosine_potential(1, (1.0,)), delta=0.1)
    with pytest.raises(ConfigError):
        sample_surface(line, 100.0, 4, sweep=True)


# -- tangential gradient ----------------------------------------------

def test_h_gradient_finite_and_small(ctx_iso, admitted_direction):
    g = h_gradient(ctx_iso, 8.0 ** 6, admitted_direction, step=1e-4)
    assert math.isfinite(g.value)
    assert abs(g.value) < 1.0
    assert g.kappa_plus != g.kappa_minus  # the surface actually tilts
