"""Scaling-regime algebra, limit assembly, film energies and the trend harness."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sievefilm import energy as en
from sievefilm import regime as rg


def seqs(e_eps, e_del, e_r, n=3, p=1.5):
    return rg.RegimeSequences(eps=rg.PowerSequence(2.0, e_eps),
                              delta=rg.PowerSequence(2.0, e_del),
                              r=rg.PowerSequence(2.0, e_r), n=n, p=p)


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


def test_power_sequence_values():
    s = rg.PowerSequence(2.0, -1.5)
    assert s.value(2) == pytest.approx(2.0 ** (-3.0), rel=1e-15)
    assert s.decay_rate == pytest.approx(1.5 * math.log(2.0))


def test_classify_supercritical_schedule():
    rep = rg.classify(seqs(-1.0, -5.0, -4.0))
    assert rep.symbolic
    assert rep.ell == math.inf
    assert rep.R_ell == 1.0
    assert rep.regime_label == "infinite"


def test_classify_critical_schedule():
    rep = rg.classify(seqs(-1.0, -4.0, -4.0))
    assert rep.ell == 1.0
    assert rep.R_ell == 1.0
    assert rep.R_zero == 1.0
    assert rep.regime_label == "finite"
    # consistency of the two normalizations: R0 = ell * Rinf
    assert rep.consistency == pytest.approx(0.0, abs=1e-12)


def test_classify_thin_hole_schedule():
    rep = rg.classify(seqs(-1.0, -1.5, -7.0 / 3.0))
    assert rep.ell == 0.0
    assert rep.R_zero == 1.0
    assert rep.regime_label == "zero"


def test_classify_subcritical_and_glued():
    assert rg.classify(seqs(-1.0, -5.0, -6.0)).regime_label == "trivial_decoupled"
    assert rg.classify(seqs(-1.0, -5.0, -3.2)).regime_label == "trivial_glued"


def test_classify_from_explicit_lists():
    j = np.arange(1, 9)
    rep = rg.classify(rg.RegimeSequences(
        eps=2.0 ** (-j), delta=2.0 ** (-4.0 * j), r=2.0 ** (-4.0 * j),
        n=3, p=1.5))
    assert not rep.symbolic
    assert rep.ell == pytest.approx(1.0, rel=1e-9)
    assert rep.R_ell == pytest.approx(1.0, rel=1e-9)
    assert rep.regime_label == "finite"


def test_exponent_range_is_enforced():
    with pytest.raises(ValueError, match="1 < p < n-1"):
        seqs(-1.0, -5.0, -4.0, n=3, p=2.0)


def test_non_settling_sequence_is_rejected():
    j = np.arange(1, 9)
    rng = np.random.default_rng(0)
    wobble = 2.0 ** (-4.0 * j) * (1.0 + 0.5 * rng.standard_normal(8))
    with pytest.raises(ValueError):
        rg.classify(rg.RegimeSequences(eps=2.0 ** (-j), delta=2.0 ** (-4.0 * j),
                                       r=np.abs(wobble), n=3, p=1.5))


def test_non_separating_holes_rejected():
    # r must vanish faster than eps
    with pytest.raises(ValueError):
        seqs(-1.0, -5.0, -1.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(-6.0, -3.5))
def test_equal_decay_gives_matching_normalizations(e_r):
    # when r and delta decay at the same rate (ell = 1), the finite- and
    # zero-regime normalizations agree whatever the common rate is
    rep = rg.classify(seqs(-1.0, e_r, e_r))
    assert rep.ell == 1.0
    if math.isfinite(rep.R_ell) and rep.R_ell > 0:
        assert rep.R_zero == pytest.approx(rep.R_ell, rel=1e-9)


# ---------------------------------------------------------------------------
# interfacial tables and limit assembly
# ---------------------------------------------------------------------------


def test_phi_table_homogeneous():
    tab = rg.PhiTable(p=1.5, unit_value=4.0)
    assert tab(np.array([2.0])) == pytest.approx(4.0 * 2.0**1.5)
    assert tab(np.array([0.0])) == 0.0


def test_phi_table_interpolated_and_range_checked():
    grid = np.linspace(0.0, 2.0, 21)
    tab = rg.PhiTable(p=2.0, znorm_grid=grid, values=grid**2)
    assert tab(np.array([1.3])) == pytest.approx(1.69, abs=1e-3)
    with pytest.raises(ValueError, match="extend the table"):
        tab(np.array([2.5]))


def test_assemble_limit_constant_state():
    # both layers affine with the same in-plane gradient g, jump z:
    # E = 2 W(g) |omega| + R phi(z) |omega|
    dens = en.EnergyDensity(kind="power", m=1, n=3, p=1.5)
    red = en.ReducedDensity(base=dens, mode="wbar")
    nx = ny = 9
    X, Y = np.meshgrid(np.linspace(0, 1, nx), np.linspace(0, 1, ny),
                       indexing="ij")
    g = np.array([0.7, -0.2])
    up = 1.0 + g[0] * X + g[1] * Y
    lo = g[0] * X + g[1] * Y
    phi = rg.PhiTable(p=1.5, unit_value=3.0)
    E = rg.assemble_limit(up, lo, red, R=2.0, phi=phi)
    W = en.eval(red, g.reshape(1, 2))
    want = 2.0 * W + 2.0 * 3.0 * 1.0**1.5
    assert E == pytest.approx(want, rel=1e-12)


def test_assemble_limit_checks_shapes():
    red = en.ReducedDensity(
        base=en.EnergyDensity(kind="power", m=1, n=3, p=1.5), mode="wbar")
    u = np.zeros((5, 5))
    phi = rg.PhiTable(p=1.5, unit_value=1.0)
    with pytest.raises(ValueError):
        rg.assemble_limit(u, np.zeros((4, 5)), red, R=1.0, phi=phi)
    with pytest.raises(ValueError):
        rg.assemble_limit(u, u, red, R=-1.0, phi=phi)


# ---------------------------------------------------------------------------
# direct film energies
# ---------------------------------------------------------------------------


def film_spec(**kw):
    base = dict(eps=0.25, delta=0.1, r=0.02, nz=2)
    base.update(kw)
    return rg.FilmSpec(**base)


def test_film_spec_validation():
    with pytest.raises(ValueError, match="disjoint"):
        film_spec(r=0.2)
    with pytest.raises(ValueError):
        film_spec(eps=-1.0)


def test_film_grid_budget_and_bands():
    spec = film_spec()
    grid = rg.build_film_grid(spec)
    assert grid.n_voxels == 2 * (grid.xs.size - 1) * (grid.ys.size - 1) * (grid.zs.size - 1)
    # hole bands resolved at r/fine_factor
    assert np.min(np.diff(grid.xs)) <= spec.r / spec.fine_factor * (1 + 1e-9)
    assert grid.hole_centers.shape[1] == 2


def test_direct_film_energy_affine_oracle():
    # u = x1 through both layers, no jump: W = 1 everywhere, E = 2 |omega|
    spec = film_spec()
    grid = rg.build_film_grid(spec)
    dens = en.EnergyDensity(kind="power", m=1, n=3, p=1.5)
    shape = (grid.xs.size, grid.ys.size, grid.zs.size)
    U = np.broadcast_to(grid.xs[:, None, None], shape).copy()
    field = rg.FilmField(grid=grid, upper=U, lower=U.copy())
    E = rg.direct_film_energy(spec, dens, field)
    assert E == pytest.approx(2.0, rel=1e-12)


def test_direct_film_energy_homogeneity():
    spec = film_spec()
    grid = rg.build_film_grid(spec)
    dens = en.EnergyDensity(kind="power", m=1, n=3, p=1.5)
    shape = (grid.xs.size, grid.ys.size, grid.zs.size)
    rng = np.random.default_rng(4)
    ups = 0.1 * rng.standard_normal(shape)
    U = np.broadcast_to(grid.xs[:, None, None], shape) + 0.0 * ups
    field = rg.FilmField(grid=grid, upper=2.0 * U, lower=2.0 * U)
    E2 = rg.direct_film_energy(spec, dens, field)
    assert E2 == pytest.approx(2.0 ** 1.5 * 2.0, rel=1e-12)


def test_film_field_jump_through_hole_rejected():
    spec = film_spec()
    grid = rg.build_film_grid(spec)
    shape = (grid.xs.size, grid.ys.size, grid.zs.size)
    with pytest.raises(ValueError, match="jumps inside holes"):
        rg.FilmField(grid=grid, upper=np.ones(shape), lower=np.zeros(shape))


# ---------------------------------------------------------------------------
# anisotropic flatness ratio
# ---------------------------------------------------------------------------


def test_poincare_affine_profile_and_scale_invariance():
    rep = rg.poincare_check(shape="square", p=2.0, resolution=24)
    # u = x1: the discrete midpoint ratio is (1/12)(1 - 1/n^2)
    want = (1.0 / 12.0) * (1.0 - 1.0 / 24.0**2)
    assert rep.per_profile["affine-x1"] == pytest.approx(want, rel=1e-10)
    assert abs(rep.per_profile["affine-x1"] - 1.0 / 12.0) / (1.0 / 12.0) < 0.05
    # the ratio is exactly (rho, delta)-invariant, so the spread is roundoff
    assert rep.spread < 1e-10


def test_poincare_other_shapes_run():
    for shape in ("ball", "annulus_in_square"):
        rep = rg.poincare_check(shape=shape, p=2.0, resolution=16,
                                rho_list=(1.0, 0.01), delta_list=(1.0,))
        assert rep.max_ratio > 0
        assert rep.spread < 1e-8


def test_poincare_unknown_shape():
    with pytest.raises(ValueError, match="unknown shape"):
        rg.poincare_check(shape="pentagon")


# ---------------------------------------------------------------------------
# recovery-trend harness (cheap wiring runs; the converged schedules live in
# the acceptance suite)
# ---------------------------------------------------------------------------


INodd = dict(cell_N=(4.0, 8.0), cell_resolution=0.15)


def test_gamma_trend_single_entry_wiring():
    seq = seqs(-1.0, -5.0, -4.0)
    rep = rg.gamma_trend(seq, j_list=(2,), **INodd)
    assert rep.regime_label == "infinite"
    assert len(rep.rows) == 1
    row = rep.rows[0]
    assert row["eps"] == 0.25
    assert row["voxels"] <= 8_000_000
    assert 0 < row["gap"] < 1.0
    assert rep.limit_energy == pytest.approx(rep.phi_value, rel=1e-12)
    assert not rep.warnings


def test_gamma_trend_translation_invariance():
    seq = seqs(-1.0, -5.0, -4.0)
    a = rg.gamma_trend(seq, j_list=(2,), u_plus=1.0, u_minus=0.0, **INodd)
    b = rg.gamma_trend(seq, j_list=(2,), u_plus=1.7, u_minus=0.7, **INodd)
    assert b.rows[0]["film_energy"] == pytest.approx(a.rows[0]["film_energy"],
                                                     rel=1e-12)


def test_gamma_trend_zero_jump_is_free():
    seq = seqs(-1.0, -5.0, -4.0)
    rep = rg.gamma_trend(seq, j_list=(2,), u_plus=0.5, u_minus=0.5, **INodd)
    assert rep.rows[0]["film_energy"] == pytest.approx(0.0, abs=1e-14)
    assert rep.rows[0]["gap"] == pytest.approx(0.0, abs=1e-14)


def test_gamma_trend_budget_truncation_warns():
    seq = seqs(-1.0, -5.0, -4.0)
    rep = rg.gamma_trend(seq, j_list=(2, 3), budget=200_000, **INodd)
    assert len(rep.rows) == 1
    assert any("exceed the budget" in w for w in rep.warnings)


def test_gamma_trend_refuses_glued_schedule():
    seq = seqs(-1.0, -5.0, -3.2)
    with pytest.raises(ValueError, match="diverges"):
        rg.gamma_trend(seq, j_list=(2,), **INodd)


def test_gamma_trend_finite_regime_bounded():
    # the critical schedule's gap is not monotone at small j (bridge excess
    # vs. boundary hole deficit cross over); assert wiring + boundedness
    seq = seqs(-1.0, -4.0, -4.0)
    rep = rg.gamma_trend(seq, j_list=(2,), **INodd)
    assert rep.regime_label == "finite"
    assert 0 < rep.rows[0]["gap"] < 1.0


def test_gamma_trend_zero_regime_bounded():
    seq = seqs(-1.0, -2.5, -3.0)
    rep = rg.gamma_trend(seq, j_list=(2,), cell_N=(3.0, 5.0),
                         cell_resolution=0.2)
    assert rep.regime_label == "zero"
    assert 0 < rep.rows[0]["gap"] < 1.0
