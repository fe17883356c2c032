"""Density evaluation, transverse reduction, lamination and the small-radius limit."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sievefilm import energy as en


def power(m=1, n=3, p=2.0, **kw):
    return en.EnergyDensity(kind="power", m=m, n=n, p=p, **kw)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def test_power_closed_form():
    d = power(p=1.5)
    F = np.array([[3.0, 4.0, 0.0]])
    assert en.eval(d, F) == pytest.approx(5.0**1.5, rel=1e-14)
    assert en.eval(d, np.zeros((1, 3))) == 0.0


def test_batch_eval_matches_loop():
    d = power(m=2, n=3, p=1.7)
    rng = np.random.default_rng(3)
    Fs = rng.standard_normal((11, 2, 3))
    batch = en.eval(d, Fs)
    single = np.array([en.eval(d, F) for F in Fs])
    assert np.allclose(batch, single, rtol=1e-14)


def test_shape_validation():
    d = power()
    with pytest.raises(ValueError):
        en.eval(d, np.zeros((1, 4)))


def test_gradient_matches_finite_differences():
    d = power(m=2, n=4, p=1.6)
    rng = np.random.default_rng(7)
    F = rng.standard_normal((2, 4))
    g = en.gradient(d, F)
    h = 1e-6
    for i in range(2):
        for j in range(4):
            Fp, Fm = F.copy(), F.copy()
            Fp[i, j] += h
            Fm[i, j] -= h
            fd = (en.eval(d, Fp) - en.eval(d, Fm)) / (2 * h)
            assert g[i, j] == pytest.approx(fd, rel=1e-5, abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(-5, 5), min_size=3, max_size=3),
    st.floats(0.1, 4.0),
    st.floats(1.2, 3.5),
)
def test_power_is_p_homogeneous(entries, lam, p):
    # W(lam F) = lam^p W(F) is what the cell-problem scalings lean on
    d = power(p=p)
    F = np.array([entries])
    lhs = en.eval(d, lam * F)
    rhs = lam**p * en.eval(d, F)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


def test_anisotropic_and_sum_kinds():
    # the weight matrix mixes components (rows), W = |M F|^p
    A = np.array([[2.0, 0.5], [0.0, 1.0]])
    d = en.EnergyDensity(kind="anisotropic", m=2, n=3, p=2.0, matrix=A)
    F = np.arange(6.0).reshape(2, 3)
    assert en.eval(d, F) == pytest.approx(float(np.sum((A @ F) ** 2)), rel=1e-12)


def test_growth_report_flags_offset_density():
    # min(|F-A|^p, |F+A|^p) has W(0) = |A|^p > 0: usable for envelopes,
    # rejected by the growth validator the cell problems rely on
    well = np.zeros((1, 3))
    well[0, 0] = 1.0
    dw = en.EnergyDensity(kind="double_well", m=1, n=3, p=2.0, well=well)
    rep = en.validate_growth(dw)
    assert not rep.passed
    assert not rep.zero_ok
    rep2 = en.validate_growth(power())
    assert rep2.passed


# ---------------------------------------------------------------------------
# transverse reduction
# ---------------------------------------------------------------------------


def test_wbar_power_is_planar_power():
    # inf_b |(Fbar | b)|^p is attained at b = 0
    red = en.ReducedDensity(base=power(p=1.5), mode="wbar")
    Fbar = np.array([[1.0, 2.0]])
    want = float(np.sum(Fbar**2)) ** (1.5 / 2.0)
    assert en.eval(red, Fbar) == pytest.approx(want, rel=1e-9)
    assert red.ncols == 2
    assert red.is_convex


def test_wbar_double_well_brute_force():
    well = np.zeros((1, 3))
    well[0, 2] = 0.75  # offset in the reduced column only
    dw = en.EnergyDensity(kind="double_well", m=1, n=3, p=2.0, well=well)
    red = en.ReducedDensity(base=dw, mode="wbar")
    Fbar = np.array([[0.3, -0.2]])
    # brute force over the transverse entry
    bs = np.linspace(-2.0, 2.0, 4001)
    Fs = np.concatenate(
        [np.broadcast_to(Fbar, (bs.size, 1, 2)), bs.reshape(-1, 1, 1)], axis=2
    )
    want = en.eval(dw, Fs).min()
    assert en.eval(red, Fbar) == pytest.approx(want, rel=1e-6, abs=1e-9)


def test_wbar_never_above_slice():
    red = en.ReducedDensity(base=power(p=2.2), mode="wbar")
    rng = np.random.default_rng(11)
    for _ in range(10):
        Fbar = rng.standard_normal((1, 2))
        slice_val = en.eval(power(p=2.2), np.concatenate([Fbar, [[0.0]]], axis=1))
        assert en.eval(red, Fbar) <= slice_val + 1e-12


# ---------------------------------------------------------------------------
# lamination envelope
# ---------------------------------------------------------------------------


def test_envelope_of_double_well_vanishes_between_wells():
    well = np.zeros((1, 2))
    well[0, 0] = 1.0
    dw = en.EnergyDensity(kind="double_well", m=1, n=2, p=2.0, well=well)
    env = en.EnvelopeApprox(base=dw, depth=1)
    # midpoint of the two wells: a rank-one mixture hits both exactly
    val = en.eval(env, np.zeros((1, 2)))
    assert val == pytest.approx(0.0, abs=1e-8)
    # outside the segment the envelope agrees with the well distance
    F = np.array([[2.0, 0.0]])
    assert en.eval(env, F) == pytest.approx(1.0, rel=1e-6)


def test_envelope_below_density_and_monotone_in_depth():
    well = np.zeros((1, 2))
    well[0, 1] = 0.6
    dw = en.EnergyDensity(kind="double_well", m=1, n=2, p=2.0, well=well)
    e1 = en.EnvelopeApprox(base=dw, depth=1)
    e2 = en.EnvelopeApprox(base=dw, depth=2)
    rng = np.random.default_rng(5)
    for _ in range(6):
        F = 0.7 * rng.standard_normal((1, 2))
        v0 = en.eval(dw, F)
        v1 = en.eval(e1, F)
        v2 = en.eval(e2, F)
        assert v1 <= v0 + 1e-10
        assert v2 <= v1 + 1e-8


def test_convex_density_is_its_own_envelope():
    d = power(n=2, p=2.0)
    env = en.EnvelopeApprox(base=d, depth=2)
    F = np.array([[0.4, -1.1]])
    assert en.eval(env, F) == pytest.approx(en.eval(d, F), rel=1e-9)


# ---------------------------------------------------------------------------
# small-radius limit
# ---------------------------------------------------------------------------


def test_g_limit_strips_subcritical_term():
    # r^p W(F/r) = |F|^p + r^{p/2} |F|^{p/2} -> |F|^p
    p = 2.4
    base = en.EnergyDensity(
        kind="sum",
        m=1,
        n=3,
        p=p,
        terms=(
            en.EnergyDensity(kind="power", m=1, n=3, p=p),
            en.EnergyDensity(kind="power", m=1, n=3, p=p / 2),
        ),
    )
    F = np.array([[1.0, -2.0, 0.5]])
    res = en.g_limit(base, F)
    want = float(np.sum(F**2)) ** (p / 2.0)
    assert res.converged
    assert res.value == pytest.approx(want, rel=1e-4)
    assert res.residual < 1e-3


def test_g_limit_of_homogeneous_density_is_identity():
    d = power(p=1.5)
    F = np.array([[0.3, 0.0, 1.2]])
    res = en.g_limit(d, F)
    assert res.value == pytest.approx(en.eval(d, F), rel=1e-10)
