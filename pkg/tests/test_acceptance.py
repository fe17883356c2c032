"""Acceptance suite: ten checks, one PASS/FAIL line each.

Each criterion computes its quantities at the advertised tolerances and
prints a single line to the live terminal (bypassing capture), then asserts.
Run `pytest -v tests/test_acceptance.py` to see the lines interleaved with
the test results.
"""

import json
import math
import time

import numpy as np
import pytest
from scipy.integrate import quad

from sievefilm import cell as ce
from sievefilm import cli
from sievefilm import energy as en
from sievefilm import mesh as me
from sievefilm import regime as rg
from sievefilm import solver as so


def report(capsys, num, ok, detail):
    tag = "PASS" if ok else "FAIL"
    with capsys.disabled():
        print(f"[{tag}] criterion {num:2d}: {detail}")
    assert ok, f"criterion {num}: {detail}"


# ---------------------------------------------------------------------------
# 1. closed-form capacity vs independent quadrature
# ---------------------------------------------------------------------------


def quadrature_capacity(d, p, r_in, r_out):
    # direct integration of the Euler-Lagrange profile psi = A + B s^{1-q};
    # independent of the package's closed form.  The unbounded domain is
    # mapped to a finite interval by s -> 1/u so quad sees the whole tail.
    q = (d - 1.0) / (p - 1.0)
    outer = 0.0 if math.isinf(r_out) else r_out ** (1.0 - q)
    B = 1.0 / (r_in ** (1.0 - q) - outer)
    area = 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)
    amp = abs(B * (1.0 - q)) ** p

    if math.isinf(r_out):
        # substituted integrand amp * u^{pq-d-1} stays bounded near u=0
        # whenever p < d
        val, _ = quad(lambda u: amp * u ** (p * q - d - 1.0),
                      0.0, 1.0 / r_in, epsabs=0.0, epsrel=1e-13, limit=200)
    else:
        val, _ = quad(lambda s: amp * s ** (d - 1.0 - p * q),
                      r_in, r_out, epsabs=0.0, epsrel=1e-13, limit=200)
    return area * val


def test_criterion_01_radial_capacity_oracle(capsys):
    t0 = time.perf_counter()
    errs = []
    for r_out, want in ((2.0, 8 * math.pi), (math.inf, 4 * math.pi)):
        got = ce.radial_capacity(3, 2.0, 1.0, r_out)
        errs.append(abs(got - want) / want)
        errs.append(abs(got - quadrature_capacity(3, 2.0, 1.0, r_out)) / want)
    dt = time.perf_counter() - t0
    ok = max(errs) < 1e-10 and dt < 1.0
    report(capsys, 1, ok,
           f"radial_capacity vs 8pi/4pi and quadrature, max rel err "
           f"{max(errs):.2e} (tol 1e-10), {dt:.2f}s")


# ---------------------------------------------------------------------------
# 2. FEM reproduction of the shell capacity
# ---------------------------------------------------------------------------


def test_criterion_02_fem_shell_capacity(capsys):
    details = []
    ok = True
    for p in (1.5, 2.0):
        t0 = time.perf_counter()
        want = ce.radial_capacity(3, p, 1.0, 2.0)
        Es = []
        for h in (0.1, 0.05):
            msh = me.build_radial_shell_mesh(3, 1.0, 2.0, h)
            dens = en.EnergyDensity(kind="power", m=1, n=2, p=p)
            bc = so.BoundaryCondition(assignments=(("inner", (1.0,)),
                                                   ("outer", (0.0,))))
            _, diag = so.minimize(msh, dens, bc,
                                  options=so.SolveOptions(grad_tol=1e-9))
            Es.append(diag.final_energy)
        rich = Es[1] + (Es[1] - Es[0]) / (2.0**2 - 1.0)
        rel = abs(rich - want) / want
        dt = time.perf_counter() - t0
        ok &= rel < 0.01 and dt < 120.0
        details.append(f"p={p}: {rel:.2e} in {dt:.1f}s")
    report(capsys, 2, ok,
           "FEM shell vs oracle after one Richardson step (tol 1%): "
           + "; ".join(details))


# ---------------------------------------------------------------------------
# 3. membrane-regime interfacial value
# ---------------------------------------------------------------------------


def test_criterion_03_phi_infinite_two_pi(capsys):
    t0 = time.perf_counter()
    spec = ce.CellProblemSpec(regime="infinite", z=np.array([1.0]), d=3, p=2.0)
    res = ce.solve_phi(spec)
    rel = abs(res.phi_extrapolated - 2 * math.pi) / (2 * math.pi)
    dt = time.perf_counter() - t0
    ok = rel < 0.03 and dt < 600.0
    report(capsys, 3, ok,
           f"phi(infinite, d=3, p=2, z=1) = {res.phi_extrapolated:.5f} vs 2pi, "
           f"rel err {rel:.2%} (tol 3%), {dt:.1f}s")


# ---------------------------------------------------------------------------
# 4. homogeneity, positivity, truncation monotonicity — all regimes
# ---------------------------------------------------------------------------


def test_criterion_04_homogeneity_and_positivity(capsys):
    t0 = time.perf_counter()
    opts = so.SolveOptions(grad_tol=1e-8)
    tol = 2.0 * opts.grad_tol
    details = []
    ok = True
    for regime, kw in (("infinite", {}), ("finite", dict(ell=1.0)),
                       ("zero", {})):
        phis = {}
        for lam in (0.5, 1.0, 2.0):
            spec = ce.CellProblemSpec(regime=regime, z=np.array([lam]), d=3,
                                      p=2.0, solver=opts, **kw)
            res = ce.solve_phi(spec)
            phis[lam] = res.phi_extrapolated
            ok &= res.monotone
        defect = max(
            abs(phis[lam] - lam**2 * phis[1.0]) / (lam**2 * phis[1.0])
            for lam in (0.5, 2.0))
        res0 = ce.solve_phi(ce.CellProblemSpec(
            regime=regime, z=np.array([0.0]), d=3, p=2.0, solver=opts, **kw))
        zero_exact = res0.phi_extrapolated == 0.0 and \
            all(v == 0.0 for v in res0.phi_values)
        ok &= defect < tol and zero_exact
        details.append(f"{regime}: defect {defect:.1e}")
    dt = time.perf_counter() - t0
    ok &= dt < 1800.0
    report(capsys, 4, ok,
           f"phi(lambda z) = lambda^p phi(z) within {tol:.0e}, phi(0) = 0, "
           f"monotone truncations ({'; '.join(details)}), {dt:.0f}s")


# ---------------------------------------------------------------------------
# 5. estimate compliance scans, 20 jumps per regime, mesh-stable constants
# ---------------------------------------------------------------------------


SCAN_SPECS = {
    "infinite": dict(kw={}, N_list=(4.0, 8.0, 16.0), res=(0.2, 0.15)),
    "finite": dict(kw=dict(ell=1.0), N_list=(4.0, 8.0, 16.0), res=(0.2, 0.15)),
    "zero": dict(kw={}, N_list=(3.0, 6.0, 12.0), res=(0.3, 0.25)),
}


def test_criterion_05_estimate_scans(capsys):
    t0 = time.perf_counter()
    details = []
    ok = True
    for regime, cfg in SCAN_SPECS.items():
        cs = []
        for res_h in cfg["res"]:
            spec = ce.CellProblemSpec(regime=regime, z=np.array([1.0]), d=3,
                                      p=2.0, N_list=cfg["N_list"],
                                      resolution=res_h, **cfg["kw"])
            cache = {}
            up = ce.scan_upper_bound(spec, _cache=cache)
            lip = ce.scan_lipschitz(spec, _cache=cache)
            ok &= up.all_ok and lip.all_finite
            ok &= math.isfinite(up.c_empirical) and math.isfinite(lip.c_max)
            ok &= len(up.rows) == 20 * len(cfg["N_list"])
            cs.append(up.c_empirical)
        stability = max(cs) / min(cs)
        ok &= stability < 2.0
        details.append(f"{regime}: c={cs[-1]:.3f}, mesh ratio {stability:.3f}")
    dt = time.perf_counter() - t0
    ok &= dt < 3600.0
    report(capsys, 5, ok,
           "upper-bound + Lipschitz scans on 20 jumps/regime, constants "
           f"mesh-stable within 2x ({'; '.join(details)}), {dt:.0f}s")


# ---------------------------------------------------------------------------
# 6. regime algebra on the worked schedules
# ---------------------------------------------------------------------------


def test_criterion_06_regime_algebra(capsys):
    t0 = time.perf_counter()

    def seqs(ee, ed, er):
        return rg.RegimeSequences(eps=rg.PowerSequence(2.0, ee),
                                  delta=rg.PowerSequence(2.0, ed),
                                  r=rg.PowerSequence(2.0, er), n=3, p=1.5)

    sup = rg.classify(seqs(-1.0, -5.0, -4.0))
    crit = rg.classify(seqs(-1.0, -4.0, -4.0))
    thin = rg.classify(seqs(-1.0, -1.5, -7.0 / 3.0))
    ok = (sup.ell == math.inf and sup.R_ell == 1.0
          and sup.regime_label == "infinite")
    ok &= (crit.ell == 1.0 and crit.R_ell == 1.0 and crit.R_zero == 1.0
           and crit.regime_label == "finite")
    ok &= thin.ell == 0.0 and thin.R_zero == 1.0 and thin.regime_label == "zero"
    # the two normalizations agree through ell on the critical schedule
    ok &= crit.R_zero == pytest.approx(crit.ell * crit.R_ell, abs=1e-15)
    dt = time.perf_counter() - t0
    ok &= dt < 1.0
    report(capsys, 6, ok,
           f"worked schedules -> (inf,1)/(1,1)/(0,1) exactly, R0 = ell*Rinf, "
           f"{dt:.3f}s")


# ---------------------------------------------------------------------------
# 7. continuity in ell toward the membrane limit
# ---------------------------------------------------------------------------


def test_criterion_07_ell_continuity(capsys):
    t0 = time.perf_counter()
    spec = ce.CellProblemSpec(regime="finite", z=np.array([1.0]), d=3, p=2.0,
                              ell=1.0, N_list=(4.0, 8.0, 16.0),
                              resolution=0.15)
    rep = ce.scan_ell_continuity(spec, ell_list=(1.0, 2.0, 4.0, 8.0, 16.0))
    dt = time.perf_counter() - t0
    ok = (rep.strictly_decreasing and rep.final_gap < 0.10
          and rep.all_converged and dt < 3600.0)
    gaps = ", ".join(f"{g:.3f}" for g in rep.gaps)
    report(capsys, 7, ok,
           f"|phi(ell) - phi(inf)|/phi(inf) over ell=1..16: [{gaps}] "
           f"strictly decreasing, final {rep.final_gap:.2%} (tol 10%), {dt:.0f}s")


# ---------------------------------------------------------------------------
# 8. anisotropic flatness ratio: value and scale invariance
# ---------------------------------------------------------------------------


def test_criterion_08_poincare_invariance(capsys):
    t0 = time.perf_counter()
    rep = rg.poincare_check(shape="square", p=2.0, resolution=24)
    val = rep.per_profile["affine-x1"]
    rel = abs(val - 1.0 / 12.0) / (1.0 / 12.0)
    dt = time.perf_counter() - t0
    # rho spans 3 decades, delta 2, in the default lists
    ok = rel < 0.05 and rep.spread < 0.05 and dt < 60.0
    report(capsys, 8, ok,
           f"u = x1 ratio {val:.6f} vs 1/12 (rel {rel:.2%}, tol 5%), spread "
           f"across scales {rep.spread:.1e}, {dt:.1f}s")


# ---------------------------------------------------------------------------
# 9. recovery trend along schedules
# ---------------------------------------------------------------------------


def test_criterion_09_gamma_trend(capsys):
    t0 = time.perf_counter()

    def seqs(ee, ed, er):
        return rg.RegimeSequences(eps=rg.PowerSequence(2.0, ee),
                                  delta=rg.PowerSequence(2.0, ed),
                                  r=rg.PowerSequence(2.0, er), n=3, p=1.5)

    rep = rg.gamma_trend(seqs(-1.0, -5.0, -4.0), j_list=(2, 3, 4),
                         cell_N=(6.0, 12.0, 24.0), cell_resolution=0.08)
    vox = max(r["voxels"] for r in rep.rows)
    ok = (rep.nonincreasing_last3 and rep.final_gap < 0.15
          and vox <= 8_000_000 and not rep.warnings)

    sub = rg.gamma_trend(seqs(-1.0, -5.0, -6.0), j_list=(2, 3),
                         cell_N=(4.0, 8.0), cell_resolution=0.15)
    ok &= sub.regime_label == "trivial_decoupled"
    ok &= sub.gaps[-1] < sub.gaps[0] and sub.gaps[-1] < 0.10

    dt = time.perf_counter() - t0
    ok &= dt < 7200.0
    gaps = ", ".join(f"{g:.4f}" for g in rep.gaps)
    sgaps = ", ".join(f"{g:.4f}" for g in sub.gaps)
    report(capsys, 9, ok,
           f"infinite schedule gaps [{gaps}] non-increasing, final "
           f"{rep.final_gap:.2%} (tol 15%), {vox} voxels <= 8e6; sub-critical "
           f"energies -> 0 [{sgaps}]; {dt:.0f}s")


# ---------------------------------------------------------------------------
# 10. byte-identical re-runs through the CLI
# ---------------------------------------------------------------------------


CELL_RUN = """
command = "cell"

[density]
kind = "power"
m = 1
n = 4
p = 2.0

[geometry]
d = 3
N_list = [4.0, 8.0, 16.0]
resolution = 0.25

[cell]
regime = "infinite"
z = 1.0
"""


def test_criterion_10_deterministic_reruns(capsys, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(CELL_RUN)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli.run(str(cfg), out_dir=str(out)) == 0
        outs.append(out)
    same_csv = (outs[0] / "cell_values.csv").read_bytes() == \
        (outs[1] / "cell_values.csv").read_bytes()
    same_json = (outs[0] / "cell_result.json").read_bytes() == \
        (outs[1] / "cell_result.json").read_bytes()
    ma = json.loads((outs[0] / "run_manifest.json").read_text())
    mb = json.loads((outs[1] / "run_manifest.json").read_text())
    ma.pop("timing"), mb.pop("timing")
    ok = same_csv and same_json and ma == mb
    report(capsys, 10, ok,
           "independent re-runs of one config: CSV and JSON byte-identical, "
           "manifests equal outside the timing block")
