"""Scaling-regime algebra, the reduced limit functional, and the film probe.

A perforated bilayer is governed by three vanishing scales: layer thickness
delta, hole spacing eps, hole radius r.  Which interfacial density survives
in the thin-film limit depends on two limits only:

    ell = lim r/delta   (hole radius against thickness),
    R   = lim r^{n-1-p}/eps^{n-1}        (ell > 0), or
          lim r^{n-p}/(delta eps^{n-1})  (ell = 0),

with R in (0, infinity) the coupled regimes, R = 0 decoupling the layers and
R = infinity gluing them.  ``classify`` evaluates these limits symbolically
for power-law schedules and numerically for explicit sequences.

``assemble_limit`` evaluates the reduced functional: two membrane terms with
the relaxed reduced density plus R times the interfacial density of the jump.
``direct_film_energy`` evaluates the pre-limit energy (1/delta) int W(Du) on
a voxelized bilayer with the mid-plane duplicated outside the holes, and
``gamma_trend`` drives recovery-style fields through it to watch the gap to
the limit close along a schedule.  ``poincare_check`` verifies the
scale-invariance of the anisotropic Poincare ratio on thin boxes — the
inequality all compactness arguments here lean on.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import cell as ce
from . import energy as en
from . import solver as so

__all__ = [
    "PowerSequence",
    "RegimeSequences",
    "RegimeReport",
    "classify",
    "PhiTable",
    "assemble_limit",
    "FilmSpec",
    "FilmGrid",
    "FilmField",
    "build_film_grid",
    "direct_film_energy",
    "gamma_trend",
    "poincare_check",
]


# ---------------------------------------------------------------------------
# sequences and classification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerSequence:
    """Closed-form scale sequence a_j = base**(exponent * j)."""

    base: float
    exponent: float

    def __post_init__(self):
        if not self.base > 0.0 or self.base == 1.0:
            raise ValueError("base must be positive and different from 1")

    def value(self, j):
        return float(self.base) ** (self.exponent * j)

    @property
    def decay_rate(self):
        """rho with a_j = exp(-rho j); positive iff the sequence vanishes."""
        return -self.exponent * math.log(self.base)


def _as_sequence(x, name):
    if isinstance(x, PowerSequence):
        return x
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1 or arr.size < 3:
        raise ValueError(f"{name}: need a PowerSequence or at least 3 explicit terms")
    if np.any(arr <= 0.0):
        raise ValueError(f"{name}: scale sequences must be positive")
    return arr


def _numeric_limit(vals, name):
    """Limit of a positive sequence from its last terms (Richardson-style).

    Returns 0.0 / a finite positive number / math.inf; raises when the
    step-to-step log-ratio has not settled.
    """
    v = np.asarray(vals, dtype=float)[-6:]
    lr = np.diff(np.log(v))
    drift = abs(lr[-1] - lr[-2])
    if drift > max(0.25 * abs(lr[-1]), 1e-6):
        raise ValueError(f"{name} undefined: sequence ratio does not settle")
    lam = lr[-1]
    if lam < -1e-6:
        return 0.0
    if lam > 1e-6:
        return math.inf
    d1, d2 = v[-2] - v[-3], v[-1] - v[-2]
    if abs(d2 - d1) < 1e-12 * max(abs(v[-1]), 1e-300):
        return float(v[-1])
    return float(v[-1] - d2 * d2 / (d2 - d1))


@dataclass(frozen=True)
class RegimeSequences:
    """The three scale sequences (thickness, spacing, radius) and (n, p)."""

    eps: object
    delta: object
    r: object
    n: int
    p: float

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("need ambient dimension n >= 3")
        if not 1.0 < self.p < self.n - 1:
            raise ValueError(
                f"requires 1 < p < n-1 (n-1 = {self.n - 1}); got p={self.p}")
        for name in ("eps", "delta", "r"):
            object.__setattr__(self, name, _as_sequence(getattr(self, name), name))
        if not self.symbolic:
            sizes = {np.size(getattr(self, k)) for k in ("eps", "delta", "r")
                     if not isinstance(getattr(self, k), PowerSequence)}
            if len(sizes) > 1:
                raise ValueError("explicit sequences must share one length")
        # vanishing and separation-of-scales requirements
        if self.symbolic:
            for name in ("eps", "delta", "r"):
                if getattr(self, name).decay_rate <= 0.0:
                    raise ValueError(f"sequences must vanish: {name} does not tend to 0")
            if self.delta.decay_rate <= self.eps.decay_rate + 1e-12:
                raise ValueError("not a thin-film regime: delta/eps must vanish")
            if self.r.decay_rate <= self.eps.decay_rate + 1e-12:
                raise ValueError("holes do not separate: r/eps must vanish")
        else:
            js = self._js()
            if _numeric_limit(self.term_array("delta", js) / self.term_array("eps", js),
                              "delta/eps") != 0.0:
                raise ValueError("not a thin-film regime: delta/eps must vanish")
            if _numeric_limit(self.term_array("r", js) / self.term_array("eps", js),
                              "r/eps") != 0.0:
                raise ValueError("holes do not separate: r/eps must vanish")

    @property
    def symbolic(self):
        return all(isinstance(getattr(self, k), PowerSequence)
                   for k in ("eps", "delta", "r"))

    def _js(self):
        if self.symbolic:
            return np.arange(1, 9)
        n_terms = min(np.size(s) for s in (self.eps, self.delta, self.r)
                      if not isinstance(s, PowerSequence))
        return np.arange(n_terms)

    def term(self, j):
        """(eps_j, delta_j, r_j) for one index."""
        out = []
        for name in ("eps", "delta", "r"):
            s = getattr(self, name)
            out.append(s.value(j) if isinstance(s, PowerSequence) else float(s[j]))
        return tuple(out)

    def term_array(self, name, js):
        s = getattr(self, name)
        if isinstance(s, PowerSequence):
            return np.array([s.value(j) for j in js])
        return np.asarray(s, dtype=float)[js]


@dataclass
class RegimeReport:
    ell: float
    R_ell: float
    R_zero: float
    regime_label: str
    consistency: float
    symbolic: bool


def _classify_rate(zeta, tol=1e-12):
    """Limit of exp(-zeta j): 1 at zeta = 0, else 0 or infinity."""
    if abs(zeta) <= tol:
        return 1.0
    return 0.0 if zeta > 0.0 else math.inf


def classify(seq):
    """Scaling limits ell, R and the regime label for a schedule.

    Exponent-form schedules are classified exactly from the decay rates;
    explicit sequences go through numeric limits of the defining ratios
    (settling of the last log-ratios plus one Richardson step).
    """
    n, p = seq.n, seq.p
    if seq.symbolic:
        rho_e = seq.eps.decay_rate
        rho_d = seq.delta.decay_rate
        rho_r = seq.r.decay_rate
        ell = _classify_rate(rho_r - rho_d)
        R_ell = _classify_rate((n - 1 - p) * rho_r - (n - 1) * rho_e)
        R_zero = _classify_rate((n - p) * rho_r - rho_d - (n - 1) * rho_e)
    else:
        js = seq._js()
        e = seq.term_array("eps", js)
        d = seq.term_array("delta", js)
        r = seq.term_array("r", js)
        try:
            ell = _numeric_limit(r / d, "ell")
        except ValueError:
            raise ValueError("ell undefined: r/delta does not converge")
        R_ell = _numeric_limit(r ** (n - 1 - p) / e ** (n - 1), "R")
        R_zero = _numeric_limit(r ** (n - p) / (d * e ** (n - 1)), "R")

    R = R_zero if ell == 0.0 else R_ell
    if R == 0.0:
        label = "trivial_decoupled"
    elif math.isinf(R):
        label = "trivial_glued"
    elif math.isinf(ell):
        label = "infinite"
    elif ell == 0.0:
        label = "zero"
    else:
        label = "finite"

    consistency = float("nan")
    if 0.0 < ell < math.inf and 0.0 < R_ell < math.inf and 0.0 < R_zero < math.inf:
        consistency = abs(R_zero - ell * R_ell) / R_zero
    return RegimeReport(ell=ell, R_ell=R_ell, R_zero=R_zero, regime_label=label,
                        consistency=consistency, symbolic=seq.symbolic)


# ---------------------------------------------------------------------------
# the reduced limit functional
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhiTable:
    """Cached interfacial density: one solve reused across a whole field.

    For p-homogeneous surroundings phi(z) = |z|^p * phi(z/|z|), so a single
    unit value suffices (``unit_value``).  Otherwise a dense table over |z|
    is interpolated and never silently extrapolated.
    """

    p: float
    unit_value: float | None = None
    znorm_grid: tuple | None = None
    values: tuple | None = None

    def __post_init__(self):
        if (self.unit_value is None) == (self.znorm_grid is None):
            raise ValueError("provide either unit_value or a (znorm_grid, values) table")
        if self.znorm_grid is not None:
            g = np.asarray(self.znorm_grid, dtype=float)
            v = np.asarray(self.values, dtype=float)
            if g.size != v.size or g.size < 2 or np.any(np.diff(g) <= 0):
                raise ValueError("table grid must be increasing and match values")
            object.__setattr__(self, "znorm_grid", tuple(g))
            object.__setattr__(self, "values", tuple(v))

    def __call__(self, z):
        zn = np.linalg.norm(np.atleast_2d(np.asarray(z, dtype=float)), axis=-1) \
            if np.ndim(z) > 1 else np.abs(np.asarray(z, dtype=float))
        zn = np.atleast_1d(zn)
        if self.unit_value is not None:
            out = zn**self.p * self.unit_value
        else:
            g = np.asarray(self.znorm_grid)
            top = float(np.max(zn))
            if top > g[-1] * (1.0 + 1e-12):
                raise ValueError(
                    f"phi table covers |z| <= {g[-1]:g}; requested |z| = {top:g} — "
                    f"extend the table before assembling")
            out = np.interp(zn, g, np.asarray(self.values))
        return out if out.size > 1 else float(out[0])


def _cell_average(a):
    return 0.25 * (a[:-1, :-1] + a[1:, :-1] + a[:-1, 1:] + a[1:, 1:])


def assemble_limit(u_plus, u_minus, relaxed_density, R, phi, omega=(1.0, 1.0)):
    """Reduced bilayer energy of a pair of in-plane fields.

    ``u_plus``/``u_minus`` are corner arrays on a uniform grid over the
    rectangle ``omega`` (shape (gx, gy) scalar or (gx, gy, m)); the two
    membrane terms use ``relaxed_density`` on the cellwise gradients, and the
    interfacial term is R times ``phi`` of the cellwise jump, all by midpoint
    quadrature.
    """
    up = np.asarray(u_plus, dtype=float)
    um = np.asarray(u_minus, dtype=float)
    if up.shape != um.shape:
        raise ValueError("the two layer fields must share one grid")
    if up.ndim == 2:
        up = up[..., None]
        um = um[..., None]
    gx, gy, m = up.shape
    if gx < 2 or gy < 2:
        raise ValueError("need at least a 2x2 corner grid")
    if relaxed_density.m != m:
        raise ValueError(f"density has m={relaxed_density.m}, fields have m={m}")
    if relaxed_density.ncols != 2:
        raise ValueError("the membrane density must act on in-plane (m, 2) gradients")
    if not R >= 0.0:
        raise ValueError("R must be non-negative")
    Lx, Ly = float(omega[0]), float(omega[1])
    dx, dy = Lx / (gx - 1), Ly / (gy - 1)

    def grads(u):
        # cell-center gradient from corner differences (exact for bilinear)
        gxc = ((u[1:, :-1] - u[:-1, :-1]) + (u[1:, 1:] - u[:-1, 1:])) / (2 * dx)
        gyc = ((u[:-1, 1:] - u[:-1, :-1]) + (u[1:, 1:] - u[1:, :-1])) / (2 * dy)
        return np.stack([gxc, gyc], axis=-1)  # (cx, cy, m, 2)

    area = dx * dy
    Ep = float(np.sum(en.eval(relaxed_density, grads(up)))) * area
    Em = float(np.sum(en.eval(relaxed_density, grads(um)))) * area
    jump = _cell_average(up) - _cell_average(um)  # (cx, cy, m)
    phi_vals = np.asarray(phi(jump.reshape(-1, m)), dtype=float)
    return Ep + Em + float(R) * float(np.sum(phi_vals)) * area


# ---------------------------------------------------------------------------
# voxel film geometry and the direct pre-limit energy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FilmSpec:
    """One pre-limit bilayer: scales (eps, delta, r) on a rectangle omega.

    The in-plane axes carry uniform fine bands (spacing r/fine_factor,
    half-width band_factor*r) across every hole row/column, growing
    geometrically to the coarse cap h (default eps/6) in between; each layer
    has nz uniform voxel levels through its thickness.
    """

    eps: float
    delta: float
    r: float
    omega: tuple = (1.0, 1.0)
    h: float | None = None
    fine_factor: float = 3.0
    band_factor: float = 5.0
    growth: float = 1.4
    nz: int = 2

    def __post_init__(self):
        if min(self.eps, self.delta, self.r) <= 0.0:
            raise ValueError("scales must be positive")
        if not self.r < self.eps / 2.0:
            raise ValueError(f"holes must be disjoint: need r < eps/2, got r={self.r}, eps={self.eps}")
        if self.fine_factor < 2.0:
            raise ValueError("need at least 2 voxels across each hole radius (fine_factor >= 2)")
        if self.nz < 2:
            raise ValueError("need at least 2 voxel levels through each layer")
        if not self.growth > 1.0:
            raise ValueError("growth must exceed 1")
        if len(self.omega) != 2 or min(self.omega) <= 0.0:
            raise ValueError("omega must be a positive rectangle (Lx, Ly)")
        object.__setattr__(self, "omega", (float(self.omega[0]), float(self.omega[1])))

    @property
    def coarse(self):
        cap = self.eps / 6.0
        return min(float(self.h), cap) if self.h is not None else cap

    @property
    def fine(self):
        return self.r / self.fine_factor


def _marks(L, eps):
    """Interior hole-lattice coordinates along one axis."""
    k = np.arange(1, int(math.floor(L / eps - 1e-9)) + 1)
    return eps * k[(eps * k) < L * (1.0 - 1e-12)]


def _fill_gap(a, b, s_left, s_right, hmax, g):
    """Points strictly inside (a, b), steps growing geometrically inward.

    The initial step at each end is chosen by the caller: fine against a hole
    band, coarse against a free domain edge.
    """
    pts_l, pts_r = [], []
    xa, xb = a, b
    sl, sr = s_left, s_right
    while xb - xa > 1.6 * max(sl, sr):
        if sl <= sr:
            xa += sl
            pts_l.append(xa)
            sl = min(sl * g, hmax)
        else:
            xb -= sr
            pts_r.append(xb)
            sr = min(sr * g, hmax)
    return pts_l + pts_r[::-1]


def _film_axis(L, spec):
    marks = _marks(L, spec.eps)
    band = spec.band_factor * spec.r
    fine = spec.fine
    # merge overlapping fine intervals
    ivs = []
    for mk in marks:
        a, b = max(0.0, mk - band), min(L, mk + band)
        if ivs and a <= ivs[-1][1] + fine:
            ivs[-1] = (ivs[-1][0], b)
        else:
            ivs.append((a, b))
    pts = [0.0]
    cursor = 0.0
    for a, b in ivs:
        if a > cursor:
            pts.extend(_fill_gap(cursor, a,
                                 fine if cursor > 0.0 else spec.coarse, fine,
                                 spec.coarse, spec.growth))
            pts.append(a)
        nfine = max(1, int(round((b - max(a, cursor)) / fine)))
        seg = np.linspace(max(a, cursor), b, nfine + 1)[1:]
        pts.extend(seg.tolist())
        cursor = b
    if cursor < L:
        pts.extend(_fill_gap(cursor, L, fine, spec.coarse, spec.coarse,
                             spec.growth))
        pts.append(L)
    xs = np.array(pts)
    return xs


@dataclass
class FilmGrid:
    spec: FilmSpec
    xs: np.ndarray
    ys: np.ndarray
    zs: np.ndarray  # one layer's levels, 0 .. delta
    hole_centers: np.ndarray  # (K, 2)
    interior: np.ndarray  # (K,) bool: dist(center, boundary) > eps

    @property
    def n_voxels(self):
        return 2 * (self.xs.size - 1) * (self.ys.size - 1) * (self.zs.size - 1)


def build_film_grid(spec):
    Lx, Ly = spec.omega
    xs = _film_axis(Lx, spec)
    ys = _film_axis(Ly, spec)
    zs = np.linspace(0.0, spec.delta, spec.nz + 1)
    mx, my = _marks(Lx, spec.eps), _marks(Ly, spec.eps)
    if mx.size and my.size:
        centers = np.stack(np.meshgrid(mx, my, indexing="ij"), axis=-1).reshape(-1, 2)
    else:
        centers = np.zeros((0, 2))
    d_bnd = np.minimum.reduce([centers[:, 0], Lx - centers[:, 0],
                               centers[:, 1], Ly - centers[:, 1]]) if centers.size \
        else np.zeros((0,))
    return FilmGrid(spec=spec, xs=xs, ys=ys, zs=zs, hole_centers=centers,
                    interior=d_bnd > spec.eps)


@dataclass
class FilmField:
    """Corner values per layer: upper on z in [0, delta], lower on [-delta, 0].

    Index [..., 0] of ``upper`` and [..., -1] of ``lower`` both sit on the
    mid-plane; they are independent dofs outside the holes and must agree on
    corners inside a hole (the sieve admissibility constraint).
    """

    grid: FilmGrid
    upper: np.ndarray
    lower: np.ndarray

    def __post_init__(self):
        shape = (self.grid.xs.size, self.grid.ys.size, self.grid.zs.size)
        if self.upper.shape != shape or self.lower.shape != shape:
            raise ValueError(f"layer arrays must have corner shape {shape}")
        jump = self.upper[:, :, 0] - self.lower[:, :, -1]
        scale = max(float(np.max(np.abs(self.upper))), float(np.max(np.abs(self.lower))), 1.0)
        mask = _hole_corner_mask(self.grid)
        if np.any(np.abs(jump[mask]) > 1e-9 * scale):
            raise ValueError("field jumps inside holes (inadmissible)")


def _hole_corner_mask(grid):
    mask = np.zeros((grid.xs.size, grid.ys.size), dtype=bool)
    r = grid.spec.r
    for cx, cy in grid.hole_centers:
        ix0, ix1 = np.searchsorted(grid.xs, (cx - r, cx + r))
        iy0, iy1 = np.searchsorted(grid.ys, (cy - r, cy + r))
        X = grid.xs[ix0:ix1, None]
        Y = grid.ys[None, iy0:iy1]
        mask[ix0:ix1, iy0:iy1] |= (X - cx) ** 2 + (Y - cy) ** 2 < r * r
    return mask


def _layer_energy(u, xs, ys, zs, density):
    dx = np.diff(xs)
    dy = np.diff(ys)
    dz = np.diff(zs)
    area = dx[:, None] * dy[None, :]
    total = 0.0
    for k in range(dz.size):
        u0, u1 = u[:, :, k], u[:, :, k + 1]
        d0 = (u0[1:, :] - u0[:-1, :]) / dx[:, None]
        d1 = (u1[1:, :] - u1[:-1, :]) / dx[:, None]
        gx = 0.25 * ((d0[:, :-1] + d0[:, 1:]) + (d1[:, :-1] + d1[:, 1:]))
        e0 = (u0[:, 1:] - u0[:, :-1]) / dy[None, :]
        e1 = (u1[:, 1:] - u1[:, :-1]) / dy[None, :]
        gy = 0.25 * ((e0[:-1, :] + e0[1:, :]) + (e1[:-1, :] + e1[1:, :]))
        w = (u1 - u0) / dz[k]
        gz = 0.25 * (w[:-1, :-1] + w[1:, :-1] + w[:-1, 1:] + w[1:, 1:])
        G = np.stack([gx, gy, gz], axis=-1)[:, :, None, :]
        W = en.eval(density, G)
        total += float(np.sum(W * area)) * dz[k]
    return total


def direct_film_energy(spec, density, film):
    """(1/delta) int W(Du) over both voxel layers (one-point center gradients)."""
    if density.m != 1:
        raise ValueError("film energies are scalar-field only (m = 1)")
    if density.ncols != 3:
        raise ValueError("film density must act on (1, 3) gradients")
    if film.grid.spec != spec:
        raise ValueError("field grid does not match the film spec")
    g = film.grid
    E = _layer_energy(film.upper, g.xs, g.ys, g.zs, density)
    E += _layer_energy(film.lower, g.xs, g.ys, g.zs - spec.delta, density)
    return E / spec.delta


# ---------------------------------------------------------------------------
# recovery construction and the trend experiment
# ---------------------------------------------------------------------------


def _cell_profile(seq, rep, z, density, N_cap, cell_N, resolution, options):
    """Solve the regime-matched cell problem once; return (phi, sampler, N_used).

    The sampler maps (s, that) arrays — radial distance in hole radii and
    vertical coordinate in layer thicknesses, both from the mid-plane — to
    field values for one layer (sign +1 upper / -1 lower).
    """
    Ns = tuple(N for N in cell_N if N <= N_cap) or (float(max(2.0, N_cap)),)
    label = rep.regime_label
    regime = {"infinite": "infinite", "zero": "zero"}.get(label, "finite")
    if regime == "finite" and not (0.0 < rep.ell < math.inf):
        regime = "infinite" if math.isinf(rep.ell) else "zero"
    kw = dict(ell=rep.ell) if regime == "finite" else {}
    spec = ce.CellProblemSpec(regime=regime, z=float(z), d=seq.n - 1, p=seq.p,
                              density=density, N_list=Ns, resolution=resolution,
                              grading=1.15, far_grading=1.25,
                              solver=options or so.SolveOptions(), **kw)
    res = ce.solve_phi(spec, keep_fields=True)
    msh, fld = res.meshes[-1], res.fields[-1]
    S = msh.grids["S"]
    N_used = float(Ns[-1])

    if regime == "infinite":
        pu = fld[msh.grids["upper"], 0]
        pl = fld[msh.grids["lower"], 0]

        def sampler(s, that, sign):
            prof = pu if sign > 0 else pl
            return np.interp(np.clip(s, S[0], S[-1]), S, prof)
    else:
        T = msh.grids["T"]
        iu = RegularGridInterpolator((S, T), fld[msh.grids["upper"], 0],
                                     bounds_error=False, fill_value=None)
        il = RegularGridInterpolator((S, T), fld[msh.grids["lower"], 0],
                                     bounds_error=False, fill_value=None)
        # the caller hands in the vertical coordinate in the cell's own units
        # already (thickness-scaled for finite, radius-scaled for zero); the
        # finite thin-slab mesh lives on tau = that/ell
        t_scale = 1.0 / rep.ell if regime == "finite" else 1.0

        def sampler(s, that, sign, _iu=iu, _il=il):
            tq = np.clip(t_scale * np.asarray(that, dtype=float), T[0], T[-1])
            sq = np.clip(s, S[0], S[-1])
            pts = np.stack(np.broadcast_arrays(sq, tq), axis=-1)
            return (_iu if sign > 0 else _il)(pts)

    return res, sampler, N_used


@dataclass
class TrendReport:
    rows: list
    regime_label: str
    limit_energy: float
    phi_value: float
    R: float
    warnings: list

    @property
    def gaps(self):
        return [row["gap"] for row in self.rows]

    @property
    def nonincreasing_last3(self):
        g = self.gaps[-3:]
        return len(g) == 3 and g[0] >= g[1] - 1e-12 and g[1] >= g[2] - 1e-12

    @property
    def final_gap(self):
        return self.gaps[-1] if self.rows else float("nan")


def gamma_trend(seq, j_list, u_plus=1.0, u_minus=0.0, density=None,
                omega=(1.0, 1.0), budget=8_000_000, gamma=0.45,
                cell_N=(4.0, 8.0, 16.0), cell_resolution=0.08,
                solver_options=None, nz=None):
    """Recovery-field energies along a schedule against the limit functional.

    For each j the target constants (u_plus above, u_minus below) are blended
    through the rescaled cell minimizer inside every interior hole window
    (radius gamma*eps); boundary-adjacent holes get a one-layer capacitary
    bridge so the field stays admissible.  The direct film energy is compared
    with R * phi(u_plus - u_minus) * |omega|; the relative gap should shrink
    along the schedule (absolute energy, for schedules whose limit decouples
    to 0).
    """
    rep = classify(seq)
    if rep.regime_label == "trivial_glued":
        raise ValueError("R diverges along this schedule: no finite limit to compare against")
    dens = density if density is not None else en.EnergyDensity(m=1, n=seq.n, p=seq.p)
    if dens.m != 1:
        raise ValueError("the trend experiment is scalar-field only (m = 1)")
    u_plus, u_minus = float(u_plus), float(u_minus)
    z = u_plus - u_minus
    warnings = []

    R = rep.R_zero if rep.ell == 0.0 else rep.R_ell
    area = float(omega[0]) * float(omega[1])

    if z == 0.0:
        table = PhiTable(p=seq.p, unit_value=0.0)
        phi_z = 0.0
        cell_res = None
        sampler = None
        N_used = max(cell_N)
    else:
        eps0, _, r0 = seq.term(min(j_list))
        N_cap = gamma * eps0 / r0
        if N_cap < 2.0:
            raise ValueError("holes too large for a recovery window: gamma*eps/r < 2")
        cell_res, sampler, N_used = _cell_profile(
            seq, rep, z, dens, N_cap, cell_N, cell_resolution, solver_options)
        phi_z = cell_res.phi_extrapolated
        table = PhiTable(p=seq.p, unit_value=phi_z / abs(z) ** seq.p)

    up8 = np.full((9, 9), u_plus)
    lo8 = np.full((9, 9), u_minus)
    membrane = en.ReducedDensity(base=dens, mode="wbar")
    if not membrane.is_convex:
        membrane = en.EnvelopeApprox(base=membrane, depth=1)
    E_lim = assemble_limit(up8, lo8, membrane, R, table, omega=omega)

    rows = []
    for j in sorted(j_list):
        eps_j, delta_j, r_j = seq.term(j)
        layers_nz = nz if nz is not None else (2 if rep.regime_label == "infinite" else 6)
        fspec = FilmSpec(eps=eps_j, delta=delta_j, r=r_j, omega=tuple(omega),
                         nz=layers_nz)
        grid = build_film_grid(fspec)
        if grid.n_voxels > budget:
            warnings.append(
                f"schedule truncated at j={j}: {grid.n_voxels} voxels exceed the "
                f"budget {budget}")
            break
        film = _recovery_field(grid, u_plus, u_minus, sampler, N_used, gamma,
                               seq, rep)
        E_j = direct_film_energy(fspec, dens, film)
        gap = abs(E_j - E_lim) / E_lim if E_lim > 0.0 else E_j
        rows.append(dict(j=int(j), eps=eps_j, delta=delta_j, r=r_j,
                         fine_h=fspec.fine, voxels=int(grid.n_voxels),
                         film_energy=E_j, limit_energy=E_lim, gap=gap))
    if not rows:
        raise ValueError("no schedule entry fits the voxel budget")
    return TrendReport(rows=rows, regime_label=rep.regime_label,
                       limit_energy=E_lim, phi_value=phi_z, R=R,
                       warnings=warnings)


def _radial_bridge(s, S_out, d, p):
    """Capacitary ramp: 0 on the hole (s <= 1), 1 beyond S_out, p-harmonic between."""
    q = (d - 1.0) / (p - 1.0)
    s = np.clip(s, 1.0, S_out)
    if abs(q - 1.0) < 1e-12:
        return np.log(s) / math.log(S_out)
    return (1.0 - s ** (1.0 - q)) / (1.0 - S_out ** (1.0 - q))


def _recovery_field(grid, u_plus, u_minus, sampler, N_used, gamma, seq, rep):
    spec = grid.spec
    z = u_plus - u_minus
    shape = (grid.xs.size, grid.ys.size, grid.zs.size)
    upper = np.full(shape, u_plus)
    lower = np.full(shape, u_minus)
    if z == 0.0:
        return FilmField(grid=grid, upper=upper, lower=lower)

    # vertical coordinate in the cell's own units: layer thicknesses for the
    # finite slab, hole radii for the zero-regime tall box
    that = grid.zs / (spec.r if rep.ell == 0.0 else spec.delta)
    window = min(gamma * spec.eps, N_used * spec.r)
    for (cx, cy), inside in zip(grid.hole_centers, grid.interior):
        ix0, ix1 = np.searchsorted(grid.xs, (cx - window, cx + window))
        iy0, iy1 = np.searchsorted(grid.ys, (cy - window, cy + window))
        X = grid.xs[ix0:ix1, None]
        Y = grid.ys[None, iy0:iy1]
        s = np.sqrt((X - cx) ** 2 + (Y - cy) ** 2) / spec.r
        if inside:
            for k, tk in enumerate(that):
                upper[ix0:ix1, iy0:iy1, k] = u_minus + sampler(s, tk, +1)
            for k, tk in enumerate(that[::-1]):
                lower[ix0:ix1, iy0:iy1, k] = u_minus + sampler(s, tk, -1)
            # the mid-plane trace is shared through the open hole; interpolating
            # next to the (duplicated) rim node would leak the layers' slit
            # values into the hole, so symmetrize both layers onto the average
            mu = upper[ix0:ix1, iy0:iy1, 0]
            ml = lower[ix0:ix1, iy0:iy1, -1]
            hole = s < 1.0
            mid = 0.5 * (mu[hole] + ml[hole])
            mu[hole] = mid
            ml[hole] = mid
        else:
            # one-layer capacitary bridge from the lower constant to the upper
            # one.  When the cell is a tall box (ell -> 0) the hole's far field
            # lives in d+1 dimensions and an in-plane ramp would overpay by
            # delta/r, so ramp radially in (s, x_n/r); otherwise in-plane.
            S_out = max(window / spec.r, 2.0)
            if rep.ell == 0.0:
                for k, tk in enumerate(that):
                    rho = np.sqrt(s * s + tk * tk)
                    upper[ix0:ix1, iy0:iy1, k] = u_minus + z * _radial_bridge(
                        rho, S_out, seq.n, seq.p)
            else:
                ramp = u_minus + z * _radial_bridge(s, S_out, seq.n - 1, seq.p)
                upper[ix0:ix1, iy0:iy1, :] = ramp[:, :, None]
    return FilmField(grid=grid, upper=upper, lower=lower)


# ---------------------------------------------------------------------------
# rescaled Poincare check
# ---------------------------------------------------------------------------


def _default_profiles():
    return (
        ("affine-x1", lambda x, y, t: x),
        ("sine-plane", lambda x, y, t: np.sin(np.pi * x) * np.sin(np.pi * y)),
        ("tilt-xz", lambda x, y, t: x * (t - 0.5)),
        ("bump", lambda x, y, t: np.exp(-4.0 * ((x - 0.5) ** 2 + (y - 0.5) ** 2))
                                 * (1.0 + 0.5 * t)),
    )


def _shape_masks(shape, nx):
    mids = (np.arange(nx) + 0.5) / nx
    X, Y = np.meshgrid(mids, mids, indexing="ij")
    if shape == "square":
        A = np.ones_like(X, dtype=bool)
        B = A
    elif shape == "ball":
        A = (X - 0.5) ** 2 + (Y - 0.5) ** 2 < 0.25
        B = A
    elif shape == "annulus_in_square":
        A = np.ones_like(X, dtype=bool)
        rr = np.sqrt((X - 0.5) ** 2 + (Y - 0.5) ** 2)
        B = (rr > 0.2) & (rr < 0.4)
    else:
        raise ValueError(f"unknown shape {shape!r}; use square, ball or annulus_in_square")
    return X, Y, A, B


@dataclass
class PoincareReport:
    shape: str
    p: float
    ratios: dict  # (rho, delta) -> max ratio over profiles
    per_profile: dict  # name -> ratio at the first (rho, delta)
    max_ratio: float
    spread: float


def poincare_check(shape="square", p=2.0, rho_list=(1.0, 0.1, 0.01, 1e-3),
                   delta_list=(1.0, 0.1, 0.01), resolution=24, profiles=None):
    """Empirical constant of the anisotropic thin-box mean-deviation bound.

    For each (rho, delta) the fixed unit profiles are rescaled onto
    rho*A x (0, delta) and the ratio int |u - mean|^p over
    int (rho^p |D_plane u|^p + delta^p |D_thick u|^p) is evaluated by midpoint
    quadrature with central differences.  The rescaling cancels exactly, so
    the reported spread across scales measures numerical noise only — the
    bound's constant depends on the cross-section alone.
    """
    profs = profiles if profiles is not None else _default_profiles()
    nx = int(resolution)
    nz = max(4, nx // 3)
    X, Y, A, B = _shape_masks(shape, nx)
    tm = (np.arange(nz) + 0.5) / nz

    ratios = {}
    per_profile = {}
    for rho in rho_list:
        for delta in delta_list:
            worst = 0.0
            for name, f in profs:
                U = f(X[:, :, None], Y[:, :, None], tm[None, None, :])
                U = np.broadcast_to(U, (nx, nx, nz)).astype(float)
                hx = rho / nx
                hz = delta / nz
                mean = U[B, :].mean()
                lhs = np.abs(U - mean) ** p
                gx = np.gradient(U, hx, axis=0)
                gy = np.gradient(U, hx, axis=1)
                gt = np.gradient(U, hz, axis=2)
                rhs = (rho**p * (np.sqrt(gx**2 + gy**2)) ** p
                       + delta**p * np.abs(gt) ** p)
                num = float(lhs[A, :].sum())
                den = float(rhs[A, :].sum())
                ratio = num / den if den > 0.0 else 0.0
                worst = max(worst, ratio)
                if (rho, delta) == (rho_list[0], delta_list[0]):
                    per_profile[name] = ratio
            ratios[(rho, delta)] = worst
    vals = np.array(list(ratios.values()))
    spread = float((vals.max() - vals.min()) / vals.max()) if vals.max() > 0 else 0.0
    return PoincareReport(shape=shape, p=p, ratios=ratios, per_profile=per_profile,
                          max_ratio=float(vals.max()), spread=spread)
