"""Stored energy densities with p-growth, and their relaxation machinery.

A density W acts on m-by-k matrices (deformation gradients, k = n columns for
bulk densities, k = n-1 for in-plane reduced ones).  Everything downstream --
cell problems, membrane energies, film energies -- only needs three things
from a density: batched evaluation, batched gradients, and the growth
constants (exponent p, upper constant beta).  Four kinds ship:

    power        W(F) = c * |F|^p                  (Frobenius norm)
    anisotropic  W(F) = c * |M F|^p                (M an m-by-m weight matrix)
    double_well  W(F) = c * min(|F - A|^p, |F + A|^p)
    sum          W(F) = sum of the above

The double well is the stock non-convex example for relaxation demos; it
cannot vanish at F = 0 and therefore never passes validate_growth (which is
the point -- cell problems require a validated density).

Regularization: for 1 < p < 2 the kernel |G|^p has a gradient singularity at
G = 0; each kernel is smoothed to (|G|^2 + eps^2)^{p/2} - eps^p when
reg_eps = eps > 0.  Solvers drive eps down a continuation schedule and report
final energies unregularized.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EnergyDensity",
    "ReducedDensity",
    "EnvelopeApprox",
    "GrowthReport",
    "GLimitResult",
    "eval",
    "gradient",
    "validate_growth",
    "reduce_wbar",
    "laminate_envelope",
    "g_limit",
]

_KINDS = ("power", "anisotropic", "double_well", "sum")


def _as_locked(arr, shape, name):
    a = np.array(arr, dtype=float)
    if a.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {a.shape}")
    a.setflags(write=False)
    return a


def _norm_sq(G):
    """Squared Frobenius norm over the trailing two axes."""
    return np.einsum("...ij,...ij->...", G, G)


def _kernel(nsq, p, eps):
    """(|G|^2 + eps^2)^{p/2} - eps^p, evaluated from the squared norm."""
    if eps > 0.0:
        return (nsq + eps * eps) ** (0.5 * p) - eps**p
    return nsq ** (0.5 * p)


def _kernel_factor(nsq, p, eps):
    """d/dG of the kernel is factor * G; this is the scalar factor.

    For p >= 2 the unregularized factor p*|G|^{p-2} extends continuously by 0
    (by p if p == 2) at G = 0; numpy's 0**0 == 1 convention makes the single
    expression below correct in every case that is allowed to reach it.
    """
    if eps > 0.0:
        return p * (nsq + eps * eps) ** (0.5 * p - 1.0)
    return p * nsq ** (0.5 * p - 1.0)


@dataclass(frozen=True, eq=False)
class EnergyDensity:
    """A stored energy density W on m-by-n matrices with p-growth.

    ``coeff`` scales the whole density (summands carry their weights here);
    ``matrix`` is the anisotropy weight for kind="anisotropic"; ``well`` is
    the offset A for kind="double_well"; ``terms`` holds the summands for
    kind="sum" (their m, n must match).  ``beta`` is the declared upper growth
    constant in W <= beta * (|F|^p + 1).
    """

    m: int
    n: int
    p: float
    kind: str = "power"
    coeff: float = 1.0
    matrix: np.ndarray | None = None
    well: np.ndarray | None = None
    terms: tuple["EnergyDensity", ...] = ()
    beta: float = 1.0
    reg_eps: float = 0.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown density kind {self.kind!r}; expected one of {_KINDS}")
        if self.m < 1 or self.n < 1:
            raise ValueError(f"matrix shape ({self.m}, {self.n}) must be at least (1, 1)")
        if not self.p > 1.0:
            raise ValueError(f"growth exponent must satisfy p > 1, got p={self.p}")
        if self.beta < 1.0:
            raise ValueError(f"upper growth constant must satisfy beta >= 1, got {self.beta}")
        if self.coeff <= 0.0:
            raise ValueError(f"coeff must be positive, got {self.coeff}")
        if self.reg_eps < 0.0:
            raise ValueError(f"reg_eps must be nonnegative, got {self.reg_eps}")
        if self.kind == "anisotropic":
            if self.matrix is None:
                raise ValueError("anisotropic density requires a weight matrix")
            object.__setattr__(self, "matrix", _as_locked(self.matrix, (self.m, self.m), "matrix"))
        if self.kind == "double_well":
            if self.well is None:
                raise ValueError("double_well density requires a well offset")
            object.__setattr__(self, "well", _as_locked(self.well, (self.m, self.n), "well"))
        if self.kind == "sum":
            if not self.terms:
                raise ValueError("sum density requires at least one term")
            for t in self.terms:
                if (t.m, t.n) != (self.m, self.n):
                    raise ValueError(
                        f"sum term shape ({t.m}, {t.n}) differs from ({self.m}, {self.n})"
                    )

    # -- structural properties -------------------------------------------

    @property
    def ncols(self):
        return self.n

    @property
    def is_convex(self):
        if self.kind == "double_well":
            return False
        if self.kind == "sum":
            return all(t.is_convex for t in self.terms)
        return True

    @property
    def radially_reducible(self):
        """True when W(F) depends on F only through row-wise inner products.

        Such densities (|F|^p, |MF|^p and sums thereof) are invariant under
        F -> F Q for orthogonal Q acting on the columns, which is what the
        axisymmetric reduction needs.  The double well breaks it.
        """
        if self.kind == "double_well":
            return False
        if self.kind == "sum":
            return all(t.radially_reducible for t in self.terms)
        return True

    def with_reg(self, eps):
        new_terms = tuple(t.with_reg(eps) for t in self.terms)
        return dataclasses.replace(self, reg_eps=float(eps), terms=new_terms)

    def describe(self):
        d = {"kind": self.kind, "m": self.m, "n": self.n, "p": self.p,
             "coeff": self.coeff, "beta": self.beta}
        if self.matrix is not None:
            d["matrix"] = self.matrix.tolist()
        if self.well is not None:
            d["well"] = self.well.tolist()
        if self.terms:
            d["terms"] = [t.describe() for t in self.terms]
        return d

    # -- evaluation --------------------------------------------------------

    def _eval_batch(self, G):
        """W on a batch of matrices, shape (..., m, k) for any k >= 1.

        The column count is deliberately not pinned to n here: axisymmetric
        reduction evaluates the same density on collapsed (m, 2) gradients.
        Shape strictness for user input lives in eval().
        """
        G = np.asarray(G, dtype=float)
        if self.kind == "power":
            return self.coeff * _kernel(_norm_sq(G), self.p, self.reg_eps)
        if self.kind == "anisotropic":
            MG = np.einsum("ab,...bk->...ak", self.matrix, G)
            return self.coeff * _kernel(_norm_sq(MG), self.p, self.reg_eps)
        if self.kind == "double_well":
            lo = _kernel(_norm_sq(G - self.well), self.p, self.reg_eps)
            hi = _kernel(_norm_sq(G + self.well), self.p, self.reg_eps)
            return self.coeff * np.minimum(lo, hi)
        return sum(t._eval_batch(G) for t in self.terms)

    def _grad_batch(self, G):
        """dW/dF on a batch, same shape as G.  Requires differentiability."""
        G = np.asarray(G, dtype=float)
        if self.p < 2.0 and self.reg_eps == 0.0:
            nsq = _norm_sq(G if self.kind != "anisotropic"
                           else np.einsum("ab,...bk->...ak", self.matrix, G))
            if self.kind == "double_well":
                nsq = np.minimum(_norm_sq(G - self.well), _norm_sq(G + self.well))
            if np.any(nsq == 0.0):
                raise ValueError(
                    "non-differentiable point: vanishing argument with p < 2 "
                    "and reg_eps = 0 (set reg_eps > 0)"
                )
        if self.kind == "power":
            f = _kernel_factor(_norm_sq(G), self.p, self.reg_eps)
            return self.coeff * f[..., None, None] * G
        if self.kind == "anisotropic":
            MG = np.einsum("ab,...bk->...ak", self.matrix, G)
            f = _kernel_factor(_norm_sq(MG), self.p, self.reg_eps)
            return self.coeff * f[..., None, None] * np.einsum(
                "ba,...bk->...ak", self.matrix, MG
            )
        if self.kind == "double_well":
            Glo = G - self.well
            Ghi = G + self.well
            lo = _norm_sq(Glo)
            hi = _norm_sq(Ghi)
            take_lo = (lo <= hi)[..., None, None]
            nsq = np.minimum(lo, hi)
            f = _kernel_factor(nsq, self.p, self.reg_eps)
            return self.coeff * f[..., None, None] * np.where(take_lo, Glo, Ghi)
        return sum(t._grad_batch(G) for t in self.terms)


def _check_shape(density, F):
    F = np.asarray(F, dtype=float)
    want = (density.m, density.ncols)
    if F.shape[-2:] != want:
        raise ValueError(
            f"shape mismatch: expected (..., {want[0]}, {want[1]}), got {F.shape}"
        )
    return F


def eval(density, F):  # noqa: A001 - the operation is called eval
    """Evaluate the density at one matrix (or a batch of them)."""
    F = _check_shape(density, F)
    out = density._eval_batch(F)
    return float(out) if out.ndim == 0 else out


def gradient(density, F):
    """dW/dF at F.  For p < 2 a positive reg_eps is required near kernels' zeros."""
    F = _check_shape(density, F)
    return density._grad_batch(F)


# ---------------------------------------------------------------------------
# growth validation
# ---------------------------------------------------------------------------


@dataclass
class GrowthReport:
    passed: bool
    w_zero: float
    lower_ok: bool
    upper_ok: bool
    zero_ok: bool
    beta_empirical: float
    lipschitz_empirical: float
    n_samples: int
    violations: list


def _sample_matrices(m, n, radius, n_samples, rng):
    """Deterministic corner cases plus a seeded ball sample."""
    mats = [np.zeros((m, n))]
    for i in range(m):
        for j in range(n):
            if len(mats) > 40:
                break
            E = np.zeros((m, n))
            E[i, j] = 1.0
            mats.append(E)
            mats.append(radius * E)
    a = np.ones(m) / math.sqrt(m)
    b = np.ones(n) / math.sqrt(n)
    mats.append(np.outer(a, b))
    mats.append(radius * np.outer(a, b))
    k = max(0, n_samples - len(mats))
    G = rng.standard_normal((k, m, n))
    norms = np.sqrt(_norm_sq(G))
    norms[norms == 0.0] = 1.0
    radii = radius * rng.random(k) ** (1.0 / (m * n))
    G *= (radii / norms)[:, None, None]
    return np.concatenate([np.stack(mats), G], axis=0)


def validate_growth(density, n_samples=200, radius=10.0, seed=0,
                    m=None, n=None, p=None, beta=None):
    """Check p-growth, W(0)=0, and estimate the p-Lipschitz constant.

    ``density`` may be an EnergyDensity or any callable F -> W(F); for a bare
    callable the shape and growth parameters must be passed explicitly.
    """
    if callable(density) and not isinstance(density, EnergyDensity):
        W = lambda F: float(density(F))  # noqa: E731
        if None in (m, n, p, beta):
            raise ValueError("callable densities need explicit m, n, p, beta")
    else:
        W = lambda F: float(eval(density, F))  # noqa: E731
        m, n, p, beta = density.m, density.n, density.p, density.beta

    rng = np.random.default_rng(seed)
    mats = _sample_matrices(m, n, radius, n_samples, rng)
    vals = np.array([W(F) for F in mats])
    norms_p = _norm_sq(mats) ** (0.5 * p)

    tol = 1e-9 * (1.0 + np.abs(vals))
    low_bad = vals < norms_p - 1.0 - tol
    upp_bad = vals > beta * (norms_p + 1.0) + tol
    w0 = W(np.zeros((m, n)))

    violations = []
    for i in np.nonzero(low_bad)[0][:5]:
        violations.append(f"lower growth fails at |F|={norms_p[i] ** (1 / p):.4g}: "
                          f"W={vals[i]:.4g} < |F|^p - 1 = {norms_p[i] - 1:.4g}")
    for i in np.nonzero(upp_bad)[0][:5]:
        violations.append(f"upper growth fails at |F|={norms_p[i] ** (1 / p):.4g}: "
                          f"W={vals[i]:.4g} > beta(|F|^p + 1) = {beta * (norms_p[i] + 1):.4g}")
    zero_ok = abs(w0) <= 1e-12
    if not zero_ok:
        violations.append(f"W(0) = {w0:.6g} != 0")

    # p-Lipschitz constant on consecutive sample pairs
    A, B = mats[:-1], mats[1:]
    dW = np.abs(vals[:-1] - vals[1:])
    dF = np.sqrt(_norm_sq(A - B))
    weight = dF * (1.0 + _norm_sq(A) ** (0.5 * (p - 1)) + _norm_sq(B) ** (0.5 * (p - 1)))
    keep = dF > 1e-12
    lip = float(np.max(dW[keep] / weight[keep])) if np.any(keep) else 0.0

    return GrowthReport(
        passed=zero_ok and not (low_bad.any() or upp_bad.any()),
        w_zero=w0,
        lower_ok=not low_bad.any(),
        upper_ok=not upp_bad.any(),
        zero_ok=zero_ok,
        beta_empirical=float(np.max(vals / (norms_p + 1.0))),
        lipschitz_empirical=lip,
        n_samples=len(mats),
        violations=violations,
    )


# ---------------------------------------------------------------------------
# reduction over the last column (membrane densities)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ReducedDensity:
    """Inf over the last gradient column: Wbar(Fbar) = inf_z W((Fbar | z)).

    Acts on m-by-(n-1) matrices.  mode records what the base represents:
    "wbar" reduces the bulk density, "gbar" a scaling-limit density g; the
    algorithm is the same.  The generic engine is a refined grid search (see
    reduce_wbar); for the shipped convex-in-z kinds the infimum is attained
    at z = 0 and an analytic fast path is used inside solver loops -- the two
    routes are cross-checked in the test-suite, not assumed.
    """

    base: EnergyDensity
    mode: str = "wbar"
    grid_points: int = 17
    refine_depth: int = 6
    tol: float = 1e-9

    def __post_init__(self):
        if self.mode not in ("wbar", "gbar"):
            raise ValueError(f"mode must be 'wbar' or 'gbar', got {self.mode!r}")
        if self.base.n < 2:
            raise ValueError("reduction needs at least two columns in the base density")
        if self.grid_points < 5:
            raise ValueError("grid_points must be at least 5")

    @property
    def m(self):
        return self.base.m

    @property
    def ncols(self):
        return self.base.n - 1

    @property
    def p(self):
        return self.base.p

    @property
    def beta(self):
        return self.base.beta

    @property
    def reg_eps(self):
        return self.base.reg_eps

    @property
    def is_convex(self):
        return self.base.is_convex

    @property
    def radially_reducible(self):
        return self.base.radially_reducible

    @property
    def analytic_reduction(self):
        """Whether inf_z is known in closed form for this base kind."""
        return self.base.kind in ("power", "anisotropic", "double_well") or (
            self.base.kind == "sum" and self.base.is_convex
        )

    def with_reg(self, eps):
        return dataclasses.replace(self, base=self.base.with_reg(eps))

    def describe(self):
        return {"reduced": self.base.describe(), "mode": self.mode}

    def _pad(self, Fbar, z=None):
        Fbar = np.asarray(Fbar, dtype=float)
        pad = np.zeros(Fbar.shape[:-1] + (1,)) if z is None else z[..., None]
        return np.concatenate([Fbar, pad], axis=-1)

    def _eval_batch(self, Fbar):
        if self.analytic_reduction:
            # z = 0 is optimal for every convex shipped kind; for the double
            # well it is optimal branch-wise (each branch is minimized by
            # z = the matching well column, giving the reduced-well minimum).
            if self.base.kind == "double_well":
                r = dataclasses.replace(
                    self.base, n=self.base.n - 1, well=self.base.well[:, :-1]
                )
                return r._eval_batch(np.asarray(Fbar, dtype=float))
            return self.base._eval_batch(self._pad(Fbar))
        Fbar = np.asarray(Fbar, dtype=float)
        flat = Fbar.reshape((-1,) + Fbar.shape[-2:])
        out = np.array([reduce_wbar(self, F) for F in flat])
        return out.reshape(Fbar.shape[:-2])

    def _grad_batch(self, Fbar):
        """Envelope (Danskin) gradient: d/dFbar W((Fbar | z*)) at the optimal z*."""
        if self.analytic_reduction:
            if self.base.kind == "double_well":
                r = dataclasses.replace(
                    self.base, n=self.base.n - 1, well=self.base.well[:, :-1]
                )
                return r._grad_batch(np.asarray(Fbar, dtype=float))
            return self.base._grad_batch(self._pad(Fbar))[..., :-1]
        Fbar = np.asarray(Fbar, dtype=float)
        flat = Fbar.reshape((-1,) + Fbar.shape[-2:])
        grads = []
        for F in flat:
            z = _wbar_argmin(self, F)
            grads.append(self.base._grad_batch(self._pad(F, z))[..., :-1])
        return np.stack(grads).reshape(Fbar.shape)


def _wbar_span(reduced, Fbar):
    """Provable search radius: any minimizer z* has
    |z*|^p <= W((Fbar|0)) + 1 <= beta(|Fbar|^p + 1) + 1, from the growth bounds."""
    p, beta = reduced.p, reduced.beta
    fn = math.sqrt(float(_norm_sq(np.asarray(Fbar, dtype=float))))
    return 1.05 * (beta * (fn**p + 1.0) + 1.0) ** (1.0 / p)


def _wbar_argmin(reduced, Fbar):
    base = reduced.base
    m = base.m
    S = _wbar_span(reduced, Fbar)
    K = reduced.grid_points
    while K**m > 2e5 and K > 5:
        K -= 2

    unit = np.linspace(-1.0, 1.0, K)
    center = np.zeros(m)
    half = S
    best_z = None
    best_v = math.inf
    for depth in range(reduced.refine_depth + 1):
        grids = np.meshgrid(*[center[i] + half * unit for i in range(m)], indexing="ij")
        Z = np.stack([g.ravel() for g in grids], axis=-1)  # (K^m, m)
        Fb = np.broadcast_to(np.asarray(Fbar, dtype=float), (Z.shape[0], m, reduced.ncols))
        cand = np.concatenate([Fb, Z[:, :, None]], axis=-1)
        vals = base._eval_batch(cand)
        k = int(np.argmin(vals))
        v = float(vals[k])
        if depth == 0 and np.max(np.abs(Z[k])) >= S - 1e-12:
            raise ValueError(
                "reduction minimizer landed on the search-span boundary; "
                "the density violates its declared growth bounds"
            )
        if v < best_v:
            best_v, best_z = v, Z[k]
        center = best_z
        half *= 2.0 / (K - 1)
    return best_z


def reduce_wbar(reduced, Fbar):
    """Wbar(Fbar) by refined grid search over the missing column."""
    Fbar = np.asarray(Fbar, dtype=float)
    want = (reduced.m, reduced.ncols)
    if Fbar.shape != want:
        raise ValueError(f"shape mismatch: expected {want}, got {Fbar.shape}")
    z = _wbar_argmin(reduced, Fbar)
    return float(reduced.base._eval_batch(reduced._pad(Fbar, z)))


# ---------------------------------------------------------------------------
# lamination envelope
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EnvelopeApprox:
    """Iterated-lamination upper envelope of a density.

    Level k+1 improves level k by rank-one splits
        inf over (a, b, s, t) of  t * E_k(F + (1-t) s a b^T)
                                + (1-t) * E_k(F - t s a b^T),
    always keeping E_k(F) itself as a candidate, so the levels decrease by
    construction.  Direction/amplitude budgets shrink with height in the
    recursion (the bottom level keeps the full budget and a local (t, s)
    refinement); deterministic throughout.
    """

    base: EnergyDensity | ReducedDensity
    depth: int = 1
    direction_budget: int = 8
    amplitude_points: int = 9
    t_points: int = 5
    refine_rounds: int = 2

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be at least 1")
        if self.direction_budget < 1 or self.amplitude_points < 3 or self.t_points < 1:
            raise ValueError("envelope budgets are too small to do anything")

    @property
    def m(self):
        return self.base.m

    @property
    def ncols(self):
        return self.base.ncols

    @property
    def p(self):
        return self.base.p

    @property
    def beta(self):
        return self.base.beta

    @property
    def reg_eps(self):
        return self.base.reg_eps

    @property
    def is_convex(self):
        return self.base.is_convex

    @property
    def radially_reducible(self):
        # a lamination pass is direction-dependent; keep full gradients
        return False

    def with_reg(self, eps):
        return dataclasses.replace(self, base=self.base.with_reg(eps))

    def describe(self):
        return {"envelope_of": self.base.describe(), "depth": self.depth}

    def _directions(self):
        m, d = self.m, self.ncols
        pairs = []
        well = getattr(self.base, "well", None)
        if well is None and isinstance(self.base, ReducedDensity):
            w = self.base.base.well
            well = None if w is None else w[:, :-1]
        if well is not None and np.any(well):
            U, s, Vt = np.linalg.svd(np.asarray(well, dtype=float))
            pairs.append((U[:, 0], Vt[0]))
        for i in range(m):
            for j in range(d):
                a = np.zeros(m)
                a[i] = 1.0
                b = np.zeros(d)
                b[j] = 1.0
                pairs.append((a, b))
        k = 0
        golden = math.pi * (3.0 - math.sqrt(5.0))
        while len(pairs) < self.direction_budget:
            theta = golden * (k + 1)
            a = np.cos(theta * (1 + np.arange(m))) if m > 1 else np.ones(1)
            b = np.sin(theta * (1 + np.arange(d)) + 0.7)
            na, nb = np.linalg.norm(a), np.linalg.norm(b)
            if na > 1e-12 and nb > 1e-12:
                pairs.append((a / na, b / nb))
            k += 1
        return pairs[: self.direction_budget]

    def _budget(self, level):
        """Budgets for a split performed at ``level`` above the base (1 = bottom)."""
        shrink = 2 ** (level - 1)
        D = max(2, -(-self.direction_budget // shrink))
        S = max(3, -(-self.amplitude_points // shrink) | 1)
        T = max(1, -(-self.t_points // shrink) | 1)
        return D, T, S

    def _well_norm(self):
        well = getattr(self.base, "well", None)
        if well is None and isinstance(self.base, ReducedDensity):
            w = self.base.base.well
            well = None if w is None else w[:, :-1]
        return 0.0 if well is None else float(np.sqrt(_norm_sq(np.asarray(well))))

    def _eval_level(self, F, level):
        """Envelope at the given level on a batch (..., m, d)."""
        F = np.asarray(F, dtype=float)
        if level == 0:
            return self.base._eval_batch(F)
        batch = F.shape[:-2]
        nb = int(np.prod(batch)) if batch else 1
        if nb > 32768:  # keep the candidate tensors bounded in memory
            flat = F.reshape((-1,) + F.shape[-2:])
            parts = [self._eval_level(flat[i : i + 32768], level)
                     for i in range(0, nb, 32768)]
            return np.concatenate(parts).reshape(batch)
        prev = self._eval_level(F, level - 1)

        D, Tn, Sn = self._budget(level)
        dirs = self._directions()[:D]
        rank1 = np.stack([np.outer(a, b) for a, b in dirs])  # (D, m, d)
        ts = np.linspace(0.0, 1.0, Tn + 2)[1:-1]  # contains 1/2 for odd Tn

        fn = np.sqrt(_norm_sq(F))
        smax = 2.0 * (np.max(fn) if fn.size else 0.0) + 2.0 * self._well_norm() + 2.0
        svals = np.linspace(-smax, smax, Sn)

        val, (tb, sb, kd) = self._split_global(F, level - 1, rank1, ts, svals)
        best = np.minimum(prev, val)

        if level == 1 and self.refine_rounds > 0:
            dt = ts[1] - ts[0] if len(ts) > 1 else 0.25
            ds = svals[1] - svals[0]
            for _ in range(self.refine_rounds):
                tloc = np.clip(np.asarray(tb)[..., None] + dt * np.linspace(-1, 1, 5),
                               1e-3, 1.0 - 1e-3)
                sloc = np.asarray(sb)[..., None] + ds * np.linspace(-1, 1, 5)
                val, (tb, sb, kd) = self._split_local(F, level - 1, rank1, tloc, sloc, kd)
                best = np.minimum(best, val)
                dt *= 0.25
                ds *= 0.25
        return best

    def _split_global(self, F, sublevel, rank1, ts, svals):
        """Best split over the full (direction, t, s) product grid."""
        batch = F.shape[:-2]
        nb = len(batch)
        D, T, S = rank1.shape[0], len(ts), len(svals)
        t = ts.reshape((1,) * nb + (1, T, 1, 1, 1))
        s = svals.reshape((1,) * nb + (1, 1, S, 1, 1))
        R = rank1.reshape((1,) * nb + (D, 1, 1) + rank1.shape[1:])
        Fb = F[..., None, None, None, :, :]
        plus = Fb + (1.0 - t) * s * R
        minus = Fb - t * s * R
        vp = self._eval_level(plus, sublevel)
        vm = self._eval_level(minus, sublevel)
        t_ = t[..., 0, 0]
        vals = t_ * vp + (1.0 - t_) * vm  # (batch, D, T, S)
        flat = vals.reshape(batch + (-1,))
        k = np.argmin(flat, axis=-1)
        kd, kt, ks = np.unravel_index(k, (D, T, S))
        return np.min(flat, axis=-1), (np.take(ts, kt), np.take(svals, ks), kd)

    def _split_local(self, F, sublevel, rank1, ts, svals, dir_idx):
        """Refine (t, s) around the current best, direction held fixed per entry."""
        batch = F.shape[:-2]
        T, S = ts.shape[-1], svals.shape[-1]
        R = rank1[dir_idx]  # (batch, m, d)
        t = ts[..., :, None, None, None]
        s = svals[..., None, :, None, None]
        Fb = F[..., None, None, :, :]
        Rb = R[..., None, None, :, :]
        plus = Fb + (1.0 - t) * s * Rb
        minus = Fb - t * s * Rb
        vp = self._eval_level(plus, sublevel)
        vm = self._eval_level(minus, sublevel)
        t_ = t[..., 0, 0]
        vals = t_ * vp + (1.0 - t_) * vm  # (batch, T, S)
        flat = vals.reshape(batch + (-1,))
        k = np.argmin(flat, axis=-1)
        kt, ks = np.unravel_index(k, (T, S))
        tb = np.take_along_axis(np.broadcast_to(ts, batch + (T,)), kt[..., None], axis=-1)[..., 0]
        sb = np.take_along_axis(np.broadcast_to(svals, batch + (S,)), ks[..., None], axis=-1)[..., 0]
        return np.min(flat, axis=-1), (tb, sb, dir_idx)

    def _eval_batch(self, F):
        return self._eval_level(F, self.depth)

    def _grad_batch(self, F):
        """Central finite differences; the envelope has no assembled gradient."""
        F = np.asarray(F, dtype=float)
        h = 1e-6 * (1.0 + np.sqrt(np.max(_norm_sq(F))))
        g = np.zeros_like(F)
        for i in range(F.shape[-2]):
            for j in range(F.shape[-1]):
                Fp = F.copy()
                Fm = F.copy()
                Fp[..., i, j] += h
                Fm[..., i, j] -= h
                g[..., i, j] = (self._eval_batch(Fp) - self._eval_batch(Fm)) / (2 * h)
        return g


def laminate_envelope(env, F):
    """Evaluate the lamination envelope at F (or a batch of F)."""
    F = _check_shape(env, F)
    out = env._eval_batch(F)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# scaling limit g(F) = lim r^p (QW)(F / r)
# ---------------------------------------------------------------------------


@dataclass
class GLimitResult:
    value: float
    residual: float
    samples: list
    envelope_depth: int
    converged: bool


def _aitken(y1, y2, y3):
    denom = (y3 - y2) - (y2 - y1)
    scale = max(abs(y1), abs(y2), abs(y3), 1e-300)
    if abs(denom) < 1e-13 * scale:
        return y3, abs(y3 - y2) / scale
    acc = y3 - (y3 - y2) ** 2 / denom
    return acc, abs(acc - y3) / max(abs(acc), 1e-300)


def g_limit(density, F, r_schedule=(1.0, 0.1, 0.01, 1e-3), depth=2, tol=1e-3):
    """Extract the small-parameter scaling limit of the relaxed density.

    Evaluates y_k = r_k^p * E(F / r_k), with E the lamination envelope of the
    density (the density itself when convex, where the envelope is exact),
    and accelerates the sequence with Aitken's delta-squared rule.
    """
    F = _check_shape(density, F)
    r = np.asarray(r_schedule, dtype=float)
    if r.size < 3:
        raise ValueError("r_schedule needs at least 3 entries")
    if np.any(np.diff(r) >= 0.0) or np.any(r <= 0.0):
        raise ValueError("r_schedule must be positive and strictly decreasing")
    if r[0] / r[-1] < 100.0:
        raise ValueError("r_schedule must span at least two decades")

    if density.is_convex:
        E = density
        used_depth = 0
    else:
        E = EnvelopeApprox(density, depth=depth)
        used_depth = depth

    p = density.p
    ys = [float(rk**p * E._eval_batch(F / rk)) for rk in r]

    val, res = _aitken(*ys[-3:])
    if len(ys) >= 4:
        prev, _ = _aitken(*ys[-4:-1])
        res = max(res, abs(val - prev) / max(abs(val), 1e-300))

    converged = res <= tol
    if not converged:
        raise ValueError(
            f"limit not resolved; possible subsequence dependence "
            f"(residual {res:.3e} > tol {tol:.1e})"
        )

    # growth sandwich |F|^p <= g <= beta |F|^p must survive the limit
    fp = float(_norm_sq(F)) ** (0.5 * p)
    slack = 1e-6 * max(fp, 1.0)
    if val < fp - slack or val > density.beta * fp + slack:
        raise ValueError(
            f"scaling limit {val:.6g} violates the growth sandwich "
            f"[{fp:.6g}, {density.beta * fp:.6g}]"
        )
    return GLimitResult(value=val, residual=res, samples=list(zip(r.tolist(), ys)),
                        envelope_depth=used_depth, converged=converged)
