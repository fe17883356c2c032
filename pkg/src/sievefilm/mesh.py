"""Meshes for the slit-cell and membrane problems.

The reference cell is the box B_N x (-T, T) (B_N the d-ball of radius N) cut
along the "slit" C = {1 <= |x_alpha| <= N, t = 0}: the two halves of the box
are glued across the unit hole B_1 and free to separate across the slit.
Meshes therefore duplicate every mid-plane node with s = |x_alpha| >= 1 into
an (upper, lower) pair and share the nodes inside the hole.

Two discretizations ship:

* ``axisymmetric`` (any d >= 2): the radial symmetry of the capacitary
  problems collapses the cell to the (s, t) half-strip [0, N] x (-T, T); the
  volume element contributes the exact moment |S^{d-1}| int s^{d-1} over each
  triangle (computed with a Duffy-transformed Gauss rule, exact for d <= 7).
  Radial and vertical point sets refine geometrically toward the slit tip
  (s = 1, t = 0), where the minimizers concentrate their gradients.

* ``full`` (d = 2 only): an honest 3D box tetrahedralization (Kuhn split of
  a voxel grid, cells kept when their center lies in the disk) used to
  validate the axisymmetric reduction.

Membrane meshes (for the separated-scales problem, two coupled layers on B_N
glued through the hole) reuse the same radial point sets, so comparisons
between the box problem and its membrane limit see matched discretizations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CellDomainSpec",
    "SlitMesh",
    "build_slit_mesh",
    "build_membrane_mesh",
    "build_radial_shell_mesh",
    "element_gradient",
    "integrate_energy",
    "integrate_energy_with_gradient",
    "sphere_area",
]


def sphere_area(d):
    """Surface measure of the unit sphere S^{d-1} in R^d."""
    return 2.0 * math.pi ** (0.5 * d) / math.gamma(0.5 * d)


@dataclass(frozen=True)
class CellDomainSpec:
    """Geometry and resolution of one slit-cell (or membrane) domain.

    ``N`` is the truncation radius, ``half_height`` the box half-height T
    (the membrane problem ignores it), ``resolution`` the target element size
    away from the slit tip, ``grading`` the geometric refinement factor
    toward the tip (1 = uniform).  ``far_grading`` optionally lets element
    sizes keep growing geometrically far from the tip (|s - 1| > 1), which
    the very large truncations of the film-trend runs need; 1 keeps the
    uniform far-field cap.  Lengths are in units of the hole radius, which
    is fixed at 1.
    """

    d: int
    N: float
    half_height: float = 1.0
    hole_radius: float = 1.0
    mode: str = "axisymmetric"
    resolution: float = 0.1
    grading: float = 1.15
    far_grading: float = 1.0

    def __post_init__(self):
        if self.d < 2:
            raise ValueError(f"unsupported dimension: d must be at least 2, got {self.d}")
        if self.mode not in ("axisymmetric", "full"):
            raise ValueError(f"mode must be 'axisymmetric' or 'full', got {self.mode!r}")
        if self.mode == "full" and self.d != 2:
            raise ValueError("unsupported dimension: full (non-reduced) meshes are d=2 only")
        if self.hole_radius != 1.0:
            raise ValueError("the cell is posed in units of the hole radius; hole_radius must be 1")
        if not self.N > 1.0:
            raise ValueError(f"empty slit: truncation radius N must exceed 1, got N={self.N}")
        if not self.half_height > 0.0:
            raise ValueError(f"half_height must be positive, got {self.half_height}")
        if self.grading < 1.0 or self.far_grading < 1.0:
            raise ValueError("grading factors must be >= 1")
        if self.resolution > (self.N - 1.0) / 4.0:
            raise ValueError(
                f"slit unresolved: resolution {self.resolution} exceeds (N-1)/4 = "
                f"{(self.N - 1.0) / 4.0:.6g}; refine the mesh or enlarge N"
            )


@dataclass
class SlitMesh:
    """A simplicial mesh of the slit cell with precomputed quadrature data.

    ``coords`` are (s, t) for axisymmetric meshes, (s,) for membranes and
    (x, y, t) for full meshes.  ``quad_weights`` carry the full measure of
    each element (axisymmetric ones include the |S^{d-1}| s^{d-1} moment), so
    energies are plain weighted sums over elements.  ``slit_pairs`` lists
    duplicated (upper, lower) mid-plane nodes on the slit (lateral-boundary
    columns excluded); ``shared_hole_nodes`` the single-copy nodes in the
    hole.  ``reduced_coords`` marks meshes whose element gradients live in
    collapsed (radial | vertical) coordinates, which restricts the usable
    densities to rotation-invariant ones.
    """

    spec: CellDomainSpec
    kind: str  # "slit" | "membrane" | "shell"
    coords: np.ndarray
    elements: np.ndarray
    quad_weights: np.ndarray
    gradphi: np.ndarray
    slit_pairs: np.ndarray
    shared_hole_nodes: np.ndarray
    boundary_tags: dict
    reference_volume: float
    reduced_coords: bool
    node_t: np.ndarray
    node_layer: np.ndarray  # +1 upper, -1 lower, 0 shared mid-plane
    grids: dict = field(default_factory=dict)

    @property
    def n_nodes(self):
        return self.coords.shape[0]

    @property
    def dim(self):
        return self.coords.shape[1]


# ---------------------------------------------------------------------------
# 1D graded point sets
# ---------------------------------------------------------------------------


def _graded_axis(length, h, grading, h_min, far_grading=1.0, far_start=None):
    """Points on [0, length], refined toward 0.

    Step sizes start at h_min and grow by ``grading`` up to the cap h; past
    ``far_start`` they may keep growing by ``far_grading``.  Built from the
    refined end so point prefixes are independent of ``length`` (nested
    truncations give cleanly comparable energies).
    """
    if length <= 0.0:
        raise ValueError("axis length must be positive")
    if grading <= 1.0 and far_grading <= 1.0:
        n = max(1, round(length / h))
        return np.linspace(0.0, length, n + 1)
    pts = [0.0]
    step = min(h_min, h, length)
    while pts[-1] + step < length * (1.0 - 1e-12):
        pts.append(pts[-1] + step)
        if step < h:
            step = min(h, step * grading)
        elif far_grading > 1.0 and far_start is not None and pts[-1] >= far_start:
            step *= far_grading
    if len(pts) > 1 and length - pts[-1] < 0.3 * (pts[-1] - pts[-2]):
        pts.pop()
    pts.append(length)
    return np.asarray(pts)


def _radial_points(spec):
    """Radial nodes on [0, N]: [0, 1] and [1, N] both refined toward s = 1."""
    h = spec.resolution
    h_min = h / 32.0 if spec.grading > 1.0 else h
    hole = 1.0 - _graded_axis(1.0, h, spec.grading, h_min)[::-1]
    outer = 1.0 + _graded_axis(spec.N - 1.0, h, spec.grading, h_min,
                               far_grading=spec.far_grading, far_start=1.0)
    return np.concatenate([hole[:-1], outer])


def _vertical_points(spec):
    """Vertical nodes on [0, T], refined toward the mid-plane t = 0."""
    h = spec.resolution
    h_min = h / 32.0 if spec.grading > 1.0 else h
    return _graded_axis(spec.half_height, h, spec.grading, h_min,
                        far_grading=spec.far_grading, far_start=1.0)


# ---------------------------------------------------------------------------
# quadrature moments
# ---------------------------------------------------------------------------


def _duffy_rule(n=4):
    x, w = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (x + 1.0)
    wu = 0.5 * w
    U, V = np.meshgrid(u, u, indexing="ij")
    WU, WV = np.meshgrid(wu, wu, indexing="ij")
    xi = U.ravel()
    eta = (V * (1.0 - U)).ravel()
    wq = (WU * WV * (1.0 - U)).ravel()  # integrates over the unit triangle
    return xi, eta, wq


_DUFFY = _duffy_rule()


def _triangle_radial_weights(verts, d):
    """|S^{d-1}| * integral of s^{d-1} over each (s, t) triangle, exact for d <= 7."""
    xi, eta, wq = _DUFFY
    v0 = verts[:, 0, :]
    e1 = verts[:, 1, :] - v0
    e2 = verts[:, 2, :] - v0
    twoA = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    s = (v0[:, 0, None] + np.outer(e1[:, 0], xi) + np.outer(e2[:, 0], eta))
    mom = np.maximum(s, 0.0) ** (d - 1) @ wq
    return sphere_area(d) * twoA * mom


def _simplex_gradients(verts):
    """P1 shape gradients and volumes for a batch of simplices (E, k+1, k)."""
    v0 = verts[:, :1, :]
    D = verts[:, 1:, :] - v0  # (E, k, k), rows are edge vectors
    k = D.shape[1]
    L = np.linalg.inv(D)  # columns solve D @ x = e_a
    grads = np.swapaxes(L, 1, 2)  # grad lambda_a = row a of D^{-T}
    g0 = -grads.sum(axis=1, keepdims=True)
    gradphi = np.concatenate([g0, grads], axis=1)
    vol = np.abs(np.linalg.det(D)) / math.factorial(k)
    return gradphi, vol


# ---------------------------------------------------------------------------
# axisymmetric slit mesh
# ---------------------------------------------------------------------------


def _block_elements(idgrid):
    """Two triangles per structured cell of an (ns, nt) node-id grid."""
    a = idgrid[:-1, :-1].ravel()
    b = idgrid[1:, :-1].ravel()
    c = idgrid[:-1, 1:].ravel()
    d = idgrid[1:, 1:].ravel()
    return np.concatenate([np.stack([a, b, c], axis=1),
                           np.stack([b, d, c], axis=1)])


def _axisym_slit_mesh(spec):
    S = _radial_points(spec)
    Tup = _vertical_points(spec)
    ns, nt = S.size, Tup.size
    tol = spec.resolution / 10.0
    on_slit = S >= 1.0 - tol  # duplicated columns (s = N included, tagged lateral)

    uid = np.arange(ns * nt).reshape(ns, nt)  # upper block, t = +Tup[j]
    next_id = ns * nt
    # lower block shares hole columns of the t=0 row, duplicates the rest
    lid = np.empty((ns, nt), dtype=int)  # t = -Tup[j]
    lid[:, 0] = uid[:, 0]
    lid[on_slit, 0] = next_id + np.arange(on_slit.sum())
    next_id += int(on_slit.sum())
    lid[:, 1:] = next_id + np.arange(ns * (nt - 1)).reshape(ns, nt - 1)
    n_nodes = next_id + ns * (nt - 1)

    coords = np.empty((n_nodes, 2))
    coords[uid.ravel(), 0] = np.repeat(S, nt)
    coords[uid.ravel(), 1] = np.tile(Tup, ns)
    coords[lid.ravel(), 0] = np.repeat(S, nt)
    coords[lid.ravel(), 1] = -np.tile(Tup, ns)

    lid_asc = lid[:, ::-1]  # ascending t: -T ... 0
    elements = np.concatenate([_block_elements(lid_asc), _block_elements(uid)])

    verts = coords[elements]
    weights = _triangle_radial_weights(verts, spec.d)
    gradphi, _ = _simplex_gradients(verts)

    slit_cols = np.nonzero(on_slit)[0]
    interior = slit_cols[S[slit_cols] < spec.N - tol]
    slit_pairs = np.stack([uid[interior, 0], lid[interior, 0]], axis=1)
    shared = uid[~on_slit, 0]

    tags = {
        "lateral_upper": uid[-1, :].copy(),
        "lateral_lower": lid[-1, :].copy(),
        "top_cap": uid[:, -1].copy(),
        "bottom_cap": lid[:, -1].copy(),
        "axis": np.concatenate([uid[0, :], lid[0, 1:]]),
    }

    vol = sphere_area(spec.d) * spec.N**spec.d / spec.d * 2.0 * spec.half_height
    node_t = coords[:, 1]
    layer = np.sign(node_t).astype(int)
    layer[uid[:, 0]] = 0
    layer[lid[:, 0]] = 0
    layer[uid[on_slit, 0]] = 1
    layer[lid[on_slit, 0]] = -1

    return SlitMesh(
        spec=spec, kind="slit", coords=coords, elements=elements,
        quad_weights=weights, gradphi=gradphi, slit_pairs=slit_pairs,
        shared_hole_nodes=shared, boundary_tags=tags, reference_volume=vol,
        reduced_coords=True, node_t=node_t, node_layer=layer,
        grids={"S": S, "T": Tup, "upper": uid, "lower": lid},
    )


# ---------------------------------------------------------------------------
# full (d = 2) slit mesh: voxel box, Kuhn tetrahedra
# ---------------------------------------------------------------------------

_KUHN_PERMS = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]


def _full_slit_mesh(spec):
    N, T, h = spec.N, spec.half_height, spec.resolution
    ncell = max(4, int(round(2.0 * N / h)))
    xs = np.linspace(-N, N, ncell + 1)
    hx = xs[1] - xs[0]
    nz_half = max(2, int(round(T / h)))
    zs = np.concatenate([-np.linspace(0.0, T, nz_half + 1)[::-1],
                         np.linspace(0.0, T, nz_half + 1)[1:]])
    iz0 = nz_half  # index of t = 0

    cx = 0.5 * (xs[:-1] + xs[1:])
    CX, CY = np.meshgrid(cx, cx, indexing="ij")
    kept = CX**2 + CY**2 < N**2  # center-in-ball cells

    used = np.zeros((ncell + 1, ncell + 1), dtype=bool)
    for di in (0, 1):
        for dj in (0, 1):
            used[di : ncell + di, dj : ncell + dj] |= kept
    # in-plane boundary nodes: on the hull of the kept region
    interior_cell = np.zeros_like(used)
    interior_cell[:-1, :-1] = kept
    bnd = used.copy()
    inner = np.ones_like(used)
    for di in (0, 1):
        for dj in (0, 1):
            blk = np.zeros_like(used)
            blk[di : ncell + di, dj : ncell + dj] = kept
            inner &= blk
    bnd = used & ~inner

    XX, YY = np.meshgrid(xs, xs, indexing="ij")
    rr = np.sqrt(XX**2 + YY**2)
    dup = used & (rr >= 1.0 - hx / 10.0)  # mid-plane duplication (snap h/10)

    nz = zs.size
    nid = -np.ones((ncell + 1, ncell + 1, nz + 1), dtype=int)  # extra slot for dup
    count = 0
    # layers: index k in [0, nz) -> t = zs[k]; duplicated mid-plane stored at slot nz
    for k in range(nz):
        sel = used
        ids = np.full(used.shape, -1, dtype=int)
        idx = np.nonzero(sel)
        ids[idx] = count + np.arange(len(idx[0]))
        count += len(idx[0])
        nid[:, :, k][sel] = ids[sel]
    sel = dup
    idx = np.nonzero(sel)
    nid[:, :, nz][sel] = count + np.arange(len(idx[0]))
    count += len(idx[0])

    coords = np.empty((count, 3))
    for k in range(nz):
        sel = nid[:, :, k] >= 0
        coords[nid[:, :, k][sel]] = np.stack(
            [XX[sel], YY[sel], np.full(sel.sum(), zs[k])], axis=1)
    sel = nid[:, :, nz] >= 0
    coords[nid[:, :, nz][sel]] = np.stack(
        [XX[sel], YY[sel], np.zeros(sel.sum())], axis=1)

    def corner_ids(k, lower_side):
        """Node ids of level k as seen from below (lower half) or above."""
        ids = nid[:, :, k].copy()
        if k == iz0 and lower_side:
            d = nid[:, :, nz]
            ids[d >= 0] = d[d >= 0]  # lower half sees the duplicated copies
        return ids

    tets = []
    ic, jc = np.nonzero(kept)
    for k in range(nz - 1):
        lower_side = k + 1 <= iz0  # cells below the mid-plane
        bottom = corner_ids(k, lower_side=lower_side and k == iz0)
        top = corner_ids(k + 1, lower_side=lower_side and k + 1 == iz0)
        corn = np.empty((len(ic), 2, 2, 2), dtype=int)
        for di in (0, 1):
            for dj in (0, 1):
                corn[:, di, dj, 0] = bottom[ic + di, jc + dj]
                corn[:, di, dj, 1] = top[ic + di, jc + dj]
        for perm in _KUHN_PERMS:
            steps = np.zeros((4, 3), dtype=int)
            for a, ax in enumerate(perm):
                steps[a + 1] = steps[a]
                steps[a + 1, ax] += 1
            tets.append(np.stack(
                [corn[:, sx, sy, sz] for sx, sy, sz in steps], axis=1))
    elements = np.concatenate(tets)

    verts = coords[elements]
    gradphi, vol = _simplex_gradients(verts)

    pair_sel = dup & ~bnd
    up_ids = nid[:, :, iz0][pair_sel]
    lo_ids = nid[:, :, nz][pair_sel]
    slit_pairs = np.stack([up_ids, lo_ids], axis=1)
    shared = nid[:, :, iz0][used & ~dup]

    lat_up, lat_lo, topc, botc = [], [], [], []
    for k in range(nz):
        ids = nid[:, :, k][bnd]
        if zs[k] >= 0.0:
            lat_up.append(ids)
        if zs[k] <= 0.0:
            lat_lo.append(nid[:, :, nz][bnd] if k == iz0 else ids)
    tags = {
        "lateral_upper": np.concatenate(lat_up),
        "lateral_lower": np.concatenate(lat_lo),
        "top_cap": nid[:, :, nz - 1][used],
        "bottom_cap": nid[:, :, 0][used],
        "axis": np.empty(0, dtype=int),
    }

    node_t = coords[:, 2]
    layer = np.sign(node_t).astype(int)
    mid_up = nid[:, :, iz0][dup]
    mid_lo = nid[:, :, nz][dup]
    layer[mid_up] = 1
    layer[mid_lo] = -1

    return SlitMesh(
        spec=spec, kind="slit", coords=coords, elements=elements,
        quad_weights=vol, gradphi=gradphi, slit_pairs=slit_pairs,
        shared_hole_nodes=shared, boundary_tags=tags,
        reference_volume=float(kept.sum()) * hx * hx * 2.0 * T,
        reduced_coords=False, node_t=node_t, node_layer=layer,
        grids={},
    )


def build_slit_mesh(spec):
    """Mesh the slit cell B_N x (-T, T) described by a CellDomainSpec."""
    if spec.mode == "full":
        return _full_slit_mesh(spec)
    return _axisym_slit_mesh(spec)


# ---------------------------------------------------------------------------
# membrane mesh (two coupled layers over B_N, no vertical extent)
# ---------------------------------------------------------------------------


def build_membrane_mesh(spec):
    """Two radial membrane layers glued through the unit hole.

    Both layers carry the full disk B_N; values are shared on the hole
    columns (s < 1) and independent outside, mirroring the slit convention.
    """
    if spec.mode == "full":
        raise ValueError("unsupported dimension: membrane meshes are axisymmetric only")
    S = _radial_points(spec)
    ns = S.size
    tol = spec.resolution / 10.0
    on_slit = S >= 1.0 - tol

    uid = np.arange(ns)
    lid = uid.copy()
    lid[on_slit] = ns + np.arange(on_slit.sum())
    n_nodes = ns + int(on_slit.sum())

    coords = np.empty((n_nodes, 1))
    coords[uid, 0] = S
    coords[lid, 0] = S

    seg_u = np.stack([uid[:-1], uid[1:]], axis=1)
    seg_l = np.stack([lid[:-1], lid[1:]], axis=1)
    elements = np.concatenate([seg_u, seg_l])

    s0 = S[:-1]
    s1 = S[1:]
    w = sphere_area(spec.d) * (s1**spec.d - s0**spec.d) / spec.d
    weights = np.concatenate([w, w])
    gradphi, _ = _simplex_gradients(coords[elements])

    slit_cols = np.nonzero(on_slit)[0]
    interior = slit_cols[S[slit_cols] < spec.N - tol]
    slit_pairs = np.stack([uid[interior], lid[interior]], axis=1)

    tags = {
        "lateral_upper": np.array([uid[-1]]),
        "lateral_lower": np.array([lid[-1]]),
        "top_cap": np.empty(0, dtype=int),
        "bottom_cap": np.empty(0, dtype=int),
        "axis": np.array([uid[0]]),
    }
    layer = np.zeros(n_nodes, dtype=int)
    layer[uid[on_slit]] = 1
    layer[lid[on_slit]] = -1

    return SlitMesh(
        spec=spec, kind="membrane", coords=coords, elements=elements,
        quad_weights=weights, gradphi=gradphi, slit_pairs=slit_pairs,
        shared_hole_nodes=uid[~on_slit], boundary_tags=tags,
        reference_volume=2.0 * sphere_area(spec.d) * spec.N**spec.d / spec.d,
        reduced_coords=True, node_t=np.zeros(n_nodes), node_layer=layer,
        grids={"S": S, "upper": uid, "lower": lid},
    )


def build_radial_shell_mesh(d, r_in, r_out, h, grading=1.0):
    """1D radial mesh of the shell r_in < s < r_out with exact s^{d-1} moments.

    Used for capacitary benchmark solves; boundary tags are 'inner'/'outer'.
    """
    if not (0.0 < r_in < r_out):
        raise ValueError(f"need 0 < r_in < r_out, got ({r_in}, {r_out})")
    L = r_out - r_in
    h_min = h / 32.0 if grading > 1.0 else h
    S = r_in + _graded_axis(L, h, grading, h_min)
    coords = S[:, None].copy()
    elements = np.stack([np.arange(S.size - 1), np.arange(1, S.size)], axis=1)
    w = sphere_area(d) * (S[1:] ** d - S[:-1] ** d) / d
    gradphi, _ = _simplex_gradients(coords[elements])
    spec = CellDomainSpec(d=d, N=max(r_out, 1.0 + 8 * h), resolution=h, grading=grading)
    n = S.size
    return SlitMesh(
        spec=spec, kind="shell", coords=coords, elements=elements,
        quad_weights=w, gradphi=gradphi,
        slit_pairs=np.empty((0, 2), dtype=int),
        shared_hole_nodes=np.empty(0, dtype=int),
        boundary_tags={"inner": np.array([0]), "outer": np.array([n - 1])},
        reference_volume=sphere_area(d) * (r_out**d - r_in**d) / d,
        reduced_coords=True, node_t=np.zeros(n), node_layer=np.zeros(n, dtype=int),
        grids={"S": S},
    )


# ---------------------------------------------------------------------------
# element gradients and energy quadrature
# ---------------------------------------------------------------------------


def _field_2d(mesh, field):
    f = np.asarray(field, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    if f.shape[0] != mesh.n_nodes:
        raise ValueError(f"field has {f.shape[0]} rows, mesh has {mesh.n_nodes} nodes")
    return f


def element_gradient(mesh, field):
    """Constant P1 gradient per element, shape (n_elements, m, dim)."""
    f = _field_2d(mesh, field)
    vals = f[mesh.elements]  # (E, k+1, m)
    return np.einsum("eam,eak->emk", vals, mesh.gradphi)


def _check_density(mesh, density):
    if mesh.reduced_coords:
        if mesh.dim != density.ncols and not density.radially_reducible:
            raise ValueError(
                "axisymmetric meshes need a density invariant under in-plane "
                "rotations (power / anisotropic / convex sums); this one is not"
            )
    elif mesh.dim != density.ncols:
        raise ValueError(
            f"density acts on {density.ncols} gradient columns but the mesh "
            f"has {mesh.dim} coordinates"
        )


def integrate_energy(mesh, density, field, vertical_scale=1.0):
    """Total energy: one-point quadrature of W(grad) with exact cell measures.

    ``vertical_scale`` multiplies the vertical (last) gradient component on
    slit meshes -- evaluating the anisotropically scaled density without
    touching the mesh. Membranes have no vertical direction; the factor is
    ignored there.
    """
    _check_density(mesh, density)
    G = element_gradient(mesh, field)
    if mesh.kind == "slit" and vertical_scale != 1.0:
        G = G.copy()
        G[..., -1] *= vertical_scale
    W = density._eval_batch(G)
    return float(W @ mesh.quad_weights)


def integrate_energy_with_gradient(mesh, density, field, vertical_scale=1.0):
    """Energy and its exact nodal gradient (same quadrature as integrate_energy)."""
    _check_density(mesh, density)
    f = _field_2d(mesh, field)
    G = element_gradient(mesh, f)
    if mesh.kind == "slit" and vertical_scale != 1.0:
        G = G.copy()
        G[..., -1] *= vertical_scale
    W = density._eval_batch(G)
    E = float(W @ mesh.quad_weights)
    dW = density._grad_batch(G)
    if mesh.kind == "slit" and vertical_scale != 1.0:
        dW = dW.copy()
        dW[..., -1] *= vertical_scale
    contrib = np.einsum("emk,eak,e->eam", dW, mesh.gradphi, mesh.quad_weights)
    grad = np.zeros_like(f)
    np.add.at(grad, mesh.elements, contrib)
    return E, grad
