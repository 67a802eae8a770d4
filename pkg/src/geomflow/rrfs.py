"""Method-of-lines solver for the rescaled invariant-metric flow system.

State is a triple of periodic node fields on a flat torus base (1D or 2D):
a base metric ``g`` (n x n SPD per node), a connection ``A`` (n x N per
node) and a fiber metric ``G`` (N x N SPD per node).  Spatial derivatives
are 4th-order central differences with periodic wraparound; time stepping
is explicit RK4 under a diffusive CFL cap with an SPD positivity guard.

Index conventions for derivative stacks: the grid axes come first, then
``[d, ...]`` for the derivative direction, e.g. ``dg[..., d, a, b]`` is
the d-derivative of ``g_ab``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KAPPA_CFL = 0.2


class SPDFieldError(RuntimeError):
    """SPD structure lost at some node; carries node index and time."""

    def __init__(self, message, node=None, t=None):
        extra = ""
        if node is not None:
            extra += f" at node {node}"
        if t is not None:
            extra += f" at t = {t:.6g}"
        super().__init__(message + extra)
        self.node = node
        self.t = t


class CFLCollapse(RuntimeError):
    pass


@dataclass(frozen=True)
class PeriodicGrid:
    sizes: tuple[int, ...]
    period: tuple[float, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        period = tuple(float(p) for p in self.period)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "period", period)
        if len(sizes) not in (1, 2) or len(period) != len(sizes):
            raise ValueError("grid must be 1- or 2-dimensional")
        if any(s < 8 for s in sizes):
            raise ValueError("each axis needs at least 8 points")
        if any(p <= 0 for p in period):
            raise ValueError("periods must be positive")

    @property
    def n_base(self) -> int:
        return len(self.sizes)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(p / s for p, s in zip(self.period, self.sizes))

    def axis_coords(self, axis: int) -> np.ndarray:
        return np.arange(self.sizes[axis]) * self.spacing[axis]

    def coords(self) -> list[np.ndarray]:
        """Node coordinate arrays broadcast to the full grid shape."""
        axes = [self.axis_coords(a) for a in range(self.n_base)]
        return list(np.meshgrid(*axes, indexing="ij"))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def _min_eig(fld: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(fld)[..., 0].min())


def _check_spd_field(fld: np.ndarray, what: str, t: float | None = None):
    if not np.all(np.isfinite(fld)):
        raise SPDFieldError(f"{what} has non-finite entries", t=t)
    w = np.linalg.eigvalsh(_sym(fld))[..., 0]
    if np.any(w <= 0):
        node = tuple(int(i) for i in np.argwhere(w <= 0)[0])
        raise SPDFieldError(f"{what} is not positive definite", node=node, t=t)


@dataclass(frozen=True)
class RRFSState:
    g: np.ndarray  # (*sizes, n, n)
    A: np.ndarray  # (*sizes, n, N)
    G: np.ndarray  # (*sizes, N, N)

    def __post_init__(self):
        g = _sym(np.asarray(self.g, dtype=float))
        A = np.asarray(self.A, dtype=float)
        G = _sym(np.asarray(self.G, dtype=float))
        _check_spd_field(g, "base metric g")
        _check_spd_field(G, "fiber metric G")
        for name, arr in (("g", g), ("A", A), ("G", G)):
            object.__setattr__(self, name, arr)
            arr.setflags(write=False)

    @property
    def n_base(self) -> int:
        return self.g.shape[-1]

    @property
    def n_fiber(self) -> int:
        return self.G.shape[-1]


@dataclass(frozen=True)
class RescalingSpec:
    mode: str = "off"  # "off" | "constant" | "volume"
    s0: float = 0.0
    c_coupling: float = 0.0

    def __post_init__(self):
        if self.mode not in ("off", "constant", "volume"):
            raise ValueError(f"unknown rescaling mode {self.mode!r}")


# ---------------------------------------------------------------------------
# spatial derivatives


def d_central(fld: np.ndarray, axis: int, grid: PeriodicGrid) -> np.ndarray:
    """4th-order periodic central first derivative along a base axis."""
    if not 0 <= axis < grid.n_base:
        raise ValueError(f"axis {axis} out of range for n = {grid.n_base}")
    h = grid.spacing[axis]
    fp1 = np.roll(fld, -1, axis)
    fp2 = np.roll(fld, -2, axis)
    fm1 = np.roll(fld, 1, axis)
    fm2 = np.roll(fld, 2, axis)
    return (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * h)


def d2_central(fld: np.ndarray, axis1: int, axis2: int, grid: PeriodicGrid) -> np.ndarray:
    """4th-order periodic second derivative (pure or mixed)."""
    if axis1 != axis2:
        return d_central(d_central(fld, axis1, grid), axis2, grid)
    if not 0 <= axis1 < grid.n_base:
        raise ValueError(f"axis {axis1} out of range for n = {grid.n_base}")
    h = grid.spacing[axis1]
    fp1 = np.roll(fld, -1, axis1)
    fp2 = np.roll(fld, -2, axis1)
    fm1 = np.roll(fld, 1, axis1)
    fm2 = np.roll(fld, 2, axis1)
    return (-fp2 + 16.0 * fp1 - 30.0 * fld + 16.0 * fm1 - fm2) / (12.0 * h * h)


def _grad(fld: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    """Stack of first derivatives, new axis [..., d, <tensor axes>]."""
    n = grid.n_base
    tensor_rank = fld.ndim - n
    out = np.stack([d_central(fld, a, grid) for a in range(n)], axis=n)
    return out


def _hess(fld: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    """Stack of second derivatives, axes [..., d1, d2, <tensor axes>]."""
    n = grid.n_base
    rows = []
    for a in range(n):
        rows.append(
            np.stack([d2_central(fld, a, b, grid) for b in range(n)], axis=n)
        )
    return np.stack(rows, axis=n)


# _grad/_hess insert the derivative axes right after the grid axes; move
# them in front of the tensor axes via einsum-friendly reshapes below.


def christoffels_of_g(state: RRFSState, grid: PeriodicGrid) -> np.ndarray:
    """Christoffel symbols of g, indexed [..., c, a, b] for Gamma^c_ab."""
    dg = _grad(state.g, grid)  # [..., d, a, b]
    ginv = np.linalg.inv(state.g)
    return 0.5 * np.einsum(
        "...cd,...dab->...cab",
        ginv,
        np.einsum("...abd->...dab", dg)
        + np.einsum("...bad->...dab", dg)
        - dg,
    )


def dA_field(state: RRFSState, grid: PeriodicGrid) -> np.ndarray:
    """Curvature 2-form of the connection, [..., a, b, i] antisymmetric in (a, b)."""
    if grid.n_base == 1:
        return np.zeros(state.A.shape[:-2] + (1, 1, state.A.shape[-1]))
    dA = _grad(state.A, grid)  # [..., d, a, i]
    return dA - np.einsum("...dai->...adi", dA)


def delta_dA(state: RRFSState, grid: PeriodicGrid) -> np.ndarray:
    """Codifferential of dA: -g^{bc} (cov d)_b (dA)_{c a}^i, shape [..., a, i]."""
    if grid.n_base == 1:
        return np.zeros_like(state.A)
    F = dA_field(state, grid)  # [..., c, a, i]
    dF = _grad(F, grid)  # [..., b, c, a, i]
    Gam = christoffels_of_g(state, grid)
    covF = (
        dF
        - np.einsum("...mbc,...mai->...bcai", Gam, F)
        - np.einsum("...mba,...cmi->...bcai", Gam, F)
    )
    ginv = np.linalg.inv(state.g)
    return -np.einsum("...bc,...bcai->...ai", ginv, covF)


def laplacian_G(state: RRFSState, grid: PeriodicGrid) -> np.ndarray:
    """Base-metric Laplacian of G: g^{ab} (d_a d_b G - Gamma^c_ab d_c G)."""
    ginv = np.linalg.inv(state.g)
    hessG = _hess(state.G, grid)  # [..., a, b, i, j]
    dG = _grad(state.G, grid)  # [..., c, i, j]
    Gam = christoffels_of_g(state, grid)
    covhess = hessG - np.einsum("...cab,...cij->...abij", Gam, dG)
    return np.einsum("...ab,...abij->...ij", ginv, covhess)


def _grad_square_G(state: RRFSState, grid: PeriodicGrid) -> np.ndarray:
    """g^{ab} (d_a G  G^-1  d_b G), the gradient-square matrix field."""
    ginv = np.linalg.inv(state.g)
    Ginv = np.linalg.inv(state.G)
    dG = _grad(state.G, grid)
    return np.einsum("...ab,...aik,...kl,...blj->...ij", ginv, dG, Ginv, dG)


def tension_G_simplified(state: RRFSState, grid: PeriodicGrid) -> np.ndarray:
    """Tension field in divergence form: Laplacian minus the gradient square."""
    return laplacian_G(state, grid) - _grad_square_G(state, grid)


def tension_G_general(state: RRFSState, grid: PeriodicGrid) -> np.ndarray:
    """Tension field built from the target-manifold connection.

    g^{ab} (d_a d_b G - Gamma^c_ab d_c G + Gamma_target(d_a G, d_b G)) with
    Gamma_target(X, Y) = -1/2 (X G^-1 Y + Y G^-1 X).  Agrees with the
    divergence form identically; both share the same discrete derivatives.
    """
    ginv = np.linalg.inv(state.g)
    Ginv = np.linalg.inv(state.G)
    dG = _grad(state.G, grid)
    XGY = np.einsum("...aik,...kl,...blj->...abij", dG, Ginv, dG)
    gamma = -0.5 * (XGY + np.swapaxes(XGY, -1, -2))
    return laplacian_G(state, grid) + np.einsum("...ab,...abij->...ij", ginv, gamma)


def _trace_MM(state: RRFSState, grid: PeriodicGrid) -> np.ndarray:
    """tr(G^-1 d_a G  G^-1 d_b G) as a field [..., a, b]."""
    Ginv = np.linalg.inv(state.G)
    dG = _grad(state.G, grid)
    M = np.einsum("...ij,...ajk->...aik", Ginv, dG)
    return np.einsum("...aij,...bji->...ab", M, M)


def grad_G_norm_sq(state: RRFSState, grid: PeriodicGrid) -> np.ndarray:
    """|grad G|^2 = g^{ab} tr(G^-1 d_a G G^-1 d_b G) per node."""
    ginv = np.linalg.inv(state.g)
    return np.einsum("...ab,...ab->...", ginv, _trace_MM(state, grid))


def dA_norm_sq(state: RRFSState, grid: PeriodicGrid) -> np.ndarray:
    """|dA|^2 = g^{ac} g^{bd} G_ij (dA)^i_ab (dA)^j_cd per node."""
    if grid.n_base == 1:
        return np.zeros(state.g.shape[:-2])
    F = dA_field(state, grid)
    ginv = np.linalg.inv(state.g)
    return np.einsum(
        "...ac,...bd,...ij,...abi,...cdj->...", ginv, ginv, state.G, F, F
    )


def volume(state: RRFSState, grid: PeriodicGrid) -> float:
    """Discrete base volume, integral of sqrt(det g)."""
    return float(np.sqrt(np.linalg.det(state.g)).sum() * grid.cell_volume)


def energy_G(state: RRFSState, grid: PeriodicGrid) -> float:
    """Discrete map energy: 1/2 integral of |grad G|^2 with weight sqrt(det g)."""
    w = np.sqrt(np.linalg.det(state.g))
    return float(0.5 * (grad_G_norm_sq(state, grid) * w).sum() * grid.cell_volume)


def scalar_curvature(state: RRFSState, grid: PeriodicGrid) -> np.ndarray:
    """Scalar curvature of g per node; identically zero on a 1D base."""
    if grid.n_base == 1:
        return np.zeros(state.g.shape[:-2])
    Gam = christoffels_of_g(state, grid)  # [..., c, a, b]
    dGam = _grad(Gam, grid)  # [..., d, c, a, b]
    ginv = np.linalg.inv(state.g)
    ricci = (
        np.einsum("...ccab->...ab", dGam)
        - np.einsum("...bcac->...ab", dGam)
        + np.einsum("...ccd,...dab->...ab", Gam, Gam)
        - np.einsum("...cbd,...dac->...ab", Gam, Gam)
    )
    return np.einsum("...ab,...ab->...", ginv, ricci)


def curvature_density(state: RRFSState, grid: PeriodicGrid) -> np.ndarray:
    """r = R - 1/4 |grad G|^2 - 1/2 |dA|^2 per node."""
    return (
        scalar_curvature(state, grid)
        - 0.25 * grad_G_norm_sq(state, grid)
        - 0.5 * dA_norm_sq(state, grid)
    )


def s_volume(state: RRFSState, grid: PeriodicGrid) -> float:
    """Volume-normalizing rescaling: -(2/n) times the weighted mean of r."""
    w = np.sqrt(np.linalg.det(state.g))
    r = curvature_density(state, grid)
    return float(-(2.0 / grid.n_base) * (r * w).sum() / w.sum())


def _rescaling_value(state: RRFSState, grid: PeriodicGrid, spec: RescalingSpec) -> float:
    if spec.mode == "off":
        return 0.0
    if spec.mode == "constant":
        return spec.s0
    return s_volume(state, grid)


def rrfs_rhs_terms(
    state: RRFSState, grid: PeriodicGrid, spec: RescalingSpec
) -> dict[str, np.ndarray | float]:
    """Term-by-term decomposition of the flow's right-hand side."""
    n = grid.n_base
    ginv = np.linalg.inv(state.g)
    s = _rescaling_value(state, grid, spec)
    c = spec.c_coupling

    # g-equation
    if n == 2:
        R = scalar_curvature(state, grid)
        ricci2 = 0.5 * R[..., None, None] * state.g  # 2D: Rc = (R/2) g
    else:
        ricci2 = np.zeros_like(state.g)
    trMM = _trace_MM(state, grid)
    F = dA_field(state, grid)
    if n == 2:
        g_dA = np.einsum(
            "...cd,...ij,...aci,...bdj->...ab", ginv, state.G, F, F
        )
    else:
        g_dA = np.zeros_like(state.g)

    # A-equation
    Ginv = np.linalg.inv(state.G)
    dG = _grad(state.G, grid)
    if n == 2:
        ddA = delta_dA(state, grid)
        A_grad = np.einsum(
            "...bc,...ij,...cjk,...bak->...ai", ginv, Ginv, dG, F
        )
    else:
        ddA = np.zeros_like(state.A)
        A_grad = np.zeros_like(state.A)

    # G-equation
    lap = laplacian_G(state, grid)
    grad_sq = _grad_square_G(state, grid)
    if n == 2:
        G_dA = np.einsum(
            "...ac,...bd,...ik,...jl,...abk,...cdl->...ij",
            ginv,
            ginv,
            state.G,
            state.G,
            F,
            F,
        )
    else:
        G_dA = np.zeros_like(state.G)

    return {
        "s": s,
        "g_ricci": -2.0 * ricci2,
        "g_gradG": 0.5 * trMM,
        "g_dA": g_dA,
        "g_rescale": -s * state.g,
        "A_codiff": -ddA,
        "A_gradG": A_grad,
        "A_rescale": -0.5 * (1.0 + c) * s * state.A,
        "G_laplace": lap,
        "G_gradsq": -grad_sq,
        "G_dA": -0.5 * G_dA,
        "G_rescale": c * s * state.G,
    }


def rrfs_rhs(
    state: RRFSState, grid: PeriodicGrid, spec: RescalingSpec
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Right-hand side (dg/dt, dA/dt, dG/dt) of the rescaled flow system."""
    T = rrfs_rhs_terms(state, grid, spec)
    dg = T["g_ricci"] + T["g_gradG"] + T["g_dA"] + T["g_rescale"]
    dA = T["A_codiff"] + T["A_gradG"] + T["A_rescale"]
    dG = T["G_laplace"] + T["G_gradsq"] + T["G_dA"] + T["G_rescale"]
    return _sym(dg), dA, _sym(dG)


# ---------------------------------------------------------------------------
# time integration


@dataclass(frozen=True)
class RRFSRun:
    step_times: np.ndarray
    energies: np.ndarray
    volumes: np.ndarray
    s_values: np.ndarray
    snapshot_times: list
    snapshots: list  # RRFSState at the snapshot times
    final_state: RRFSState


def integrate_rrfs(
    state0: RRFSState,
    grid: PeriodicGrid,
    spec: RescalingSpec,
    t_end: float,
    kappa_cfl: float = KAPPA_CFL,
    evolve_g: bool = True,
    evolve_A: bool = True,
    n_snapshots: int = 5,
) -> RRFSRun:
    """Explicit RK4 time stepping under a diffusive CFL cap.

    dt <= kappa_cfl * h_min^2 * min-eig(g); steps that lose positive
    definiteness of g or G are rejected with dt halved, up to 50 times.
    ``evolve_g`` / ``evolve_A`` freeze the respective fields (harmonic-map
    -only mode is g frozen, A frozen).
    """
    h_min = min(grid.spacing)
    snap_req = np.linspace(0.0, t_end, max(n_snapshots, 2))

    def rhs_frozen(st: RRFSState):
        dg, dA, dG = rrfs_rhs(st, grid, spec)
        if not evolve_g:
            dg = np.zeros_like(dg)
        if not evolve_A:
            dA = np.zeros_like(dA)
        return dg, dA, dG

    t = 0.0
    state = state0
    times = [0.0]
    energies = [energy_G(state0, grid)]
    volumes = [volume(state0, grid)]
    s_vals = [_rescaling_value(state0, grid, spec)]
    snapshots = [state0]
    snapshot_times = [0.0]
    next_snap = 1

    while t < t_end * (1 - 1e-12):
        dt_cfl = kappa_cfl * h_min * h_min * _min_eig(state.g)
        if dt_cfl <= 0 or not np.isfinite(dt_cfl):
            raise CFLCollapse(f"CFL step collapsed at t = {t:.6g}")
        dt = min(dt_cfl, t_end - t)
        rejections = 0
        while True:
            try:
                k1 = rhs_frozen(state)
                st2 = _advance(state, k1, 0.5 * dt)
                k2 = rhs_frozen(st2)
                st3 = _advance(state, k2, 0.5 * dt)
                k3 = rhs_frozen(st3)
                st4 = _advance(state, k3, dt)
                k4 = rhs_frozen(st4)
                new_state = RRFSState(
                    state.g + (dt / 6) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
                    state.A + (dt / 6) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
                    state.G + (dt / 6) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]),
                )
                break
            except SPDFieldError as err:
                rejections += 1
                if rejections > 50:
                    raise SPDFieldError(
                        "SPD structure lost after 50 step halvings",
                        node=err.node,
                        t=t,
                    ) from err
                dt *= 0.5
        t += dt
        state = new_state
        times.append(t)
        energies.append(energy_G(state, grid))
        volumes.append(volume(state, grid))
        s_vals.append(_rescaling_value(state, grid, spec))
        while next_snap < len(snap_req) - 1 and t >= snap_req[next_snap]:
            snapshots.append(state)
            snapshot_times.append(t)
            next_snap += 1

    snapshots.append(state)
    snapshot_times.append(t)
    return RRFSRun(
        step_times=np.array(times),
        energies=np.array(energies),
        volumes=np.array(volumes),
        s_values=np.array(s_vals),
        snapshot_times=snapshot_times,
        snapshots=snapshots,
        final_state=state,
    )


def _advance(state: RRFSState, k, dt: float) -> RRFSState:
    return RRFSState(state.g + dt * k[0], state.A + dt * k[1], state.G + dt * k[2])


# ---------------------------------------------------------------------------
# smooth random fields and serialization


def _smooth_scalar(rng: np.random.Generator, grid: PeriodicGrid, n_modes: int = 3):
    """Random low-frequency periodic scalar field with unit-scale amplitude."""
    coords = grid.coords()
    out = np.zeros(tuple(grid.sizes))
    for _ in range(n_modes):
        phase = rng.uniform(0, 2 * np.pi, size=grid.n_base)
        ks = rng.integers(1, 4, size=grid.n_base)
        wave = np.ones_like(out)
        for ax in range(grid.n_base):
            wave = wave * np.cos(
                2 * np.pi * ks[ax] * coords[ax] / grid.period[ax] + phase[ax]
            )
        out += rng.normal() * wave
    return out / max(n_modes, 1)


def _expm_sym(S: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(_sym(S))
    return np.einsum("...ik,...k,...jk->...ij", v, np.exp(w), v)


def random_smooth_state(
    seed: int,
    grid: PeriodicGrid,
    n_fiber: int,
    amplitude: float = 0.3,
    perturb_g: bool = False,
    perturb_A: bool = False,
) -> RRFSState:
    """Seeded smooth periodic state: G = exp(symmetric Fourier field), flat-ish g."""
    rng = np.random.default_rng(seed)
    n = grid.n_base
    shape = tuple(grid.sizes)
    S = np.zeros(shape + (n_fiber, n_fiber))
    for i in range(n_fiber):
        for j in range(i, n_fiber):
            f = amplitude * _smooth_scalar(rng, grid)
            S[..., i, j] += f
            if i != j:
                S[..., j, i] += f
    G = _expm_sym(S)
    g = np.broadcast_to(np.eye(n), shape + (n, n)).copy()
    if perturb_g:
        for a in range(n):
            for b in range(a, n):
                f = 0.2 * amplitude * _smooth_scalar(rng, grid)
                g[..., a, b] += f
                if a != b:
                    g[..., b, a] += f
    A = np.zeros(shape + (n, n_fiber))
    if perturb_A:
        for a in range(n):
            for i in range(n_fiber):
                A[..., a, i] = amplitude * _smooth_scalar(rng, grid)
    return RRFSState(g, A, G)


def save_snapshot(state: RRFSState, grid: PeriodicGrid, path):
    """Write a field snapshot as text; floats at 17 significant digits."""
    n = grid.n_base
    N = state.n_fiber
    with open(path, "w") as fh:
        sizes = " ".join(str(s) for s in grid.sizes)
        periods = " ".join(f"{p:.17g}" for p in grid.period)
        fh.write(f"{n} {N} {sizes} {periods}\n")
        g2 = state.g.reshape(-1, n * n)
        A2 = state.A.reshape(-1, n * N)
        G2 = state.G.reshape(-1, N * N)
        for row in range(g2.shape[0]):
            vals = np.concatenate([g2[row], A2[row], G2[row]])
            fh.write(" ".join(f"{v:.17g}" for v in vals) + "\n")


def load_snapshot(path) -> tuple[RRFSState, PeriodicGrid]:
    with open(path) as fh:
        header = fh.readline().split()
        n, N = int(header[0]), int(header[1])
        sizes = tuple(int(x) for x in header[2 : 2 + n])
        period = tuple(float(x) for x in header[2 + n : 2 + 2 * n])
        grid = PeriodicGrid(sizes, period)
        data = np.loadtxt(fh, ndmin=2)
    n_nodes = int(np.prod(sizes))
    if data.shape != (n_nodes, n * n + n * N + N * N):
        raise ValueError("snapshot node data has wrong shape")
    g = data[:, : n * n].reshape(sizes + (n, n))
    A = data[:, n * n : n * n + n * N].reshape(sizes + (n, N))
    G = data[:, n * n + n * N :].reshape(sizes + (N, N))
    return RRFSState(g, A, G), grid
