"""Divergence-free fields on a wavevector cube and the mild-solution operators.

Fields live on a uniform grid over [-K, K]^3 containing the origin.  The
three operators that drive everything else are

* the heat semigroup, a pointwise multiplier exp(-|k|^2 t),
* the symmetrized bilinear convolution with the singular weight
  1 / (|k - k'|^alpha |k'|^alpha) and prefactor i |k|^alpha,
* the Duhamel time convolution int_0^t exp(-|k|^2 (t-s)) f_s ds.

Quadrature policy for the bilinear term: midpoint rule over grid cells,
excising cells within ``singular_cutoff`` of either kernel singularity
(k' = 0 and k' = k; the integrand is integrable there for alpha < 3, so
the excised mass is O(delta^(3-alpha))), and extending the fields by
zero outside the cube.  Because both k and k' are grid nodes, k - k'
lands on the lattice as well, so "interpolation" is an exact shifted
lookup.

The complex pairing <a, b> = sum_i a_i b_i is bilinear (no conjugation),
matching the formal use of the scalar product in the Fourier-space
equation; with k real the map a -> a - k <k,a> / |k|^2 is still the
orthogonal projection killing the k-component.
"""

from __future__ import annotations

import json
from typing import Sequence

import numpy as np

_BLOCK_ROWS = 256  # row-chunk size for the pairwise kernel sweeps


class Grid:
    """Wavevector-cube geometry, time grid, and cached quadrature tables."""

    def __init__(
        self,
        cutoff: float,
        points_per_axis: int,
        *,
        singular_cutoff: float | None = None,
        time_horizon: float = 1.0,
        time_nodes: int = 17,
        alpha: float = 2.0,
    ):
        if cutoff <= 0:
            raise ValueError(f"cutoff must be positive, got {cutoff}")
        if points_per_axis < 3 or points_per_axis % 2 == 0:
            raise ValueError(
                f"points_per_axis must be an odd integer >= 3, got {points_per_axis}"
            )
        if not 2.0 <= alpha < 3.0:
            raise ValueError(f"alpha must lie in [2, 3), got {alpha}")
        if time_horizon <= 0:
            raise ValueError(f"time_horizon must be positive, got {time_horizon}")
        if time_nodes < 2:
            raise ValueError(f"time_nodes must be >= 2, got {time_nodes}")
        self.cutoff = float(cutoff)
        self.points_per_axis = int(points_per_axis)
        self.spacing = 2.0 * self.cutoff / (self.points_per_axis - 1)
        if singular_cutoff is None:
            singular_cutoff = 0.5 * self.spacing
        if not 0.0 < singular_cutoff < self.spacing:
            raise ValueError(
                f"singular_cutoff must lie in (0, spacing), got {singular_cutoff}"
            )
        self.singular_cutoff = float(singular_cutoff)
        self.time_horizon = float(time_horizon)
        self.time_nodes = int(time_nodes)
        self.alpha = float(alpha)
        self.eps = self.alpha - 2.0

        m = self.points_per_axis
        half = (m - 1) // 2
        # build symmetrically so the origin node is exactly zero
        self.axis = self.spacing * (np.arange(m, dtype=np.float64) - half)
        gx, gy, gz = np.meshgrid(self.axis, self.axis, self.axis, indexing="ij")
        self.coords = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        self.n_nodes = m**3
        self.knorm = np.linalg.norm(self.coords, axis=1)
        self.origin_index = (half * m + half) * m + half
        assert self.knorm[self.origin_index] == 0.0
        self.ksq = self.knorm**2
        self.kalpha = self.knorm**self.alpha  # 0 at the origin since alpha >= 2
        self.times = np.linspace(0.0, self.time_horizon, self.time_nodes)
        self.dt = self.times[1] - self.times[0]

        self._singular_weight: np.ndarray | None = None
        self._fft_size: int | None = None
        self._conv_weights: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
        self._gain_profile: np.ndarray | None = None
        self._gain_probes: np.ndarray | None = None

    # -- identity -----------------------------------------------------------

    def describe(self) -> dict:
        return {
            "cutoff": self.cutoff,
            "points_per_axis": self.points_per_axis,
            "spacing": self.spacing,
            "singular_cutoff": self.singular_cutoff,
            "time_horizon": self.time_horizon,
            "time_nodes": self.time_nodes,
            "alpha": self.alpha,
        }

    def __eq__(self, other) -> bool:
        return isinstance(other, Grid) and self.describe() == other.describe()

    def __hash__(self):
        return hash(tuple(sorted(self.describe().items())))

    def node_index(self, ix: int, iy: int, iz: int) -> int:
        m = self.points_per_axis
        return (ix * m + iy) * m + iz

    # -- cached kernel tables -------------------------------------------------

    def singular_weight(self) -> np.ndarray:
        """Excised kernel factor |k|^(-alpha) on the node lattice, shaped
        (M, M, M); nodes within the singular cutoff of k = 0 carry 0.

        The quadrature kernel 1/(|k_a - k_b|^alpha |k_b|^alpha) is this
        factor evaluated once at the difference vector and once at the
        integration node, which turns the bilinear quadrature sweep into
        a linear convolution of two masked fields.
        """
        if self._singular_weight is None:
            m = self.points_per_axis
            knorm = self.knorm.copy()
            knorm[knorm < self.singular_cutoff] = np.inf
            self._singular_weight = (knorm ** (-self.alpha)).reshape(m, m, m)
        return self._singular_weight

    def conv_weights(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-node product-integration weights for one time step.

        Returns (decay, w_left, w_right) with decay = exp(-|k|^2 dt) and
        int_0^dt exp(-|k|^2 (dt-u)) (f0 + (f1-f0) u/dt) du
            = f0 * w_left + f1 * w_right.
        """
        if self._conv_weights is None:
            z = self.ksq * self.dt
            decay = np.exp(-z)
            small = z < 1e-4
            with np.errstate(divide="ignore", invalid="ignore"):
                g0 = np.where(small, 1.0 - z / 2.0 + z * z / 6.0, -np.expm1(-z) / np.where(small, 1.0, z))
                g1 = np.where(
                    small,
                    0.5 - z / 6.0 + z * z / 24.0,
                    (z - 1.0 + decay) / np.where(small, 1.0, z * z),
                )
            w0 = self.dt * g0
            w1 = self.dt * g1
            self._conv_weights = (decay, w0 - w1, w1)
        return self._conv_weights

    def fft_size(self) -> int:
        """Transform length for the linear convolution (>= 2M - 1)."""
        if self._fft_size is None:
            from scipy.fft import next_fast_len

            self._fft_size = int(next_fast_len(2 * self.points_per_axis - 1))
        return self._fft_size

    def clear_caches(self) -> None:
        self._singular_weight = None
        self._fft_size = None
        self._conv_weights = None
        self._gain_profile = None
        self._gain_probes = None


class Field:
    """A complex 3-vector per grid node; the origin value must vanish."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values: np.ndarray):
        values = np.asarray(values, dtype=np.complex128)
        if values.shape != (grid.n_nodes, 3):
            raise ValueError(
                f"values must have shape ({grid.n_nodes}, 3), got {values.shape}"
            )
        if values[grid.origin_index].any():
            raise ValueError("field value at the origin node must be zero")
        self.grid = grid
        self.values = values

    @classmethod
    def zero(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros((grid.n_nodes, 3), dtype=np.complex128))

    def sup_norm(self) -> float:
        return float(np.sqrt((np.abs(self.values) ** 2).sum(axis=1)).max())

    def divergence_residual(self) -> float:
        """max_k |<k, c(k)>| with the bilinear pairing."""
        return float(np.abs((self.coords_dot())).max())

    def coords_dot(self) -> np.ndarray:
        return (self.grid.coords * self.values).sum(axis=1)

    def validate(self, tol_factor: float = 1e-10) -> None:
        sup = self.sup_norm()
        if self.divergence_residual() > tol_factor * max(sup, 1e-300):
            raise ValueError("field is not divergence-free within tolerance")

    def __add__(self, other: "Field") -> "Field":
        _check_same_grid(self.grid, other.grid)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        _check_same_grid(self.grid, other.grid)
        return Field(self.grid, self.values - other.values)

    def __mul__(self, scalar) -> "Field":
        return Field(self.grid, self.values * scalar)

    __rmul__ = __mul__


class Trajectory:
    """A field sampled at the grid's uniform time nodes."""

    __slots__ = ("grid", "frames")

    def __init__(self, grid: Grid, frames: np.ndarray):
        frames = np.asarray(frames, dtype=np.complex128)
        if frames.shape != (grid.time_nodes, grid.n_nodes, 3):
            raise ValueError(
                f"frames must have shape ({grid.time_nodes}, {grid.n_nodes}, 3), "
                f"got {frames.shape}"
            )
        self.grid = grid
        self.frames = frames

    @classmethod
    def zero(cls, grid: Grid) -> "Trajectory":
        return cls(grid, np.zeros((grid.time_nodes, grid.n_nodes, 3), dtype=np.complex128))

    def field_at(self, j: int) -> Field:
        return Field(self.grid, self.frames[j])

    def sup_profile(self) -> np.ndarray:
        """Per-time-node sup norm."""
        return np.sqrt((np.abs(self.frames) ** 2).sum(axis=2)).max(axis=1)

    def sup_norm(self) -> float:
        return float(self.sup_profile().max())

    def __add__(self, other: "Trajectory") -> "Trajectory":
        _check_same_grid(self.grid, other.grid)
        return Trajectory(self.grid, self.frames + other.frames)

    def __sub__(self, other: "Trajectory") -> "Trajectory":
        _check_same_grid(self.grid, other.grid)
        return Trajectory(self.grid, self.frames - other.frames)

    def __mul__(self, scalar) -> "Trajectory":
        return Trajectory(self.grid, self.frames * scalar)

    __rmul__ = __mul__


def _check_same_grid(a: Grid, b: Grid) -> None:
    if a is not b and a != b:
        raise ValueError("operands live on different grids")


# ---------------------------------------------------------------------------
# pointwise operators
# ---------------------------------------------------------------------------

def project_divfree(values: np.ndarray, wavevectors: np.ndarray) -> np.ndarray:
    """Orthogonal projection onto the plane normal to each wavevector.

    a -> a - k <k, a> / |k|^2 with the bilinear pairing.  Rows with k = 0
    are returned unchanged (the origin node is zeroed elsewhere).
    """
    values = np.asarray(values, dtype=np.complex128)
    k = np.asarray(wavevectors, dtype=np.float64)
    single = values.ndim == 1
    if single:
        values = values[None, :]
        k = k[None, :]
    ksq = (k * k).sum(axis=1)
    dot = (k * values).sum(axis=1)
    scale = np.where(ksq > 0.0, dot / np.where(ksq > 0.0, ksq, 1.0), 0.0)
    out = values - k * scale[:, None]
    return out[0] if single else out


def semigroup_apply(field: Field, t: float) -> Field:
    """Multiply by exp(-|k|^2 t); contracts the sup norm for t >= 0."""
    if t < 0:
        raise ValueError(f"the semigroup is defined for t >= 0, got {t}")
    factor = np.exp(-field.grid.ksq * t)
    return Field(field.grid, field.values * factor[:, None])


def semigroup_trajectory(field: Field) -> Trajectory:
    """The free evolution S_t h sampled on the grid's time nodes."""
    grid = field.grid
    factors = np.exp(-np.outer(grid.times, grid.ksq))
    return Trajectory(grid, factors[:, :, None] * field.values[None, :, :])


def sup_norm(field: Field) -> float:
    return field.sup_norm()


def to_velocity(field: Field) -> Field:
    """v(k) = |k|^(-alpha) c(k); the origin stays zero."""
    grid = field.grid
    inv = np.zeros_like(grid.knorm)
    mask = grid.knorm > 0
    inv[mask] = grid.knorm[mask] ** (-grid.alpha)
    return Field(grid, field.values * inv[:, None])


def from_velocity(field: Field) -> Field:
    """c(k) = |k|^alpha v(k); inverse of to_velocity away from the origin."""
    return Field(field.grid, field.values * field.grid.kalpha[:, None])


def make_initial(
    grid: Grid,
    kind: str,
    amplitude: float,
    seed: int = 0,
    *,
    shell_center: float | None = None,
    shell_width: float | None = None,
) -> Field:
    """Deterministic divergence-free initial data with the requested sup norm.

    ``single_bump``: a fixed direction projected onto each node of a
    spherical shell of nodes.  ``random_divfree``: per-node complex
    Gaussian draws projected node by node; identical seeds give bitwise
    identical fields.
    """
    if amplitude <= 0:
        raise ValueError(f"amplitude must be positive, got {amplitude}")
    values = np.zeros((grid.n_nodes, 3), dtype=np.complex128)
    if kind == "single_bump":
        center = 0.5 * grid.cutoff if shell_center is None else shell_center
        width = grid.spacing if shell_width is None else shell_width
        on_shell = np.abs(grid.knorm - center) <= 0.5 * width
        on_shell[grid.origin_index] = False
        if not on_shell.any():
            raise ValueError("the requested shell contains no grid nodes")
        direction = np.array([1.0, 0.7 + 0.2j, 0.3 - 0.4j], dtype=np.complex128)
        values[on_shell] = direction
    elif kind == "random_divfree":
        rng = np.random.default_rng(seed)
        values = rng.standard_normal((grid.n_nodes, 3)) + 1j * rng.standard_normal(
            (grid.n_nodes, 3)
        )
    else:
        raise ValueError(f"unknown initial-condition kind {kind!r}")
    values = project_divfree(values, grid.coords)
    values[grid.origin_index] = 0.0
    norms = np.sqrt((np.abs(values) ** 2).sum(axis=1))
    peak = norms.max()
    if peak == 0.0:
        raise ValueError("projection annihilated the requested field")
    values *= amplitude / peak
    return Field(grid, values)


# ---------------------------------------------------------------------------
# bilinear convolution
# ---------------------------------------------------------------------------

def _bilinear_one(c: Field, d: Field) -> np.ndarray:
    """Quadrature of i |k|^alpha P_k sum_b W(k - k_b) W(k_b) <k, c(k - k_b)> d(k_b) h^3.

    Because the excised weight W(q) = |q|^(-alpha) applies once at the
    difference vector and once at the integration node, the sum over b
    is the linear convolution of the masked fields F_s = c_s W and
    G_m = d_m W, evaluated with zero padding:

        v_m(k_a) = sum_s (k_a)_s (F_s * G_m)(a),

    nine scalar FFT convolutions per call.  Identical to the direct
    O(N^2) sum up to FFT roundoff (cross-checked against bilinear_at).
    """
    grid = c.grid
    m = grid.points_per_axis
    q = grid.fft_size()
    shape = (q, q, q)
    weight = grid.singular_weight()
    cell = grid.spacing**3
    axes = (0, 1, 2)
    f_hat = [
        np.fft.fftn(c.values[:, s].reshape(m, m, m) * weight, s=shape, axes=axes)
        for s in range(3)
    ]
    g_hat = [
        np.fft.fftn(d.values[:, mm].reshape(m, m, m) * weight * cell, s=shape, axes=axes)
        for mm in range(3)
    ]
    # (F * G)[a + half] = sum_b F[a - b + half] G[b], and node a - b + half
    # is exactly the lattice point carrying the difference k_a - k_b
    half = (m - 1) // 2
    sl = slice(half, half + m)
    kx = grid.coords[:, 0].reshape(m, m, m)
    ky = grid.coords[:, 1].reshape(m, m, m)
    kz = grid.coords[:, 2].reshape(m, m, m)
    out = np.empty((grid.n_nodes, 3), dtype=np.complex128)
    for mm in range(3):
        acc = np.zeros((m, m, m), dtype=np.complex128)
        for s, kcomp in enumerate((kx, ky, kz)):
            conv = np.fft.ifftn(f_hat[s] * g_hat[mm])[sl, sl, sl]
            acc += kcomp * conv
        out[:, mm] = acc.ravel()
    proj = project_divfree(out, grid.coords)
    return 1j * grid.kalpha[:, None] * proj


def bilinear(c: Field, d: Field) -> Field:
    """Symmetrized singular-kernel convolution; output is divergence-free
    and vanishes at the origin (the |k|^alpha prefactor is 0 there)."""
    _check_same_grid(c.grid, d.grid)
    vals = 0.5 * (_bilinear_one(c, d) + _bilinear_one(d, c))
    return Field(c.grid, vals)


def bilinear_at(c: Field, d: Field, rows: Sequence[int]) -> np.ndarray:
    """Direct-sum bilinear values at selected output nodes.

    An independent O(N) per-row evaluation of the same quadrature: it
    cross-checks the FFT path and scales to grids too large for a
    full-field sweep (quadrature-refinement studies).
    """
    _check_same_grid(c.grid, d.grid)
    grid = c.grid
    rows = np.asarray(list(rows), dtype=np.int64)
    delta = grid.singular_cutoff
    cell = grid.spacing**3
    inv_kb = np.where(grid.knorm >= delta, grid.knorm, np.inf) ** (-grid.alpha)
    m = grid.points_per_axis
    p = 2 * m - 1
    half = (m - 1) // 2
    # padded[u] = values[u - half], so the gather index (a - b) + (m - 1)
    # lands on node (a - b) + half: the lattice point of k_a - k_b
    blk = slice(half, half + m)
    padded_c = np.zeros((p, p, p, 3), dtype=np.complex128)
    padded_c[blk, blk, blk] = c.values.reshape(m, m, m, 3)
    padded_c = padded_c.reshape(p**3, 3)
    padded_d = np.zeros((p, p, p, 3), dtype=np.complex128)
    padded_d[blk, blk, blk] = d.values.reshape(m, m, m, 3)
    padded_d = padded_d.reshape(p**3, 3)
    idx3 = np.stack(np.unravel_index(np.arange(grid.n_nodes), (m, m, m)), axis=1)
    out = np.empty((len(rows), 3), dtype=np.complex128)
    for row_pos, a in enumerate(rows):
        k = grid.coords[a]
        da = idx3[a] - idx3 + (m - 1)
        jrow = (da[:, 0] * p + da[:, 1]) * p + da[:, 2]
        dist = np.linalg.norm(k[None, :] - grid.coords, axis=1)
        dist[dist < delta] = np.inf  # excised cells get weight 0
        wrow = dist ** (-grid.alpha)
        wrow *= inv_kb * cell
        sdot = (padded_c[jrow] @ k) * wrow
        v1 = sdot @ d.values
        # mirrored slot order for the symmetrization
        sdot_d = (padded_d[jrow] @ k) * wrow
        v2 = sdot_d @ c.values
        v = 0.5 * (v1 + v2)
        ksq = k @ k
        if ksq > 0:
            v = v - k * ((k @ v) / ksq)
        out[row_pos] = 1j * (np.linalg.norm(k) ** grid.alpha) * v
    return out


# ---------------------------------------------------------------------------
# time convolution
# ---------------------------------------------------------------------------

def duhamel_convolve(traj: Trajectory) -> Trajectory:
    """int_0^{t_j} exp(-|k|^2 (t_j - s)) f_s(k) ds by product integration.

    The integrand data is taken piecewise linear between time nodes while
    the stiff exponential factor is integrated exactly on each step, so
    large |k| never forces a finer time grid.
    """
    grid = traj.grid
    decay, w_left, w_right = grid.conv_weights()
    out = np.zeros_like(traj.frames)
    dk = decay[:, None]
    wl = w_left[:, None]
    wr = w_right[:, None]
    for jstep in range(grid.time_nodes - 1):
        out[jstep + 1] = dk * out[jstep] + wl * traj.frames[jstep] + wr * traj.frames[jstep + 1]
    return Trajectory(grid, out)


def duhamel_bilinear(c: Trajectory, d: Trajectory) -> Trajectory:
    """Time convolution of the frame-wise symmetrized bilinear term."""
    _check_same_grid(c.grid, d.grid)
    grid = c.grid
    frames = np.empty_like(c.frames)
    for jt in range(grid.time_nodes):
        frames[jt] = bilinear(c.field_at(jt), d.field_at(jt)).values
    return duhamel_convolve(Trajectory(grid, frames))


# ---------------------------------------------------------------------------
# operator-norm gain
# ---------------------------------------------------------------------------

def duhamel_gain(grid: Grid, t: float, probes: np.ndarray | None = None) -> float:
    """Norm bound of the Duhamel-convolved bilinear operator at time t.

    sup over wavevector magnitudes q of
        psi(q)^{-1} q^{-1} (1 - exp(-q^2 t)) I(q)
    with psi the |q|^{-alpha} envelope (same exponent on both sides of
    q = 1 here) and I the envelope self-convolution.  Increasing in t,
    zero at t = 0, and uniformly bounded when alpha = 2.
    """
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    if t == 0:
        return 0.0
    from nstrees.bounds import envelope_convolution

    if probes is None:
        if grid._gain_probes is None:
            lo = 0.25 * grid.spacing
            hi = 3.0 * float(grid.knorm.max())
            grid._gain_probes = np.geomspace(lo, hi, 48)
        probes = grid._gain_probes
        if grid._gain_profile is None:
            grid._gain_profile = np.array(
                [envelope_convolution(q, grid.alpha, grid.alpha) for q in probes]
            )
        iprofile = grid._gain_profile
    else:
        probes = np.asarray(probes, dtype=np.float64)
        iprofile = np.array(
            [envelope_convolution(q, grid.alpha, grid.alpha) for q in probes]
        )
    psi_inv = probes**grid.alpha  # same exponent below and above q = 1
    vals = psi_inv / probes * (-np.expm1(-probes**2 * t)) * iprofile
    return float(vals.max())


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def field_to_json(field: Field) -> dict:
    """Self-describing container; node (ix,iy,iz) <-> flat (ix*M+iy)*M+iz,
    k = (-K, -K, -K) + spacing * (ix, iy, iz), values interleaved
    [re1, im1, re2, im2, re3, im3] per node."""
    flat = np.empty(field.grid.n_nodes * 6)
    flat[0::2] = field.values.real.ravel()
    flat[1::2] = field.values.imag.ravel()
    return {
        "grid": field.grid.describe(),
        "layout": "row-major (ix*M+iy)*M+iz, axes x,y,z; k = -K + spacing*(ix,iy,iz)",
        "values": flat.tolist(),
    }


def field_from_json(payload: dict, grid: Grid | None = None) -> Field:
    if grid is None:
        spec = dict(payload["grid"])
        spec.pop("spacing", None)
        grid = Grid(
            spec["cutoff"],
            spec["points_per_axis"],
            singular_cutoff=spec["singular_cutoff"],
            time_horizon=spec["time_horizon"],
            time_nodes=spec["time_nodes"],
            alpha=spec["alpha"],
        )
    flat = np.asarray(payload["values"], dtype=np.float64)
    values = (flat[0::2] + 1j * flat[1::2]).reshape(grid.n_nodes, 3)
    return Field(grid, values)


def trajectory_to_json(traj: Trajectory) -> dict:
    frames = []
    for jt in range(traj.grid.time_nodes):
        flat = np.empty(traj.grid.n_nodes * 6)
        flat[0::2] = traj.frames[jt].real.ravel()
        flat[1::2] = traj.frames[jt].imag.ravel()
        frames.append(flat.tolist())
    return {
        "grid": traj.grid.describe(),
        "times": traj.grid.times.tolist(),
        "layout": "row-major (ix*M+iy)*M+iz, axes x,y,z; k = -K + spacing*(ix,iy,iz)",
        "frames": frames,
    }


def axis_slice_rows(field: Field) -> list[tuple[str, float, float]]:
    """(axis, coordinate, |c|) along each coordinate axis through the origin."""
    grid = field.grid
    m = grid.points_per_axis
    half = (m - 1) // 2
    rows = []
    mags = np.sqrt((np.abs(field.values) ** 2).sum(axis=1))
    for name, picker in (
        ("x", lambda i: grid.node_index(i, half, half)),
        ("y", lambda i: grid.node_index(half, i, half)),
        ("z", lambda i: grid.node_index(half, half, i)),
    ):
        for i in range(m):
            rows.append((name, float(grid.axis[i]), float(mags[picker(i)])))
    return rows


def save_field_json(field: Field, path) -> None:
    with open(path, "w") as fh:
        json.dump(field_to_json(field), fh, sort_keys=True)
