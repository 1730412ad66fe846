"""Fast dynamics: vector fields with time-reversal maps, fixed-step RK4
integration, ergodic sampling of the invariant measure, and a stochastic
Ornstein-Uhlenbeck surrogate with closed-form covariance / Levy area used
as an estimator oracle.

Vector fields take arrays of shape (..., m) and return the same shape, so a
single code path integrates one state or a whole ensemble.
"""

import struct
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .errors import BlowUpError, StructureError

DEFAULT_STEP = 0.01
OU_STEP = 0.005


@dataclass(frozen=True)
class FastSystem:
    """Fast vector field g with an affine time-reversal map R.

    A reversible system satisfies g(Ry) = -R g(y) on the attractor.
    """

    dim_m: int
    vector_field: callable
    reversal: np.ndarray
    default_initial: np.ndarray
    burn_in_time: float = 1000.0
    name: str = "custom"
    reversal_offset: np.ndarray = None
    reversible: bool = True

    def __post_init__(self):
        r = np.asarray(self.reversal, dtype=float)
        if r.shape != (self.dim_m, self.dim_m):
            raise StructureError(f"reversal must be {self.dim_m}x{self.dim_m}")
        object.__setattr__(self, "reversal", r)
        off = self.reversal_offset
        off = np.zeros(self.dim_m) if off is None else np.asarray(off, dtype=float)
        object.__setattr__(self, "reversal_offset", off)
        object.__setattr__(self, "default_initial",
                           np.asarray(self.default_initial, dtype=float))
        # R must be an involution: R(Ry) = y
        probe = np.linspace(-1.0, 1.0, self.dim_m)
        twice = self.apply_reversal(self.apply_reversal(probe))
        if np.max(np.abs(twice - probe)) > 1e-12 * max(1.0, np.max(np.abs(probe))):
            raise StructureError("reversal map is not an involution")

    def apply_reversal(self, y):
        return np.asarray(y) @ self.reversal.T + self.reversal_offset

    def with_burn_in(self, burn_in_time):
        return replace(self, burn_in_time=burn_in_time)


@dataclass(frozen=True)
class Trajectory:
    """Equally spaced states of the fast flow; points has shape (N, m)."""

    step: float
    points: np.ndarray
    start_time: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.points)
        if pts.ndim != 2:
            raise StructureError("trajectory points must be 2-d (N, m)")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def duration(self):
        return (len(self) - 1) * self.step

    @property
    def times(self):
        return self.start_time + self.step * np.arange(len(self))


def _rk4_step(f, y, h):
    k1 = f(y)
    k2 = f(y + (h / 2.0) * k1)
    k3 = f(y + (h / 2.0) * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(system, y0, duration, step=DEFAULT_STEP, check_every=256):
    """Fixed-step RK4 trajectory. Deterministic and bit-reproducible for
    identical inputs."""
    if step <= 0:
        raise ValueError("step must be positive")
    if duration < step:
        raise ValueError("duration must be at least one step")
    y = np.array(y0, dtype=float)
    n = int(round(duration / step))
    out = np.empty((n + 1, system.dim_m))
    out[0] = y
    f = system.vector_field
    for i in range(1, n + 1):
        y = _rk4_step(f, y, step)
        out[i] = y
        if i % check_every == 0 and not np.all(np.isfinite(y)):
            raise BlowUpError(i * step)
    if not np.all(np.isfinite(y)):
        raise BlowUpError(n * step)
    return Trajectory(step, out)


def integrate_batch(system, y0, duration, step=DEFAULT_STEP, check_every=256):
    """RK4 on a batch of initial states, shape (n, m) -> (n_steps+1, n, m)."""
    y = np.array(y0, dtype=float)
    n = int(round(duration / step))
    out = np.empty((n + 1,) + y.shape)
    out[0] = y
    f = system.vector_field
    for i in range(1, n + 1):
        y = _rk4_step(f, y, step)
        out[i] = y
        if i % check_every == 0 and not np.all(np.isfinite(y)):
            raise BlowUpError(i * step)
    return out


def sample_measure(system, duration, step=DEFAULT_STEP, seed=0):
    """Ergodic trajectory after burn-in, from a seed-jittered initial state.

    Averages along the returned points approximate integrals against the
    invariant measure. Same seed, same bits.
    """
    if duration <= system.burn_in_time:
        raise ValueError(
            f"duration {duration:g} must exceed burn-in time {system.burn_in_time:g}"
        )
    rng = np.random.Generator(np.random.Philox(seed))
    scale = max(1.0, float(np.max(np.abs(system.default_initial))))
    y0 = system.default_initial + 1e-3 * scale * rng.standard_normal(system.dim_m)
    traj = integrate(system, y0, duration, step)
    n_burn = int(round(system.burn_in_time / step))
    n_keep = int(round((duration - system.burn_in_time) / step))
    pts = traj.points[n_burn:n_burn + n_keep]
    return Trajectory(step, pts, start_time=system.burn_in_time)


def reversibility_residual(system, probe):
    """max over probe points of |g(Ry) + R g(y)|_inf."""
    pts = probe.points if isinstance(probe, Trajectory) else np.atleast_2d(probe)
    if pts.shape[0] == 0:
        raise ValueError("empty probe")
    g = system.vector_field
    lhs = g(system.apply_reversal(pts))
    rhs = g(pts) @ system.reversal.T
    return float(np.max(np.abs(lhs + rhs)))


def local_error_spot_check(system, traj, fraction=0.01, seed=0):
    """Re-do a random 1% of steps with two half-steps; return the max
    discrepancy against the stored next point (should be O(step^5))."""
    n = len(traj) - 1
    k = max(1, int(fraction * n))
    rng = np.random.Generator(np.random.Philox(seed))
    idx = rng.choice(n, size=min(k, n), replace=False)
    y = traj.points[idx]
    h = traj.step
    half = _rk4_step(system.vector_field, _rk4_step(system.vector_field, y, h / 2), h / 2)
    return float(np.max(np.abs(half - traj.points[idx + 1])))


# --- built-in systems ---

def _nose_hoover_field(temperature=1.0):
    def field(y):
        q = y[..., 0]
        p = y[..., 1]
        z = y[..., 2]
        return np.stack([p, -q - z * p, p * p - temperature], axis=-1)
    return field


def nose_hoover(temperature=1.0, burn_in_time=1000.0):
    """Nose-Hoover oscillator: qdot=p, pdot=-q-zeta*p, zetadot=p^2-T.

    Time-reversible under (q, p, zeta) -> (q, -p, -zeta). The default initial
    state sits in the chaotic sea at T=1.
    """
    return FastSystem(
        dim_m=3,
        vector_field=_nose_hoover_field(temperature),
        reversal=np.diag([1.0, -1.0, -1.0]),
        default_initial=np.array([0.0, 5.0, 0.0]),
        burn_in_time=burn_in_time,
        name="nose-hoover",
    )


def _nose_hoover_pair_field(temperature, coupling, stiffness, mass):
    k1, k2 = stiffness

    def field(y):
        q1, p1, z1 = y[..., 0], y[..., 1], y[..., 2]
        q2, p2, z2 = y[..., 3], y[..., 4], y[..., 5]
        return np.stack(
            [
                p1,
                -k1 * q1**3 - z1 * p1 + coupling * (q2 - q1),
                (p1 * p1 - temperature) / mass,
                p2,
                -k2 * q2**3 - z2 * p2 + coupling * (q1 - q2),
                (p2 * p2 - temperature) / mass,
            ],
            axis=-1,
        )
    return field


def nose_hoover_pair(temperature=1.0, coupling=1.5, stiffness=(1.0, 3.0),
                     mass=0.5, burn_in_time=1000.0, rate=1.0):
    """Two coupled Nose-Hoover oscillators with quartic wells (m=6).

    Reversible under flipping both (p, zeta) pairs; the coupling term depends
    only on positions, so it does not break the symmetry. The wells are
    detuned (different quartic stiffness) and the force is anharmonic:
    amplitude-dependent frequencies phase-mix, so observable correlations
    decay much faster than for a harmonic pair, whose collective mode keeps
    correlations of order 0.1 out to lag 80.

    `rate` multiplies the vector field, i.e. runs the same orbit rate times
    faster. The invariant measure and reversibility are untouched; correlation
    times shrink by 1 / rate, which pushes a fast-slow pairing at fixed
    epsilon deeper into the homogenisation regime.
    """
    base = _nose_hoover_pair_field(temperature, coupling, stiffness, mass)
    field = base if rate == 1.0 else (lambda y: rate * base(y))
    return FastSystem(
        dim_m=6,
        vector_field=field,
        reversal=np.diag([1.0, -1.0, -1.0, 1.0, -1.0, -1.0]),
        default_initial=np.array([0.0, 3.0, 0.0, 0.5, -3.0, 0.0]),
        burn_in_time=burn_in_time,
        name="nose-hoover-pair",
    )


def lorenz63(sigma=10.0, rho=28.0, beta=8.0 / 3.0, burn_in_time=100.0):
    """Lorenz-63 flow; not time-reversible (used as a negative control)."""
    def field(y):
        x1, x2, x3 = y[..., 0], y[..., 1], y[..., 2]
        return np.stack([sigma * (x2 - x1), x1 * (rho - x3) - x2, x1 * x2 - beta * x3],
                        axis=-1)
    return FastSystem(
        dim_m=3,
        vector_field=field,
        reversal=np.diag([1.0, -1.0, -1.0]),
        default_initial=np.array([1.0, 1.0, 20.0]),
        burn_in_time=burn_in_time,
        name="lorenz63",
        reversible=False,
    )


# --- Ornstein-Uhlenbeck surrogate ---

@dataclass(frozen=True)
class OUSurrogate:
    """dy = -Gamma y dt + sigma dW with stationary covariance C0 solving the
    Lyapunov identity Gamma C0 + C0 Gamma^T = sigma sigma^T."""

    gamma: np.ndarray
    sigma_noise: np.ndarray
    stationary_cov: np.ndarray = field(default=None)

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        s = np.asarray(self.sigma_noise, dtype=float)
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "sigma_noise", s)
        eigs = np.linalg.eigvals(g)
        if np.min(eigs.real) <= 0:
            raise StructureError("Gamma must be stable (eigenvalues with positive real part)")
        c0 = self.stationary_cov
        if c0 is None:
            c0 = scipy.linalg.solve_continuous_lyapunov(g, s @ s.T)
            c0 = (c0 + c0.T) / 2.0
        else:
            c0 = np.asarray(c0, dtype=float)
        resid = np.max(np.abs(g @ c0 + c0 @ g.T - s @ s.T))
        if resid > 1e-10 * max(1.0, np.max(np.abs(s @ s.T))):
            raise StructureError(f"Lyapunov identity violated (residual {resid:.3e})")
        object.__setattr__(self, "stationary_cov", c0)

    @property
    def dim(self):
        return self.gamma.shape[0]


def ou_closed_form(surrogate, v_matrix=None):
    """Closed-form (Sigma, E) for the linear observable V y on the surrogate.

    Uses C(t) = V C0 exp(-Gamma^T t) V^T integrated termwise:
    int_0^inf C dt = V C0 Gamma^-T V^T.
    """
    gamma = surrogate.gamma
    c0 = surrogate.stationary_cov
    d = surrogate.dim
    v = np.eye(d) if v_matrix is None else np.asarray(v_matrix, dtype=float)
    gamma_inv = np.linalg.inv(gamma)
    fwd = c0 @ gamma_inv.T   # int C(t) dt
    bwd = gamma_inv @ c0     # int C(t)^T dt
    sigma = v @ (fwd + bwd) @ v.T
    e = v @ (fwd - bwd) @ v.T
    return (sigma + sigma.T) / 2.0, (e - e.T) / 2.0


def ou_correlation(surrogate, t, v_matrix=None):
    """C_v(t) = V C0 exp(-Gamma^T t) V^T."""
    d = surrogate.dim
    v = np.eye(d) if v_matrix is None else np.asarray(v_matrix, dtype=float)
    return v @ surrogate.stationary_cov @ scipy.linalg.expm(-surrogate.gamma.T * t) @ v.T


def simulate_ou(surrogate, n_steps, step=OU_STEP, seed=0, n_paths=1, dtype=np.float64):
    """Euler-Maruyama paths started from the stationary law.

    Returns a Trajectory for n_paths=1, else an array (n_steps, n_paths, d).
    Noise comes from a counter-based Philox stream keyed by `seed`, drawn in
    fixed-size step chunks so results do not depend on how callers batch.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    d = surrogate.dim
    sqrt_c0 = _psd_sqrt(surrogate.stationary_cov)[0]
    y = rng.standard_normal((n_paths, d)) @ sqrt_c0.T
    prop = -step * surrogate.gamma.T
    noise_t = np.sqrt(step) * surrogate.sigma_noise.T
    out = np.empty((n_steps, n_paths, d), dtype=dtype)
    chunk = 32768
    pos = 0
    while pos < n_steps:
        take = min(chunk, n_steps - pos)
        z = rng.standard_normal((take, n_paths, d))
        for i in range(take):
            y = y + y @ prop + z[i] @ noise_t
            out[pos + i] = y
        pos += take
    if n_paths == 1:
        return Trajectory(step, np.asarray(out[:, 0, :], dtype=np.float64))
    return out


def _psd_sqrt(mat, floor=-1e-8):
    """Symmetric PSD square root by eigendecomposition.

    Eigenvalues in [floor, 0) are clipped to zero; anything below `floor`
    raises. Returns (root, min_eigenvalue) so callers can report the floor
    event instead of silently clipping.
    """
    mat = np.asarray(mat, dtype=float)
    w, u = np.linalg.eigh((mat + mat.T) / 2.0)
    scale = max(1.0, float(np.max(np.abs(w))))
    if w.min() < floor * scale:
        raise StructureError(f"matrix is not PSD: min eigenvalue {w.min():.3e}")
    root = (u * np.sqrt(np.clip(w, 0.0, None))) @ u.T
    return root, float(w.min())


# --- trajectory persistence ---

_MAGIC = b"FSTJ"
_VERSION = 1


def save_trajectory(path, traj):
    """Append-only binary format: 16-byte header (magic 'FSTJ', version, m,
    step as 8-byte float), then little-endian float64 records, m per state."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sHH d", _MAGIC, _VERSION, traj.dim, traj.step))
        fh.write(np.ascontiguousarray(traj.points, dtype="<f8").tobytes())


def load_trajectory(path):
    with open(path, "rb") as fh:
        header = fh.read(16)
        magic, version, m, step = struct.unpack("<4sHH d", header)
        if magic != _MAGIC:
            raise StructureError(f"bad magic {magic!r} in trajectory file")
        if version != _VERSION:
            raise StructureError(f"unsupported trajectory version {version}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    return Trajectory(step, data.reshape(-1, m).copy())


def trajectory_to_csv(path, traj):
    """CSV export for small trajectories: time, then the m coordinates."""
    with open(path, "w") as fh:
        fh.write("# columns: t, y1..ym\n")
        for t, row in zip(traj.times, traj.points):
            fh.write(f"{t:.10g}," + ",".join(f"{x:.17g}" for x in row) + "\n")
