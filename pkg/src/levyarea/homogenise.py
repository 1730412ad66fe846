"""Fast-slow simulation at small epsilon, the limiting Stratonovich SDE with
Levy-area drift correction, and statistical comparison of the two laws.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import BlowUpError, StructureError
from .systems import (Trajectory, _psd_sqrt, _rk4_step, integrate_batch,
                      sample_measure)


@dataclass(frozen=True)
class SlowField:
    """Slow drift a, diffusion matrix field b and its Jacobian, plus the slow
    time-reversal involution S.

    b_jacobian(x) has entries [alpha, beta, gamma] = d b^{beta gamma} / d
    x^alpha. A reversible field satisfies a(Sx) = -S a(x) and
    b(Sx) = -S b(x) A.
    """

    dim: int
    a: callable
    b: callable
    b_jacobian: callable = None
    s_matrix: np.ndarray = None
    reversible: bool = True
    name: str = "custom"

    def __post_init__(self):
        if self.s_matrix is not None:
            object.__setattr__(self, "s_matrix", np.asarray(self.s_matrix, dtype=float))
        if self.b_jacobian is None:
            object.__setattr__(self, "b_jacobian", _fd_jacobian(self.b, self.dim))


def _fd_jacobian(b, dim, h=1e-6):
    """Central finite-difference Jacobian of the matrix field b."""
    def jac(x):
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape[:-1] + (dim, dim, dim))
        for alpha in range(dim):
            dx = np.zeros(dim)
            dx[alpha] = h
            out[..., alpha, :, :] = (b(x + dx) - b(x - dx)) / (2 * h)
        return out
    return jac


def slow_reversibility_residuals(slow, a_matrix, probes):
    """(max |a(Sx)+S a(x)|, max |b(Sx)+S b(x) A|) over probe points."""
    s = slow.s_matrix
    probes = np.atleast_2d(probes)
    spts = probes @ s.T
    ra = np.max(np.abs(slow.a(spts) + slow.a(probes) @ s.T))
    bs = slow.b(spts)
    sba = np.einsum("ij,...jk,kl->...il", s, slow.b(probes), np.asarray(a_matrix, float))
    rb = np.max(np.abs(bs + sba))
    return float(ra), float(rb)


@dataclass(frozen=True)
class FastSlowRun:
    """Configuration of one fast-slow integration (Eq-(1)-type system)."""

    epsilon: float
    coupling: object          # Observable v
    fast: object              # FastSystem
    slow: SlowField
    xi: np.ndarray
    t_final: float
    step_fast: float = 0.01

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError("epsilon must lie in (0, 1)")
        if self.step_fast > 0.01:
            raise ValueError("step_fast must resolve the fast dynamics (<= 0.01)")
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float))


@dataclass(frozen=True)
class EnsembleLaw:
    """Terminal states of an ensemble, with summary statistics."""

    samples: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 2 or s.shape[0] < 2:
            raise StructureError("ensemble needs at least 2 samples of shape (n, d)")
        if not np.all(np.isfinite(s)):
            raise StructureError("non-finite entries in ensemble")
        object.__setattr__(self, "samples", s)

    @property
    def mean(self):
        return self.samples.mean(axis=0)

    @property
    def cov(self):
        return np.cov(self.samples.T, ddof=1).reshape(self.dim, self.dim)

    @property
    def dim(self):
        return self.samples.shape[1]


def drift_correction(slow, e_matrix, x):
    """The Levy-area drift term (1/2) sum E^{gb} d_a b^{rb} b^{ag}, as a
    vector at x; the caller assembles a_tilde = a + correction."""
    e = np.asarray(e_matrix, dtype=float)
    if np.max(np.abs(e + e.T)) > 1e-10 * max(1.0, np.max(np.abs(e))):
        raise StructureError("E must be skew-symmetric")
    x = np.asarray(x, dtype=float)
    jac = slow.b_jacobian(x)
    bmat = slow.b(x)
    return 0.5 * np.einsum("gb,...arb,...ag->...r", e, jac, bmat)


_START_JITTER = 1e-2
_DECORRELATION_TIME = 60.0


def _initial_fast_states(system, n, seed, step, gap=5.0, stationary=True):
    """n effectively independent draws from the invariant measure.

    Subsamples one long seeded trajectory every `gap` time units. Because
    the flow is deterministic, those subsamples are exact time-shifted
    copies of one orbit, so ensembles seeded from them would share their
    future; each start is therefore jittered and run through a chaotic
    decorrelation lead-in long enough for the jitter to grow to attractor
    size, which separates the ensemble members.
    """
    if stationary:
        traj = sample_measure(system, system.burn_in_time + n * gap + gap, step, seed)
        stride = max(1, int(round(gap / step)))
        pts = np.array(traj.points[::stride][:n], dtype=float)
        rng = np.random.Generator(np.random.Philox([seed, 1]))
        scale = np.std(traj.points, axis=0)
        pts = pts + _START_JITTER * scale * rng.standard_normal(pts.shape)
        pts = integrate_batch(system, pts, _DECORRELATION_TIME, step)[-1]
    else:
        rng = np.random.Generator(np.random.Philox(seed))
        pts = system.default_initial + 0.1 * rng.standard_normal((n, system.dim_m))
    if pts.shape[0] < n:
        raise ValueError("sampler trajectory too short for requested ensemble")
    return np.array(pts)


def simulate_fast_slow(run, seed, n_paths=1, record_every=0, cold_start=False):
    """Integrate the coupled system in fast time s = t / eps^2 by RK4:
    dy/ds = g(y), dx/ds = eps^2 a(x) + eps b(x) v(y) for s in [0, T/eps^2].

    Initial fast states come from the measure sampler keyed by `seed`.
    Returns (terminal X of shape (n_paths, d), path or None). The recorded
    path has shape (n_rec, n_paths, d) in slow time.
    """
    eps = run.epsilon
    d = run.slow.dim
    m = run.fast.dim_m
    h = run.step_fast
    n_steps = int(round(run.t_final / (eps * eps) / h))
    y = _initial_fast_states(run.fast, n_paths, seed, h, stationary=not cold_start)
    x = np.broadcast_to(run.xi, (n_paths, d)).copy()
    a, b, v = run.slow.a, run.slow.b, run.coupling
    eps2 = eps * eps

    def field(z):
        xz, yz = z[..., :d], z[..., d:]
        dx = eps2 * a(xz) + eps * np.einsum("...ij,...j->...i", b(xz), v(yz))
        return np.concatenate([dx, run.fast.vector_field(yz)], axis=-1)

    z = np.concatenate([x, y], axis=-1)
    path = []
    if record_every:
        path.append(z[:, :d].copy())
    for i in range(1, n_steps + 1):
        z = _rk4_step(field, z, h)
        if record_every and i % record_every == 0:
            path.append(z[:, :d].copy())
        if i % 256 == 0 and not np.all(np.isfinite(z)):
            raise BlowUpError(i * h * eps2)
    if not np.all(np.isfinite(z)):
        raise BlowUpError(run.t_final)
    terminal = z[:, :d].copy()
    return terminal, (np.array(path) if record_every else None)


def fast_slow_ensemble(run, seed, n_paths):
    """EnsembleLaw of terminal slow states."""
    terminal, _ = simulate_fast_slow(run, seed, n_paths)
    return EnsembleLaw(terminal, {"kind": "fast-slow", "epsilon": run.epsilon,
                                  "seed": seed, "T": run.t_final})


def simulate_sde(slow, sigma, e_matrix, xi, t_final, step, seed, n_paths=1):
    """Stratonovich SDE dX = a_tilde dt + b(X) o dW by the Heun
    (midpoint-predictor) scheme; W has covariance Sigma, realized as
    dW = sqrt(step) M z with M the symmetric PSD root of Sigma.

    Returns an EnsembleLaw of terminal states; deterministic given seed.
    """
    sigma = np.asarray(sigma, dtype=float)
    e = np.asarray(e_matrix, dtype=float)
    d = slow.dim
    root, min_eig = _psd_sqrt(sigma)
    rng = np.random.Generator(np.random.Philox(seed))
    n_steps = int(round(t_final / step))
    x = np.broadcast_to(np.asarray(xi, dtype=float), (n_paths, d)).copy()
    sqrt_h = np.sqrt(step)
    e_is_zero = not np.any(e)

    def drift(xs):
        base = slow.a(xs)
        if e_is_zero:
            return base
        return base + drift_correction(slow, e, xs)

    chunk = 4096
    pos = 0
    while pos < n_steps:
        take = min(chunk, n_steps - pos)
        z = rng.standard_normal((take, n_paths, d))
        for i in range(take):
            dw = sqrt_h * z[i] @ root.T
            f0 = drift(x)
            g0 = np.einsum("...ij,...j->...i", slow.b(x), dw)
            xp = x + step * f0 + g0
            g1 = np.einsum("...ij,...j->...i", slow.b(xp), dw)
            x = x + 0.5 * step * (f0 + drift(xp)) + 0.5 * (g0 + g1)
        pos += take
    return EnsembleLaw(x, {"kind": "SDE", "seed": seed, "T": t_final,
                           "step": step, "sigma_floor_eig": min_eig})


@dataclass(frozen=True)
class LawComparison:
    """Per-component two-sample summary between ensembles."""

    mean_diff: np.ndarray
    pooled_se: np.ndarray
    cov_diff: np.ndarray
    ks_stat: np.ndarray
    ks_pvalue: np.ndarray
    passed: bool
    mean_ok: np.ndarray
    ks_ok: np.ndarray
    thresholds: dict

    def to_dict(self):
        return {
            "mean_diff": self.mean_diff.tolist(),
            "pooled_se": self.pooled_se.tolist(),
            "cov_diff": self.cov_diff.tolist(),
            "ks_stat": self.ks_stat.tolist(),
            "ks_pvalue": self.ks_pvalue.tolist(),
            "mean_ok": self.mean_ok.tolist(),
            "ks_ok": self.ks_ok.tolist(),
            "passed": bool(self.passed),
            "thresholds": self.thresholds,
        }


def compare_laws(lhs, rhs, ks_p_floor=0.01, mean_se_factor=3.0):
    """Mean / covariance differences with pooled standard errors and
    per-component asymptotic two-sample Kolmogorov-Smirnov tests."""
    if lhs.dim != rhs.dim:
        raise StructureError(f"dimension mismatch: {lhs.dim} vs {rhs.dim}")
    d = lhs.dim
    nl, nr = len(lhs.samples), len(rhs.samples)
    mean_diff = lhs.mean - rhs.mean
    pooled_se = np.sqrt(lhs.samples.var(axis=0, ddof=1) / nl
                        + rhs.samples.var(axis=0, ddof=1) / nr)
    cov_diff = lhs.cov - rhs.cov
    ks_stat = np.empty(d)
    ks_p = np.empty(d)
    for j in range(d):
        if np.array_equal(lhs.samples[:, j], rhs.samples[:, j]):
            ks_stat[j], ks_p[j] = 0.0, 1.0
            continue
        res = stats.ks_2samp(lhs.samples[:, j], rhs.samples[:, j], method="asymp")
        ks_stat[j], ks_p[j] = res.statistic, res.pvalue
    mean_ok = np.abs(mean_diff) <= mean_se_factor * pooled_se
    ks_ok = ks_p >= ks_p_floor
    return LawComparison(mean_diff, pooled_se, cov_diff, ks_stat, ks_p,
                         bool(np.all(mean_ok) and np.all(ks_ok)), mean_ok, ks_ok,
                         {"ks_p_floor": ks_p_floor, "mean_se_factor": mean_se_factor})


# --- the sparse-b reversible testbed (d = 2) ---

def sparse_b_field(i=0, j=1, col_hi=1, col_lo=0, dim=2):
    """b with b^{i,col_hi} = b^{j,col_lo} = x^i and all other entries zero
    (indices 0-based). Analytic Jacobian included."""
    def b(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (dim, dim))
        out[..., i, col_hi] = x[..., i]
        out[..., j, col_lo] = x[..., i]
        return out

    def jac(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (dim, dim, dim))
        out[..., i, i, col_hi] = 1.0
        out[..., i, j, col_lo] = 1.0
        return out
    return b, jac


def section6_slow_field(a_scale=1.0):
    """Reversible d=2 slow field around the sparse b: S = diag(1, -1),
    A = diag(1, -1), a(x) = (x2, a_scale - x1).

    a1 is odd and a2 even in x2, so a(Sx) = -S a(x) holds identically; the
    drift circulates around (a_scale, 0) where b is nondegenerate.
    """
    def a(x):
        x = np.asarray(x, dtype=float)
        return np.stack([x[..., 1], a_scale - x[..., 0]], axis=-1)

    b, jac = sparse_b_field(i=0, j=1, col_hi=1, col_lo=0, dim=2)
    return SlowField(2, a, b, jac, s_matrix=np.diag([1.0, -1.0]),
                     name="section6-testbed")
