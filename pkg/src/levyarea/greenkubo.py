"""Green-Kubo estimation of the covariance Sigma and Levy area E from
trajectory data: windowed correlation matrices, trapezoid integration with
truncation, and batch-means standard errors.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .errors import StructureError, SymmetryError

DEFAULT_BATCHES = 20
MAX_LAGS = 400


@dataclass(frozen=True)
class Correlogram:
    """Empirical lag-correlation matrices C(t_k) ~ int v (x) (v o g_t) dmu.

    `values[k]` is the d x d matrix at lag `lags[k]`. When built with
    n_batches > 0, `batch_values` holds the same curves computed on
    non-overlapping sub-trajectories (full pipeline per batch, including
    mean subtraction), used downstream for standard errors.
    """

    lags: np.ndarray
    values: np.ndarray
    n_samples: int
    v_mean: np.ndarray
    batch_values: np.ndarray = field(default=None, repr=False)

    @property
    def dim(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class GreenKuboEstimate:
    sigma_hat: np.ndarray
    e_hat: np.ndarray
    t_max: float
    se_sigma: np.ndarray
    se_e: np.ndarray
    diagnostics: dict


def _series(traj, v):
    vals = v(traj.points) if callable(v) else np.asarray(v)
    vals = np.asarray(vals, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    if vals.shape[0] != len(traj.points):
        raise StructureError("observable dimension mismatch along trajectory")
    return vals


def _lag_values(series, ks):
    n, d = series.shape
    out = np.empty((len(ks), d, d))
    for j, k in enumerate(ks):
        a = series[: n - k] if k else series
        b = series[k:] if k else series
        out[j] = a.T @ b / (n - k)
    return out


def auto_stride(traj, t_max, max_lags=MAX_LAGS):
    """Lag stride keeping the grid at or below max_lags points."""
    k_max = int(np.floor(t_max / traj.step))
    return max(1, int(np.ceil(k_max / max_lags)))


def correlogram(traj, v, t_max, lag_stride=1, n_batches=DEFAULT_BATCHES):
    """Lagged second-moment curves of a mean-subtracted observable.

    C(t_k) = (1/N_k) sum_i [v(y_i) - vbar] (x) [v(y_{i+k}) - vbar] over all
    admissible start indices. The empirical mean is subtracted even though
    the theory assumes int v dmu = 0 (protects against burn-in bias).
    """
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    if t_max >= traj.duration / 10.0:
        raise ValueError(
            f"t_max {t_max:g} too large for trajectory duration {traj.duration:g} "
            "(need t_max < duration/10 to control estimator variance)"
        )
    series = _series(traj, v)
    v_mean = series.mean(axis=0)
    centered = series - v_mean
    k_step = int(lag_stride)
    k_max = int(np.floor(t_max / (traj.step * k_step)))
    if k_max < 1:
        raise ValueError("t_max shorter than one lag step")
    ks = np.arange(k_max + 1) * k_step
    lags = ks * traj.step
    values = _lag_values(centered, ks)

    batch_values = None
    if n_batches and n_batches > 1:
        n = series.shape[0]
        edges = np.linspace(0, n, n_batches + 1).astype(int)
        min_len = np.diff(edges).min()
        if min_len <= ks[-1] + 1:
            raise ValueError(
                f"t_max {t_max:g} too large for {n_batches} batches of the trajectory"
            )
        batch_values = np.empty((n_batches, len(ks), series.shape[1], series.shape[1]))
        for b in range(n_batches):
            blk = series[edges[b]:edges[b + 1]]
            blk = blk - blk.mean(axis=0)
            batch_values[b] = _lag_values(blk, ks)
    return Correlogram(lags, values, series.shape[0], v_mean, batch_values)


def _integrate_curves(lags, values):
    sym = values + np.swapaxes(values, -1, -2)
    skw = values - np.swapaxes(values, -1, -2)
    sigma = trapezoid(sym, lags, axis=0)
    e = trapezoid(skw, lags, axis=0)
    return (sigma + sigma.T) / 2.0, (e - e.T) / 2.0


def integrate_estimates(corr):
    """Trapezoid-integrate a correlogram into (Sigma_hat, E_hat).

    Sigma_hat is symmetrized and E_hat skew-symmetrized exactly: the
    structure is a theorem, not a statistical question. Standard errors are
    batch means over the correlogram's sub-trajectory curves.
    """
    if len(corr.lags) < 2:
        raise ValueError("need at least 2 lags to integrate")
    sigma, e = _integrate_curves(corr.lags, corr.values)
    d = corr.dim
    se_sigma = np.full((d, d), np.nan)
    se_e = np.full((d, d), np.nan)
    if corr.batch_values is not None:
        nb = corr.batch_values.shape[0]
        sig_b = np.empty((nb, d, d))
        e_b = np.empty((nb, d, d))
        for b in range(nb):
            sig_b[b], e_b[b] = _integrate_curves(corr.lags, corr.batch_values[b])
        se_sigma = sig_b.std(axis=0, ddof=1) / np.sqrt(nb)
        se_e = e_b.std(axis=0, ddof=1) / np.sqrt(nb)

    norms = np.max(np.abs(corr.values), axis=(1, 2))
    tail = norms[-max(1, len(norms) // 5):].mean()
    eigs = np.linalg.eigvalsh(sigma)
    diagnostics = {
        "c0_norm": float(norms[0]),
        "tail_noise_floor": float(tail),
        "decay_ratio": float(tail / norms[0]) if norms[0] else 0.0,
        "min_sigma_eigenvalue": float(eigs.min()),
        "n_samples": int(corr.n_samples),
        "n_lags": int(len(corr.lags)),
    }
    return GreenKuboEstimate(sigma, e, float(corr.lags[-1]), se_sigma, se_e, diagnostics)


def choose_t_max(probe_corr, factor=2.0):
    """Smallest lag where |C(t)|_inf drops below factor x its tail noise
    floor (floor estimated from the last 20% of the probe correlogram)."""
    norms = np.max(np.abs(probe_corr.values), axis=(1, 2))
    tail = norms[-max(1, len(norms) // 5):].mean()
    below = np.nonzero(norms <= factor * tail)[0]
    if len(below) == 0 or below[0] == 0:
        return float(probe_corr.lags[-1])
    return float(probe_corr.lags[below[0]])


def increment_covariance(integrals, window, n_batches=DEFAULT_BATCHES):
    """Diffusion estimate from window integrals W_i = int_0^L v dt over
    independent stationary windows of length L: Sigma = cov(W) / L.

    Complements the Green-Kubo route when the correlogram decays slowly or
    oscillates: the window estimate targets the covariance of the driving
    noise actually accumulated over horizon L, is positive semidefinite by
    construction, and carries a finite-window bias of order tau_corr / L
    instead of a truncation tail. Returns (sigma, se) with batch-means
    standard errors over groups of windows.
    """
    w = np.asarray(integrals, dtype=float)
    if w.ndim != 2:
        raise StructureError(f"integrals must be (n_windows, d), got {w.shape}")
    if window <= 0:
        raise StructureError("window length must be positive")
    n = w.shape[0]
    n_batches = min(n_batches, n // 2)
    if n < 4 or n_batches < 2:
        raise StructureError(f"need at least 4 windows, got {n}")
    sigma = np.cov(w.T, ddof=1).reshape(w.shape[1], w.shape[1]) / window
    edges = np.linspace(0, n, n_batches + 1).astype(int)
    per_batch = np.empty((n_batches,) + sigma.shape)
    for b in range(n_batches):
        blk = w[edges[b]:edges[b + 1]]
        per_batch[b] = np.cov(blk.T, ddof=1).reshape(sigma.shape) / window
    se = per_batch.std(axis=0, ddof=1) / np.sqrt(n_batches)
    return sigma, se


def window_functionals(vals, step):
    """Per-window integral and Levy area of the integrated path.

    vals has shape (n_steps + 1, n_windows, d); returns (W, A) with
    W[i] = int v dt (shape (n, d), trapezoid) and A[i] the Levy area
    0.5 int (V dV^T - dV V^T) of V_t = int_0^t v ds (shape (n, d, d),
    midpoint rule). E[2 A / L] converges to the Levy area matrix E.
    """
    vals = np.asarray(vals, dtype=float)
    if vals.ndim != 3:
        raise StructureError(f"vals must be (n_steps+1, n, d), got {vals.shape}")
    w = (vals.sum(axis=0) - 0.5 * (vals[0] + vals[-1])) * step
    # midpoint values and increments of V
    incr = 0.5 * (vals[1:] + vals[:-1]) * step
    path = np.cumsum(incr, axis=0)
    mid = path - 0.5 * incr
    cross = np.einsum("tni,tnj->nij", mid, incr)
    return w, 0.5 * (cross - np.transpose(cross, (0, 2, 1)))


def increment_levy(areas, window, n_batches=DEFAULT_BATCHES):
    """Levy area estimate at horizon `window`: E = 2 E[A] / L, with
    batch-means standard errors over groups of windows."""
    a = np.asarray(areas, dtype=float)
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise StructureError(f"areas must be (n, d, d), got {a.shape}")
    if window <= 0:
        raise StructureError("window length must be positive")
    n = a.shape[0]
    n_batches = min(n_batches, n // 2)
    if n < 4 or n_batches < 2:
        raise StructureError(f"need at least 4 windows, got {n}")
    e = 2.0 * a.mean(axis=0) / window
    edges = np.linspace(0, n, n_batches + 1).astype(int)
    per_batch = np.empty((n_batches,) + e.shape)
    for b in range(n_batches):
        per_batch[b] = 2.0 * a[edges[b]:edges[b + 1]].mean(axis=0) / window
    se = per_batch.std(axis=0, ddof=1) / np.sqrt(n_batches)
    return e, se


def green_kubo(traj, v, t_max, lag_stride=None, n_batches=DEFAULT_BATCHES):
    """Convenience pipeline: correlogram + integration."""
    if lag_stride is None:
        lag_stride = auto_stride(traj, t_max)
    return integrate_estimates(correlogram(traj, v, t_max, lag_stride, n_batches))


def equivariance_residual(v, system, points, a_matrix, subsample=512):
    """max |v(Ry) - A v(y)| over (a subsample of) the given points, and the
    worst offending point."""
    pts = points[:: max(1, len(points) // subsample)]
    lhs = np.asarray(v(system.apply_reversal(pts)), dtype=float)
    rhs = np.asarray(v(pts), dtype=float) @ np.asarray(a_matrix).T
    err = np.max(np.abs(lhs - rhs), axis=-1)
    worst = int(np.argmax(err))
    return float(err[worst]), pts[worst]


def estimate_e0(traj, v, split, t_max, lag_stride=None, n_batches=DEFAULT_BATCHES,
                system=None, a_matrix=None, tol=1e-6):
    """Direct estimate of the E0 block: 2 x the integrated cross-correlation
    of v+ against time-shifted v-, in the eigenbasis coordinates of `split`.

    Returns (e0, se) with shapes (d+, d-). When `system` and `a_matrix` are
    given, the equivariance v(Ry) = A v(y) is checked on samples first.
    """
    if system is not None and a_matrix is not None:
        resid, worst = equivariance_residual(v, system, traj.points, a_matrix)
        vals = np.abs(np.asarray(v(traj.points[:1000])))
        scale = max(1.0, float(vals.max()))
        if resid > tol * scale:
            raise SymmetryError(
                f"observable is not A-equivariant: residual {resid:.3e} "
                f"exceeds {tol * scale:.3e}",
                worst_point=worst, residual=resid)
    series = _series(traj, v)
    series = series - series.mean(axis=0)
    w = series @ split.basis_inv.T
    p = split.d_plus
    wp, wm = w[:, :p], w[:, p:]
    if lag_stride is None:
        lag_stride = auto_stride(traj, t_max)
    k_max = int(np.floor(t_max / (traj.step * lag_stride)))
    ks = np.arange(k_max + 1) * lag_stride
    lags = ks * traj.step

    def cross(curve_wp, curve_wm):
        n = curve_wp.shape[0]
        out = np.empty((len(ks), p, split.d_minus))
        for j, k in enumerate(ks):
            a = curve_wp[: n - k] if k else curve_wp
            b = curve_wm[k:] if k else curve_wm
            out[j] = a.T @ b / (n - k)
        return 2.0 * trapezoid(out, lags, axis=0)

    e0 = cross(wp, wm)
    n = w.shape[0]
    edges = np.linspace(0, n, n_batches + 1).astype(int)
    est_b = np.empty((n_batches, p, split.d_minus))
    for b in range(n_batches):
        blk = w[edges[b]:edges[b + 1]]
        blk = blk - blk.mean(axis=0)
        est_b[b] = cross(blk[:, :p], blk[:, p:])
    se = est_b.std(axis=0, ddof=1) / np.sqrt(n_batches)
    return e0, se


# --- serialization ---

def correlogram_to_csv(path, corr, header_note=""):
    """Columns: lag, then row-major matrix entries."""
    d = corr.dim
    names = ",".join(f"C{i+1}{j+1}" for i in range(d) for j in range(d))
    with open(path, "w") as fh:
        if header_note:
            fh.write(f"# {header_note}\n")
        fh.write(f"lag,{names}\n")
        for lag, mat in zip(corr.lags, corr.values):
            fh.write(f"{lag:.10g}," + ",".join(f"{x:.17g}" for x in mat.ravel()) + "\n")


def estimate_to_dict(est):
    return {
        "sigma_hat": est.sigma_hat.tolist(),
        "e_hat": est.e_hat.tolist(),
        "t_max": est.t_max,
        "se_sigma": est.se_sigma.tolist(),
        "se_e": est.se_e.tolist(),
        "diagnostics": est.diagnostics,
    }


def estimate_to_json(path, est, extra=None):
    payload = estimate_to_dict(est)
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
