"""Involution linear algebra: eigenprojections, block decomposition and
full-rank factorization of nearby matrices.

All operations are pure functions of immutable value types; nothing here
holds mutable state.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NearIdentityBoundError, RankDeficientError, StructureError

INVOLUTION_TOL = 1e-12


def _as_matrix(a):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise StructureError(f"expected a square matrix, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class Involution:
    """A real square matrix M with M @ M = I (entrywise tol 1e-12)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = _as_matrix(self.matrix)
        object.__setattr__(self, "matrix", m)
        m.setflags(write=False)
        resid = np.max(np.abs(m @ m - np.eye(m.shape[0])))
        if resid > INVOLUTION_TOL:
            raise StructureError(
                f"matrix is not an involution: max |M@M - I| = {resid:.3e} > {INVOLUTION_TOL:g}"
            )

    @property
    def dim(self):
        return self.matrix.shape[0]


@dataclass(frozen=True)
class EigenSplit:
    """Eigenprojections of an involution onto its +1 / -1 eigenspaces.

    `basis` columns span the +1 eigenspace first, then the -1 eigenspace;
    it is orthogonal whenever the involution is symmetric.
    """

    pi_plus: np.ndarray
    pi_minus: np.ndarray
    d_plus: int
    d_minus: int
    basis: np.ndarray
    basis_inv: np.ndarray = field(repr=False, default=None)

    @property
    def dim(self):
        return self.d_plus + self.d_minus


@dataclass(frozen=True)
class BlockForm:
    """Blocks of Sigma and E in the (pi+, pi-) coordinates.

    `off_block_residual` is the largest-magnitude entry of Sigma outside its
    diagonal blocks and of E inside its diagonal blocks (both should vanish
    for time-reversible data).
    """

    sigma_plus: np.ndarray
    sigma_minus: np.ndarray
    e0: np.ndarray
    off_block_residual: float


def eigen_split(A):
    """Split R^d into the +-1 eigenspaces of an involution.

    The projections use the closed form (I +- A)/2, which is exact for any
    involution; no general eigensolver is involved.
    """
    if not isinstance(A, Involution):
        A = Involution(A)
    m = A.matrix
    d = A.dim
    eye = np.eye(d)
    pi_plus = (eye + m) / 2.0
    pi_minus = (eye - m) / 2.0
    # trace(A) = d_plus - d_minus is an exact integer for involutions
    d_plus = int(round((d + np.trace(m)) / 2.0))
    d_minus = d - d_plus

    cols = []
    for proj, rank in ((pi_plus, d_plus), (pi_minus, d_minus)):
        if rank == 0:
            continue
        u, s, _ = np.linalg.svd(proj)
        cols.append(u[:, :rank])
    basis = np.hstack(cols) if cols else np.zeros((d, 0))
    basis_inv = np.linalg.inv(basis)
    # sanity: the basis must diagonalize A to diag(+1,...,-1,...)
    diag = basis_inv @ m @ basis
    want = np.diag(np.concatenate([np.ones(d_plus), -np.ones(d_minus)]))
    if np.max(np.abs(diag - want)) > 1e-9:
        raise StructureError("failed to diagonalize involution (ill-conditioned eigenbasis)")
    return EigenSplit(pi_plus, pi_minus, d_plus, d_minus, basis, basis_inv)


def block_decompose(sigma, e, split, tol=1e-8):
    """Transport Sigma (symmetric) and E (skew) to the eigenbasis and read off
    the blocks predicted for time-reversible systems."""
    sigma = np.asarray(sigma, dtype=float)
    e = np.asarray(e, dtype=float)
    d = split.dim
    if sigma.shape != (d, d) or e.shape != (d, d):
        raise StructureError(
            f"dimension mismatch: split has d={d}, Sigma {sigma.shape}, E {e.shape}"
        )
    scale = max(np.max(np.abs(sigma)), np.max(np.abs(e)), 1.0)
    if np.max(np.abs(sigma - sigma.T)) > tol * scale:
        raise StructureError("Sigma is not symmetric within tolerance")
    if np.max(np.abs(e + e.T)) > tol * scale:
        raise StructureError("E is not skew-symmetric within tolerance")

    binv = split.basis_inv
    w = binv @ sigma @ binv.T
    f = binv @ e @ binv.T
    p = split.d_plus
    sigma_plus = (w[:p, :p] + w[:p, :p].T) / 2.0
    sigma_minus = (w[p:, p:] + w[p:, p:].T) / 2.0
    e0 = f[:p, p:]
    resid = 0.0
    if p and split.d_minus:
        resid = max(np.max(np.abs(w[:p, p:])), np.max(np.abs(w[p:, :p])))
    resid = max(resid, np.max(np.abs(f[:p, :p])) if p else 0.0,
                np.max(np.abs(f[p:, p:])) if split.d_minus else 0.0)
    return BlockForm(sigma_plus, sigma_minus, e0, float(resid))


@dataclass(frozen=True)
class FactorResult:
    """Outcome of full_rank_factor: P @ E0 @ Q.T = E with P, Q near identity."""

    p: np.ndarray
    q: np.ndarray
    residual: float          # relative |P E0 Q^T - E|
    near_identity_norm: float  # |P - I| + |Q - I| (2-norm)
    constant: float          # near_identity_norm / |E - E0|


def _factor_wide(e0, e):
    """P0 E0 Q0^T = (I | 0) by row reduction with partial pivoting, then carry
    P0 E Q0^T back to (I | 0) with near-identity operations. Requires m <= n."""
    m, n = e0.shape
    # pivoted QR picks m independent columns of E0
    _, _, piv = scipy.linalg.qr(e0, pivoting=True)
    perm = np.concatenate([piv[:m], piv[m:]])
    pi = np.eye(n)[:, perm]  # E0 @ pi = columns reordered, pivots first
    e0p = e0 @ pi
    p0 = np.linalg.inv(e0p[:, :m])
    k = p0 @ e0p[:, m:]
    q0t = pi @ np.block([[np.eye(m), -k], [np.zeros((n - m, m)), np.eye(n - m)]])
    # now p0 @ e0 @ q0t == (I | 0)
    mm = p0 @ e @ q0t
    m1, m2 = mm[:, :m], mm[:, m:]
    p1 = np.linalg.inv(m1)
    q1t = np.block([[np.eye(m), -(p1 @ m2)], [np.zeros((n - m, m)), np.eye(n - m)]])
    # (P1 P0) E (Q1 Q0)^T = (I | 0), hence P = P0^-1 P1^-1 P0, Q = Q0^-1 Q1^-1 Q0
    p0_inv = np.linalg.inv(p0)
    q0 = q0t.T
    q0_inv = np.linalg.inv(q0)
    p = p0_inv @ m1 @ p0
    q = q0_inv @ np.linalg.inv(q1t.T) @ q0
    return p, q


def full_rank_factor(e0, e, closeness=None):
    """Factor E = P @ E0 @ Q.T with P, Q near the identity.

    Follows the constructive row/column-reduction argument: both matrices are
    carried to (I | 0) form and the near-identity operations are conjugated
    back. `closeness` bounds |E - E0| (2-norm); default 0.5 * sigma_min(E0).
    """
    e0 = np.asarray(e0, dtype=float)
    e = np.asarray(e, dtype=float)
    if e0.shape != e.shape:
        raise StructureError(f"shape mismatch: {e0.shape} vs {e.shape}")
    m, n = e0.shape
    r = min(m, n)
    for name, mat in (("E0", e0), ("E", e)):
        s = np.linalg.svd(mat, compute_uv=False)
        if s[r - 1] <= 1e-12 * max(s[0], 1.0):
            raise RankDeficientError(f"{name} is rank deficient (sigma_min={s[r-1]:.3e})")
    smin = np.linalg.svd(e0, compute_uv=False)[r - 1]
    if closeness is None:
        closeness = 0.5 * smin
    dist = np.linalg.norm(e - e0, 2)
    if dist > closeness:
        raise NearIdentityBoundError(
            f"|E - E0| = {dist:.3e} exceeds closeness threshold {closeness:.3e}; "
            "a factorization exists but the near-identity bound is not guaranteed"
        )
    if m <= n:
        p, q = _factor_wide(e0, e)
    else:
        q, p = _factor_wide(e0.T, e.T)
    resid = np.linalg.norm(p @ e0 @ q.T - e) / max(np.linalg.norm(e), 1e-300)
    near = np.linalg.norm(p - np.eye(m), 2) + np.linalg.norm(q - np.eye(n), 2)
    denom = max(dist, 1e-300)
    return FactorResult(p, q, float(resid), float(near), float(near / denom))


def find_full_rank_t(a0, a1, eps_max):
    """Smallest t on the geometric grid eps_max * 2^-k (k=1..40) with
    det(A0 + t A1 + t^2 I) away from zero.

    Such t exists because the determinant is a nonzero polynomial in t
    (leading term t^{2 d}).
    """
    a0 = _as_matrix(a0)
    a1 = np.asarray(a1, dtype=float)
    if a1.shape != a0.shape:
        raise StructureError(f"shape mismatch: {a0.shape} vs {a1.shape}")
    if eps_max <= 0:
        raise ValueError("eps_max must be positive")
    d = a0.shape[0]
    eye = np.eye(d)
    best = None
    dets = []
    for k in range(1, 41):
        t = eps_max * 2.0 ** (-k)
        at = a0 + t * a1 + t * t * eye
        det = np.linalg.det(at)
        tol = 1e-10 * max(1.0, np.linalg.norm(at, np.inf)) ** d
        dets.append((t, det, tol))
        if abs(det) > tol:
            best = t  # keep scanning: grid descends, smallest passing value wins
    if best is None:
        lines = ", ".join(f"t={t:.3e}: det={det:.3e} (tol {tol:.1e})" for t, det, tol in dets[:5])
        raise RankDeficientError(f"no grid point gave a nonsingular matrix; first entries: {lines}")
    return best


# --- plain-text matrix serialization (row per line, '#' comments) ---

def parse_matrix(text):
    """Parse a whitespace-separated row-major matrix; '#' starts a comment.

    Rows may also be separated by ';' on a single line.
    """
    rows = []
    for chunk in text.replace(";", "\n").splitlines():
        line = chunk.split("#", 1)[0].strip()
        if not line:
            continue
        rows.append([float(tok) for tok in line.split()])
    if not rows:
        raise StructureError("empty matrix text")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise StructureError("ragged rows in matrix text")
    return np.array(rows, dtype=float)


def format_matrix(mat, comment=None):
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    lines = []
    if comment:
        lines.append(f"# {comment}")
    for row in mat:
        lines.append(" ".join(f"{x:.17g}" for x in row))
    return "\n".join(lines) + "\n"


def load_matrix(path):
    with open(path) as fh:
        return parse_matrix(fh.read())


def dump_matrix(path, mat, comment=None):
    with open(path, "w") as fh:
        fh.write(format_matrix(mat, comment))
