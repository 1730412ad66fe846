"""Observables v: R^m -> R^d, their symmetry decomposition, an empirical
L^2(mu) Gram-Schmidt over R-invariant polynomial generators, and the
constructive machinery that realizes any target Levy area block E0.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import RankCollapseError, StructureError, SymmetryError
from .greenkubo import equivariance_residual


# --- scalar polynomial functions with exact gradients ---

class Poly:
    """Polynomial R^m -> R as {exponent tuple: coefficient}; exact gradient."""

    __slots__ = ("dim", "terms")

    def __init__(self, dim, terms):
        self.dim = dim
        self.terms = {tuple(e): float(c) for e, c in terms.items() if c != 0.0}

    @classmethod
    def monomial(cls, dim, exponents, coef=1.0):
        return cls(dim, {tuple(exponents): coef})

    @classmethod
    def constant(cls, dim, value):
        return cls(dim, {(0,) * dim: value})

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape[:-1])
        for exp, c in self.terms.items():
            term = np.full(y.shape[:-1], c)
            for i, e in enumerate(exp):
                if e:
                    term = term * y[..., i] ** e
            out = out + term
        return out

    def grad(self, y):
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape[:-1] + (self.dim,))
        for exp, c in self.terms.items():
            for i, e in enumerate(exp):
                if not e:
                    continue
                term = np.full(y.shape[:-1], c * e)
                for j, ej in enumerate(exp):
                    p = ej - 1 if j == i else ej
                    if p:
                        term = term * y[..., j] ** p
                out[..., i] += term
        return out

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Poly.constant(self.dim, other)
        terms = dict(self.terms)
        for e, c in other.terms.items():
            terms[e] = terms.get(e, 0.0) + c
        return Poly(self.dim, terms)

    def __sub__(self, other):
        return self + (other * -1.0 if isinstance(other, Poly) else -other)

    def __mul__(self, scalar):
        return Poly(self.dim, {e: c * scalar for e, c in self.terms.items()})

    __rmul__ = __mul__

    def compose_signs(self, signs):
        """The polynomial y -> p(diag(signs) y)."""
        terms = {}
        for exp, c in self.terms.items():
            s = 1.0
            for sg, e in zip(signs, exp):
                if e % 2 == 1 and sg < 0:
                    s = -s
            terms[exp] = terms.get(exp, 0.0) + s * c
        return Poly(self.dim, terms)

    def describe(self, var="y"):
        if not self.terms:
            return "0"
        parts = []
        for exp, c in sorted(self.terms.items()):
            mono = "*".join(
                f"{var}{i+1}" + (f"^{e}" if e > 1 else "")
                for i, e in enumerate(exp) if e
            )
            parts.append(f"{c:.17g}" + (f"*{mono}" if mono else ""))
        return " + ".join(parts)


def _diag_signs(matrix):
    """Signs if the matrix is diag(+-1), else None."""
    d = matrix.shape[0]
    diag = np.diag(matrix)
    if np.allclose(matrix, np.diag(diag), atol=1e-14) and np.all(np.abs(np.abs(diag) - 1) < 1e-14):
        return np.sign(diag)
    return None


class _ComposedWithMap:
    """f o R for a linear map R, with chain-rule gradient."""

    def __init__(self, fn, matrix, offset):
        self.fn = fn
        self.matrix = matrix
        self.offset = offset
        self.dim = getattr(fn, "dim", matrix.shape[0])

    def __call__(self, y):
        return self.fn(np.asarray(y) @ self.matrix.T + self.offset)

    def grad(self, y):
        return self.fn.grad(np.asarray(y) @ self.matrix.T + self.offset) @ self.matrix


class _Average:
    """(f + g)/2 for two scalar functions."""

    def __init__(self, f, g):
        self.f, self.g = f, g
        self.dim = getattr(f, "dim", getattr(g, "dim", None))

    def __call__(self, y):
        return 0.5 * (self.f(y) + self.g(y))

    def grad(self, y):
        return 0.5 * (self.f.grad(y) + self.g.grad(y))


def symmetrize(fn, system):
    """psi -> (psi + psi o R)/2; exactly R-invariant by construction.

    For a diagonal sign reversal acting on a polynomial this is computed in
    closed form (antisymmetric monomials drop out); otherwise the average is
    formed functionally.
    """
    signs = _diag_signs(system.reversal)
    if signs is not None and isinstance(fn, Poly) and not np.any(system.reversal_offset):
        return fn.compose_signs(signs) * 0.5 + fn * 0.5
    return _Average(fn, _ComposedWithMap(fn, system.reversal, system.reversal_offset))


class LinearCombo:
    """sum_k w_k psi_k + const over a shared list of scalar functions."""

    def __init__(self, fns, weights, const=0.0):
        self.fns = list(fns)
        self.weights = np.asarray(weights, dtype=float)
        self.const = float(const)
        self.dim = fns[0].dim

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        out = np.full(y.shape[:-1], self.const)
        for w, fn in zip(self.weights, self.fns):
            if w:
                out = out + w * fn(y)
        return out

    def grad(self, y):
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape[:-1] + (self.dim,))
        for w, fn in zip(self.weights, self.fns):
            if w:
                out = out + w * fn.grad(y)
        return out


# --- observables ---

@dataclass(frozen=True)
class Observable:
    """Vector observable with optional exact gradient and symmetry tag.

    symmetry_tag is None (unknown) or the involution matrix A for which
    v(Ry) = A v(y) is declared.
    """

    dim_in: int
    dim_out: int
    fn: callable
    gradient: callable = None
    symmetry_tag: np.ndarray = None
    components: tuple = field(default=None, repr=False)

    def __call__(self, y):
        return self.fn(y)

    def check_equivariance(self, system, points, tol=1e-8):
        if self.symmetry_tag is None:
            raise SymmetryError("observable has no declared symmetry")
        resid, worst = equivariance_residual(self, system, points, self.symmetry_tag)
        scale = max(1.0, float(np.max(np.abs(self(points[:256])))))
        if resid > tol * scale:
            raise SymmetryError(
                f"equivariance residual {resid:.3e} exceeds {tol * scale:.3e}",
                worst_point=worst, residual=resid)
        return resid


def from_components(fns, symmetry_tag=None):
    """Observable from scalar functions, stacked along the last axis."""
    fns = tuple(fns)
    dim_in = fns[0].dim

    def fn(y):
        return np.stack([f(y) for f in fns], axis=-1)

    def gradient(y):
        return np.stack([f.grad(y) for f in fns], axis=-2)

    return Observable(dim_in, len(fns), fn, gradient,
                      None if symmetry_tag is None else np.asarray(symmetry_tag, float),
                      components=fns)


def coordinates(dim):
    """The identity observable v(y) = y."""
    return Observable(dim, dim, lambda y: np.asarray(y, dtype=float),
                      lambda y: np.broadcast_to(np.eye(dim), np.shape(y)[:-1] + (dim, dim)))


def testbed_pair(scale=2.5):
    """A-equivariant coupling (scale*q2, scale*q2*z1) for the coupled
    Nose-Hoover pair, with A = diag(1, -1).

    Both components are odd under the flow symmetry (q, p) -> (-q, -p),
    z -> z, so their stationary means vanish exactly (no epsilon^-1
    amplified centering error) and all odd-order joint cumulants are zero,
    which removes the leading finite-epsilon drift biases from the
    fast-slow comparison. The minus component q2*z1 is not a time
    derivative, so it carries genuine diffusive power into the slow
    equation; the pair has a strongly nonzero Levy area.
    """
    q2 = Poly.monomial(6, (0, 0, 0, 1, 0, 0), coef=scale)
    q2z1 = Poly.monomial(6, (0, 0, 1, 1, 0, 0), coef=scale)
    return from_components((q2, q2z1), symmetry_tag=np.diag([1.0, -1.0]))


def decompose(v, split):
    """v = v+ + v- with v+- = pi+- v; both keep the full d components."""
    if v.symmetry_tag is None:
        raise SymmetryError("decompose requires an A-equivariant observable")
    a = v.symmetry_tag
    want = split.basis @ np.diag(np.concatenate([np.ones(split.d_plus),
                                                 -np.ones(split.d_minus)])) @ split.basis_inv
    if np.max(np.abs(a - want)) > 1e-9:
        raise StructureError("observable symmetry tag does not match the split")

    def proj(pi):
        return Observable(v.dim_in, v.dim_out,
                          lambda y, p=pi: np.asarray(v(y)) @ p.T,
                          None, symmetry_tag=None)
    return proj(split.pi_plus), proj(split.pi_minus)


# --- invariant basis ---

@dataclass(frozen=True)
class InvariantBasis:
    """Orthonormal (empirical L^2) mean-zero R-invariant scalar functions."""

    functions: tuple
    gram_residual: float
    mean_residual: float
    generator_names: tuple = ()
    weights: np.ndarray = None
    means: np.ndarray = None

    def __len__(self):
        return len(self.functions)


def default_generators(system, degree=4, max_count=None):
    """R-symmetrized monomials of total degree 1..degree on the system's
    coordinates; antisymmetric monomials (killed by symmetrization) are
    dropped from the pool."""
    m = system.dim_m
    gens, names = [], []
    for total in range(1, degree + 1):
        for exp in itertools.combinations_with_replacement(range(m), total):
            e = [0] * m
            for i in exp:
                e[i] += 1
            mono = Poly.monomial(m, e)
            sym = symmetrize(mono, system)
            if isinstance(sym, Poly) and not sym.terms:
                continue
            gens.append(sym)
            names.append(mono.describe())
            if max_count and len(gens) >= max_count:
                return gens, names
    return gens, names


def build_invariant_basis(system, calib, generators, count, names=None,
                          rank_tol=1e-8):
    """Symmetrize generators, subtract empirical means, Gram-Schmidt under
    the empirical inner product <f,g> = trajectory average of f*g.

    Gram-Schmidt is realized as a QR factorization of the centered design
    matrix; a near-zero diagonal entry of R means some generator is
    linearly dependent on the attractor and raises RankCollapseError naming
    the offending index.
    """
    if count > len(generators):
        raise ValueError(f"count {count} exceeds generator pool size {len(generators)}")
    sym_gens = [g if getattr(g, "_presymmetrized", False) else symmetrize(g, system)
                for g in generators]
    pts = calib.points
    n = pts.shape[0]
    design = np.column_stack([g(pts) for g in sym_gens])
    norms = np.sqrt((design ** 2).mean(axis=0))
    for j, nm in enumerate(norms):
        if nm < rank_tol:
            raise RankCollapseError(j, f"generator {j} vanishes on the attractor "
                                       "(symmetrization may have annihilated it)")
    means = design.mean(axis=0)
    centered = design - means
    q, r = np.linalg.qr(centered / np.sqrt(n))
    diag = np.abs(np.diag(r))
    for j, dj in enumerate(diag):
        if dj < rank_tol * max(diag.max(), 1.0):
            raise RankCollapseError(j, f"generator {j} is linearly dependent on the "
                                       "calibration trajectory")
    # columns of weights express phi_j in the centered generators:
    # centered/sqrt(n) = q r, so centered @ inv(r) = sqrt(n) q has unit
    # empirical norms
    weights = np.linalg.inv(r)

    funcs = []
    for j in range(count):
        w = weights[:, j]
        const = -float(means @ w)
        if all(isinstance(g, Poly) for g in sym_gens):
            poly = Poly.constant(system.dim_m, const)
            for wk, g in zip(w, sym_gens):
                if wk:
                    poly = poly + g * wk
            funcs.append(poly)
        else:
            funcs.append(LinearCombo(sym_gens, w, const))

    phi = (centered @ weights[:, :count]) / 1.0
    gram = phi.T @ phi / n
    gram_residual = float(np.max(np.abs(gram - np.eye(count))))
    mean_residual = float(np.max(np.abs(phi.mean(axis=0)))) if count else 0.0
    return InvariantBasis(tuple(funcs), gram_residual, mean_residual,
                          tuple(names or [f"g{j}" for j in range(len(sym_gens))]),
                          weights[:, :count], means)


# --- constructive realization of E0 ---

def _check_r_invariant(fns, system, probes, what, tol=1e-8):
    rpts = system.apply_reversal(probes)
    for i, fn in enumerate(fns):
        vals = fn(probes)
        resid = float(np.max(np.abs(fn(rpts) - vals)))
        scale = max(1.0, float(np.max(np.abs(vals))))
        if resid > tol * scale:
            raise SymmetryError(f"{what}[{i}] is not R-invariant "
                                f"(residual {resid:.3e})", residual=resid)


def construct_v(f_fns, h_fns, system, probes=None):
    """Observable with prescribed Levy area block E0 = int f (x) h dmu.

    Components in the (pi+, pi-) coordinates: v+ = -f/2 and v- = grad(h).g.
    The half in v+ absorbs the factor 2 relating the E0 block to the
    one-sided cross-correlation integral, so the realized block is exactly
    int f (x) h dmu. v- o R = -v- holds identically because g o R = -R g,
    and v- is mean-zero because it is a derivative along the flow.
    """
    f_fns = tuple(f_fns)
    h_fns = tuple(h_fns)
    d_plus, d_minus = len(f_fns), len(h_fns)
    for h in h_fns:
        if not hasattr(h, "grad"):
            raise StructureError("h components need gradients (analytic or finite-difference)")
    if probes is None:
        from .systems import integrate
        probes = integrate(system, system.default_initial, 20.0).points
    elif hasattr(probes, "points"):
        probes = probes.points
    _check_r_invariant(f_fns, system, probes, "f")
    _check_r_invariant(h_fns, system, probes, "h")
    f_mean_residual = float(np.max(np.abs(
        np.stack([f(probes) for f in f_fns], axis=-1).mean(axis=0)))) if d_plus else 0.0

    g = system.vector_field
    scale = _diag_block(d_plus, d_minus)

    def fn(y):
        y = np.asarray(y, dtype=float)
        plus = np.stack([-0.5 * f(y) for f in f_fns], axis=-1) if d_plus else \
            np.zeros(y.shape[:-1] + (0,))
        gy = g(y)
        minus = np.stack([np.einsum("...m,...m->...", h.grad(y), gy) for h in h_fns],
                         axis=-1)
        return np.concatenate([plus, minus], axis=-1)

    obs = Observable(system.dim_m, d_plus + d_minus, fn, None, symmetry_tag=scale,
                     components=(f_fns, h_fns))
    object.__setattr__(obs, "f_mean_residual", f_mean_residual)
    return obs


def _diag_block(d_plus, d_minus):
    return np.diag(np.concatenate([np.ones(d_plus), -np.ones(d_minus)]))


def realize_target(target, basis, system, probes=None):
    """Observable whose Green-Kubo E0 block targets the given d+ x d- matrix.

    With beta_j the canonical unit vectors, h_j = phi_j and f = sum_i
    alpha_i phi_i with alpha_i the columns of the target, orthonormality of
    the basis gives int f (x) h dmu = target.
    """
    target = np.atleast_2d(np.asarray(target, dtype=float))
    d_plus, d_minus = target.shape
    if len(basis) < d_minus:
        raise ValueError(f"basis has {len(basis)} functions, need at least {d_minus}")
    phis = basis.functions
    f_fns = []
    for a in range(d_plus):
        if all(isinstance(p, Poly) for p in phis[:d_minus]):
            poly = Poly.constant(system.dim_m, 0.0)
            for i in range(d_minus):
                poly = poly + phis[i] * target[a, i]
            f_fns.append(poly)
        else:
            f_fns.append(LinearCombo(phis[:d_minus], target[a, :]))
    h_fns = phis[:d_minus]
    return construct_v(f_fns, h_fns, system, probes)


def scale_transform(v, l_plus, l_minus, split=None):
    """(v+, v-) -> (L+ v+, L- v-); changes E0 to L+ E0 L-^T."""
    if v.symmetry_tag is None:
        raise SymmetryError("scale_transform requires an A-equivariant observable")
    l_plus = np.atleast_2d(np.asarray(l_plus, dtype=float))
    l_minus = np.atleast_2d(np.asarray(l_minus, dtype=float))
    if split is None:
        from .symmetry import eigen_split
        split = eigen_split(v.symmetry_tag)
    if l_plus.shape != (split.d_plus, split.d_plus) or \
            l_minus.shape != (split.d_minus, split.d_minus):
        raise StructureError("block dimensions do not match the observable's split")
    block = np.zeros((split.dim, split.dim))
    block[:split.d_plus, :split.d_plus] = l_plus
    block[split.d_plus:, split.d_plus:] = l_minus
    t = split.basis @ block @ split.basis_inv

    def fn(y):
        return np.asarray(v(y)) @ t.T

    grad = None
    if v.gradient is not None:
        def grad(y):
            return np.einsum("ij,...jm->...im", t, v.gradient(y))
    return Observable(v.dim_in, v.dim_out, fn, grad, symmetry_tag=v.symmetry_tag)


def telescoping_residual(v, traj):
    """For constructed observables: | int_0^T v- dt - (h(y_T) - h(y_0)) |.

    The running trapezoid integral of v- = grad(h).g along any trajectory
    must telescope to the endpoint difference of h, up to integrator error.
    """
    comps = getattr(v, "components", None)
    if not (isinstance(comps, tuple) and len(comps) == 2 and isinstance(comps[0], tuple)):
        raise StructureError("telescoping check needs a constructed observable")
    _, h_fns = v.components
    from scipy.integrate import trapezoid
    vals = np.asarray(v(traj.points))
    d_minus = len(h_fns)
    vm = vals[:, -d_minus:]
    integral = trapezoid(vm, dx=traj.step, axis=0)
    jump = np.array([h(traj.points[-1]) - h(traj.points[0]) for h in h_fns])
    return float(np.max(np.abs(integral - jump)))


def sample_covariance_rank(v, points, rel_tol=1e-8):
    """Empirical check of the spanning assumption: rank of cov(v) on points."""
    vals = np.asarray(v(points), dtype=float)
    vals = vals - vals.mean(axis=0)
    s = np.linalg.svd(vals / np.sqrt(len(vals)), compute_uv=False)
    return int(np.sum(s > rel_tol * max(s[0], 1.0)))


# --- serialization (expression descriptions, no closures) ---

def save_observable(path, v, note=""):
    """Persist a constructed observable as polynomial term lists."""
    f_fns, h_fns = v.components
    if not all(isinstance(p, Poly) for p in tuple(f_fns) + tuple(h_fns)):
        raise StructureError("only polynomial-built observables serialize")
    lines = ["# constructed observable: v+ = -f/2, v- = grad(h).g"]
    if note:
        lines.append(f"# {note}")
    lines.append(f"dims {f_fns[0].dim if f_fns else h_fns[0].dim} {len(f_fns)} {len(h_fns)}")
    for tag, fns in (("f", f_fns), ("h", h_fns)):
        for i, poly in enumerate(fns):
            for exp, c in sorted(poly.terms.items()):
                lines.append(f"{tag} {i} {c:.17g} " + " ".join(str(e) for e in exp))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_observable(path, system):
    with open(path) as fh:
        rows = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    head = rows[0].split()
    if head[0] != "dims":
        raise StructureError("malformed observable file")
    m, d_plus, d_minus = int(head[1]), int(head[2]), int(head[3])
    if m != system.dim_m:
        raise StructureError(f"observable is for m={m}, system has m={system.dim_m}")
    terms = {"f": [dict() for _ in range(d_plus)], "h": [dict() for _ in range(d_minus)]}
    for row in rows[1:]:
        parts = row.split()
        tag, idx, coef = parts[0], int(parts[1]), float(parts[2])
        exp = tuple(int(x) for x in parts[3:])
        terms[tag][idx][exp] = terms[tag][idx].get(exp, 0.0) + coef
    f_fns = [Poly(m, t) for t in terms["f"]]
    h_fns = [Poly(m, t) for t in terms["h"]]
    return construct_v(f_fns, h_fns, system)
