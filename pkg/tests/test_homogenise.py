import numpy as np
import pytest

from levyarea import homogenise as hg
from levyarea import observables as ob
from levyarea import systems as sy
from levyarea.errors import StructureError


@pytest.fixture(scope="module")
def testbed():
    return hg.section6_slow_field()


class TestSlowField:
    def test_fd_jacobian_matches_analytic(self, testbed):
        b, jac = hg.sparse_b_field()
        fd = hg._fd_jacobian(b, 2)
        x = np.array([1.3, -0.7])
        assert np.allclose(fd(x), jac(x), atol=1e-8)

    def test_reversibility_residuals(self, testbed):
        rng = np.random.default_rng(0)
        probes = rng.standard_normal((64, 2))
        ra, rb = hg.slow_reversibility_residuals(testbed, np.diag([1.0, -1.0]),
                                                 probes)
        assert ra < 1e-12
        assert rb < 1e-12

    def test_wrong_a_detected(self, testbed):
        rng = np.random.default_rng(1)
        probes = rng.standard_normal((32, 2))
        _, rb = hg.slow_reversibility_residuals(testbed, np.eye(2), probes)
        assert rb > 0.1


class TestDriftCorrection:
    def test_sparse_b_closed_form(self, testbed):
        # correction must be (0, E^{21} x1 / 2) for the sparse-b testbed
        rng = np.random.default_rng(2)
        for _ in range(200):
            e21 = rng.uniform(-3, 3)
            e = np.array([[0.0, -e21], [e21, 0.0]])
            x = rng.standard_normal(2)
            corr = hg.drift_correction(testbed, e, x)
            expect = np.array([0.0, 0.5 * e21 * x[0]])
            assert np.allclose(corr, expect, atol=1e-14)

    def test_zero_e_gives_zero(self, testbed):
        x = np.array([2.0, -1.0])
        assert np.array_equal(hg.drift_correction(testbed, np.zeros((2, 2)), x),
                              np.zeros(2))

    def test_constant_b_gives_zero(self):
        slow = hg.SlowField(2, lambda x: np.zeros_like(x),
                            lambda x: np.broadcast_to(np.eye(2),
                                                      np.shape(x)[:-1] + (2, 2)),
                            s_matrix=np.eye(2))
        e = np.array([[0.0, 1.0], [-1.0, 0.0]])
        corr = hg.drift_correction(slow, e, np.array([1.0, 2.0]))
        assert np.max(np.abs(corr)) < 1e-9

    def test_non_skew_rejected(self, testbed):
        with pytest.raises(StructureError, match="skew"):
            hg.drift_correction(testbed, np.eye(2), np.zeros(2))

    def test_einsum_against_explicit_loop(self):
        # independent oracle: triple loop over the index contraction
        rng = np.random.default_rng(3)
        d = 3
        w = rng.standard_normal((d, d))
        e = w - w.T

        def b(x):
            x = np.asarray(x, dtype=float)
            out = np.zeros(x.shape[:-1] + (d, d))
            out[..., 0, 1] = np.sin(x[..., 0])
            out[..., 1, 2] = x[..., 1] * x[..., 2]
            out[..., 2, 0] = x[..., 0] ** 2
            return out

        slow = hg.SlowField(d, lambda x: np.zeros_like(x), b, s_matrix=np.eye(d))
        x = rng.standard_normal(d)
        jac = slow.b_jacobian(x)
        bx = b(x)
        expect = np.zeros(d)
        for r in range(d):
            for al in range(d):
                for be in range(d):
                    for ga in range(d):
                        expect[r] += 0.5 * e[ga, be] * jac[al, r, be] * bx[al, ga]
        assert np.allclose(hg.drift_correction(slow, e, x), expect, atol=1e-7)

    def test_batch_shape(self, testbed):
        e = np.array([[0.0, 1.0], [-1.0, 0.0]])
        xs = np.random.default_rng(4).standard_normal((10, 2))
        assert hg.drift_correction(testbed, e, xs).shape == (10, 2)


class TestFastSlow:
    def test_b_zero_reduces_to_ode(self, nh, testbed):
        slow = hg.SlowField(2, testbed.a, lambda x: np.zeros(np.shape(x)[:-1] + (2, 2)),
                            s_matrix=np.diag([1.0, -1.0]))
        # eps chosen so T / (eps^2 h) is an integer step count
        run = hg.FastSlowRun(epsilon=0.2, coupling=_scalar2(nh), fast=nh,
                             slow=slow, xi=np.array([0.5, 0.0]), t_final=1.0)
        terminal, _ = hg.simulate_fast_slow(run, seed=0, n_paths=3)
        ode = sy.FastSystem(2, testbed.a, np.eye(2), np.array([0.5, 0.0]),
                            burn_in_time=0.1)
        ref = sy.integrate(ode, [0.5, 0.0], 1.0, 0.001).points[-1]
        assert np.max(np.abs(terminal - ref)) < 1e-6

    def test_epsilon_range_enforced(self, nh, testbed):
        with pytest.raises(ValueError, match="epsilon"):
            hg.FastSlowRun(epsilon=1.5, coupling=_scalar2(nh), fast=nh,
                           slow=testbed, xi=np.zeros(2), t_final=1.0)

    def test_step_guard(self, nh, testbed):
        with pytest.raises(ValueError, match="step_fast"):
            hg.FastSlowRun(epsilon=0.1, coupling=_scalar2(nh), fast=nh,
                           slow=testbed, xi=np.zeros(2), t_final=1.0,
                           step_fast=0.1)

    def test_seed_reproducible(self, nh, testbed):
        run = hg.FastSlowRun(epsilon=0.2, coupling=_scalar2(nh), fast=nh,
                             slow=testbed, xi=np.zeros(2), t_final=0.2)
        a1, _ = hg.simulate_fast_slow(run, seed=7, n_paths=4)
        a2, _ = hg.simulate_fast_slow(run, seed=7, n_paths=4)
        assert np.array_equal(a1, a2)
        a3, _ = hg.simulate_fast_slow(run, seed=8, n_paths=4)
        assert not np.array_equal(a1, a3)


def _scalar2(system):
    # simple 2-component coupling observable (q, p) for structural tests
    return ob.from_components([ob.Poly.monomial(system.dim_m, (1, 0, 0)),
                               ob.Poly.monomial(system.dim_m, (0, 1, 0))],
                              symmetry_tag=np.diag([1.0, -1.0]))


class TestSimulateSDE:
    def test_deterministic_limit(self, testbed):
        # sigma = 0: Heun reduces to a second-order ODE step
        law = hg.simulate_sde(testbed, np.zeros((2, 2)), np.zeros((2, 2)),
                              np.array([0.5, 0.0]), 1.0, 1e-3, seed=0, n_paths=2)
        ode = sy.FastSystem(2, testbed.a, np.eye(2), np.array([0.5, 0.0]),
                            burn_in_time=0.1)
        ref = sy.integrate(ode, [0.5, 0.0], 1.0, 0.001).points[-1]
        assert np.max(np.abs(law.samples - ref)) < 1e-5

    def test_ou_variance(self):
        # dX = -X dt + dW: Var X_T = (1 - exp(-2T)) / 2
        slow = hg.SlowField(1, lambda x: -x,
                            lambda x: np.ones(np.shape(x)[:-1] + (1, 1)),
                            s_matrix=np.eye(1))
        law = hg.simulate_sde(slow, np.eye(1), np.zeros((1, 1)), np.zeros(1),
                              1.0, 1e-3, seed=5, n_paths=4000)
        want = (1.0 - np.exp(-2.0)) / 2.0
        assert law.cov[0, 0] == pytest.approx(want, rel=0.1)

    def test_seed_reproducible(self, testbed):
        e = np.array([[0.0, 0.5], [-0.5, 0.0]])
        a1 = hg.simulate_sde(testbed, 0.5 * np.eye(2), e, np.zeros(2), 0.5,
                             1e-3, seed=3, n_paths=8)
        a2 = hg.simulate_sde(testbed, 0.5 * np.eye(2), e, np.zeros(2), 0.5,
                             1e-3, seed=3, n_paths=8)
        assert np.array_equal(a1.samples, a2.samples)

    def test_drift_correction_shifts_mean(self, testbed):
        # for the testbed the correction adds E21 x1 / 2 to the x2 drift
        e = np.array([[0.0, -2.0], [2.0, 0.0]])
        xi = np.array([1.0, 0.0])
        corr = hg.simulate_sde(testbed, 0.1 * np.eye(2), e, xi, 1.0, 1e-3,
                               seed=9, n_paths=3000)
        ctrl = hg.simulate_sde(testbed, 0.1 * np.eye(2), np.zeros((2, 2)), xi,
                               1.0, 1e-3, seed=9, n_paths=3000)
        shift = corr.mean[1] - ctrl.mean[1]
        assert abs(shift) > 0.2


class TestEnsembleLaw:
    def test_validation(self):
        with pytest.raises(StructureError):
            hg.EnsembleLaw(np.zeros((1, 2)))
        with pytest.raises(StructureError):
            hg.EnsembleLaw(np.array([[1.0, np.nan], [0.0, 1.0]]))

    def test_summaries(self):
        rng = np.random.default_rng(6)
        s = rng.standard_normal((500, 2))
        law = hg.EnsembleLaw(s)
        assert np.allclose(law.mean, s.mean(0))
        assert np.allclose(law.cov, np.cov(s.T, ddof=1))


class TestCompareLaws:
    def test_same_distribution_passes(self):
        rng = np.random.default_rng(7)
        a = hg.EnsembleLaw(rng.standard_normal((2000, 2)))
        b = hg.EnsembleLaw(rng.standard_normal((2000, 2)))
        comp = hg.compare_laws(a, b)
        assert comp.passed

    def test_mean_shift_fails(self):
        rng = np.random.default_rng(8)
        a = hg.EnsembleLaw(rng.standard_normal((2000, 2)))
        b = hg.EnsembleLaw(rng.standard_normal((2000, 2)) + [0.5, 0.0])
        comp = hg.compare_laws(a, b)
        assert not comp.passed
        assert not comp.mean_ok[0]
        assert comp.mean_ok[1]

    def test_identical_samples_ks_one(self):
        rng = np.random.default_rng(9)
        s = rng.standard_normal((100, 1))
        comp = hg.compare_laws(hg.EnsembleLaw(s), hg.EnsembleLaw(s.copy()))
        assert comp.ks_pvalue[0] == 1.0

    def test_dim_mismatch(self):
        rng = np.random.default_rng(10)
        with pytest.raises(StructureError):
            hg.compare_laws(hg.EnsembleLaw(rng.standard_normal((50, 1))),
                            hg.EnsembleLaw(rng.standard_normal((50, 2))))

    def test_to_dict_roundtrips_json(self):
        import json
        rng = np.random.default_rng(11)
        comp = hg.compare_laws(hg.EnsembleLaw(rng.standard_normal((200, 2))),
                               hg.EnsembleLaw(rng.standard_normal((200, 2))))
        assert json.loads(json.dumps(comp.to_dict()))["passed"] == comp.passed
