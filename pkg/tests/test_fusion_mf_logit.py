import numpy as np
import pytest
from scipy.optimize import minimize

from conftest import consistent_profile, random_profile, random_subsets, random_truth, universe_of
from hetfuse.errors import InvalidArgumentError
from hetfuse.fusion import (
    CESolverConfig,
    LogitMFConfig,
    eliminate_c_objective,
    fuse_mf_logit,
    fuse_mf_logit_batch,
    mfl_objective,
    optimal_shift,
)
from hetfuse.fusion.mf_logit import fixed_v_objective_batch
from hetfuse.labels import HCPrediction, ProfileBatch, build_profile, softmax_t
from hetfuse.oracle import GridSpec, exhaustive_mf_check, grid_min_ce

TRUTH = np.array([0.4, 0.3, 0.2, 0.1])
SUBSETS = [[0, 1, 2], [1, 2, 3]]
FIXED = LogitMFConfig(variant="fixed_v")


def _random_instance(rng, L_max=8, N_max=5):
    L, N = int(rng.integers(2, L_max + 1)), int(rng.integers(1, N_max + 1))
    prof = random_profile(rng, L, N)
    return prof, rng.normal(size=L), rng.uniform(0, 2, size=N)


def _logit_batch(Z, M):
    Z, M = np.asarray(Z, float), np.asarray(M, float)
    return ProfileBatch(np.zeros_like(Z)[None], Z[None], M[None])


def test_objective_examples(rng):
    u0, c0 = rng.normal(size=4), rng.normal(size=3)
    Z = u0[:, None] + c0[None, :]
    M = np.ones((4, 3))
    assert mfl_objective(u0, np.ones(3), c0, Z, M, 0.0) < 1e-28
    assert np.isclose(mfl_objective(np.zeros(4), np.zeros(3), np.zeros(3), Z, M, 0.0), (Z ** 2).sum())


def test_objective_matches_naive_loops(rng):
    for _ in range(3):
        prof, u, v = _random_instance(rng)
        c = rng.normal(size=prof.N)
        got = mfl_objective(u, v, c, prof.Z, prof.M, 0.01)
        assert abs(got - exhaustive_mf_check(u, v, c, prof.Z, prof.M, 0.01)) < 1e-12


def test_shift_elimination_equivalence(rng):
    for _ in range(100):
        prof, u, v = _random_instance(rng)
        lam = float(rng.choice([0.0, 0.01, 0.5]))
        c = optimal_shift(u[None], v[None], prof.Z[None], prof.M[None])[0]
        full = mfl_objective(u, v, c, prof.Z, prof.M, lam)
        assert abs(full - eliminate_c_objective(u, v, prof.Z, prof.M, lam)) < 1e-8
        # and the closed-form shift really is the minimiser
        for _ in range(3):
            assert mfl_objective(u, v, c + rng.normal(scale=0.1, size=prof.N), prof.Z, prof.M, lam) >= full


def test_singleton_column_contributes_nothing(rng):
    uni = universe_of(3)
    preds = [HCPrediction(uni.subset("b"), [1.0]), HCPrediction(uni.full(), [0.2, 0.3, 0.5])]
    prof = build_profile(preds, uni)
    u, v = rng.normal(size=3), np.array([1.7, 0.0])
    # with v_2 = 0 only the singleton column can carry u; it must add nothing
    assert abs(eliminate_c_objective(u, v, prof.Z, prof.M)
               - eliminate_c_objective(np.zeros(3), v, prof.Z, prof.M)) < 1e-12


def test_zero_u_gives_scaled_column_variances(rng):
    prof = random_profile(rng, 6, 4)
    expected = 0.0
    for i in range(prof.N):
        z = prof.Z[prof.M[:, i] > 0, i]
        expected += z.var() * z.size
    assert np.isclose(eliminate_c_objective(np.zeros(6), rng.random(4), prof.Z, prof.M), expected)


@pytest.mark.parametrize("T", [1.0, 3.0])
def test_fixed_scale_single_classifier(rng, T):
    uni = universe_of(5)
    z = rng.normal(size=5)
    prof = build_profile([HCPrediction.from_logits(uni.full(), z)], uni, T)
    assert np.abs(fuse_mf_logit(prof, FIXED).q - softmax_t(z, T)).max() < 1e-6


def test_fixed_scale_consistent_recovery_and_oracle():
    prof = consistent_profile(TRUTH, SUBSETS)
    label = fuse_mf_logit(prof, FIXED)
    assert np.abs(label.q - TRUTH).max() < 1e-3
    q_grid, _ = grid_min_ce(prof)
    assert np.abs(q_grid - label.q).max() <= GridSpec().cell(4)


def test_fixed_scale_random_consistent_recovery(rng):
    for _ in range(30):
        L = int(rng.integers(2, 7))
        truth = random_truth(rng, L)
        prof = consistent_profile(truth, random_subsets(rng, L, int(rng.integers(1, 5)), connected=True))
        assert np.abs(fuse_mf_logit(prof, FIXED).q - truth).max() < 1e-3


def _scipy_free_scale(Z, M, lam, starts=10, seed=0):
    L, N = Z.shape

    def f(x):
        u, v, c = x[:L], x[L:L + N], x[L + N:]
        R = M * (Z - np.outer(u, v) - c)
        return (R * R).sum() + lam * (u @ u + v @ v)

    rng = np.random.default_rng(seed)
    bounds = [(None, None)] * L + [(0, None)] * N + [(None, None)] * N
    best = None
    for _ in range(starts):
        x0 = np.concatenate([rng.normal(size=L), rng.uniform(0.1, 3, N), rng.normal(size=N)])
        r = minimize(f, x0, method="L-BFGS-B", bounds=bounds,
                     options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 20000})
        if best is None or r.fun < best.fun:
            best = r
    return best.fun, softmax_t(best.x[:L])


def test_free_scale_reaches_independent_minimum():
    prof = consistent_profile(TRUTH, SUBSETS)
    label = fuse_mf_logit(prof, LogitMFConfig(rmse_tol=1e-10, max_iters=100000))
    f_ref, q_ref = _scipy_free_scale(prof.Z, prof.M, 0.01)
    assert label.diagnostics["objective"] <= f_ref + 1e-9
    assert np.abs(label.q - q_ref).max() < 1e-5


def test_free_scale_regulariser_bias_is_modest():
    # the regularised optimum sits 0.0249 from the truth; see the strict xfail below
    prof = consistent_profile(TRUTH, SUBSETS)
    assert np.abs(fuse_mf_logit(prof).q - TRUTH).max() < 3e-2


@pytest.mark.xfail(strict=True, reason="the lambda=0.01 optimum is 0.0249 from the truth, "
                                       "confirmed by an independent L-BFGS-B minimiser")
def test_free_scale_within_2e2_of_truth():
    prof = consistent_profile(TRUTH, SUBSETS)
    assert np.abs(fuse_mf_logit(prof).q - TRUTH).max() < 2e-2


def test_free_scale_monotone_per_sweep(rng):
    for _ in range(100):
        prof = random_profile(rng, int(rng.integers(2, 8)), int(rng.integers(1, 6)))
        out = fuse_mf_logit_batch(ProfileBatch.of(prof), trace=True)
        assert np.all(np.diff(out.trace[0]) <= 1e-12)
        assert np.all(out.v >= 0)


def test_fixed_scale_monotone_and_centred(rng):
    for _ in range(20):
        prof = random_profile(rng, 5, 3)
        out = fuse_mf_logit_batch(ProfileBatch.of(prof), FIXED, trace=True)
        assert np.all(np.diff(out.trace[0]) <= 1e-12)
        assert abs(out.u[0].mean()) < 1e-12
        assert np.array_equal(out.v, np.ones((1, 3)))


def test_fixed_scale_objective_convex(rng):
    for _ in range(100):
        prof = random_profile(rng, int(rng.integers(2, 8)), int(rng.integers(1, 6)))
        Z, M = prof.Z[None], prof.M[None]
        ua, ub = rng.normal(scale=3, size=(2, 1, prof.L))
        ca, cb = rng.normal(scale=3, size=(2, 1, prof.N))
        mid = fixed_v_objective_batch((ua + ub) / 2, (ca + cb) / 2, Z, M)[0]
        ends = (fixed_v_objective_batch(ua, ca, Z, M)[0] + fixed_v_objective_batch(ub, cb, Z, M)[0]) / 2
        assert mid <= ends + 1e-9


def test_gauge_probe_keeps_argmax(rng):
    for _ in range(30):
        L, N = int(rng.integers(3, 7)), int(rng.integers(2, 5))
        u0, v0, c0 = rng.normal(size=L), rng.uniform(0.3, 2.0, size=N), rng.normal(size=N)
        subs = random_subsets(rng, L, N, lo=2, connected=True)
        M = np.zeros((L, N))
        for i, s in enumerate(subs):
            M[s, i] = 1
        Z = M * (np.outer(u0, v0) + c0)
        out = fuse_mf_logit_batch(_logit_batch(Z, M), LogitMFConfig(lam=0.0, rmse_tol=1e-10,
                                                                       max_iters=20000))
        assert np.argmax(out.Q[0]) == np.argmax(u0)
        assert out.warnings


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        LogitMFConfig(lam=-1)
    with pytest.raises(InvalidArgumentError):
        LogitMFConfig(variant="other")
    with pytest.raises(InvalidArgumentError):
        LogitMFConfig(descent=CESolverConfig(grad_tol=0))
