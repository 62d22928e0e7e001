import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import consistent_profile, random_profile, random_subsets, random_truth, universe_of
from hetfuse.errors import InvalidArgumentError
from hetfuse.fusion import ALSConfig, fuse_mf_prob, fuse_mf_prob_batch, mfp_objective
from hetfuse.labels import HCPrediction, ProfileBatch, build_profile
from hetfuse.oracle import exhaustive_mf_check

TRUTH = np.array([0.4, 0.3, 0.2, 0.1])
SUBSETS = [[0, 1, 2], [1, 2, 3]]
# the 1e-3 step-change stop can halt far from the fixed point when ALS crawls;
# recovery probes run the same iteration to convergence
CONVERGED = ALSConfig(rmse_tol=1e-10, max_iters=50000)


def _batch(P, M):
    P, M = np.asarray(P, float), np.asarray(M, float)
    return ProfileBatch(P[None], np.zeros_like(P)[None], M[None])


def test_objective_examples(rng):
    prof = consistent_profile(TRUTH, SUBSETS)
    mass = np.array([TRUTH[s].sum() for s in SUBSETS])
    assert mfp_objective(TRUTH, 1 / mass, prof) < 1e-30
    assert np.isclose(mfp_objective(np.zeros(4), rng.random(2), prof), ((prof.M * prof.P) ** 2).sum())
    # hand arithmetic: residuals +-0.05 in all four cells
    b = _batch([[0.6, 0.5], [0.4, 0.5]], np.ones((2, 2)))
    assert np.isclose(mfp_objective([0.55, 0.45], [1.0, 1.0], b[0]), 4 * 0.05 ** 2, atol=1e-15)


def test_objective_matches_naive_loops(rng):
    for _ in range(3):
        prof = random_profile(rng, 6, 4)
        u, v = rng.random(6), rng.random(4)
        assert abs(mfp_objective(u, v, prof) - exhaustive_mf_check(u, v, None, prof.P, prof.M)) < 1e-12


def test_consistent_instance_within_1e3_default_rule():
    label = fuse_mf_prob(consistent_profile(TRUTH, SUBSETS))
    assert np.abs(label.q - TRUTH).max() < 1e-3
    assert label.diagnostics["converged"]


def test_single_full_classifier():
    p = np.array([0.5, 0.2, 0.2, 0.1])
    uni = universe_of(4)
    label = fuse_mf_prob(build_profile([HCPrediction(uni.full(), p)], uni))
    assert np.abs(label.q - p).max() < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_exact_recovery_reaches_zero_objective(seed):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(2, 7))
    truth = random_truth(rng, L)
    prof = consistent_profile(truth, random_subsets(rng, L, int(rng.integers(1, 5)), connected=True))
    label = fuse_mf_prob(prof, CONVERGED)
    assert label.diagnostics["objective"] < 1e-10
    assert np.abs(label.q - truth).max() < 1e-6


def test_column_scale_gauge(rng):
    for _ in range(10):
        truth = random_truth(rng, 5)
        batch = ProfileBatch.of(consistent_profile(truth, random_subsets(rng, 5, 3, connected=True)))
        base = fuse_mf_prob_batch(batch, CONVERGED).Q[0]
        P = batch.P.copy()
        P[0, :, int(rng.integers(3))] *= rng.uniform(0.2, 5.0)
        scaled = fuse_mf_prob_batch(ProfileBatch(P, batch.Z, batch.M), CONVERGED).Q[0]
        assert np.abs(scaled - base).max() < 1e-6


def test_objective_non_increasing_per_sweep(rng):
    for _ in range(100):
        prof = random_profile(rng, int(rng.integers(2, 8)), int(rng.integers(1, 6)))
        out = fuse_mf_prob_batch(ProfileBatch.of(prof), trace=True)
        assert np.all(np.diff(out.trace[0]) <= 1e-12)


def test_normalising_u_then_v_update_does_not_increase(rng):
    # one hand-written sweep: u-update, renormalise, v-update
    for _ in range(50):
        prof = random_profile(rng, 5, 3)
        P, M = prof.P, prof.M
        v = rng.uniform(0.5, 2.0, size=3)
        u = (M * P) @ v / (M @ v ** 2)
        v_raw = ((M * P).T @ u) / (M.T @ u ** 2)
        before = mfp_objective(u, v_raw, prof)
        u = u / u.sum()
        v_new = ((M * P).T @ u) / (M.T @ u ** 2)
        assert mfp_objective(u, v_new, prof) <= before + 1e-12


@pytest.mark.parametrize("sweeps", [1, 2, 3, 7])
def test_iterates_stay_feasible(rng, sweeps):
    for _ in range(20):
        prof = random_profile(rng, 6, 4)
        out = fuse_mf_prob_batch(ProfileBatch.of(prof), ALSConfig(max_iters=sweeps))
        assert abs(out.u[0].sum() - 1) < 1e-12 and np.all(out.u >= 0)
        assert np.all(out.v >= 0)
        assert out.diagnostics["iterations"][0] <= sweeps


def test_projections_are_no_ops(rng):
    profs = [random_profile(rng, 6, 4) for _ in range(200)]
    out = fuse_mf_prob_batch(ProfileBatch.stack(profs))
    assert out.diagnostics["negative_projections"].sum() == 0


def test_termination_rule():
    prof = consistent_profile(TRUTH, SUBSETS)
    label = fuse_mf_prob(prof)
    assert label.diagnostics["rmse"] < 1e-3
    capped = fuse_mf_prob(prof, ALSConfig(rmse_tol=1e-300, max_iters=40))
    assert capped.diagnostics["iterations"] == 40
    assert capped.diagnostics["converged"] is False


def test_zero_denominator_leaves_coordinate_and_counts():
    # classifier 2's column is all zero, so its weight collapses to 0 and class b loses support
    P = [[1.0, 0.0], [0.0, 0.0]]
    M = [[1, 1], [0, 1]]
    out = fuse_mf_prob_batch(_batch(P, M))
    assert out.diagnostics["zero_denominators"][0] > 0
    assert np.all(np.isfinite(out.Q))


def test_all_zero_profile_is_uniform_and_not_converged():
    out = fuse_mf_prob_batch(_batch(np.zeros((3, 2)), np.ones((3, 2))))
    assert np.allclose(out.Q[0], 1 / 3)
    assert not out.diagnostics["converged"][0]


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        ALSConfig(rmse_tol=0)
    with pytest.raises(InvalidArgumentError):
        ALSConfig(max_iters=0)
