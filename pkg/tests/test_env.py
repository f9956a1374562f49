import math

import numpy as np
import pytest

from fogbandit.bandit import LearnerParams
from fogbandit.env import (
    AdversaryPhaseSchedule,
    CandidateSchedule,
    ChannelParams,
    ConfigError,
    EnvConfig,
    Environment,
    ProtocolError,
    VfnSpec,
    allocate_cpu,
    link_rate,
    pathloss_db,
    sample_link_rate,
)
from fogbandit.game import GameConfig, TaskSizeLaw

from conftest import physical_config, synthetic_config
from reference_impls import ref_cost_vectors

# frozen by an independent high-precision (mpmath, 40 digits) evaluation
GOLDEN_RATE_BPS = 9303683.3732028858787  # P=24dBm, N0=-174dBm/Hz, B=1MHz, g=1e-11
GOLDEN_PATHLOSS_400M = 113.13745567393138588


def test_pathloss_matches_model_at_400m():
    assert pathloss_db(400.0, ChannelParams()) == pytest.approx(
        GOLDEN_PATHLOSS_400M, rel=1e-12
    )


def test_link_rate_golden_value():
    params = ChannelParams(bandwidth_hz=1e6, num_subchannels=1)
    # invert the pathloss so the effective gain is exactly the golden g
    plgain = 10.0 ** (-pathloss_db(1000.0, params) / 10.0)
    rate = link_rate(1000.0, 1e-11 / plgain, params, num_agents=1)
    assert rate == pytest.approx(GOLDEN_RATE_BPS, rel=1e-9)


def test_deep_fade_clamps_to_positive_rate():
    rate = link_rate(400.0, 0.0, ChannelParams(), num_agents=3)
    assert rate > 0.0
    assert math.isfinite(rate)


def test_sampled_rate_positive_and_finite():
    rng = np.random.default_rng(3)
    for _ in range(200):
        r = sample_link_rate(0, 0, rng, ChannelParams(), num_agents=3)
        assert 0.0 < r < math.inf


def test_allocate_cpu_examples():
    assert allocate_cpu(6e9, 0.5, 1) == 3e9
    assert allocate_cpu(4e9, 0.25, 4) == pytest.approx(0.5e9, rel=1e-15)
    # unit congestion is the identity on F * fraction
    for f, frac in ((1.5e9, 0.2), (5e9, 0.37)):
        assert allocate_cpu(f, frac, 1) == f * frac


def test_allocate_cpu_rejects_zero_congestion():
    with pytest.raises(ProtocolError):
        allocate_cpu(6e9, 0.5, 0)


def test_allocation_monotone_in_congestion():
    allocs = [allocate_cpu(6e9, 0.4, c) for c in range(1, 8)]
    assert all(a > b for a, b in zip(allocs, allocs[1:]))


def _joint(env, rnd, arms_by_agent):
    return {n: a for n, a in arms_by_agent.items()}


def test_congestion_counts_and_conservation():
    cfg = synthetic_config({1: 0.2, 2: 0.5}, num_agents=3, horizon=10)
    env = Environment(cfg, 0)
    vec = env.cost_vectors(1, {0: 1, 1: 1, 2: 1})
    for n in range(3):
        i = list(vec[n]["arms"]).index(1)
        assert vec[n]["congestion"][i] == 3
    counts = env.congestion_counts({0: 1, 1: 2, 2: 1})
    assert sum(counts.values()) == 3


def test_blend_identity_and_normalization_bounds():
    cfg = physical_config(horizon=40, num_agents=3, freqs_ghz=(6.0, 1.5, 4.0))
    env = Environment(cfg, 5)
    rng = np.random.default_rng(0)
    arms = cfg.candidates.sets_at(1)[0]
    for rnd in range(1, 41):
        joint = {n: arms[rng.integers(len(arms))] for n in range(3)}
        for trip in env.realize_costs(rnd, joint).values():
            assert trip.blend_residual() < 1e-12
            assert 0.0 <= trip.normalized_cost <= 1.0


def test_single_agent_collision_free():
    cfg = synthetic_config({1: 0.3, 2: 0.6}, num_agents=1, horizon=20)
    env = Environment(cfg, 0)
    for rnd in range(1, 21):
        trip = env.realize_costs(rnd, {0: 1})[0]
        # c == 1 always, so the blend collapses to the adversary cost
        assert trip.collision_cost == trip.adversary_cost
        assert trip.realized_cost == trip.adversary_cost


def test_identical_seeds_identical_cost_streams():
    cfg = physical_config(horizon=30, num_agents=2)
    a, b = Environment(cfg, 3), Environment(cfg, 3)
    for rnd in range(1, 31):
        va = a.cost_vectors(rnd, {0: 1, 1: 1})
        vb = b.cost_vectors(rnd, {0: 1, 1: 1})
        for n in range(2):
            assert np.array_equal(va[n]["realized"], vb[n]["realized"])
            assert np.array_equal(va[n]["normalized"], vb[n]["normalized"])


def test_cost_triples_match_reference_implementation():
    # ten rounds of a fixed-seed 2-agent/2-arm physical game, all entries
    cfg = physical_config(horizon=10, num_agents=2, freqs_ghz=(6.0, 4.0))
    env = Environment(cfg, 1)
    rng = np.random.default_rng(9)
    for rnd in range(1, 11):
        joint = {0: int(rng.integers(1, 3)), 1: int(rng.integers(1, 3))}
        got = env.cost_vectors(rnd, joint)
        ref = ref_cost_vectors(env, rnd, joint)
        for n in joint:
            np.testing.assert_allclose(got[n]["adversary"], ref[n]["la"], rtol=1e-12)
            np.testing.assert_allclose(got[n]["collision"], ref[n]["lc"], rtol=1e-12)
            np.testing.assert_allclose(got[n]["realized"], ref[n]["real"], rtol=1e-12)
            np.testing.assert_allclose(got[n]["normalized"], ref[n]["norm"], rtol=1e-12)


def test_action_outside_candidate_set_raises():
    cfg = synthetic_config({1: 0.2, 2: 0.5}, num_agents=2, horizon=5)
    env = Environment(cfg, 0)
    with pytest.raises(ProtocolError, match="agent 1"):
        env.cost_vectors(2, {0: 1, 1: 9})


def test_adversary_schedule_validation():
    with pytest.raises(ConfigError, match="partition"):
        AdversaryPhaseSchedule(
            phases=((1, 10, {1: 0.5}), (12, 20, {1: 0.5})), mean_range=(0.1, 1.0)
        ).validate(20, [1])
    with pytest.raises(ConfigError, match="outside"):
        AdversaryPhaseSchedule(
            phases=((1, 20, {1: 2.0}),), mean_range=(0.1, 1.0)
        ).validate(20, [1])


def test_candidate_schedule_validation():
    with pytest.raises(ConfigError, match="empty candidate set"):
        CandidateSchedule(epochs=((1, ((), (1,))),)).validate(10, 2, [1])
    with pytest.raises(ConfigError, match="start at round 1"):
        CandidateSchedule(epochs=((2, ((1,),)),)).validate(10, 1, [1])
    with pytest.raises(ConfigError, match="unknown arm"):
        CandidateSchedule(epochs=((1, ((7,),)),)).validate(10, 1, [1])


def test_generated_phases_partition_horizon():
    rng = np.random.default_rng(2)
    sched = AdversaryPhaseSchedule.generate(997, [1, 2, 3], 4, (1.0, 2.5), 0.1, rng)
    sched.validate(997, [1, 2, 3])
    assert len(sched.phases) == 4
    lengths = {hi - lo + 1 for lo, hi, _ in sched.phases}
    assert len(lengths) > 1  # phases of different lengths


def test_mean_cost_table_against_quadrature_oracle():
    scipy_integrate = pytest.importorskip("scipy.integrate")
    cfg = physical_config(horizon=20, num_agents=2, freqs_ghz=(6.0, 1.5), num_phases=1)
    env = Environment(cfg, 4)
    table = env.mean_cost_table(1, 20)
    ch = cfg.env.channel
    for (n, pos, c) in ((0, 0, 1), (1, 1, 2)):
        snr = env._snr_mean[0, n, pos]
        mean_s = env.phase_means[0, pos]
        f1 = env.max_freqs[pos] * env.fractions[0, pos]
        comp = cfg.computation_intensity * mean_s * (1 + (math.sqrt(c) - 1) * 0.5) / f1

        def integrand(x):
            rate = env._b_alloc * math.log2(1.0 + snr * max(x, 1e-9))
            return min((1.0 / rate + comp) / env.cost_cap, 1.0) * math.exp(-x)

        expect, err = scipy_integrate.quad(integrand, 1e-9, 60.0, limit=400)
        expect += (1.0 - math.exp(-1e-9)) * integrand(1e-9) * math.exp(1e-9)
        assert table[n, pos, c - 1] == pytest.approx(expect, rel=1e-5)


def test_mean_cost_table_matches_monte_carlo():
    # field values within 3 standard errors of 1e5-sample estimates
    cfg = physical_config(horizon=10, num_agents=2, freqs_ghz=(6.0, 4.0), num_phases=1)
    env = Environment(cfg, 8)
    table = env.mean_cost_table(1, 10)
    rng = np.random.default_rng(123)
    samples = 100_000
    ch = cfg.env.channel
    for (n, pos, c) in ((0, 0, 1), (0, 1, 2), (1, 0, 2)):
        snr = env._snr_mean[0, n, pos]
        f1 = env.max_freqs[pos] * env.fractions[0, pos]
        mean_s = env.phase_means[0, pos]
        h = cfg.env.adversary_noise_halfwidth
        x = np.maximum(rng.exponential(1.0, samples), 1e-9)
        s = mean_s + rng.uniform(-h, h, samples)
        o = rng.uniform(0.0, 1.0, samples)
        inv_r = 1.0 / (env._b_alloc * np.log2(1.0 + snr * x))
        cost = inv_r + cfg.computation_intensity * s / f1 * (1.0 + (math.sqrt(c) - 1.0) * o)
        norm = np.minimum(cost / env.cost_cap, 1.0)
        se = norm.std(ddof=1) / math.sqrt(samples)
        assert abs(table[n, pos, c - 1] - norm.mean()) < 3.0 * se


def test_synthetic_mean_table_exact():
    cfg = synthetic_config({1: 0.3, 2: 0.5}, num_agents=3, horizon=10)
    env = Environment(cfg, 0)
    table = env.mean_cost_table(1, 10)
    for pos, mu in ((0, 0.3), (1, 0.5)):
        for c in (1, 2, 3):
            expect = mu * (1.0 + (math.sqrt(c) - 1.0) * 0.5)
            assert table[0, pos, c - 1] == pytest.approx(expect, rel=1e-14)


def test_mean_table_rejects_cross_epoch_segments():
    cfg = synthetic_config(
        {1: 0.3, 2: 0.5},
        horizon=20,
        epochs=((1, ((1, 2), (1, 2))), (11, ((1,), (1, 2)))),
    )
    env = Environment(cfg, 0)
    with pytest.raises(ValueError, match="spans candidate epochs"):
        env.mean_cost_table(5, 15)


def test_default_cost_cap_is_analytic_worst_case():
    cfg = physical_config(horizon=10, cost_cap=None)
    env = Environment(cfg, 0)
    # floored rate term dominates; every realized cost normalizes below 1
    assert env.cost_cap > 1.0
    for rnd in range(1, 11):
        for trip in env.realize_costs(rnd, {0: 1, 1: 2}).values():
            assert trip.normalized_cost < 1e-3
