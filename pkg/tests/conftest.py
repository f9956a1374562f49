import numpy as np
import pytest

from fogbandit.bandit import LearnerParams
from fogbandit.env import (
    AdversaryPhaseSchedule,
    CandidateSchedule,
    ChannelParams,
    EnvConfig,
    VfnSpec,
)
from fogbandit.game import GameConfig, TaskSizeLaw, run_game


def synthetic_config(
    arm_means: dict[int, float],
    num_agents: int = 2,
    horizon: int = 200,
    *,
    epochs=None,
    noise_halfwidth: float = 0.0,
    coupling: str = "sqrt",
    theta: float = 0.1,
    learner: LearnerParams | None = None,
    learners=None,
    task=None,
    activation=(),
    master_seed: int = 7,
    phases=None,
) -> GameConfig:
    """Small synthetic game with explicit arm means (one phase by default)."""
    arms = tuple(sorted(arm_means))
    env = EnvConfig(
        model="synthetic",
        vfns=tuple(VfnSpec(k, 1e9) for k in arms),
        adversary=AdversaryPhaseSchedule(
            phases=phases or ((1, horizon, dict(arm_means)),),
            noise_halfwidth=noise_halfwidth,
            mean_range=(0.01, 1.0),
        ),
        coupling=coupling,
        theta=theta,
    )
    if epochs is None:
        epochs = ((1, (arms,) * num_agents),)
    if learners is None:
        learners = (learner or LearnerParams(),) * num_agents
    return GameConfig(
        num_agents=num_agents,
        horizon=horizon,
        env=env,
        candidates=CandidateSchedule(epochs=epochs),
        learners=learners,
        task_size=task or TaskSizeLaw(law="fixed", fixed=(0.6e6,) * num_agents),
        activation=activation,
        master_seed=master_seed,
    )


def physical_config(
    freqs_ghz=(6.0, 4.0),
    num_agents: int = 2,
    horizon: int = 100,
    *,
    cost_cap: float | None = 1.0e-5,
    num_phases: int = 2,
    noise_halfwidth: float = 0.25,
    master_seed: int = 11,
    learner: LearnerParams | None = None,
) -> GameConfig:
    vfns = tuple(VfnSpec(i + 1, f * 1e9) for i, f in enumerate(freqs_ghz))
    arms = tuple(v.id for v in vfns)
    env = EnvConfig(
        model="physical",
        vfns=vfns,
        channel=ChannelParams(),
        adversary_num_phases=num_phases,
        adversary_mean_range=(1.0, 2.5),
        adversary_noise_halfwidth=noise_halfwidth,
        cost_cap=cost_cap,
    )
    return GameConfig(
        num_agents=num_agents,
        horizon=horizon,
        env=env,
        candidates=CandidateSchedule(epochs=((1, (arms,) * num_agents),)),
        learners=(learner or LearnerParams(),) * num_agents,
        task_size=TaskSizeLaw(law="uniform"),
        master_seed=master_seed,
    )


# -- parallel helpers (top-level functions so they pickle) -------------------


def _probs_worker(args):
    from fogbandit.game import GameConfig, run_game

    config_dict, run_id, agent, pos = args
    trace = run_game(GameConfig.from_dict(config_dict), run_id)
    return run_id, trace.probs[1:, agent, pos].copy()


def _regret_worker(args):
    from fogbandit import metrics
    from fogbandit.game import GameConfig, run_game

    config_dict, run_id = args
    trace = run_game(GameConfig.from_dict(config_dict), run_id)
    n = trace.num_agents
    return run_id, np.array([metrics.regret_series(trace, i).final() for i in range(n)])


def _path_worker(args):
    from fogbandit import dynamics
    from fogbandit.game import GameConfig, run_game

    config_dict, run_id = args
    trace = run_game(GameConfig.from_dict(config_dict), run_id)
    return run_id, dynamics.discrete_probability_path(trace)


def parallel_map(worker, argument_lists, workers: int = 2):
    from multiprocessing import Pool

    if workers > 1 and len(argument_lists) > 1:
        with Pool(processes=workers) as pool:
            results = pool.map(worker, argument_lists, chunksize=1)
    else:
        results = [worker(a) for a in argument_lists]
    return [r for _, r in sorted(results, key=lambda x: x[0])]


def seed_mean_probs(config: GameConfig, runs: int, agent: int, pos: int, workers: int = 2):
    d = config.to_dict()
    rows = parallel_map(_probs_worker, [(d, r, agent, pos) for r in range(runs)], workers)
    stack = np.stack(rows)
    return stack.mean(axis=0), stack.std(axis=0, ddof=1) / np.sqrt(runs)
