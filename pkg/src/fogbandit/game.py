"""Repeated-game orchestration.

Runs the round loop: candidate-set evolution, Bernoulli activations,
simultaneous arm commitment, environment resolution, and feedback delivery.
Produces a GameTrace carrying every per-round quantity plus the ground truth
needed to recompute counterfactual costs exactly (same fades, same outlier
draws, congestion re-counted for the switched arm).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import bandit
from .bandit import AgentState, LearnerParams, LearningRates
from .env import (
    AdversaryPhaseSchedule,
    CandidateSchedule,
    ChannelParams,
    ConfigError,
    CostTriple,
    EnvConfig,
    Environment,
    ProtocolError,
    VfnSpec,
)
from .streams import stream_rng

TASK_LAWS = ("fixed", "uniform", "truncnorm")


@dataclass(frozen=True)
class TaskSizeLaw:
    """Per-task input size q in bits, bounded by [q_lo, q_hi]."""

    law: str = "fixed"
    q_lo: float = 0.2e6
    q_hi: float = 1.0e6
    fixed: tuple[float, ...] | None = None  # per-agent sizes for law "fixed"

    def validate(self, num_agents: int) -> None:
        if self.law not in TASK_LAWS:
            raise ConfigError(f"task_size.law must be one of {TASK_LAWS}")
        if not (0 < self.q_lo < self.q_hi):
            raise ConfigError("task sizes must satisfy 0 < q_lo < q_hi")
        if self.fixed is not None:
            if len(self.fixed) != num_agents:
                raise ConfigError("task_size.fixed needs one size per agent")
            for q in self.fixed:
                if not (self.q_lo <= q <= self.q_hi):
                    raise ConfigError(f"fixed task size {q} outside [q_lo, q_hi]")


@dataclass(frozen=True)
class GameConfig:
    """Everything one replication needs; validated before any run."""

    num_agents: int
    horizon: int
    env: EnvConfig
    candidates: CandidateSchedule
    learners: tuple[LearnerParams, ...]
    task_size: TaskSizeLaw = field(default_factory=TaskSizeLaw)
    activation: tuple[float, ...] = ()  # empty -> always on
    computation_intensity: float = 1000.0  # cycles/bit
    master_seed: int = 0

    def activation_probs(self) -> tuple[float, ...]:
        return self.activation if self.activation else (1.0,) * self.num_agents

    def validate(self) -> None:
        if self.num_agents < 1:
            raise ConfigError("num_agents must be >= 1")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if not self.computation_intensity > 0:
            raise ConfigError("computation_intensity must be > 0")
        if len(self.learners) != self.num_agents:
            raise ConfigError("learners must list one LearnerParams per agent")
        self.env.validate(self.num_agents, self.horizon)
        self.candidates.validate(self.horizon, self.num_agents, self.env.arm_ids())
        self.task_size.validate(self.num_agents)
        for rho in self.activation_probs():
            if not (0.0 < rho <= 1.0):
                raise ConfigError("activation probabilities must be in (0, 1]")
        for n, lp in enumerate(self.learners):
            lp.validate()
            self._check_rate_conditions(n, lp)

    def _check_rate_conditions(self, agent: int, lp: LearnerParams) -> None:
        """Divergence conditions for the sqrt schedule on this horizon.

        The exploration rate must dominate 1/clock from some round on; with
        gamma = ratio * sqrt(a log K / (K clock)) that happens once
        clock > K / (ratio^2 a log K).  Reject configs whose horizon never
        reaches that point (baselines with ratio 0 are exempt).
        """
        if lp.gamma_ratio == 0.0 or lp.feedback == "full":
            return
        worst = 0.0
        for _, sets in self.candidates.epochs:
            k = len(sets[agent])
            log_k = max(math.log(k), math.log(2.0))
            worst = max(worst, k / (lp.gamma_ratio**2 * lp.schedule_a * log_k))
        if worst >= self.horizon:
            raise ConfigError(
                f"agent {agent}: gamma_ratio={lp.gamma_ratio}, schedule_a="
                f"{lp.schedule_a} keep the exploration rate below 1/round for "
                f"the whole horizon (needs ~{int(worst) + 1} rounds)"
            )

    # -- plain-dict round trip (trace headers, manifests, config files) -----

    def to_dict(self) -> dict:
        env = self.env
        d = {
            "num_agents": self.num_agents,
            "horizon": self.horizon,
            "computation_intensity": self.computation_intensity,
            "master_seed": self.master_seed,
            "activation": list(self.activation_probs()),
            "task_size": {
                "law": self.task_size.law,
                "q_lo": self.task_size.q_lo,
                "q_hi": self.task_size.q_hi,
                "fixed": list(self.task_size.fixed) if self.task_size.fixed else None,
            },
            "learners": [
                {
                    "schedule_a": lp.schedule_a,
                    "gamma_ratio": lp.gamma_ratio,
                    "use_demand_weight": lp.use_demand_weight,
                    "patch_mode": lp.patch_mode,
                    "uniform_mix": lp.uniform_mix,
                    "feedback": lp.feedback,
                }
                for lp in self.learners
            ],
            "candidates": [
                {"start": start, "sets": [list(s) for s in sets]}
                for start, sets in self.candidates.epochs
            ],
            "env": {
                "model": env.model,
                "vfns": [
                    {
                        "id": v.id,
                        "max_cpu_freq": v.max_cpu_freq,
                        "alloc_fraction": list(v.alloc_fraction_range),
                    }
                    for v in env.vfns
                ],
                "channel": {
                    "bandwidth_hz": env.channel.bandwidth_hz,
                    "num_subchannels": env.channel.num_subchannels,
                    "tx_power_dbm": env.channel.tx_power_dbm,
                    "noise_psd_dbm_hz": env.channel.noise_psd_dbm_hz,
                    "comm_range_m": env.channel.comm_range_m,
                    "pathloss_a": env.channel.pathloss_a,
                    "pathloss_b": env.channel.pathloss_b,
                    "interference_w": env.channel.interference_w,
                },
                "cost_cap": env.cost_cap,
                "coupling": env.coupling,
                "theta": env.theta,
                "adversary_num_phases": env.adversary_num_phases,
                "adversary_mean_range": list(env.adversary_mean_range),
                "adversary_noise_halfwidth": env.adversary_noise_halfwidth,
            },
        }
        if env.adversary is not None:
            d["env"]["adversary_phases"] = [
                {"start": lo, "end": hi, "means": {str(k): v for k, v in means.items()}}
                for lo, hi, means in env.adversary.phases
            ]
            d["env"]["adversary_mean_range"] = list(env.adversary.mean_range)
            d["env"]["adversary_noise_halfwidth"] = env.adversary.noise_halfwidth
        return d

    @staticmethod
    def from_dict(d: dict) -> "GameConfig":
        e = d["env"]
        adversary = None
        if "adversary_phases" in e:
            adversary = AdversaryPhaseSchedule(
                phases=tuple(
                    (p["start"], p["end"], {int(k): float(v) for k, v in p["means"].items()})
                    for p in e["adversary_phases"]
                ),
                noise_halfwidth=e.get("adversary_noise_halfwidth", 0.0),
                mean_range=tuple(e.get("adversary_mean_range", [0.0, float("inf")])),
            )
        env = EnvConfig(
            model=e["model"],
            vfns=tuple(
                VfnSpec(
                    id=v["id"],
                    max_cpu_freq=v["max_cpu_freq"],
                    alloc_fraction_range=tuple(v.get("alloc_fraction", [0.2, 0.5])),
                )
                for v in e["vfns"]
            ),
            channel=ChannelParams(**e.get("channel", {})),
            adversary=adversary,
            adversary_num_phases=e.get("adversary_num_phases", 3),
            adversary_mean_range=tuple(e.get("adversary_mean_range", [1.0, 2.5])),
            adversary_noise_halfwidth=e.get("adversary_noise_halfwidth", 0.0),
            cost_cap=e.get("cost_cap"),
            coupling=e.get("coupling", "sqrt"),
            theta=e.get("theta", 0.1),
        )
        ts = d.get("task_size", {})
        return GameConfig(
            num_agents=d["num_agents"],
            horizon=d["horizon"],
            env=env,
            candidates=CandidateSchedule(
                epochs=tuple(
                    (ep["start"], tuple(tuple(s) for s in ep["sets"]))
                    for ep in d["candidates"]
                )
            ),
            learners=tuple(LearnerParams(**lp) for lp in d["learners"]),
            task_size=TaskSizeLaw(
                law=ts.get("law", "fixed"),
                q_lo=ts.get("q_lo", 0.2e6),
                q_hi=ts.get("q_hi", 1.0e6),
                fixed=tuple(ts["fixed"]) if ts.get("fixed") else None,
            ),
            activation=tuple(d.get("activation", [])),
            computation_intensity=d.get("computation_intensity", 1000.0),
            master_seed=d.get("master_seed", 0),
        )

    def digest(self) -> str:
        """Hash that changes iff any config field changes."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class RoundRecord:
    """One agent-round of play (a read-only view into the trace arrays)."""

    round: int
    agent: int
    active: bool
    candidate_set: tuple[int, ...]
    probs: np.ndarray | None
    chosen: int | None
    congestion: int | None
    cost: CostTriple | None
    estimates: np.ndarray | None
    rates: LearningRates | None
    activation_clock: int
    zeta: float
    task_size: float


class GameTrace:
    """Full history of one replication plus counterfactual ground truth.

    Column-major arrays indexed [round, agent] (1-based rounds; row 0 is
    unused padding).  Ragged per-round vectors (probabilities, estimates,
    counterfactual normalized costs) are NaN-padded to the largest candidate
    set and aligned with the round's candidate tuple.
    """

    def __init__(self, config: GameConfig, run_id: int):
        config_pad = config.horizon + 1
        n = config.num_agents
        kmax = max(len(s) for _, sets in config.candidates.epochs for s in sets)
        self.config = config
        self.run_id = run_id
        self.kmax = kmax
        self.active = np.zeros((config_pad, n), dtype=bool)
        self.chosen = np.full((config_pad, n), -1, dtype=np.int64)
        self.congestion = np.zeros((config_pad, n), dtype=np.int64)
        self.clock = np.zeros((config_pad, n), dtype=np.int64)
        self.zeta = np.full((config_pad, n), np.nan)
        self.task_size = np.full((config_pad, n), np.nan)
        self.eta = np.full((config_pad, n), np.nan)
        self.gamma = np.full((config_pad, n), np.nan)
        self.cost_a = np.full((config_pad, n), np.nan)
        self.cost_c = np.full((config_pad, n), np.nan)
        self.outlier = np.full((config_pad, n), np.nan)
        self.cost_real = np.full((config_pad, n), np.nan)
        self.cost_norm = np.full((config_pad, n), np.nan)
        self.probs = np.full((config_pad, n, kmax), np.nan)
        self.estimates = np.full((config_pad, n, kmax), np.nan)
        self.cf_norm = np.full((config_pad, n, kmax), np.nan)
        self.cf_raw = np.full((config_pad, n, kmax), np.nan)

    # -- structure ----------------------------------------------------------

    @property
    def horizon(self) -> int:
        return self.config.horizon

    @property
    def num_agents(self) -> int:
        return self.config.num_agents

    def candidate_set(self, rnd: int, agent: int) -> tuple[int, ...]:
        return self.config.candidates.sets_at(rnd)[agent]

    def arm_index(self, rnd: int, agent: int, arm: int) -> int:
        arms = self.candidate_set(rnd, agent)
        try:
            return arms.index(arm)
        except ValueError:
            raise ProtocolError(
                f"arm {arm} not in agent {agent}'s candidate set at round {rnd}"
            ) from None

    def record(self, rnd: int, agent: int) -> RoundRecord:
        arms = self.candidate_set(rnd, agent)
        k = len(arms)
        if not self.active[rnd, agent]:
            return RoundRecord(
                round=rnd, agent=agent, active=False, candidate_set=arms,
                probs=None, chosen=None, congestion=None, cost=None,
                estimates=None, rates=None,
                activation_clock=int(self.clock[rnd, agent]),
                zeta=float("nan"), task_size=float("nan"),
            )
        cost = CostTriple(
            adversary_cost=float(self.cost_a[rnd, agent]),
            collision_cost=float(self.cost_c[rnd, agent]),
            outlier_weight=float(self.outlier[rnd, agent]),
            realized_cost=float(self.cost_real[rnd, agent]),
            normalized_cost=float(self.cost_norm[rnd, agent]),
        )
        return RoundRecord(
            round=rnd, agent=agent, active=True, candidate_set=arms,
            probs=self.probs[rnd, agent, :k].copy(),
            chosen=int(self.chosen[rnd, agent]),
            congestion=int(self.congestion[rnd, agent]),
            cost=cost,
            estimates=self.estimates[rnd, agent, :k].copy(),
            rates=LearningRates(float(self.eta[rnd, agent]), float(self.gamma[rnd, agent])),
            activation_clock=int(self.clock[rnd, agent]),
            zeta=float(self.zeta[rnd, agent]),
            task_size=float(self.task_size[rnd, agent]),
        )

    def records(self) -> Iterator[RoundRecord]:
        for rnd in range(1, self.horizon + 1):
            for agent in range(self.num_agents):
                yield self.record(rnd, agent)

    def counterfactual_cost(self, rnd: int, agent: int, alt_arm: int) -> float:
        """Normalized cost had the agent switched to alt_arm, others fixed."""
        if not self.active[rnd, agent]:
            raise ProtocolError(f"agent {agent} was inactive at round {rnd}")
        return float(self.cf_norm[rnd, agent, self.arm_index(rnd, agent, alt_arm)])


def counterfactual_cost(trace: GameTrace, rnd: int, agent: int, alt_arm: int) -> float:
    return trace.counterfactual_cost(rnd, agent, alt_arm)


def run_game(config: GameConfig, run_id: int = 0) -> GameTrace:
    """Play the configured game once; deterministic in (config, run_id)."""
    config.validate()
    env = Environment(config, run_id)
    trace = GameTrace(config, run_id)

    act_rng = stream_rng(config.master_seed, run_id, "activation")
    probs_act = np.array(config.activation_probs())
    active = act_rng.random((config.horizon + 1, config.num_agents)) < probs_act

    task_rng = stream_rng(config.master_seed, run_id, "task")
    ts = config.task_size
    shape = (config.horizon + 1, config.num_agents)
    if ts.law == "fixed":
        fixed = ts.fixed or ((ts.q_lo + ts.q_hi) / 2.0,) * config.num_agents
        tasks = np.broadcast_to(np.array(fixed), shape).copy()
    elif ts.law == "uniform":
        tasks = task_rng.uniform(ts.q_lo, ts.q_hi, size=shape)
    else:  # truncnorm: mean at midpoint, sd a quarter range, resampled
        mu, sd = (ts.q_lo + ts.q_hi) / 2.0, (ts.q_hi - ts.q_lo) / 4.0
        tasks = task_rng.normal(mu, sd, size=shape)
        bad = (tasks < ts.q_lo) | (tasks > ts.q_hi)
        while bad.any():
            tasks[bad] = task_rng.normal(mu, sd, size=int(bad.sum()))
            bad = (tasks < ts.q_lo) | (tasks > ts.q_hi)

    sel_rng = stream_rng(config.master_seed, run_id, "selection")
    states = [AgentState(params=lp) for lp in config.learners]
    agent_rates: list[LearningRates | None] = [None] * config.num_agents
    agent_probs: list[np.ndarray | None] = [None] * config.num_agents

    for rnd in range(1, config.horizon + 1):
        sets = config.candidates.sets_at(rnd)
        joint: dict[int, int] = {}
        for n in range(config.num_agents):
            if not active[rnd, n]:
                continue
            st = states[n]
            st.activation_clock += 1
            rates = bandit.learning_rates(
                st.activation_clock, len(sets[n]), st.params.schedule_a, st.params.gamma_ratio
            )
            bandit.sync_candidates(st, sets[n])
            arm, p = bandit.select_arm(
                st, tasks[rnd, n], sets[n], sel_rng, q_lo=ts.q_lo, q_hi=ts.q_hi
            )
            joint[n] = arm
            agent_rates[n] = rates
            agent_probs[n] = p

        if not joint:
            continue
        try:
            vectors = env.cost_vectors(rnd, joint)
        except ProtocolError as exc:
            raise ProtocolError(f"round {rnd}: {exc}") from exc

        for n, arm in joint.items():
            st = states[n]
            vec = vectors[n]
            arms = sets[n]
            k = len(arms)
            i = arms.index(arm)
            rates = agent_rates[n]
            p = agent_probs[n]
            if st.params.feedback == "full":
                est = np.asarray(vec["normalized"], dtype=np.float64).copy()
            else:
                est = bandit.estimate_cost(float(vec["normalized"][i]), i, p, rates.gamma)
            bandit.update_scores(st, est, rates.eta, arms)
            st.last_rates = rates

            trace.active[rnd, n] = True
            trace.chosen[rnd, n] = arm
            trace.congestion[rnd, n] = int(vec["congestion"][i])
            trace.clock[rnd, n] = st.activation_clock
            trace.zeta[rnd, n] = st.demand_weight
            trace.task_size[rnd, n] = tasks[rnd, n]
            trace.eta[rnd, n] = rates.eta
            trace.gamma[rnd, n] = rates.gamma
            trace.cost_a[rnd, n] = vec["adversary"][i]
            trace.cost_c[rnd, n] = vec["collision"][i]
            trace.outlier[rnd, n] = vec["outlier"][i]
            trace.cost_real[rnd, n] = vec["realized"][i]
            trace.cost_norm[rnd, n] = vec["normalized"][i]
            trace.probs[rnd, n, :k] = p
            trace.estimates[rnd, n, :k] = est
            trace.cf_norm[rnd, n, :k] = vec["normalized"]
            trace.cf_raw[rnd, n, :k] = vec["realized"]
        # inactive agents keep frozen clocks in the trace for bookkeeping
        for n in range(config.num_agents):
            if not active[rnd, n]:
                trace.clock[rnd, n] = states[n].activation_clock

    return trace


# ---------------------------------------------------------------------------
# line-oriented trace serialization
# ---------------------------------------------------------------------------

_TRACE_MAGIC = "# fogbandit-trace v1"


def _fmt(x: float) -> str:
    return repr(float(x))


def _fmt_vec(row: np.ndarray, k: int) -> str:
    return ",".join(_fmt(v) for v in row[:k])


def write_trace(trace: GameTrace, path) -> None:
    """One RoundRecord per line, fixed column order, full-precision floats.

    Columns: round agent active clock zeta task_size eta gamma chosen
    congestion cost_a cost_c outlier cost_real cost_norm probs estimates
    cf_norm cf_raw -- the last four comma-joined over the round's candidate
    set.  Inactive agent-rounds carry "-" placeholders.
    """
    with open(path, "w") as fh:
        fh.write(_TRACE_MAGIC + "\n")
        header = {"config": trace.config.to_dict(), "run_id": trace.run_id,
                  "config_sha256": trace.config.digest()}
        fh.write("# " + json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for rnd in range(1, trace.horizon + 1):
            for n in range(trace.num_agents):
                if not trace.active[rnd, n]:
                    fh.write(f"{rnd} {n} 0 {trace.clock[rnd, n]}" + " -" * 15 + "\n")
                    continue
                k = len(trace.candidate_set(rnd, n))
                cols = [
                    str(rnd), str(n), "1", str(int(trace.clock[rnd, n])),
                    _fmt(trace.zeta[rnd, n]), _fmt(trace.task_size[rnd, n]),
                    _fmt(trace.eta[rnd, n]), _fmt(trace.gamma[rnd, n]),
                    str(int(trace.chosen[rnd, n])), str(int(trace.congestion[rnd, n])),
                    _fmt(trace.cost_a[rnd, n]), _fmt(trace.cost_c[rnd, n]),
                    _fmt(trace.outlier[rnd, n]), _fmt(trace.cost_real[rnd, n]),
                    _fmt(trace.cost_norm[rnd, n]),
                    _fmt_vec(trace.probs[rnd, n], k),
                    _fmt_vec(trace.estimates[rnd, n], k),
                    _fmt_vec(trace.cf_norm[rnd, n], k),
                    _fmt_vec(trace.cf_raw[rnd, n], k),
                ]
                fh.write(" ".join(cols) + "\n")


def read_trace(path) -> GameTrace:
    """Parse a trace file back into arrays (no re-simulation)."""
    with open(path) as fh:
        magic = fh.readline().rstrip("\n")
        if magic != _TRACE_MAGIC:
            raise ValueError(f"{path}: not a fogbandit trace (bad magic line)")
        header = json.loads(fh.readline().lstrip("# ").rstrip("\n"))
        config = GameConfig.from_dict(header["config"])
        trace = GameTrace(config, header.get("run_id", 0))
        for line in fh:
            parts = line.split()
            rnd, n, act = int(parts[0]), int(parts[1]), parts[2] == "1"
            trace.clock[rnd, n] = int(parts[3])
            if not act:
                continue
            trace.active[rnd, n] = True
            (trace.zeta[rnd, n], trace.task_size[rnd, n], trace.eta[rnd, n],
             trace.gamma[rnd, n]) = (float(parts[4]), float(parts[5]),
                                     float(parts[6]), float(parts[7]))
            trace.chosen[rnd, n] = int(parts[8])
            trace.congestion[rnd, n] = int(parts[9])
            (trace.cost_a[rnd, n], trace.cost_c[rnd, n], trace.outlier[rnd, n],
             trace.cost_real[rnd, n], trace.cost_norm[rnd, n]) = map(float, parts[10:15])
            for dest, col in ((trace.probs, 15), (trace.estimates, 16),
                              (trace.cf_norm, 17), (trace.cf_raw, 18)):
                vals = [float(v) for v in parts[col].split(",")]
                dest[rnd, n, : len(vals)] = vals
    return trace
