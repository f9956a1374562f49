"""Experiment configuration: YAML schema, validation, baselines.

A config describes one experiment: a base game, learner variants to compare,
replication seeds, and which metrics to persist.  Validation failures name
the offending key and the violated constraint; ``--strict`` additionally
rejects unknown keys.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass

import yaml

from .bandit import LearnerParams
from .env import (
    AdversaryPhaseSchedule,
    CandidateSchedule,
    ChannelParams,
    ConfigError,
    EnvConfig,
    VfnSpec,
)
from .game import GameConfig, TaskSizeLaw

# Named baselines: overrides applied on top of the base learner parameters.
BASELINES: dict[str, dict] = {
    "perturbed": {},
    "vanilla-ix": {"use_demand_weight": False, "patch_mode": "reset_all"},
    "explicit": {
        "use_demand_weight": False,
        "patch_mode": "reset_all",
        "gamma_ratio": 0.0,
        "uniform_mix": 0.1,
    },
    "full-feedback": {
        "feedback": "full",
        "use_demand_weight": False,
        "patch_mode": "reset_all",
    },
    "full-reset": {"patch_mode": "reset_all"},
}

METRIC_NAMES = ("cost", "pota", "regret")
TRACE_POLICIES = ("none", "first", "all")

_KEYS_TOP = {
    "name", "replications", "master_seed", "seeds", "metrics", "xi_window",
    "traces", "workers", "variants", "game",
}
_KEYS_GAME = {
    "num_agents", "horizon", "computation_intensity", "activation",
    "task_size", "learner", "learners", "candidates", "env",
}
_KEYS_ENV = {
    "model", "cost_cap", "vfns", "channel", "adversary", "coupling", "theta",
}
_KEYS_CHANNEL = {
    "bandwidth_hz", "num_subchannels", "tx_power_dbm", "noise_psd_dbm_hz",
    "comm_range_m", "pathloss_a", "pathloss_b", "interference_w",
}
_KEYS_LEARNER = {
    "schedule_a", "gamma_ratio", "use_demand_weight", "patch_mode",
    "uniform_mix", "feedback",
}
_KEYS_TASK = {"law", "q_lo", "q_hi", "fixed"}
_KEYS_ADVERSARY = {"num_phases", "mean_range", "noise_halfwidth", "phases"}
_KEYS_VARIANT = {"name", "baseline", "learner"}
_KEYS_VFN = {"id", "max_cpu_freq", "alloc_fraction"}
_KEYS_CANDIDATE_EPOCH = {"start", "all", "sets"}


@dataclass(frozen=True)
class Variant:
    name: str
    learners: tuple[LearnerParams, ...]


@dataclass(frozen=True)
class ExperimentSpec:
    """A named batch: base game, learner variants, seeds, outputs."""

    name: str
    base: GameConfig
    variants: tuple[Variant, ...]
    run_ids: tuple[int, ...]
    metrics: tuple[str, ...] = ("cost", "regret")
    xi_window: float | None = None
    trace_policy: str = "first"
    workers: int = 1

    def game_for(self, variant: Variant) -> GameConfig:
        return dataclasses.replace(self.base, learners=variant.learners)

    def validate(self) -> None:
        if not re.fullmatch(r"[A-Za-z0-9._-]+", self.name):
            raise ConfigError(f"name {self.name!r} is not filesystem-safe")
        if not self.run_ids:
            raise ConfigError("replications must be >= 1")
        if len(set(self.run_ids)) != len(self.run_ids):
            raise ConfigError("seeds must be distinct")
        for m in self.metrics:
            if m not in METRIC_NAMES:
                raise ConfigError(f"metrics entry {m!r}; known: {METRIC_NAMES}")
        if self.trace_policy not in TRACE_POLICIES:
            raise ConfigError(f"traces must be one of {TRACE_POLICIES}")
        if self.xi_window is not None and not (0.0 < self.xi_window <= 1.0):
            raise ConfigError("xi_window must be a fraction in (0, 1]")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.variants:
            raise ConfigError("at least one variant is required")
        names = [v.name for v in self.variants]
        if len(set(names)) != len(names):
            raise ConfigError("variant names must be unique")
        self.base.validate()
        for v in self.variants:
            self.game_for(v).validate()


def _check_keys(mapping: dict, allowed: set[str], path: str, strict: bool) -> None:
    if not isinstance(mapping, dict):
        raise ConfigError(f"{path}: expected a mapping")
    unknown = set(mapping) - allowed
    if unknown and strict:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}")


def _num(value, path: str) -> float:
    """YAML 1.1 floats need a signed exponent; accept '1.0e7' spellings too."""
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected a number, got {value!r}") from None


_LEARNER_NUMERIC = {"schedule_a", "gamma_ratio", "uniform_mix"}


def _learner_from(d: dict, path: str, strict: bool, base: LearnerParams | None = None) -> LearnerParams:
    _check_keys(d, _KEYS_LEARNER, path, strict)
    params = dataclasses.replace(base or LearnerParams(), **{
        k: (_num(d[k], f"{path}.{k}") if k in _LEARNER_NUMERIC else d[k])
        for k in d if k in _KEYS_LEARNER
    })
    try:
        params.validate()
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return params


def _candidates_from(entries: list, num_agents: int, path: str, strict: bool) -> CandidateSchedule:
    if not isinstance(entries, list) or not entries:
        raise ConfigError(f"{path}: candidates must be a non-empty list of epochs")
    epochs = []
    for i, ep in enumerate(entries):
        _check_keys(ep, _KEYS_CANDIDATE_EPOCH, f"{path}[{i}]", strict)
        if "start" not in ep:
            raise ConfigError(f"{path}[{i}]: missing 'start'")
        if "all" in ep:
            sets = tuple(tuple(int(a) for a in ep["all"]) for _ in range(num_agents))
        elif "sets" in ep:
            sets = tuple(tuple(int(a) for a in s) for s in ep["sets"])
        else:
            raise ConfigError(f"{path}[{i}]: needs 'all' or per-agent 'sets'")
        epochs.append((int(ep["start"]), sets))
    return CandidateSchedule(epochs=tuple(epochs))


def _env_from(d: dict, horizon: int, path: str, strict: bool) -> EnvConfig:
    _check_keys(d, _KEYS_ENV, path, strict)
    vfn_list = d.get("vfns")
    if not vfn_list:
        raise ConfigError(f"{path}.vfns: at least one arm is required")
    vfns = []
    for i, v in enumerate(vfn_list):
        _check_keys(v, _KEYS_VFN, f"{path}.vfns[{i}]", strict)
        vfns.append(
            VfnSpec(
                id=int(v["id"]),
                max_cpu_freq=_num(v["max_cpu_freq"], f"{path}.vfns[{i}].max_cpu_freq"),
                alloc_fraction_range=tuple(
                    _num(x, f"{path}.vfns[{i}].alloc_fraction")
                    for x in v.get("alloc_fraction", (0.2, 0.5))
                ),
            )
        )
    channel_d = d.get("channel", {})
    _check_keys(channel_d, _KEYS_CHANNEL, f"{path}.channel", strict)
    channel = ChannelParams(**{
        k: (int(v) if k == "num_subchannels" else _num(v, f"{path}.channel.{k}"))
        for k, v in channel_d.items()
    })

    adv = d.get("adversary", {})
    _check_keys(adv, _KEYS_ADVERSARY, f"{path}.adversary", strict)
    schedule = None
    mean_range = tuple(_num(x, f"{path}.adversary.mean_range") for x in adv.get("mean_range", (1.0, 2.5)))
    halfwidth = _num(adv.get("noise_halfwidth", 0.0), f"{path}.adversary.noise_halfwidth")
    if "phases" in adv:
        schedule = AdversaryPhaseSchedule(
            phases=tuple(
                (int(p["start"]), int(p["end"]),
                 {int(k): float(m) for k, m in p["means"].items()})
                for p in adv["phases"]
            ),
            noise_halfwidth=halfwidth,
            mean_range=mean_range,
        )
    return EnvConfig(
        model=d.get("model", "physical"),
        vfns=tuple(vfns),
        channel=channel,
        adversary=schedule,
        adversary_num_phases=int(adv.get("num_phases", 3)),
        adversary_mean_range=mean_range,
        adversary_noise_halfwidth=halfwidth,
        cost_cap=_num(d["cost_cap"], f"{path}.cost_cap") if d.get("cost_cap") is not None else None,
        coupling=d.get("coupling", "sqrt"),
        theta=_num(d.get("theta", 0.1), f"{path}.theta"),
    )


def parse_spec(doc: dict, strict: bool = False) -> ExperimentSpec:
    """Build and validate an ExperimentSpec from a parsed YAML document."""
    _check_keys(doc, _KEYS_TOP, "<top>", strict)
    for key in ("name", "game"):
        if key not in doc:
            raise ConfigError(f"<top>: missing required key {key!r}")
    g = doc["game"]
    _check_keys(g, _KEYS_GAME, "game", strict)
    for key in ("num_agents", "horizon", "candidates", "env"):
        if key not in g:
            raise ConfigError(f"game: missing required key {key!r}")
    num_agents = int(g["num_agents"])
    horizon = int(g["horizon"])

    base_learner = _learner_from(g.get("learner", {}), "game.learner", strict)
    if "learners" in g:
        if len(g["learners"]) != num_agents:
            raise ConfigError("game.learners must list one entry per agent")
        learners = tuple(
            _learner_from(dd, f"game.learners[{i}]", strict, base_learner)
            for i, dd in enumerate(g["learners"])
        )
    else:
        learners = (base_learner,) * num_agents

    task_d = g.get("task_size", {})
    _check_keys(task_d, _KEYS_TASK, "game.task_size", strict)
    task = TaskSizeLaw(
        law=task_d.get("law", "fixed"),
        q_lo=float(task_d.get("q_lo", 0.2e6)),
        q_hi=float(task_d.get("q_hi", 1.0e6)),
        fixed=tuple(float(q) for q in task_d["fixed"]) if task_d.get("fixed") else None,
    )

    activation = g.get("activation", 1.0)
    if isinstance(activation, (int, float)):
        act = (float(activation),) * num_agents
    else:
        act = tuple(float(a) for a in activation)

    base = GameConfig(
        num_agents=num_agents,
        horizon=horizon,
        env=_env_from(g["env"], horizon, "game.env", strict),
        candidates=_candidates_from(g["candidates"], num_agents, "game.candidates", strict),
        learners=learners,
        task_size=task,
        activation=act,
        computation_intensity=float(g.get("computation_intensity", 1000.0)),
        master_seed=int(doc.get("master_seed", 0)),
    )

    variants = []
    for i, v in enumerate(doc.get("variants", [{"name": "default"}])):
        _check_keys(v, _KEYS_VARIANT, f"variants[{i}]", strict)
        if "name" not in v:
            raise ConfigError(f"variants[{i}]: missing 'name'")
        overrides: dict = {}
        if "baseline" in v:
            if v["baseline"] not in BASELINES:
                raise ConfigError(
                    f"variants[{i}].baseline {v['baseline']!r}; known: {sorted(BASELINES)}"
                )
            overrides.update(BASELINES[v["baseline"]])
        overrides.update(v.get("learner", {}))
        vl = tuple(
            _learner_from(overrides, f"variants[{i}].learner", strict, lp)
            for lp in learners
        )
        variants.append(Variant(name=str(v["name"]), learners=vl))

    if "seeds" in doc:
        run_ids = tuple(int(s) for s in doc["seeds"])
    else:
        run_ids = tuple(range(int(doc.get("replications", 1))))

    metrics = tuple(doc.get("metrics", ["cost", "regret"]))
    spec = ExperimentSpec(
        name=str(doc["name"]),
        base=base,
        variants=tuple(variants),
        run_ids=run_ids,
        metrics=metrics,
        xi_window=doc.get("xi_window"),
        trace_policy=doc.get("traces", "first"),
        workers=int(doc.get("workers", 1)),
    )
    spec.validate()
    return spec


def load_config(path, strict: bool = False) -> ExperimentSpec:
    """Parse and fully validate an experiment config file."""
    with open(path) as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: YAML parse error: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    try:
        return parse_spec(doc, strict=strict)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


SCHEMA_TEXT = """\
fogbandit experiment config (YAML)

Top level:
  name: str                     experiment name (filesystem-safe)   [required]
  replications: int             number of runs (default 1)
  seeds: [int, ...]             explicit run ids (overrides replications)
  master_seed: int              entropy root for all named RNG streams
  metrics: [cost|pota|regret]   CSV series to aggregate (default cost,regret)
  xi_window: float              tail fraction for equilibrium certification
  traces: none|first|all        per-run trace retention (default first)
  workers: int                  parallel replication workers (default 1)
  variants:                     learner variants to compare
    - name: str                 [required]
      baseline: str             one of perturbed|vanilla-ix|explicit|
                                full-feedback|full-reset
      learner: {...}            explicit overrides (see game.learner)

game:
  num_agents: int               [required]
  horizon: int                  rounds                               [required]
  computation_intensity: float  cycles/bit (default 1000)
  activation: float | [float]   per-round activation probability (default 1.0)
  task_size:
    law: fixed|uniform|truncnorm
    q_lo, q_hi: float           input size bounds in bits (0 < q_lo < q_hi)
    fixed: [float, ...]         per-agent sizes for law=fixed
  learner:                      defaults for every agent
    schedule_a: float > 0       learning-rate scale
    gamma_ratio: float in [0, .5]  implicit exploration / learning rate
    use_demand_weight: bool     task-size sharpening
    patch_mode: patch|reset_all|reset_new
    uniform_mix: float in [0,1) explicit exploration mixing
    feedback: bandit|full
  learners: [{...}, ...]        optional per-agent overrides
  candidates:                   epochs of candidate arm sets [required]
    - start: int                first round of the epoch (1-based)
      all: [arm, ...]           same set for every agent, or
      sets: [[arm, ...], ...]   one set per agent
  env:
    model: physical|synthetic
    vfns: [{id, max_cpu_freq, alloc_fraction: [lo, hi]}]  [required]
    channel:                    physical model only
      bandwidth_hz, num_subchannels, tx_power_dbm, noise_psd_dbm_hz,
      comm_range_m, pathloss_a, pathloss_b, interference_w (must be 0)
    adversary:
      num_phases: int           auto-generated phases, or
      phases: [{start, end, means: {arm: mean}}]
      mean_range: [lo, hi]      cost scaling (physical) / normalized mean
                                cost in (0, 1] (synthetic)
      noise_halfwidth: float    uniform noise around the phase mean
    cost_cap: float             normalization cap, seconds/bit (physical);
                                omit for the analytic worst case (very
                                conservative -- bundled configs calibrate it)
    coupling: sqrt|linear       synthetic congestion coupling
    theta: float                slope for coupling=linear

Exit codes: 0 ok, 1 config error, 2 runtime error, 3 verification failure.
Environment: FOGBANDIT_OUT sets the default output root.
"""
