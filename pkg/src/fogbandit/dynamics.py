"""Continuous-time verification layer.

Integrates the mean replicator field implied by the learning rule, checks
the softmin-map contraction condition, and measures how closely discrete
traces track the mean ODE on the learning-rate clock.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .bandit import choice_probabilities
from .oracle import SmallGame

if TYPE_CHECKING:  # pragma: no cover
    from .game import GameTrace

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class MixedProfile:
    """One probability vector per agent, aligned with its candidate set."""

    vectors: tuple[np.ndarray, ...]

    def validate(self) -> None:
        for i, p in enumerate(self.vectors):
            if (p < -SIMPLEX_TOL).any():
                raise ValueError(f"agent {i}: negative probability")
            if abs(p.sum() - 1.0) > SIMPLEX_TOL:
                raise ValueError(f"agent {i}: probabilities sum to {p.sum()}")

    @staticmethod
    def uniform(game: SmallGame) -> "MixedProfile":
        return MixedProfile(
            tuple(np.full(len(s), 1.0 / len(s)) for s in game.candidate_sets)
        )

    @staticmethod
    def random(game: SmallGame, rng: np.random.Generator) -> "MixedProfile":
        vecs = []
        for s in game.candidate_sets:
            v = rng.dirichlet(np.ones(len(s)))
            vecs.append(v / v.sum())
        return MixedProfile(tuple(vecs))


class MeanCostField:
    """Expected normalized cost of every (agent, arm) under a mixed profile.

    Opponent congestion is integrated out exactly: the number of other
    agents on an arm is Poisson-binomial in their probabilities, computed by
    convolution, so field values match exhaustive enumeration.
    """

    def __init__(self, game: SmallGame):
        self.game = game

    def expected_costs(self, profile: MixedProfile) -> tuple[np.ndarray, ...]:
        game = self.game
        out = []
        for n, arms in enumerate(game.candidate_sets):
            costs = np.empty(len(arms))
            for i, arm in enumerate(arms):
                pmf = np.array([1.0])
                for u, arms_u in enumerate(game.candidate_sets):
                    if u == n:
                        continue
                    q = 0.0
                    if arm in arms_u:
                        q = float(profile.vectors[u][arms_u.index(arm)])
                    pmf = np.convolve(pmf, [1.0 - q, q])
                row = game.table[n, game.arm_pos(arm), : len(pmf)]
                costs[i] = float(pmf @ row)
            out.append(costs)
        return tuple(out)

    def at_profile(self, profile: MixedProfile) -> tuple[np.ndarray, ...]:
        return self.expected_costs(profile)


def replicator_step(
    profile: MixedProfile,
    field: MeanCostField,
    weights: Sequence[float],
    dt: float,
) -> MixedProfile:
    """One explicit Euler step of p_k' = w * p_k * (mean cost - cost_k).

    Followed by exact renormalization (projection if the raw step leaves the
    simplex).  Faces are invariant: zero entries stay zero.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    costs = field.expected_costs(profile)
    vecs = []
    for p, l, w in zip(profile.vectors, costs, weights):
        avg = float(p @ l)
        q = p + dt * w * p * (avg - l)
        q = np.maximum(q, 0.0)
        vecs.append(q / q.sum())
    return MixedProfile(tuple(vecs))


def replicator_velocity(
    profile: MixedProfile, field: MeanCostField, weights: Sequence[float]
) -> float:
    """Sup-norm of the replicator vector field at a profile."""
    costs = field.expected_costs(profile)
    v = 0.0
    for p, l, w in zip(profile.vectors, costs, weights):
        avg = float(p @ l)
        v = max(v, float(np.abs(w * p * (avg - l)).max()))
    return v


def integrate_to_rest(
    profile0: MixedProfile,
    field: MeanCostField,
    weights: Sequence[float],
    dt: float = 1e-2,
    tol: float = 1e-6,
    max_steps: int = 200_000,
) -> tuple[MixedProfile, bool]:
    """Iterate Euler steps until the field's sup-norm velocity drops below tol.

    The step halves (locally) whenever the raw Euler update would leave the
    simplex.  Hitting max_steps returns converged=False: limit cycles are a
    legal outcome in general games, not an error.
    """
    p = profile0
    for _ in range(max_steps):
        if replicator_velocity(p, field, weights) < tol:
            return p, True
        step = dt
        for _ in range(30):
            costs = field.expected_costs(p)
            raw = [
                pn + step * w * pn * (float(pn @ ln) - ln)
                for pn, ln, w in zip(p.vectors, costs, weights)
            ]
            if all((q >= -1e-15).all() for q in raw):
                break
            step /= 2.0
        p = MixedProfile(tuple(np.maximum(q, 0.0) / np.maximum(q, 0.0).sum() for q in raw))
    return p, False


@dataclass(frozen=True)
class ContractionReport:
    condition_holds: bool
    analytic_bound: float
    empirical_factor: float
    theta: float
    linear_cost: bool


def estimate_theta(game: SmallGame) -> float:
    """Lipschitz bound of cost in the congestion degree.

    Exhaustive over single-client changes: the largest cost jump any client
    can see on its arm when one more or fewer opponent sits on it.
    """
    diffs = np.abs(np.diff(game.table, axis=2))
    # only congestion levels reachable on arms the agent can actually use
    worst = 0.0
    for n, arms in enumerate(game.candidate_sets):
        for arm in arms:
            worst = max(worst, float(diffs[n, game.arm_pos(arm)].max()) if diffs.shape[2] else 0.0)
    return worst


def check_contraction(
    game: SmallGame,
    zeta_max: float,
    theta: float | None = None,
    num_pairs: int = 50,
    rng: np.random.Generator | None = None,
    score_box: float = 4.0,
) -> ContractionReport:
    """Analytic contraction condition plus an empirical factor.

    The analytic test is 2*zeta*theta < 1, tightened to theta*zeta/2 < 1
    when the cost is linear in the congestion degree.  The empirical factor
    samples score pairs, maps them through the softmin choice rule, and
    measures ||cost(profile) - cost(profile')||_inf / ||scores - scores'||_inf.
    """
    if theta is None:
        theta = estimate_theta(game)
    if game.linear_coupling:
        bound = theta * zeta_max / 2.0
    else:
        bound = 2.0 * zeta_max * theta
    holds = bound < 1.0

    rng = rng or np.random.default_rng(0)
    field = MeanCostField(game)
    factor = 0.0
    for _ in range(num_pairs):
        scores = [rng.uniform(0.0, score_box, size=len(s)) for s in game.candidate_sets]
        other = [rng.uniform(0.0, score_box, size=len(s)) for s in game.candidate_sets]
        prof_a = MixedProfile(tuple(choice_probabilities(s, zeta_max) for s in scores))
        prof_b = MixedProfile(tuple(choice_probabilities(s, zeta_max) for s in other))
        la = np.concatenate(field.expected_costs(prof_a))
        lb = np.concatenate(field.expected_costs(prof_b))
        ds = max(
            float(np.abs(a - b).max()) for a, b in zip(scores, other)
        )
        if ds > 1e-12:
            factor = max(factor, float(np.abs(la - lb).max()) / ds)
    return ContractionReport(
        condition_holds=holds,
        analytic_bound=bound,
        empirical_factor=factor,
        theta=theta,
        linear_cost=game.linear_coupling,
    )


# ---------------------------------------------------------------------------
# discrete-vs-ODE tracking
# ---------------------------------------------------------------------------


def discrete_probability_path(trace: "GameTrace") -> np.ndarray:
    """[T+1, N, Kmax] selection probabilities, frozen through inactive rounds.

    Rounds before an agent's first activation carry the uniform distribution
    over that round's candidate set.
    """
    T, N = trace.horizon, trace.num_agents
    path = np.full((T + 1, N, trace.kmax), np.nan)
    for n in range(N):
        last: np.ndarray | None = None
        last_k = 0
        for rnd in range(1, T + 1):
            arms = trace.candidate_set(rnd, n)
            k = len(arms)
            if trace.active[rnd, n]:
                last = trace.probs[rnd, n, :k].copy()
                last_k = k
            if last is None or last_k != k:
                path[rnd, n, :k] = 1.0 / k
            else:
                path[rnd, n, :k] = last
    return path


def ode_path(
    field: MeanCostField,
    weights: Sequence[float],
    dt_matrix: np.ndarray,
    profile0: MixedProfile,
) -> np.ndarray:
    """Euler path of the mean ODE on per-agent learning-rate clocks.

    ``dt_matrix[t, n]`` is agent n's step at round t (its rate if active,
    zero otherwise); row 0 is ignored.  Returns [T+1, N, Kmax] aligned with
    discrete_probability_path.
    """
    T, n_agents = dt_matrix.shape[0] - 1, dt_matrix.shape[1]
    kmax = max(len(v) for v in profile0.vectors)
    out = np.full((T + 1, n_agents, kmax), np.nan)
    prof = profile0
    for rnd in range(1, T + 1):
        for n, v in enumerate(prof.vectors):
            out[rnd, n, : len(v)] = v
        costs = field.expected_costs(prof)
        vecs = []
        for n, (p, l, w) in enumerate(zip(prof.vectors, costs, weights)):
            step = float(dt_matrix[rnd, n])
            if step > 0.0:
                avg = float(p @ l)
                q = np.maximum(p + step * w * p * (avg - l), 0.0)
                vecs.append(q / q.sum())
            else:
                vecs.append(p)
        prof = MixedProfile(tuple(vecs))
    return out


def path_deviation(discrete: np.ndarray, ode: np.ndarray) -> np.ndarray:
    """Per-round sup-norm deviation between two probability paths."""
    d = np.abs(discrete - ode)
    return np.nanmax(d, axis=(1, 2))


def tracking_error(
    trace: "GameTrace",
    field: MeanCostField,
    weights: Sequence[float] | None = None,
) -> np.ndarray:
    """Per-round sup deviation of one trace from the mean ODE.

    The ODE advances on each agent's realized learning-rate clock (its eta
    at active rounds); weights default to the trace's mean demand weight.
    Only single-epoch traces have a well-defined mean field to track.
    """
    if len(trace.config.candidates.epochs) != 1:
        raise ValueError("tracking_error needs a single candidate epoch")
    T, N = trace.horizon, trace.num_agents
    if weights is None:
        with np.errstate(invalid="ignore"):
            weights = [float(np.nanmean(trace.zeta[1:, n])) for n in range(N)]
        weights = [1.0 if np.isnan(w) else w for w in weights]
    dt = np.where(trace.active, np.nan_to_num(trace.eta), 0.0)
    arms0 = trace.config.candidates.sets_at(1)
    profile0 = MixedProfile(tuple(np.full(len(a), 1.0 / len(a)) for a in arms0))
    ode = ode_path(field, weights, dt, profile0)
    disc = discrete_probability_path(trace)
    return path_deviation(disc[1:], ode[1:])
