"""Agents: online risk adaptation over ensemble disagreement, and the baselines.

The epistemic snapshot ``X(s, a)`` holds the *negated* per-head Q-values, so it is
a loss distribution: actions minimise ``rho_alpha(X(s, a))``, a small ``alpha``
is pessimistic about disagreement between heads and ``alpha = 1`` ranks
actions by the ensemble mean.

Every agent draws from separate random streams (init, exploration, head masks,
risk selection, distortion sampling) so switching the risk selector never
shifts the exploration sequence.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .distrl import (
    EnsembleModel,
    EpistemicStore,
    ReplayBuffer,
    Transition,
    cvar_beta,
    distortion_indices,
    ensemble_q,
    ensemble_update,
    ensemble_update_columns,
    epistemic_dist,
    identity_beta,
    store_update,
)
from .online import (
    EwafBelief,
    LossTracker,
    RiskGrid,
    build_grid,
    default_grid_epsilon,
    ewaf_update,
    ftpl_select,
    loss_curve,
    recursive_select,
)
from .risk import EmpiricalDistribution, RiskMeasureSpec, ltv, make_empirical, risk_value, rtv


class Adaptation(str, Enum):
    FTPL = "ftpl"
    RECURSIVE = "recursive"
    COMPOSITE = "composite"
    FIXED = "fixed"
    SCHEDULED = "scheduled"
    ART = "art"
    TOP = "top"


ORA_KINDS = (Adaptation.FTPL, Adaptation.RECURSIVE, Adaptation.COMPOSITE)


@dataclass
class AgentConfig:
    adaptation: Adaptation = Adaptation.FTPL
    gamma: float = 0.99
    epsilon_greedy: float = 0.1
    ensemble_size: int = 10
    num_quantiles: int = 8
    distortion_samples: Optional[int] = None  # None: exact pass over all fixed fractions
    kappa: float = 1.0
    lr: float = 0.1
    alpha_min: float = 0.1
    alpha_max: float = 1.0
    risk_family: str = "cvar"
    eta_ftpl: Optional[float] = None          # None: 1/sqrt(T)
    grid_epsilon: Optional[float] = None      # None: max(0.01, 0.9/sqrt(T))
    alpha_fixed: float = 1.0
    waypoints: tuple = ((0, 0.1), (100, 0.9), (200, 0.1))
    arms: Optional[tuple] = None
    ewaf_eta: float = 0.5
    p_mask: float = 0.5
    init_low: float = 0.0
    init_high: float = 1.0
    replay_capacity: int = 0
    batch_size: int = 32
    name: Optional[str] = None

    def __post_init__(self):
        self.adaptation = Adaptation(self.adaptation)

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.adaptation is Adaptation.FIXED:
            return f"fixed-{self.alpha_fixed:g}"
        return {Adaptation.FTPL: "ora", Adaptation.RECURSIVE: "recursive-ora"}.get(
            self.adaptation, self.adaptation.value)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Enum):
                v = v.value
            elif isinstance(v, tuple):
                v = [list(x) if isinstance(x, tuple) else x for x in v]
            out[f.name] = v
        return out


def scheduled_alpha(episode: int, waypoints: Sequence[tuple[float, float]]) -> float:
    """Piecewise-linear schedule through ``(episode, alpha)`` waypoints, flat beyond the ends."""
    if not waypoints:
        raise ValueError("schedule needs at least one waypoint")
    xs = [float(w[0]) for w in waypoints]
    if any(b < a for a, b in zip(xs, xs[1:])):
        raise ValueError("waypoints must be sorted by episode")
    return float(np.interp(episode, xs, [float(w[1]) for w in waypoints]))


def select_action(snapshots: Sequence[EmpiricalDistribution], alpha: float, spec: RiskMeasureSpec,
                  epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy ``argmin_a rho_alpha(X(s, a))``; ties go to the lowest action index."""
    if rng.random() < epsilon:
        return int(rng.integers(len(snapshots)))
    risks = [risk_value(spec, x, alpha) for x in snapshots]
    return int(np.argmin(risks))


def _digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, np.ndarray):
            h.update(p.tobytes())
        else:
            h.update(repr(p).encode())
    return h.hexdigest()


class Agent:
    """Shared machinery: quantile heads, epsilon-greedy exploration, step loop."""

    def __init__(self, cfg: AgentConfig, num_states: int, num_actions: int, seed: int,
                 total_periods: int = 10_000, heads: Optional[int] = None, p_mask: Optional[float] = None):
        self.cfg = cfg
        self.num_states = num_states
        self.num_actions = num_actions
        self.total_periods = max(int(total_periods), 1)
        streams = np.random.SeedSequence(seed).spawn(6)
        (init_rng, self.action_rng, self.mask_rng, self.select_rng,
         self.mc_rng, self.arm_rng) = (np.random.default_rng(s) for s in streams)
        self.model = EnsembleModel.random(
            heads or cfg.ensemble_size, num_states, num_actions, cfg.num_quantiles, init_rng,
            cfg.init_low, cfg.init_high, cfg.p_mask if p_mask is None else p_mask)
        self.replay = ReplayBuffer(cfg.replay_capacity) if cfg.replay_capacity > 0 else None
        self.episode = 0
        self.last_action = 0
        self.step_alphas: list[float] = []
        self.last_pair: Optional[tuple[int, int]] = None

    # hooks -----------------------------------------------------------------
    @property
    def beta(self):
        return identity_beta

    def current_alpha(self, s: int) -> float:
        raise NotImplementedError

    def eval_alpha(self, s: int, prev_action: int) -> float:
        return self.current_alpha(s)

    def greedy(self, s: int, evaluate: bool = False, rng=None, prev_action: Optional[int] = None) -> int:
        raise NotImplementedError

    def adapt(self, tr: Transition) -> None:
        pass

    # loop --------------------------------------------------------------------
    def start_episode(self, episode: int) -> None:
        self.episode = episode
        self.last_action = 0
        self.step_alphas = []

    def end_episode(self, total_reward: float) -> None:
        pass

    def act(self, s: int) -> int:
        self.step_alphas.append(self.current_alpha(s))
        if self.action_rng.random() < self.cfg.epsilon_greedy:
            return int(self.action_rng.integers(self.num_actions))
        return self.greedy(s)

    def act_eval(self, s: int, rng: np.random.Generator, prev_action: int = 0) -> int:
        """Greedy action without touching any training state."""
        return self.greedy(s, evaluate=True, rng=rng, prev_action=prev_action)

    def learn(self, tr: Transition) -> None:
        cfg = self.cfg
        before = self.before_update(tr)
        ensemble_update(self.model, tr, cfg.gamma, cfg.lr, self.beta, cfg.kappa, self.mask_rng,
                        cfg.distortion_samples, self.mc_rng)
        if self.replay is not None:
            self.replay.push(tr)
            ensemble_update_columns(self.model, self.replay.sample_columns(cfg.batch_size, self.mc_rng),
                                    cfg.gamma, cfg.lr, self.beta, cfg.kappa, self.mask_rng,
                                    cfg.distortion_samples, self.mc_rng)
        self.after_update(tr, before)
        self.last_action = tr.a
        self.last_pair = (tr.s, tr.a)

    def before_update(self, tr: Transition):
        return None

    def after_update(self, tr: Transition, before) -> None:
        pass

    def step(self, env, s: int) -> tuple[int, float, bool]:
        """Select, act in ``env``, learn from the transition."""
        a = self.act(s)
        s_next, r, done = env.step(a)
        self.learn(Transition(s, a, r, s_next, done and not env.truncated))
        return s_next, r, done

    # diagnostics -------------------------------------------------------------
    def epistemic(self, s: int, a: int, rng=None) -> EmpiricalDistribution:
        """Loss-oriented epistemic distribution: negated per-head Q-values."""
        return epistemic_dist(-ensemble_q(self.model, s, a, identity_beta,
                                          self.cfg.distortion_samples, rng or self.mc_rng))

    def last_ltv(self) -> float:
        if self.last_pair is None:
            return 0.0
        return ltv(self.snapshot(*self.last_pair))

    def snapshot(self, s: int, a: int) -> EmpiricalDistribution:
        return epistemic_dist(-ensemble_q(self.model, s, a, identity_beta))

    def state_digest(self) -> str:
        rngs = [g.bit_generator.state for g in
                (self.action_rng, self.mask_rng, self.select_rng, self.mc_rng, self.arm_rng)]
        return _digest(self.model.atoms, self.episode, self.last_action, rngs, *self._extra_state())

    def _extra_state(self) -> list:
        return []


class OraAgent(Agent):
    """Risk adaptation over epistemic uncertainty (FTPL, recursive, or frozen at 1 for the composite ablation)."""

    def __init__(self, cfg: AgentConfig, num_states: int, num_actions: int, seed: int,
                 total_periods: int = 10_000, selector: Optional[Callable] = None):
        super().__init__(cfg, num_states, num_actions, seed, total_periods)
        self.spec = RiskMeasureSpec(cfg.risk_family, cfg.alpha_min, cfg.alpha_max)
        self.store = EpistemicStore(num_states, num_actions)
        eps = cfg.grid_epsilon or default_grid_epsilon(self.total_periods, cfg.alpha_min, cfg.alpha_max)
        self.grid: RiskGrid = build_grid(cfg.alpha_min, cfg.alpha_max, eps)
        self.eta = cfg.eta_ftpl or 1.0 / math.sqrt(self.total_periods)
        start = 1.0 if cfg.adaptation is Adaptation.COMPOSITE else cfg.alpha_max
        self.alpha = np.full((num_states, num_actions), start)
        self.cumulative = np.zeros((num_states, num_actions, len(self.grid)))
        self.visits = np.zeros((num_states, num_actions), dtype=np.int64)
        if selector is not None:
            self.selector = selector
        else:
            self.selector = {
                Adaptation.FTPL: OraAgent._ftpl,
                Adaptation.RECURSIVE: OraAgent._recursive,
                Adaptation.COMPOSITE: None,
            }[cfg.adaptation]

    def current_alpha(self, s: int) -> float:
        return float(self.alpha[s, self.last_action])

    def _snapshots(self, s: int, evaluate: bool, rng=None) -> list[EmpiricalDistribution]:
        if evaluate:
            return [self.store.peek(s, a, lambda a=a: self.epistemic(s, a, rng)) for a in range(self.num_actions)]
        return [self.store.get(s, a, lambda a=a: self.epistemic(s, a)) for a in range(self.num_actions)]

    def eval_alpha(self, s: int, prev_action: int) -> float:
        return float(self.alpha[s, prev_action])

    def greedy(self, s: int, evaluate: bool = False, rng=None, prev_action: Optional[int] = None) -> int:
        alpha = self.current_alpha(s) if prev_action is None else self.eval_alpha(s, prev_action)
        risks = [risk_value(self.spec, x, alpha) for x in self._snapshots(s, evaluate, rng)]
        return int(np.argmin(risks))

    def before_update(self, tr: Transition):
        return self.store.get(tr.s, tr.a, lambda: self.epistemic(tr.s, tr.a))

    def after_update(self, tr: Transition, x_prev: EmpiricalDistribution) -> None:
        y = self.epistemic(tr.s, tr.a)
        store_update(self.store, (tr.s, tr.a), y)
        if self.selector is not None:
            self.alpha[tr.s, tr.a] = self.selector(self, tr.s, tr.a, x_prev, y)

    @staticmethod
    def _ftpl(agent: "OraAgent", s: int, a: int, x_prev, y) -> float:
        agent.cumulative[s, a] += loss_curve(agent.spec, agent.grid.points, x_prev, y)
        agent.visits[s, a] += 1
        tracker = LossTracker(agent.grid, agent.cumulative[s, a], int(agent.visits[s, a]))
        return ftpl_select(tracker, agent.grid, agent.eta, agent.select_rng)

    @staticmethod
    def _recursive(agent: "OraAgent", s: int, a: int, x_prev, y) -> float:
        agent.visits[s, a] += 1
        return recursive_select(agent.spec, x_prev, y, float(agent.alpha[s, a]), agent.grid)

    def snapshot(self, s: int, a: int) -> EmpiricalDistribution:
        return self.store.peek(s, a, lambda: Agent.snapshot(self, s, a))

    def tracker(self, s: int, a: int) -> LossTracker:
        return LossTracker(self.grid, self.cumulative[s, a].copy(), int(self.visits[s, a]))

    def _extra_state(self) -> list:
        snaps = [(k, v.atoms.tobytes()) for k, v in self.store.items()]
        return [self.alpha, self.cumulative, self.visits, snaps]


class FixedAgent(Agent):
    """Single-head quantile learner acting greedily on the left-tail CVaR ``beta(q) = alpha q``
    of its return distribution; ``alpha`` is fixed or follows a per-episode schedule."""

    def __init__(self, cfg: AgentConfig, num_states: int, num_actions: int, seed: int,
                 total_periods: int = 10_000):
        super().__init__(cfg, num_states, num_actions, seed, total_periods, heads=1, p_mask=1.0)
        if not 0.0 < cfg.alpha_fixed <= 1.0:
            raise ValueError(f"alpha_fixed must be in (0, 1], got {cfg.alpha_fixed}")
        self._alpha = self._alpha_for(0)
        self._beta = cvar_beta(self._alpha)

    def _alpha_for(self, episode: int) -> float:
        if self.cfg.adaptation is Adaptation.SCHEDULED:
            return scheduled_alpha(episode, self.cfg.waypoints)
        return self.cfg.alpha_fixed

    def start_episode(self, episode: int) -> None:
        super().start_episode(episode)
        self._alpha = self._alpha_for(episode)
        self._beta = cvar_beta(self._alpha)

    @property
    def beta(self):
        return self._beta

    def current_alpha(self, s: int) -> float:
        return self._alpha

    def greedy(self, s: int, evaluate: bool = False, rng=None, prev_action: Optional[int] = None) -> int:
        idx = distortion_indices(self._beta, self.model.n, self.cfg.distortion_samples,
                                 rng if evaluate else self.mc_rng)
        q = self.model.atoms[0, s][:, idx].mean(axis=-1)
        return int(np.argmax(q))


class EwafAgent(FixedAgent):
    """Bandit over a finite set of CVaR levels for the return distribution.

    ART feeds back the change in right-truncated variance every step; TOP feeds
    back the change in episodic return once per episode.
    """

    def __init__(self, cfg: AgentConfig, num_states: int, num_actions: int, seed: int,
                 total_periods: int = 10_000):
        super().__init__(cfg, num_states, num_actions, seed, total_periods)
        default = (0.1, 1.0) if cfg.adaptation is Adaptation.ART else (0.1, 0.25, 0.5, 0.75, 1.0)
        self.belief = EwafBelief.uniform(tuple(cfg.arms or default))
        self.arm = self.belief.sample(self.arm_rng)
        self._set_arm(self.arm)
        self.prev_rtv: Optional[float] = None
        self.prev_return: Optional[float] = None

    def _set_arm(self, arm: int) -> None:
        self.arm = arm
        self._alpha = float(self.belief.arms[arm])
        self._beta = cvar_beta(self._alpha)

    def start_episode(self, episode: int) -> None:
        Agent.start_episode(self, episode)

    def after_update(self, tr: Transition, before) -> None:
        if self.cfg.adaptation is not Adaptation.ART:
            return
        value = rtv(make_empirical(self.model.atoms[0, tr.s, tr.a]))
        g = 0.0 if self.prev_rtv is None else value - self.prev_rtv
        self.prev_rtv = value
        self.belief = ewaf_update(self.belief, self.arm, g, self.cfg.ewaf_eta)
        self._set_arm(self.belief.sample(self.arm_rng))

    def end_episode(self, total_reward: float) -> None:
        if self.cfg.adaptation is not Adaptation.TOP:
            return
        g = 0.0 if self.prev_return is None else total_reward - self.prev_return
        self.prev_return = total_reward
        self.belief = ewaf_update(self.belief, self.arm, g, self.cfg.ewaf_eta)
        self._set_arm(self.belief.sample(self.arm_rng))

    def eval_alpha(self, s: int, prev_action: int) -> float:
        # frozen belief: play its most probable arm
        return float(self.belief.arms[int(np.argmax(self.belief.probabilities()))])

    def greedy(self, s: int, evaluate: bool = False, rng=None, prev_action: Optional[int] = None) -> int:
        if not evaluate:
            return super().greedy(s)
        beta = cvar_beta(self.eval_alpha(s, 0))
        idx = distortion_indices(beta, self.model.n, self.cfg.distortion_samples, rng)
        return int(np.argmax(self.model.atoms[0, s][:, idx].mean(axis=-1)))

    def _extra_state(self) -> list:
        return [self.belief.weights, self.arm, self.prev_rtv, self.prev_return]


def make_agent(cfg: AgentConfig, num_states: int, num_actions: int, seed: int,
               total_periods: int = 10_000) -> Agent:
    if cfg.adaptation in ORA_KINDS:
        return OraAgent(cfg, num_states, num_actions, seed, total_periods)
    if cfg.adaptation in (Adaptation.ART, Adaptation.TOP):
        return EwafAgent(cfg, num_states, num_actions, seed, total_periods)
    return FixedAgent(cfg, num_states, num_actions, seed, total_periods)
