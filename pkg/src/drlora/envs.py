"""Deterministic tabular environments and their exact oracles."""

from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np


class Env:
    """Minimal episodic interface: ``reset() -> s`` and ``step(a) -> (s, r, done)``.

    ``truncated`` is set when an episode ends on a step limit rather than a
    terminal state; ``success`` and ``collisions`` describe the last episode.
    """

    num_states: int
    num_actions: int

    def __init__(self):
        self._done = True
        self.truncated = False
        self.success = False
        self.collisions = 0

    def reset(self) -> int:
        self._done = False
        self.truncated = False
        self.success = False
        self.collisions = 0
        return self._reset()

    def step(self, action: int) -> tuple[int, float, bool]:
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        if not 0 <= action < self.num_actions:
            raise ValueError(f"action {action} out of range")
        s, r, done = self._step(action)
        self._done = done
        return s, r, done

    def _reset(self) -> int:
        raise NotImplementedError

    def _step(self, action: int) -> tuple[int, float, bool]:
        raise NotImplementedError


# --------------------------------------------------------------------------- knapsack

REJECT, ACCEPT = 0, 1


@dataclass(frozen=True)
class KnapsackInstance:
    items: tuple[tuple[int, float], ...]
    capacity: int
    seed: Optional[int] = None

    def __post_init__(self):
        if not self.items:
            raise ValueError("knapsack needs at least one item")
        if self.capacity < 0:
            raise ValueError("capacity must be nonnegative")
        for w, v in self.items:
            if int(w) != w or w <= 0 or v <= 0:
                raise ValueError(f"item ({w}, {v}) needs a positive integer weight and positive value")

    @classmethod
    def random(cls, num_items: int, seed: int, weight_range=(1, 10), value_range=(1, 10),
               capacity_fraction: float = 0.4) -> "KnapsackInstance":
        rng = np.random.default_rng(seed)
        w = rng.integers(weight_range[0], weight_range[1] + 1, size=num_items)
        v = rng.integers(value_range[0], value_range[1] + 1, size=num_items)
        cap = max(1, int(capacity_fraction * int(w.sum())))
        return cls(tuple((int(a), int(b)) for a, b in zip(w, v)), cap, seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["items"] = [list(it) for it in self.items]
        return d


def dp_knapsack(instance: KnapsackInstance):
    """0/1 knapsack optimum by the standard value table over capacities."""
    best = [0] * (instance.capacity + 1)
    for w, v in instance.items:
        for c in range(instance.capacity, w - 1, -1):
            cand = best[c - w] + v
            if cand > best[c]:
                best[c] = cand
    return best[instance.capacity]


class KnapsackEnv(Env):
    """Items arrive in a fixed order; the agent rejects (0) or accepts (1) each one.

    State id encodes ``(item index, remaining capacity)``. Accepting an item
    that does not fit ends the episode with no reward; the episode also ends
    when the knapsack is exactly full or after the last item.
    """

    num_actions = 2

    def __init__(self, instance: KnapsackInstance):
        super().__init__()
        self.instance = instance
        self.num_items = len(instance.items)
        self.num_states = (self.num_items + 1) * (instance.capacity + 1)
        self.item = 0
        self.remaining = instance.capacity

    def encode(self, item: int, remaining: int) -> int:
        return item * (self.instance.capacity + 1) + remaining

    def _reset(self) -> int:
        self.item = 0
        self.remaining = self.instance.capacity
        return self.encode(self.item, self.remaining)

    def _step(self, action):
        w, v = self.instance.items[self.item]
        reward = 0.0
        done = False
        if action == ACCEPT:
            if w <= self.remaining:
                self.remaining -= w
                reward = float(v)
            else:
                self.collisions += 1
                done = True
        self.item += 1
        if self.item >= self.num_items or self.remaining == 0:
            done = True
        if done:
            self.success = self.collisions == 0
        return self.encode(self.item, self.remaining), reward, done


def knapsack_env(instance: KnapsackInstance) -> KnapsackEnv:
    return KnapsackEnv(instance)


# --------------------------------------------------------------------------- grid navigation

MOVES = ((0, 1), (1, 0), (0, -1), (-1, 0))  # up, right, down, left as (dx, dy)


@dataclass(frozen=True)
class GridNavInstance:
    width: int
    height: int
    obstacles: tuple[tuple[int, int], ...]
    start: tuple[int, int]
    goal: tuple[int, int]
    step_penalty: float = 1.0
    collision_penalty: float = 5.0
    goal_bonus: float = 100.0
    max_steps: int = 200
    seed: Optional[int] = None

    def __post_init__(self):
        if self.start == self.goal:
            raise ValueError("start and goal must differ")
        if self.start in self.obstacles or self.goal in self.obstacles:
            raise ValueError("obstacles must exclude start and goal")
        if shortest_path_length(self) is None:
            raise ValueError("goal is unreachable from start")

    @classmethod
    def random(cls, width: int, height: int, num_obstacles: int, seed: int,
               start=None, goal=None, **rewards) -> "GridNavInstance":
        """Scatter obstacles uniformly, redrawing until the goal is reachable."""
        start = tuple(start) if start is not None else (0, 0)
        goal = tuple(goal) if goal is not None else (width - 1, height - 1)
        free = [(x, y) for y in range(height) for x in range(width) if (x, y) not in (start, goal)]
        if num_obstacles > len(free):
            raise ValueError("too many obstacles for the grid")
        rng = np.random.default_rng(seed)
        for _ in range(10_000):
            pick = rng.choice(len(free), size=num_obstacles, replace=False)
            obstacles = tuple(sorted(free[i] for i in pick))
            if _bfs(width, height, set(obstacles), start, goal) is not None:
                return cls(width, height, obstacles, start, goal, seed=seed, **rewards)
        raise RuntimeError("could not generate a connected grid")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["obstacles"] = [list(o) for o in self.obstacles]
        d["start"], d["goal"] = list(self.start), list(self.goal)
        return d


def _bfs(width, height, blocked, start, goal) -> Optional[int]:
    seen = {start}
    frontier = deque([(start, 0)])
    while frontier:
        (x, y), d = frontier.popleft()
        if (x, y) == goal:
            return d
        for dx, dy in MOVES:
            nxt = (x + dx, y + dy)
            if 0 <= nxt[0] < width and 0 <= nxt[1] < height and nxt not in blocked and nxt not in seen:
                seen.add(nxt)
                frontier.append((nxt, d + 1))
    return None


def shortest_path_length(instance: GridNavInstance) -> Optional[int]:
    return _bfs(instance.width, instance.height, set(instance.obstacles), instance.start, instance.goal)


class GridNavEnv(Env):
    """Four-connected grid. Bumping into an obstacle or the border costs the collision
    penalty and leaves the position unchanged; every step costs the step penalty."""

    num_actions = 4

    def __init__(self, instance: GridNavInstance):
        super().__init__()
        self.instance = instance
        self.num_states = instance.width * instance.height
        self._blocked = set(instance.obstacles)
        self.pos = instance.start
        self.t = 0

    def encode(self, pos) -> int:
        return pos[1] * self.instance.width + pos[0]

    def _reset(self) -> int:
        self.pos = self.instance.start
        self.t = 0
        return self.encode(self.pos)

    def _step(self, action):
        inst = self.instance
        dx, dy = MOVES[action]
        nxt = (self.pos[0] + dx, self.pos[1] + dy)
        reward = -inst.step_penalty
        if 0 <= nxt[0] < inst.width and 0 <= nxt[1] < inst.height and nxt not in self._blocked:
            self.pos = nxt
        else:
            reward -= inst.collision_penalty
            self.collisions += 1
        self.t += 1
        done = False
        if self.pos == inst.goal:
            reward += inst.goal_bonus
            self.success = True
            done = True
        elif self.t >= inst.max_steps:
            self.truncated = True
            done = True
        return self.encode(self.pos), reward, done


def gridnav_env(instance: GridNavInstance) -> GridNavEnv:
    return GridNavEnv(instance)


# --------------------------------------------------------------------------- chain


@dataclass(frozen=True)
class ChainInstance:
    length: int = 5
    reward: float = 1.0
    max_steps: int = 50

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("chain length must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)


class ChainEnv(Env):
    """Action 0 moves right, action 1 moves left (floored at 0).

    Moving right from the last cell pays ``reward`` and ends the episode, so the
    best discounted return is ``reward * gamma**(length - 1)``.
    """

    num_actions = 2

    def __init__(self, instance: ChainInstance = ChainInstance()):
        super().__init__()
        self.instance = instance
        self.num_states = instance.length
        self.pos = 0
        self.t = 0

    def _reset(self) -> int:
        self.pos = 0
        self.t = 0
        return 0

    def _step(self, action):
        self.t += 1
        if action == 0:
            if self.pos == self.instance.length - 1:
                self.success = True
                return self.pos, float(self.instance.reward), True
            self.pos += 1
        else:
            self.pos = max(self.pos - 1, 0)
        if self.t >= self.instance.max_steps:
            self.truncated = True
            return self.pos, 0.0, True
        return self.pos, 0.0, False


def chain_env(length: int, reward: float = 1.0, max_steps: int = 50) -> ChainEnv:
    return ChainEnv(ChainInstance(length, reward, max_steps))


def chain_optimal_return(length: int, reward: float, gamma: float) -> float:
    return reward * gamma ** (length - 1)
