"""Tabular quantile learners, K-head ensembles and the epistemic snapshot store.

Each head keeps ``N`` quantile atoms per state-action pair at the fixed
fractions ``(2i-1)/(2N)`` and is trained with the pairwise quantile Huber loss.
The heads of an ensemble live in one ``(K, S, A, N)`` array so that a
transition updates all selected heads in a single vectorised step.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .risk import EmpiricalDistribution, make_empirical

Beta = Callable[[np.ndarray], np.ndarray]


def identity_beta(q: np.ndarray) -> np.ndarray:
    return q


def cvar_beta(alpha: float) -> Beta:
    """Left-tail CVaR distortion ``beta(q) = alpha * q`` of the return distribution."""
    if alpha == 1.0:
        return identity_beta

    def beta(q):
        return alpha * q

    return beta


@dataclass(frozen=True)
class Transition:
    s: int
    a: int
    r: float
    s_next: int
    done: bool


@lru_cache(maxsize=None)
def quantile_fractions(n: int) -> np.ndarray:
    """Fixed fractions ``(2i-1)/(2n)``; the cached array is read-only."""
    if n < 1:
        raise ValueError("need at least one quantile")
    q = (2.0 * np.arange(1, n + 1) - 1.0) / (2.0 * n)
    q.flags.writeable = False
    return q


def fraction_index(levels: np.ndarray, n: int) -> np.ndarray:
    """Index of the nearest fixed fraction; ties resolve upward."""
    return np.minimum(np.maximum(np.floor(np.asarray(levels) * n).astype(int), 0), n - 1)


def distortion_indices(beta: Beta, n: int, m: Optional[int] = None,
                       rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Atom indices for ``Z_beta(q)``: all fixed fractions in exact mode, ``m`` uniform draws otherwise."""
    if m is None or rng is None:
        q = quantile_fractions(n)
    else:
        q = rng.random(m)
    return fraction_index(beta(q), n)


def huber_quantile_loss(delta, q, kappa: float):
    """Quantile Huber loss ``|q - 1{delta<0}| L_kappa(delta) / kappa`` and its derivative in ``delta``."""
    delta = np.asarray(delta, dtype=float)
    absd = np.abs(delta)
    inner = absd <= kappa
    huber = np.where(inner, 0.5 * delta ** 2, kappa * (absd - 0.5 * kappa))
    dhuber = np.where(inner, delta, kappa * np.sign(delta))
    weight = np.abs(q - (delta < 0.0))
    loss = weight * huber / kappa
    grad = weight * dhuber / kappa
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


def _huber_grad_mean(delta: np.ndarray, q: np.ndarray, kappa: float, overwrite: bool = False) -> np.ndarray:
    """Mean over the last axis of the ``delta``-derivative of :func:`huber_quantile_loss`.

    The weight is ``q`` where ``delta >= 0`` and ``1 - q`` elsewhere, and the clipped
    ``delta`` carries the sign, so the sum splits into ``q sum(c) + (1 - 2q) sum(min(c, 0))``.
    ``overwrite`` lets the clip reuse ``delta``'s buffer.
    """
    c = np.maximum(delta, -kappa, out=delta if overwrite else None)
    np.minimum(c, kappa, out=c)
    # einsum sums a short trailing axis much faster than add.reduce
    total = np.einsum("...j->...", c)
    negative = np.einsum("...j->...", np.minimum(c, 0.0, out=c))
    q = q[..., 0]
    return (q * total + (1.0 - 2.0 * q) * negative) / (delta.shape[-1] * kappa)


class QuantileTable:
    """Quantile atoms ``values[s, a, i]`` of one head. Wraps (does not copy) the given array."""

    def __init__(self, values: np.ndarray):
        self.values = values

    @classmethod
    def zeros(cls, num_states: int, num_actions: int, n: int) -> "QuantileTable":
        return cls(np.zeros((num_states, num_actions, n)))

    @property
    def num_states(self) -> int:
        return self.values.shape[0]

    @property
    def num_actions(self) -> int:
        return self.values.shape[1]

    @property
    def n(self) -> int:
        return self.values.shape[2]


def distorted_q(table: QuantileTable, s: int, a: int, beta: Beta = identity_beta,
                m: Optional[int] = None, rng: Optional[np.random.Generator] = None) -> float:
    """``E_q[Z_beta(q)(s, a)]`` from ``m`` uniform draws, or over every fixed fraction in exact mode."""
    idx = distortion_indices(beta, table.n, m, rng)
    return float(table.values[s, a, idx].mean())


def _td_step(atoms: np.ndarray, heads: np.ndarray, tr: Transition, gamma: float, lr: float,
             target_idx: np.ndarray, kappa: float) -> None:
    """In-place pairwise quantile Huber step for the selected heads of ``atoms[K, S, A, N]``."""
    n = atoms.shape[-1]
    z = atoms[heads, tr.s, tr.a]                                  # (h, N)
    if tr.done:
        target = np.full_like(z, tr.r)
    else:
        nxt = atoms[heads, tr.s_next]                             # (h, A, N)
        q_next = nxt[:, :, target_idx].mean(axis=-1)              # (h, A)
        best = np.argmax(q_next, axis=1)
        target = tr.r + gamma * nxt[np.arange(nxt.shape[0]), best]
    delta = target[:, None, :] - z[:, :, None]                    # (h, N_i, N_j)
    grad = _huber_grad_mean(delta, quantile_fractions(n)[None, :, None], kappa, overwrite=True)
    atoms[heads, tr.s, tr.a] = z + lr * grad


def td_update(head: QuantileTable, tr: Transition, gamma: float, lr: float,
              beta: Beta = identity_beta, kappa: float = 1.0,
              m: Optional[int] = None, rng: Optional[np.random.Generator] = None) -> QuantileTable:
    """One gradient step of ``Z(s, a)`` toward ``r + gamma Z(s', pi_beta(s'))`` (in place)."""
    if lr == 0.0:
        return head
    atoms = head.values[None]
    _td_step(atoms, np.array([0]), tr, gamma, lr, distortion_indices(beta, head.n, m, rng), kappa)
    return head


class EnsembleModel:
    """``K`` quantile tables initialised independently; heads never read each other."""

    def __init__(self, atoms: np.ndarray, p_mask: float = 0.5):
        if not 0.0 < p_mask <= 1.0:
            raise ValueError(f"p_mask must be in (0, 1], got {p_mask}")
        self.atoms = atoms
        self.p_mask = p_mask

    @classmethod
    def random(cls, k: int, num_states: int, num_actions: int, n: int, rng: np.random.Generator,
               init_low: float = 0.0, init_high: float = 1.0, p_mask: float = 0.5) -> "EnsembleModel":
        atoms = rng.uniform(init_low, init_high, size=(k, num_states, num_actions, n))
        return cls(atoms, p_mask)

    @property
    def k(self) -> int:
        return self.atoms.shape[0]

    @property
    def n(self) -> int:
        return self.atoms.shape[-1]

    def head(self, k: int) -> QuantileTable:
        return QuantileTable(self.atoms[k])


def ensemble_update(model: EnsembleModel, tr: Transition, gamma: float, lr: float,
                    beta: Beta, kappa: float, rng: np.random.Generator,
                    m: Optional[int] = None, mc_rng: Optional[np.random.Generator] = None) -> EnsembleModel:
    """Update each head with probability ``p_mask`` (one Bernoulli draw per head)."""
    mask = rng.random(model.k) < model.p_mask
    heads = np.flatnonzero(mask)
    if heads.size and lr != 0.0:
        target_idx = distortion_indices(beta, model.n, m, mc_rng)
        _td_step(model.atoms, heads, tr, gamma, lr, target_idx, kappa)
    return model


def _td_batch(atoms: np.ndarray, heads: np.ndarray, s: np.ndarray, a: np.ndarray, r: np.ndarray,
              s_next: np.ndarray, done: np.ndarray, gamma: float, lr: float, target_idx: np.ndarray,
              kappa: float) -> None:
    """Minibatch step: every (head, transition) pair is computed from the same table, steps are summed."""
    n = atoms.shape[-1]
    z = atoms[heads, s, a]                                        # (P, N)
    nxt = atoms[heads, s_next]                                    # (P, A, N)
    best = np.argmax(nxt[:, :, target_idx].mean(axis=-1), axis=1)
    boot = nxt[np.arange(nxt.shape[0]), best]
    target = r[:, None] + np.where(done[:, None], 0.0, gamma * boot)
    delta = target[:, None, :] - z[:, :, None]
    grad = _huber_grad_mean(delta, quantile_fractions(n)[None, :, None], kappa, overwrite=True)
    np.add.at(atoms, (heads, s, a), lr * grad)


def ensemble_update_batch(model: EnsembleModel, batch: Sequence[Transition], gamma: float, lr: float,
                          beta: Beta, kappa: float, rng: np.random.Generator,
                          m: Optional[int] = None, mc_rng: Optional[np.random.Generator] = None) -> EnsembleModel:
    """Replay minibatch version of :func:`ensemble_update`: one mask draw per head per transition."""
    if not batch:
        return model
    cols = tuple(np.array(c) for c in zip(*((tr.s, tr.a, tr.r, tr.s_next, tr.done) for tr in batch)))
    return ensemble_update_columns(model, cols, gamma, lr, beta, kappa, rng, m, mc_rng)


def ensemble_update_columns(model: EnsembleModel, cols: tuple[np.ndarray, ...], gamma: float, lr: float,
                            beta: Beta, kappa: float, rng: np.random.Generator,
                            m: Optional[int] = None, mc_rng: Optional[np.random.Generator] = None) -> EnsembleModel:
    """:func:`ensemble_update_batch` on ``(s, a, r, s_next, done)`` column arrays."""
    s, a, r, s_next, done = cols
    if s.shape[0] == 0:
        return model
    mask = rng.random((s.shape[0], model.k)) < model.p_mask
    rows, heads = np.nonzero(mask)
    if rows.size and lr != 0.0:
        target_idx = distortion_indices(beta, model.n, m, mc_rng)
        _td_batch(model.atoms, heads, s[rows], a[rows], r[rows].astype(float), s_next[rows],
                  done[rows].astype(bool), gamma, lr, target_idx, kappa)
    return model


def ensemble_q(model: EnsembleModel, s: int, a: int, beta: Beta = identity_beta,
               m: Optional[int] = None, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Per-head distorted Q-values at ``(s, a)``."""
    idx = distortion_indices(beta, model.n, m, rng)
    return model.atoms[:, s, a, idx].mean(axis=-1)


def epistemic_dist(q_values) -> EmpiricalDistribution:
    return make_empirical(q_values)


class EpistemicStore:
    """Per-pair snapshots ``X(s, a)`` of the epistemic distribution.

    A pair's snapshot is created on first query (``init`` supplies it) and
    afterwards changes only through :func:`store_update` on that pair.
    """

    def __init__(self, num_states: int, num_actions: int):
        self.num_states = num_states
        self.num_actions = num_actions
        self._snap: dict[tuple[int, int], EmpiricalDistribution] = {}

    def initialized(self, s: int, a: int) -> bool:
        return (s, a) in self._snap

    def get(self, s: int, a: int, init: Callable[[], EmpiricalDistribution]) -> EmpiricalDistribution:
        key = (s, a)
        dist = self._snap.get(key)
        if dist is None:
            dist = init()
            self._snap[key] = dist
        return dist

    def peek(self, s: int, a: int, init: Callable[[], EmpiricalDistribution]) -> EmpiricalDistribution:
        """Like :meth:`get` but never writes."""
        dist = self._snap.get((s, a))
        return init() if dist is None else dist

    def items(self):
        return sorted(self._snap.items())

    def __len__(self) -> int:
        return len(self._snap)


def store_update(store: EpistemicStore, pair: tuple[int, int], y: EmpiricalDistribution) -> EpistemicStore:
    s, a = pair
    if not (0 <= s < store.num_states and 0 <= a < store.num_actions):
        raise IndexError(f"pair {pair} out of range")
    store._snap[(s, a)] = y
    return store


class ReplayBuffer:
    """Uniform ring buffer of transitions, stored column-wise."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._s = np.zeros(capacity, dtype=np.int64)
        self._a = np.zeros(capacity, dtype=np.int64)
        self._r = np.zeros(capacity)
        self._s_next = np.zeros(capacity, dtype=np.int64)
        self._done = np.zeros(capacity, dtype=bool)
        self._size = 0
        self._pos = 0

    def push(self, tr: Transition) -> None:
        i = self._pos
        self._s[i], self._a[i], self._r[i], self._s_next[i], self._done[i] = tr.s, tr.a, tr.r, tr.s_next, tr.done
        self._size = min(self._size + 1, self.capacity)
        self._pos = (self._pos + 1) % self.capacity

    def sample_columns(self, batch: int, rng: np.random.Generator) -> tuple[np.ndarray, ...]:
        """``(s, a, r, s_next, done)`` arrays for ``batch`` uniform draws with replacement."""
        idx = rng.integers(0, self._size, size=min(batch, self._size))
        return self._s[idx], self._a[idx], self._r[idx], self._s_next[idx], self._done[idx]

    def sample(self, batch: int, rng: np.random.Generator) -> list[Transition]:
        cols = self.sample_columns(batch, rng)
        return [Transition(int(s), int(a), float(r), int(s2), bool(d)) for s, a, r, s2, d in zip(*cols)]

    def __len__(self) -> int:
        return self._size
