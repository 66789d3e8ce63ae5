"""Generative-model facade: sampling-only access to a game's transitions.

Solvers in the learning setting receive only this object. They can read the
game's shape (owners, action counts, rewards, discount) but never the
transition probabilities; the only access to the transition law is drawing
next-state samples. Every state-action pair owns a deterministic substream
derived from the master seed, so runs are reproducible and pairs can be
sampled concurrently without changing any result.

Batch estimates are computed from the multinomial next-state counts of the
batch, which is distributed exactly as averaging the same number of
independent single draws but costs O(support) instead of O(batch).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .game import ActionSpace, StochasticGame, mirror


@dataclass(frozen=True)
class BatchEstimate:
    """Per-pair empirical means (and optionally variances) from one batch."""

    mean: np.ndarray              # (n_pairs,)
    variance: np.ndarray | None   # (n_pairs,) or None for plain-mean batches
    batch_size: int


class GenerativeModel:
    """Sampling oracle over a fixed game with per-pair seeded substreams."""

    def __init__(self, game: StochasticGame, master_seed: int, _salt: int = 0):
        if not isinstance(master_seed, (int, np.integer)):
            raise TypeError("master_seed must be an integer")
        self._game = game
        self._layout = game.layout
        self.master_seed = int(master_seed)
        self._salt = int(_salt)
        n_pairs = self._layout.space.n_pairs
        self._rngs: list[np.random.Generator | None] = [None] * n_pairs
        self._draws = np.zeros(n_pairs, dtype=np.int64)

    # -- public structure (no transition data) ---------------------------

    @property
    def space(self) -> ActionSpace:
        return self._layout.space

    @property
    def gamma(self) -> float:
        return self._game.gamma

    @property
    def n_states(self) -> int:
        return self.space.n_states

    @property
    def n_pairs(self) -> int:
        return self.space.n_pairs

    @property
    def rewards(self) -> np.ndarray:
        return self.space.rewards

    def mirrored(self) -> "GenerativeModel":
        """Facade over the role-swapped game, with its own counters/streams."""
        return GenerativeModel(mirror(self._game), self.master_seed,
                               _salt=self._salt + 1)

    # -- sampling ---------------------------------------------------------

    def _rng(self, pair: int) -> np.random.Generator:
        rng = self._rngs[pair]
        if rng is None:
            ss = np.random.SeedSequence(entropy=self.master_seed,
                                        spawn_key=(self._salt, pair))
            rng = np.random.Generator(np.random.PCG64(ss))
            self._rngs[pair] = rng
        return rng

    def _row(self, pair: int) -> tuple[np.ndarray, np.ndarray] | None:
        """Support and probabilities of the row, or None when uniform."""
        if self._layout.uniform_mask[pair]:
            return None
        trans = self._layout.trans
        lo, hi = trans.indptr[pair], trans.indptr[pair + 1]
        return trans.indices[lo:hi], trans.data[lo:hi]

    def _valid_pair(self, state: int, action: int) -> int:
        space = self.space
        if not (0 <= state < space.n_states):
            raise ValueError(f"invalid state {state}")
        if not (0 <= action < space.n_actions[state]):
            raise ValueError(f"invalid action {action} at state {state}")
        return space.pair_index(state, action)

    def sample_transition(self, state: int, action: int) -> int:
        """One next-state draw from P(. | state, action)."""
        pair = self._valid_pair(state, action)
        rng = self._rng(pair)
        self._draws[pair] += 1
        row = self._row(pair)
        if row is None:
            return int(rng.integers(self.n_states))
        support, probs = row
        u = rng.random()
        return int(support[np.searchsorted(np.cumsum(probs), u * probs.sum())])

    def _batch_counts(self, pair: int, m: int) -> tuple[np.ndarray, np.ndarray | None]:
        """Multinomial next-state counts of an m-sample batch on one pair.

        Returns (counts, support); support None means all states.
        """
        rng = self._rng(pair)
        self._draws[pair] += m
        row = self._row(pair)
        if row is None:
            n = self.n_states
            return rng.multinomial(m, np.full(n, 1.0 / n)), None
        support, probs = row
        return rng.multinomial(m, probs / probs.sum()), support

    def estimate_mean_and_var(self, v: np.ndarray, m: int) -> BatchEstimate:
        """Empirical mean and variance of v(s') per pair from m fresh draws."""
        if m < 1:
            raise ValueError("batch size must be >= 1")
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.n_states,):
            raise ValueError(f"value vector shape {v.shape} != ({self.n_states},)")
        mean = np.empty(self.n_pairs)
        var = np.empty(self.n_pairs)
        v2 = v * v
        for pair in range(self.n_pairs):
            counts, support = self._batch_counts(pair, m)
            if support is None:
                m1 = counts @ v / m
                m2 = counts @ v2 / m
            else:
                m1 = counts @ v[support] / m
                m2 = counts @ v2[support] / m
            mean[pair] = m1
            var[pair] = max(m2 - m1 * m1, 0.0)
        return BatchEstimate(mean=mean, variance=var, batch_size=m)

    def estimate_diff_mean(self, v: np.ndarray, v0: np.ndarray, m: int) -> BatchEstimate:
        """Empirical mean of v(s') - v0(s') per pair from m fresh draws."""
        if m < 1:
            raise ValueError("batch size must be >= 1")
        v = np.asarray(v, dtype=np.float64)
        v0 = np.asarray(v0, dtype=np.float64)
        if v.shape != v0.shape or v.shape != (self.n_states,):
            raise ValueError("v and v0 must both have one entry per state")
        d = v - v0
        mean = np.empty(self.n_pairs)
        for pair in range(self.n_pairs):
            counts, support = self._batch_counts(pair, m)
            mean[pair] = (counts @ d / m) if support is None else (counts @ d[support] / m)
        return BatchEstimate(mean=mean, variance=None, batch_size=m)

    # -- accounting --------------------------------------------------------

    def sample_count(self) -> tuple[int, np.ndarray]:
        """Total draws and the per-pair draw table (a copy)."""
        return int(self._draws.sum()), self._draws.copy()
