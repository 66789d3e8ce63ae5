"""Data model for discounted turn-based two-player zero-sum stochastic games.

A game is a set of states, each owned by the MIN or the MAX player, with one
or more actions per state. An action carries a reward and a sparse transition
row. Games are immutable after construction; every transform returns a new
game. Transition rows that are uniform over the whole state set are stored by
a compact marker so very large instances stay cheap to build and solve.

Strategies, value vectors and Q-functions are plain numpy arrays:

* strategy: int array of shape ``(n_states,)``, one action index per state;
* value vector: float array of shape ``(n_states,)``;
* Q-function: float array of shape ``(n_pairs,)``, indexed by the flat
  state-action pair layout exposed through :class:`ActionSpace`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

MIN_PLAYER = 0
MAX_PLAYER = 1

OWNER_NAMES = {MIN_PLAYER: "min", MAX_PLAYER: "max"}
OWNER_CODES = {"min": MIN_PLAYER, "max": MAX_PLAYER}

# Tolerance on transition row sums. Rows are never renormalized silently.
PROB_TOL = 1e-9


@dataclass(frozen=True)
class Action:
    """One action: reward plus a sparse transition row.

    ``uniform=True`` marks the row as uniform over *all* states (including
    the origin state); ``next_states``/``probs`` are then ignored.
    """

    reward: float
    next_states: np.ndarray | None = None
    probs: np.ndarray | None = None
    uniform: bool = False


@dataclass(frozen=True, eq=False)
class ActionSpace:
    """Flat state-action layout without transition data.

    This is the only structural view handed to sampling-based solvers; it
    deliberately omits the transition law.
    """

    n_states: int
    n_pairs: int
    gamma: float
    is_max: np.ndarray        # (n_states,) bool
    n_actions: np.ndarray     # (n_states,) int
    state_offset: np.ndarray  # (n_states + 1,) int, pair range per state
    pair_state: np.ndarray    # (n_pairs,) int
    rewards: np.ndarray       # (n_pairs,) float
    pad_rows: np.ndarray      # scatter indices into the (n_states, a_max) pad
    pad_cols: np.ndarray
    pad_template: np.ndarray  # (n_states, a_max), +/-inf fill by owner

    def pair_index(self, state: int, action: int) -> int:
        return int(self.state_offset[state]) + int(action)

    def chosen_pairs(self, strategy: np.ndarray) -> np.ndarray:
        """Flat pair index selected by ``strategy`` at every state."""
        return self.state_offset[:-1] + strategy


@dataclass(frozen=True, eq=False)
class GameLayout:
    """Action space plus vectorized transition data.

    ``trans`` holds the explicit rows (one CSR row per pair, empty for
    uniform pairs); ``uniform_mask`` marks pairs whose row is uniform over
    all states.
    """

    space: ActionSpace
    trans: sp.csr_matrix          # (n_pairs, n_states)
    trans_t: sp.csr_matrix        # transpose, cached for chain iterations
    uniform_mask: np.ndarray      # (n_pairs,) bool

    def p_dot(self, v: np.ndarray) -> np.ndarray:
        """Per-pair expectation of ``v`` under one transition."""
        out = self.trans @ v
        if self.uniform_mask.any():
            out = out + self.uniform_mask * float(v.mean())
        return out


@dataclass(frozen=True, eq=False)
class StochasticGame:
    """Immutable description of a turn-based zero-sum stochastic game."""

    gamma: float
    owners: np.ndarray                 # (n_states,) int8, MIN_PLAYER/MAX_PLAYER
    actions: tuple[tuple[Action, ...], ...]
    reward_bound: float = 1.0

    @property
    def n_states(self) -> int:
        return len(self.actions)

    @property
    def n_pairs(self) -> int:
        return int(self.layout.space.n_pairs)

    @cached_property
    def layout(self) -> GameLayout:
        return _build_layout(self)

    @property
    def space(self) -> ActionSpace:
        return self.layout.space

    def n_actions_at(self, state: int) -> int:
        return len(self.actions[state])


def _build_layout(game: StochasticGame) -> GameLayout:
    n_states = game.n_states
    n_actions = np.array([len(acts) for acts in game.actions], dtype=np.int64)
    state_offset = np.zeros(n_states + 1, dtype=np.int64)
    np.cumsum(n_actions, out=state_offset[1:])
    n_pairs = int(state_offset[-1])

    rewards = np.empty(n_pairs, dtype=np.float64)
    uniform_mask = np.zeros(n_pairs, dtype=bool)
    pair_state = np.repeat(np.arange(n_states, dtype=np.int64), n_actions)

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    data: list[np.ndarray] = []
    pair = 0
    for s, acts in enumerate(game.actions):
        for act in acts:
            rewards[pair] = act.reward
            if act.uniform:
                uniform_mask[pair] = True
            else:
                idx = np.asarray(act.next_states, dtype=np.int64)
                rows.append(np.full(idx.shape, pair, dtype=np.int64))
                cols.append(idx)
                data.append(np.asarray(act.probs, dtype=np.float64))
            pair += 1

    if rows:
        trans = sp.csr_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_pairs, n_states),
        )
    else:
        trans = sp.csr_matrix((n_pairs, n_states))
    trans_t = trans.T.tocsr()

    a_max = int(n_actions.max())
    is_max = game.owners.astype(bool)
    pad_rows = pair_state
    pad_cols = np.concatenate([np.arange(k, dtype=np.int64) for k in n_actions])
    pad_template = np.where(is_max[:, None], -np.inf, np.inf)
    pad_template = np.broadcast_to(pad_template, (n_states, a_max)).copy()

    for arr in (n_actions, state_offset, pair_state, rewards, uniform_mask,
                pad_rows, pad_cols, pad_template):
        arr.setflags(write=False)

    space = ActionSpace(
        n_states=n_states,
        n_pairs=n_pairs,
        gamma=game.gamma,
        is_max=is_max,
        n_actions=n_actions,
        state_offset=state_offset,
        pair_state=pair_state,
        rewards=rewards,
        pad_rows=pad_rows,
        pad_cols=pad_cols,
        pad_template=pad_template,
    )
    return GameLayout(space=space, trans=trans, trans_t=trans_t,
                      uniform_mask=uniform_mask)


def make_game(gamma: float,
              owners: Sequence[int],
              actions: Sequence[Sequence[Action]],
              reward_bound: float | None = None) -> StochasticGame:
    """Build a game, recording ``reward_bound`` as the max absolute reward."""
    owners_arr = np.asarray(owners, dtype=np.int8)
    owners_arr.setflags(write=False)
    acts = tuple(tuple(a) for a in actions)
    if reward_bound is None:
        all_r = [act.reward for state_acts in acts for act in state_acts]
        reward_bound = max(1.0, max(abs(r) for r in all_r)) if all_r else 1.0
    return StochasticGame(gamma=float(gamma), owners=owners_arr,
                          actions=acts, reward_bound=float(reward_bound))


# ---------------------------------------------------------------------------
# validation


def validate(game: StochasticGame) -> list[str]:
    """Return a report listing every violated structural invariant.

    An empty list means the game is well-formed. This never raises; loaders
    that want hard failures should raise on a non-empty report.
    """
    report: list[str] = []
    if game.n_states < 1:
        report.append("game has no states")
        return report
    if not (0.0 < game.gamma < 1.0):
        report.append(f"gamma {game.gamma} outside (0, 1)")
    if len(game.owners) != game.n_states:
        report.append("owner tags do not cover every state")
    else:
        bad = np.flatnonzero(~np.isin(game.owners, (MIN_PLAYER, MAX_PLAYER)))
        for s in bad:
            report.append(f"state {s} has invalid owner tag {game.owners[s]}")
    for s, acts in enumerate(game.actions):
        if len(acts) == 0:
            report.append(f"state {s} has no actions")
        for a, act in enumerate(acts):
            if not np.isfinite(act.reward):
                report.append(f"reward not finite at ({s},{a})")
            elif abs(act.reward) > game.reward_bound + 1e-12:
                report.append(
                    f"|reward| {abs(act.reward)} exceeds bound "
                    f"{game.reward_bound} at ({s},{a})")
            if act.uniform:
                continue
            idx = np.asarray(act.next_states)
            probs = np.asarray(act.probs, dtype=np.float64)
            if idx.shape != probs.shape:
                report.append(f"transition index/probability shape mismatch at ({s},{a})")
                continue
            if idx.size == 0:
                report.append(f"empty transition row at ({s},{a})")
                continue
            if idx.min() < 0 or idx.max() >= game.n_states:
                report.append(f"transition target out of range at ({s},{a})")
            if (probs < 0).any():
                report.append(f"negative transition probability at ({s},{a})")
            total = float(probs.sum())
            if abs(total - 1.0) > PROB_TOL:
                report.append(f"transition sum {total} != 1 at ({s},{a})")
    return report


def validate_strategy(game: StochasticGame, strategy: np.ndarray) -> None:
    strategy = np.asarray(strategy)
    if strategy.shape != (game.n_states,):
        raise ValueError(f"strategy shape {strategy.shape} != ({game.n_states},)")
    n_actions = game.space.n_actions
    if (strategy < 0).any() or (strategy >= n_actions).any():
        bad = int(np.flatnonzero((strategy < 0) | (strategy >= n_actions))[0])
        raise ValueError(f"strategy picks invalid action at state {bad}")


# ---------------------------------------------------------------------------
# transforms


def mirror(game: StochasticGame) -> StochasticGame:
    """Swap the players' roles: owners flipped, rewards mapped r -> 1 - r.

    Requires rewards in [0, 1]. The mirrored game's optimal value satisfies
    v'*(s) = 1/(1 - gamma) - v*(s), and its min player plays the role of the
    original max player.
    """
    r = game.space.rewards
    if (r < -PROB_TOL).any() or (r > 1.0 + PROB_TOL).any():
        raise ValueError("mirror requires rewards in [0, 1]")
    owners = np.where(game.owners == MIN_PLAYER, MAX_PLAYER, MIN_PLAYER).astype(np.int8)
    actions = tuple(
        tuple(Action(reward=1.0 - act.reward, next_states=act.next_states,
                     probs=act.probs, uniform=act.uniform) for act in acts)
        for acts in game.actions)
    return make_game(game.gamma, owners, actions)


def affine_reward_map(game: StochasticGame, scale: float, offset: float) -> StochasticGame:
    """Map rewards r -> (r + offset) / scale, preserving optimal strategies.

    For every strategy the values transform as
    v' = (v + offset / (1 - gamma)) / scale.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    actions = tuple(
        tuple(Action(reward=(act.reward + offset) / scale, next_states=act.next_states,
                     probs=act.probs, uniform=act.uniform) for act in acts)
        for acts in game.actions)
    return make_game(game.gamma, game.owners, actions)


def with_gamma(game: StochasticGame, gamma: float) -> StochasticGame:
    """Same states, actions and rewards under a different discount factor."""
    if not (0.0 < gamma < 1.0):
        raise ValueError("gamma must lie in (0, 1)")
    return make_game(gamma, game.owners, game.actions, reward_bound=game.reward_bound)


# ---------------------------------------------------------------------------
# JSON game files


def to_json_dict(game: StochasticGame) -> dict:
    states = []
    for s, acts in enumerate(game.actions):
        state_acts = []
        for act in acts:
            entry: dict = {"reward": act.reward}
            if act.uniform:
                entry["uniform"] = True
            else:
                entry["next"] = [
                    {"s": int(t), "p": float(p)}
                    for t, p in zip(act.next_states, act.probs)
                ]
            state_acts.append(entry)
        states.append({"owner": OWNER_NAMES[int(game.owners[s])],
                       "actions": state_acts})
    return {"gamma": game.gamma, "states": states}


def from_json_dict(doc: dict) -> StochasticGame:
    try:
        gamma = float(doc["gamma"])
        owners = []
        actions = []
        for state in doc["states"]:
            owners.append(OWNER_CODES[state["owner"]])
            acts = []
            for entry in state["actions"]:
                if entry.get("uniform", False):
                    acts.append(Action(reward=float(entry["reward"]), uniform=True))
                else:
                    nxt = entry["next"]
                    acts.append(Action(
                        reward=float(entry["reward"]),
                        next_states=np.array([e["s"] for e in nxt], dtype=np.int64),
                        probs=np.array([e["p"] for e in nxt], dtype=np.float64),
                    ))
            actions.append(acts)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed game document: {exc}") from exc
    game = make_game(gamma, owners, actions)
    report = validate(game)
    if report:
        raise ValueError("invalid game: " + "; ".join(report))
    return game


def save_game(game: StochasticGame, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(to_json_dict(game), fh, indent=1)
        fh.write("\n")


def load_game(path: str) -> StochasticGame:
    with open(path) as fh:
        return from_json_dict(json.load(fh))
