"""Worst-case instance generators and their path verifiers.

Two families are provided:

* ``build_hi1``: a single-player maximization instance on ``T`` states where
  policy iteration started from the all-uniform policy is forced to correct
  exactly one action per evaluation, walking right-to-left along a chain of
  sqrt-scale length before the policy is anywhere near optimal.

* ``build_hi2``: a two-player instance where the outer min/max alternation
  rebuilds the max player's chain from scratch after every min-player
  correction, so the total number of single-action corrections is quadratic
  in the chain length.

The verifiers rerun the exact solvers on the generated instances and check
the predicted improvement path step by step, emitting machine-checkable
reports instead of crashing on mismatches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .checks import CheckReport, Violation
from .exact import (SolveTrace, _improve, _tie_tol, evaluate,
                    policy_iteration, q_from_v, stationary_distribution,
                    strategy_iteration)
from .game import Action, MAX_PLAYER, MIN_PLAYER, StochasticGame, make_game

U, R = 0, 1  # action indices on two-action chain states


# ---------------------------------------------------------------------------
# HI1: policy iteration walks one state per evaluation


@dataclass(frozen=True)
class Hi1Meta:
    """Bookkeeping for the policy-iteration instance.

    States are 0-based. The two-action states are the chain positions
    ``T - s_prime - 1 .. T - 2``; the rewarded state is ``T - 1``.
    ``gamma = 1 - 1/(beta_factor * T)``.
    """

    T: int
    s_prime: int
    beta_factor: float
    gamma: float
    r_top: float = 1.0

    @property
    def chain_states(self) -> range:
        return range(self.T - self.s_prime - 1, self.T - 1)

    def policy_uniform(self) -> np.ndarray:
        return np.zeros(self.T, dtype=np.int64)

    def policy_chain(self, i: int) -> np.ndarray:
        """Policy with the top ``i`` chain states moved to R (0 <= i <= s_prime)."""
        pi = self.policy_uniform()
        for k in range(i):
            pi[self.T - 2 - k] = R
        return pi

    def policy_extreme(self) -> np.ndarray:
        return self.policy_chain(self.s_prime)

    def stationary_uniform(self) -> np.ndarray:
        return np.full(self.T, 1.0 / self.T)

    def stationary_extreme(self) -> np.ndarray:
        """Closed form for the all-R policy's stationary distribution."""
        lam = np.ones(self.T)
        for k in range(self.s_prime + 1):
            lam[self.T - 1 - self.s_prime + k] = k + 1
        return lam / lam.sum()


def build_hi1(T: int, beta_factor: float = 4.0,
              r_top: float = 1.0) -> tuple[StochasticGame, Hi1Meta]:
    """Maximization MDP: uniform restarts everywhere, one rewarded state,
    and a short right-moving chain in front of it.

    ``s_prime = floor(sqrt(T/12))`` keeps every policy's stationary mass
    within [1/(2T), (s_prime+1)/T]. Requires T >= 48 so s_prime >= 2.
    """
    if T < 48:
        raise ValueError("T must be at least 48")
    if beta_factor < 1.0:
        raise ValueError("beta_factor must be >= 1")
    s_prime = int(math.isqrt(T // 12))
    if 6 * s_prime ** 2 > T // 2:
        raise ValueError("chain too long for the stationary-mass bounds")
    gamma = 1.0 - 1.0 / (beta_factor * T)
    meta = Hi1Meta(T=T, s_prime=s_prime, beta_factor=beta_factor, gamma=gamma,
                   r_top=r_top)

    actions: list[list[Action]] = []
    for s in range(T):
        reward = meta.r_top if s == T - 1 else 0.0
        acts = [Action(reward=reward, uniform=True)]
        if s in meta.chain_states:
            acts.append(Action(reward=0.0,
                               next_states=np.array([s + 1], dtype=np.int64),
                               probs=np.array([1.0])))
        actions.append(acts)
    owners = np.full(T, MAX_PLAYER, dtype=np.int8)
    game = make_game(gamma, owners, actions)
    return game, meta


def hi1_mean_value(meta: Hi1Meta, i: int) -> float:
    """Closed-form average value of the policy with the top i states on R.

    Derived from the fixed-point equations of that policy: the rewarded state
    feeds a length-i chain, everything else restarts uniformly.
    """
    g, T, r = meta.gamma, meta.T, meta.r_top
    num = r * (1.0 - g ** (i + 1))
    den = T * (1.0 - g) ** 2 - g + (i + 1) * g * (1.0 - g) + g ** (i + 2)
    return num / den


def verify_pi_path_hi1(T: int, beta_factor: float = 4.0) -> tuple[SolveTrace, CheckReport]:
    """Run policy iteration from the all-uniform policy and check the path.

    Expected behavior: exactly ``s_prime`` improving iterations, each flipping
    the single state T-2, T-3, ... (0-based) in order, and the quarter-way
    policy still missing more than 0.1 of the final top-state value.
    """
    game, meta = build_hi1(T, beta_factor)
    sigma, trace = policy_iteration(game, meta.policy_uniform())
    violations: list[Violation] = []

    improving = trace.improving_steps()
    if len(improving) != meta.s_prime:
        violations.append(Violation("pi-path:count", (),
                                    float(len(improving)), float(meta.s_prime), 0.0))
    for k, step in enumerate(improving):
        flips = trace.changes[step]
        expected_state = T - 2 - k
        if len(flips) != 1:
            violations.append(Violation("pi-path:single-flip", (step,),
                                        float(len(flips)), 1.0, 0.0))
        elif flips[0] != (expected_state, U, R):
            violations.append(Violation("pi-path:order", (step,),
                                        float(flips[0][0]), float(expected_state), 0.0))
    if not np.array_equal(sigma, meta.policy_extreme()):
        violations.append(Violation("pi-path:terminal", (), 0.0, 1.0, 0.0))

    # 0.1-suboptimality witness at the quarter-way policy
    i_wit = meta.s_prime // 4
    v_wit = evaluate(game, meta.policy_chain(i_wit))
    v_end = evaluate(game, meta.policy_extreme())
    gap = float(v_end[T - 1] - v_wit[T - 1])
    if gap <= 0.1 * meta.r_top:
        violations.append(Violation("pi-path:suboptimality", (i_wit,),
                                    gap, 0.1 * meta.r_top, 0.0))

    return trace, CheckReport(passed=not violations, violations=violations)


def hi1_distribution_bounds(T: int, num_policies: int, seed: int,
                            beta_factor: float = 4.0) -> CheckReport:
    """Stationary mass of random policies against the [1/(2T), (S'+1)/T] band."""
    game, meta = build_hi1(T, beta_factor)
    rng = np.random.default_rng(seed)
    lo, hi = 1.0 / (2 * T), (meta.s_prime + 1) / T
    policies = [meta.policy_uniform(), meta.policy_extreme()]
    counts = game.space.n_actions
    policies += [rng.integers(0, counts) for _ in range(num_policies)]
    violations: list[Violation] = []
    skipped = 0
    for k, pi in enumerate(policies):
        try:
            lam = stationary_distribution(game, pi)
        except RuntimeError:
            skipped += 1
            violations.append(Violation("hi1-bounds:non-convergent", (k,), 0.0, 0.0, 0.0))
            continue
        if float(lam.min()) < lo - 1e-12:
            violations.append(Violation("hi1-bounds:lower", (k,), float(lam.min()), lo, 0.0))
        if float(lam.max()) > hi + 1e-12:
            violations.append(Violation("hi1-bounds:upper", (k,), float(lam.max()), hi, 0.0))
    return CheckReport(passed=not violations, violations=violations)


# ---------------------------------------------------------------------------
# HI2: strategy iteration pays a quadratic number of corrections


@dataclass(frozen=True)
class Hi2Config:
    """Size and reward knobs of the two-player instance.

    The defaults produced by :func:`default_hi2_rewards` make every exact
    comparison in the predicted improvement path hold with a margin at the
    supported sizes; they are validated by :func:`verify_si_path_hi2` rather
    than assumed.
    """

    T: int
    s_prime: int
    s_b: int
    s_b_prime: int
    switch_rewards: tuple[float, ...]   # r_1 .. r_{S'}, weakly decreasing
    r_goal: float
    r_delta: float
    r_delta_prime: float
    gamma: float

    def to_json_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json_dict(doc: dict) -> "Hi2Config":
        doc = dict(doc)
        doc["switch_rewards"] = tuple(doc["switch_rewards"])
        return Hi2Config(**doc)


@dataclass(frozen=True)
class Hi2Meta:
    """State indexing and named strategies of the built instance.

    Layout order: ``T`` dummy states, the min chain m_1..m_{S'}, the min
    boosting chain b_1..b_{S_b}, the goal state, the max chain M_1..M_{S'},
    the max boosting chain B_1..B_{S_b'}, and the switching state last.
    """

    config: Hi2Config

    @property
    def T(self) -> int:
        return self.config.T

    @property
    def s_prime(self) -> int:
        return self.config.s_prime

    @property
    def n_states(self) -> int:
        c = self.config
        return c.T + 2 * c.s_prime + c.s_b + c.s_b_prime + 2

    def m(self, j: int) -> int:
        return self.T + (j - 1)

    def b(self, j: int) -> int:
        return self.T + self.s_prime + (j - 1)

    @property
    def goal(self) -> int:
        return self.T + self.s_prime + self.config.s_b

    def M(self, j: int) -> int:
        return self.goal + 1 + (j - 1)

    def B(self, j: int) -> int:
        return self.goal + 1 + self.s_prime + (j - 1)

    @property
    def switch(self) -> int:
        return self.n_states - 1

    def min_strategy(self, i: int) -> np.ndarray:
        """Min part: R on m_1..m_i, U elsewhere (single-action states at 0)."""
        pi = np.zeros(self.n_states, dtype=np.int64)
        for j in range(1, i + 1):
            pi[self.m(j)] = R
        return pi

    def max_strategy(self, i: int, z: int) -> np.ndarray:
        """Max part: switch plays a_i, R on M_1..M_z, U on the rest."""
        pi = np.zeros(self.n_states, dtype=np.int64)
        pi[self.switch] = i - 1
        for j in range(1, z + 1):
            pi[self.M(j)] = R
        return pi

    def joint(self, i_min: int, i_max: int, z_max: int) -> np.ndarray:
        return self.min_strategy(i_min) + self.max_strategy(i_max, z_max)

    def describe(self, sigma: np.ndarray) -> tuple[int, int, int] | None:
        """Recognize a joint strategy as (i_min, i_max, z_max) if it is one."""
        def prefix_length(flags: list[bool]) -> int | None:
            k = 0
            while k < len(flags) and flags[k]:
                k += 1
            return None if any(flags[k:]) else k

        i = prefix_length([sigma[self.m(j)] == R for j in range(1, self.s_prime + 1)])
        z = prefix_length([sigma[self.M(j)] == R for j in range(1, self.s_prime + 1)])
        if i is None or z is None:
            return None
        a = int(sigma[self.switch]) + 1
        return (i, a, z)


def default_hi2_rewards(T: int) -> Hi2Config:
    """Size-scaled reward configuration for the two-player instance.

    Chain lengths scale with sqrt(T); the switch actions share one reward so
    the climbing comparisons reduce to discount-depth differences and the
    incumbent tie rule. The per-step chain rewards scale as 1/sqrt(T). The
    configuration is validated exactly by :func:`verify_si_path_hi2`.
    """
    if T < 400:
        raise ValueError("T must be at least 400")
    root = math.isqrt(T)
    s_prime = max(2, root // 10)
    s_b = max(s_prime + 1, int(0.15 * root))
    s_b_prime = max(s_b + 1, int(0.4 * root))
    return Hi2Config(
        T=T,
        s_prime=s_prime,
        s_b=s_b,
        s_b_prime=s_b_prime,
        switch_rewards=tuple([0.65] * s_prime),
        r_goal=1.0,
        r_delta=0.5 / root,
        r_delta_prime=0.5 / root,
        gamma=1.0 - 1.0 / (8.0 * T),
    )


def build_hi2(T: int, config: Hi2Config | None = None) -> tuple[StochasticGame, Hi2Meta]:
    """Assemble the five state groups of the two-player instance.

    Rewards lie in [-1, 1]; apply an affine reward map before handing the
    game to sampling-based solvers that need [0, 1].
    """
    config = config or default_hi2_rewards(T)
    if config.T != T:
        raise ValueError("config was built for a different T")
    c = config
    if not (c.s_b > c.s_prime and c.s_b_prime > c.s_prime):
        raise ValueError("boosting chains must be longer than the action chains")
    if len(c.switch_rewards) != c.s_prime:
        raise ValueError("need one switch reward per min-chain state")
    # Reward ordering/range requirements are verified (and reported) by
    # verify_si_path_hi2 rather than enforced here, so deliberately broken
    # configurations can be used to witness path failures.
    meta = Hi2Meta(config=config)

    n = meta.n_states
    owners = np.empty(n, dtype=np.int8)
    actions: list[list[Action]] = [None] * n  # type: ignore[list-item]

    def point(target: int, reward: float) -> Action:
        return Action(reward=reward,
                      next_states=np.array([target], dtype=np.int64),
                      probs=np.array([1.0]))

    uniform = Action(reward=0.0, uniform=True)

    for s in range(c.T):
        owners[s] = MIN_PLAYER
        actions[s] = [uniform]

    for j in range(1, c.s_prime + 1):
        s = meta.m(j)
        owners[s] = MIN_PLAYER
        target = meta.b(c.s_b) if j == 1 else meta.m(j - 1)
        actions[s] = [uniform, point(target, c.r_delta)]

    for j in range(1, c.s_b + 1):
        s = meta.b(j)
        owners[s] = MIN_PLAYER
        target = meta.goal if j == 1 else meta.b(j - 1)
        actions[s] = [point(target, 0.0)]

    owners[meta.goal] = MIN_PLAYER
    actions[meta.goal] = [Action(reward=-c.r_goal, uniform=True)]

    for j in range(1, c.s_prime + 1):
        s = meta.M(j)
        owners[s] = MAX_PLAYER
        target = meta.B(c.s_b_prime) if j == 1 else meta.M(j - 1)
        actions[s] = [uniform, point(target, -c.r_delta_prime)]

    for j in range(1, c.s_b_prime + 1):
        s = meta.B(j)
        owners[s] = MAX_PLAYER
        target = meta.switch if j == 1 else meta.B(j - 1)
        actions[s] = [point(target, 0.0)]

    owners[meta.switch] = MAX_PLAYER
    actions[meta.switch] = [point(meta.m(i), c.switch_rewards[i - 1])
                            for i in range(1, c.s_prime + 1)]

    game = make_game(c.gamma, owners, actions)
    return game, meta


def _improvement_step(game: StochasticGame, sigma: np.ndarray,
                      improvable: np.ndarray) -> np.ndarray:
    """One exact evaluate-and-improve sweep (the verifiers' probe)."""
    v = evaluate(game, sigma)
    q = q_from_v(game, v)
    new_sigma, _, _ = _improve(game.space, q, sigma, improvable, _tie_tol(v))
    return new_sigma


def check_si_transitions(game: StochasticGame, meta: Hi2Meta) -> list[Violation]:
    """Pointwise checks of the three predicted improvement moves.

    For every grid cell: a max sweep from (min_i, max_(i,z)) must rebuild to
    (i+1, 0); a max sweep from (min_i, max_(i+1,z)) must climb to z+1; a min
    sweep at (min_i, max_(i+1, S')) must extend the min chain to i+1.
    """
    s_prime = meta.s_prime
    max_states = game.owners == MAX_PLAYER
    min_states = game.owners == MIN_PLAYER
    violations: list[Violation] = []

    for i in range(0, s_prime):
        for z in range(0, s_prime + 1):
            if i >= 1:
                sigma = meta.joint(i, i, z)
                got = _improvement_step(game, sigma, max_states)
                want = meta.joint(i, i + 1, 0)
                if not np.array_equal(got, want):
                    violations.append(Violation("si-rebuild", (i, z), 0.0, 1.0, 0.0))
            if z < s_prime:
                sigma = meta.joint(i, i + 1, z)
                got = _improvement_step(game, sigma, max_states)
                want = meta.joint(i, i + 1, z + 1)
                if not np.array_equal(got, want):
                    violations.append(Violation("si-climb", (i, z), 0.0, 1.0, 0.0))
        sigma = meta.joint(i, i + 1, s_prime)
        got = _improvement_step(game, sigma, min_states)
        want = meta.joint(i + 1, i + 1, s_prime)
        if not np.array_equal(got, want):
            violations.append(Violation("si-min-update", (i,), 0.0, 1.0, 0.0))
    return violations


def expected_si_path(meta: Hi2Meta) -> list[tuple[int, int, int]]:
    """The predicted joint-strategy path as (i_min, i_max, z_max) triples."""
    path = [(0, 1, 0)]
    for i in range(1, meta.s_prime + 1):
        for z in range(1, meta.s_prime + 1):
            path.append((i - 1, i, z))
        path.append((i, i, meta.s_prime))
        if i < meta.s_prime:
            path.append((i, i + 1, 0))
    return path


def verify_si_path_hi2(T: int, config: Hi2Config | None = None) -> tuple[SolveTrace, CheckReport]:
    """Run strategy iteration on the instance and verify the predicted path.

    Checks, in order: the pointwise transition moves on the whole grid, the
    visited strategy sequence of an actual run against the predicted path,
    and the count of single-action max-player corrections, which must land
    in [S'(S'-1), S'(S'+2)].
    """
    config = config or default_hi2_rewards(T)
    game, meta = build_hi2(T, config)
    violations: list[Violation] = []
    rs = config.switch_rewards
    for k, (r1, r2) in enumerate(zip(rs, rs[1:])):
        if r2 > r1 + 1e-12:
            violations.append(Violation("si-config:reward-order", (k,), r2, r1, r2 - r1))
    for k, r in enumerate(rs):
        if not (0.0 < r < config.r_goal):
            violations.append(Violation("si-config:reward-range", (k,), r, config.r_goal, 0.0))
    violations += check_si_transitions(game, meta)

    sigma0 = meta.joint(0, 1, 0)
    sigma, trace = strategy_iteration(game, sigma0)

    # Replay the trace: apply each record's flips to the running strategy and
    # compare the visited strategies with the predicted path.
    path = expected_si_path(meta)
    visited = [sigma0.copy()]
    current = sigma0.copy()
    for ch in trace.changes:
        if not ch:
            continue
        for s, old, new in ch:
            current[s] = new
        visited.append(current.copy())
    described = [meta.describe(s) for s in visited]
    main = described[:len(path)]
    if main != path:
        first_bad = next((k for k, (got, want) in enumerate(zip(main, path))
                          if got != want), len(main))
        violations.append(Violation("si-path:sequence", (first_bad,), 0.0, 1.0, 0.0))
    # Anything after the predicted path may only touch the max player.
    for k in range(len(path), len(visited)):
        d = described[k]
        if d is None or d[0] != meta.s_prime:
            violations.append(Violation("si-path:tail", (k,), 0.0, 1.0, 0.0))

    single_flips = sum(
        1 for k, ch in enumerate(trace.changes)
        if trace.phases[k] == "max-pi" and len(ch) == 1)
    s_prime = meta.s_prime
    lo, hi = s_prime * (s_prime - 1), s_prime * (s_prime + 2)
    if not (lo <= single_flips <= hi):
        violations.append(Violation("si-path:count", (), float(single_flips),
                                    float(lo), float(hi)))

    report = CheckReport(passed=not violations, violations=violations)
    return trace, report


def si_single_flip_count(trace: SolveTrace) -> int:
    """Number of evaluations whose improvement corrected exactly one action
    of the max player (the unit the quadratic lower bound counts)."""
    return sum(1 for k, ch in enumerate(trace.changes)
               if trace.phases[k] == "max-pi" and len(ch) == 1)


def hi2_mean_value(game: StochasticGame, sigma: np.ndarray) -> float:
    return float(evaluate(game, sigma).mean())


def hi2_vbar_signs(T: int, config: Hi2Config | None = None,
                   band: float = 10.0) -> CheckReport:
    """Sign pattern of the scaled mean values over the strategy grid.

    For every min index i and chain depth z, the pair (min_i, max_(i,z)) must
    have negative scaled mean value (the switch route reaches the goal) and
    (min_i, max_(i+1,z)) positive (the switch route escapes it). The positive
    family is also compared against its first-order approximation
    -(i + S_b + 1) r_goal + (1 + z + S_b') r within an additive band.
    """
    config = config or default_hi2_rewards(T)
    game, meta = build_hi2(T, config)
    c = config
    scale = (1.0 - c.gamma) * meta.n_states
    violations: list[Violation] = []

    for z in range(0, c.s_prime + 1):
        for i in range(1, c.s_prime + 1):
            y = scale * hi2_mean_value(game, meta.joint(i, i, z))
            if y >= 0.0:
                violations.append(Violation("vbar-sign:negative", (i, z), y, 0.0, y))
        for i in range(0, c.s_prime):
            y = scale * hi2_mean_value(game, meta.joint(i, i + 1, z))
            if y <= 0.0:
                violations.append(Violation("vbar-sign:positive", (i, z), y, 0.0, -y))
            approx = (-(i + c.s_b + 1) * c.r_goal
                      + (1 + z + c.s_b_prime) * c.switch_rewards[i])
            if abs(y - approx) > band:
                violations.append(Violation("vbar-sign:band", (i, z), y, approx,
                                            abs(y - approx) - band))
    return CheckReport(passed=not violations, violations=violations)
