"""Validators for monotone value-strategy sequences and variance identities.

These run with full game access, so they can certify from the outside what a
sampling run can only promise with high probability: the monotone chain of a
sequence, its one-sided Bellman inequalities, and the resulting terminal
strategy quality. They also evaluate Markovian (stage-dependent) plans and
check the Bellman-style recursion that ties the variance of the discounted
return to the per-step variance-of-value vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .exact import (apply_strategy, bellman, best_response, evaluate,
                    greedy, half_bellman, q_from_v, value_iteration,
                    PolicyLinearSystem)
from .game import MAX_PLAYER, MIN_PLAYER, StochasticGame, validate_strategy
from .qvi import DECREASING, INCREASING, VSSequence

CHECK_SLACK = 1e-8
VSTAR_TOL = 1e-10


@dataclass
class Violation:
    prop: str
    index: tuple
    lhs: float
    rhs: float
    slack: float

    def __str__(self) -> str:
        return (f"{self.prop} at {self.index}: lhs={self.lhs!r} rhs={self.rhs!r} "
                f"(exceeds slack by {self.slack:.3e})")


@dataclass
class CheckReport:
    passed: bool
    violations: list[Violation] = field(default_factory=list)

    def summary(self) -> str:
        if self.passed:
            return "PASS (no violations)"
        lines = [f"FAIL ({len(self.violations)} violations)"]
        lines += [f"  {v}" for v in self.violations[:20]]
        if len(self.violations) > 20:
            lines.append(f"  ... {len(self.violations) - 20} more")
        return "\n".join(lines)

    def to_json_dict(self) -> dict:
        return {
            "passed": self.passed,
            "violations": [
                {"property": v.prop, "index": list(v.index), "lhs": v.lhs,
                 "rhs": v.rhs, "slack": v.slack}
                for v in self.violations
            ],
        }

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)
            fh.write("\n")


def _report(violations: list[Violation]) -> CheckReport:
    return CheckReport(passed=not violations, violations=violations)


def _collect(violations: list[Violation], prop: str, bad_mask: np.ndarray,
             lhs: np.ndarray, rhs: np.ndarray, slack_by: np.ndarray,
             index_of) -> None:
    for j in np.flatnonzero(bad_mask):
        violations.append(Violation(prop, index_of(int(j)), float(lhs[j]),
                                    float(rhs[j]), float(slack_by[j])))


# ---------------------------------------------------------------------------
# variance of value


def variance_of_value(game: StochasticGame, v: np.ndarray) -> np.ndarray:
    """Per-pair variance of v under one transition: P v^2 - (P v)^2, floored at 0."""
    v = np.asarray(v, dtype=np.float64)
    lay = game.layout
    first = lay.p_dot(v)
    second = lay.p_dot(v * v)
    return np.maximum(second - first * first, 0.0)


# ---------------------------------------------------------------------------
# monotone sequence certification


def _optimal_value(game: StochasticGame, vstar: np.ndarray | None) -> np.ndarray:
    if vstar is not None:
        return np.asarray(vstar, dtype=np.float64)
    v, _, _ = value_iteration(game, VSTAR_TOL)
    return v


def _check_sequence(game: StochasticGame, seq: VSSequence, sign: float,
                    eps_override, slack: float,
                    vstar: np.ndarray | None) -> CheckReport:
    """Shared body: sign=+1 checks a decreasing run, -1 an increasing one."""
    vstar = _optimal_value(game, vstar)
    player = MIN_PLAYER if sign > 0 else MAX_PLAYER
    violations: list[Violation] = []
    n_entries = seq.values.shape[0]
    chosen = game.space.chosen_pairs

    for i in range(n_entries):
        v_i = seq.values[i]
        sigma_i = seq.strategies[i]
        validate_strategy(game, sigma_i)

        # property 1: monotone chain bounded by v*
        if i + 1 < n_entries:
            gap = sign * (seq.values[i + 1] - v_i) - slack
            _collect(violations, "1:chain", gap > 0, seq.values[i + 1], v_i, gap,
                     lambda s, i=i: (i, s))
        if i == n_entries - 1:
            gap = sign * (vstar - v_i) - slack
            _collect(violations, "1:optimal-bound", gap > 0, v_i, vstar, gap,
                     lambda s, i=i: (i, s))

        # property 2: one-sided fixed-point inequalities
        for name, backup in (
            ("2:T-sigma", apply_strategy(game, v_i, sigma_i)),
            ("2:T", bellman(game, v_i)),
            ("2:half", half_bellman(game, v_i, sigma_i, player)),
        ):
            gap = sign * (backup - v_i) - slack
            _collect(violations, name, gap > 0, backup, v_i, gap,
                     lambda s, i=i: (i, s))

        if i == 0:
            continue

        # property 3: Q against the exact one-step backup of v_{i-1}
        eps_i = seq.error_bounds[i] if eps_override is None else eps_override
        target = q_from_v(game, seq.values[i - 1]) + sign * eps_i
        gap = sign * (seq.q_values[i] - target) - slack
        _collect(violations, "3:q-backup", gap > 0, seq.q_values[i], target, gap,
                 lambda p, i=i: (i, p))

        # property 4: value consistent with its own Q
        vq, _ = greedy(game, seq.q_values[i])
        gap = sign * (v_i - vq) - slack
        _collect(violations, "4:greedy", gap > 0, v_i, vq, gap,
                 lambda s, i=i: (i, s))

    return _report(violations)


def check_mdvss(game: StochasticGame, seq: VSSequence,
                eps_override: np.ndarray | float | None = None,
                slack: float = CHECK_SLACK,
                vstar: np.ndarray | None = None) -> CheckReport:
    """Certify a decreasing sequence: chain above v*, one-sided backups, Q bounds."""
    if seq.direction != DECREASING:
        raise ValueError(f"expected a decreasing sequence, got {seq.direction}")
    return _check_sequence(game, seq, +1.0, eps_override, slack, vstar)


def check_mivss(game: StochasticGame, seq: VSSequence,
                eps_override: np.ndarray | float | None = None,
                slack: float = CHECK_SLACK,
                vstar: np.ndarray | None = None) -> CheckReport:
    """Mirror certification for an increasing sequence."""
    if seq.direction != INCREASING:
        raise ValueError(f"expected an increasing sequence, got {seq.direction}")
    return _check_sequence(game, seq, -1.0, eps_override, slack, vstar)


def check_eps_optimal_implication(game: StochasticGame, seq: VSSequence,
                                  slack: float = CHECK_SLACK,
                                  vstar: np.ndarray | None = None) -> CheckReport:
    """Terminal strategy quality implied by a valid sequence.

    For a decreasing run with eps = ||v_R - v*||_inf, the opponent's exact
    best response to the terminal min strategy must stay below v* + eps
    entrywise (mirrored for increasing runs).
    """
    vstar = _optimal_value(game, vstar)
    sign = +1.0 if seq.direction == DECREASING else -1.0
    player = MIN_PLAYER if sign > 0 else MAX_PLAYER
    eps = float(np.abs(seq.terminal_value - vstar).max())
    _, v_resp = best_response(game, seq.terminal_strategy, player)
    violations: list[Violation] = []
    bound = vstar + sign * eps
    gap = sign * (v_resp - bound) - slack
    _collect(violations, "eps-optimal", gap > 0, v_resp, bound, gap,
             lambda s: (s,))
    return _report(violations)


# ---------------------------------------------------------------------------
# Markovian plans


@dataclass(frozen=True)
class MarkovianPlan:
    """Stage-dependent plan: finite prefix of strategies, stationary tail."""

    prefix: tuple[np.ndarray, ...]
    tail: np.ndarray

    @staticmethod
    def make(prefix, tail) -> "MarkovianPlan":
        return MarkovianPlan(tuple(np.asarray(p, dtype=np.int64) for p in prefix),
                             np.asarray(tail, dtype=np.int64))


def _var_under(game: StochasticGame, sigma: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Per-state variance of v under the chosen action's transition."""
    return variance_of_value(game, v)[game.space.chosen_pairs(sigma)]


def markovian_evaluate(game: StochasticGame, plan: MarkovianPlan) -> tuple[list[np.ndarray], np.ndarray]:
    """Stage values and exact return variance of a Markovian plan.

    Returns ``(values, var0)`` where ``values[t]`` is the value-to-go from
    stage t (the last entry is the stationary tail's value) and ``var0`` the
    per-state variance of the discounted return from stage 0, both computed
    by backward recursions on the first and second moments.
    """
    for p in plan.prefix:
        validate_strategy(game, p)
    validate_strategy(game, plan.tail)
    gamma = game.gamma

    v_tail = evaluate(game, plan.tail)
    values = [v_tail]
    for sigma in reversed(plan.prefix):
        values.append(apply_strategy(game, values[-1], sigma))
    values.reverse()

    # Tail variance solves (I - gamma^2 P_tail) w = gamma^2 var(v_tail)_tail.
    tail_sys = PolicyLinearSystem(game, plan.tail, discount=gamma * gamma)
    w = tail_sys.solve(gamma * gamma * _var_under(game, plan.tail, v_tail))
    for t in range(len(plan.prefix) - 1, -1, -1):
        sigma = plan.prefix[t]
        sys = PolicyLinearSystem(game, sigma, discount=1.0)  # only P needed
        step_var = _var_under(game, sigma, values[t + 1])
        pw = sys.P @ w
        if sys.has_uniform:
            pw = pw + sys.u * float(w.mean())
        w = gamma * gamma * (pw + step_var)
    return values, w


def variance_bellman_residual(game: StochasticGame, plan: MarkovianPlan,
                              truncation: float = 1e-12) -> float:
    """Max residual between the two routes to the return variance.

    Route one is the backward second-moment recursion of
    :func:`markovian_evaluate`; route two accumulates the series
    sum_t gamma^(2(t+1)) P_0 ... P_{t-1} var(v_{t+1})_{sigma_t}, truncated
    once gamma^(2t) beta^2 drops below ``truncation``.
    """
    values, var_direct = markovian_evaluate(game, plan)
    gamma = game.gamma
    beta = 1.0 / (1.0 - gamma)
    n = game.n_states
    horizon = len(plan.prefix)

    def stage_sigma(t: int) -> np.ndarray:
        return plan.prefix[t] if t < horizon else plan.tail

    def stage_value(t: int) -> np.ndarray:
        return values[min(t, horizon)]

    # dense forward product B_t = P_0 P_1 ... P_{t-1}; fine at validator sizes
    def dense_p(sigma: np.ndarray) -> np.ndarray:
        sys = PolicyLinearSystem(game, sigma, discount=1.0)
        mat = sys.P.toarray()
        if sys.has_uniform:
            mat = mat + np.outer(sys.u, np.full(n, 1.0 / n))
        return mat

    total = np.zeros(n)
    product = np.eye(n)
    t = 0
    while gamma ** (2 * t) * beta ** 2 >= truncation:
        sigma_t = stage_sigma(t)
        w_t = _var_under(game, sigma_t, stage_value(t + 1))
        total = total + gamma ** (2 * (t + 1)) * (product @ w_t)
        product = product @ dense_p(sigma_t)
        t += 1
    return float(np.abs(var_direct - total).max())
