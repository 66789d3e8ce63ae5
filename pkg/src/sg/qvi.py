"""Variance-reduced Q-value iteration over a generative model.

One run produces a monotone value-strategy sequence: a large initial batch
estimates P v0 per pair together with its empirical variance, the estimate is
shifted to have one-sided error, and each of R rounds then refines the
Q-function with a small batch that only estimates P (v_i - v0), whose range
shrinks as the iterates converge. A per-state repair step keeps the value
sequence monotone (nonincreasing for the decreasing variant, nondecreasing
for the increasing one) and keeps strategies coupled to the values they came
from. The emitted entry i pairs v_i and its strategy with the Q-register the
round read, so the certified inequalities

    Q_i <= r + gamma P v_{i-1} + xi_i      and      v_i <= V[Q_i]

hold with the advertised error vector xi (mirrored for the increasing
variant).

The driver halves the accuracy target u across rounds, feeding each run's
terminal value-strategy pair to the next run, and reads the min-player
strategy off the final sequence; the max player comes from the same machinery
on the role-swapped game.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .exact import greedy_from_q
from .sampler import GenerativeModel

DECREASING = "decreasing"
INCREASING = "increasing"


@dataclass(frozen=True)
class QviConstants:
    """Tunable absolute constants of the sampling loops.

    ``c1`` scales the round count, ``c2``/``c3`` the large and small batch
    sizes, ``c`` the confidence-log factor entering the variance shift and
    ``big_c`` the per-round upward/downward drift shift. The overrides pin
    the derived quantities directly (used by scaling experiments).
    """

    c1: float = 4.0
    c2: float = 1.0
    c3: float = 1.0
    c: float = 1.0
    big_c: float = 0.1
    m1_override: int | None = None
    m2_override: int | None = None
    rounds_override: int | None = None

    def to_json_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json_dict(doc: dict) -> "QviConstants":
        return QviConstants(**doc)


@dataclass(frozen=True)
class DerivedConstants:
    """Per-run derived quantities for one accuracy target u."""

    u: float
    delta: float
    beta: float
    rounds: int
    m1: int
    m2: int
    log_factor: float   # L
    alpha1: float       # L / m1, <= 1

    def to_json_dict(self) -> dict:
        return asdict(self)


def derive_constants(consts: QviConstants, u: float, delta: float,
                     n_pairs: int, gamma: float) -> DerivedConstants:
    beta = 1.0 / (1.0 - gamma)
    if not (0.0 < u <= beta):
        raise ValueError(f"accuracy target u={u} outside (0, beta]")
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    # ln(beta/u) vanishes at u = beta; floor the factor so the first run still
    # contracts through its full horizon.
    rounds = consts.rounds_override
    if rounds is None:
        rounds = math.ceil(consts.c1 * beta * max(1.0, math.log(beta / u)))
    m1 = consts.m1_override
    if m1 is None:
        m1 = math.ceil(consts.c2 * beta ** 3 * max(1.0, u ** -2)
                       * math.log(8.0 * n_pairs / delta))
    log_factor = consts.c * math.log(n_pairs / (delta * (1.0 - gamma) * u))
    log_factor = max(log_factor, 1.0)
    if m1 < log_factor:
        m1 = math.ceil(log_factor)
    m2 = consts.m2_override
    if m2 is None:
        m2 = math.ceil(consts.c3 * beta ** 2 * math.log(2.0 * rounds * n_pairs / delta))
    return DerivedConstants(u=u, delta=delta, beta=beta, rounds=int(rounds),
                            m1=int(m1), m2=int(m2), log_factor=log_factor,
                            alpha1=log_factor / m1)


@dataclass
class VSSequence:
    """Iterate log of one QVI run, direction-tagged.

    ``values[i]``, ``strategies[i]`` and ``q_values[i]`` are the i-th
    monotone iterate, its strategy, and the Q-register the i-th round read;
    ``error_bounds[i]`` is the per-pair one-sided error vector certified for
    that Q. Entry 0 holds the inputs (its Q and bound are informational).
    """

    direction: str
    values: np.ndarray        # (R + 1, n_states)
    q_values: np.ndarray      # (R + 1, n_pairs)
    strategies: np.ndarray    # (R + 1, n_states) int
    error_bounds: np.ndarray  # (R + 1, n_pairs)
    constants: DerivedConstants | None = None
    samples_used: int = 0

    @property
    def rounds(self) -> int:
        return self.values.shape[0] - 1

    @property
    def terminal_value(self) -> np.ndarray:
        return self.values[-1]

    @property
    def terminal_strategy(self) -> np.ndarray:
        return self.strategies[-1]

    def to_json_dict(self) -> dict:
        doc = {
            "direction": self.direction,
            "values": self.values.tolist(),
            "q_values": self.q_values.tolist(),
            "strategies": self.strategies.tolist(),
            "error_bounds": self.error_bounds.tolist(),
            "samples_used": self.samples_used,
        }
        if self.constants is not None:
            doc["constants"] = self.constants.to_json_dict()
        return doc

    @staticmethod
    def from_json_dict(doc: dict) -> "VSSequence":
        consts = doc.get("constants")
        return VSSequence(
            direction=doc["direction"],
            values=np.asarray(doc["values"], dtype=np.float64),
            q_values=np.asarray(doc["q_values"], dtype=np.float64),
            strategies=np.asarray(doc["strategies"], dtype=np.int64),
            error_bounds=np.asarray(doc["error_bounds"], dtype=np.float64),
            constants=DerivedConstants(**consts) if consts else None,
            samples_used=int(doc.get("samples_used", 0)),
        )

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh)
            fh.write("\n")

    @staticmethod
    def load(path: str) -> "VSSequence":
        with open(path) as fh:
            return VSSequence.from_json_dict(json.load(fh))


def _check_inputs(model: GenerativeModel, v0: np.ndarray, sigma0: np.ndarray) -> None:
    r = model.rewards
    if (r < -1e-12).any() or (r > 1.0 + 1e-12).any():
        raise ValueError("sampling-based solvers require rewards in [0, 1]")
    if v0.shape != (model.n_states,):
        raise ValueError("v0 must have one entry per state")
    if sigma0.shape != (model.n_states,):
        raise ValueError("sigma0 must have one entry per state")
    counts = model.space.n_actions
    if (sigma0 < 0).any() or (sigma0 >= counts).any():
        raise ValueError("sigma0 picks an invalid action")


def _qvi_run(model: GenerativeModel, u: float, delta: float,
             v0: np.ndarray, sigma0: np.ndarray,
             consts: QviConstants, sign: float) -> VSSequence:
    """Shared body of both monotone runs; sign=+1 decreasing, -1 increasing."""
    v0 = np.asarray(v0, dtype=np.float64)
    sigma0 = np.asarray(sigma0, dtype=np.int64)
    _check_inputs(model, v0, sigma0)
    d = derive_constants(consts, u, delta, model.n_pairs, model.gamma)
    gamma, beta = model.gamma, d.beta
    r = model.rewards

    start_total, _ = model.sample_count()
    init = model.estimate_mean_and_var(v0, d.m1)
    shift = np.sqrt(d.alpha1 * init.variance) + d.alpha1 ** 0.75 * beta
    w = init.mean + sign * shift
    q = np.clip(r + gamma * w, 0.0, beta)
    drift = consts.big_c * (1.0 - gamma) * u
    xi = 2.0 * np.sqrt(d.alpha1 * init.variance) \
        + 2.0 * (d.alpha1 ** 0.75 * beta + drift)

    n_entries = d.rounds + 1
    values = np.empty((n_entries, model.n_states))
    q_values = np.empty((n_entries, model.n_pairs))
    strategies = np.empty((n_entries, model.n_states), dtype=np.int64)
    error_bounds = np.tile(xi, (n_entries, 1))
    values[0], q_values[0], strategies[0] = v0, q, sigma0

    v_prev, sigma_prev = v0, sigma0
    for i in range(1, n_entries):
        v_new, sigma_new = greedy_from_q(model.space, q)
        # Per-state monotone repair: never move against the run's direction,
        # and keep the strategy paired with the value it produced.
        keep_old = sign * v_new >= sign * v_prev
        v_i = np.where(keep_old, v_prev, v_new)
        sigma_i = np.where(keep_old, sigma_prev, sigma_new)
        values[i], q_values[i], strategies[i] = v_i, q, sigma_i

        diff = model.estimate_diff_mean(v_i, v0, d.m2)
        g = diff.mean + sign * drift
        q = np.clip(r + gamma * (w + g), 0.0, beta)
        v_prev, sigma_prev = v_i, sigma_i

    end_total, _ = model.sample_count()
    return VSSequence(
        direction=DECREASING if sign > 0 else INCREASING,
        values=values, q_values=q_values, strategies=strategies,
        error_bounds=error_bounds, constants=d,
        samples_used=end_total - start_total,
    )


def qvi_mdvss(model: GenerativeModel, u: float, delta: float,
              v0: np.ndarray, sigma0: np.ndarray,
              consts: QviConstants | None = None) -> VSSequence:
    """Monotone decreasing value-strategy run.

    The caller guarantees v* <= v0 <= v* + u, v0 >= T[v0] and
    v0 >= T_sigma0[v0]; these need the unknown v* and are asserted only in
    test harnesses. Estimates are shifted upward so, with probability at
    least 1 - delta, the iterates stay above v* while decreasing toward it.
    """
    return _qvi_run(model, u, delta, v0, sigma0, consts or QviConstants(), +1.0)


def qvi_mivss(model: GenerativeModel, u: float, delta: float,
              v0: np.ndarray, sigma0: np.ndarray,
              consts: QviConstants | None = None) -> VSSequence:
    """Monotone increasing value-strategy run (exact mirror of qvi_mdvss)."""
    return _qvi_run(model, u, delta, v0, sigma0, consts or QviConstants(), -1.0)


@dataclass
class SolveResult:
    """Output of the halving driver.

    ``min_strategy``/``max_strategy`` are full joint strategies; the entries
    that matter are the min-player states of the former and the max-player
    states of the latter. ``round_ok[j]`` records the deterministic run
    invariants (monotone chain, clipped Q) for round j of the min chain.
    """

    min_strategy: np.ndarray
    max_strategy: np.ndarray | None
    value_estimate: np.ndarray
    u_schedule: list[float]
    round_constants: list[DerivedConstants]
    round_ok: list[bool]
    total_samples: int
    sequences: list[VSSequence] = field(default_factory=list)
    mirror_sequences: list[VSSequence] = field(default_factory=list)


def _halving_chain(model: GenerativeModel, epsilon: float, delta: float,
                   consts: QviConstants, keep_sequences: bool):
    beta = 1.0 / (1.0 - model.gamma)
    n_rounds = max(1, math.ceil(math.log2(beta / epsilon)))
    delta_round = delta / n_rounds
    v = np.full(model.n_states, beta)
    sigma = np.zeros(model.n_states, dtype=np.int64)
    schedule, constants, oks, seqs = [], [], [], []
    for j in range(n_rounds):
        u_j = beta / 2 ** j
        seq = qvi_mdvss(model, u_j, delta_round, v, sigma, consts)
        ok = bool((np.diff(seq.values, axis=0) <= 1e-12).all()
                  and (seq.q_values >= -1e-12).all()
                  and (seq.q_values <= beta + 1e-12).all())
        v, sigma = seq.terminal_value.copy(), seq.terminal_strategy.copy()
        schedule.append(u_j)
        constants.append(seq.constants)
        oks.append(ok)
        if keep_sequences:
            seqs.append(seq)
    return v, sigma, schedule, constants, oks, seqs


def solve(model: GenerativeModel, epsilon: float, delta: float,
          consts: QviConstants | None = None,
          both_players: bool = True,
          keep_sequences: bool = True) -> SolveResult:
    """Compute epsilon-optimal strategies from samples alone.

    Runs ceil(log2(beta/epsilon)) decreasing runs with u halved each time
    (u_j = beta / 2^j) and failure budget delta per run chain; the terminal
    strategy's min-player part is epsilon-optimal with probability at least
    1 - delta. The max player, when requested, comes from the identical
    chain on the role-swapped game.
    """
    if not (0.0 < epsilon < 1.0):
        raise ValueError("epsilon must lie in (0, 1)")
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    consts = consts or QviConstants()

    v, sigma, schedule, constants, oks, seqs = _halving_chain(
        model, epsilon, delta, consts, keep_sequences)

    max_strategy = None
    mirror_seqs: list[VSSequence] = []
    mirror_total = 0
    if both_players:
        mirrored = model.mirrored()
        _, max_strategy, _, _, _, mirror_seqs = _halving_chain(
            mirrored, epsilon, delta, consts, keep_sequences)
        mirror_total, _ = mirrored.sample_count()

    total, _ = model.sample_count()
    return SolveResult(
        min_strategy=sigma,
        max_strategy=max_strategy,
        value_estimate=v,
        u_schedule=schedule,
        round_constants=constants,
        round_ok=oks,
        total_samples=total + mirror_total,
        sequences=seqs,
        mirror_sequences=mirror_seqs,
    )
