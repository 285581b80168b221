"""Repeated-game simulation engine: selection, resolution, update, metrics.

One run is a sequential chain of timesteps; every proposer selects
simultaneously, one match is resolved, and each proposer updates from its own
event and utility alone.  Long summary-only runs dispatch to the compiled
integer kernel; traced runs use the object-level reference loop.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernel
from .learning import (
    DISCONTENT_STATE,
    AffineExponent,
    Mood,
    ProposerState,
    RuleParams,
    SelectionEvent,
    select_action,
    update_state,
)
from .market import (
    ENUMERATION_GUARD,
    Market,
    MatchOutcome,
    enumerate_stable_matches,
    gale_shapley,
    resolve_match,
    utility,
)

JointState = tuple


@dataclass(frozen=True)
class SimConfig:
    """One simulation run: market, rule parameters, horizon and bookkeeping.

    ``window`` is the final fraction of the horizon used for metrics.
    ``backend`` is ``auto`` (kernel for long summary-only runs), ``kernel``
    or ``reference``.
    """

    market: Market
    params: RuleParams
    steps: int
    seed: int
    window: float = 0.5
    record_trace: bool = False
    backend: str = "auto"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if not (0.0 < self.window <= 1.0):
            raise ValueError("window fraction must lie in (0, 1]")
        if self.backend not in ("auto", "kernel", "reference"):
            raise ValueError(f"unknown backend {self.backend!r}")


@dataclass(frozen=True)
class StepRecord:
    t: int
    events: tuple[SelectionEvent, ...]
    outcome: MatchOutcome
    utilities: tuple[float, ...]
    states: JointState  # states after the update


@dataclass(frozen=True)
class Metrics:
    """Window summary of one run; match keys use ``P1:A2|P2:-`` rendering."""

    posm_frequency: float
    time_to_first_posm: Optional[int]
    stable_frequency: Optional[float]
    mean_welfare: float
    match_visits: dict[str, int]
    modal_match: str
    posm_match: str

    def to_dict(self) -> dict:
        return {
            "posm_frequency": self.posm_frequency,
            "time_to_first_posm": self.time_to_first_posm,
            "stable_frequency": self.stable_frequency,
            "mean_welfare": self.mean_welfare,
            "modal_match": self.modal_match,
            "posm_match": self.posm_match,
            "match_visits": dict(sorted(self.match_visits.items())),
        }


@dataclass
class SimTrace:
    """Run output: metrics always, per-step records only when traced."""

    config: SimConfig
    metrics: Metrics
    records: Optional[list[StepRecord]]
    state_visits: dict[JointState, int]


def step(
    market: Market,
    states: Sequence[ProposerState],
    params: RuleParams,
    rngs: Sequence[np.random.Generator],
) -> tuple[tuple[SelectionEvent, ...], MatchOutcome, tuple[float, ...], JointState]:
    """One synchronous timestep; each update sees only its own event and utility."""
    events = tuple(
        select_action(s, params, market.acceptors, rng) for s, rng in zip(states, rngs)
    )
    outcome = resolve_match(market, [ev.action for ev in events])
    utilities = tuple(utility(market, p, outcome) for p in market.proposers)
    new_states = tuple(
        update_state(s, ev, u, params, rng)
        for s, ev, u, rng in zip(states, events, utilities, rngs)
    )
    return events, outcome, utilities, new_states


def _window_length(steps: int, window: float) -> int:
    return max(1, min(steps, round(steps * window)))


def _stable_pair_sets(market: Market) -> Optional[set[frozenset]]:
    if market.n > ENUMERATION_GUARD or market.m > ENUMERATION_GUARD:
        return None
    return {mu.pairs for mu in enumerate_stable_matches(market)}


def _describe_pairs(market: Market, partner: Sequence[Optional[str]]) -> str:
    return "|".join(
        f"{p}:{a if a is not None else '-'}" for p, a in zip(market.proposers, partner)
    )


def _build_metrics(
    market: Market,
    posm: MatchOutcome,
    match_counts: dict[str, int],
    stable_count: Optional[int],
    welfare_sum: float,
    first_posm: Optional[int],
    window_len: int,
) -> Metrics:
    posm_key = posm.describe()
    posm_count = match_counts.get(posm_key, 0)
    modal = max(sorted(match_counts), key=lambda k: match_counts[k]) if match_counts else ""
    return Metrics(
        posm_frequency=posm_count / window_len,
        time_to_first_posm=first_posm,
        stable_frequency=None if stable_count is None else stable_count / window_len,
        mean_welfare=welfare_sum / window_len,
        match_visits=match_counts,
        modal_match=modal,
        posm_match=posm_key,
    )


def _run_reference(config: SimConfig) -> SimTrace:
    market, params = config.market, config.params
    n = market.n
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(n)]
    states: JointState = tuple(DISCONTENT_STATE for _ in range(n))
    posm = gale_shapley(market)
    posm_pairs = posm.pairs
    stable_sets = _stable_pair_sets(market)
    window_len = _window_length(config.steps, config.window)
    window_start = config.steps - window_len

    records: Optional[list[StepRecord]] = [] if config.record_trace else None
    match_counts: dict[str, int] = {}
    state_visits: dict[JointState, int] = {}
    stable_count = 0 if stable_sets is not None else None
    welfare_sum = 0.0
    first_posm: Optional[int] = None

    for t in range(1, config.steps + 1):
        events, outcome, utilities, states = step(market, states, params, rngs)
        if first_posm is None and outcome.pairs == posm_pairs:
            first_posm = t
        if records is not None:
            records.append(StepRecord(t, events, outcome, utilities, states))
        if t > window_start:
            key = outcome.describe()
            match_counts[key] = match_counts.get(key, 0) + 1
            state_visits[states] = state_visits.get(states, 0) + 1
            welfare_sum += sum(utilities)
            if stable_sets is not None and outcome.pairs in stable_sets:
                stable_count += 1

    metrics = _build_metrics(
        market, posm, match_counts, stable_count, welfare_sum, first_posm, window_len
    )
    return SimTrace(config, metrics, records, state_visits)


def _match_code(market: Market, outcome: MatchOutcome) -> int:
    m = market.m
    code = 0
    mult = 1
    for p in market.proposers:
        a = outcome.proposer_partner[p]
        code += (m if a is None else market.acceptor_index[a]) * mult
        mult *= m + 1
    return code


def _utility_levels_array(market: Market) -> np.ndarray:
    levels = np.zeros((market.n, market.m + 1))
    for i, p in enumerate(market.proposers):
        levels[i] = [0.0] + sorted(market.proposer_prefs[p].values())
    return levels


def _decode_match(market: Market, codes: np.ndarray) -> list[tuple[int, ...]]:
    m = market.m
    digits = []
    rest = codes.copy()
    for _ in range(market.n):
        digits.append(rest % (m + 1))
        rest //= m + 1
    return digits  # one array of acceptor indices (m = unmatched) per proposer


def _decode_state(market: Market, code: int, levels: np.ndarray) -> JointState:
    m = market.m
    base_radix = 3 * (m + 1) * (m + 1)
    agents = []
    rest = int(code)
    moods = (Mood.CONTENT, Mood.DISCONTENT, Mood.WATCHFUL)
    for i in range(market.n):
        digit = rest % base_radix
        rest //= base_radix
        uidx = digit % (m + 1)
        digit //= m + 1
        b = digit % (m + 1)
        mood = moods[digit // (m + 1)]
        action = None if b == m else market.acceptors[b]
        if mood is Mood.DISCONTENT:
            agents.append(DISCONTENT_STATE)
        else:
            agents.append(ProposerState(mood, action, float(levels[i, uidx])))
    return tuple(agents)


def _run_kernel(config: SimConfig, jit: bool = True) -> SimTrace:
    market, params = config.market, config.params
    n, m = market.n, market.m
    if not isinstance(params.adopt_exp_content, AffineExponent) or not isinstance(
        params.adopt_exp_discontent, AffineExponent
    ):
        raise ValueError("kernel backend needs affine adoption exponents; use the reference backend")
    p_vals = np.array([[market.proposer_prefs[p][a] for a in market.acceptors] for p in market.proposers])
    a_vals = np.array([[market.acceptor_prefs[a][p] for p in market.proposers] for a in market.acceptors])
    levels = _utility_levels_array(market)
    posm = gale_shapley(market)
    posm_code = _match_code(market, posm)
    stable_sets = _stable_pair_sets(market)
    window_len = _window_length(config.steps, config.window)
    window_start = config.steps - window_len
    match_codes = np.zeros(window_len, dtype=np.int64)
    state_codes = np.zeros(window_len, dtype=np.int64)
    rng = np.random.default_rng(config.seed)

    first = _kernel.simulate_core(
        config.steps,
        window_start,
        n,
        m,
        params.epsilon,
        params.exclude_baseline_from_experiments,
        params.revert_keeps_baseline_utility,
        params.adopt_exp_discontent.intercept,
        params.adopt_exp_discontent.slope,
        params.adopt_exp_content.intercept,
        params.adopt_exp_content.slope,
        p_vals,
        a_vals,
        levels,
        posm_code,
        rng,
        match_codes,
        state_codes,
        jit=jit,
    )

    codes, counts = np.unique(match_codes, return_counts=True)
    partner_digits = _decode_match(market, codes)
    match_counts: dict[str, int] = {}
    stable_count = 0 if stable_sets is not None else None
    code_welfare = np.zeros(len(codes))
    for k in range(len(codes)):
        partner = [int(partner_digits[i][k]) for i in range(n)]
        names = [None if j == m else market.acceptors[j] for j in partner]
        match_counts[_describe_pairs(market, names)] = int(counts[k])
        code_welfare[k] = sum(p_vals[i, j] for i, j in enumerate(partner) if j < m)
        if stable_sets is not None:
            pairs = frozenset(
                (market.proposers[i], names[i]) for i in range(n) if names[i] is not None
            )
            if pairs in stable_sets:
                stable_count += int(counts[k])
    welfare_sum = float(code_welfare @ counts)

    scodes, scounts = np.unique(state_codes, return_counts=True)
    state_visits = {
        _decode_state(market, c, levels): int(cnt) for c, cnt in zip(scodes, scounts)
    }
    metrics = _build_metrics(
        market,
        posm,
        match_counts,
        stable_count,
        welfare_sum,
        None if first < 0 else int(first),
        window_len,
    )
    return SimTrace(config, metrics, None, state_visits)


def run(config: SimConfig) -> SimTrace:
    """Run one simulation from the all-discontent initial condition."""
    backend = config.backend
    if backend == "auto":
        kernel_ok = (
            not config.record_trace
            and config.steps >= 10_000
            and isinstance(config.params.adopt_exp_content, AffineExponent)
            and isinstance(config.params.adopt_exp_discontent, AffineExponent)
        )
        backend = "kernel" if kernel_ok else "reference"
    if backend == "kernel":
        if config.record_trace:
            raise ValueError("kernel backend does not record per-step traces")
        return _run_kernel(config)
    return _run_reference(config)


def batch_run(config: SimConfig, seeds: Sequence[int], jobs: int = 1) -> list[Metrics]:
    """Independent runs of the same configuration, one per seed."""
    configs = [
        SimConfig(
            config.market,
            config.params,
            config.steps,
            int(seed),
            config.window,
            config.record_trace,
            config.backend,
        )
        for seed in seeds
    ]
    if jobs > 1 and len(configs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return [trace.metrics for trace in pool.map(run, configs)]
    return [run(c).metrics for c in configs]
