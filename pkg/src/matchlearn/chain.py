"""Exact Markov-chain analysis of the learning rule on small markets.

Enumerates the joint state space, builds the exact epsilon-parametrized
transition matrix by marginalizing over every joint selection event, solves
for stationary distributions, and fits log-log resistance slopes of
elementary transitions against their predicted exponents.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import (
    GridTooSmallError,
    NotConvergedError,
    ReducibleError,
    TooLargeError,
    ZeroProbabilityError,
)
from .learning import (
    DISCONTENT_STATE,
    Mood,
    ProposerState,
    RuleParams,
    SelectionEvent,
    action_distribution,
    update_distribution,
)
from .market import (
    Market,
    MatchOutcome,
    best_response,
    gale_shapley,
    is_stable,
    resolve_match,
    utility,
)

JointState = tuple  # tuple[ProposerState, ...] aligned with Market.proposers

STATE_GUARD = 10**6
DIRECT_SOLVE_LIMIT = 5_000  # direct linear solve below, power iteration above


def proposer_utility_levels(market: Market, proposer: str) -> list[float]:
    """Admissible baseline utilities: 0 plus every preference value."""
    return [0.0] + sorted(market.proposer_prefs[proposer].values())


def _agent_states(market: Market, proposer: str) -> list[ProposerState]:
    levels = proposer_utility_levels(market, proposer)
    baselines: list = list(market.acceptors) + [None]
    states = [
        ProposerState(mood, base, u)
        for mood in (Mood.CONTENT, Mood.WATCHFUL)
        for base in baselines
        for u in levels
    ]
    states.append(DISCONTENT_STATE)  # the only triple a discontent mood allows
    return states


def enumerate_states(market: Market, guard: int = STATE_GUARD) -> list[JointState]:
    """Complete joint state space (discontent-invariant combinations pruned)."""
    per_agent = [_agent_states(market, p) for p in market.proposers]
    total = math.prod(len(s) for s in per_agent)
    if total > guard:
        raise TooLargeError(f"joint state space has {total} states (guard {guard})")
    return [tuple(joint) for joint in itertools.product(*per_agent)]


@dataclass
class PerturbedChain:
    """Enumerated state space with the exact transition matrix at one epsilon."""

    market: Market
    params: RuleParams
    states: list[JointState]
    index: dict[JointState, int]
    matrix: sp.csr_matrix

    @property
    def epsilon(self) -> float:
        return self.params.epsilon

    def transition_probability(self, source: JointState, target: JointState) -> float:
        return float(self.matrix[self.index[source], self.index[target]])


def step_distribution(market: Market, params: RuleParams, state: JointState) -> dict[JointState, float]:
    """Exact one-step distribution over joint states from ``state``.

    Marginalizes over the product of per-agent selection events, resolves the
    match once per joint event, then composes the per-agent update
    distributions (each agent sees only its own event and utility).
    """
    acceptors = market.acceptors
    event_dists = [list(action_distribution(s, params, acceptors).items()) for s in state]
    row: dict[JointState, float] = {}
    for joint in itertools.product(*event_dists):
        q = 1.0
        for _, p in joint:
            q *= p
        if q == 0.0:
            continue
        events = [ev for ev, _ in joint]
        outcome = resolve_match(market, [ev.action for ev in events])
        branches = []
        for s, ev, proposer in zip(state, events, market.proposers):
            u = utility(market, proposer, outcome)
            branches.append(list(update_distribution(s, ev, u, params).items()))
        for combo in itertools.product(*branches):
            prob = q
            for _, p in combo:
                prob *= p
            if prob == 0.0:
                continue
            target = tuple(s for s, _ in combo)
            row[target] = row.get(target, 0.0) + prob
    return row


def build_chain(market: Market, params: RuleParams, guard: int = STATE_GUARD) -> PerturbedChain:
    """Exact transition matrix over the full enumerated state space."""
    states = enumerate_states(market, guard)
    index = {s: i for i, s in enumerate(states)}
    data, rows, cols = [], [], []
    for i, state in enumerate(states):
        row = step_distribution(market, params, state)
        total = 0.0
        for target, prob in row.items():
            rows.append(i)
            cols.append(index[target])
            data.append(prob)
            total += prob
        if abs(total - 1.0) > 1e-12:
            raise NotConvergedError(f"row {i} sums to {total!r}, expected 1")
    matrix = sp.csr_matrix((data, (rows, cols)), shape=(len(states), len(states)))
    return PerturbedChain(market, params, states, index, matrix)


def _closed_classes(matrix: sp.csr_matrix) -> tuple[np.ndarray, list[int]]:
    """Strongly connected components and the labels of the closed ones."""
    n_comp, labels = connected_components(matrix, directed=True, connection="strong")
    open_labels = set()
    coo = matrix.tocoo()
    for i, j, v in zip(coo.row, coo.col, coo.data):
        if v > 0.0 and labels[i] != labels[j]:
            open_labels.add(labels[i])
    closed = [c for c in range(n_comp) if c not in open_labels]
    return labels, closed


def solve_stationary(
    matrix: sp.csr_matrix | np.ndarray,
    method: str = "auto",
    tol: float = 1e-10,
    max_iter: int = 2_000_000,
) -> np.ndarray:
    """Stationary distribution of a row-stochastic matrix.

    The chain may contain transient states; the solver restricts to the closed
    communicating class (raising ``ReducibleError`` if there is more than one,
    where no unique stationary distribution exists) and reports zeros on
    transient states.
    """
    P = sp.csr_matrix(matrix)
    n = P.shape[0]
    labels, closed = _closed_classes(P)
    if len(closed) != 1:
        raise ReducibleError(f"{len(closed)} closed communicating classes; stationary distribution not unique")
    members = np.flatnonzero(labels == closed[0])
    Pc = P[members][:, members]
    k = len(members)
    if method == "auto":
        method = "direct" if k <= DIRECT_SOLVE_LIMIT else "power"
    if method == "direct":
        A = Pc.toarray().T - np.eye(k)
        A[-1, :] = 1.0
        b = np.zeros(k)
        b[-1] = 1.0
        pi_c = np.linalg.solve(A, b)
        pi_c = np.clip(pi_c, 0.0, None)
        pi_c /= pi_c.sum()
    elif method == "power":
        pi_c = np.full(k, 1.0 / k)
        PcT = Pc.T.tocsr()
        for it in range(0, max_iter, 50):
            for _ in range(50):
                pi_c = PcT @ pi_c
            pi_c /= pi_c.sum()
            if np.max(np.abs(PcT @ pi_c - pi_c)) <= tol:
                break
        else:
            raise NotConvergedError(f"power iteration missed residual {tol} after {max_iter} iterations")
    else:
        raise ValueError(f"unknown method {method!r}")
    pi = np.zeros(n)
    pi[members] = pi_c
    residual = np.max(np.abs(pi @ P - pi))
    if residual > tol:
        raise NotConvergedError(f"stationary residual {residual:.3e} exceeds {tol}")
    return pi


def stationary_distribution(
    chain: PerturbedChain, method: str = "auto", tol: float = 1e-10, max_iter: int = 2_000_000
) -> np.ndarray:
    """Stationary distribution over ``chain.states`` (zeros on transient states)."""
    return solve_stationary(chain.matrix, method=method, tol=tol, max_iter=max_iter)


def stationary_residual(chain: PerturbedChain, pi: np.ndarray) -> float:
    return float(np.max(np.abs(pi @ chain.matrix - pi)))


def recurrent_class(chain: PerturbedChain) -> np.ndarray:
    """Indices of the unique closed communicating class (the recurrent states)."""
    labels, closed = _closed_classes(chain.matrix)
    if len(closed) != 1:
        raise ReducibleError(f"{len(closed)} closed communicating classes")
    return np.flatnonzero(labels == closed[0])


def baseline_profile(state: JointState) -> tuple:
    return tuple(s.baseline_action for s in state)


def is_settled(market: Market, state: JointState) -> bool:
    """No watchful agent and every baseline utility equals what baseline play yields.

    These are exactly the absorbing states of the experiment-free process:
    replaying the baselines reproduces each baseline utility, so nothing moves.
    """
    if any(s.mood is Mood.WATCHFUL for s in state):
        return False
    outcome = resolve_match(market, baseline_profile(state))
    return all(
        utility(market, p, outcome) == s.baseline_utility
        for p, s in zip(market.proposers, state)
    )


def unperturbed_step(market: Market, state: JointState) -> JointState:
    """One step of the experiment-free process (deterministic).

    Everyone replays their baseline; watchful agents resolve, content agents
    track realized utility or turn watchful.  Any epsilon gives the same map.
    """
    params = RuleParams(epsilon=0.25)  # inert: no experiment branches are taken
    events = [SelectionEvent(s.baseline_action, False) for s in state]
    outcome = resolve_match(market, [ev.action for ev in events])
    new = []
    for s, ev, p in zip(state, events, market.proposers):
        dist = update_distribution(s, ev, utility(market, p, outcome), params)
        assert len(dist) == 1
        new.append(next(iter(dist)))
    return tuple(new)


def unperturbed_absorption(market: Market, state: JointState, max_steps: int = 50) -> tuple[JointState, int]:
    """Follow the experiment-free flow until it settles; returns (state, steps).

    Absorption is guaranteed: baselines only ever change by watchful agents
    dropping to single, so after at most n drops the profile freezes and
    utilities realign within two further steps.
    """
    current = state
    for k in range(max_steps + 1):
        if is_settled(market, current):
            return current, k
        current = unperturbed_step(market, current)
    raise NotConvergedError(f"unperturbed flow failed to settle within {max_steps} steps")


@dataclass
class StatePartition:
    """Classification of the settled states, plus the proposer-optimal target set.

    ``matched_improvable``: a matched proposer is not best-responding;
    ``searching``: matched proposers all best-respond but someone is unmatched
    and could enter; ``stable``: the baseline profile induces a stable match.
    ``posm_states`` collects every state (settled or not) whose baseline
    profile induces the proposer-optimal stable match with matched proposers
    content and unmatched ones discontent.
    """

    settled: list[int]
    matched_improvable: list[int]
    searching: list[int]
    stable: list[int]
    posm_states: list[int]
    posm_match: MatchOutcome


def classify_states(market: Market, states: Sequence[JointState]) -> StatePartition:
    posm = gale_shapley(market)
    posm_pairs = posm.pairs
    settled, improvable, searching, stable, posm_states = [], [], [], [], []
    for idx, state in enumerate(states):
        profile = baseline_profile(state)
        outcome = resolve_match(market, profile)
        if outcome.pairs == posm_pairs:
            consistent = all(
                (s.mood is Mood.CONTENT)
                if outcome.proposer_partner[p] is not None
                else (s.mood is Mood.DISCONTENT)
                for p, s in zip(market.proposers, state)
            )
            if consistent:
                posm_states.append(idx)
        if any(s.mood is Mood.WATCHFUL for s in state):
            continue
        utils = [utility(market, p, outcome) for p in market.proposers]
        if any(u != s.baseline_utility for u, s in zip(utils, state)):
            continue
        settled.append(idx)
        if is_stable(market, outcome):
            stable.append(idx)
            continue
        some_matched_improvable = False
        for p, u in zip(market.proposers, utils):
            if outcome.proposer_partner[p] is None:
                continue
            br = best_response(market, p, profile)
            if market.proposer_value(p, br) > u:
                some_matched_improvable = True
                break
        if some_matched_improvable:
            improvable.append(idx)
        else:
            searching.append(idx)
    return StatePartition(settled, improvable, searching, stable, posm_states, posm)


def posm_mass(chain: PerturbedChain, pi: np.ndarray, partition: StatePartition) -> float:
    """Stationary mass on states whose baselines are the proposer-optimal match."""
    return float(pi[partition.posm_states].sum())


def posm_mass_sweep(
    market: Market, params: RuleParams, epsilons: Sequence[float], method: str = "auto"
) -> list[tuple[float, float, float]]:
    """(epsilon, posm mass, residual) rows for a sweep, in the given order."""
    rows = []
    partition = None
    for eps in epsilons:
        chain = build_chain(market, params.with_epsilon(eps))
        pi = stationary_distribution(chain, method=method)
        if partition is None:  # the state enumeration is epsilon-independent
            partition = classify_states(market, chain.states)
        rows.append((eps, posm_mass(chain, pi, partition), stationary_residual(chain, pi)))
    return rows


RESISTANCE_KINDS = ("content_adopt", "discontent_adopt", "content_remain_single", "double_experiment")


def theoretical_resistance(kind: str, value: float, params: RuleParams) -> float:
    """Predicted order (exponent of epsilon) of an elementary transition.

    ``value`` is the utility gain for a content adoption, the landed utility
    for a discontent adoption, and ignored for the two order-2 kinds.
    """
    if kind == "content_adopt":
        return 1.0 + params.adopt_exp_content(value)
    if kind == "discontent_adopt":
        return 1.5 + params.adopt_exp_discontent(value)
    if kind in ("content_remain_single", "double_experiment"):
        return 2.0
    raise ValueError(f"unknown transition kind {kind!r}")


@dataclass(frozen=True)
class ElementaryTransition:
    """A single-step transition engineered to have one dominant resistance."""

    kind: str
    source: JointState
    target: JointState
    value: float  # utility gain (content) or landed utility (discontent); 0 otherwise
    theory: float


def _baseline_event(state: ProposerState) -> SelectionEvent:
    return SelectionEvent(state.baseline_action, False)


def _experiment_support(state: ProposerState, market: Market, params: RuleParams) -> list[str]:
    dist = action_distribution(state, params, market.acceptors)
    return [ev.action for ev in dist if ev.experimented and ev.action is not None]


def _others_unchanged(
    market: Market, params: RuleParams, state: JointState, events: list[SelectionEvent], actors: set[int]
) -> Optional[list[float]]:
    """Utilities if the joint event leaves every non-actor exactly in place."""
    outcome = resolve_match(market, [ev.action for ev in events])
    utils = [utility(market, p, outcome) for p in market.proposers]
    for i, (s, ev) in enumerate(zip(state, events)):
        if i in actors:
            continue
        dist = update_distribution(s, ev, utils[i], params)
        if len(dist) != 1 or next(iter(dist)) != s:
            return None
    return utils


def elementary_transitions(
    market: Market,
    params: RuleParams,
    kinds: Iterable[str] = RESISTANCE_KINDS,
    max_per_kind: Optional[int] = None,
) -> list[ElementaryTransition]:
    """Construct elementary transitions programmatically from settled states.

    Each transition is one joint selection event out of a settled state in
    which designated actors experiment while everyone else replays baselines
    unchanged, filtered so no lower-order event reaches the same target; its
    one-step probability then scales as epsilon to the predicted resistance.
    """
    kinds = list(kinds)
    states = enumerate_states(market)
    partition = classify_states(market, states)
    found: dict[str, list[ElementaryTransition]] = {k: [] for k in kinds}
    seen: set[tuple] = set()

    def add(kind: str, source: JointState, target: JointState, value: float) -> None:
        key = (kind, source, target)
        if key in seen or source == target:
            return
        seen.add(key)
        found[kind].append(
            ElementaryTransition(kind, source, target, value, theoretical_resistance(kind, value, params))
        )

    for idx in partition.settled:
        state = states[idx]
        base_events = [_baseline_event(s) for s in state]
        for i, agent_state in enumerate(state):
            if agent_state.mood is Mood.CONTENT:
                support = _experiment_support(agent_state, market, params)
                if "content_adopt" in kinds:
                    for a in support:
                        events = list(base_events)
                        events[i] = SelectionEvent(a, True)
                        utils = _others_unchanged(market, params, state, events, {i})
                        if utils is None or utils[i] <= agent_state.baseline_utility:
                            continue
                        adopted = ProposerState(Mood.CONTENT, a, utils[i])
                        target = state[:i] + (adopted,) + state[i + 1 :]
                        add("content_adopt", state, target, utils[i] - agent_state.baseline_utility)
                if "content_remain_single" in kinds and agent_state.baseline_utility > 0.0:
                    # any rejected acceptor-experiment would reach the same
                    # (baseline, 0) component at order 1 and swamp the slope
                    contaminated = False
                    for a in support:
                        events = list(base_events)
                        events[i] = SelectionEvent(a, True)
                        outcome = resolve_match(market, [ev.action for ev in events])
                        if utility(market, market.proposers[i], outcome) == 0.0:
                            contaminated = True
                            break
                    if not contaminated:
                        events = list(base_events)
                        events[i] = SelectionEvent(None, True)
                        utils = _others_unchanged(market, params, state, events, {i})
                        if utils is not None:
                            dropped = ProposerState(Mood.CONTENT, agent_state.baseline_action, 0.0)
                            target = state[:i] + (dropped,) + state[i + 1 :]
                            add("content_remain_single", state, target, 0.0)
            elif agent_state.mood is Mood.DISCONTENT and "discontent_adopt" in kinds:
                for a in market.acceptors:
                    events = list(base_events)
                    events[i] = SelectionEvent(a, True)
                    utils = _others_unchanged(market, params, state, events, {i})
                    if utils is None or utils[i] <= 0.0:
                        continue
                    adopted = ProposerState(Mood.CONTENT, a, utils[i])
                    target = state[:i] + (adopted,) + state[i + 1 :]
                    add("discontent_adopt", state, target, utils[i])
        if "double_experiment" in kinds:
            content_idx = [i for i, s in enumerate(state) if s.mood is Mood.CONTENT]
            for i, k in itertools.combinations(content_idx, 2):
                for a_i in _experiment_support(state[i], market, params):
                    for a_k in _experiment_support(state[k], market, params):
                        events = list(base_events)
                        events[i] = SelectionEvent(a_i, True)
                        events[k] = SelectionEvent(a_k, True)
                        utils = _others_unchanged(market, params, state, events, {i, k})
                        if utils is None:
                            continue
                        # both must strictly drop: a strict drop can only come
                        # from the agent's own failed experiment, so no
                        # single-experiment event reaches the same target
                        if not (
                            utils[i] < state[i].baseline_utility and utils[k] < state[k].baseline_utility
                        ):
                            continue
                        comp_i = ProposerState(Mood.CONTENT, state[i].baseline_action, utils[i])
                        comp_k = ProposerState(Mood.CONTENT, state[k].baseline_action, utils[k])
                        target = list(state)
                        target[i] = comp_i
                        target[k] = comp_k
                        add("double_experiment", state, tuple(target), 0.0)

    result = []
    for kind in kinds:
        picks = found[kind]
        if max_per_kind is not None:
            picks = picks[:max_per_kind]
        result.extend(picks)
    return result


def chain_family(market: Market, params: RuleParams, epsilons: Sequence[float]) -> list[PerturbedChain]:
    """One chain per epsilon, sharing the market and state enumeration order."""
    return [build_chain(market, params.with_epsilon(eps)) for eps in epsilons]


def resistance_slope(chains: Sequence[PerturbedChain], source: JointState, target: JointState) -> float:
    """Least-squares slope of log transition probability against log epsilon."""
    if len(chains) < 4:
        raise GridTooSmallError(f"slope fit needs at least 4 epsilon points, got {len(chains)}")
    probs = []
    for chain in chains:
        p = chain.transition_probability(source, target)
        if p <= 0.0:
            raise ZeroProbabilityError(
                f"transition has probability 0 at epsilon={chain.epsilon}; cannot fit a slope"
            )
        probs.append(p)
    eps = np.array([chain.epsilon for chain in chains])
    slope, _ = np.polyfit(np.log(eps), np.log(np.array(probs)), 1)
    return float(slope)


@dataclass(frozen=True)
class SlopeFit:
    kind: str
    value: float
    theory: float
    fitted: float

    @property
    def abs_error(self) -> float:
        return abs(self.fitted - self.theory)


def fit_elementary_slopes(
    market: Market,
    params: RuleParams,
    epsilons: Sequence[float],
    kinds: Iterable[str] = RESISTANCE_KINDS,
    max_per_kind: Optional[int] = None,
) -> list[SlopeFit]:
    """Fit every constructed elementary transition over the epsilon grid."""
    transitions = elementary_transitions(market, params, kinds, max_per_kind)
    chains = chain_family(market, params, epsilons)
    return [
        SlopeFit(t.kind, t.value, t.theory, resistance_slope(chains, t.source, t.target))
        for t in transitions
    ]
