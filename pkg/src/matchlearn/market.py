"""Static two-sided matching market: preferences, matches, stability oracles.

Proposers propose, acceptors deterministically take their favorite incoming
proposal.  Preferences are strict cardinal orderings with values in (0, 1];
being unmatched is worth exactly 0 to everyone.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    DuplicateValueError,
    EmptySideError,
    IncompleteOrderingError,
    MarketFormatError,
    NoConvergenceError,
    NotMatchedError,
    OutOfRangeValueError,
    TooLargeError,
)

# A proposer action is the id of the acceptor proposed to, or None to stay single.
Action = Optional[str]
ActionProfile = tuple  # tuple[Action, ...], aligned with Market.proposers

ENUMERATION_GUARD = 8  # exhaustive match enumeration refuses larger sides
NASH_GUARD = 4         # exhaustive (m+1)^n profile scans refuse larger sides


def rank_value(rank: int, m: int) -> float:
    """Cardinal value for ordinal rank ``rank`` (1 = best) out of ``m`` options."""
    return (m - rank + 1) / m


@dataclass(frozen=True)
class Market:
    """Immutable market instance. Build through ``validate_market`` or helpers.

    ``proposer_prefs[p][a]`` is proposer p's cardinal value for acceptor a,
    ``acceptor_prefs[a][p]`` the mirror image.  Treat instances as read-only.
    """

    proposers: tuple[str, ...]
    acceptors: tuple[str, ...]
    proposer_prefs: dict[str, dict[str, float]]
    acceptor_prefs: dict[str, dict[str, float]]

    @property
    def n(self) -> int:
        return len(self.proposers)

    @property
    def m(self) -> int:
        return len(self.acceptors)

    @cached_property
    def proposer_index(self) -> dict[str, int]:
        return {p: i for i, p in enumerate(self.proposers)}

    @cached_property
    def acceptor_index(self) -> dict[str, int]:
        return {a: j for j, a in enumerate(self.acceptors)}

    @cached_property
    def preference_order(self) -> dict[str, list[str]]:
        """Acceptors sorted best-first for each proposer."""
        return {
            p: sorted(self.acceptors, key=lambda a: -self.proposer_prefs[p][a])
            for p in self.proposers
        }

    def proposer_value(self, proposer: str, acceptor: Action) -> float:
        """Value of a partner to a proposer; None (unmatched) is worth 0."""
        if acceptor is None:
            return 0.0
        return self.proposer_prefs[proposer][acceptor]

    def acceptor_value(self, acceptor: str, proposer: Optional[str]) -> float:
        if proposer is None:
            return 0.0
        return self.acceptor_prefs[acceptor][proposer]


@dataclass(frozen=True)
class MatchOutcome:
    """A partial one-to-one pairing, indexed from both sides for O(1) lookups."""

    proposer_partner: dict[str, Optional[str]]
    acceptor_partner: dict[str, Optional[str]]

    @property
    def pairs(self) -> frozenset[tuple[str, str]]:
        return frozenset(
            (p, a) for p, a in self.proposer_partner.items() if a is not None
        )

    def describe(self) -> str:
        """Canonical compact rendering, e.g. ``P1:A2|P2:A1|P3:-``."""
        return "|".join(
            f"{p}:{a if a is not None else '-'}"
            for p, a in sorted(self.proposer_partner.items())
        )


def match_from_pairs(market: Market, pairs) -> MatchOutcome:
    """Build a MatchOutcome from (proposer, acceptor) pairs."""
    proposer_partner: dict[str, Optional[str]] = {p: None for p in market.proposers}
    acceptor_partner: dict[str, Optional[str]] = {a: None for a in market.acceptors}
    for p, a in pairs:
        if proposer_partner.get(p, "missing") is not None or acceptor_partner.get(a, "missing") is not None:
            raise MarketFormatError(f"pair ({p}, {a}) conflicts with another pair or names an unknown agent")
        proposer_partner[p] = a
        acceptor_partner[a] = p
    return MatchOutcome(proposer_partner, acceptor_partner)


def _convert_prefs(side_name: str, agents: Sequence[str], others: Sequence[str], raw: Mapping) -> dict[str, dict[str, float]]:
    """Normalize one side's preference block; ordered lists get rank values."""
    others_set = set(others)
    prefs: dict[str, dict[str, float]] = {}
    for agent in agents:
        if agent not in raw:
            raise IncompleteOrderingError(f"{side_name} {agent!r} has no preference entry")
        entry = raw[agent]
        if isinstance(entry, Mapping):
            values = {str(k): float(v) for k, v in entry.items()}
        elif isinstance(entry, Sequence) and not isinstance(entry, (str, bytes)):
            order = [str(x) for x in entry]
            if len(set(order)) != len(order):
                raise IncompleteOrderingError(f"{side_name} {agent!r} lists a partner twice")
            values = {x: rank_value(r + 1, len(order)) for r, x in enumerate(order)}
        else:
            raise MarketFormatError(f"{side_name} {agent!r}: preferences must be a list or a map")
        if set(values) != others_set:
            raise IncompleteOrderingError(
                f"{side_name} {agent!r} must rank exactly {sorted(others_set)}, got {sorted(values)}"
            )
        for other, v in values.items():
            if not (0.0 < v <= 1.0):
                raise OutOfRangeValueError(f"{side_name} {agent!r} values {other!r} at {v}; values must lie in (0, 1]")
        if len(set(values.values())) != len(values):
            raise DuplicateValueError(f"{side_name} {agent!r} assigns the same value to two partners")
        prefs[agent] = values
    return prefs


def validate_market(raw: Mapping) -> Market:
    """Validate a raw market description (see README for the JSON schema)."""
    try:
        proposers = tuple(str(p) for p in raw["proposers"])
        acceptors = tuple(str(a) for a in raw["acceptors"])
        raw_pp = raw["proposer_prefs"]
        raw_ap = raw["acceptor_prefs"]
    except (KeyError, TypeError) as exc:
        raise MarketFormatError(f"market description missing required field: {exc}") from exc
    if not proposers or not acceptors:
        raise EmptySideError("market needs at least one proposer and one acceptor")
    if len(set(proposers)) != len(proposers) or len(set(acceptors)) != len(acceptors):
        raise MarketFormatError("agent ids must be unique within each side")
    if set(proposers) & set(acceptors):
        raise MarketFormatError("an id may not appear on both sides")
    return Market(
        proposers=proposers,
        acceptors=acceptors,
        proposer_prefs=_convert_prefs("proposer", proposers, acceptors, raw_pp),
        acceptor_prefs=_convert_prefs("acceptor", acceptors, proposers, raw_ap),
    )


def market_from_ranks(proposer_order: Mapping[str, Sequence[str]], acceptor_order: Mapping[str, Sequence[str]]) -> Market:
    """Build a market from best-first ordinal lists."""
    return validate_market(
        {
            "proposers": list(proposer_order),
            "acceptors": list(acceptor_order),
            "proposer_prefs": dict(proposer_order),
            "acceptor_prefs": dict(acceptor_order),
        }
    )


def market_to_dict(market: Market) -> dict:
    return {
        "proposers": list(market.proposers),
        "acceptors": list(market.acceptors),
        "proposer_prefs": {p: dict(v) for p, v in market.proposer_prefs.items()},
        "acceptor_prefs": {a: dict(v) for a, v in market.acceptor_prefs.items()},
    }


def load_market(path) -> Market:
    """Read and validate a market JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MarketFormatError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return validate_market(raw)


def save_market(market: Market, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(market_to_dict(market), fh, indent=2, sort_keys=True)
        fh.write("\n")


def random_market(n: int, m: int, seed: int, mode: str = "rank") -> Market:
    """Seeded random market. ``rank`` mode draws random ordinal lists and uses
    the rank formula; ``uniform`` mode draws distinct uniform values in (0, 1]."""
    if n < 1 or m < 1:
        raise EmptySideError("n and m must be at least 1")
    if mode not in ("rank", "uniform"):
        raise MarketFormatError(f"unknown cardinalization mode {mode!r}")
    rng = np.random.default_rng(seed)
    proposers = [f"P{i + 1}" for i in range(n)]
    acceptors = [f"A{j + 1}" for j in range(m)]

    def draw(options: list[str]) -> dict[str, float] | list[str]:
        order = [options[k] for k in rng.permutation(len(options))]
        if mode == "rank":
            return order
        while True:
            vals = 1.0 - rng.random(len(options))  # in (0, 1]
            if len(set(vals.tolist())) == len(options):
                break
        return {x: float(v) for x, v in zip(order, vals)}

    return validate_market(
        {
            "proposers": proposers,
            "acceptors": acceptors,
            "proposer_prefs": {p: draw(acceptors) for p in proposers},
            "acceptor_prefs": {a: draw(proposers) for a in acceptors},
        }
    )


def _check_profile(market: Market, profile: Sequence[Action]) -> None:
    if len(profile) != market.n:
        raise MarketFormatError(f"action profile has {len(profile)} entries for {market.n} proposers")
    for act in profile:
        if act is not None and act not in market.acceptor_index:
            raise MarketFormatError(f"action proposes to unknown acceptor {act!r}")


def resolve_match(market: Market, profile: Sequence[Action]) -> MatchOutcome:
    """Each acceptor takes its favorite incoming proposal; everyone else is unmatched."""
    _check_profile(market, profile)
    best: dict[str, str] = {}
    for p, act in zip(market.proposers, profile):
        if act is None:
            continue
        cur = best.get(act)
        if cur is None or market.acceptor_prefs[act][p] > market.acceptor_prefs[act][cur]:
            best[act] = p
    proposer_partner: dict[str, Optional[str]] = {p: None for p in market.proposers}
    acceptor_partner: dict[str, Optional[str]] = {a: None for a in market.acceptors}
    for a, p in best.items():
        acceptor_partner[a] = p
        proposer_partner[p] = a
    return MatchOutcome(proposer_partner, acceptor_partner)


def utility(market: Market, proposer: str, outcome: MatchOutcome) -> float:
    """Proposer's value for their partner in the outcome (0 if unmatched)."""
    return market.proposer_value(proposer, outcome.proposer_partner[proposer])


def profile_utilities(market: Market, profile: Sequence[Action]) -> tuple[float, ...]:
    outcome = resolve_match(market, profile)
    return tuple(utility(market, p, outcome) for p in market.proposers)


def welfare(market: Market, profile: Sequence[Action]) -> float:
    """Sum of proposer utilities under the profile."""
    return sum(profile_utilities(market, profile))


def blocking_pairs(market: Market, outcome: MatchOutcome) -> set[tuple[str, str]]:
    """All (proposer, acceptor) pairs who each prefer the other to their partner."""
    pairs = set()
    for p in market.proposers:
        u_p = market.proposer_value(p, outcome.proposer_partner[p])
        for a in market.acceptors:
            if market.proposer_prefs[p][a] > u_p and market.acceptor_prefs[a][p] > market.acceptor_value(
                a, outcome.acceptor_partner[a]
            ):
                pairs.add((p, a))
    return pairs


def is_stable(market: Market, outcome: MatchOutcome) -> bool:
    return not blocking_pairs(market, outcome)


def gale_shapley(market: Market) -> MatchOutcome:
    """Proposer-proposing deferred acceptance.

    Returns the proposer-optimal stable match: the unique stable match every
    proposer weakly prefers to every other stable match.
    """
    order = market.preference_order
    next_choice = {p: 0 for p in market.proposers}
    held: dict[str, str] = {}
    free = list(reversed(market.proposers))
    while free:
        p = free.pop()
        prefs = order[p]
        while next_choice[p] < len(prefs):
            a = prefs[next_choice[p]]
            next_choice[p] += 1
            cur = held.get(a)
            if cur is None:
                held[a] = p
                break
            if market.acceptor_prefs[a][p] > market.acceptor_prefs[a][cur]:
                held[a] = p
                free.append(cur)
                break
        # a proposer rejected everywhere stays unmatched
    return match_from_pairs(market, [(p, a) for a, p in held.items()])


def _enumerate_matches(market: Market) -> Iterator[MatchOutcome]:
    """All partial injective pairings between proposers and acceptors."""
    acceptors = market.acceptors

    def extend(i: int, used: set[str], chosen: list[tuple[str, str]]):
        if i == market.n:
            yield match_from_pairs(market, chosen)
            return
        p = market.proposers[i]
        yield from extend(i + 1, used, chosen)
        for a in acceptors:
            if a not in used:
                used.add(a)
                chosen.append((p, a))
                yield from extend(i + 1, used, chosen)
                chosen.pop()
                used.remove(a)

    yield from extend(0, set(), [])


def enumerate_stable_matches(market: Market) -> list[MatchOutcome]:
    """Exhaustively list every stable match. Guarded to small markets."""
    if market.n > ENUMERATION_GUARD or market.m > ENUMERATION_GUARD:
        raise TooLargeError(
            f"exhaustive enumeration refuses n={market.n}, m={market.m} (guard {ENUMERATION_GUARD})"
        )
    return [mu for mu in _enumerate_matches(market) if is_stable(market, mu)]


def best_response(market: Market, proposer: str, profile: Sequence[Action]) -> Action:
    """Best action for the proposer holding everyone else's actions fixed.

    Proposes to the best acceptor who would take them over the competing
    proposals; None (stay single) when nobody would, since then every action
    yields 0 and single is the canonical choice.
    """
    _check_profile(market, profile)
    i = market.proposer_index[proposer]
    best_action: Action = None
    best_u = 0.0
    for a in market.acceptors:
        mine = market.acceptor_prefs[a][proposer]
        accepted = True
        for k, act in enumerate(profile):
            if k != i and act == a and market.acceptor_prefs[a][market.proposers[k]] > mine:
                accepted = False
                break
        if accepted:
            u = market.proposer_prefs[proposer][a]
            if u > best_u:
                best_action, best_u = a, u
    return best_action


@dataclass(frozen=True)
class BrStep:
    """One update of the best-response schedule."""

    phase: int  # 1 = matched proposer improving, 2 = unmatched proposer entering
    proposer: str
    action: Action


def br_dynamics(market: Market, profile: Sequence[Action], max_steps: int = 10_000) -> tuple[ActionProfile, list[BrStep]]:
    """Sequential best-response dynamics, lowest proposer index first.

    Matched proposers who can strictly improve move first (phase 1); once none
    remain, the first unmatched proposer some acceptor would take moves
    (phase 2).  Stops when nobody can strictly improve.
    """
    current = tuple(profile)
    _check_profile(market, current)
    steps: list[BrStep] = []
    for _ in range(max_steps):
        outcome = resolve_match(market, current)
        mover = None
        phase = None
        for p in market.proposers:  # phase 1
            if outcome.proposer_partner[p] is None:
                continue
            br = best_response(market, p, current)
            if market.proposer_value(p, br) > utility(market, p, outcome):
                mover, phase, action = p, 1, br
                break
        if mover is None:
            for p in market.proposers:  # phase 2
                if outcome.proposer_partner[p] is not None:
                    continue
                br = best_response(market, p, current)
                if br is not None:
                    mover, phase, action = p, 2, br
                    break
        if mover is None:
            return current, steps
        i = market.proposer_index[mover]
        current = current[:i] + (action,) + current[i + 1 :]
        steps.append(BrStep(phase, mover, action))
    raise NoConvergenceError(f"best-response dynamics still moving after {max_steps} steps")


def canonical_profile(market: Market, outcome: MatchOutcome) -> ActionProfile:
    """Profile where matched proposers propose to their partner, the rest stay single."""
    return tuple(outcome.proposer_partner[p] for p in market.proposers)


def near_stable_profile(market: Market, outcome: MatchOutcome, proposer: str) -> ActionProfile:
    """The stable match's profile with one matched proposer withdrawn to single."""
    if outcome.proposer_partner[proposer] is None:
        raise NotMatchedError(f"{proposer} is unmatched in the given match")
    profile = list(canonical_profile(market, outcome))
    profile[market.proposer_index[proposer]] = None
    return tuple(profile)


@dataclass(frozen=True)
class NashWelfareReport:
    """Exhaustive pure-Nash scan results for a small market."""

    nash_profiles: tuple[ActionProfile, ...]
    unstable_nash_profiles: tuple[ActionProfile, ...]
    all_nash_stable: bool
    posm_profile: ActionProfile
    posm_is_nash: bool
    posm_welfare: float
    max_nash_welfare: float
    posm_welfare_maximal: bool


def nash_and_welfare_check(market: Market) -> NashWelfareReport:
    """Scan all (m+1)^n profiles for pure Nash equilibria and check that each
    induces a stable match and that the proposer-optimal profile tops welfare."""
    if market.n > NASH_GUARD or market.m > NASH_GUARD:
        raise TooLargeError(f"profile scan refuses n={market.n}, m={market.m} (guard {NASH_GUARD})")
    actions: list[Action] = [None] + list(market.acceptors)
    nash: list[ActionProfile] = []
    unstable: list[ActionProfile] = []
    for profile in itertools.product(actions, repeat=market.n):
        outcome = resolve_match(market, profile)
        is_nash = True
        for p in market.proposers:
            br = best_response(market, p, profile)
            if market.proposer_value(p, br) > utility(market, p, outcome):
                is_nash = False
                break
        if is_nash:
            nash.append(profile)
            if not is_stable(market, outcome):
                unstable.append(profile)
    posm = canonical_profile(market, gale_shapley(market))
    posm_welfare = welfare(market, posm)
    max_nash_welfare = max(welfare(market, a) for a in nash) if nash else 0.0
    return NashWelfareReport(
        nash_profiles=tuple(nash),
        unstable_nash_profiles=tuple(unstable),
        all_nash_stable=not unstable,
        posm_profile=posm,
        posm_is_nash=posm in nash,
        posm_welfare=posm_welfare,
        max_nash_welfare=max_nash_welfare,
        posm_welfare_maximal=posm in nash and posm_welfare >= max_nash_welfare - 1e-12,
    )
