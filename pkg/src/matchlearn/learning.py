"""Per-proposer trial-and-error learning rule.

Each proposer carries a mood (content / discontent / watchful), a baseline
action and a baseline utility.  Action selection perturbs baseline play with
experiments at rate controlled by epsilon; state updates compare the realized
utility against the baseline and occasionally commit to a better action with
probability epsilon raised to a mood-specific exponent.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidEpsilonError, InvalidTransitionError
from .market import Action


class Mood(enum.Enum):
    CONTENT = "C"
    DISCONTENT = "D"
    WATCHFUL = "W"


@dataclass(frozen=True)
class ProposerState:
    """(mood, baseline action, baseline utility) triple for one proposer."""

    mood: Mood
    baseline_action: Action
    baseline_utility: float

    def __post_init__(self):
        if self.mood is Mood.DISCONTENT and (
            self.baseline_action is not None or self.baseline_utility != 0.0
        ):
            raise InvalidTransitionError("a discontent proposer's baseline is always (single, 0)")


DISCONTENT_STATE = ProposerState(Mood.DISCONTENT, None, 0.0)


@dataclass(frozen=True)
class SelectionEvent:
    """An action together with whether it was an experiment."""

    action: Action
    experimented: bool


@dataclass(frozen=True)
class AffineExponent:
    """Affine map x -> intercept + slope * x, used as an adoption exponent."""

    intercept: float
    slope: float

    def __call__(self, x: float) -> float:
        return self.intercept + self.slope * x


#: Shared default for both adoption exponents: strictly decreasing, range
#: [0.01, 0.46] inside [0, 0.5), which keeps 1+g(x) < 1.5+f(y) < 2 strict.
DEFAULT_ADOPTION_EXPONENT = AffineExponent(0.46, -0.45)

_EXPONENT_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


def default_adoption_exponents() -> tuple[AffineExponent, AffineExponent]:
    """Default (discontent, content) adoption exponents; both 0.46 - 0.45x."""
    return DEFAULT_ADOPTION_EXPONENT, DEFAULT_ADOPTION_EXPONENT


def validate_epsilon(epsilon: float) -> None:
    """The content branch needs 1 - eps - eps^2 > 0, i.e. eps below ~0.618."""
    if not (epsilon > 0.0 and 1.0 - epsilon - epsilon**2 > 0.0):
        raise InvalidEpsilonError(
            f"epsilon={epsilon} outside (0, (sqrt(5)-1)/2); content branch would not be a distribution"
        )


def _validate_exponent(name: str, fn: Callable[[float], float]) -> None:
    ys = [fn(x) for x in _EXPONENT_GRID]
    if any(not (0.0 <= y < 0.5) for y in ys):
        raise InvalidTransitionError(f"{name} must map [0,1] into [0,0.5), got {ys}")
    if any(a <= b for a, b in zip(ys, ys[1:])):
        raise InvalidTransitionError(f"{name} must be strictly decreasing on [0,1]")


@dataclass(frozen=True)
class RuleParams:
    """Learning-rule parameters shared by every proposer.

    ``adopt_exp_discontent`` shapes the chance a discontent experimenter
    commits to what it found (exponent of epsilon applied to the utility);
    ``adopt_exp_content`` does the same for content experimenters (applied to
    the utility gain).  The two flags toggle documented rule variants: whether
    a failed content experiment keeps the old baseline utility instead of
    overwriting it, and whether content experiments may redraw the baseline
    acceptor.
    """

    epsilon: float
    adopt_exp_discontent: Callable[[float], float] = DEFAULT_ADOPTION_EXPONENT
    adopt_exp_content: Callable[[float], float] = DEFAULT_ADOPTION_EXPONENT
    revert_keeps_baseline_utility: bool = False
    exclude_baseline_from_experiments: bool = True

    def __post_init__(self):
        validate_epsilon(self.epsilon)
        _validate_exponent("adopt_exp_discontent", self.adopt_exp_discontent)
        _validate_exponent("adopt_exp_content", self.adopt_exp_content)

    def with_epsilon(self, epsilon: float) -> "RuleParams":
        return RuleParams(
            epsilon,
            self.adopt_exp_discontent,
            self.adopt_exp_content,
            self.revert_keeps_baseline_utility,
            self.exclude_baseline_from_experiments,
        )


def action_distribution(
    state: ProposerState, params: RuleParams, acceptors: Sequence[str]
) -> dict[SelectionEvent, float]:
    """Exact selection distribution for one proposer. Probabilities sum to 1.

    Content: baseline with prob 1-eps-eps^2, a uniformly random other acceptor
    with total prob eps, single with prob eps^2.  Discontent: single with prob
    1-eps^1.5, a uniformly random acceptor with total prob eps^1.5.  Watchful:
    baseline with certainty.
    """
    if not acceptors:
        raise InvalidEpsilonError("need at least one acceptor")
    eps = params.epsilon
    mood = state.mood
    if mood is Mood.WATCHFUL:
        return {SelectionEvent(state.baseline_action, False): 1.0}
    if mood is Mood.DISCONTENT:
        explore = eps**1.5
        dist = {SelectionEvent(None, False): 1.0 - explore}
        share = explore / len(acceptors)
        for a in acceptors:
            dist[SelectionEvent(a, True)] = share
        return dist
    # content
    base = state.baseline_action
    if params.exclude_baseline_from_experiments and base is not None:
        support = [a for a in acceptors if a != base]
    else:
        support = list(acceptors)
    dist = {}
    if support:
        dist[SelectionEvent(base, False)] = 1.0 - eps - eps**2
        share = eps / len(support)
        for a in support:
            dist[SelectionEvent(a, True)] = share
    else:
        # single acceptor equal to the baseline: nothing new to try, the
        # acceptor-experiment mass folds back into baseline play
        dist[SelectionEvent(base, False)] = 1.0 - eps**2
    dist[SelectionEvent(None, True)] = eps**2
    return dist


def _sample(dist: dict, rng: np.random.Generator):
    r = rng.random()
    cum = 0.0
    last = None
    for item, prob in dist.items():
        cum += prob
        last = item
        if r < cum:
            return item
    return last  # guard against float round-off at the top end


def select_action(
    state: ProposerState, params: RuleParams, acceptors: Sequence[str], rng: np.random.Generator
) -> SelectionEvent:
    """Sample a selection event exactly per ``action_distribution``."""
    if state.mood is Mood.WATCHFUL:
        return SelectionEvent(state.baseline_action, False)  # no draw consumed
    return _sample(action_distribution(state, params, acceptors), rng)


def _clamp01(x: float) -> float:
    return 0.0 if x < 0.0 else (1.0 if x > 1.0 else x)


def update_distribution(
    state: ProposerState, event: SelectionEvent, realized_utility: float, params: RuleParams
) -> dict[ProposerState, float]:
    """Exact next-state distribution for one proposer given its own event and utility."""
    u = realized_utility
    ubar = state.baseline_utility
    base = state.baseline_action
    eps = params.epsilon
    mood = state.mood

    if mood is Mood.WATCHFUL:
        if event.experimented:
            raise InvalidTransitionError("a watchful proposer never experiments")
        if u >= ubar:
            return {ProposerState(Mood.CONTENT, base, ubar): 1.0}
        return {DISCONTENT_STATE: 1.0}

    if mood is Mood.DISCONTENT:
        if not event.experimented:
            return {state: 1.0}  # baseline single play carries no news
        p_adopt = eps ** params.adopt_exp_discontent(_clamp01(u))
        adopted = ProposerState(Mood.CONTENT, event.action, u)
        return {adopted: p_adopt, DISCONTENT_STATE: 1.0 - p_adopt}

    # content
    if not event.experimented:
        if u >= ubar:
            return {ProposerState(Mood.CONTENT, base, u): 1.0}
        return {ProposerState(Mood.WATCHFUL, base, ubar): 1.0}
    if u <= ubar:
        if params.revert_keeps_baseline_utility:
            return {state: 1.0}
        return {ProposerState(Mood.CONTENT, base, u): 1.0}
    p_adopt = eps ** params.adopt_exp_content(_clamp01(u - ubar))
    adopted = ProposerState(Mood.CONTENT, event.action, u)
    reverted = ProposerState(Mood.CONTENT, base, ubar)
    return {adopted: p_adopt, reverted: 1.0 - p_adopt}


def update_state(
    state: ProposerState,
    event: SelectionEvent,
    realized_utility: float,
    params: RuleParams,
    rng: np.random.Generator,
) -> ProposerState:
    """Sample the next state; consumes one draw only on two-outcome branches."""
    dist = update_distribution(state, event, realized_utility, params)
    if len(dist) == 1:
        return next(iter(dist))
    return _sample(dist, rng)
