"""Decentralized two-sided matching markets with trial-and-error learning.

Core pieces: a static market model with stability oracles (``market``), the
per-proposer learning rule (``learning``), a repeated-game simulation engine
(``simulate``), exact perturbed-chain analysis (``chain``), and a CLI
(``cli``).
"""
from . import errors
from .market import (
    Action,
    ActionProfile,
    Market,
    MatchOutcome,
    best_response,
    blocking_pairs,
    br_dynamics,
    canonical_profile,
    enumerate_stable_matches,
    gale_shapley,
    is_stable,
    load_market,
    market_from_ranks,
    market_to_dict,
    nash_and_welfare_check,
    near_stable_profile,
    random_market,
    resolve_match,
    save_market,
    utility,
    validate_market,
)
from .learning import (
    DEFAULT_ADOPTION_EXPONENT,
    DISCONTENT_STATE,
    AffineExponent,
    Mood,
    ProposerState,
    RuleParams,
    SelectionEvent,
    action_distribution,
    default_adoption_exponents,
    select_action,
    update_distribution,
    update_state,
)
from .simulate import Metrics, SimConfig, SimTrace, batch_run, run, step
from .chain import (
    ElementaryTransition,
    PerturbedChain,
    StatePartition,
    build_chain,
    classify_states,
    elementary_transitions,
    enumerate_states,
    fit_elementary_slopes,
    posm_mass,
    posm_mass_sweep,
    resistance_slope,
    stationary_distribution,
    theoretical_resistance,
)

__version__ = "0.1.0"
