"""Shared market fixtures.

``m2``: both proposers chase A1, acceptors disagree about them; unique stable
match pairs everyone with their second/first choice crosswise.
``m2b``: two stable matches, one proposer-optimal with welfare 2.0.
``mal``: 3x3 mutual-favorites market; the identity match is uniquely stable.
"""
from __future__ import annotations

import pytest

from matchlearn.market import market_from_ranks


@pytest.fixture(scope="session")
def m2():
    return market_from_ranks(
        {"P1": ["A1", "A2"], "P2": ["A1", "A2"]},
        {"A1": ["P2", "P1"], "A2": ["P1", "P2"]},
    )


@pytest.fixture(scope="session")
def m2b():
    return market_from_ranks(
        {"P1": ["A1", "A2"], "P2": ["A2", "A1"]},
        {"A1": ["P2", "P1"], "A2": ["P1", "P2"]},
    )


@pytest.fixture(scope="session")
def mal():
    return market_from_ranks(
        {
            "P1": ["A1", "A2", "A3"],
            "P2": ["A2", "A3", "A1"],
            "P3": ["A3", "A1", "A2"],
        },
        {
            "A1": ["P1", "P2", "P3"],
            "A2": ["P2", "P3", "P1"],
            "A3": ["P3", "P1", "P2"],
        },
    )
