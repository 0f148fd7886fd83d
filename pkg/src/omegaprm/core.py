"""Shared domain types: questions, steps, rollouts, states, tree nodes.

Monte Carlo estimates are stored as exact rationals (``fractions.Fraction``)
so that the boundary predicates ``MC == 0`` and ``MC == 1`` are exact; they
are converted to float only at export time.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

from .errors import ConfigError, InvalidAction

Tokenizer = Callable[[str], list]


def whitespace_tokenize(text: str) -> list:
    return text.split()


def token_count(text: str, tokenizer: Tokenizer = whitespace_tokenize) -> int:
    return len(tokenizer(text))


def approx_token_count(text: str) -> int:
    """Rough token count for real LLM text: one token per 4 characters."""
    return max(1, (len(text) + 3) // 4)


@dataclass(frozen=True)
class Question:
    id: str
    statement: str
    golden_answer: str

    def __post_init__(self):
        if not self.id:
            raise ValueError("question id must be nonempty")
        if not self.golden_answer:
            raise ValueError("golden answer must be nonempty")


@dataclass(frozen=True)
class Step:
    text: str
    token_len: int

    def __post_init__(self):
        if not self.text:
            raise ValueError("step text must be nonempty")
        if self.token_len < 0:
            raise ValueError("token_len must be nonnegative")


def make_step(text: str, tokenizer: Tokenizer = whitespace_tokenize) -> Step:
    return Step(text=text, token_len=token_count(text, tokenizer))


@dataclass(frozen=True)
class Rollout:
    """A sampled completion: ordered steps plus the extracted final answer.

    ``meta`` carries simulator-only bookkeeping (e.g. injected error
    positions) consumed by tests; the engine never reads it.
    """

    steps: tuple
    final_answer: str
    is_correct: bool
    token_len: int
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.token_len != sum(s.token_len for s in self.steps):
            raise ValueError("token_len must equal the sum of step lengths")

    @property
    def text(self) -> str:
        return " ".join(s.text for s in self.steps)


def make_rollout(steps, final_answer, is_correct, meta=None) -> Rollout:
    steps = tuple(steps)
    return Rollout(
        steps=steps,
        final_answer=final_answer,
        is_correct=is_correct,
        token_len=sum(s.token_len for s in steps),
        meta=meta or {},
    )


@dataclass(frozen=True)
class State:
    question_id: str
    prefix_steps: tuple = ()

    @property
    def prefix_text(self) -> str:
        return " ".join(s.text for s in self.prefix_steps)

    @property
    def prefix_token_len(self) -> int:
        return sum(s.token_len for s in self.prefix_steps)

    def key(self) -> tuple:
        """Node identity: the prefix token sequence."""
        return tuple(tok for s in self.prefix_steps for tok in s.text.split())


def state_transition(state: State, action_steps) -> State:
    """Concatenate an action (one or more steps) onto a state's prefix."""
    action_steps = tuple(action_steps)
    if not action_steps:
        raise InvalidAction("state transition requires a nonempty action")
    return State(
        question_id=state.question_id,
        prefix_steps=state.prefix_steps + action_steps,
    )


@dataclass
class NodeStats:
    """Visit count, rollouts and the derived Monte Carlo estimate.

    ``forced_mc`` marks terminal wrong-answer states whose MC is known to be
    zero without any rollouts of their own.
    """

    visit_count: int = 0
    rollouts: list = field(default_factory=list)
    forced_mc: Optional[Fraction] = None

    @property
    def mc(self) -> Optional[Fraction]:
        if self.rollouts:
            correct = sum(1 for r in self.rollouts if r.is_correct)
            return Fraction(correct, len(self.rollouts))
        return self.forced_mc

    def has_mc(self) -> bool:
        return bool(self.rollouts) or self.forced_mc is not None


@dataclass
class Edge:
    action_steps: tuple
    child: "TreeNode"

    @property
    def action_text(self) -> str:
        return " ".join(s.text for s in self.action_steps)

    @property
    def action_token_len(self) -> int:
        return sum(s.token_len for s in self.action_steps)


@dataclass
class TreeNode:
    state: State
    stats: NodeStats = field(default_factory=NodeStats)
    children: list = field(default_factory=list)
    parent: Optional["TreeNode"] = field(default=None, repr=False)

    @property
    def mc(self) -> Optional[Fraction]:
        return self.stats.mc


@dataclass
class EngineConfig:
    """Every tunable of the search: value function, PUCT, budgets."""

    alpha: float = 0.5
    beta: float = 0.9
    len_scale_L: float = 500.0
    c_puct: float = 0.125
    k_rollouts: int = 8
    search_limit: int = 100
    step_split_target: int = 16
    rng_seed: int = 0

    def validate(self):
        if not (0 < self.alpha <= 1):
            raise ConfigError("alpha must be in (0, 1]")
        if not (0 < self.beta <= 1):
            raise ConfigError("beta must be in (0, 1]")
        if self.len_scale_L <= 0:
            raise ConfigError("len_scale_L must be positive")
        if self.c_puct < 0:
            raise ConfigError("c_puct must be nonnegative")
        if self.k_rollouts < 1:
            raise ConfigError("k_rollouts must be a positive integer")
        if self.search_limit < 1:
            raise ConfigError("search_limit must be a positive integer")
        if self.step_split_target < 1:
            raise ConfigError("step_split_target must be a positive integer")
        return self
