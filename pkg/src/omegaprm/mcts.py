"""The search engine: Monte Carlo estimation, binary-search error location,
PUCT-style rollout selection, statistics maintenance, and tree construction.

One engine instance builds the state-action tree for a single question.
The tree and pool have a single writer; determinism comes from the
completer's seeded RNG streams plus the engine's deterministic tie-breaks.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

from .core import (
    Edge,
    EngineConfig,
    Question,
    Rollout,
    State,
    Step,
    TreeNode,
    state_transition,
)
from .errors import (
    CompleterUnavailable,
    EstimationFailed,
    InvalidSearchTarget,
    PoolExhausted,
)
from .policy import Completer, CompleterRequest


def rollout_value(mc, rollout_token_len, cfg: EngineConfig) -> float:
    """Value of a (state, rollout) pair: alpha^(1-MC) * beta^(len/L).

    Increasing in MC (supposed-to-be-correct states first) and decreasing
    in rollout length (length penalty).
    """
    return cfg.alpha ** (1.0 - float(mc)) * cfg.beta ** (
        rollout_token_len / cfg.len_scale_L
    )


def exploration_bonus(state_visits, total_pool_visits, cfg: EngineConfig) -> float:
    """PUCT-style exploration term: c_puct * sqrt(sum N) / (1 + N(s))."""
    return cfg.c_puct * math.sqrt(total_pool_visits) / (1.0 + state_visits)


@dataclass
class SearchBudget:
    searches_done: int = 0
    policy_calls: int = 0


@dataclass
class PoolEntry:
    node: TreeNode
    rollout: Rollout
    ordinal: int


class RolloutPool:
    """Wrong-answer rollouts attached to states with 0 < MC < 1.

    Duplicate (state, rollout text) pairs are rejected so repeated sampling
    of an identical completion cannot trigger redundant searches.
    """

    def __init__(self):
        self.entries = []
        self._seen = set()
        self._next_ordinal = 0

    def __len__(self):
        return len(self.entries)

    def add(self, node: TreeNode, rollout: Rollout) -> bool:
        if rollout.is_correct:
            return False
        mc = node.mc
        if mc is None or not (0 < mc < 1):
            return False
        key = (node.state.key(), rollout.text, rollout.final_answer)
        if key in self._seen:
            return False
        self._seen.add(key)
        self.entries.append(PoolEntry(node, rollout, self._next_ordinal))
        self._next_ordinal += 1
        return True

    def total_visits(self) -> int:
        """Sum of N(s) over the distinct states currently in the pool."""
        seen = set()
        total = 0
        for entry in self.entries:
            key = entry.node.state.key()
            if key not in seen:
                seen.add(key)
                total += entry.node.stats.visit_count
        return total

    def select(self, cfg: EngineConfig) -> PoolEntry:
        """Pop the entry maximizing Q(s, r) + U(s); earliest ordinal wins ties."""
        if not self.entries:
            raise PoolExhausted("no rollout candidates available")
        total = self.total_visits()
        best_idx = None
        best_score = -math.inf
        for idx, entry in enumerate(self.entries):
            q = rollout_value(entry.node.mc, entry.rollout.token_len, cfg)
            u = exploration_bonus(entry.node.stats.visit_count, total, cfg)
            score = q + u
            if score > best_score:
                best_score = score
                best_idx = idx
        return self.entries.pop(best_idx)


class Tree:
    """State-action tree for one question, with nodes merged by prefix."""

    def __init__(self, question: Question):
        self.question = question
        self.root = TreeNode(state=State(question_id=question.id))
        self.nodes = {self.root.state.key(): self.root}
        self.avg_solution_tokens = 0.0
        self.threshold = 0.0

    def get(self, state: State):
        return self.nodes.get(state.key())

    def ensure_child(self, parent: TreeNode, action_steps, child_state: State):
        """Return the node for ``child_state``, linking it under ``parent``
        if it does not exist yet. An already-known prefix keeps its first
        parent edge."""
        key = child_state.key()
        existing = self.nodes.get(key)
        if existing is not None:
            return existing
        child = TreeNode(state=child_state, parent=parent)
        parent.children.append(_make_edge(action_steps, child))
        self.nodes[key] = child
        return child

    def iter_edges(self):
        for node in self.nodes.values():
            for edge in node.children:
                yield node, edge


def _make_edge(action_steps, child):
    return Edge(action_steps=tuple(action_steps), child=child)


@dataclass
class SearchResult:
    first_error_index: int
    probe_positions: list
    trajectory: list
    rollouts_spent: int


class BudgetExhausted(Exception):
    """Internal: the engine hit its policy-call cap (benchmark mode)."""


def monte_carlo_estimate(completer: Completer, state: State, k: int,
                         budget: SearchBudget = None, temperature: float = 1.0):
    """Sample k rollouts from ``state`` and return (MC, rollouts).

    MC is the exact fraction of rollouts whose final answer matched the
    golden answer.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    try:
        rollouts = completer.sample_rollouts(
            CompleterRequest(state=state, n_samples=k, temperature=temperature)
        )
    except CompleterUnavailable as exc:
        raise EstimationFailed(str(exc)) from exc
    if budget is not None:
        budget.policy_calls += k
    correct = sum(1 for r in rollouts if r.is_correct)
    return Fraction(correct, k), rollouts


class OmegaPRMEngine:
    """Builds the state-action tree for one question."""

    def __init__(self, question: Question, completer: Completer,
                 cfg: EngineConfig, max_policy_calls=None, temperature=1.0):
        cfg.validate()
        self.question = question
        self.completer = completer
        self.cfg = cfg
        self.temperature = temperature
        self.max_policy_calls = max_policy_calls
        self.tree = Tree(question)
        self.pool = RolloutPool()
        self.budget = SearchBudget()
        # Per-step supervision labels certified by completed searches: each
        # search annotates its rollout up to the located first error.
        self.labels_produced = 0

    # -- sampling ----------------------------------------------------------

    def _sample(self, state: State, n: int):
        if (self.max_policy_calls is not None
                and self.budget.policy_calls + n > self.max_policy_calls):
            raise BudgetExhausted
        mc, rollouts = monte_carlo_estimate(
            self.completer, state, n, self.budget, self.temperature
        )
        return mc, rollouts

    def _pool_add_wrong(self, node: TreeNode, new_rollouts):
        if node.mc is not None and 0 < node.mc < 1:
            for r in new_rollouts:
                if not r.is_correct:
                    self.pool.add(node, r)

    # -- root seeding ------------------------------------------------------

    def seed_root(self) -> TreeNode:
        root = self.tree.root
        _, rollouts = self._sample(root.state, self.cfg.k_rollouts)
        root.stats.rollouts.extend(rollouts)
        self.tree.avg_solution_tokens = sum(
            r.token_len for r in rollouts
        ) / len(rollouts)
        self.tree.threshold = (
            self.tree.avg_solution_tokens / self.cfg.step_split_target
        )
        self._pool_add_wrong(root, rollouts)
        return root

    # -- binary search -----------------------------------------------------

    @staticmethod
    def _split_point(cum, lo, hi):
        """Interior step boundary nearest the token midpoint of (lo, hi];
        left-biased on ties."""
        mid = (cum[lo] + cum[hi]) / 2.0
        best = lo + 1
        best_dist = abs(cum[best] - mid)
        for j in range(lo + 2, hi):
            dist = abs(cum[j] - mid)
            if dist < best_dist:
                best, best_dist = j, dist
        return best

    def locate_first_error(self, node: TreeNode, rollout: Rollout) -> SearchResult:
        """Bisect the rollout to its first error, growing the tree.

        Maintains the invariant that the prefix through ``lo`` is verified
        correct (MC > 0) and the prefix through ``hi`` is known wrong.
        Probed prefixes with MC > 0 become chained tree nodes; ones with
        0 < MC < 1 feed their wrong rollouts to the pool. Stops once the
        unverified span is a single step or shorter than the tree's
        step-length threshold.
        """
        if rollout.is_correct:
            raise InvalidSearchTarget("rollout has a correct final answer")
        if node.mc is None or node.mc <= 0:
            raise InvalidSearchTarget("search target state must have MC > 0")
        if not rollout.steps:
            raise InvalidSearchTarget("rollout has no steps to search")

        steps = rollout.steps
        cum = [0]
        for s in steps:
            cum.append(cum[-1] + s.token_len)
        lo, hi = 0, len(steps)
        probes = []
        trajectory = []
        spent_before = self.budget.policy_calls
        prev_node, prev_pos = node, 0
        staged_error = {}

        try:
            while hi - lo > 1 and (cum[hi] - cum[lo]) >= self.tree.threshold:
                m = self._split_point(cum, lo, hi)
                prefix_state = state_transition(node.state, steps[:m])
                existing = self.tree.get(prefix_state)
                if existing is not None and existing.stats.has_mc():
                    mc, new_rollouts = existing.mc, []
                else:
                    mc, new_rollouts = self._sample(
                        prefix_state, self.cfg.k_rollouts
                    )
                probes.append(m)
                if mc > 0:
                    probe_node = self.tree.ensure_child(
                        prev_node, steps[prev_pos:m], prefix_state
                    )
                    probe_node.stats.rollouts.extend(new_rollouts)
                    self._pool_add_wrong(probe_node, new_rollouts)
                    trajectory.append(probe_node)
                    prev_node, prev_pos = probe_node, m
                    lo = m
                else:
                    staged_error[m] = new_rollouts
                    hi = m
        except BudgetExhausted:
            # Partial trajectory already committed; surface the cap.
            raise
        except EstimationFailed:
            # Keep the partially probed trajectory: its statistics are valid.
            raise

        error_state = state_transition(node.state, steps[:hi])
        error_node = self.tree.ensure_child(
            prev_node, steps[prev_pos:hi], error_state
        )
        if hi in staged_error and staged_error[hi]:
            error_node.stats.rollouts.extend(staged_error[hi])
        elif not error_node.stats.has_mc():
            # Terminal wrong end, never probed: its answer is wrong, MC = 0.
            error_node.stats.forced_mc = Fraction(0)
        trajectory.append(error_node)
        return SearchResult(
            first_error_index=hi,
            probe_positions=probes,
            trajectory=trajectory,
            rollouts_spent=self.budget.policy_calls - spent_before,
        )

    # -- main loop ---------------------------------------------------------

    def run_search(self) -> bool:
        """One select -> binary search -> maintain iteration.

        Returns False when the pool is exhausted.
        """
        try:
            entry = self.pool.select(self.cfg)
        except PoolExhausted:
            return False
        try:
            result = self.locate_first_error(entry.node, entry.rollout)
        except EstimationFailed:
            # Search aborted but probed statistics are kept; per contract
            # this does not count against the search limit.
            raise
        entry.node.stats.visit_count += 1
        self.budget.searches_done += 1
        self.labels_produced += (
            len(entry.node.state.prefix_steps) + result.first_error_index
        )
        return True

    def build(self):
        """Seed the root, then iterate searches until limit or pool empty."""
        try:
            self.seed_root()
            while self.budget.searches_done < self.cfg.search_limit:
                if not self.run_search():
                    break
        except BudgetExhausted:
            pass
        return self.tree, self.budget


def build_tree(question: Question, completer: Completer, cfg: EngineConfig,
               max_policy_calls=None, temperature=1.0):
    engine = OmegaPRMEngine(
        question, completer, cfg,
        max_policy_calls=max_policy_calls, temperature=temperature,
    )
    return engine.build()


# -- brute-force baseline (per-step annotation) ----------------------------

def annotate_per_step(completer: Completer, question: Question,
                      rollout: Rollout, k: int, budget: SearchBudget = None,
                      max_steps=None):
    """Math-Shepherd-style annotation: MC for every step prefix in order.

    Returns a list of (step_index, MC) pairs; costs exactly k rollouts per
    annotated step. Used as the brute-force arm of the efficiency benchmark
    and as the exhaustive oracle in tests.
    """
    root = State(question_id=question.id)
    labels = []
    n = len(rollout.steps)
    if max_steps is not None:
        n = min(n, max_steps)
    for t in range(1, n + 1):
        state = state_transition(root, rollout.steps[:t])
        mc, _ = monte_carlo_estimate(completer, state, k, budget)
        labels.append((t, mc))
    return labels


# -- serialization ---------------------------------------------------------

SCHEMA_VERSION = 1


def _step_to_dict(step: Step):
    return {"text": step.text, "token_len": step.token_len}


def _step_from_dict(d):
    return Step(text=d["text"], token_len=d["token_len"])


def _rollout_to_dict(r: Rollout):
    return {
        "steps": [_step_to_dict(s) for s in r.steps],
        "final_answer": r.final_answer,
        "is_correct": r.is_correct,
        "token_len": r.token_len,
    }


def _rollout_from_dict(d):
    return Rollout(
        steps=tuple(_step_from_dict(s) for s in d["steps"]),
        final_answer=d["final_answer"],
        is_correct=d["is_correct"],
        token_len=d["token_len"],
    )


def tree_to_dict(tree: Tree, budget: SearchBudget = None):
    ids = {key: i for i, key in enumerate(tree.nodes)}
    nodes = []
    edges = []
    for key, node in tree.nodes.items():
        mc = node.mc
        nodes.append({
            "id": ids[key],
            "prefix_steps": [_step_to_dict(s) for s in node.state.prefix_steps],
            "visit_count": node.stats.visit_count,
            "mc_num": mc.numerator if mc is not None else None,
            "mc_den": mc.denominator if mc is not None else None,
            "rollouts": [_rollout_to_dict(r) for r in node.stats.rollouts],
        })
        for edge in node.children:
            edges.append({
                "parent": ids[key],
                "child": ids[edge.child.state.key()],
                "action_steps": [_step_to_dict(s) for s in edge.action_steps],
            })
    doc = {
        "schema_version": SCHEMA_VERSION,
        "question": {
            "id": tree.question.id,
            "statement": tree.question.statement,
            "golden_answer": tree.question.golden_answer,
        },
        "avg_solution_tokens": tree.avg_solution_tokens,
        "threshold": tree.threshold,
        "nodes": nodes,
        "edges": edges,
    }
    if budget is not None:
        doc["budget"] = {
            "searches_done": budget.searches_done,
            "policy_calls": budget.policy_calls,
        }
    return doc


def tree_from_dict(doc):
    q = doc["question"]
    question = Question(
        id=q["id"], statement=q["statement"], golden_answer=q["golden_answer"]
    )
    tree = Tree(question)
    tree.avg_solution_tokens = doc["avg_solution_tokens"]
    tree.threshold = doc["threshold"]
    by_id = {}
    for nd in doc["nodes"]:
        state = State(
            question_id=question.id,
            prefix_steps=tuple(_step_from_dict(s) for s in nd["prefix_steps"]),
        )
        if not nd["prefix_steps"]:
            node = tree.root
        else:
            node = TreeNode(state=state)
            tree.nodes[state.key()] = node
        node.stats.visit_count = nd["visit_count"]
        node.stats.rollouts = [_rollout_from_dict(r) for r in nd["rollouts"]]
        if not node.stats.rollouts and nd["mc_num"] is not None:
            node.stats.forced_mc = Fraction(nd["mc_num"], nd["mc_den"])
        by_id[nd["id"]] = node
    for ed in doc["edges"]:
        parent = by_id[ed["parent"]]
        child = by_id[ed["child"]]
        child.parent = parent
        parent.children.append(
            _make_edge(tuple(_step_from_dict(s) for s in ed["action_steps"]), child)
        )
    budget = None
    if "budget" in doc:
        budget = SearchBudget(**doc["budget"])
    return tree, budget


def dump_tree(tree: Tree, budget: SearchBudget = None) -> str:
    return json.dumps(tree_to_dict(tree, budget), indent=2, sort_keys=False)


def save_tree(tree: Tree, path, budget: SearchBudget = None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_tree(tree, budget))
        fh.write("\n")


def load_tree(path):
    with open(path, encoding="utf-8") as fh:
        return tree_from_dict(json.load(fh))
