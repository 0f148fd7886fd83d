"""Weighted self-consistency decoding and the efficiency benchmark."""
from __future__ import annotations

import csv
import random
from dataclasses import dataclass, field
from typing import Optional

from .core import EngineConfig, Question, State
from .dataset import tree_to_examples
from .errors import EstimationFailed
from .mcts import (
    OmegaPRMEngine,
    SearchBudget,
    annotate_per_step,
    monte_carlo_estimate,
)
from .policy import CompleterRequest, answers_equivalent
from .prm import ToyPrmModel, score_solution


@dataclass
class CandidateSolution:
    step_texts: list
    final_answer: str
    aggregate_score: Optional[float] = None
    meta: dict = field(default_factory=dict, compare=False, repr=False)


@dataclass
class EvalReport:
    method: str  # "majority" or "prm_weighted"
    ks: list
    accuracy_mean: list
    accuracy_std: list
    n_resamples: int
    per_question: list  # per-question accuracy at the largest k
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "method": self.method,
            "ks": self.ks,
            "accuracy_mean": self.accuracy_mean,
            "accuracy_std": self.accuracy_std,
            "n_resamples": self.n_resamples,
            "per_question": self.per_question,
            "config": self.config,
        }

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "accuracy_mean", "accuracy_std"])
            for k, mean, std in zip(self.ks, self.accuracy_mean, self.accuracy_std):
                writer.writerow([k, mean, std])


def weighted_vote(candidates, weighted: bool) -> str:
    """Group candidates into answer-equivalence classes and return the
    representative answer of the highest-scoring class.

    Class score is the sum of aggregate scores (weighted) or the count
    (unweighted). Ties go to the class whose first member appeared
    earliest.
    """
    if not candidates:
        raise ValueError("weighted_vote requires at least one candidate")
    classes = []  # (representative answer, score)
    for cand in candidates:
        vote = cand.aggregate_score if weighted else 1.0
        if vote is None:
            raise ValueError("weighted voting requires aggregate scores")
        for cls in classes:
            if answers_equivalent(cls[0], cand.final_answer) or (
                cls[0] == cand.final_answer
            ):
                cls[1] += vote
                break
        else:
            classes.append([cand.final_answer, vote])
    best = classes[0]
    for cls in classes[1:]:
        if cls[1] > best[1]:
            best = cls
    return best[0]


def sample_candidates(question: Question, completer, pool_size: int,
                      model: Optional[ToyPrmModel] = None,
                      temperature: float = 1.0):
    """Sample a fixed pool of full solutions from the question root."""
    rollouts = completer.sample_rollouts(CompleterRequest(
        state=State(question_id=question.id),
        n_samples=pool_size,
        temperature=temperature,
    ))
    candidates = []
    for r in rollouts:
        texts = [s.text for s in r.steps]
        score = None
        if model is not None and texts:
            score = score_solution(model, question.statement, texts)
        elif model is not None:
            score = 0.0  # empty completion: no evidence of correctness
        candidates.append(CandidateSolution(
            step_texts=texts,
            final_answer=r.final_answer,
            aggregate_score=score,
        ))
    return candidates


def _k_schedule(k_max: int):
    ks = []
    k = 1
    while k < k_max:
        ks.append(k)
        k *= 2
    ks.append(k_max)
    return ks


def accuracy_curve(questions, completer, model, k_max: int,
                   n_resamples: int = 100, seed: int = 0,
                   pool_size: Optional[int] = None) -> EvalReport:
    """Voting accuracy as a function of the number of sampled solutions.

    Each question gets one fixed pool; per k, accuracy is averaged over
    seeded random subsets of size k (subsets keep pool order so the vote
    tie-break is stable). k = pool size has zero resampling freedom.
    """
    pool_size = pool_size or k_max
    if k_max > pool_size:
        raise ValueError("k_max must not exceed the candidate pool size")
    method = "prm_weighted" if model is not None else "majority"
    pools = []
    for question in questions:
        try:
            pool = sample_candidates(question, completer, pool_size, model)
        except EstimationFailed:
            pools.append((question, None))
            continue
        pools.append((question, pool))
    usable = [(q, p) for q, p in pools if p is not None]
    skipped = [q.id for q, p in pools if p is None]

    rng = random.Random(seed)
    ks = _k_schedule(k_max)
    means, stds = [], []
    per_question_at_kmax = []
    for k in ks:
        resamples = 1 if k == pool_size else n_resamples
        accs = []
        per_question = []
        for _ in range(resamples):
            correct = 0
            per_question = []
            for question, pool in usable:
                if k == pool_size:
                    subset = pool
                else:
                    idxs = sorted(rng.sample(range(pool_size), k))
                    subset = [pool[i] for i in idxs]
                answer = weighted_vote(subset, weighted=model is not None)
                ok = answers_equivalent(answer, question.golden_answer)
                correct += ok
                per_question.append({"question_id": question.id, "correct": bool(ok)})
            accs.append(correct / len(usable) if usable else 0.0)
        mean = sum(accs) / len(accs)
        if len(accs) > 1:
            var = sum((a - mean) ** 2 for a in accs) / (len(accs) - 1)
            std = var ** 0.5
        else:
            std = 0.0
        means.append(mean)
        stds.append(std)
        if k == ks[-1]:
            per_question_at_kmax = per_question
    return EvalReport(
        method=method,
        ks=ks,
        accuracy_mean=means,
        accuracy_std=stds,
        n_resamples=n_resamples,
        per_question=per_question_at_kmax,
        config={"k_max": k_max, "pool_size": pool_size, "seed": seed,
                "skipped": skipped},
    )


def efficiency_benchmark(questions, completer, cfg: EngineConfig,
                         budget: int) -> dict:
    """Compare examples-per-policy-call of per-step annotation vs the
    tree search, under the same total rollout budget.

    The brute-force arm samples a solution and runs k rollouts for every
    step prefix (one example per annotated step). The search arm builds
    trees and counts the single-step edges they yield.
    """
    cfg.validate()

    # Arm A: brute-force per-step Monte Carlo annotation.
    if hasattr(completer, "reset"):
        completer.reset()
    brute_budget = SearchBudget()
    brute_examples = 0
    idx = 0
    while questions and brute_budget.policy_calls + 1 + cfg.k_rollouts <= budget:
        question = questions[idx % len(questions)]
        idx += 1
        root = State(question_id=question.id)
        _, sols = monte_carlo_estimate(completer, root, 1, brute_budget)
        solution = sols[0]
        if not solution.steps:
            continue
        affordable = (budget - brute_budget.policy_calls) // cfg.k_rollouts
        labels = annotate_per_step(
            completer, question, solution, cfg.k_rollouts,
            budget=brute_budget, max_steps=affordable,
        )
        brute_examples += len(labels)

    # Arm B: tree construction under the same cap. Each completed search
    # annotates its rollout up to the located first error, so it certifies
    # one per-step label for every step through that error.
    if hasattr(completer, "reset"):
        completer.reset()
    omega_calls = 0
    omega_examples = 0
    omega_single_step_edges = 0
    for question in questions:
        remaining = budget - omega_calls
        if remaining < cfg.k_rollouts:
            break
        engine = OmegaPRMEngine(
            question, completer, cfg, max_policy_calls=remaining
        )
        tree, tree_budget = engine.build()
        omega_calls += tree_budget.policy_calls
        omega_examples += engine.labels_produced
        omega_single_step_edges += len(tree_to_examples(tree))

    def per_call(examples, calls):
        return examples / calls if calls else 0.0

    brute_epc = per_call(brute_examples, brute_budget.policy_calls)
    omega_epc = per_call(omega_examples, omega_calls)
    return {
        "budget": budget,
        "brute_force": {
            "policy_calls": brute_budget.policy_calls,
            "examples": brute_examples,
            "examples_per_call": brute_epc,
        },
        "omegaprm": {
            "policy_calls": omega_calls,
            "examples": omega_examples,
            "examples_per_call": omega_epc,
            "single_step_edges": omega_single_step_edges,
        },
        "ratio": (omega_epc / brute_epc) if brute_epc else 0.0,
    }
