"""Completer abstractions: answer handling, a simulated policy, and a remote client.

The "completer" is the policy pi(a|s) that samples full continuations
(rollouts) from a partial solution. The simulated completer provides a
deterministic, seeded stand-in for desk-scale verification; the remote
completer speaks a small JSON-over-HTTP protocol.
"""
from __future__ import annotations

import hashlib
import math
import random
import re
import time
from dataclasses import dataclass, field
from typing import Optional

import requests

from .core import Question, Rollout, State, make_rollout, make_step
from .errors import CompleterUnavailable, TemplateError

DEFAULT_PROMPT_TEMPLATE = "Question: {statement}\nSolution so far: {prefix}\n"

_BOXED_RE = re.compile(r"\\boxed\{([^{}]*)\}")
_MARKER_RE = re.compile(
    r"(?:answer\s+is|answer:|####)\s*(\S+)", re.IGNORECASE
)
_NUMBER_RE = re.compile(r"-?\d[\d,]*(?:\.\d+)?(?:/\d+)?")


def extract_final_answer(text: str) -> str:
    """Pull the last marked answer span, else the last number-like token."""
    boxed = _BOXED_RE.findall(text)
    if boxed:
        return boxed[-1].strip()
    marked = _MARKER_RE.findall(text)
    if marked:
        return marked[-1].strip().rstrip(".,;")
    numbers = _NUMBER_RE.findall(text)
    if numbers:
        return numbers[-1]
    return ""


def _normalize_answer(ans: str) -> str:
    ans = ans.strip().replace(",", "").replace(" ", "")
    ans = ans.rstrip(".")
    return ans


def _parse_number(ans: str) -> Optional[float]:
    try:
        if "/" in ans:
            num, den = ans.split("/", 1)
            return float(num) / float(den)
        return float(ans)
    except (ValueError, ZeroDivisionError):
        return None


def answers_equivalent(a: str, b: str) -> bool:
    """Normalized comparison; numeric when both sides parse as numbers."""
    if not a or not b:
        return False
    na, nb = _normalize_answer(a), _normalize_answer(b)
    va, vb = _parse_number(na), _parse_number(nb)
    if va is not None and vb is not None:
        return math.isclose(va, vb, rel_tol=1e-9, abs_tol=0.0) or va == vb
    return na.casefold() == nb.casefold()


def render_prompt(state: State, question: Question,
                  template: str = DEFAULT_PROMPT_TEMPLATE) -> str:
    if "{statement}" not in template or "{prefix}" not in template:
        raise TemplateError(
            "template must contain {statement} and {prefix} placeholders"
        )
    return template.replace("{statement}", question.statement).replace(
        "{prefix}", state.prefix_text
    )


@dataclass(frozen=True)
class CompleterRequest:
    state: State
    n_samples: int
    temperature: float = 1.0
    max_tokens: int = 1024

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be nonnegative")


class Completer:
    """Interface: sample rollouts from a state of a known question."""

    def sample_rollouts(self, request: CompleterRequest):
        raise NotImplementedError


@dataclass
class SimPolicySpec:
    """Settings of the simulated policy.

    ``per_step_error_prob`` is the chance each generated step is corrupted;
    ``recovery_prob`` is the chance a rollout carrying an error still lands
    on the golden answer (models false positives; 0 = noiseless oracle).
    Wrong final answers are drawn from ``wrong_answer_pool`` when given
    (this is how clustered distractors are modeled), otherwise derived from
    the first corrupted step.
    """

    per_step_error_prob: float = 0.0
    recovery_prob: float = 0.0
    seed: int = 0
    wrong_answer_pool: Optional[list] = None
    wrong_answer_weights: Optional[list] = None

    def __post_init__(self):
        if not (0 <= self.per_step_error_prob <= 1):
            raise ValueError("per_step_error_prob must be in [0, 1]")
        if not (0 <= self.recovery_prob <= 1):
            raise ValueError("recovery_prob must be in [0, 1]")


class SimulatedCompleter(Completer):
    """Deterministic seeded policy over per-question ground-truth chains.

    Each question has a ground-truth step chain. A rollout continues the
    prefix with the remaining ground steps, corrupting each one
    independently with ``per_step_error_prob``; a corrupted step keeps its
    token count but replaces every token with a distinctive ``errNNN``
    token, so any prefix can later be judged by comparing tokens against
    the ground chain. Per-call RNG streams are derived from
    (seed, prefix tokens, call ordinal), so identical call sequences are
    bit-reproducible.
    """

    def __init__(self, questions, chains, spec: SimPolicySpec):
        self.questions = dict(questions)
        self.chains = {qid: list(chain) for qid, chain in chains.items()}
        self.spec = spec
        self._call_ordinals = {}

    def _chain_tokens(self, qid):
        return [step.split() for step in self.chains[qid]]

    def _rng_for(self, state: State) -> random.Random:
        key = (state.question_id,) + state.key()
        ordinal = self._call_ordinals.get(key, 0)
        self._call_ordinals[key] = ordinal + 1
        material = "\x1f".join([str(self.spec.seed), str(ordinal), *key])
        digest = hashlib.blake2b(material.encode(), digest_size=8).digest()
        return random.Random(int.from_bytes(digest, "big"))

    def reset(self):
        """Forget call ordinals so an identical call sequence replays."""
        self._call_ordinals = {}

    def sample_rollouts(self, request: CompleterRequest):
        state = request.state
        question = self.questions[state.question_id]
        chain_tokens = self._chain_tokens(state.question_id)
        cum = [0]
        for toks in chain_tokens:
            cum.append(cum[-1] + len(toks))

        prefix_tokens = list(state.key())
        # Number of whole ground steps covered by the prefix; snapped
        # boundaries keep prefixes aligned to ground step boundaries.
        consumed = 0
        while consumed < len(chain_tokens) and cum[consumed + 1] <= len(prefix_tokens):
            consumed += 1
        ground_prefix = [t for toks in chain_tokens[:consumed] for t in toks]
        prefix_has_error = prefix_tokens[: len(ground_prefix)] != ground_prefix

        rng = self._rng_for(state)
        spec = self.spec
        rollouts = []
        for _ in range(request.n_samples):
            steps = []
            error_steps = []
            for idx in range(consumed, len(chain_tokens)):
                ground = chain_tokens[idx]
                if rng.random() < spec.per_step_error_prob:
                    toks = [f"err{rng.randrange(1_000_000)}" for _ in ground]
                    error_steps.append(idx + 1)
                else:
                    toks = ground
                steps.append(make_step(" ".join(toks)))
            has_error = prefix_has_error or bool(error_steps)
            if not has_error or rng.random() < spec.recovery_prob:
                final = question.golden_answer
            elif spec.wrong_answer_pool:
                final = rng.choices(
                    spec.wrong_answer_pool, weights=spec.wrong_answer_weights
                )[0]
            else:
                first = error_steps[0] if error_steps else 0
                final = f"wrong{first}"
            rollouts.append(
                make_rollout(
                    steps,
                    final,
                    answers_equivalent(final, question.golden_answer),
                    meta={
                        "error_steps": error_steps,
                        "prefix_had_error": prefix_has_error,
                    },
                )
            )
        return rollouts


class RemoteCompleter(Completer):
    """HTTP client for a completion server.

    Wire protocol: POST {"prompt", "n", "temperature", "max_tokens"},
    response {"completions": [text, ...]}. Large requests are split into
    batches transparently. Malformed completions are kept as incorrect
    rollouts with an empty final answer.
    """

    def __init__(self, questions, endpoint, *, auth_token=None, timeout=30.0,
                 max_retries=3, batch_size=8, retry_backoff=0.5,
                 template=DEFAULT_PROMPT_TEMPLATE, session=None):
        self.questions = dict(questions)
        self.endpoint = endpoint
        self.auth_token = auth_token
        self.timeout = timeout
        self.max_retries = max_retries
        self.batch_size = batch_size
        self.retry_backoff = retry_backoff
        self.template = template
        self.session = session or requests.Session()

    def _headers(self):
        headers = {"Content-Type": "application/json"}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        return headers

    def _post(self, payload):
        last_error = None
        for attempt in range(self.max_retries):
            try:
                resp = self.session.post(
                    self.endpoint, json=payload, headers=self._headers(),
                    timeout=self.timeout,
                )
                if resp.status_code >= 500:
                    last_error = f"server returned {resp.status_code}"
                elif resp.status_code >= 400:
                    raise CompleterUnavailable(
                        f"completer rejected request: {resp.status_code}"
                    )
                else:
                    return resp.json()
            except (requests.ConnectionError, requests.Timeout, ValueError) as exc:
                last_error = str(exc)
            if attempt + 1 < self.max_retries:
                time.sleep(self.retry_backoff * (2 ** attempt))
        raise CompleterUnavailable(f"completer unreachable: {last_error}")

    def _to_rollout(self, completion, question):
        if not isinstance(completion, str) or not completion.strip():
            return make_rollout([], "", False)
        # One step per whitespace token: any consecutive token span is a
        # valid step, so binary search may cut anywhere.
        steps = [make_step(tok) for tok in completion.split()]
        answer = extract_final_answer(completion)
        return make_rollout(
            steps, answer, answers_equivalent(answer, question.golden_answer)
        )

    def sample_rollouts(self, request: CompleterRequest):
        question = self.questions[request.state.question_id]
        prompt = render_prompt(request.state, question, self.template)
        completions = []
        remaining = request.n_samples
        while remaining > 0:
            n = min(remaining, self.batch_size)
            data = self._post({
                "prompt": prompt,
                "n": n,
                "temperature": request.temperature,
                "max_tokens": request.max_tokens,
            })
            batch = data.get("completions", []) if isinstance(data, dict) else []
            completions.extend(batch[:n])
            # A short reply still consumes its slot; pad with failures.
            completions.extend([None] * (n - len(batch[:n])))
            remaining -= n
        return [self._to_rollout(c, question) for c in completions]
