"""Process-reward-model scoring and training.

The real PRM in this setting is a large neural model; here a small
logistic model over hand-crafted (prefix, step) features stands in so the
full pipeline can be verified end to end. The three training objectives
(pointwise soft, pointwise hard, pairwise Bradley-Terry) share one
prediction head y = sigmoid(w . phi(prefix, step)).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import EmptyDataset, EmptySolution

SCORE_EPS = 1e-7
FEATURE_VERSION = 1
N_HASH_BUCKETS = 64
N_FEATURES = N_HASH_BUCKETS + 4  # buckets + bias, length, overlap, digit ratio


def clamp_score(y: float) -> float:
    return min(max(y, SCORE_EPS), 1.0 - SCORE_EPS)


# -- losses ----------------------------------------------------------------

def pointwise_loss(y_hat: float, y: float) -> float:
    """Cross-entropy of prediction y against (possibly soft) label y_hat."""
    y = clamp_score(y)
    return -(y_hat * math.log(y) + (1.0 - y_hat) * math.log(1.0 - y))


def pointwise_loss_grad(y_hat: float, y: float) -> float:
    """d(pointwise_loss)/dy."""
    y = clamp_score(y)
    return -(y_hat / y) + (1.0 - y_hat) / (1.0 - y)


def pairwise_loss(pref_a: float, y_a: float, y_b: float) -> float:
    """Cross-entropy between the preference target (pref_a, 1 - pref_a) and
    the Bradley-Terry prediction (y_a, y_b) / (y_a + y_b)."""
    y_a, y_b = clamp_score(y_a), clamp_score(y_b)
    p_a = y_a / (y_a + y_b)
    p_a = clamp_score(p_a)
    return -(pref_a * math.log(p_a) + (1.0 - pref_a) * math.log(1.0 - p_a))


def pairwise_loss_grad(pref_a: float, y_a: float, y_b: float):
    """(dL/dy_a, dL/dy_b) for the pairwise loss."""
    y_a, y_b = clamp_score(y_a), clamp_score(y_b)
    s = y_a + y_b
    p_a = clamp_score(y_a / s)
    dl_dpa = -(pref_a / p_a) + (1.0 - pref_a) / (1.0 - p_a)
    return dl_dpa * (y_b / s**2), dl_dpa * (-y_a / s**2)


# -- featurization ---------------------------------------------------------

def _bucket(gram: str) -> int:
    digest = hashlib.blake2b(gram.encode(), digest_size=4).digest()
    return int.from_bytes(digest, "big") % N_HASH_BUCKETS


def featurize(prefix_text: str, step_text: str) -> np.ndarray:
    """Fixed-dimension features of a (prefix, step) pair.

    Character trigram hash buckets over the step text, plus bias, step
    length, token overlap with the prefix, and digit ratio. Trailing
    whitespace is stripped first, so scores are invariant to it.
    """
    step_text = step_text.strip()
    prefix_text = prefix_text.strip()
    phi = np.zeros(N_FEATURES)
    padded = f" {step_text} "
    for i in range(len(padded) - 2):
        phi[_bucket(padded[i:i + 3])] += 1.0
    n_grams = max(len(padded) - 2, 1)
    phi[:N_HASH_BUCKETS] /= n_grams
    step_tokens = step_text.split()
    prefix_tokens = set(prefix_text.split())
    phi[N_HASH_BUCKETS] = 1.0  # bias
    phi[N_HASH_BUCKETS + 1] = len(step_tokens) / 16.0
    if step_tokens:
        phi[N_HASH_BUCKETS + 2] = sum(
            1 for t in step_tokens if t in prefix_tokens
        ) / len(step_tokens)
    if step_text:
        phi[N_HASH_BUCKETS + 3] = sum(c.isdigit() for c in step_text) / len(step_text)
    return phi


# -- model -----------------------------------------------------------------

@dataclass
class TrainSettings:
    learning_rate: float = 2.0
    epochs: int = 300


@dataclass
class ToyPrmModel:
    weights: np.ndarray
    objective: str = "soft"
    settings: TrainSettings = field(default_factory=TrainSettings)
    feature_version: int = FEATURE_VERSION

    def predict_features(self, X: np.ndarray) -> np.ndarray:
        z = X @ self.weights
        return np.clip(1.0 / (1.0 + np.exp(-z)), SCORE_EPS, 1.0 - SCORE_EPS)

    def score(self, prefix_text: str, step_text: str) -> float:
        return float(
            self.predict_features(featurize(prefix_text, step_text)[None, :])[0]
        )


def score_step(model: ToyPrmModel, prefix_text: str, step_text: str) -> float:
    """Deterministic step score in (0, 1)."""
    return model.score(prefix_text, step_text)


def aggregate_solution_score(step_scores, mode: str = "product") -> float:
    """Solution score: product of step scores (or the minimum)."""
    scores = list(step_scores)
    if not scores:
        raise EmptySolution("cannot aggregate an empty list of step scores")
    if mode == "min":
        return min(scores)
    out = 1.0
    for s in scores:
        out *= s
    return out


def score_solution(model: ToyPrmModel, question_statement: str, step_texts,
                   mode: str = "product") -> float:
    """Score each step given the question plus preceding steps, then aggregate."""
    prefix = question_statement
    scores = []
    for step in step_texts:
        scores.append(score_step(model, prefix, step))
        prefix = f"{prefix} {step}"
    return aggregate_solution_score(scores, mode=mode)


# -- training --------------------------------------------------------------

def _pointwise_fit(X, targets, settings):
    n = len(targets)
    w = np.zeros(X.shape[1])
    curve = []
    for _ in range(settings.epochs):
        y = np.clip(1.0 / (1.0 + np.exp(-(X @ w))), SCORE_EPS, 1.0 - SCORE_EPS)
        loss = -np.mean(targets * np.log(y) + (1 - targets) * np.log(1 - y))
        curve.append(float(loss))
        grad = X.T @ (y - targets) / n
        w -= settings.learning_rate * grad
    return w, curve


def _pairwise_fit(Xa, Xb, prefs, settings):
    n = len(prefs)
    w = np.zeros(Xa.shape[1])
    curve = []
    for _ in range(settings.epochs):
        ya = np.clip(1.0 / (1.0 + np.exp(-(Xa @ w))), SCORE_EPS, 1.0 - SCORE_EPS)
        yb = np.clip(1.0 / (1.0 + np.exp(-(Xb @ w))), SCORE_EPS, 1.0 - SCORE_EPS)
        s = ya + yb
        pa = np.clip(ya / s, SCORE_EPS, 1.0 - SCORE_EPS)
        loss = -np.mean(prefs * np.log(pa) + (1 - prefs) * np.log(1 - pa))
        curve.append(float(loss))
        dl_dpa = -(prefs / pa) + (1 - prefs) / (1 - pa)
        dl_dya = dl_dpa * yb / s**2
        dl_dyb = dl_dpa * (-ya) / s**2
        grad = (
            Xa.T @ (dl_dya * ya * (1 - ya)) + Xb.T @ (dl_dyb * yb * (1 - yb))
        ) / n
        w -= settings.learning_rate * grad
    return w, curve


def train_toy_prm(examples=None, objective: str = "soft", settings=None,
                  seed: int = 0, pairs=None):
    """Fit the toy PRM with one of the three objectives.

    ``examples`` feeds the pointwise objectives (soft uses MC values, hard
    uses the 0/1 labels); ``pairs`` feeds the pairwise objective. Returns
    (model, loss_curve). Deterministic: full-batch gradient descent from a
    zero initialization (``seed`` is accepted for interface stability).
    """
    del seed  # training is fully deterministic
    settings = settings or TrainSettings()
    if objective in ("soft", "hard"):
        if not examples:
            raise EmptyDataset("pointwise training requires examples")
        X = np.stack([featurize(ex.prefix_text, ex.step_text) for ex in examples])
        if objective == "soft":
            targets = np.array([ex.mc_value for ex in examples], dtype=float)
        else:
            targets = np.array([ex.hard_label for ex in examples], dtype=float)
        w, curve = _pointwise_fit(X, targets, settings)
    elif objective == "pairwise":
        if not pairs:
            raise EmptyDataset("pairwise training requires preference pairs")
        Xa = np.stack([featurize(p.prefix_text, p.step_a) for p in pairs])
        Xb = np.stack([featurize(p.prefix_text, p.step_b) for p in pairs])
        prefs = np.array([p.pref_a for p in pairs], dtype=float)
        w, curve = _pairwise_fit(Xa, Xb, prefs, settings)
    else:
        raise ValueError(f"unknown objective: {objective!r}")
    model = ToyPrmModel(weights=w, objective=objective, settings=settings)
    return model, curve


def step_accuracy(model: ToyPrmModel, examples) -> float:
    """Fraction of examples whose thresholded score matches the hard label."""
    if not examples:
        raise EmptyDataset("accuracy requires a nonempty dataset")
    X = np.stack([featurize(ex.prefix_text, ex.step_text) for ex in examples])
    pred = model.predict_features(X) > 0.5
    labels = np.array([ex.hard_label for ex in examples], dtype=bool)
    return float(np.mean(pred == labels))


# -- checkpoints -----------------------------------------------------------

def save_model(model: ToyPrmModel, path):
    doc = {
        "feature_version": model.feature_version,
        "n_hash_buckets": N_HASH_BUCKETS,
        "objective": model.objective,
        "settings": asdict(model.settings),
        "weights": [float(w) for w in model.weights],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_model(path) -> ToyPrmModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc["feature_version"] != FEATURE_VERSION:
        raise ValueError("checkpoint feature map version mismatch")
    return ToyPrmModel(
        weights=np.array(doc["weights"], dtype=float),
        objective=doc["objective"],
        settings=TrainSettings(**doc["settings"]),
        feature_version=doc["feature_version"],
    )
