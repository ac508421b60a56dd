"""Classification, discriminator and combined extractor objectives.

Each objective has a numpy form operating on probabilities (for reporting
and testing) and a graph form operating on logits (for training). The graph
forms compute ``log(1 - sigmoid(z))`` as ``log(sigmoid(-z))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import LOG_CLAMP, GraphBuilder

SIMPLEX_TOL = 1e-9


def _log(p: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(p, LOG_CLAMP))


def classification_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy of probability rows against integer labels."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise ValueError("classification_loss needs a non-empty (batch, classes) array")
    if labels.shape != (probs.shape[0],):
        raise ValueError(f"labels shape {labels.shape} does not match {probs.shape[0]} rows")
    bad = np.abs(probs.sum(axis=1) - 1.0) > SIMPLEX_TOL
    if bad.any() or (probs < 0).any():
        row = int(np.argmax(bad)) if bad.any() else int(np.argmax((probs < 0).any(axis=1)))
        raise ValueError(f"row {row} is not a probability vector")
    if (labels < 0).any() or (labels >= probs.shape[1]).any():
        raise ValueError("labels out of range")
    return float(-_log(probs[np.arange(len(labels)), labels.astype(int)]).mean())


def discriminator_loss(d_pos: np.ndarray, d_neg: np.ndarray) -> float:
    """mean log d over the positive (precedent) side + mean log(1 - d) over the negative side."""
    d_pos = np.asarray(d_pos, dtype=np.float64).ravel()
    d_neg = np.asarray(d_neg, dtype=np.float64).ravel()
    if d_pos.size == 0 or d_neg.size == 0:
        raise ValueError("discriminator_loss needs both sides non-empty")
    return float(_log(d_pos).mean() + _log(1.0 - d_neg).mean())


def extractor_objective(l_c: float, l_d: list[float], lambdas: list[float]) -> float:
    if len(l_d) != len(lambdas):
        raise ValueError(f"{len(l_d)} discriminator losses but {len(lambdas)} weights")
    total = l_c
    for lam, ld in zip(lambdas, l_d):
        total = total + lam * ld
    return float(total)


@dataclass
class LossReport:
    l_c: float
    l_d: list[float]
    lambdas: list[float]
    objective: float = field(init=False)

    def __post_init__(self):
        self.objective = extractor_objective(self.l_c, self.l_d, self.lambdas)

    def as_dict(self) -> dict:
        return {"L_C": self.l_c, "L_d": list(self.l_d), "lambda": list(self.lambdas), "objective": self.objective}


# ---------------------------------------------------------------- graph forms


def ce_node(g: GraphBuilder, logits: int, onehot: int, batch_size: int) -> int:
    """Cross-entropy from logits; ``onehot`` is a bound (batch, N) input."""
    logp = g.log(g.softmax(logits))
    return g.scale(g.sum(g.mul(onehot, logp)), -1.0 / batch_size)


def disc_loss_node(g: GraphBuilder, logit_pos: int, logit_neg: int, nonsaturating: bool = False) -> int:
    """Discriminator objective on logits.

    With ``nonsaturating`` the sides swap roles, giving the flipped-label
    surrogate an extractor can descend without vanishing gradients.
    """
    if nonsaturating:
        pos = g.mean(g.log(g.sigmoid(g.scale(logit_pos, -1.0))))
        neg = g.mean(g.log(g.sigmoid(logit_neg)))
        return g.scale(g.add(pos, neg), -1.0)
    pos = g.mean(g.log(g.sigmoid(logit_pos)))
    neg = g.mean(g.log(g.sigmoid(g.scale(logit_neg, -1.0))))
    return g.add(pos, neg)


def objective_node(g: GraphBuilder, l_c: int, l_d: list[int]) -> int:
    """L_C + sum_m lambda_m * L_{d_m}; weights are bound as scalar inputs "lambda.<m>"."""
    total = l_c
    for m, node in enumerate(l_d, start=1):
        total = g.add(total, g.mul(g.input(f"lambda.{m}"), node))
    return total


def onehot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), np.asarray(labels, dtype=int)] = 1.0
    return out
