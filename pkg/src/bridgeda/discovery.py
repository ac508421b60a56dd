"""Closeness-to-source scores for unlabeled target samples, rank splits and AUC.

All scores are oriented so that higher means closer to the source.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.distance import cdist, pdist
from scipy.stats import rankdata

from .autodiff import softmax
from .data import NO_LABEL, Domain, DomainSamples, DomainSequence
from .nn import ModelBundle
from .trainer import TrainConfig, train

METHODS = ("dscore", "mmd", "ood")

# d-score pretraining runs gentler than adaptation so the early phase is not
# dominated by the oscillation of the adversarial game
DSCORE_EPOCHS = 150
DSCORE_LR = 0.05


@dataclass
class ClosenessScore:
    method: str
    raw: np.ndarray
    oriented: np.ndarray

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown scoring method {self.method!r}")
        self.raw = np.asarray(self.raw, dtype=np.float64)
        self.oriented = np.asarray(self.oriented, dtype=np.float64)
        if self.raw.shape != self.oriented.shape or self.raw.ndim != 1:
            raise ValueError("raw and oriented scores must be aligned 1-D vectors")
        if not np.all(np.isfinite(self.oriented)):
            raise ValueError("scores must be finite")

    def __len__(self) -> int:
        return len(self.oriented)


def dscore(bundle: ModelBundle, X: np.ndarray, m: int = 1) -> ClosenessScore:
    """Discriminator output d_m(f(x)) of an early-stopped adversarial model."""
    if "stop_epoch" not in bundle.meta:
        raise ValueError("bundle has no recorded stop epoch; train it with the trainer first")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != bundle.extractor[0].in_width:
        raise ValueError(f"expected {bundle.extractor[0].in_width} input features, got shape {X.shape}")
    p = bundle.disc_prob(m, X)
    return ClosenessScore("dscore", p, p)


def median_bandwidth(source: np.ndarray, target: np.ndarray, max_target: int = 512, seed: int = 0) -> float:
    """Median pairwise distance over source plus a target subsample."""
    if len(target) > max_target:
        target = target[np.random.default_rng(seed).choice(len(target), max_target, replace=False)]
    d = pdist(np.vstack([source, target]))
    d = d[d > 0]
    if d.size == 0:
        raise ValueError("median heuristic needs at least two distinct points")
    return float(np.median(d))


def mmd_sq_to_set(target: np.ndarray, source: np.ndarray, sigma: float) -> np.ndarray:
    """Biased squared MMD between each target point (as a point mass) and the source set."""
    if sigma <= 0:
        raise ValueError("bandwidth must be positive")
    gamma = 1.0 / (2.0 * sigma**2)
    cross = np.exp(-gamma * cdist(target, source, "sqeuclidean")).mean(axis=1)
    within = np.exp(-gamma * cdist(source, source, "sqeuclidean")).mean()
    return 1.0 - 2.0 * cross + within


def mmd_closeness(target: np.ndarray, source: np.ndarray, bandwidth: float | str = "median") -> ClosenessScore:
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    source = np.atleast_2d(np.asarray(source, dtype=np.float64))
    if len(source) == 0:
        raise ValueError("source set is empty")
    if target.shape[1] != source.shape[1]:
        raise ValueError(f"feature dims differ: {target.shape[1]} vs {source.shape[1]}")
    sigma = median_bandwidth(source, target) if bandwidth == "median" else float(bandwidth)
    raw = mmd_sq_to_set(target, source, sigma)
    return ClosenessScore("mmd", raw, -raw)


def ood_closeness(logits: np.ndarray) -> ClosenessScore:
    """Maximum softmax probability of source-only classifier logits."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ValueError("need (n, N>=2) logits")
    p = softmax(logits).max(axis=1)
    return ClosenessScore("ood", p, p)


def ood_closeness_model(bundle: ModelBundle, X: np.ndarray) -> ClosenessScore:
    return ood_closeness(bundle.logits(X))


def rank_order(scores: np.ndarray) -> np.ndarray:
    """Indices sorted by score descending, ties by index ascending."""
    scores = np.asarray(scores, dtype=np.float64)
    if np.isnan(scores).any():
        raise ValueError("NaN score")
    return np.lexsort((np.arange(len(scores)), -scores))


def split_sizes(n: int, m: int) -> list[int]:
    base, rem = divmod(n, m)
    return [base + (1 if i < rem else 0) for i in range(m)]


def split_by_rank(scores: ClosenessScore | np.ndarray, m: int) -> list[np.ndarray]:
    """Index chunks D_1 (closest) .. D_m (farthest), sizes differing by at most one."""
    s = scores.oriented if isinstance(scores, ClosenessScore) else np.asarray(scores, dtype=np.float64)
    if m < 2:
        raise ValueError("need m >= 2 chunks")
    if m > len(s):
        raise ValueError(f"cannot split {len(s)} samples into {m} chunks")
    order = rank_order(s)
    bounds = np.cumsum([0] + split_sizes(len(s), m))
    return [order[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def assignment(scores: ClosenessScore | np.ndarray, m: int) -> np.ndarray:
    """Per-sample chunk number 1..m aligned with the input order."""
    chunks = split_by_rank(scores, m)
    out = np.zeros(sum(len(c) for c in chunks), dtype=np.int64)
    for k, c in enumerate(chunks, start=1):
        out[c] = k
    return out


def split_samples(samples: DomainSamples, scores: ClosenessScore, m: int) -> list[DomainSamples]:
    return [samples.take(idx) for idx in split_by_rank(scores, m)]


def auc(scores, labels) -> float:
    """P(score of a random near sample > score of a random far sample), ties count 1/2."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must align")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 (far) or 1 (near)")
    n_pos = int((labels == 1).sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both near and far samples")
    ranks = rankdata(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# ---------------------------------------------------------------- d-score pipeline


def _empty_like(samples: DomainSamples) -> DomainSamples:
    return DomainSamples(np.zeros((0, samples.dim)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))


def dscore_config(base: TrainConfig | None = None, epochs: int = DSCORE_EPOCHS, lr: float = DSCORE_LR) -> TrainConfig:
    """Pretraining config for the d-score model derived from ``base``."""
    return replace(base or TrainConfig(), epochs=epochs, lr=lr, disc_lr=lr)


def dscore_sequence(source: DomainSamples, target: DomainSamples):
    """Two-domain sequence (labeled source, unlabeled target pool) for d-score pretraining."""
    if not source.has_labels:
        raise ValueError("source samples need labels")
    src = DomainSamples(source.X, source.y, np.zeros(len(source), dtype=np.int64))
    tgt = DomainSamples(target.X, np.full(len(target), NO_LABEL), np.ones(len(target), dtype=np.int64))
    return DomainSequence([Domain("source", src, src, True), Domain("target", tgt, _empty_like(tgt), False)])


def stop_epoch_for(epochs: int, stop_fraction: float = 0.1) -> int:
    if not 0 < stop_fraction <= 1:
        raise ValueError("stop_fraction must be in (0, 1]")
    return max(1, int(round(stop_fraction * epochs)))


def pretrain_dscore(
    source: DomainSamples,
    target: DomainSamples,
    config: TrainConfig | None = None,
    stop_fraction: float = 0.1,
    near: np.ndarray | None = None,
) -> tuple[ModelBundle, list[tuple[int, float]]]:
    """Adversarially pretrain on (source, target pool) and keep the early-stopped model.

    The schedule is laid out for ``config.epochs``; the returned bundle is the
    snapshot after ``stop_epoch_for(config.epochs, stop_fraction)`` epochs.
    With ``near`` (1 = near, 0 = far, aligned with ``target``) training runs to
    the end and the d-score AUC after every epoch is returned as well.
    """
    config = config or dscore_config()
    if config.epochs < 1:
        raise ValueError("d-score pretraining needs at least one epoch")
    stop = stop_epoch_for(config.epochs, stop_fraction)
    seq = dscore_sequence(source, target)
    curve: list[tuple[int, float]] = []
    snap: dict[str, ModelBundle] = {}

    def on_epoch(epoch: int, bundle: ModelBundle, _rec: dict) -> None:
        if epoch == stop:
            snap["early"] = bundle.copy()
        if near is not None:
            curve.append((epoch, auc(bundle.disc_prob(1, target.X), near)))

    full = near is not None or config.warmup_fraction > 0
    run_cfg = config if full else replace(config, epochs=stop)
    train(seq, run_cfg, on_epoch=on_epoch)
    bundle = snap["early"]
    bundle.meta.update(kind="dscore", stop_epoch=stop)
    return bundle, curve
