"""Alternating adversarial training over a domain sequence.

Discriminator m separates the union of domains 0..m-1 from domain m. Each
minibatch does ``ratio`` ascent steps on every discriminator, then one
descent step on L_C + sum_m lambda_m L_{d_m} for the extractor and
classifier. With a two-domain sequence this is plain DANN trained by
alternating updates.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .autodiff import GraphBuilder, sigmoid
from .data import DomainSamples, DomainSequence, sample_union_batch
from .losses import LossReport, ce_node, disc_loss_node, objective_node, onehot
from .nn import LayerSpec, ModelBundle, OptimizerState, build_bundle, init_layers, mlp_node, step


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, batch: int, what: str):
        self.epoch, self.batch = epoch, batch
        super().__init__(f"non-finite {what} at epoch {epoch}, batch {batch}")


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    optimizer: str = "sgd"
    lr: float = 0.2
    momentum: float = 0.9
    disc_optimizer: str = "sgd"
    disc_lr: float = 0.2
    disc_momentum: float = 0.9
    adam_beta1: float = 0.9
    weight_decay: float = 0.0
    lambdas: list[float] | None = None
    warmup_fraction: float = 0.0
    lr_anneal: bool = False
    lambda_ramp: bool = False
    ratio: int = 1
    seed: int = 0
    nonsaturating: bool = False
    union_mode: str = "per-domain"
    eval_every: int = 1
    hidden: int = 15
    disc_hidden: int = 0

    def resolved_lambdas(self, n_disc: int) -> list[float]:
        lam = [1.0] * n_disc if self.lambdas is None else [float(v) for v in self.lambdas]
        if len(lam) != n_disc:
            raise ValueError(f"config has {len(lam)} lambda weights but the sequence needs {n_disc}")
        return lam

    def validate(self) -> None:
        if self.ratio < 1:
            raise ValueError("ratio must be >= 1")
        if self.lr <= 0 or self.disc_lr <= 0:
            raise ValueError("learning rates must be > 0")
        if self.batch_size < 1 or self.epochs < 0 or self.eval_every < 1:
            raise ValueError("batch_size and eval_every must be >= 1, epochs >= 0")
        if not 0 <= self.warmup_fraction <= 1:
            raise ValueError("warmup_fraction must be in [0, 1]")
        if self.union_mode not in ("per-domain", "pooled"):
            raise ValueError(f"unknown union_mode {self.union_mode!r}")

    def lambda_scale(self, epoch: int) -> float:
        """Multiplier on every lambda: linear warm-up, optionally times a sigmoid ramp 2/(1+e^-10p) - 1."""
        warm = self.warmup_fraction * self.epochs
        scale = 1.0 if warm <= 0 else min(1.0, (epoch + 1) / warm)
        if self.lambda_ramp and self.epochs > 0:
            scale *= 2.0 / (1.0 + math.exp(-10.0 * epoch / self.epochs)) - 1.0
        return scale

    def lr_factor(self, epoch: int, batch: int, n_steps: int) -> float:
        """Learning-rate multiplier; with annealing (1 + 10 p)^-0.75 over training progress p."""
        if not self.lr_anneal or self.epochs == 0:
            return 1.0
        p = (epoch * n_steps + batch) / (self.epochs * n_steps)
        return (1.0 + 10.0 * p) ** -0.75

    def fc_optimizer(self) -> OptimizerState:
        return OptimizerState(self.optimizer, self.lr, self.momentum, beta1=self.adam_beta1,
                              weight_decay=self.weight_decay)

    def d_optimizer(self) -> OptimizerState:
        return OptimizerState(self.disc_optimizer, self.disc_lr, self.disc_momentum, beta1=self.adam_beta1,
                              weight_decay=self.weight_decay)


@dataclass
class RunHistory:
    config: dict
    seed: int
    domains: list[str]
    epochs: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0

    def final_accuracy(self) -> dict[str, float]:
        for rec in reversed(self.epochs):
            if "val_acc" in rec:
                return rec["val_acc"]
        return {}

    def jsonl(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.epochs)


def evaluate(bundle: ModelBundle, samples: DomainSamples) -> float:
    """Argmax accuracy; equal logits resolve to the lower class index."""
    if len(samples) == 0:
        raise ValueError("cannot evaluate on an empty set")
    if (samples.y < 0).any():
        raise ValueError("evaluation needs labels on every sample")
    pred = np.argmax(bundle.logits(samples.X), axis=1)
    return float(np.mean(pred == samples.y))


def validation_accuracy(bundle: ModelBundle, seq: DomainSequence) -> dict[str, float]:
    """Held-out accuracy per domain; domains without labeled test rows are skipped."""
    return {d.name: evaluate(bundle, d.test) for d in seq.domains if d.test.has_labels}


# ---------------------------------------------------------------- graphs


def _disc_graph(bundle: ModelBundle, n_disc: int):
    g = GraphBuilder()
    losses = []
    for m in range(1, n_disc + 1):
        fu = bundle.features_node(g, g.input(f"xu.{m}"))
        fd = bundle.features_node(g, g.input(f"xd.{m}"))
        losses.append(disc_loss_node(g, bundle.disc_logit_node(g, m, fu), bundle.disc_logit_node(g, m, fd)))
    total = losses[0]
    for node in losses[1:]:
        total = g.add(total, node)
    return g.build(total), losses


def _extractor_graph(bundle: ModelBundle, n_disc: int, batch_size: int, nonsaturating: bool):
    g = GraphBuilder()
    feat_s = bundle.features_node(g, g.input("xs"))
    l_c = ce_node(g, bundle.logits_node(g, feat_s), g.input("ys"), batch_size)
    adv, report = [], []
    for m in range(1, n_disc + 1):
        lu = bundle.disc_logit_node(g, m, bundle.features_node(g, g.input(f"xu.{m}")))
        ld = bundle.disc_logit_node(g, m, bundle.features_node(g, g.input(f"xd.{m}")))
        minimax = disc_loss_node(g, lu, ld)
        report.append(minimax)
        adv.append(disc_loss_node(g, lu, ld, nonsaturating=True) if nonsaturating else minimax)
    return g.build(objective_node(g, l_c, adv)), l_c, report


def _source_graph(bundle: ModelBundle, batch_size: int):
    g = GraphBuilder()
    l_c = ce_node(g, bundle.logits_node(g, bundle.features_node(g, g.input("xs"))), g.input("ys"), batch_size)
    return g.build(l_c)


def _check(value: float, epoch: int, batch: int, what: str) -> None:
    if not math.isfinite(value):
        raise TrainingDiverged(epoch, batch, what)


def _safe_step(params, grads, state, epoch, batch):
    try:
        return step(params, grads, state)
    except FloatingPointError as exc:
        raise TrainingDiverged(epoch, batch, str(exc)) from exc


# ---------------------------------------------------------------- training


def init_bundle(seq: DomainSequence, config: TrainConfig, n_disc: int | None = None) -> ModelBundle:
    n_classes = int(seq[0].train.y.max()) + 1
    disc_hidden = [LayerSpec(config.hidden, config.disc_hidden, "sigmoid")] if config.disc_hidden else None
    return build_bundle([LayerSpec(seq[0].train.dim, config.hidden, "sigmoid")], max(n_classes, 2),
                        n_disc or seq.M + 1, config.seed, discriminator_hidden=disc_hidden)


def pretrain_source(
    seq: DomainSequence, config: TrainConfig, history: RunHistory | None = None
) -> ModelBundle:
    """Fit f and C on the labeled source with the classification loss alone."""
    config.validate()
    if not seq[0].labeled or not seq[0].train.has_labels:
        raise ValueError("source domain must be labeled")
    bundle = init_bundle(seq, config)
    xs_all, ys_all = seq[0].train.X, seq.train_labels(0)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[1])
    n_steps = math.ceil(len(xs_all) / config.batch_size)
    graphs: dict[int, object] = {}
    state = config.fc_optimizer()
    names = tuple(bundle.fc_names)
    for epoch in range(config.epochs):
        perm = rng.permutation(len(xs_all))
        total = 0.0
        for b in range(n_steps):
            idx = perm[b * config.batch_size:(b + 1) * config.batch_size]
            graph = graphs.get(len(idx)) or graphs.setdefault(len(idx), _source_graph(bundle, len(idx)))
            inputs = dict(bundle.params, xs=xs_all[idx], ys=onehot(ys_all[idx], bundle.n_classes))
            value, grads = graph.value_and_grad(inputs, wrt=names)
            _check(value, epoch, b, "classification loss")
            bundle.params, state = _safe_step(bundle.params, grads, state, epoch, b)
            total += value
        if history is not None and (epoch + 1) % config.eval_every == 0:
            history.epochs.append({"epoch": epoch + 1, "L_C": total / n_steps,
                                   "val_acc": {seq[0].name: evaluate(bundle, seq[0].test)}})
    bundle.meta.update(kind="source_only", stop_epoch=config.epochs)
    return bundle


def train(
    seq: DomainSequence,
    config: TrainConfig,
    bundle: ModelBundle | None = None,
    trace: list | None = None,
    on_epoch: Callable[[int, ModelBundle, dict], None] | None = None,
) -> tuple[ModelBundle, RunHistory]:
    """Adversarial training with M+1 discriminators over ``seq``.

    ``trace``, if given, receives a copy of the parameters after every
    optimizer update. ``on_epoch(epoch, bundle, record)`` runs after each
    epoch with that epoch's history record.
    """
    config.validate()
    n_disc = seq.M + 1
    base_lambdas = config.resolved_lambdas(n_disc)
    if not seq[0].labeled:
        raise ValueError("source domain must be labeled")
    bundle = init_bundle(seq, config) if bundle is None else bundle.copy()
    if bundle.n_discriminators != n_disc:
        raise ValueError(f"bundle has {bundle.n_discriminators} discriminators, sequence needs {n_disc}")
    history = RunHistory(config=asdict(config), seed=config.seed, domains=seq.names)
    t0 = time.perf_counter()

    xs_all, ys_all = seq[0].train.X, seq.train_labels(0)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[1])
    n_steps = math.ceil(len(xs_all) / config.batch_size)
    disc_graph, _ = _disc_graph(bundle, n_disc)
    ext_graphs: dict[int, tuple] = {}
    fc_state, d_state = config.fc_optimizer(), config.d_optimizer()
    fc_names, d_names = tuple(bundle.fc_names), tuple(bundle.disc_names())

    for epoch in range(config.epochs):
        lam = [v * config.lambda_scale(epoch) for v in base_lambdas]
        lam_inputs = {f"lambda.{m}": np.asarray(v) for m, v in enumerate(lam, start=1)}
        perm = rng.permutation(len(xs_all))
        sums = np.zeros(1 + n_disc)
        for b in range(n_steps):
            idx = perm[b * config.batch_size:(b + 1) * config.batch_size]
            scale = config.lr_factor(epoch, b, n_steps)
            fc_state.lr, d_state.lr = config.lr * scale, config.disc_lr * scale
            batch = {}
            for m in range(1, n_disc + 1):
                batch[f"xu.{m}"], batch[f"xd.{m}"] = sample_union_batch(seq, m, config.batch_size,
                                                                        config.union_mode, rng)
            for _ in range(config.ratio):
                value, grads = disc_graph.value_and_grad(dict(bundle.params, **batch), wrt=d_names)
                _check(value, epoch, b, "discriminator loss")
                bundle.params, d_state = _safe_step(bundle.params, {k: -g for k, g in grads.items()},
                                                    d_state, epoch, b)
                if trace is not None:
                    trace.append({k: v.copy() for k, v in bundle.params.items()})
            if len(idx) not in ext_graphs:
                ext_graphs[len(idx)] = _extractor_graph(bundle, n_disc, len(idx), config.nonsaturating)
            graph, l_c_node, ld_nodes = ext_graphs[len(idx)]
            inputs = dict(bundle.params, xs=xs_all[idx], ys=onehot(ys_all[idx], bundle.n_classes),
                          **batch, **lam_inputs)
            value, grads, watched = graph.run(inputs, wrt=fc_names, watch=(l_c_node, *ld_nodes))
            _check(value, epoch, b, "extractor objective")
            bundle.params, fc_state = _safe_step(bundle.params, grads, fc_state, epoch, b)
            if trace is not None:
                trace.append({k: v.copy() for k, v in bundle.params.items()})
            sums += np.array([float(w) for w in watched])
        means = sums / n_steps
        report = LossReport(float(means[0]), [float(v) for v in means[1:]], lam)
        rec = {"epoch": epoch + 1, "loss": report.as_dict()}
        if (epoch + 1) % config.eval_every == 0 or epoch + 1 == config.epochs:
            rec["val_acc"] = validation_accuracy(bundle, seq)
        history.epochs.append(rec)
        if on_epoch is not None:
            on_epoch(epoch + 1, bundle, rec)

    history.wall_clock = time.perf_counter() - t0
    bundle.meta.update(kind="adapted", stop_epoch=config.epochs, domains=seq.names)
    return bundle, history


def dann_reference(
    source: DomainSamples, target: DomainSamples, config: TrainConfig, trace: list | None = None
) -> ModelBundle:
    """Straight DANN loop: one discriminator, source vs target, alternating updates.

    Kept separate from :func:`train` so that the bridged trainer can be checked
    against it; only the per-domain union sampling mode applies here.
    """
    config.validate()
    (lam,) = config.resolved_lambdas(1)
    bundle = build_bundle([LayerSpec(source.dim, config.hidden, "sigmoid")], 2, 1, config.seed)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[1])
    B = config.batch_size
    n_steps = math.ceil(len(source) / B)

    g = GraphBuilder()
    d_loss = disc_loss_node(
        g,
        bundle.disc_logit_node(g, 1, bundle.features_node(g, g.input("xu.1"))),
        bundle.disc_logit_node(g, 1, bundle.features_node(g, g.input("xd.1"))),
    )
    d_graph = g.build(d_loss)

    def objective_graph(n):
        h = GraphBuilder()
        l_c = ce_node(h, bundle.logits_node(h, bundle.features_node(h, h.input("xs"))), h.input("ys"), n)
        ls = bundle.disc_logit_node(h, 1, bundle.features_node(h, h.input("xu.1")))
        lt = bundle.disc_logit_node(h, 1, bundle.features_node(h, h.input("xd.1")))
        l_d = disc_loss_node(h, ls, lt, nonsaturating=config.nonsaturating)
        return h.build(h.add(l_c, h.mul(h.input("lambda.1"), l_d)))

    graphs = {}
    fc_state, d_state = config.fc_optimizer(), config.d_optimizer()
    fc_names, d_names = tuple(bundle.fc_names), tuple(bundle.disc_names(1))
    for epoch in range(config.epochs):
        lam_in = np.asarray(lam * config.lambda_scale(epoch))
        perm = rng.permutation(len(source))
        for b in range(n_steps):
            idx = perm[b * B:(b + 1) * B]
            scale = config.lr_factor(epoch, b, n_steps)
            fc_state.lr, d_state.lr = config.lr * scale, config.disc_lr * scale
            xu = source.X[rng.integers(0, len(source), size=B)]
            xd = target.X[rng.integers(0, len(target), size=B)]
            for _ in range(config.ratio):
                grads = d_graph.grad(dict(bundle.params, **{"xu.1": xu, "xd.1": xd}), wrt=d_names)
                bundle.params, d_state = step(bundle.params, {k: -v for k, v in grads.items()}, d_state)
                if trace is not None:
                    trace.append({k: v.copy() for k, v in bundle.params.items()})
            if len(idx) not in graphs:
                graphs[len(idx)] = objective_graph(len(idx))
            inputs = dict(bundle.params, xs=source.X[idx], ys=onehot(source.y[idx], 2),
                          **{"xu.1": xu, "xd.1": xd, "lambda.1": lam_in})
            grads = graphs[len(idx)].grad(inputs, wrt=fc_names)
            bundle.params, fc_state = step(bundle.params, grads, fc_state)
            if trace is not None:
                trace.append({k: v.copy() for k, v in bundle.params.items()})
    return bundle


# ---------------------------------------------------------------- audit


@dataclass
class AuditConfig:
    hidden: int = 15
    disc_hidden: int = 0
    epochs: int = 300
    lr: float = 0.05
    train_fraction: float = 0.5
    seed: int = 0


def discrepancy_audit(bundle: ModelBundle, a: np.ndarray, b: np.ndarray, audit: AuditConfig | None = None) -> float:
    """Proxy domain distance 2(1 - 2 err) of a probe trained on frozen features.

    The probe is fit on a random half of each domain and its balanced error
    is measured on the other half. The result is clamped to [0, 2].
    """
    audit = audit or AuditConfig()
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each domain needs at least two samples for a held-out audit")
    fa, fb = bundle.features(a), bundle.features(b)
    rng = np.random.default_rng(audit.seed)
    pa, pb = rng.permutation(len(fa)), rng.permutation(len(fb))
    na = max(1, min(len(fa) - 1, int(round(audit.train_fraction * len(fa)))))
    nb = max(1, min(len(fb) - 1, int(round(audit.train_fraction * len(fb)))))

    k = fa.shape[1]
    layers = ([LayerSpec(k, audit.hidden, "sigmoid"), LayerSpec(audit.hidden, 1)] if audit.hidden
              else [LayerSpec(k, 1)])
    params = init_layers("probe", layers, rng)
    g = GraphBuilder()
    loss = disc_loss_node(g, mlp_node(g, "probe", layers, g.input("pos")), mlp_node(g, "probe", layers, g.input("neg")))
    graph = g.build(g.scale(loss, -1.0))
    state = OptimizerState("adam", audit.lr)
    names = tuple(params)
    inputs = {"pos": fa[pa[:na]], "neg": fb[pb[:nb]]}
    for _ in range(audit.epochs):
        grads = graph.grad(dict(params, **inputs), wrt=names)
        params, state = step(params, grads, state)

    def prob(x):
        h = x
        for i, spec in enumerate(layers):
            h = h @ params[f"probe.{i}.W"] + params[f"probe.{i}.b"]
            if spec.activation == "sigmoid":
                h = sigmoid(h)
        return sigmoid(h)[:, 0]

    err_a = float(np.mean(prob(fa[pa[na:]]) < 0.5))
    err_b = float(np.mean(prob(fb[pb[nb:]]) >= 0.5))
    balanced = 0.5 * (err_a + err_b)
    return float(np.clip(2.0 * (1.0 - 2.0 * balanced), 0.0, 2.0))
