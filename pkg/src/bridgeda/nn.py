"""Model blocks (extractor f, classifier C, discriminators d_1..d_{M+1}) and optimizers.

Parameters live in a flat ``dict[str, ndarray]`` keyed by block-qualified
names such as ``"f.0.W"`` or ``"d2.0.b"``. The same names are used as input
names in autodiff graphs, so a parameter dict can be bound directly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import GraphBuilder, sigmoid

CHECKPOINT_FORMAT_VERSION = 1
ACTIVATIONS = ("sigmoid", "relu", "none")


@dataclass(frozen=True)
class LayerSpec:
    in_width: int
    out_width: int
    activation: str = "none"

    def __post_init__(self):
        if self.in_width < 1 or self.out_width < 1:
            raise ValueError(f"layer widths must be >= 1, got {self.in_width}->{self.out_width}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def _check_chain(layers: list[LayerSpec], what: str) -> None:
    if not layers:
        raise ValueError(f"{what} needs at least one layer")
    for a, b in zip(layers, layers[1:]):
        if a.out_width != b.in_width:
            raise ValueError(f"{what}: width {a.out_width} does not feed {b.in_width}")


def init_layers(prefix: str, layers: list[LayerSpec], rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases."""
    params = {}
    for i, spec in enumerate(layers):
        limit = np.sqrt(6.0 / (spec.in_width + spec.out_width))
        params[f"{prefix}.{i}.W"] = rng.uniform(-limit, limit, size=(spec.in_width, spec.out_width))
        params[f"{prefix}.{i}.b"] = np.zeros(spec.out_width)
    return params


def mlp_node(g: GraphBuilder, prefix: str, layers: list[LayerSpec], x: int) -> int:
    h = x
    for i, spec in enumerate(layers):
        h = g.bias_add(g.matmul(h, g.input(f"{prefix}.{i}.W")), g.input(f"{prefix}.{i}.b"))
        if spec.activation == "sigmoid":
            h = g.sigmoid(h)
        elif spec.activation == "relu":
            h = g.relu(h)
    return h


def mlp_forward(params: dict[str, np.ndarray], prefix: str, layers: list[LayerSpec], x: np.ndarray) -> np.ndarray:
    """Plain numpy forward pass; used for inference where no gradient is needed."""
    h = np.asarray(x, dtype=np.float64)
    for i, spec in enumerate(layers):
        h = h @ params[f"{prefix}.{i}.W"] + params[f"{prefix}.{i}.b"]
        if spec.activation == "sigmoid":
            h = sigmoid(h)
        elif spec.activation == "relu":
            h = np.maximum(h, 0.0)
    return h


@dataclass
class ModelBundle:
    extractor: list[LayerSpec]
    classifier: list[LayerSpec]
    discriminator: list[LayerSpec]
    n_discriminators: int
    params: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def feature_dim(self) -> int:
        return self.extractor[-1].out_width

    @property
    def n_classes(self) -> int:
        return self.classifier[-1].out_width

    @staticmethod
    def disc_prefix(m: int) -> str:
        return f"d{m}"

    def block_names(self, block: str) -> list[str]:
        """Parameter names of a block: "f", "C" or a discriminator prefix like "d1"."""
        return [k for k in self.params if k.split(".", 1)[0] == block]

    @property
    def fc_names(self) -> list[str]:
        return self.block_names("f") + self.block_names("C")

    def disc_names(self, m: int | None = None) -> list[str]:
        if m is not None:
            return self.block_names(self.disc_prefix(m))
        return [k for j in range(1, self.n_discriminators + 1) for k in self.block_names(self.disc_prefix(j))]

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "ModelBundle":
        return ModelBundle(
            list(self.extractor),
            list(self.classifier),
            list(self.discriminator),
            self.n_discriminators,
            {k: v.copy() for k, v in self.params.items()},
            json.loads(json.dumps(self.meta)),
        )

    # graph pieces
    def features_node(self, g: GraphBuilder, x: int) -> int:
        return mlp_node(g, "f", self.extractor, x)

    def logits_node(self, g: GraphBuilder, feat: int) -> int:
        return mlp_node(g, "C", self.classifier, feat)

    def disc_logit_node(self, g: GraphBuilder, m: int, feat: int) -> int:
        return mlp_node(g, self.disc_prefix(m), self.discriminator, feat)

    # numpy inference
    def features(self, x: np.ndarray) -> np.ndarray:
        return mlp_forward(self.params, "f", self.extractor, x)

    def logits(self, x: np.ndarray) -> np.ndarray:
        return mlp_forward(self.params, "C", self.classifier, self.features(x))

    def disc_prob(self, m: int, x: np.ndarray) -> np.ndarray:
        feat = self.features(x)
        if feat.shape[1] != self.discriminator[0].in_width:
            raise ValueError(f"feature dim {feat.shape[1]} does not match discriminator input")
        return sigmoid(mlp_forward(self.params, self.disc_prefix(m), self.discriminator, feat))[:, 0]


def build_bundle(
    extractor: list[LayerSpec],
    n_classes: int,
    n_discriminators: int,
    seed: int,
    classifier_hidden: list[LayerSpec] | None = None,
    discriminator_hidden: list[LayerSpec] | None = None,
) -> ModelBundle:
    """Initialise f, C and ``n_discriminators`` independent discriminators.

    Heads are linear on the K-dim feature unless hidden layers are given.
    """
    if n_discriminators < 1:
        raise ValueError("need at least one discriminator")
    if n_classes < 2:
        raise ValueError("need at least two classes")
    _check_chain(extractor, "extractor")
    k = extractor[-1].out_width
    classifier = list(classifier_hidden or []) + [
        LayerSpec(classifier_hidden[-1].out_width if classifier_hidden else k, n_classes)
    ]
    discriminator = list(discriminator_hidden or []) + [
        LayerSpec(discriminator_hidden[-1].out_width if discriminator_hidden else k, 1)
    ]
    _check_chain(classifier, "classifier")
    _check_chain(discriminator, "discriminator")
    if classifier[0].in_width != k or discriminator[0].in_width != k:
        raise ValueError(f"heads must take the {k}-dim feature")

    # one child stream per block so adding discriminators never shifts f or C
    streams = np.random.SeedSequence(seed).spawn(2 + n_discriminators)
    params = init_layers("f", extractor, np.random.default_rng(streams[0]))
    params.update(init_layers("C", classifier, np.random.default_rng(streams[1])))
    for m in range(1, n_discriminators + 1):
        params.update(init_layers(f"d{m}", discriminator, np.random.default_rng(streams[1 + m])))
    return ModelBundle(list(extractor), classifier, discriminator, n_discriminators, params)


def two_moons_bundle(n_discriminators: int, seed: int, hidden: int = 15) -> ModelBundle:
    return build_bundle([LayerSpec(2, hidden, "sigmoid")], 2, n_discriminators, seed)


# ---------------------------------------------------------------- optimizers


@dataclass
class OptimizerState:
    kind: str = "sgd"
    lr: float = 0.02
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    slots: dict[str, list[np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"non-finite gradient in parameter block {name!r}")


def step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimizerState
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One descent step on every parameter named in ``grads``.

    Parameters not in ``grads`` are passed through untouched. For ascent,
    negate the gradients before calling.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name)
    state.t += 1
    out = dict(params)
    for name, g in grads.items():
        p = params[name]
        if state.weight_decay:
            g = g + state.weight_decay * p
        if state.kind == "sgd":
            if name not in state.slots:
                state.slots[name] = [np.zeros_like(p)]
            v = state.slots[name][0]
            v *= state.momentum
            v += g
            out[name] = p - state.lr * v
        else:
            if name not in state.slots:
                state.slots[name] = [np.zeros_like(p), np.zeros_like(p)]
            m, v = state.slots[name]
            m *= state.beta1
            m += (1 - state.beta1) * g
            v *= state.beta2
            v += (1 - state.beta2) * g * g
            mhat = m / (1 - state.beta1**state.t)
            vhat = v / (1 - state.beta2**state.t)
            out[name] = p - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return out, state


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(bundle: ModelBundle, path: str | Path) -> None:
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "extractor": [asdict(s) for s in bundle.extractor],
        "classifier": [asdict(s) for s in bundle.classifier],
        "discriminator": [asdict(s) for s in bundle.discriminator],
        "n_discriminators": bundle.n_discriminators,
        "meta": bundle.meta,
        "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in bundle.params.items()},
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_checkpoint(path: str | Path) -> ModelBundle:
    doc = json.loads(Path(path).read_text())
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version!r}")
    params = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in doc["params"].items()}
    return ModelBundle(
        [LayerSpec(**s) for s in doc["extractor"]],
        [LayerSpec(**s) for s in doc["classifier"]],
        [LayerSpec(**s) for s in doc["discriminator"]],
        doc["n_discriminators"],
        params,
        doc.get("meta", {}),
    )
