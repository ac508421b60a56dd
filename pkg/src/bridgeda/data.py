"""Translated two-moons domains, CSV ingestion and batch sampling."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

NO_LABEL = -1
RESERVED_COLUMNS = ("label", "domain", "split", "assignment")


@dataclass
class DomainSamples:
    """Rows of one or more domains: features, labels (``NO_LABEL`` if absent), domain ids."""

    X: np.ndarray
    y: np.ndarray
    domain: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.X.shape}")
        self.y = np.asarray(self.y, dtype=np.int64)
        self.domain = np.asarray(self.domain, dtype=np.int64)
        if not (len(self.X) == len(self.y) == len(self.domain)):
            raise ValueError("features, labels and domain ids must have the same length")

    def __len__(self) -> int:
        return len(self.X)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def has_labels(self) -> bool:
        return len(self) > 0 and bool((self.y != NO_LABEL).all())

    def take(self, idx) -> "DomainSamples":
        return DomainSamples(self.X[idx], self.y[idx], self.domain[idx])

    @staticmethod
    def concat(parts: list["DomainSamples"]) -> "DomainSamples":
        return DomainSamples(
            np.concatenate([p.X for p in parts]),
            np.concatenate([p.y for p in parts]),
            np.concatenate([p.domain for p in parts]),
        )


# ---------------------------------------------------------------- two moons


def make_two_moons(n_per_class: int, noise_sd: float, seed) -> DomainSamples:
    """Class 0 on the upper unit arc about the origin, class 1 on the lower arc about (1, 0.5)."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if noise_sd < 0:
        raise ValueError("noise_sd must be >= 0")
    t = np.linspace(0.0, np.pi, n_per_class)
    upper = np.column_stack([np.cos(t), np.sin(t)])
    lower = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    X = np.vstack([upper, lower])
    if noise_sd > 0:
        X = X + np.random.default_rng(seed).normal(0.0, noise_sd, size=X.shape)
    y = np.repeat([0, 1], n_per_class)
    return DomainSamples(X, y, np.zeros(len(y), dtype=np.int64))


def transform_domain(
    samples: DomainSamples, angle_deg: float, translation_coeff: float, clockwise: bool = True
) -> DomainSamples:
    """Rotate about the origin by ``angle_deg`` then shift right by ``coeff * angle/90``."""
    if samples.dim != 2:
        raise ValueError(f"transform_domain needs 2-D features, got dim {samples.dim}")
    a = math.radians(angle_deg if clockwise else -angle_deg)
    c, s = math.cos(a), math.sin(a)
    # row-vector form of the clockwise rotation [[c, s], [-s, c]]
    rot = np.array([[c, -s], [s, c]])
    X = samples.X @ rot + np.array([translation_coeff * angle_deg / 90.0, 0.0])
    return DomainSamples(X, samples.y.copy(), samples.domain.copy())


@dataclass
class Domain:
    name: str
    train: DomainSamples
    test: DomainSamples
    labeled: bool


@dataclass
class DomainSequence:
    """Domains D_0 (labeled source) .. D_{M+1} (target) in curriculum order."""

    domains: list[Domain]
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.domains) < 2:
            raise ValueError("a sequence needs at least a source and a target")
        if not self.domains[0].labeled:
            raise ValueError("D_0 must be labeled")
        if any(d.labeled for d in self.domains[1:]):
            raise ValueError("only D_0 may be labeled")

    def __len__(self) -> int:
        return len(self.domains)

    def __getitem__(self, k: int) -> Domain:
        return self.domains[k]

    @property
    def M(self) -> int:
        return len(self.domains) - 2

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.domains]

    def train_labels(self, k: int) -> np.ndarray:
        """Labels a trainer is allowed to see; only the source has them."""
        if not self.domains[k].labeled:
            raise PermissionError(f"domain {k} ({self.domains[k].name}) is unlabeled for training")
        return self.domains[k].train.y

    def with_poisoned_labels(self, seed: int = 0) -> "DomainSequence":
        """Copy whose evaluation-only training labels are scrambled (label-hygiene checks)."""
        rng = np.random.default_rng(seed)
        out = []
        for d in self.domains:
            train = d.train
            if not d.labeled:
                train = DomainSamples(train.X.copy(), rng.integers(0, 1000, size=len(train)), train.domain.copy())
            out.append(Domain(d.name, train, d.test, d.labeled))
        return DomainSequence(out, dict(self.manifest))


def _stratified_split(y: np.ndarray, test_fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    train_idx, test_idx = [], []
    for cls in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == cls))
        n_test = int(round(test_fraction * len(idx)))
        test_idx.append(idx[:n_test])
        train_idx.append(idx[n_test:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(test_idx))


@dataclass
class MoonsManifest:
    angles: list[float] = field(default_factory=lambda: [0.0, 90.0])
    n_per_class: int = 200
    noise_sd: float = 0.1
    translation_coeff: float = 3.0
    test_fraction: float = 0.2
    clockwise: bool = True
    seed: int = 0

    def validate(self) -> None:
        if len(self.angles) < 2:
            raise ValueError("field 'angles': need at least two angles")
        if self.angles[0] != 0:
            raise ValueError("field 'angles': first angle must be 0")
        if any(b <= a for a, b in zip(self.angles, self.angles[1:])):
            raise ValueError("field 'angles': angles must be strictly increasing")
        if self.n_per_class < 1:
            raise ValueError("field 'n_per_class': must be >= 1")
        if self.noise_sd < 0:
            raise ValueError("field 'noise_sd': must be >= 0")
        if not 0 < self.test_fraction < 1:
            raise ValueError("field 'test_fraction': must be in (0, 1)")

    @classmethod
    def from_dict(cls, doc: dict) -> "MoonsManifest":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known - {"kind", "format_version"}
        if unknown:
            raise ValueError(f"field {sorted(unknown)[0]!r}: unknown manifest field")
        kwargs = {}
        casts = {"angles": lambda v: [float(a) for a in v], "n_per_class": int, "noise_sd": float,
                 "translation_coeff": float, "test_fraction": float, "clockwise": bool, "seed": int}
        for key, value in doc.items():
            if key in casts:
                try:
                    kwargs[key] = casts[key](value)
                except (TypeError, ValueError) as exc:
                    raise ValueError(f"field {key!r}: {exc}") from exc
        m = cls(**kwargs)
        m.validate()
        return m

    def to_dict(self) -> dict:
        return {"kind": "two_moons", "format_version": 1, **asdict(self)}


def build_sequence(
    angles,
    n_per_class: int = 200,
    noise_sd: float = 0.1,
    translation_coeff: float = 3.0,
    seed: int = 0,
    test_fraction: float = 0.2,
    clockwise: bool = True,
) -> DomainSequence:
    """One independent moons draw per angle, rotated/translated, split into train/test."""
    manifest = MoonsManifest(list(map(float, angles)), n_per_class, noise_sd, translation_coeff,
                             test_fraction, clockwise, seed)
    manifest.validate()
    streams = np.random.SeedSequence(seed).spawn(len(manifest.angles))
    domains = []
    for k, (angle, ss) in enumerate(zip(manifest.angles, streams)):
        gen_ss, split_ss = ss.spawn(2)
        base = make_two_moons(n_per_class, noise_sd, gen_ss)
        moved = transform_domain(base, angle, translation_coeff, clockwise)
        moved.domain[:] = k
        tr, te = _stratified_split(moved.y, test_fraction, np.random.default_rng(split_ss))
        domains.append(Domain(f"{angle:g}", moved.take(tr), moved.take(te), labeled=(k == 0)))
    return DomainSequence(domains, manifest.to_dict())


def sequence_from_manifest(doc: dict) -> DomainSequence:
    m = MoonsManifest.from_dict(doc)
    return build_sequence(m.angles, m.n_per_class, m.noise_sd, m.translation_coeff, m.seed,
                          m.test_fraction, m.clockwise)


def subsequence(seq: DomainSequence, keep: list[int]) -> DomainSequence:
    """Keep the listed domains (source must be first), renumbering domain ids."""
    if keep[0] != 0:
        raise ValueError("the source must stay first")
    out = []
    for new, k in enumerate(keep):
        d = seq[k]
        tr = DomainSamples(d.train.X, d.train.y, np.full(len(d.train), new))
        te = DomainSamples(d.test.X, d.test.y, np.full(len(d.test), new))
        out.append(Domain(d.name, tr, te, d.labeled))
    return DomainSequence(out, dict(seq.manifest, kept=list(keep)))


# ---------------------------------------------------------------- batches


def sample_union_batch(
    seq: DomainSequence, m: int, batch_size: int, mode: str, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw (precedent-union side, domain-m side) feature batches for discriminator m.

    ``per-domain`` gives each precedent domain an equal share of the union
    side; ``pooled`` draws uniformly over all precedent examples.
    """
    if not 1 <= m <= seq.M + 1:
        raise ValueError(f"discriminator index {m} outside 1..{seq.M + 1}")
    for k in range(m + 1):
        if len(seq[k].train) == 0:
            raise ValueError(f"domain {k} is empty")
    if mode == "per-domain":
        counts = np.full(m, batch_size // m)
        extra = batch_size - counts.sum()
        if extra:
            counts[rng.choice(m, size=extra, replace=False)] += 1
        parts = [seq[k].train.X[rng.integers(0, len(seq[k].train), size=c)] for k, c in enumerate(counts)]
        union = np.concatenate(parts)
    elif mode == "pooled":
        pool = np.concatenate([seq[k].train.X for k in range(m)])
        union = pool[rng.integers(0, len(pool), size=batch_size)]
    else:
        raise ValueError(f"unknown union sampling mode {mode!r}")
    dom = seq[m].train.X[rng.integers(0, len(seq[m].train), size=batch_size)]
    return union, dom


# ---------------------------------------------------------------- CSV


@dataclass(frozen=True)
class CsvSchema:
    features: tuple[str, ...]
    optional: tuple[str, ...] = ("label", "split", "assignment")


class CsvFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def save_csv(samples: DomainSamples, path, feature_names=None, extra: dict[str, list] | None = None) -> None:
    names = list(feature_names or [f"x{i}" for i in range(samples.dim)])
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ["label", "domain"] + list(extra))
        for i in range(len(samples)):
            label = "" if samples.y[i] == NO_LABEL else str(int(samples.y[i]))
            row = [f"{v:.17g}" for v in samples.X[i]] + [label, str(int(samples.domain[i]))]
            w.writerow(row + [str(extra[k][i]) for k in extra])


def load_csv(path, schema: CsvSchema | None = None, return_columns: bool = False):
    """Read a feature table; ``domain`` is required, ``label`` optional (blank = unlabeled)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CsvFormatError("empty file", 1)
    header = rows[0]
    if "domain" not in header:
        raise CsvFormatError("missing required column 'domain'", 1)
    if len(set(header)) != len(header):
        raise CsvFormatError("duplicate column names", 1)
    if schema is None:
        features = [h for h in header if h not in RESERVED_COLUMNS]
    else:
        features = list(schema.features)
        allowed = set(features) | {"domain"} | set(schema.optional)
        for h in header:
            if h not in allowed:
                raise CsvFormatError(f"unknown column {h!r}", 1)
        for f in features:
            if f not in header:
                raise CsvFormatError(f"missing feature column {f!r}", 1)
    if not features:
        raise CsvFormatError("no feature columns", 1)
    fidx = [header.index(f) for f in features]
    lidx = header.index("label") if "label" in header else None
    didx = header.index("domain")
    X, y, dom = [], [], []
    columns: dict[str, list[str]] = {h: [] for h in header if h in ("split", "assignment")}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise CsvFormatError(f"expected {len(header)} cells, got {len(row)}", lineno)
        try:
            X.append([float(row[i]) for i in fidx])
            y.append(NO_LABEL if lidx is None or row[lidx] == "" else int(row[lidx]))
            dom.append(int(row[didx]))
        except ValueError as exc:
            raise CsvFormatError(f"non-numeric cell ({exc})", lineno) from exc
        for h in columns:
            columns[h].append(row[header.index(h)])
    samples = DomainSamples(np.asarray(X, dtype=np.float64).reshape(len(X), len(features)), y, dom)
    if return_columns:
        return samples, features, columns
    return samples


def save_manifest(manifest: dict, path) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_manifest(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"manifest {path} is not valid JSON: {exc}") from exc
