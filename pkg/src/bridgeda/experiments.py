"""Multi-seed runs on the rotated-moons sequence and their aggregation."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from .data import DomainSequence, MoonsManifest, build_sequence, subsequence
from .trainer import TrainConfig, train

TABLE1_ANGLES = (0.0, 30.0, 60.0, 90.0)
TABLE1_ROWS = {
    "0→90": (0, 3),
    "0→30→90": (0, 1, 3),
    "0→60→90": (0, 2, 3),
    "0→30→60→90": (0, 1, 2, 3),
}


def mean_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values to aggregate")
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def summarize(per_seed: list[dict[str, float]]) -> dict[str, dict]:
    """Per-domain mean and standard error over seeds."""
    names = list(dict.fromkeys(k for acc in per_seed for k in acc))
    out = {}
    for name in names:
        vals = [acc[name] for acc in per_seed if name in acc]
        m, se = mean_stderr(vals)
        out[name] = {"mean": m, "stderr": se, "n": len(vals)}
    return out


def seed_sequence(manifest: MoonsManifest, seed: int, keep=None) -> DomainSequence:
    """Fresh data draw for one seed of a sweep, optionally restricted to some domains."""
    m = replace(manifest, seed=seed)
    seq = build_sequence(m.angles, m.n_per_class, m.noise_sd, m.translation_coeff, m.seed,
                         m.test_fraction, m.clockwise)
    return subsequence(seq, list(keep)) if keep is not None else seq


def _row_job(args) -> dict[str, float]:
    manifest, keep, config, seed = args
    seq = seed_sequence(manifest, seed, keep)
    cfg = replace(config, seed=seed, lambdas=config.lambdas if config.lambdas is None
                  else list(config.lambdas)[: len(keep) - 1])
    _, history = train(seq, cfg)
    return history.final_accuracy()


def run_pool(fn, jobs: list, workers: int = 1) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def table1(seeds, config: TrainConfig | None = None, manifest: MoonsManifest | None = None,
           workers: int = 1, rows=None) -> dict:
    """Per-row, per-domain test accuracy (mean, stderr) over ``seeds``.

    Absent domains are reported as ``None``.
    """
    config = config or TrainConfig()
    manifest = manifest or MoonsManifest(angles=list(TABLE1_ANGLES))
    if len(manifest.angles) != 4:
        raise ValueError("the table layout needs exactly four angles")
    rows = rows or list(TABLE1_ROWS)
    cols = [f"{a:g}" for a in manifest.angles]
    jobs = [(manifest, TABLE1_ROWS[r], config, int(s)) for r in rows for s in seeds]
    results = run_pool(_row_job, jobs, workers)
    out = {"columns": cols, "seeds": [int(s) for s in seeds], "rows": []}
    for i, r in enumerate(rows):
        accs = results[i * len(seeds):(i + 1) * len(seeds)]
        stats = summarize(accs)
        out["rows"].append({"name": r, "cells": {c: stats.get(c) for c in cols},
                            "per_seed_target": [a[cols[-1]] for a in accs]})
    return out


def table1_markdown(table: dict) -> str:
    cols = table["columns"]
    lines = ["| adaptation | " + " | ".join(f"{c}°" for c in cols) + " |",
             "|---|" + "---|" * len(cols)]
    for r in table["rows"]:
        cells = []
        for c in cols:
            s = r["cells"][c]
            cells.append("-" if s is None else f"{100 * s['mean']:.2f}±{100 * s['stderr']:.2f}")
        lines.append(f"| {r['name']} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
