"""Command-line entry point: generate, train, discover, evaluate, audit, reproduce-table1.

Config files are INI documents with ``[data]``, ``[train]`` and ``[experiment]``
sections; command-line flags override file values, and every command echoes
the fully resolved config into its output directory.

Exit codes: 0 success, 1 usage / input error, 2 runtime abort (divergence).
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .data import (
    Domain,
    DomainSamples,
    DomainSequence,
    MoonsManifest,
    load_csv,
    load_manifest,
    save_csv,
    save_manifest,
    sequence_from_manifest,
    subsequence,
)
from .discovery import (
    DSCORE_EPOCHS,
    DSCORE_LR,
    METHODS,
    assignment,
    auc,
    dscore,
    mmd_closeness,
    ood_closeness_model,
    dscore_config,
    pretrain_dscore,
)
from .experiments import run_pool, seed_sequence, summarize, table1, table1_markdown
from .nn import load_checkpoint, save_checkpoint
from .svg import decision_boundary_svg, line_chart_svg
from .trainer import AuditConfig, RunHistory, TrainConfig, TrainingDiverged, discrepancy_audit, \
    pretrain_source, train, validation_accuracy

OUT_ENV = "BRIDGEDA_OUT"
EXIT_OK, EXIT_USAGE, EXIT_ABORT = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class ExperimentOptions:
    mode: str = "bridged"
    seeds: list[int] = field(default_factory=lambda: [0])
    method: str = "dscore"
    m: int = 2
    stop_fraction: float = 0.1
    dscore_epochs: int = DSCORE_EPOCHS
    dscore_lr: float = DSCORE_LR
    workers: int = 0
    data_dir: str = ""

    def validate(self) -> None:
        if self.mode not in ("dann", "bridged"):
            raise UsageError(f"experiment.mode must be dann or bridged, got {self.mode!r}")
        if not self.seeds:
            raise UsageError("experiment.seeds: need at least one seed")
        if self.method not in METHODS:
            raise UsageError(f"experiment.method must be one of {', '.join(METHODS)}")
        if self.m < 2:
            raise UsageError("experiment.m must be >= 2")


@dataclass
class ExperimentConfig:
    data: MoonsManifest = field(default_factory=MoonsManifest)
    train: TrainConfig = field(default_factory=TrainConfig)
    experiment: ExperimentOptions = field(default_factory=ExperimentOptions)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for section in ("data", "train", "experiment"):
            obj = getattr(self, section)
            cp[section] = {f.name: _render(getattr(obj, f.name)) for f in fields(obj)}
        lines = []
        for section in cp.sections():
            lines.append(f"[{section}]")
            lines += [f"{k} = {v}" for k, v in cp[section].items()]
            lines.append("")
        return "\n".join(lines)


# ---------------------------------------------------------------- config parsing


def _render(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, (list, tuple)):
        return ", ".join(_render(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v).lower() if isinstance(v, bool) else str(v)


def parse_list(text: str, cast=float) -> list:
    return [cast(p.strip()) for p in text.split(",") if p.strip()]


def parse_seeds(text: str) -> list[int]:
    """``"3"``, ``"0,2,5"`` or ranges like ``"0-9"``."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            a, b = part.split("-", 1)
            out += list(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return out


def _coerce(obj, name: str, raw: str):
    default = getattr(type(obj)(), name)
    try:
        if name == "lambdas":
            return None if raw.strip().lower() in ("", "none") else parse_list(raw)
        if name == "angles":
            return parse_list(raw)
        if name == "seeds":
            return parse_seeds(raw)
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"not a boolean: {raw!r}")
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise UsageError(f"{name}: {exc}") from exc


def load_config(path: str | None) -> ExperimentConfig:
    if not path:
        return ExperimentConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    return load_config_text(text, str(path))


def load_config_text(text: str, origin: str = "<config>") -> ExperimentConfig:
    cfg = ExperimentConfig()
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text, source=origin)
    except configparser.Error as exc:
        raise UsageError(f"cannot parse config {origin}: {exc}") from exc
    for section in cp.sections():
        if section not in ("data", "train", "experiment"):
            raise UsageError(f"unknown config section [{section}]")
        obj = getattr(cfg, section)
        known = {f.name for f in fields(obj)}
        updates = {}
        for key, raw in cp[section].items():
            if key not in known:
                raise UsageError(f"unknown key {section}.{key}")
            updates[key] = _coerce(obj, key, raw)
        setattr(cfg, section, replace(obj, **updates))
    return cfg


def resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    data, tr, ex = cfg.data, cfg.train, cfg.experiment
    if args.angles:
        data = replace(data, angles=parse_list(args.angles))
    if args.seed is not None:
        tr = replace(tr, seed=args.seed)
        ex = replace(ex, seeds=[args.seed])
    if args.seeds:
        ex = replace(ex, seeds=parse_seeds(args.seeds))
    if args.epochs is not None:
        tr = replace(tr, epochs=args.epochs)
    if args.lambda_:
        tr = replace(tr, lambdas=parse_list(args.lambda_))
    for name in ("mode", "method", "m", "workers"):
        if getattr(args, name) is not None:
            ex = replace(ex, **{name: getattr(args, name)})
    if getattr(args, "data", None):
        ex = replace(ex, data_dir=str(Path(args.data).resolve()))
    man_path = Path(ex.data_dir) / "manifest.json" if ex.data_dir else None
    if man_path is not None and man_path.exists():
        # keep the echoed config truthful about where the data came from
        try:
            data = MoonsManifest.from_dict(load_manifest(man_path))
        except ValueError:
            pass
    cfg = ExperimentConfig(data, tr, ex)
    try:
        cfg.data.validate()
        cfg.train.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    cfg.experiment.validate()
    return cfg


def out_dir(args, command: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "runs")) / command


def prepare_out(path: Path, force: bool) -> Path:
    if path.exists() and any(path.iterdir()) and not force:
        raise UsageError(f"output {path} already exists; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- datasets


def write_dataset(seq: DomainSequence, manifest: dict, out: Path) -> list[Path]:
    save_manifest(manifest, out / "manifest.json")
    paths = []
    for k, d in enumerate(seq.domains):
        rows = DomainSamples.concat([d.train, d.test])
        split = ["train"] * len(d.train) + ["test"] * len(d.test)
        p = out / f"domain_{k}.csv"
        save_csv(rows, p, extra={"split": split})
        paths.append(p)
    return paths


def load_dataset(path: str | Path) -> DomainSequence:
    """Domain files ``domain_<k>.csv`` (optionally with a ``split`` column) in curriculum order."""
    path = Path(path)
    files = sorted(path.glob("domain_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
    if len(files) < 2:
        raise UsageError(f"{path}: need at least two domain_<k>.csv files")
    names = [str(k) for k in range(len(files))]
    man_path = path / "manifest.json"
    manifest = load_manifest(man_path) if man_path.exists() else {}
    if "angles" in manifest and len(manifest["angles"]) == len(files):
        names = [f"{float(a):g}" for a in manifest["angles"]]
    domains = []
    for k, p in enumerate(files):
        rows, _, cols = load_csv(p, return_columns=True)
        split = np.asarray(cols.get("split", ["train"] * len(rows)))
        bad = set(split) - {"train", "test"}
        if bad:
            raise UsageError(f"{p}: split values must be train/test, got {sorted(bad)[0]!r}")
        rows.domain[:] = k
        domains.append(Domain(names[k], rows.take(split == "train"), rows.take(split == "test"), labeled=(k == 0)))
    return DomainSequence(domains, manifest)


def sequence_for(cfg: ExperimentConfig, seed: int) -> DomainSequence:
    if cfg.experiment.data_dir:
        seq = load_dataset(cfg.experiment.data_dir)
    else:
        seq = seed_sequence(cfg.data, seed)
    if cfg.experiment.mode == "dann":
        seq = subsequence(seq, [0, len(seq) - 1])
    return seq


def _broadcast_lambdas(tr: TrainConfig, n_disc: int) -> TrainConfig:
    if tr.lambdas is not None and len(tr.lambdas) == 1 and n_disc > 1:
        return replace(tr, lambdas=list(tr.lambdas) * n_disc)
    return tr


# ---------------------------------------------------------------- plots


def write_plots(run: Path, bundle, seq: DomainSequence, history: RunHistory) -> None:
    predict = lambda X: np.argmax(bundle.logits(X), axis=1)
    for d in seq.domains:
        rows = DomainSamples.concat([d.train, d.test]) if len(d.test) else d.train
        if rows.dim == 2:
            (run / f"boundary_{d.name}.svg").write_text(
                decision_boundary_svg(predict, rows.X, rows.y, f"domain {d.name}"))
    acc = {n: [(r["epoch"], r["val_acc"][n]) for r in history.epochs if n in r.get("val_acc", {})]
           for n in seq.names}
    acc = {n: s for n, s in acc.items() if s}
    if acc:
        (run / "accuracy.svg").write_text(line_chart_svg(acc, "validation accuracy", "epoch", "accuracy", (0, 1)))
    if history.epochs and "loss" in history.epochs[0]:
        n_disc = len(history.epochs[0]["loss"]["L_d"])
        losses = {f"L_d{m + 1}": [(r["epoch"], r["loss"]["L_d"][m]) for r in history.epochs] for m in range(n_disc)}
        losses["L_C"] = [(r["epoch"], r["loss"]["L_C"]) for r in history.epochs]
        (run / "losses.svg").write_text(line_chart_svg(losses, "training losses", "epoch", "loss"))


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    cfg = resolve(args)
    out = prepare_out(out_dir(args, "generate"), args.force)
    if args.manifest:
        try:
            manifest = MoonsManifest.from_dict(load_manifest(args.manifest))
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    else:
        manifest = cfg.data if args.seed is None else replace(cfg.data, seed=args.seed)
    seq = sequence_from_manifest(manifest.to_dict())
    paths = write_dataset(seq, manifest.to_dict(), out)
    print(f"wrote {len(paths)} domain files and manifest.json to {out}")
    return EXIT_OK


def _train_job(job) -> dict:
    cfg_ini, seed, run = job
    cfg = load_config_text(cfg_ini)
    seq = sequence_for(cfg, seed)
    tr = _broadcast_lambdas(replace(cfg.train, seed=seed), seq.M + 1)
    run = Path(run)
    run.mkdir(parents=True, exist_ok=True)
    (run / "config.ini").write_text(replace(cfg, train=tr, experiment=replace(cfg.experiment, seeds=[seed])).to_ini())
    hist_path = run / "history.jsonl"
    hist_path.write_text("")
    t0 = time.perf_counter()

    def on_epoch(epoch, bundle, rec):
        with open(hist_path, "a") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    try:
        bundle, history = train(seq, tr, on_epoch=on_epoch)
    except TrainingDiverged as exc:
        write_json(run / "error.json", {"error": str(exc), "epoch": exc.epoch, "batch": exc.batch})
        return {"seed": seed, "status": "diverged", "error": str(exc)}
    metrics = {
        "seed": seed,
        "domains": seq.names,
        "final_val_acc": history.final_accuracy(),
        "final_loss": history.epochs[-1]["loss"] if history.epochs else None,
        "epochs": tr.epochs,
    }
    write_json(run / "metrics.json", metrics)
    write_json(run / "timing.json", {"wall_clock_s": time.perf_counter() - t0})
    save_checkpoint(bundle, run / "checkpoint.json")
    write_plots(run, bundle, seq, history)
    return {"seed": seed, "status": "ok", "final_val_acc": metrics["final_val_acc"]}


def _workers(cfg: ExperimentConfig) -> int:
    return cfg.experiment.workers or os.cpu_count() or 1


def cmd_train(args) -> int:
    cfg = resolve(args)
    out = prepare_out(out_dir(args, "train"), args.force)
    (out / "config.ini").write_text(cfg.to_ini())
    seeds = cfg.experiment.seeds
    jobs = [(cfg.to_ini(), s, str(out / f"seed_{s}")) for s in seeds]
    t0 = time.perf_counter()
    results = run_pool(_train_job, jobs, min(_workers(cfg), len(jobs)))
    ok = [r for r in results if r["status"] == "ok"]
    summary = {
        "mode": cfg.experiment.mode,
        "seeds": [r["seed"] for r in ok],
        "failed_seeds": [r["seed"] for r in results if r["status"] != "ok"],
        "test_accuracy": summarize([r["final_val_acc"] for r in ok]) if ok else {},
    }
    write_json(out / "summary.json", summary)
    write_json(out / "timing.json", {"wall_clock_s": time.perf_counter() - t0})
    for name, s in summary["test_accuracy"].items():
        print(f"{name:>8}: {s['mean']:.4f} ± {s['stderr']:.4f} (n={s['n']})")
    if len(ok) != len(results):
        for r in results:
            if r["status"] != "ok":
                print(f"seed {r['seed']}: {r['error']}", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


def _pool_of(seq: DomainSequence) -> DomainSamples:
    return DomainSamples.concat([d.train for d in seq.domains[1:]])


def cmd_discover(args) -> int:
    cfg = resolve(args)
    out = prepare_out(out_dir(args, "discover"), args.force)
    (out / "config.ini").write_text(cfg.to_ini())
    seed = cfg.experiment.seeds[0]
    seq = sequence_for(replace(cfg, experiment=replace(cfg.experiment, mode="bridged")), seed)
    source, pool = seq[0].train, _pool_of(seq)
    far_id = int(pool.domain.max())
    near = (pool.domain != far_id).astype(int) if len(np.unique(pool.domain)) > 1 else None
    method = cfg.experiment.method
    tr = replace(cfg.train, seed=seed)
    report: dict = {"method": method, "m": cfg.experiment.m, "n": len(pool)}
    if method == "mmd":
        scores = mmd_closeness(pool.X, source.X)
    elif method == "ood":
        bundle = pretrain_source(DomainSequence([seq[0], Domain("pool", pool, pool.take([]), False)]), tr)
        scores = ood_closeness_model(bundle, pool.X)
    else:
        try:
            pre_cfg = dscore_config(tr, cfg.experiment.dscore_epochs, cfg.experiment.dscore_lr)
            bundle, curve = pretrain_dscore(source, pool, pre_cfg, cfg.experiment.stop_fraction, near=near)
        except TrainingDiverged as exc:
            print(str(exc), file=sys.stderr)
            return EXIT_ABORT
        scores = dscore(bundle, pool.X)
        report["stop_epoch"] = bundle.meta["stop_epoch"]
        if curve:
            report["auc_vs_epoch"] = [[e, a] for e, a in curve]
            (out / "auc_vs_epoch.svg").write_text(
                line_chart_svg({"d-score AUC": curve}, "AUC vs epoch", "epoch", "AUC", (0, 1)))
    with open(out / "scores.csv", "w") as fh:
        fh.write("index,method,raw,oriented\n")
        for i, (r, o) in enumerate(zip(scores.raw, scores.oriented)):
            fh.write(f"{i},{method},{r:.17g},{o:.17g}\n")
    assign = assignment(scores, cfg.experiment.m)
    save_csv(pool, out / "pool.csv", extra={"assignment": assign.tolist()})
    report["chunk_sizes"] = np.bincount(assign, minlength=cfg.experiment.m + 1)[1:].tolist()
    if near is not None:
        report["auc"] = auc(scores.oriented, near)
        report["near_domains"] = sorted({seq.names[k] for k in np.unique(pool.domain) if k != far_id})
        report["far_domain"] = seq.names[far_id]
        print(f"{method} AUC (near vs far): {report['auc']:.4f}")
    write_json(out / "report.json", report)
    print(f"chunk sizes: {report['chunk_sizes']}")
    return EXIT_OK


def _checkpoint(args):
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    try:
        return load_checkpoint(args.checkpoint)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load checkpoint {args.checkpoint}: {exc}") from exc


def cmd_evaluate(args) -> int:
    cfg = resolve(args)
    bundle = _checkpoint(args)
    seq = sequence_for(cfg, cfg.experiment.seeds[0])
    acc = validation_accuracy(bundle, seq)
    result = {"checkpoint": str(args.checkpoint), "test_accuracy": acc}
    if args.out:
        out = prepare_out(Path(args.out), args.force)
        (out / "config.ini").write_text(cfg.to_ini())
        write_json(out / "evaluation.json", result)
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_audit(args) -> int:
    cfg = resolve(args)
    bundle = _checkpoint(args)
    seq = sequence_for(cfg, cfg.experiment.seeds[0])
    a = 0 if args.a is None else args.a
    b = len(seq) - 1 if args.b is None else args.b
    if not (0 <= a < len(seq) and 0 <= b < len(seq)) or a == b:
        raise UsageError(f"--a/--b must be distinct domain indices in 0..{len(seq) - 1}")
    proxy = discrepancy_audit(bundle, seq[a].train.X, seq[b].train.X, AuditConfig(seed=cfg.train.seed))
    result = {"a": seq.names[a], "b": seq.names[b], "proxy_distance": proxy}
    if args.out:
        out = prepare_out(Path(args.out), args.force)
        (out / "config.ini").write_text(cfg.to_ini())
        write_json(out / "audit.json", result)
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_reproduce_table1(args) -> int:
    cfg = resolve(args)
    if not args.seeds and args.seed is None:
        cfg = replace(cfg, experiment=replace(cfg.experiment, seeds=list(range(10))))
    if len(cfg.data.angles) != 4:
        cfg = replace(cfg, data=replace(cfg.data, angles=[0.0, 30.0, 60.0, 90.0]))
    out = prepare_out(out_dir(args, "table1"), args.force)
    (out / "config.ini").write_text(cfg.to_ini())
    t0 = time.perf_counter()
    try:
        table = table1(cfg.experiment.seeds, cfg.train, cfg.data, workers=_workers(cfg))
    except TrainingDiverged as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_ABORT
    md = table1_markdown(table)
    (out / "table1.md").write_text(md)
    write_json(out / "table1.json", table)
    write_json(out / "timing.json", {"wall_clock_s": time.perf_counter() - t0})
    print(md, end="")
    return EXIT_OK


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [data], [train], [experiment] sections")
    common.add_argument("--seed", type=int, help="single seed (overrides the seed list)")
    common.add_argument("--seeds", help="seed list, e.g. 0,1,2 or 0-9")
    common.add_argument("--mode", choices=("dann", "bridged"))
    common.add_argument("--angles", help="comma-separated rotation angles, first must be 0")
    common.add_argument("--lambda", dest="lambda_", help="comma-separated adversarial weights (one value broadcasts)")
    common.add_argument("--method", choices=METHODS)
    common.add_argument("--m", type=int, help="number of chunks for the discovered split")
    common.add_argument("--epochs", type=int)
    common.add_argument("--data", help="dataset directory written by 'generate'")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command> or runs/<command>)")
    common.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    common.add_argument("--workers", type=int, help="parallel runs (default: CPU count)")

    p = _Parser(prog="bridgeda", description="Bridged domain-adversarial training on rotated two-moons.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    g = sub.add_parser("generate", parents=[common], help="write domain CSVs and a manifest")
    g.add_argument("--manifest", help="regenerate from an existing manifest.json")
    g.set_defaults(fn=cmd_generate)
    sub.add_parser("train", parents=[common], help="train one or more seeds").set_defaults(fn=cmd_train)
    sub.add_parser("discover", parents=[common], help="score, split and evaluate a target pool") \
        .set_defaults(fn=cmd_discover)
    e = sub.add_parser("evaluate", parents=[common], help="test accuracy of a checkpoint per domain")
    e.add_argument("--checkpoint")
    e.set_defaults(fn=cmd_evaluate)
    a = sub.add_parser("audit", parents=[common], help="proxy distance between two domains on frozen features")
    a.add_argument("--checkpoint")
    a.add_argument("--a", type=int, help="first domain index (default 0)")
    a.add_argument("--b", type=int, help="second domain index (default last)")
    a.set_defaults(fn=cmd_audit)
    sub.add_parser("reproduce-table1", parents=[common], help="four adaptation rows over a seed sweep") \
        .set_defaults(fn=cmd_reproduce_table1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"bridgeda: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"bridgeda: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"bridgeda: aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
