"""Command-line interface.

Subcommands cover the full pipeline: synth, pretrain, adapt, eval, compare,
probe, gradcheck. Each run prints a one-line provenance header (version,
config hash, seed) to stdout; machine-readable results go to --out files.
Exit codes: 0 success, 2 configuration/schema error, 3 data error,
4 numeric abort, 1 failed gradient check.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .adaptation import AdaptSpec, adapt
from .checkpoint import load_checkpoint, save_checkpoint
from .config import VERSION, EngineConfig
from .dataio import load_task_dataset, split_leave_one_out
from .errors import ConfigError, DataError, NumericError
from .evaluation import MetricsReport, evaluate, paired_t_test
from .probe import probe_matrix, probe_pair
from .synth import SynthConfig, generate_synthetic_suite
from .training import GradCheckConfig, TrainConfig, gradient_check, pretrain


def _provenance(config_hash: bytes | None, seed) -> None:
    digest = config_hash.hex()[:12] if config_hash else "-"
    print(f"modalrec {VERSION} config={digest} seed={seed}")


def _engine_config(args) -> EngineConfig:
    cfg = EngineConfig.from_file(args.config) if args.config else EngineConfig()
    overrides = {}
    for name in ("mode", "variant", "seed", "pretrained", "task", "data_dir", "out"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = str(value) if name in ("pretrained", "task",
                                                     "data_dir", "out") else value
    if overrides:
        merged = cfg.to_dict()
        for key, value in overrides.items():
            merged[key] = value
        cfg = EngineConfig.from_dict(merged)
    return cfg


def _train_config(cfg: EngineConfig) -> TrainConfig:
    return TrainConfig(
        learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
        n_epochs=cfg.n_epochs, tau=cfg.tau, lambda_=cfg.lambda_, seed=cfg.seed,
        adam_beta1=cfg.adam_beta1, adam_beta2=cfg.adam_beta2,
        adam_eps=cfg.adam_eps, dropout=cfg.dropout,
        final_position_only=cfg.final_position_only,
        sample_routing=cfg.sample_routing,
    )


def _load_tasks(data_dir: Path, max_seq_len: int):
    dirs = sorted(p for p in Path(data_dir).iterdir()
                  if p.is_dir() and (p / "items.tsv").exists())
    if not dirs:
        raise DataError(f"{data_dir}: no task directories found")
    return [load_task_dataset(p, max_seq_len) for p in dirs]


def cmd_synth(args) -> int:
    try:
        with open(args.config) as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"{args.config}: {e}") from None
    known = {f.name for f in dataclasses.fields(SynthConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
    if "seq_len_range" in raw:
        raw["seq_len_range"] = tuple(raw["seq_len_range"])
    cfg = SynthConfig(**raw)
    cfg.validate()
    _provenance(hashlib.sha256(
        json.dumps(raw, sort_keys=True).encode()).digest(), cfg.seed)
    paths = generate_synthetic_suite(cfg, args.out_dir)
    print(f"wrote {len(paths)} task directories under {args.out_dir}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _engine_config(args)
    _provenance(cfg.digest(), cfg.seed)
    tasks = _load_tasks(args.data_dir or cfg.data_dir, cfg.max_seq_len)
    aux = [t for t in tasks if t.role == "auxiliary"]
    if not aux:
        raise DataError("no auxiliary tasks in the data directory")
    ckpt = pretrain(aux, _train_config(cfg), cfg.irl_config(), cfg.intent_config())
    save_checkpoint(ckpt, args.out)
    print(f"pretrained on {len(aux)} tasks -> {args.out}")
    return 0


def cmd_adapt(args) -> int:
    cfg = _engine_config(args)
    _provenance(cfg.digest(), cfg.seed)
    pretrained_path = args.pretrained or cfg.pretrained
    if cfg.mode in ("relearn", "finetune") and not pretrained_path:
        raise ConfigError(f"mode {cfg.mode} requires --pretrained")
    if cfg.mode == "scratch" and pretrained_path:
        raise ConfigError("scratch mode takes no --pretrained checkpoint")
    ckpt_in = load_checkpoint(pretrained_path) if pretrained_path else None
    target = load_task_dataset(args.task or cfg.task, cfg.max_seq_len)
    spec = AdaptSpec(mode=cfg.mode, variant=cfg.variant, train=_train_config(cfg))
    out = adapt(ckpt_in, target, spec, cfg.irl_config(), cfg.intent_config())
    save_checkpoint(out, args.out)
    print(f"{cfg.mode} adaptation of {target.task_id} -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    _provenance(ckpt.config_hash, ckpt.seed)
    target = load_task_dataset(args.task, ckpt.intent_cfg.max_seq_len)
    ks = [int(k) for k in args.k] if args.k else [10, 50]
    report = evaluate(ckpt, split_leave_one_out(target), args.split, ks,
                      include_val_in_test=not args.no_val_in_test)
    Path(args.out).write_text(report.to_json())
    summary = ", ".join(
        f"{m}@{k}={report.aggregates[m][k]:.4f}"
        for m in ("recall", "ndcg") for k in report.k_values)
    print(f"{target.task_id} [{args.split}] {summary}")
    return 0


def cmd_compare(args) -> int:
    report_a = MetricsReport.from_json(Path(args.a).read_text())
    report_b = MetricsReport.from_json(Path(args.b).read_text())
    _provenance(hashlib.sha256(
        (Path(args.a).read_text() + Path(args.b).read_text()).encode()).digest(),
        "-")
    t, p = paired_t_test(report_a, report_b, args.metric, int(args.k))
    print(f"t={t:.6g} p={p:.6g}")
    return 0


def cmd_probe(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    _provenance(ckpt.config_hash, args.seed)
    max_len = ckpt.intent_cfg.max_seq_len
    target = load_task_dataset(args.target, max_len)
    aux_tasks = [load_task_dataset(p, max_len) for p in args.aux]
    hidden = args.hidden if args.nonlinear else None
    if args.modality == "all":
        doc = probe_matrix(target, aux_tasks, ckpt, args.seed,
                           max_epochs=args.max_epochs, hidden=hidden)
    else:
        results = [probe_pair(target, aux, args.modality, ckpt, args.seed,
                              max_epochs=args.max_epochs, hidden=hidden).to_dict()
                   for aux in aux_tasks]
        doc = json.dumps({"target_id": target.task_id, "results": results},
                         indent=2) + "\n"
    Path(args.out).write_text(doc)
    print(f"probe report -> {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _engine_config(args)
    _provenance(cfg.digest(), cfg.seed)
    gc = GradCheckConfig(tau=cfg.tau, lambda_=cfg.lambda_)
    report = gradient_check(gc, seed=cfg.seed)
    worst_name = max(report, key=report.get)
    worst = report[worst_name]
    if args.out:
        Path(args.out).write_text(json.dumps(
            {k: report[k] for k in sorted(report)}, indent=2) + "\n")
    ok = worst < TrainConfig().grad_check_tol
    print(f"gradient check: {len(report)} groups, worst {worst:.3e} "
          f"({worst_name}) -> {'ok' if ok else 'FAIL'}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modalrec",
        description="Transferable multi-modal sequential recommendation engine.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic task suite")
    p.add_argument("--config", required=True, help="SynthConfig JSON file")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="pre-train on auxiliary tasks")
    p.add_argument("--config")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("adapt", help="adapt to a target task")
    p.add_argument("--config")
    p.add_argument("--mode", choices=("relearn", "finetune", "scratch"))
    p.add_argument("--variant", choices=("base", "with_interaction_emb"))
    p.add_argument("--pretrained")
    p.add_argument("--task")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a task split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--split", choices=("validation", "test"), required=True)
    p.add_argument("--k", action="append")
    p.add_argument("--no-val-in-test", action="store_true",
                   help="exclude the validation item from test-time input")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="paired t-test between two reports")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--metric", choices=("recall", "ndcg"), required=True)
    p.add_argument("--k", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("probe", help="cross-task separability probe")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--aux", action="append", required=True)
    p.add_argument("--modality", choices=("text", "image", "price", "all"),
                   required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-epochs", type=int, default=500)
    p.add_argument("--nonlinear", action="store_true")
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f'error: {{"type": "config", "message": {json.dumps(str(e))}}}',
              file=sys.stderr)
        return 2
    except DataError as e:
        print(f'error: {{"type": "data", "message": {json.dumps(str(e))}}}',
              file=sys.stderr)
        return 3
    except NumericError as e:
        print(f'error: {{"type": "numeric", "message": {json.dumps(str(e))}}}',
              file=sys.stderr)
        return 4
    except FileNotFoundError as e:
        print(f'error: {{"type": "data", "message": {json.dumps(str(e))}}}',
              file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
