"""Command-line pipeline: ingest -> train -> explain -> evaluate / sweep.

Every subcommand is reproducible from its flags plus an optional JSON config
file (flags override file values); `--dump-config` prints the fully resolved
configuration without running. All randomness flows from the single `--seed`
through fixed sub-seed derivations (see seeding module).

Exit codes: 0 success, 1 generic failure, 2 input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import models, report
from .data import (Dataset, DatasetError, ParseError, SynthConfig,
                   filter_min_actions, parse_movielens, read_csv,
                   synth_generate)
from .evaluation import (ExperimentReport, aes, esp, retrain_verify,
                         sample_users, sweep_correlations, sweep_embedding)
from .explain import Explanation, SearchConfig, explain_user, explanation_record
from .influence import IllConditionedError, InfluenceConfig
from .models import DivergenceError, TrainConfig
from .seeding import derive_seed

_ALGO_MAP = {
    "accent": "iterative_greedy",
    "fia": "greedy",
    "greedy": "greedy",
    "iterative_greedy": "iterative_greedy",
}
_METHOD_MAP = {"gradient": "gradient_based", "data": "data_based"}

_DEFAULTS = {
    "ingest": {"movielens": None, "synthetic": False, "min_actions": 0,
               "users": 1200, "items": 1200, "density": 0.0631, "latent": 4,
               "noise": 0.25, "seed": 0, "out": "dataset.csv"},
    "train": {"data": None, "model": "ncf", "d": 8, "epochs": 20, "lr": 0.05,
              "batch": 256, "hidden": None, "scale": "unit", "seed": 0,
              "out": "run-train"},
    "explain": {"data": None, "checkpoint": None, "algo": "accent",
                "method": "gradient", "k": 5, "users": 100, "seed": 0,
                "scope": "user_block", "damping": None, "t2": 1,
                "cont_lr": None, "max_removals": None, "out": "run-explain"},
    "evaluate": {"data": None, "checkpoint": None, "explanations": None,
                 "seed": 0, "out": "run-evaluate"},
    "sweep": {"data": None, "dims": "8,16,20,24,28,32", "epochs": 20,
              "lr": 0.05, "batch": 256, "scale": "unit", "k": 5, "users": 10,
              "algo": "accent", "method": "gradient", "seed": 0,
              "out": "run-sweep"},
}


def _resolve(command, args):
    """defaults <- config file <- explicitly passed flags."""
    cfg = dict(_DEFAULTS[command])
    if args.config is not None:
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in cfg:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _dump_or_none(cfg, args):
    if args.dump_config:
        print(json.dumps(cfg, indent=2, sort_keys=True))
        return True
    return False


def _out_dir(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(path) -> Dataset:
    if path is None:
        raise ValueError("a dataset file is required (--data)")
    return read_csv(path)


def _checkpoint_train_cfg(manifest) -> TrainConfig:
    train_block = manifest.get("train", {})
    return TrainConfig(
        d=manifest["d"],
        lr=train_block.get("lr", 0.05),
        epochs=train_block.get("epochs", 20),
        batch_size=train_block.get("batch_size", 256),
        seed=manifest["seed"],
        hidden_widths=(tuple(manifest["hidden_widths"])
                       if manifest.get("hidden_widths") else None),
        rating_scale=manifest["rating_scale"])


def _load_checkpoint(cfg):
    if cfg["checkpoint"] is None:
        raise ValueError("a model checkpoint is required (--checkpoint)")
    prefix = str(cfg["checkpoint"])
    if prefix.endswith(".npz"):
        prefix = prefix[:-4]
    params = models.load_checkpoint(prefix)
    with open(prefix + ".json") as fh:
        manifest = json.load(fh)
    return params, manifest


def cmd_ingest(args):
    cfg = _resolve("ingest", args)
    if _dump_or_none(cfg, args):
        return 0
    if cfg["movielens"] is not None:
        ds = parse_movielens(cfg["movielens"])
    elif cfg["synthetic"]:
        ds = synth_generate(SynthConfig(
            num_users=int(cfg["users"]), num_items=int(cfg["items"]),
            density=float(cfg["density"]),
            num_latent_causes=int(cfg["latent"]),
            noise_std=float(cfg["noise"]), seed=int(cfg["seed"])))
    else:
        raise ValueError("choose a source: --movielens PATH or --synthetic")
    if int(cfg["min_actions"]) > 0:
        ds = filter_min_actions(ds, int(cfg["min_actions"]))
    out = Path(cfg["out"])
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    ds.to_csv(out)
    print(f"users:        {ds.num_users}")
    print(f"items:        {ds.num_items}")
    print(f"interactions: {len(ds)}")
    print(f"density:      {ds.density:.4%}")
    manifest = {
        "tool": {"name": "cfrec", "version": "0.1.0"},
        "config": cfg,
        "outputs": {out.name: report.sha256_file(out)},
    }
    with open(str(out) + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def cmd_train(args):
    cfg = _resolve("train", args)
    if _dump_or_none(cfg, args):
        return 0
    ds = _load_dataset(cfg["data"])
    hidden = cfg["hidden"]
    if isinstance(hidden, str):
        hidden = tuple(int(w) for w in hidden.split(","))
    train_cfg = TrainConfig(d=int(cfg["d"]), lr=float(cfg["lr"]),
                            epochs=int(cfg["epochs"]),
                            batch_size=int(cfg["batch"]),
                            seed=int(cfg["seed"]), hidden_widths=hidden,
                            rating_scale=cfg["scale"])
    params, trace = models.train(cfg["model"], ds, train_cfg)
    out = _out_dir(cfg)
    models.save_checkpoint(params, out / "model", train_cfg=train_cfg)
    with open(out / "trace.csv", "w") as fh:
        fh.write("epoch,mse\n")
        for epoch, value in enumerate(trace):
            fh.write(f"{epoch},{value!r}\n")
    report.write_manifest(out, cfg,
                          ["model.npz", "model.json", "trace.csv"])
    print(f"final training MSE ({train_cfg.rating_scale} scale): "
          f"{trace[-1]!r}")
    return 0


def cmd_explain(args):
    cfg = _resolve("explain", args)
    if _dump_or_none(cfg, args):
        return 0
    if cfg["algo"] not in _ALGO_MAP:
        raise ValueError(f"unknown algorithm {cfg['algo']!r}")
    if cfg["method"] not in _METHOD_MAP:
        raise ValueError(f"unknown method {cfg['method']!r}")
    ds = _load_dataset(cfg["data"])
    params, manifest = _load_checkpoint(cfg)
    train_cfg = _checkpoint_train_cfg(manifest)
    search_cfg = SearchConfig(
        k=int(cfg["k"]), algorithm=_ALGO_MAP[cfg["algo"]],
        max_removals=(None if cfg["max_removals"] is None
                      else int(cfg["max_removals"])))
    influence_cfg = InfluenceConfig(
        method=_METHOD_MAP[cfg["method"]], param_scope=cfg["scope"],
        damping=(None if cfg["damping"] is None else float(cfg["damping"])),
        t2_epochs=int(cfg["t2"]),
        continuation_lr=(None if cfg["cont_lr"] is None
                         else float(cfg["cont_lr"])))
    users = sample_users(ds, int(cfg["users"]),
                         derive_seed(int(cfg["seed"]), "sample"))
    out = _out_dir(cfg)
    found = exhausted = 0
    with open(out / "explanations.jsonl", "w") as fh:
        for u in users:
            expl = explain_user(params, ds, int(u), search_cfg,
                                influence_cfg, train_cfg)
            if expl.status == "found":
                found += 1
            else:
                exhausted += 1
            fh.write(json.dumps(explanation_record(
                expl, ds, cfg["algo"], cfg["method"], search_cfg.k)))
            fh.write("\n")
            fh.flush()
    report.write_manifest(out, cfg, ["explanations.jsonl"])
    print(f"attempted: {len(users)}  found: {found}  exhausted: {exhausted}")
    return 0


def _positions_by_pair(ds):
    return {(int(u), int(v)): pos
            for pos, (u, v) in enumerate(zip(ds.users, ds.items))}


def cmd_evaluate(args):
    cfg = _resolve("evaluate", args)
    if _dump_or_none(cfg, args):
        return 0
    ds = _load_dataset(cfg["data"])
    params, manifest = _load_checkpoint(cfg)
    train_cfg = _checkpoint_train_cfg(manifest)
    kind = manifest["model_kind"]
    if cfg["explanations"] is None:
        raise ValueError("an explanations file is required (--explanations)")
    with open(cfg["explanations"]) as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    if not records:
        raise ValueError("no explanation records to evaluate")
    pair_pos = _positions_by_pair(ds)

    out = _out_dir(cfg)
    groups = {}
    verify_cache = {}
    details = []
    with open(out / "verification.jsonl", "w") as fh:
        for rec in records:
            label = f"{rec['algorithm']}-{rec['method']}"
            key = (label, int(rec["K"]))
            removed = [pair_pos[(r["user"], r["item"])]
                       for r in rec["removed"]]
            expl = Explanation(rec["user"], rec["rec"], rec["rec_star"],
                               removed, [], rec["status"])
            verified = None
            if expl.status == "found":
                verified = retrain_verify(kind, ds, expl, train_cfg,
                                          cache=verify_cache)
            groups.setdefault(key, []).append(verified)
            detail = {
                "explainer": label, "K": int(rec["K"]),
                "user": rec["user"], "status": rec["status"],
                "rec": rec["rec"], "rec_star": rec["rec_star"],
                "size": len(removed),
                "success": verified.success if verified else False,
                "actual_new_top1": (verified.actual_new_top1
                                    if verified else None),
            }
            details.append(detail)
            fh.write(json.dumps(detail))
            fh.write("\n")
            fh.flush()

    labels = sorted({label for label, _ in groups})
    reports = []
    for label in labels:
        per_k = {}
        for (glabel, k), rows in sorted(groups.items()):
            if glabel != label:
                continue
            verified = [r for r in rows if r is not None]
            per_k[k] = (esp(verified, len(rows)), aes(verified))
        reports.append(ExperimentReport(
            label=label, mse=models.mse(params, ds), per_k=per_k,
            num_users_sampled=len({d["user"] for d in details
                                   if d["explainer"] == label}),
            seeds=(manifest["seed"],)))
    report.write_report_csv(out / "report.csv", reports)
    report.write_report_json(out / "report.json", reports, details)
    report.write_manifest(out, cfg, ["report.csv", "report.json",
                                     "verification.jsonl"])
    print((out / "report.csv").read_text().rstrip())
    return 0


def cmd_sweep(args):
    cfg = _resolve("sweep", args)
    if _dump_or_none(cfg, args):
        return 0
    ds = _load_dataset(cfg["data"])
    dims = cfg["dims"]
    if isinstance(dims, str):
        dims = [int(x) for x in dims.split(",") if x.strip()]
    train_cfg = TrainConfig(d=8, lr=float(cfg["lr"]),
                            epochs=int(cfg["epochs"]),
                            batch_size=int(cfg["batch"]),
                            seed=int(cfg["seed"]),
                            rating_scale=cfg["scale"])
    influence_cfg = InfluenceConfig(method=_METHOD_MAP[cfg["method"]])
    rows = sweep_embedding(ds, dims, train_cfg, influence_cfg,
                           algorithm=_ALGO_MAP[cfg["algo"]],
                           k=int(cfg["k"]), n_users=int(cfg["users"]),
                           seed=int(cfg["seed"]))
    out = _out_dir(cfg)
    report.write_sweep_csv(out / "sweep.csv", rows)
    report.write_sweep_svg(out / "sweep.svg", rows)
    with open(out / "sweep_summary.json", "w") as fh:
        json.dump(sweep_correlations(rows), fh, indent=2, sort_keys=True)
        fh.write("\n")
    report.write_manifest(out, cfg, ["sweep.csv", "sweep.svg",
                                     "sweep_summary.json"])
    for row in rows:
        print(row)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cfrec",
        description="counterfactual explanations for small recommenders")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--config", default=None)
        p.add_argument("--dump-config", action="store_true")

    p = sub.add_parser("ingest", help="build a canonical dataset CSV")
    p.add_argument("--movielens", default=None,
                   help="tab-separated user/item/rating/timestamp log")
    p.add_argument("--synthetic", action="store_true", default=None)
    p.add_argument("--min-actions", dest="min_actions", type=int,
                   default=None)
    p.add_argument("--users", type=int, default=None)
    p.add_argument("--items", type=int, default=None)
    p.add_argument("--density", type=float, default=None)
    p.add_argument("--latent", type=int, default=None)
    p.add_argument("--noise", type=float, default=None)
    common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a recommender on a dataset CSV")
    p.add_argument("data", nargs="?", default=None)
    p.add_argument("--model", choices=models.MODEL_KINDS, default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--hidden", default=None, help="comma-separated widths")
    p.add_argument("--scale", choices=models.RATING_SCALES, default=None)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("explain",
                       help="counterfactual explanations for sampled users")
    p.add_argument("--data", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--algo", default=None,
                   help="accent | fia | greedy | iterative_greedy")
    p.add_argument("--method", default=None, help="gradient | data")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--users", type=int, default=None)
    p.add_argument("--scope", default=None,
                   help="user_block | user_and_items_block")
    p.add_argument("--damping", type=float, default=None)
    p.add_argument("--t2", type=int, default=None)
    p.add_argument("--cont-lr", dest="cont_lr", type=float, default=None)
    p.add_argument("--max-removals", dest="max_removals", type=int,
                   default=None)
    common(p)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("evaluate",
                       help="verify explanations by retraining; report ESP/AES")
    p.add_argument("--data", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--explanations", default=None)
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep",
                       help="embedding-dimension sweep: fit vs explanation quality")
    p.add_argument("--data", default=None)
    p.add_argument("--dims", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--scale", choices=models.RATING_SCALES, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--users", type=int, default=None)
    p.add_argument("--algo", default=None)
    p.add_argument("--method", default=None)
    common(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, DatasetError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, IllConditionedError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # pragma: no cover
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
