"""Command-line surface: validate, denoise, train, rank, eval, xval, xproject.

Precedence for settings: command-line flags override the JSON config file,
which overrides built-in defaults; BICHUNTER_SEED is the seed fallback when
neither a flag nor the config provides one. Report payloads never embed
wall-clock data, so identical invocations produce byte-identical files; run
metadata (timestamp, argv) goes to a ``.meta.json`` sidecar.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from .baseclf import ClassifierSpec
from .dataset import load_dataset
from .embedding import embed_index, load_precomputed
from .gcnrank import load_checkpoint, save_checkpoint
from .graphbuild import build_commit_graph
from .metrics import evaluate_model, rank_commit
from .trainer import (
    TrainConfig,
    denoise_commits,
    run_cross_project,
    run_kfold,
    train,
)

_CLASSIFIER_KINDS = {"lr": "logistic_regression", "knn": "knn"}


def _load_config_file(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return data


def _resolve_seed(args, config_data: dict) -> int:
    if args.seed is not None:
        return args.seed
    if "seed" in config_data:
        return int(config_data["seed"])
    env = os.environ.get("BICHUNTER_SEED")
    if env is not None:
        return int(env)
    return 0


def _build_config(args) -> TrainConfig:
    data = _load_config_file(args.config) if args.config else {}
    data["seed"] = _resolve_seed(args, data)
    if getattr(args, "denoise", None) is not None:
        data["denoise"] = args.denoise == "on"
    if getattr(args, "denoise_scope", None) is not None:
        data["denoise_scope"] = args.denoise_scope
    if getattr(args, "threshold_mode", None) is not None:
        data["threshold_mode"] = args.threshold_mode
    if getattr(args, "classifier", None) is not None:
        spec = data.get("classifier", {})
        if isinstance(spec, dict):
            spec = dict(spec)
            spec["kind"] = _CLASSIFIER_KINDS[args.classifier]
            data["classifier"] = spec
        else:
            data["classifier"] = {"kind": _CLASSIFIER_KINDS[args.classifier]}
    return TrainConfig.from_dict(data)


def _load_inputs(args, config: TrainConfig):
    index = load_dataset(args.nodes, args.edges)
    if args.embeddings:
        embeddings = load_precomputed(args.embeddings, index)
        source = {"source": "file", "dim": embeddings.dim}
    else:
        embeddings = embed_index(index, dim=config.embed_dim, seed=config.seed)
        source = {"source": "hash", "dim": config.embed_dim, "seed": config.seed}
    return index, embeddings, source


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_meta(path, args) -> None:
    _write_json(
        path,
        {"argv": list(sys.argv), "unix_time": time.time()},
    )


def _write_loss_trace(path, trace) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,mean_pair_loss\n")
        for epoch, loss in enumerate(trace):
            fh.write(f"{epoch},{loss!r}\n")


def _parse_k_list(text: str):
    try:
        ks = tuple(int(part) for part in text.split(",") if part)
    except ValueError:
        raise ValueError(f"--k expects comma-separated integers, got {text!r}")
    if not ks or any(k < 1 for k in ks):
        raise ValueError(f"--k expects positive integers, got {text!r}")
    return ks


def cmd_validate(args) -> int:
    index = load_dataset(args.nodes, args.edges)
    summary = index.summary()
    for key in (
        "nodes",
        "edges",
        "commits",
        "trainable_commits",
        "projects",
        "deleted_nodes",
        "root_cause_nodes",
    ):
        print(f"{key}: {summary[key]}")
    if args.out:
        _write_json(args.out, summary)
    return 0


def cmd_denoise(args) -> int:
    config = _build_config(args)
    if args.folds is not None:
        config = TrainConfig.from_dict({**config.to_dict(), "cl_folds": args.folds})
    index, embeddings, _ = _load_inputs(args, config)
    report = denoise_commits(index, index.trainable_commits, embeddings, config)
    report.to_jsonl(args.out)
    _write_meta(args.out + ".meta.json", args)
    print(f"removed: {len(report.removed)}")
    print(f"kept: {len(report.kept)}")
    return 0


def cmd_train(args) -> int:
    config = _build_config(args)
    index, embeddings, source = _load_inputs(args, config)
    result = train(index, index.trainable_commits, embeddings, config)
    save_checkpoint(
        result.model,
        args.out,
        meta={
            "seed": config.seed,
            "config_hash": config.config_hash(),
            "embedding": source,
        },
    )
    _write_loss_trace(args.out + ".loss.csv", result.loss_trace)
    _write_meta(args.out + ".meta.json", args)
    print(f"trained on {len(index.trainable_commits)} commits; "
          f"final mean pair loss {result.loss_trace[-1]:.6f}")
    return 0


def _load_model_with_embeddings(args, config: TrainConfig):
    index = load_dataset(args.nodes, args.edges)
    model, header = load_checkpoint(args.checkpoint)
    embed_info = header.get("embedding", {})
    if args.embeddings:
        embeddings = load_precomputed(args.embeddings, index)
    elif embed_info.get("source") == "hash":
        embeddings = embed_index(
            index, dim=embed_info["dim"], seed=embed_info.get("seed", config.seed)
        )
    else:
        raise ValueError(
            "checkpoint was trained on file embeddings; pass --embeddings"
        )
    if embeddings.dim != model.input_dim:
        raise ValueError(
            f"embedding dim {embeddings.dim} does not match checkpoint "
            f"input dim {model.input_dim}"
        )
    return index, model, embeddings


def cmd_rank(args) -> int:
    config = _build_config(args)
    index, model, embeddings = _load_model_with_embeddings(args, config)
    rankings = {}
    for commit_id in index.trainable_commits:
        graph = build_commit_graph(
            index, commit_id, embeddings, config.default_edge_weight
        )
        result = rank_commit(model, graph)
        rankings[commit_id] = [[node_id, score] for node_id, score in result.ranking]
    _write_json(args.out, {"rankings": rankings})
    _write_meta(args.out + ".meta.json", args)
    print(f"ranked {len(rankings)} commits")
    return 0


def cmd_eval(args) -> int:
    config = _build_config(args)
    index, model, embeddings = _load_model_with_embeddings(args, config)
    ks = _parse_k_list(args.k)
    report = evaluate_model(
        model,
        index,
        index.trainable_commits,
        embeddings,
        ks=ks,
        default_edge_weight=config.default_edge_weight,
    )
    _write_json(args.out, {"report": report.to_dict()})
    _write_meta(args.out + ".meta.json", args)
    print(json.dumps(report.to_dict()["recall_at"], sort_keys=True))
    return 0


def cmd_xval(args) -> int:
    config = _build_config(args)
    index, embeddings, source = _load_inputs(args, config)
    ks = _parse_k_list(args.k)
    outcome = run_kfold(index, embeddings, config, k=args.folds, ks=ks, jobs=args.jobs)
    os.makedirs(args.out, exist_ok=True)
    payload = {
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "folds": args.folds,
        "ks": list(ks),
        "mean": outcome.mean.to_dict(),
        "per_fold": [
            {
                "fold": o.fold,
                "test_commits": list(o.test_commits),
                "report": o.report.to_dict(),
            }
            for o in outcome.folds
        ],
    }
    report_path = os.path.join(args.out, "report.json")
    _write_json(report_path, payload)
    for o in outcome.folds:
        ckpt = os.path.join(args.out, f"fold_{o.fold}.ckpt")
        save_checkpoint(
            o.result.model,
            ckpt,
            meta={
                "seed": config.seed,
                "config_hash": config.config_hash(),
                "fold": o.fold,
                "embedding": source,
            },
        )
        _write_loss_trace(os.path.join(args.out, f"fold_{o.fold}.loss.csv"),
                          o.result.loss_trace)
    _write_meta(os.path.join(args.out, "run_meta.json"), args)
    print(json.dumps(payload["mean"]["recall_at"], sort_keys=True))
    mfr_value = payload["mean"]["mfr"]
    print(f"mfr: {mfr_value}")
    return 0


def cmd_xproject(args) -> int:
    config = _build_config(args)
    index, embeddings, _ = _load_inputs(args, config)
    ks = _parse_k_list(args.k)
    test_projects = [p for p in args.test_projects.split(",") if p]
    outcome = run_cross_project(index, embeddings, config, test_projects, ks=ks)
    payload = {
        "config": config.to_dict(),
        "test_projects": sorted(test_projects),
        "ks": list(ks),
        "report": outcome.report.to_dict(),
    }
    _write_json(args.out, payload)
    _write_meta(args.out + ".meta.json", args)
    print(json.dumps(payload["report"]["recall_at"], sort_keys=True))
    return 0


def _add_dataset_args(parser):
    parser.add_argument("--nodes", required=True, help="nodes JSONL file")
    parser.add_argument("--edges", required=True, help="edges JSONL file")


def _add_common_args(parser):
    parser.add_argument("--config", help="JSON config file mirroring TrainConfig")
    parser.add_argument("--seed", type=int, default=None,
                        help="run seed (fallback: config, then BICHUNTER_SEED)")
    parser.add_argument("--embeddings", help="precomputed embedding file")
    parser.add_argument("--denoise", choices=("on", "off"), default=None)
    parser.add_argument("--denoise-scope", choices=("fold", "global"), default=None)
    parser.add_argument("--classifier", choices=tuple(_CLASSIFIER_KINDS), default=None)
    parser.add_argument("--threshold-mode",
                        choices=("class_conditional", "global"), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bichunter",
        description="Rank deleted lines of bug-fixing commits by root-cause "
        "likelihood.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check dataset files and print counts")
    _add_dataset_args(p)
    _add_common_args(p)
    p.add_argument("--out", help="optional JSON summary path")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("denoise", help="write a noise report for the dataset")
    _add_dataset_args(p)
    _add_common_args(p)
    p.add_argument("--folds", type=int, default=None,
                   help="denoising cross-validation folds (default from config)")
    p.add_argument("--out", required=True, help="noise report JSONL path")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("train", help="train a ranking model on all commits")
    _add_dataset_args(p)
    _add_common_args(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rank", help="rank deleted lines with a trained model")
    _add_dataset_args(p)
    _add_common_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="rankings JSON path")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("eval", help="evaluate a trained model on the dataset")
    _add_dataset_args(p)
    _add_common_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k", default="1,2,3", help="comma-separated recall cutoffs")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("xval", help="k-fold cross-validation experiment")
    _add_dataset_args(p)
    _add_common_args(p)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--k", default="1,2,3")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_xval)

    p = sub.add_parser("xproject", help="cross-project experiment")
    _add_dataset_args(p)
    _add_common_args(p)
    p.add_argument("--test-projects", required=True,
                   help="comma-separated project ids held out for testing")
    p.add_argument("--k", default="1,2,3")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_xproject)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
