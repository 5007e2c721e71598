"""Pipeline command-line interface.

Subcommands: ``tokenize``, ``fit``, ``index``, ``recommend``, ``evaluate``,
``bench``. Configuration is an INI file (see README for the schema) with
``--set section.key=value`` overrides. Every artifact is written together
with a manifest recording the config hash, input hashes, seed, and duration;
downstream commands refuse artifacts whose config hash conflicts with the
active config unless ``--force`` is given.

Exit codes: 0 success, 1 usage, 2 data format, 3 capability mismatch.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from .catalog import Catalog, Codebooks, fit_codebooks, read_embedding_file
from .drafter import DraftIndex, build_index, open_stream
from .engine import SpecConfig, beam_only_recommend, constrained_beam_rank, subset_rank
from .errors import CapabilityError, FormatError
from .evals import (
    bench_subset_latency,
    evaluate,
    load_interactions,
    temporal_split,
)
from .runtime import fit_bundle, recommend_for_history, training_sequences
from .seqmodel import NGramScorer, build_token_sequence, fit_ngram
from .tokens import TokenLayout

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FORMAT = 2
EXIT_CAPABILITY = 3

GAMMA_GRID = (-1.4, -1.5, -1.6, -1.7, -1.8)
SIZE_GRID = (10, 25, 50, 100)

DEFAULTS = {
    "tokenizer": {"num_levels": "4", "codebook_size": "32"},
    "scorer": {"order": "8", "smoothing": "0.1", "dim": "32"},
    "engine": {
        "k": "10",
        "draft_size": "50",
        "threshold": "-1.6",
        "beam_width": "50",
        "mode": "auxiliary",
        "unseen_fraction": "0.2",
    },
    "split": {"t_valid": "0", "t_test": "0"},
    "run": {"seed": "0"},
    "bench": {"cases": "100", "latency_sizes": "100,300,1000", "repetitions": "30"},
}


class UsageError(Exception):
    pass


def load_config(path: str, overrides: list[str]) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser()
    cfg.read_dict(DEFAULTS)
    if not Path(path).exists():
        raise UsageError(f"config file not found: {path}")
    cfg.read(path)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(f"override must look like section.key=value: {item!r}")
        key, value = item.split("=", 1)
        section, option = key.split(".", 1)
        if not cfg.has_section(section):
            cfg.add_section(section)
        cfg.set(section, option, value)
    return cfg


def config_hash(cfg: configparser.ConfigParser) -> str:
    payload = {
        s: dict(sorted(cfg[s].items()))
        for s in ("tokenizer", "scorer", "engine", "split", "run")
        if cfg.has_section(s)
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(
    artifact: Path, command: str, cfg_hash: str, inputs: dict[str, Path], seed: int, t0: float
) -> None:
    manifest = {
        "artifact": artifact.name,
        "command": command,
        "config_hash": cfg_hash,
        "inputs": {name: _sha256_file(p) for name, p in inputs.items() if p.exists()},
        "seed": seed,
        "duration_s": round(time.time() - t0, 4),
    }
    artifact.with_suffix(artifact.suffix + ".manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True)
    )


def check_artifact(artifact: Path, cfg_hash: str, producer: str, force: bool) -> None:
    if not artifact.exists():
        raise FormatError(
            f"missing artifact {artifact}; run `specrec {producer}` first"
        )
    manifest_path = artifact.with_suffix(artifact.suffix + ".manifest.json")
    if not manifest_path.exists():
        raise FormatError(f"missing manifest for {artifact}; rerun `specrec {producer}`")
    recorded = json.loads(manifest_path.read_text())["config_hash"]
    if recorded != cfg_hash and not force:
        raise FormatError(
            f"{artifact} was produced under a different config "
            f"(hash {recorded[:12]} != {cfg_hash[:12]}); rerun `specrec {producer}` "
            "or pass --force"
        )


def _paths(cfg) -> dict[str, Path]:
    sec = cfg["paths"]
    art = Path(sec.get("artifacts", "artifacts"))
    return {
        "interactions": Path(sec["interactions"]),
        "embeddings": Path(sec["embeddings"]),
        "artifacts": art,
        "codebooks": art / "codebooks.npz",
        "semantic_ids": art / "semantic_ids.jsonl",
        "scorer": art / "scorer.ckpt",
        "index": art / "index.npz",
    }


def _build_bundle(cfg, paths):
    ids, emb = read_embedding_file(paths["embeddings"])
    log = load_interactions(paths["interactions"])
    return fit_bundle(
        ids,
        emb,
        log,
        t_valid=cfg.getint("split", "t_valid"),
        num_levels=cfg.getint("tokenizer", "num_levels"),
        codebook_size=cfg.getint("tokenizer", "codebook_size"),
        order=cfg.getint("scorer", "order"),
        smoothing=cfg.getfloat("scorer", "smoothing"),
        dim=cfg.getint("scorer", "dim"),
        seed=cfg.getint("run", "seed"),
        mode=cfg.get("engine", "mode"),
    )


def _spec_config(cfg, k: int | None = None) -> SpecConfig:
    return SpecConfig(
        k=k if k is not None else cfg.getint("engine", "k"),
        draft_size=cfg.getint("engine", "draft_size"),
        threshold=cfg.getfloat("engine", "threshold"),
        beam_width=cfg.getint("engine", "beam_width"),
    )


def cmd_tokenize(cfg, args) -> int:
    t0 = time.time()
    paths = _paths(cfg)
    paths["artifacts"].mkdir(parents=True, exist_ok=True)
    bundle = _build_bundle(cfg, paths)
    bundle.catalog.codebooks.save(paths["codebooks"])
    bundle.catalog.dump_semantic_ids(paths["semantic_ids"])
    h = config_hash(cfg)
    seed = cfg.getint("run", "seed")
    inputs = {"embeddings": paths["embeddings"], "interactions": paths["interactions"]}
    write_manifest(paths["codebooks"], "tokenize", h, inputs, seed, t0)
    write_manifest(paths["semantic_ids"], "tokenize", h, inputs, seed, t0)
    print(f"wrote {paths['codebooks']} and {paths['semantic_ids']}")
    return EXIT_OK


def cmd_fit(cfg, args) -> int:
    t0 = time.time()
    paths = _paths(cfg)
    h = config_hash(cfg)
    check_artifact(paths["codebooks"], h, "tokenize", args.force)
    bundle = _build_bundle(cfg, paths)
    bundle.scorer.save(paths["scorer"])
    write_manifest(
        paths["scorer"],
        "fit",
        h,
        {"codebooks": paths["codebooks"], "interactions": paths["interactions"]},
        cfg.getint("run", "seed"),
        t0,
    )
    print(f"wrote {paths['scorer']}")
    return EXIT_OK


def cmd_index(cfg, args) -> int:
    t0 = time.time()
    paths = _paths(cfg)
    h = config_hash(cfg)
    check_artifact(paths["scorer"], h, "fit", args.force)
    bundle = _build_bundle(cfg, paths)
    np.savez(
        paths["index"], vectors=bundle.index.vectors, mode=np.array(bundle.index.mode)
    )
    write_manifest(
        paths["index"],
        "index",
        h,
        {"scorer": paths["scorer"], "embeddings": paths["embeddings"]},
        cfg.getint("run", "seed"),
        t0,
    )
    print(f"wrote {paths['index']}")
    return EXIT_OK


def cmd_recommend(cfg, args) -> int:
    paths = _paths(cfg)
    h = config_hash(cfg)
    check_artifact(paths["scorer"], h, "fit", args.force)
    bundle = _build_bundle(cfg, paths)
    catalog = bundle.catalog
    if args.history is not None:
        externals = [s for s in args.history.split(",") if s]
    elif args.user:
        log = load_interactions(paths["interactions"])
        recs = sorted(
            (r for r in log if r.user == args.user), key=lambda r: (r.ts, r.item)
        )
        externals = [r.item for r in recs]
    else:
        externals = [line.strip() for line in sys.stdin if line.strip()]
    if not externals:
        raise UsageError("empty history: pass --history, --user, or ids on stdin")
    unknown = [e for e in externals if e not in catalog._index_of]
    if unknown:
        raise FormatError(f"unknown item ids: {unknown[:5]}")
    history = [catalog.index_of(e) for e in externals]
    rec = recommend_for_history(bundle, history, _spec_config(cfg))
    out = [
        {
            "item": catalog.external_ids[e.item],
            "score": e.score,
            "provenance": e.provenance,
        }
        for e in rec.entries
    ]
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_evaluate(cfg, args) -> int:
    t0 = time.time()
    paths = _paths(cfg)
    h = config_hash(cfg)
    check_artifact(paths["scorer"], h, "fit", args.force)
    bundle = _build_bundle(cfg, paths)
    log = load_interactions(paths["interactions"])
    _, valid_cases, test_cases = temporal_split(
        log, cfg.getint("split", "t_valid"), cfg.getint("split", "t_test")
    )
    cases = valid_cases if args.split == "valid" else test_cases
    spec = _spec_config(cfg, k=max(50, cfg.getint("engine", "k")))
    report = evaluate(
        lambda hist: recommend_for_history(bundle, hist, spec),
        cases,
        bundle.catalog,
        cutoffs=(10, 50),
    )
    out_json = paths["artifacts"] / f"report_{args.split}.json"
    out_txt = paths["artifacts"] / f"report_{args.split}.txt"
    paths["artifacts"].mkdir(parents=True, exist_ok=True)
    out_json.write_text(report.to_json())
    out_txt.write_text(report.to_text_table() + "\n")
    write_manifest(
        out_json,
        "evaluate",
        h,
        {"scorer": paths["scorer"], "interactions": paths["interactions"]},
        cfg.getint("run", "seed"),
        t0,
    )
    print(report.to_text_table())
    return EXIT_OK


def cmd_bench(cfg, args) -> int:
    t0 = time.time()
    paths = _paths(cfg)
    h = config_hash(cfg)
    check_artifact(paths["scorer"], h, "fit", args.force)
    bundle = _build_bundle(cfg, paths)
    catalog = bundle.catalog
    log = load_interactions(paths["interactions"])
    _, valid_cases, _ = temporal_split(
        log, cfg.getint("split", "t_valid"), cfg.getint("split", "t_test")
    )
    n_cases = cfg.getint("bench", "cases")
    cases = valid_cases[:n_cases]
    paths["artifacts"].mkdir(parents=True, exist_ok=True)

    sweep_path = paths["artifacts"] / "sweep.csv"
    with open(sweep_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["gamma", "draft_size", "beam_width", "mean_decode_steps",
             "mean_iterations", "recall@50", "unseen_recall@50", "mean_wall_time_s"]
        )
        base = _spec_config(cfg, k=50)
        settings = [(g, base.draft_size, base.beam_width) for g in GAMMA_GRID]
        settings += [(base.threshold, d, base.beam_width) for d in SIZE_GRID]
        settings += [(base.threshold, base.draft_size, b) for b in SIZE_GRID]
        for gamma, delta, beta in settings:
            spec = SpecConfig(
                k=50, draft_size=delta, threshold=gamma, beam_width=beta
            )
            report = evaluate(
                lambda hist: recommend_for_history(bundle, hist, spec),
                cases,
                catalog,
                cutoffs=(50,),
            )
            writer.writerow(
                [gamma, delta, beta,
                 f"{report.mean_decode_steps:.4f}", f"{report.mean_iterations:.4f}",
                 f"{report.metrics['overall']['recall@50']:.4f}",
                 f"{report.metrics['unseen']['recall@50']:.4f}",
                 f"{report.mean_wall_time_s:.6f}"]
            )

    # subset-ranking latency: speculative fast path vs constrained beams vs batch scoring
    sizes = [int(s) for s in cfg.get("bench", "latency_sizes").split(",")]
    sizes = [s for s in sizes if s <= len(catalog)]
    reps = cfg.getint("bench", "repetitions")
    rng = np.random.default_rng(cfg.getint("run", "seed"))
    histories = []
    for case in cases:
        hist = [catalog.index_of(e) for e in case.history if e in catalog._index_of]
        if hist:
            histories.append(hist)
    if not histories:
        raise FormatError("no usable evaluation cases for the latency bench")

    def make_inputs(size, rep):
        hist = histories[rep % len(histories)]
        subset = set(
            int(i) for i in rng.choice(len(catalog), size=size, replace=False)
        )
        x = build_token_sequence(hist, catalog)
        return {"hist": hist, "subset": subset, "x": x}

    spec = _spec_config(cfg, k=min(10, cfg.getint("engine", "k")))

    def run_subset_rank(hist, subset, x):
        stream = open_stream(
            bundle.index, catalog, hist, x_tokens=x, scorer=bundle.scorer, subset=subset
        )
        return subset_rank(bundle.scorer, stream, x, subset, catalog, spec)

    def run_constrained(hist, subset, x):
        return constrained_beam_rank(
            bundle.scorer, x, subset, spec.beam_width, spec.k, catalog
        )

    def run_batch(hist, subset, x):
        from .engine import batch_score_rank

        return batch_score_rank(bundle.scorer, x, subset, spec.k, catalog)

    rows = bench_subset_latency(
        {
            "subset_rank": run_subset_rank,
            "constrained_beam_rank": run_constrained,
            "batch_scoring": run_batch,
        },
        sizes,
        make_inputs,
        repetitions=reps,
    )
    latency_path = paths["artifacts"] / "latency.csv"
    with open(latency_path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["method", "subset_size", "median_s", "p95_s"]
        )
        writer.writeheader()
        writer.writerows(rows)
    write_manifest(
        sweep_path, "bench", h, {"scorer": paths["scorer"]}, cfg.getint("run", "seed"), t0
    )
    write_manifest(
        latency_path, "bench", h, {"scorer": paths["scorer"]}, cfg.getint("run", "seed"), t0
    )
    print(f"wrote {sweep_path} and {latency_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specrec", description="speculative draft-verify recommendation pipelines"
    )
    parser.add_argument("-c", "--config", required=True, help="INI config file")
    parser.add_argument(
        "--set", action="append", default=[], metavar="section.key=value",
        help="override a config value",
    )
    parser.add_argument(
        "--force", action="store_true", help="consume artifacts despite config-hash mismatch"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("tokenize")
    sub.add_parser("fit")
    sub.add_parser("index")
    p_rec = sub.add_parser("recommend")
    p_rec.add_argument("--user")
    p_rec.add_argument("--history", help="comma-separated external item ids")
    p_eval = sub.add_parser("evaluate")
    p_eval.add_argument("--split", choices=("valid", "test"), default="valid")
    sub.add_parser("bench")
    return parser


COMMANDS = {
    "tokenize": cmd_tokenize,
    "fit": cmd_fit,
    "index": cmd_index,
    "recommend": cmd_recommend,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config, args.set)
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except CapabilityError as exc:
        print(f"capability error: {exc}", file=sys.stderr)
        return EXIT_CAPABILITY


if __name__ == "__main__":
    sys.exit(main())
