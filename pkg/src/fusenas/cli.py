"""Command-line entry points wiring search, training, and data tooling.

Usage:

    fusenas gen-data   --out runs/data [--set data.num_examples=500]
    fusenas search     --out runs/s0 --config exp.ini [--resume]
    fusenas train-one  --out runs/t0 --genome best_genome.txt
    fusenas compile    --genome best_genome.txt [--out runs/c0]
    fusenas export-dot --genome best_genome.txt [--out runs/d0]
    fusenas report     runs/s0 runs/s1 runs/s2 [--out runs/summary]

Configuration is layered: dataclass defaults, then an INI file (--config),
then FUSENAS_<SECTION>__<KEY> environment variables, then --set
section.key=value flags, then the dedicated flags (--seed, --workers,
--evaluator, --mode). Unknown sections or keys are rejected before any
file is touched. Every command that receives --out treats it as a
directory and drops a resolved.ini snapshot there; rerunning with
--config resolved.ini reproduces the run. Without --out, compile,
export-dot, and report print to stdout only.

Exit codes: 0 success, 2 configuration or usage error, 3 runtime error,
130 interrupted.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import math
import os
import statistics
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .compiler import classify_fusion, compile_genome, count_parameters, to_dot
from .data import Dataset, DatasetSpec, generate, load_dataset, save_dataset
from .evolution import (
    SearchConfig,
    make_surrogate_evaluator,
    run_search,
)
from .genome import Genome, genome_from_text, genome_to_text
from .trainer import (
    DATASET_STREAMS,
    TrainConfig,
    evaluate_candidate,
    evaluation_record,
    _embed_width_plan,
)
from .vocab import DEFAULT_VOCABULARY

ENV_PREFIX = "FUSENAS_"

TRUE_WORDS = {"1", "true", "yes", "on"}
FALSE_WORDS = {"0", "false", "no", "off"}


class ConfigError(Exception):
    pass


def _field_types(cls) -> Dict[str, type]:
    return {f.name: type(f.default) for f in dataclasses.fields(cls)}


def _known_keys() -> Dict[str, Dict[str, type]]:
    known = {
        "run": {"workers": int, "checkpoint_every": int},
        "search": _field_types(SearchConfig),
        "train": _field_types(TrainConfig),
        "data": _field_types(DatasetSpec),
    }
    known["data"]["path"] = str
    return known


def _defaults() -> Dict[str, Dict[str, object]]:
    cfg: Dict[str, Dict[str, object]] = {
        "run": {"workers": os.cpu_count() or 1, "checkpoint_every": 1},
        "search": {f.name: f.default for f in dataclasses.fields(SearchConfig)},
        "train": {f.name: f.default for f in dataclasses.fields(TrainConfig)},
        "data": {f.name: f.default for f in dataclasses.fields(DatasetSpec)},
    }
    cfg["data"]["path"] = ""
    return cfg


def _convert(section: str, key: str, raw: str, want: type):
    if want is bool:
        word = raw.strip().lower()
        if word in TRUE_WORDS:
            return True
        if word in FALSE_WORDS:
            return False
        raise ConfigError(f"{section}.{key}: expected a boolean, got {raw!r}")
    try:
        return want(raw)
    except ValueError:
        raise ConfigError(
            f"{section}.{key}: expected {want.__name__}, got {raw!r}") from None


def _assign(cfg, known, section: str, key: str, raw: str, origin: str) -> None:
    if section not in known:
        raise ConfigError(f"unknown config section {section!r} ({origin})")
    if key not in known[section]:
        raise ConfigError(f"unknown config key {section}.{key} ({origin})")
    cfg[section][key] = _convert(section, key, raw, known[section][key])


def resolve_config(config_path: Optional[str], sets: List[str],
                   env: Optional[Dict[str, str]] = None
                   ) -> Dict[str, Dict[str, object]]:
    """Layer file, environment, and --set overrides over the defaults."""
    known = _known_keys()
    cfg = _defaults()

    if config_path:
        parser = configparser.ConfigParser()
        read = parser.read(config_path)
        if not read:
            raise ConfigError(f"config file not found: {config_path}")
        for section in parser.sections():
            for key, raw in parser.items(section):
                _assign(cfg, known, section, key, raw, config_path)

    environ = os.environ if env is None else env
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):]
        if "__" not in rest:
            raise ConfigError(
                f"environment override {name} must look like "
                f"{ENV_PREFIX}SECTION__KEY")
        section, key = rest.split("__", 1)
        _assign(cfg, known, section.lower(), key.lower(), raw, "environment")

    for item in sets:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        section, key = dotted.split(".", 1)
        _assign(cfg, known, section, key, raw, "--set")

    return cfg


def _search_config(cfg) -> SearchConfig:
    try:
        return SearchConfig(**cfg["search"])
    except ValueError as exc:
        raise ConfigError(f"search config: {exc}") from None


def _train_config(cfg, seed: Optional[int] = None) -> TrainConfig:
    values = dict(cfg["train"])
    if seed is not None:
        values["seed"] = seed
    try:
        return TrainConfig(**values)
    except ValueError as exc:
        raise ConfigError(f"train config: {exc}") from None


def _dataset_spec(cfg) -> DatasetSpec:
    values = {k: v for k, v in cfg["data"].items() if k != "path"}
    try:
        return DatasetSpec(**values)
    except ValueError as exc:
        raise ConfigError(f"data config: {exc}") from None


def _get_dataset(cfg) -> Dataset:
    path = cfg["data"]["path"]
    if path:
        return load_dataset(path)
    return generate(_dataset_spec(cfg))


def _prepare_out(out: str, resume: bool = False) -> Path:
    path = Path(out)
    if path.exists() and any(path.iterdir()) and not resume:
        raise ConfigError(
            f"output directory {out} is not empty; pass --resume to continue "
            "or choose a fresh directory")
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_snapshot(out: Path, cfg) -> None:
    parser = configparser.ConfigParser()
    for section, values in cfg.items():
        parser[section] = {k: str(v) for k, v in values.items()}
    with open(out / "resolved.ini", "w", encoding="utf-8") as fh:
        parser.write(fh)


def _read_genome(path: str) -> Genome:
    try:
        with open(path, encoding="utf-8") as fh:
            return genome_from_text(fh.read(), DEFAULT_VOCABULARY)
    except FileNotFoundError:
        raise ConfigError(f"genome file not found: {path}") from None
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _compile_for_cli(genome: Genome, cfg):
    train = _train_config(cfg)
    use_concat, widths = _embed_width_plan(genome, train, DATASET_STREAMS)
    return compile_genome(genome, widths, length=cfg["data"]["seq_len"],
                          vocab=DEFAULT_VOCABULARY)


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(cfg, args) -> int:
    spec = _dataset_spec(cfg)
    out = _prepare_out(args.out)
    ds = generate(spec)
    save_dataset(ds, str(out / "dataset.bin"))
    write_snapshot(out, cfg)
    print(f"wrote {out / 'dataset.bin'}: {spec.num_examples} examples, "
          f"{spec.num_classes} classes, interaction={spec.interaction}")
    return 0


def cmd_search(cfg, args) -> int:
    search_cfg = _search_config(cfg)
    _train_config(cfg)
    out = _prepare_out(args.out, resume=args.resume)
    checkpoint = out / "checkpoint.json"
    if args.resume and not checkpoint.exists():
        raise ConfigError(f"--resume given but {checkpoint} does not exist")

    if search_cfg.evaluator == "surrogate":
        evaluator = make_surrogate_evaluator(DEFAULT_VOCABULARY)
        dataset = None
    else:
        dataset = _get_dataset(cfg)

        def evaluator(genome, seed):
            result = evaluate_candidate(genome, dataset,
                                        _train_config(cfg, seed=seed))
            return result.fitness

    write_snapshot(out, cfg)
    log_path = out / "candidates.jsonl"
    mode = "a" if args.resume else "w"
    started = time.time()
    with open(log_path, mode, encoding="utf-8") as log:
        result = run_search(
            search_cfg, evaluator,
            workers=cfg["run"]["workers"],
            checkpoint_path=str(checkpoint),
            checkpoint_every=cfg["run"]["checkpoint_every"],
            resume=args.resume,
            log_fn=lambda rec: print(json.dumps(rec), file=log, flush=True))

    best = result.best
    (out / "best_genome.txt").write_text(
        genome_to_text(best.genome, DEFAULT_VOCABULARY), encoding="utf-8")
    graph = _compile_for_cli(best.genome, cfg)
    (out / "best_arch.dot").write_text(to_dot(graph), encoding="utf-8")
    summary = {
        "best_fitness": best.fitness,
        "best_id": best.id,
        "candidates": len(result.history),
        "failures": result.failures,
        "wall_time_s": round(time.time() - started, 3),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2),
                                      encoding="utf-8")
    print(f"best fitness {best.fitness:.4f} (candidate {best.id}) "
          f"after {len(result.history)} candidates")
    return 0


def cmd_train_one(cfg, args) -> int:
    train = _train_config(cfg)
    if args.genome:
        genome = _read_genome(args.genome)
    else:
        from .seeds import seed_genome
        genome = seed_genome(cfg["search"]["seed_kind"],
                             cfg["search"]["modalities"], DEFAULT_VOCABULARY)
    out = _prepare_out(args.out)
    dataset = _get_dataset(cfg)
    write_snapshot(out, cfg)
    result = evaluate_candidate(genome, dataset, train)
    (out / "evaluation.json").write_text(
        evaluation_record(0, result, train.steps) + "\n", encoding="utf-8")
    if result.rejected:
        print(f"rejected: {result.reason}")
    else:
        print(f"fitness {result.fitness:.4f} "
              f"({result.parameter_count} parameters, "
              f"{result.wall_time_s:.1f}s)")
    return 0


def cmd_compile(cfg, args) -> int:
    genome = _read_genome(args.genome)
    graph = _compile_for_cli(genome, cfg)
    report = classify_fusion(graph)
    kinds = sorted(set().union(*report.strategies)) if report.strategies \
        else []
    lines = [
        f"nodes: {len(graph.nodes)}",
        f"parameters: {count_parameters(graph)}",
        f"output width: {graph.node(graph.output_id).out_width}",
        f"fusion: {', '.join(kinds) or 'none'}",
    ]
    text = "\n".join(lines)
    if args.out:
        out = _prepare_out(args.out)
        from .compiler import graph_to_json
        (out / "graph.json").write_text(graph_to_json(graph),
                                        encoding="utf-8")
        (out / "summary.txt").write_text(text + "\n", encoding="utf-8")
        write_snapshot(out, cfg)
    print(text)
    return 0


def cmd_export_dot(cfg, args) -> int:
    genome = _read_genome(args.genome)
    dot = to_dot(_compile_for_cli(genome, cfg))
    if args.out:
        out = _prepare_out(args.out)
        (out / "arch.dot").write_text(dot, encoding="utf-8")
        write_snapshot(out, cfg)
        print(f"wrote {out / 'arch.dot'}")
    else:
        print(dot)
    return 0


def _load_run(path: str) -> Tuple[List[dict], int]:
    """Candidate records plus the number of corrupt lines skipped."""
    p = Path(path)
    if p.is_dir():
        p = p / "candidates.jsonl"
    if not p.exists():
        raise ConfigError(f"no candidate log at {p}")
    records, corrupt = [], 0
    with open(p, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                records.append({"id": int(rec["id"]),
                                "fitness": float(rec["fitness"])})
            except (ValueError, KeyError, TypeError):
                corrupt += 1
    if not records:
        raise ConfigError(f"{p}: no readable candidate records")
    return records, corrupt


def cmd_report(cfg, args) -> int:
    runs = []
    total_corrupt = 0
    for path in args.logs:
        records, corrupt = _load_run(path)
        total_corrupt += corrupt
        curve, best = [], -math.inf
        for rec in records:
            best = max(best, rec["fitness"])
            curve.append(best)
        runs.append({"path": path, "best": best, "curve": curve})

    bests = [r["best"] for r in runs]
    mean = statistics.fmean(bests)
    std = statistics.stdev(bests) if len(bests) > 1 else 0.0

    lines = ["run\tbest", ]
    for r in runs:
        lines.append(f"{r['path']}\t{r['best']:.4f}")
    lines.append(f"mean\t{mean:.4f}")
    lines.append(f"std\t{std:.4f}")
    if len(bests) == 1:
        lines.append("warning: single run, standard deviation is 0 by "
                     "convention")
    if total_corrupt:
        lines.append(f"warning: skipped {total_corrupt} corrupt log lines")

    lines.append("")
    lines.append("best-so-far curves")
    header = "candidate\t" + "\t".join(f"run{i}" for i in range(len(runs)))
    lines.append(header)
    depth = max(len(r["curve"]) for r in runs)
    for i in range(depth):
        row = [str(i)]
        for r in runs:
            curve = r["curve"]
            row.append(f"{curve[min(i, len(curve) - 1)]:.4f}")
        lines.append("\t".join(row))

    text = "\n".join(lines)
    print(text)
    if args.out:
        out = _prepare_out(args.out)
        (out / "report.txt").write_text(text + "\n", encoding="utf-8")
        with open(out / "series.csv", "w", encoding="utf-8") as fh:
            fh.write("run,candidate,best_so_far\n")
            for run_ix, r in enumerate(runs):
                for i, v in enumerate(r["curve"]):
                    fh.write(f"{run_ix},{i},{v}\n")
        write_snapshot(out, cfg)
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusenas",
        description="evolutionary search over multimodal fusion architectures")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required: bool, seed_target: Optional[str]):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--set", action="append", default=[], dest="sets",
                       metavar="SECTION.KEY=VALUE",
                       help="override one config value")
        p.add_argument("--out", required=out_required,
                       help="output directory")
        if seed_target:
            p.add_argument("--seed", type=int,
                           help=f"shorthand for --set {seed_target}=N")
        p.set_defaults(seed_target=seed_target)

    p = sub.add_parser("search", help="run an architecture search")
    common(p, out_required=True, seed_target="search.rng_seed")
    p.add_argument("--resume", action="store_true",
                   help="continue from the checkpoint in --out")
    p.add_argument("--workers", type=int,
                   help="worker pool size (async mode)")
    p.add_argument("--evaluator", choices=["neural", "surrogate"])
    p.add_argument("--mode", choices=["sync", "async"])
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("gen-data", help="generate and save a dataset")
    common(p, out_required=True, seed_target="data.seed")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-one", help="train a single genome")
    common(p, out_required=True, seed_target="train.seed")
    p.add_argument("--genome", help="genome text file (default: the seed "
                   "architecture from the search config)")
    p.set_defaults(func=cmd_train_one)

    p = sub.add_parser("compile", help="compile a genome and summarize it")
    common(p, out_required=False, seed_target=None)
    p.add_argument("--genome", required=True, help="genome text file")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("export-dot",
                       help="emit a graphviz diagram of a genome")
    common(p, out_required=False, seed_target=None)
    p.add_argument("--genome", required=True, help="genome text file")
    p.set_defaults(func=cmd_export_dot)

    p = sub.add_parser("report", help="summarize one or more search logs")
    common(p, out_required=False, seed_target=None)
    p.add_argument("logs", nargs="+",
                   help="run directories or candidates.jsonl files")
    p.set_defaults(func=cmd_report)

    return parser


def _apply_flag_overrides(args) -> List[str]:
    sets = list(args.sets)
    if getattr(args, "seed", None) is not None and args.seed_target:
        sets.append(f"{args.seed_target}={args.seed}")
    if getattr(args, "workers", None) is not None:
        sets.append(f"run.workers={args.workers}")
    if getattr(args, "evaluator", None):
        sets.append(f"search.evaluator={args.evaluator}")
    if getattr(args, "mode", None):
        sets.append(f"search.mode={args.mode}")
    return sets


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "resume"):
        args.resume = False
    try:
        cfg = resolve_config(args.config, _apply_flag_overrides(args))
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
