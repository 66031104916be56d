"""``infobound`` command-line entry point.

Every run that writes files (``--out DIR``) also writes ``manifest.json``,
and ``infobound --replay DIR/manifest.json --out NEW`` re-executes it from
the recorded config snapshot and seed, then checks that each output file
hashes to the recorded value.

Exit codes: 0 success, 1 config error or bad flags, 2 runtime error,
3 soundness violation.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import replace
from importlib import resources
from typing import Optional, Sequence

from . import __version__
from . import config as cfgmod
from .bounds import batch_csv, evaluate
from .config import ConfigError, RunManifest
from .infotheory import layer_mi_chain
from .net import dumps_network
from .optim import dataset_loss, train
from .experiments.data import gen_dataset
from .experiments.montecarlo import (SWEEP_HEADER, SweepConfig, depth_sweep, measure_gap,
                                     replace_one_stability, sweep_rows_table)
from .experiments.tinyworld import TinyWorld, lemma4_soundness_check, random_world, tiny_world_exact

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_UNSOUND = 0, 1, 2, 3

SEEDED = ("train", "mi-chain", "gap", "stability", "sweep")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(message)


def emit_plot_data(rows, path: str, header: Sequence[str] = SWEEP_HEADER) -> str:
    """Write ``rows`` under ``header`` as CSV; floats are written with ``repr``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="infobound", description="Information-theoretic generalization bounds for deep nets.")
    p.add_argument("--version", action="version", version=f"infobound {__version__}")
    p.add_argument("--replay", metavar="MANIFEST", help="re-run a recorded run and verify its outputs")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="INI or JSON experiment config")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="overrides [run] seed")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="worker processes (default: $INFOBOUND_THREADS or 1)")
    for flag in ("--config", "--seed", "--threads"):
        p.add_argument(flag, default=None, type=int if flag != "--config" else str,
                       help=argparse.SUPPRESS)
    p.add_argument("--out", default=None, help="output directory (created if missing)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (created if missing)")

    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.add_parser("train", parents=[common], help="train one network with noisy SGD")
    mc = sub.add_parser("mi-chain", parents=[common], help="train and estimate the per-layer MI chain")
    mc.add_argument("--raw", action="store_true", help="bin each stage separately (no nesting)")
    b = sub.add_parser("bounds", parents=[common], help="evaluate bound documents")
    b.add_argument("--input", required=True, help="JSON object (one report) or array (CSV batch)")
    sub.add_parser("gap", parents=[common], help="Monte Carlo generalization gap")
    sub.add_parser("stability", parents=[common], help="Monte Carlo replace-one stability")
    sub.add_parser("sweep", parents=[common], help="depth sweep; writes sweep.csv")
    tw = sub.add_parser("tinyworld", parents=[common], help="exact enumeration of one tiny world")
    tw.add_argument("--world", required=True, help="tiny-world JSON file")
    ck = sub.add_parser("check", parents=[common], help="soundness check over the tiny-world corpus")
    ck.add_argument("--count", type=int, default=200, help="random worlds added to the shipped corpus")
    ck.add_argument("--world-dir", default=None, help="use this directory of world files instead")
    return p


# ----------------------------------------------------------------------------
# commands; each returns (exit_code, {file name: contents}, stdout text)


def _setup(cfg: dict, seed: int):
    spec = cfgmod.dataset_spec(cfg, seed)
    return spec, cfgmod.train_config(cfg, seed), *cfgmod.losses(cfg)


def _cmd_train(cfg, seed, threads, args):
    spec, tcfg, loss, eval_loss = _setup(cfg, seed)
    data = gen_dataset(spec, "train")
    test = gen_dataset(replace(spec, n=cfg["experiment"]["n_test"]), "test")
    net, trace = train(cfgmod.network(cfg), data.X, data.y, tcfg, loss)
    summary = {"train_risk": dataset_loss(net, data.X, data.y, eval_loss),
               "test_risk": dataset_loss(net, test.X, test.y, eval_loss),
               "mi_budget": trace.mi_budget_total, "m_hat": trace.m_hat}
    summary["gap"] = summary["test_risk"] - summary["train_risk"]
    text = json.dumps(summary, sort_keys=True)
    return EXIT_OK, {"network.json": dumps_network(net) + "\n", "trace.csv": trace.to_csv(),
                     "summary.json": text + "\n"}, text


def _cmd_mi_chain(cfg, seed, threads, args):
    spec, tcfg, loss, _ = _setup(cfg, seed)
    data = gen_dataset(spec, "train")
    net, trace = train(cfgmod.network(cfg), data.X, data.y, tcfg, loss)
    probe = gen_dataset(replace(spec, n=cfg["experiment"]["n_test"]), "probe")
    chain = layer_mi_chain(net, probe.X, cfg["experiment"]["bins"], nested=not args.get("raw", False))
    summary = chain.summary_json(cfg["experiment"]["tolerance"])
    return EXIT_OK, {"chain.csv": chain.to_csv(), "chain_summary.json": summary + "\n",
                     "trace.csv": trace.to_csv()}, summary


def _cmd_bounds(cfg, seed, threads, args):
    doc = _read_json(args["input"])
    try:
        if isinstance(doc, list):
            text = batch_csv(doc)
            return EXIT_OK, {"bounds.csv": text}, text.rstrip("\n")
        text = evaluate(doc).to_json()
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid bound document: {exc!r}") from exc
    return EXIT_OK, {"report.json": text + "\n"}, text


def _cmd_gap(cfg, seed, threads, args):
    spec, tcfg, loss, eval_loss = _setup(cfg, seed)
    est = measure_gap(cfgmod.network(cfg), spec, tcfg, loss, cfg["experiment"]["replications"],
                      eval_loss, cfg["experiment"]["n_test"], threads=threads)
    text = json.dumps({"mean_gap": est.mean_gap, "replications": est.replications,
                       "std_error": None if math.isnan(est.std_error) else est.std_error},
                      sort_keys=True)
    return EXIT_OK, {"gap.csv": est.to_csv()}, text


def _cmd_stability(cfg, seed, threads, args):
    spec, tcfg, loss, eval_loss = _setup(cfg, seed)
    est = replace_one_stability(cfgmod.network(cfg), spec, tcfg, loss,
                                cfg["experiment"]["replications"], eval_loss, threads=threads)
    text = json.dumps({"beta_hat": est.beta_hat, "replications": est.replications,
                       "std_error": None if math.isnan(est.std_error) else est.std_error},
                      sort_keys=True)
    return EXIT_OK, {"stability.csv": est.to_csv()}, text


def _cmd_sweep(cfg, seed, threads, args):
    spec, tcfg, loss, eval_loss = _setup(cfg, seed)
    nw, ex = cfg["network"], cfg["experiment"]
    sweep = SweepConfig(spec, tcfg, loss, eval_loss, nw["architecture"], nw["activation"],
                        ex["bins"], ex["n_test"], nw["init_seed"])
    try:
        rows = depth_sweep(sweep, ex["L_values"], ex["replications"], threads)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    table = sweep_rows_table(rows)
    return EXIT_OK, {"sweep.csv": table}, "\n".join(",".join(map(str, r)) for r in table)


def _load_world(path: str) -> TinyWorld:
    try:
        return TinyWorld.from_dict(_read_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid tiny world {path}: {exc!r}") from exc


def _world_record(world: TinyWorld) -> dict:
    res = tiny_world_exact(world)
    rep = lemma4_soundness_check(world)
    return {"name": world.name, **res.to_dict(), "soundness": rep.to_dict(), "holds": rep.holds}


def _cmd_tinyworld(cfg, seed, threads, args):
    rec = _world_record(_load_world(args["world"]))
    text = json.dumps(rec, sort_keys=True)
    return (EXIT_OK if rec["holds"] else EXIT_UNSOUND), {"tinyworld.json": text + "\n"}, text


def shipped_worlds() -> list:
    """The tiny-world corpus bundled with the package, sorted by file name."""
    root = resources.files("infobound") / "worlds"
    names = sorted(p.name for p in root.iterdir() if p.name.endswith(".json"))
    return [TinyWorld.from_dict(json.loads((root / name).read_text(encoding="utf-8"))) for name in names]


def _cmd_check(cfg, seed, threads, args):
    if args.get("world_dir"):
        d = args["world_dir"]
        worlds = [_load_world(os.path.join(d, f)) for f in sorted(os.listdir(d)) if f.endswith(".json")]
    else:
        worlds = shipped_worlds() + [random_world(s) for s in range(args.get("count", 200))]
    rows, failures = [], []
    for w in worlds:
        rep = lemma4_soundness_check(w)
        rows.append([w.name, rep.gap, rep.lemma4_rhs, rep.theorem2_rhs,
                     rep.lemma4_slack, rep.theorem2_slack, int(rep.holds)])
        if not rep.holds:
            failures.append(w.name)
    slack = [min(r[4], r[5]) for r in rows]
    summary = {"worlds": len(rows), "violations": failures,
               "min_slack": min(slack) if slack else None, "max_slack": max(slack) if slack else None}
    text = json.dumps(summary, sort_keys=True)
    header = ["name", "gap", "lemma4_rhs", "theorem2_rhs", "lemma4_slack", "theorem2_slack", "holds"]
    return (EXIT_UNSOUND if failures else EXIT_OK), {"check.csv": (header, rows),
                                                      "check_summary.json": text + "\n"}, text


COMMANDS = {"train": _cmd_train, "mi-chain": _cmd_mi_chain, "bounds": _cmd_bounds, "gap": _cmd_gap,
            "stability": _cmd_stability, "sweep": _cmd_sweep, "tinyworld": _cmd_tinyworld,
            "check": _cmd_check}

# per-command arguments recorded in the manifest
_ARGS = {"mi-chain": ("raw",), "bounds": ("input",), "tinyworld": ("world",),
         "check": ("count", "world_dir")}
_INPUT_FILES = {"bounds": "input", "tinyworld": "world"}


# ----------------------------------------------------------------------------
# plumbing


def _read_json(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def _threads(value: Optional[int]) -> int:
    if value is None:
        env = os.environ.get("INFOBOUND_THREADS")
        if env is None:
            return 1
        try:
            value = int(env)
        except ValueError as exc:
            raise ConfigError(f"INFOBOUND_THREADS={env!r} is not an integer") from exc
    if value < 1:
        raise ConfigError("thread count must be at least 1")
    return value


def _write_outputs(out_dir: str, files: dict) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    hashes = {}
    for name, content in files.items():
        path = os.path.join(out_dir, name)
        if name == "sweep.csv":
            emit_plot_data(content, path)
        elif isinstance(content, tuple):
            emit_plot_data(content[1], path, content[0])
        else:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(content)
        hashes[name] = cfgmod.sha256_file(path)
    return hashes


def execute(command: str, cfg: dict, config_path: Optional[str], seed: Optional[int],
            cmd_args: dict, out_dir: Optional[str], threads: int) -> tuple:
    """Run one command; returns ``(exit_code, manifest or None, stdout text)``."""
    if command in SEEDED and seed is None:
        raise ConfigError("no seed: pass --seed or set [run] seed in the config")
    start = time.perf_counter()
    code, files, text = COMMANDS[command](cfg, seed, threads, cmd_args)
    manifest = None
    if out_dir is not None:
        inputs = {}
        if command in _INPUT_FILES:
            inputs = _read_json(cmd_args[_INPUT_FILES[command]])
        manifest = RunManifest(command, config_path, cfg, seed, __version__, dict(cmd_args),
                               input_hash=cfgmod.content_hash({"config": cfg, "seed": seed,
                                                               "args": cmd_args, "inputs": inputs}))
        manifest.outputs = _write_outputs(out_dir, files)
        manifest.duration_s = time.perf_counter() - start
        manifest.write(out_dir)
    return code, manifest, text


def _replay(path: str, out_dir: Optional[str], threads: int) -> int:
    old = RunManifest.read(path)
    if out_dir is None:
        raise ConfigError("--replay needs --out for the reproduced files")
    if old.subcommand not in COMMANDS:
        raise ConfigError(f"manifest names unknown subcommand {old.subcommand!r}")
    cfg = cfgmod.resolve(old.config)
    code, new, _ = execute(old.subcommand, cfg, old.config_path, old.seed, old.args, out_dir, threads)
    if new.input_hash != old.input_hash:
        print("replay: inputs differ from the recorded run", file=sys.stderr)
        return EXIT_RUNTIME
    bad = sorted(k for k in set(old.outputs) | set(new.outputs)
                 if old.outputs.get(k) != new.outputs.get(k))
    if bad:
        print(f"replay: outputs differ: {', '.join(bad)}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"replay: {len(new.outputs)} outputs reproduced byte-identically")
    return code


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv`` and execute; returns the process exit code."""
    parser = _parser()
    try:
        ns = parser.parse_args(argv)
    except _UsageError:
        return EXIT_CONFIG
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    args = vars(ns)
    try:
        threads = _threads(args.get("threads"))
        if args.get("replay"):
            if args.get("command"):
                raise ConfigError("--replay takes no subcommand")
            return _replay(args["replay"], args.get("out"), threads)
        command = args.get("command")
        if command is None:
            parser.print_usage(sys.stderr)
            print("infobound: error: a subcommand is required", file=sys.stderr)
            return EXIT_CONFIG
        cfg = cfgmod.load_config(args.get("config"))
        seed = args.get("seed")
        if seed is None:
            seed = cfg["run"]["seed"]
        cfg["run"]["seed"] = seed
        cmd_args = {k: args[k] for k in _ARGS.get(command, ()) if k in args}
        code, _, text = execute(command, cfg, args.get("config"), seed, cmd_args,
                                args.get("out"), threads)
        print(text)
        return code
    except ConfigError as exc:
        print(f"infobound: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        print(f"infobound: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
