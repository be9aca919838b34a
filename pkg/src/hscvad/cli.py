"""Command-line interface: ``hscvad {gen,train,augment,eval,inspect}``.

Configuration comes from an optional INI file (sections ``scenario``,
``train``, ``augment``, ``eval``, ``paths``) overridden by ``--set
section.key=value`` pairs and by the dedicated flags. Every invocation writes
its artifacts and a ``manifest.json`` into one run directory, by default
``<runs-root>/<timestamp>-<config hash>``.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import hashlib
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .data import load_dataset
from .errors import CheckpointError, DatasetError, HscError, TrainingError, UsageError
from .evaluate import micro_auc, write_roc_csv, write_scores_csv
from .model import STREAMS, classify_scene, encode
from .pipeline import STAGE2_MODES, evaluate, fit, label_scenes_with, load_state, refine, save_state
from .skeleton import AugmentConfig, write_replay_log
from .synthetic import ScenarioConfig, write_benchmark
from .training import TrainConfig, build_training_set

log = logging.getLogger("hscvad")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_DATA = 4

SECTIONS = ("scenario", "train", "augment", "eval", "paths")

EVAL_DEFAULTS = {"sigma": 2.0, "memory_size": None, "memory_seed": 0, "normalize": False, "mode": "ma-+", "copies": 1}
PATH_KEYS = ("train", "test", "checkpoint", "data_dir")


class CliError(Exception):
    def __init__(self, code: str, message: str, exit_code: int):
        super().__init__(message)
        self.code = code
        self.exit_code = exit_code


# --- configuration ------------------------------------------------------------


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def coerce(text: str, default):
    """Convert a config string to the type of ``default``."""
    text = text.strip()
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        parts = [p for p in text.strip("()[] ").split(",") if p.strip()]
        kind = type(default[0]) if default else float
        return tuple(kind(p) for p in parts)
    if isinstance(default, (dict, list)):
        return json.loads(text)
    if default is None:
        if text.lower() in ("", "none", "null"):
            return None
        try:
            return json.loads(text)
        except json.JSONDecodeError:
            return text
    return text


def _section_defaults() -> dict:
    return {
        "scenario": ScenarioConfig().to_dict(),
        "train": TrainConfig().to_dict(),
        "augment": dataclasses.asdict(AugmentConfig()),
        "eval": dict(EVAL_DEFAULTS),
        "paths": {k: None for k in PATH_KEYS},
    }


def _json_ready(v):
    if isinstance(v, tuple):
        return [_json_ready(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _json_ready(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_json_ready(x) for x in v]
    return v


def _coerce_against(section: str, key: str, text: str, defaults: dict):
    if key not in defaults[section]:
        raise CliError("config", f"unknown key {key!r} in section [{section}]", EXIT_CONFIG)
    default = defaults[section][key]
    try:
        return coerce(text, default)
    except (ValueError, json.JSONDecodeError) as exc:
        raise CliError("config", f"[{section}] {key}: {exc}", EXIT_CONFIG) from None


def build_config(config_file: str | None, overrides: list[str]) -> dict:
    """Merge defaults, the INI file and ``section.key=value`` overrides."""
    defaults = _section_defaults()
    merged = {s: dict(v) for s, v in defaults.items()}
    if config_file:
        path = Path(config_file)
        if not path.is_file():
            raise CliError("missing_input", f"missing config file: {path}", EXIT_MISSING)
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise CliError("config", f"cannot parse {path}: {exc}", EXIT_CONFIG) from None
        for section in parser.sections():
            if section not in SECTIONS:
                raise CliError("config", f"unknown config section [{section}]", EXIT_CONFIG)
            for key, text in parser.items(section):
                merged[section][key] = _coerce_against(section, key, text, defaults)
    for item in overrides:
        name, sep, text = item.partition("=")
        section, dot, key = name.partition(".")
        if not sep or not dot or section not in SECTIONS:
            raise CliError("config", f"override must look like section.key=value, got {item!r}", EXIT_CONFIG)
        merged[section][key] = _coerce_against(section, key, text, defaults)
    return _json_ready(merged)


def config_hash(command: str, config: dict) -> str:
    blob = json.dumps({"command": command, "config": config}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def scenario_config(cfg: dict) -> ScenarioConfig:
    return _build(ScenarioConfig, cfg["scenario"], "scenario")


def train_config(cfg: dict) -> TrainConfig:
    return _build(TrainConfig, cfg["train"], "train")


def augment_config(cfg: dict) -> AugmentConfig:
    return _build(AugmentConfig, {k: tuple(v) if isinstance(v, list) else v for k, v in cfg["augment"].items()}, "augment")


def _build(cls, values, section):
    try:
        obj = cls(**values)
        if hasattr(obj, "validate"):
            obj.validate()
        return obj
    except (TypeError, ValueError) as exc:
        raise CliError("config", f"invalid [{section}] configuration: {exc}", EXIT_CONFIG) from None


# --- run directory and manifest ---------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def make_run_dir(runs_root: str, run_dir: str | None, digest: str) -> Path:
    if run_dir:
        out = Path(run_dir)
        out.mkdir(parents=True, exist_ok=True)
        return out
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = Path(runs_root) / f"{stamp}-{digest}"
    out, n = base, 1
    while out.exists():
        out = base.with_name(f"{base.name}-{n}")
        n += 1
    out.mkdir(parents=True)
    return out


def versions() -> dict:
    return {"hscvad": __version__, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


class Run:
    """Collects inputs/outputs/results and writes the manifest."""

    def __init__(self, command: str, argv: list[str], config: dict, out_dir: Path):
        self.command = command
        self.argv = argv
        self.config = config
        self.dir = out_dir
        self.inputs: dict = {}
        self.outputs: dict = {}
        self.result: dict = {}
        self.started = time.time()

    def input(self, name: str, path) -> Path:
        p = Path(path)
        self.inputs[name] = {"path": str(p), "sha256": sha256_file(p)}
        return p

    def output(self, name: str, path) -> None:
        self.outputs[name] = {"path": str(path), "sha256": sha256_file(path)}

    def manifest(self) -> dict:
        return {
            "command": self.command,
            "argv": self.argv,
            "config": self.config,
            "config_hash": config_hash(self.command, self.config),
            "seed": {
                "scenario": self.config["scenario"]["seed"],
                "train": self.config["train"]["seed"],
                "augment": self.config["augment"]["seed"],
            },
            "versions": versions(),
            "inputs": self.inputs,
            "outputs": self.outputs,
            "result": self.result,
            "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(self.started)),
            "elapsed_s": round(time.time() - self.started, 3),
        }

    def write_manifest(self) -> Path:
        path = self.dir / "manifest.json"
        path.write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _need(cfg: dict, key: str, what: str, code: str = "missing_input") -> Path:
    value = cfg["paths"].get(key)
    if value is None and key in ("train", "test") and cfg["paths"].get("data_dir"):
        value = str(Path(cfg["paths"]["data_dir"]) / f"{key}.jsonl")
    if value is None:
        raise CliError(code, f"{what}: no path given (use --{key})", EXIT_MISSING)
    path = Path(value)
    if not path.is_file():
        raise CliError(code, f"{what}: {path}", EXIT_MISSING)
    return path


# --- subcommands -------------------------------------------------------------------


def cmd_gen(run: Run, cfg: dict) -> None:
    scen = scenario_config(cfg)
    paths = write_benchmark(run.dir, scen)
    for name, path in paths.items():
        run.output(name, path)
    run.result = {"files": paths}
    print(f"wrote {paths['train']} and {paths['test']}")


def _load(run: Run, cfg: dict, split: str):
    path = run.input(split, _need(cfg, split, f"missing {split} dataset"))
    ds = load_dataset(path)
    if ds.split != split:
        log.warning("%s has split %r, used as %s", path, ds.split, split)
    return ds


def _load_checkpoint(run: Run, cfg: dict):
    path = _need(cfg, "checkpoint", "missing checkpoint", code="missing_checkpoint")
    run.input("checkpoint", path)
    return load_state(path)


def cmd_train(run: Run, cfg: dict) -> None:
    train = _load(run, cfg, "train")
    state = fit(train, train_config(cfg))
    out = run.dir / "model.ckpt"
    save_state(state, out)
    run.output("checkpoint", out)
    last = state.history[-1] if state.history else {}
    run.result = {"epochs": len(state.history), "final_loss": last.get("total"), "num_scenes": state.clustering.num_clusters}
    print(f"trained {len(state.history)} epochs, {state.clustering.num_clusters} scenes; checkpoint {out}")


def cmd_augment(run: Run, cfg: dict) -> None:
    mode = cfg["eval"]["mode"]
    if mode not in STAGE2_MODES:
        raise CliError("config", f"stage-2 mode must be one of {STAGE2_MODES}, got {mode!r}", EXIT_CONFIG)
    train = _load(run, cfg, "train")
    state = _load_checkpoint(run, cfg)
    info = refine(state, train, mode, augment_config(cfg), copies=int(cfg["eval"]["copies"]))
    out = run.dir / "model_refined.ckpt"
    save_state(state, out)
    run.output("checkpoint", out)
    if state.replay and mode != "off":
        replay = run.dir / "augment_replay.jsonl"
        write_replay_log(replay, state.replay)
        run.output("replay", replay)
    run.result = {k: v for k, v in info.items() if k != "history"}
    print(f"stage 2 ({mode}): " + ", ".join(f"{k}={v}" for k, v in sorted(run.result.items()) if k != "mode"))


def _eval_kwargs(cfg: dict) -> dict:
    e = cfg["eval"]
    return {"sigma_clips": float(e["sigma"]), "normalize": bool(e["normalize"])}


def cmd_eval(run: Run, cfg: dict) -> None:
    state = _load_checkpoint(run, cfg)
    test = _load(run, cfg, "test")
    e = cfg["eval"]
    res = evaluate(state, test, memory_size=e["memory_size"], memory_seed=int(e["memory_seed"]), **_eval_kwargs(cfg))
    scores = run.dir / "scores.csv"
    roc = run.dir / "roc.csv"
    write_scores_csv(scores, res.series)
    write_roc_csv(roc, res.series.smoothed, res.series.labels)
    run.output("scores", scores)
    run.output("roc", roc)
    run.result = {"auc": res.auc, "auc_raw": res.auc_raw}
    (run.dir / "metrics.json").write_text(json.dumps(run.result, indent=2) + "\n")
    print(f"AUC {res.auc:.4f} (unsmoothed {res.auc_raw:.4f})")


def scene_confusion(state, dataset) -> dict:
    """Per stream, counts[true pseudo scene, LC prediction] over ``dataset``."""
    labelled, clustering, feats = label_scenes_with(state, dataset)
    tset = build_training_set(labelled, feats, clustering.num_clusters, state.class_names)
    k = clustering.num_clusters
    out = {}
    for s in STREAMS:
        d = tset.streams[s]
        counts = np.zeros((k, k), dtype=np.int64)
        if len(d):
            pred = np.argmax(classify_scene(state.model, s, encode(state.model, s, d.scene, d.targets)), axis=1)
            np.add.at(counts, (d.scene_labels, pred), 1)
        out[s] = counts
    return out


def _write_confusion(path, counts) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scene"] + [f"pred_{j}" for j in range(counts.shape[1])])
        for i, row in enumerate(counts):
            w.writerow([i] + [int(v) for v in row])


def _write_bank(path, bank) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "sample", "scene", "class"] + [f"z{j}" for j in range(bank.rows.shape[1])])
        for i, row in enumerate(bank.rows):
            w.writerow([i, int(bank.sample_ids[i]), int(bank.scene_labels[i]), int(bank.class_labels[i])] + [repr(float(v)) for v in row])


def cmd_inspect(run: Run, cfg: dict, sweep: list[int], sweep_seeds: int) -> None:
    state = _load_checkpoint(run, cfg)
    test = _load(run, cfg, "test")
    result: dict = {}
    for s, counts in scene_confusion(state, test).items():
        path = run.dir / f"confusion_{s}.csv"
        _write_confusion(path, counts)
        run.output(f"confusion_{s}", path)
        total = counts.sum()
        result[f"scene_accuracy_{s}"] = float(np.trace(counts) / total) if total else None
    for s, bank in state.banks.items():
        path = run.dir / f"bank_{s}.csv"
        _write_bank(path, bank)
        run.output(f"bank_{s}", path)
    kw = _eval_kwargs(cfg)
    labels_ok = any(c.anomaly_label for c in test.clips) and not all(c.anomaly_label for c in test.clips)
    if labels_ok:
        full = evaluate(state, test, **kw).auc
        result["auc_full"] = full
        print(f"full-bank AUC {full:.4f}")
        size = cfg["eval"]["memory_size"]
        if size is not None:
            sub = evaluate(state, test, memory_size=int(size), memory_seed=int(cfg["eval"]["memory_seed"]), **kw).auc
            result["auc_subsample"] = sub
            print(f"memory {size} (seed {cfg['eval']['memory_seed']}): AUC {sub:.4f} (change {sub - full:+.4f})")
        if sweep:
            path = run.dir / "memory_sweep.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["memory_size", "seed", "auc", "delta"])
                for m in sweep:
                    aucs = []
                    for seed in range(sweep_seeds):
                        a = evaluate(state, test, memory_size=m, memory_seed=seed, **kw).auc
                        aucs.append(a)
                        w.writerow([m, seed, repr(a), repr(a - full)])
                    print(f"memory {m}: median AUC {np.median(aucs):.4f} over {sweep_seeds} seeds")
            run.output("memory_sweep", path)
    else:
        print("test labels are single-class; skipping AUC")
    for s in STREAMS:
        acc = result.get(f"scene_accuracy_{s}")
        if acc is not None:
            print(f"{s} scene-classifier accuracy {acc:.4f}")
    run.result = result


# --- entry point ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override one config value (repeatable)")
    common.add_argument("--seed", type=int, help="seed for generation, training and augmentation")
    common.add_argument("--runs-root", default="runs", help="parent of auto-named run directories (default: runs)")
    common.add_argument("--run-dir", help="exact output directory for this run")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    for key in PATH_KEYS:
        common.add_argument(f"--{key.replace('_', '-')}", dest=f"path_{key}", help=f"{key.replace('_', ' ')} path")

    parser = argparse.ArgumentParser(prog="hscvad", description="Scene-aware video anomaly detection on object-level features.")
    parser.add_argument("--version", action="version", version=f"hscvad {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.add_parser("gen", parents=[common], help="generate the synthetic multi-scene benchmark")
    sub.add_parser("train", parents=[common], help="stage-1 training on a training split")
    p_aug = sub.add_parser("augment", parents=[common], help="motion augmentation and stage-2 binary classifier")
    p_aug.add_argument("--mode", choices=STAGE2_MODES, help="stage-2 mode (default ma-+)")
    p_aug.add_argument("--copies", type=int, help="augmented copies per tracklet and range")
    p_eval = sub.add_parser("eval", parents=[common], help="score a test split and report micro-AUC")
    p_ins = sub.add_parser("inspect", parents=[common], help="scene confusion, bank export, memory-size study")
    for p in (p_eval, p_ins):
        p.add_argument("--sigma", type=float, help="smoothing sigma in clips (default 2)")
        p.add_argument("--memory-size", type=int, help="keep this many random bank entries")
        p.add_argument("--memory-seed", type=int, help="seed of the bank subsample")
        p.add_argument("--normalize", action="store_true", default=None, help="min-max normalize each stream score")
    p_ins.add_argument("--sweep", default="", help="comma-separated memory sizes for a subsample AUC sweep")
    p_ins.add_argument("--sweep-seeds", type=int, default=5, help="subsample seeds per sweep size")
    return parser


def _apply_flags(cfg: dict, args) -> dict:
    for key in PATH_KEYS:
        value = getattr(args, f"path_{key}", None)
        if value is not None:
            cfg["paths"][key] = value
    if args.seed is not None:
        for section in ("scenario", "train", "augment"):
            cfg[section]["seed"] = args.seed
    for flag, key in (("mode", "mode"), ("copies", "copies"), ("sigma", "sigma"), ("memory_size", "memory_size"), ("memory_seed", "memory_seed"), ("normalize", "normalize")):
        value = getattr(args, flag, None)
        if value is not None:
            cfg["eval"][key] = value
    return cfg


def _parse_sweep(text: str) -> list[int]:
    try:
        sizes = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise CliError("config", f"--sweep needs comma-separated integers, got {text!r}", EXIT_CONFIG) from None
    if any(m < 1 for m in sizes):
        raise CliError("config", "memory sizes must be >= 1", EXIT_CONFIG)
    return sizes


def _fail(err: CliError) -> int:
    print(json.dumps({"error": err.code, "message": str(err)}), file=sys.stderr)
    return err.exit_code


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not args.command:
        parser.print_usage(sys.stderr)
        return _fail(CliError("usage", "a command is required: gen, train, augment, eval or inspect", EXIT_CONFIG))
    try:
        cfg = _apply_flags(build_config(args.config, args.overrides), args)
        sweep = _parse_sweep(args.sweep) if args.command == "inspect" else []
        # validate configuration and referenced paths before creating anything
        scenario_config(cfg), train_config(cfg), augment_config(cfg)
        if args.command in ("train", "augment"):
            _need(cfg, "train", "missing train dataset")
        if args.command in ("augment", "eval", "inspect"):
            _need(cfg, "checkpoint", "missing checkpoint", code="missing_checkpoint")
        if args.command in ("eval", "inspect"):
            _need(cfg, "test", "missing test dataset")
        run = Run(args.command, argv, cfg, make_run_dir(args.runs_root, args.run_dir, config_hash(args.command, cfg)))
        if args.verbose:
            logging.basicConfig(level=logging.INFO, format="%(message)s")
        handler = logging.FileHandler(run.dir / "log.jsonl", mode="w", encoding="utf-8")
        handler.setFormatter(logging.Formatter("%(message)s"))
        logging.getLogger("hscvad").addHandler(handler)
        logging.getLogger("hscvad").setLevel(logging.INFO)
        try:
            if args.command == "gen":
                cmd_gen(run, cfg)
            elif args.command == "train":
                cmd_train(run, cfg)
            elif args.command == "augment":
                cmd_augment(run, cfg)
            elif args.command == "eval":
                cmd_eval(run, cfg)
            else:
                cmd_inspect(run, cfg, sweep, args.sweep_seeds)
        finally:
            logging.getLogger("hscvad").removeHandler(handler)
            handler.close()
        run.write_manifest()
        print(f"run directory: {run.dir}")
        return EXIT_OK
    except CliError as err:
        return _fail(err)
    except CheckpointError as exc:
        return _fail(CliError("checkpoint", str(exc), EXIT_DATA))
    except DatasetError as exc:
        return _fail(CliError("dataset", str(exc), EXIT_DATA))
    except (TrainingError, UsageError) as exc:
        return _fail(CliError("training", str(exc), EXIT_FAILURE))
    except HscError as exc:
        return _fail(CliError("error", str(exc), EXIT_FAILURE))
    except ValueError as exc:
        return _fail(CliError("value", str(exc), EXIT_FAILURE))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
