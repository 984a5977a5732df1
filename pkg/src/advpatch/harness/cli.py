"""Command-line entry point.

    advpatch <command> --config <file> [--seed N] [--out DIR] [switches]

Commands: gen-scenes, train-victims, attack, evaluate, placement-sweep,
approach-sim, ablation. Exit codes: 0 success, 2 configuration or input
problem, 3 quality gate failure. Each command writes under --out
(default: <out_dir>/<command> from the config) and holds a lockfile
there while running; gen-scenes instead builds the dataset directory
atomically via a temporary sibling.
"""

import argparse
import contextlib
import json
import os
import sys
from pathlib import Path

from ..attack import AttackError
from ..dpm import DpmError
from ..losses import LossError
from ..metrics import MetricsError
from ..scenegen import SceneError
from ..victims import VictimError
from . import runs
from .config import ConfigError, GateFailure, load_config
from .schema import SchemaError

_SWITCHES = ("no-ld", "no-lua", "no-lta", "no-ltv", "no-lc",
             "no-at", "no-af", "no-dpm", "fixed-offset")

_INPUT_ERRORS = (ConfigError, SceneError, VictimError, AttackError,
                 MetricsError, DpmError, LossError, SchemaError, OSError)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advpatch",
        description="Road-scene synthesis, toy victims, and ground-plane "
                    "adversarial patch experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True,
                       help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None,
                       help="output directory (default <out_dir>/<command>)")
        return p

    add("gen-scenes", "render the dataset and its split manifest")
    tv = add("train-victims", "train both victims and report their gates")
    tv.add_argument("--force", action="store_true",
                    help="overwrite existing checkpoints")
    atk = add("attack", "optimize a patch texture against the victims")
    for switch in _SWITCHES:
        atk.add_argument(f"--{switch}", dest=switch.replace("-", "_"),
                         action="store_true",
                         help=f"ablation switch {switch}")
    add("evaluate", "score a patch or baseline over the test split")
    add("placement-sweep", "metric grid over fixed placements plus heatmaps")
    add("approach-sim", "per-frame metrics while the camera approaches")
    add("ablation", "retrain every variant and tabulate paired metrics")
    return parser


@contextlib.contextmanager
def _locked(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    while True:
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            break
        except FileExistsError:
            try:
                pid = int(lock.read_text().strip() or "0")
            except (OSError, ValueError):
                pid = 0
            if pid and _alive(pid):
                raise ConfigError(
                    f"{out} is locked by running process {pid}") from None
            lock.unlink(missing_ok=True)   # stale lock from a dead run
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


def _alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    seed = args.seed if args.seed is not None else cfg.seed
    command = args.command
    out = Path(args.out) if args.out else cfg.out_dir / command.replace("-", "_")

    try:
        if command == "gen-scenes":
            target = Path(args.out) if args.out else cfg.path("dataset")
            manifest = runs.run_gen_scenes(cfg, target, seed)
            print(f"gen-scenes: {manifest['count']} scenes -> {target}")
            splits = manifest["splits"]
            print("split sizes: "
                  + "/".join(str(len(splits[k])) for k in ("train", "val", "test")))
        elif command == "train-victims":
            target = Path(args.out) if args.out else cfg.path("victims")
            with _locked(target):
                report = runs.run_train_victims(cfg, target, seed,
                                                force=args.force)
            print(f"train-victims: mde rel_err {report['mde']['rel_err']:.4f}"
                  f" (gate {report['mde']['gate']}), ss road IoU "
                  f"{report['ss']['road_iou']:.4f} (gate {report['ss']['gate']})")
        elif command == "attack":
            switches = {name.replace("-", "_") for name in _SWITCHES
                        if getattr(args, name.replace("-", "_"))}
            target = Path(args.out) if args.out else cfg.path("patch")
            with _locked(target):
                artifact = runs.run_attack(cfg, target, seed, switches)
            first, last = artifact.curve[0]["total"], artifact.curve[-1]["total"]
            print(f"attack: total loss {first:.4f} -> {last:.4f} "
                  f"over {len(artifact.curve)} epochs -> {target}")
        elif command == "evaluate":
            with _locked(out):
                envelope = runs.run_evaluate(cfg, out, seed)
            agg = envelope["aggregate"]
            print("evaluate: " + "  ".join(
                f"{k}={agg[k]:.4f}" if agg[k] is not None else f"{k}=n/a"
                for k in ("rel_ed", "ra_ed", "asr_ua", "asr_ta")))
        elif command == "placement-sweep":
            with _locked(out):
                report = runs.run_sweep(cfg, out, seed)
            print(f"placement-sweep: {report['cells']} cells, monotone "
                  f"rel_ed trend: {report['rel_ed_monotone_decreasing_with_distance']}")
        elif command == "approach-sim":
            with _locked(out):
                report = runs.run_approach(cfg, out, seed)
            onset = report["onset_distance"]
            print(f"approach-sim: {report['frames']} frames, onset "
                  f"{'none' if onset is None else f'{onset:g} m'}, "
                  f"closest asr_ua {report['closest_asr_ua']:.4f}")
        elif command == "ablation":
            with _locked(out):
                report = runs.run_ablation(cfg, out, seed)
            print(f"ablation: {len(report['variants'])} variants, largest "
                  f"asr_ua drop: {report['largest_asr_ua_drop']}")
        else:   # pragma: no cover - argparse rejects unknown commands
            raise ConfigError(f"unknown command {command}")
    except GateFailure as exc:
        print(f"gate failure: {exc}", file=sys.stderr)
        return 3
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
