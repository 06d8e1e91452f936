"""Command-line entry point: generate / train / eval / solve.

Option values resolve as defaults < config file < explicit flags, and every
command echoes its fully resolved configuration to ``<out>.cfg`` so any run
can be reproduced exactly. Exit codes: 0 success, 1 usage or validation,
2 I/O or malformed files, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, replace

from . import rng as rngmod
from .core import (knn_sparsify, read_coordinate_lines, read_dataset, write_dataset,
                   write_heatmap)
from .errors import (CapacityError, CheckpointFormatError, DatasetParseError,
                     InvalidArgumentError, UndefinedMetricError)
from .metrics import evaluate, optimal_gap, write_report
from .model import Model, ModelConfig
from .oracle import DatasetSpec, build_dataset, held_karp, heuristic_oracle
from .search import SearchConfig, solve
from .train import NumericError, TrainSettings, fit, write_loss_log


def _env_threads() -> int:
    try:
        return max(1, int(os.environ.get("EDGEGAE_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class Opt:
    dest: str
    type: type = str
    default: object = None
    required: bool = False
    choices: tuple = ()
    help: str = ""

    @property
    def flag(self) -> str:
        return "--" + self.dest.replace("_", "-")


_THREADS_OPT = Opt("threads", int, help="worker threads (default: EDGEGAE_THREADS or 1)")

OPTIONS: dict[str, list[Opt]] = {
    "generate": [
        Opt("n_min", int, required=True, help="smallest instance size"),
        Opt("n_max", int, required=True, help="largest instance size"),
        Opt("total", int, required=True, help="total instance count"),
        Opt("seed", int, required=True, help="master seed"),
        Opt("oracle", str, "auto", choices=("exact", "heuristic", "auto"),
            help="labeling oracle"),
        Opt("exact_cutoff", int, 18, help="largest size the exact oracle accepts"),
        Opt("restarts", int, 50, help="heuristic oracle restarts"),
        Opt("out", str, required=True, help="output dataset file"),
        _THREADS_OPT,
    ],
    "train": [
        Opt("data", str, required=True, help="training dataset file"),
        Opt("epochs", int, 500, help="training epochs"),
        Opt("batch", int, 32, help="batch size"),
        Opt("lr", float, 0.001, help="Adam learning rate"),
        Opt("hidden", int, 64, help="hidden dimension"),
        Opt("layers", int, 4, help="encoder layers"),
        Opt("knn", int, 25, help="sparsification degree"),
        Opt("sampling", str, "shuffle", choices=("shuffle", "active"), help="batch sampling mode"),
        Opt("pos_weight", float, 1.0, help="positive-class weight in the loss"),
        Opt("seed", int, 0, help="master seed"),
        Opt("resume", str, help="checkpoint to resume from"),
        Opt("ckpt_every", int, 0, help="save a checkpoint every N epochs (0: final only)"),
        Opt("log", str, help="loss log path (default: <out>.loss.csv)"),
        Opt("out", str, required=True, help="final checkpoint path"),
        _THREADS_OPT,
    ],
    "eval": [
        Opt("ckpt", str, required=True, help="model checkpoint"),
        Opt("data", str, required=True, help="labeled test dataset"),
        Opt("samples", int, 200, help="roulette sample count"),
        Opt("strategy", str, "roulette", choices=("roulette", "beam"), help="search strategy"),
        Opt("beam_width", int, 5, help="beam width"),
        Opt("two_opt", str, "on", choices=("on", "off"), help="2-opt refinement"),
        Opt("knn", int, help="must match the checkpoint's k when given"),
        Opt("seed", int, 0, help="search seed"),
        Opt("dump_heatmaps", str, help="directory for per-instance heatmap files"),
        Opt("out", str, required=True, help="report CSV path"),
        _THREADS_OPT,
    ],
    "solve": [
        Opt("ckpt", str, required=True, help="model checkpoint"),
        Opt("input", str, required=True, help="coordinates-only instance file"),
        Opt("samples", int, 200, help="roulette sample count"),
        Opt("strategy", str, "roulette", choices=("roulette", "beam"), help="search strategy"),
        Opt("beam_width", int, 5, help="beam width"),
        Opt("two_opt", str, "on", choices=("on", "off"), help="2-opt refinement"),
        Opt("seed", int, 0, help="search seed"),
        Opt("oracle", str, "off", choices=("on", "off"), help="also report the optimal gap"),
        Opt("exact_cutoff", int, 18, help="largest size the exact oracle accepts"),
        Opt("restarts", int, 50, help="heuristic oracle restarts for large instances"),
        Opt("out", str, required=True, help="solution file path"),
        _THREADS_OPT,
    ],
}


class _Parser(argparse.ArgumentParser):
    # usage and validation problems exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> _Parser:
    parser = _Parser(prog="edgegae", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for command, opts in OPTIONS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=None, help="key = value config file")
        for opt in opts:
            kwargs = {"dest": opt.dest, "type": opt.type, "default": None, "help": opt.help}
            if opt.choices:
                kwargs["choices"] = opt.choices
            p.add_argument(opt.flag, **kwargs)
    return parser


def parse_config_file(path) -> dict[str, str]:
    values = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidArgumentError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def resolve_options(command: str, args) -> dict:
    """defaults < config file < flags, with required keys enforced."""
    opts = {o.dest: o for o in OPTIONS[command]}
    file_values = parse_config_file(args.config) if args.config else {}
    unknown = set(file_values) - set(opts)
    if unknown:
        raise InvalidArgumentError(f"unknown config keys for {command}: {sorted(unknown)}")
    resolved = {}
    for dest, opt in opts.items():
        value = getattr(args, dest)
        if value is None and dest in file_values:
            try:
                value = opt.type(file_values[dest])
            except ValueError:
                raise InvalidArgumentError(
                    f"config key {dest} = {file_values[dest]!r} is not a valid {opt.type.__name__}") from None
            if opt.choices and value not in opt.choices:
                raise InvalidArgumentError(f"config key {dest} must be one of {opt.choices}")
        if value is None:
            value = opt.default
        if value is None and opt.required:
            raise InvalidArgumentError(f"missing required option {opt.flag}")
        resolved[dest] = value
    if resolved.get("threads") is None:
        resolved["threads"] = _env_threads()
    return resolved


def echo_config(command: str, resolved: dict, out_path) -> None:
    with open(f"{out_path}.cfg", "w", encoding="ascii") as fh:
        fh.write(f"# command: {command}\n")
        for opt in OPTIONS[command]:
            value = resolved[opt.dest]
            if value is not None:
                fh.write(f"{opt.dest} = {value}\n")


def cmd_generate(args) -> int:
    cfg = resolve_options("generate", args)
    spec = DatasetSpec(n_min=cfg["n_min"], n_max=cfg["n_max"], total=cfg["total"],
                       seed=cfg["seed"], oracle_mode=cfg["oracle"],
                       exact_cutoff=cfg["exact_cutoff"], restarts=cfg["restarts"])
    echo_config("generate", cfg, cfg["out"])
    instances = build_dataset(spec, threads=cfg["threads"])
    write_dataset(instances, cfg["out"])
    print(f"wrote {len(instances)} instances to {cfg['out']}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_options("train", args)
    instances = read_dataset(cfg["data"])
    echo_config("train", cfg, cfg["out"])
    if cfg["resume"]:
        model, epochs_done = Model.load(cfg["resume"])
        config = model.config
        settings = TrainSettings(epochs=cfg["epochs"], batch_size=cfg["batch"], lr=model.lr,
                                 sampling=cfg["sampling"], seed=model.seed,
                                 pos_weight=model.pos_weight)
    else:
        model, epochs_done = None, 0
        config = ModelConfig(L=cfg["layers"], H=cfg["hidden"], k=cfg["knn"])
        settings = TrainSettings(epochs=cfg["epochs"], batch_size=cfg["batch"], lr=cfg["lr"],
                                 sampling=cfg["sampling"], seed=cfg["seed"],
                                 pos_weight=cfg["pos_weight"])
    model, loss_log = fit(instances, config, settings, resume_from=model,
                          start_epoch=epochs_done, checkpoint_every=cfg["ckpt_every"],
                          checkpoint_path=cfg["out"])
    model.save(cfg["out"], epochs_done=settings.epochs)
    meta = {"sampling": settings.sampling, "epochs": settings.epochs,
            "batch": settings.batch_size, "lr": settings.lr, "seed": settings.seed,
            "pos_weight": settings.pos_weight, "data": cfg["data"]}
    write_loss_log(cfg["log"] or f"{cfg['out']}.loss.csv", loss_log, meta)
    if loss_log:
        print(f"final epoch mean loss {loss_log[-1][1]:.6f}; checkpoint at {cfg['out']}")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_options("eval", args)
    model, _ = Model.load(cfg["ckpt"])
    instances = read_dataset(cfg["data"])
    echo_config("eval", cfg, cfg["out"])
    search = SearchConfig(strategy=cfg["strategy"], samples=cfg["samples"],
                          beam_width=cfg["beam_width"], two_opt=cfg["two_opt"] == "on",
                          rng_seed=cfg["seed"])
    report = evaluate(model, instances, search, threads=cfg["threads"], graph_k=cfg["knn"])
    if cfg["dump_heatmaps"]:
        os.makedirs(cfg["dump_heatmaps"], exist_ok=True)
        for inst in instances:
            heatmap = model.predict_heatmap(knn_sparsify(inst, model.config.k))
            write_heatmap(heatmap, os.path.join(cfg["dump_heatmaps"], f"{inst.id}.heatmap"))
    write_report(report, cfg["out"])
    print(f"evaluated {len(report.records)} instances: "
          f"mean auc {report.overall['auc_mean']:.4f}, "
          f"mean gap {report.overall['gap_percent_mean']:.4f}%")
    return 0


def cmd_solve(args) -> int:
    cfg = resolve_options("solve", args)
    model, _ = Model.load(cfg["ckpt"])
    instances = read_coordinate_lines(cfg["input"])
    echo_config("solve", cfg, cfg["out"])
    base = SearchConfig(strategy=cfg["strategy"], samples=cfg["samples"],
                        beam_width=cfg["beam_width"], two_opt=cfg["two_opt"] == "on",
                        rng_seed=cfg["seed"])
    lines = []
    for idx, inst in enumerate(instances):
        heatmap = model.predict_heatmap(knn_sparsify(inst, model.config.k))
        search = replace(base, rng_seed=rngmod.derive_seed(base.rng_seed, rngmod.SALT_SAMPLE, idx))
        tour, _ = solve(inst, heatmap, search, threads=cfg["threads"])
        if cfg["oracle"] == "on":
            if inst.n <= cfg["exact_cutoff"]:
                ref = held_karp(inst, exact_cutoff=cfg["exact_cutoff"])
                gap = repr(optimal_gap(tour.length, ref.length))
            else:
                ref = heuristic_oracle(inst, restarts=cfg["restarts"],
                                       rng_seed=rngmod.derive_seed(cfg["seed"], rngmod.SALT_ORACLE, idx))
                gap = "~" + repr(optimal_gap(tour.length, ref.length))
        else:
            gap = "NA"
        order = " ".join(str(i) for i in tour.order.tolist())
        lines.append(f"{inst.id} {tour.length!r} {gap} {order}\n")
    with open(cfg["out"], "w", encoding="ascii") as fh:
        fh.writelines(lines)
    print(f"solved {len(instances)} instance(s), solutions in {cfg['out']}")
    return 0


_COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "solve": cmd_solve}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (InvalidArgumentError, CapacityError, UndefinedMetricError) as exc:
        print(f"edgegae {args.command}: {exc}", file=sys.stderr)
        return 1
    except (DatasetParseError, CheckpointFormatError) as exc:
        print(f"edgegae {args.command}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"edgegae {args.command}: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"edgegae {args.command}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
