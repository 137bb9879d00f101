"""Command-line surface: train, eval, bench, plot, pca-fit, mnist-translate.

Configs are JSON documents mirroring RunConfig field for field; repeated
``--set KEY=VALUE`` overrides apply after the file parse.  Exit codes:
0 success, 2 config error, 3 divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4

_PAPER_SCALE = {"steps": 100000, "hidden_layers": 5, "hidden_width": 128}


class CliError(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


def _field_types():
    from .trainer import RunConfig
    return {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, value: str):
    types = _field_types()
    if name not in types:
        from .trainer import RunConfig
        raise CliError(f"unknown config key {name!r}; valid keys: "
                       f"{sorted(RunConfig.field_names())}", EXIT_CONFIG)
    t = str(types[name])
    try:
        if "int" in t:
            return int(value)
        if "float" in t:
            return float(value)
        return value
    except ValueError as e:
        raise CliError(f"cannot parse --set {name}={value!r}: {e}", EXIT_CONFIG)


def _load_config(args) -> "RunConfig":
    from .trainer import ConfigError, RunConfig
    d = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise CliError(f"config file not found: {path}", EXIT_IO)
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise CliError(f"malformed config JSON at line {e.lineno} "
                           f"column {e.colno}: {e.msg}", EXIT_CONFIG)
    if getattr(args, "paper_scale", False):
        d.update(_PAPER_SCALE)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise CliError(f"--set expects KEY=VALUE, got {item!r}", EXIT_CONFIG)
        key, value = item.split("=", 1)
        d[key] = _coerce(key, value)
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    try:
        return RunConfig.from_dict(d)
    except ConfigError as e:
        raise CliError(str(e), EXIT_CONFIG)


def cmd_train(args) -> int:
    from .trainer import ConfigError, train
    cfg = _load_config(args)
    try:
        report = train(cfg, args.out)
    except ConfigError as e:
        raise CliError(str(e), EXIT_CONFIG)
    except OSError as e:
        raise CliError(f"I/O failure: {e}", EXIT_IO)
    if report.diverged_at is not None:
        print(f"training diverged at step {report.diverged_at}; "
              f"last good checkpoint retained in {args.out}", file=sys.stderr)
        return EXIT_DIVERGENCE
    print(f"report written to {Path(args.out) / 'report.json'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .nn import CheckpointError
    from .trainer import ConfigError, evaluate_checkpoint
    cfg = _load_config(args)
    try:
        report = evaluate_checkpoint(args.checkpoint, cfg, args.samples,
                                     args.seed if args.seed is not None else cfg.seed)
    except (CheckpointError, ConfigError) as e:
        raise CliError(str(e), EXIT_CONFIG)
    except FileNotFoundError as e:
        raise CliError(f"checkpoint not found: {e}", EXIT_IO)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"config": cfg.to_dict(), "report": report.to_json_dict()}
    (out / "eval_report.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(json.dumps(payload["report"], indent=2, sort_keys=True))
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import run_suite
    seeds = tuple(int(s) for s in args.seeds.split(","))
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise CliError(f"--set expects KEY=VALUE, got {item!r}", EXIT_CONFIG)
        key, value = item.split("=", 1)
        overrides[key] = _coerce(key, value)
    try:
        md = run_suite(args.suite, args.out, seeds=seeds, steps=args.steps,
                       paper_scale=args.paper_scale, dry_run=args.dry_run,
                       jobs=args.jobs, overrides=overrides or None,
                       cache_root=args.cache)
    except ValueError as e:
        raise CliError(str(e), EXIT_CONFIG)
    print(md)
    return EXIT_OK


def cmd_plot(args) -> int:
    from . import nn
    from .plots import training_curves_figure, transport_map_figure
    from .problems import problem_by_name
    from .trainer import RunConfig, build_generator, generator_map

    out = args.out
    if args.run:
        run = Path(args.run)
        cfg_path = run / "config.json"
        ckpt = run / "checkpoint_final.bin"
        if not cfg_path.exists() or not ckpt.exists():
            raise CliError(f"{run} lacks config.json or checkpoint_final.bin",
                           EXIT_IO)
        cfg = RunConfig.from_dict(json.loads(cfg_path.read_text()))
        problem = problem_by_name(cfg.problem)
        store, _ = nn.load_checkpoint(ckpt)
        gen = build_generator(cfg, problem.dim)
        gen.store.theta[:] = store.theta
        map_fn = generator_map(gen)
        if (run / "log.csv").exists():
            training_curves_figure(run / "log.csv", out)
    else:
        problem = problem_by_name(args.problem)
        if args.map == "analytic":
            if problem.analytic_map is None:
                raise CliError(f"problem {problem.name!r} has no analytic map",
                               EXIT_CONFIG)
            map_fn = problem.analytic_map
        else:
            map_fn = lambda X: np.atleast_2d(X)
    try:
        svg = transport_map_figure(problem, map_fn, out, seed=args.seed or 0)
    except OSError as e:
        raise CliError(f"cannot write figures: {e}", EXIT_IO)
    print(f"figure written to {svg}")
    return EXIT_OK


def cmd_pca_fit(args) -> int:
    from .pipeline import IdxError, fit_pca, load_idx, save_pca
    try:
        data = load_idx(args.images, args.labels)
        model = fit_pca(data, args.k)
    except FileNotFoundError as e:
        raise CliError(str(e), EXIT_IO)
    except (IdxError, ValueError) as e:
        raise CliError(str(e), EXIT_CONFIG)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_pca(model, out / "pca_model.bin")
    print(f"PCA model (k={model.k}) written to {out / 'pca_model.bin'}")
    return EXIT_OK


def cmd_mnist_translate(args) -> int:
    from .pipeline import IdxError, translate_digits
    from .trainer import ConfigError
    for path in (args.images, args.labels):
        if not Path(path).exists():
            raise CliError(
                f"dataset file not found: {path}\n"
                "provide the IDX files (e.g. train-images-idx3-ubyte and "
                "train-labels-idx1-ubyte from the MNIST distribution, or "
                "files written by potflow.pipeline.write_idx)", EXIT_IO)
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise CliError(f"--set expects KEY=VALUE, got {item!r}", EXIT_CONFIG)
        key, value = item.split("=", 1)
        overrides[key] = _coerce(key, value)
    try:
        summary = translate_digits(
            args.images, args.labels, args.out, k=args.k, steps=args.steps,
            seed=args.seed or 0, pca_model_path=args.pca_model,
            overrides=overrides or None)
    except (IdxError, ValueError, ConfigError) as e:
        raise CliError(str(e), EXIT_CONFIG)
    except OSError as e:
        raise CliError(f"I/O failure: {e}", EXIT_IO)
    print(json.dumps(summary, indent=2, sort_keys=True))
    if summary.get("diverged_at") is not None:
        return EXIT_DIVERGENCE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="potflow",
        description="potential-flow generators with transport regularity")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="JSON config mirroring RunConfig")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                            help="override a config field (repeatable)")
            sp.add_argument("--paper-scale", action="store_true",
                            help="full budget: 100k steps, 5x128 networks")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("train", help="run a training configuration")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on its problem")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--samples", type=int, default=10000)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("bench", help="run a comparison-table suite")
    sp.add_argument("--suite", required=True, choices=("table1", "table2"))
    sp.add_argument("--out", required=True)
    sp.add_argument("--seeds", default="0,1,2")
    sp.add_argument("--steps", type=int, default=20000)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--dry-run", action="store_true",
                    help="print row names only")
    sp.add_argument("--paper-scale", action="store_true")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    sp.add_argument("--cache", default=None,
                    help="run-cache directory (default <out>/cache)")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("plot", help="render transport-map figures")
    sp.add_argument("--run", help="training output directory")
    sp.add_argument("--problem", help="problem name (when no --run)")
    sp.add_argument("--map", choices=("identity", "analytic"),
                    default="identity", help="map to draw when no --run")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_plot)

    sp = sub.add_parser("pca-fit", help="fit a PCA model from IDX files")
    sp.add_argument("--images", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--k", type=int, default=100)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_pca_fit)

    sp = sub.add_parser("mnist-translate",
                        help="digit translation in PCA embedding space")
    sp.add_argument("--images", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--k", type=int, default=100)
    sp.add_argument("--steps", type=int, default=10000)
    sp.add_argument("--pca-model", default=None,
                    help="reuse a fitted PCA model container")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_mnist_translate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except Exception as e:  # divergence surfaces through trainer reports
        from .generator import DivergenceError
        if isinstance(e, DivergenceError):
            print(f"error: {e}", file=sys.stderr)
            return EXIT_DIVERGENCE
        raise


if __name__ == "__main__":
    sys.exit(main())
