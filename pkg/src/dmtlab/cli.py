"""Command-line front end: ``dmtlab {gen-data,train,analyze-pseudo,eval}``.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime or
numeric failure.
"""

from __future__ import annotations

import argparse
import copy
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import data, metrics, nn, orchestrate, pseudo
from .config import format_value, load_config, registry
from .errors import ConfigError, DmtError, NumericError, ParseError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _keys_epilog() -> str:
    lines = ["configuration keys (set with --set key=value or a key=value --config file):"]
    for key, (_, default, help_text) in registry().items():
        lines.append(f"  {key} = {format_value(default)}    {help_text}")
    return "\n".join(lines)


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    epilog = _keys_epilog()
    fmt = argparse.RawDescriptionHelpFormatter
    p = _Parser(prog="dmtlab", description="Dynamic mutual training experiments at desk scale.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic dataset CSV", epilog=epilog, formatter_class=fmt)
    g.add_argument("--task", choices=["toy-binary", "grid-seg"], default="toy-binary")
    g.add_argument("--n", type=_positive_int, default=1000, help="rows (toy) or images (grid)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="data.csv")
    g.add_argument("--shape", choices=["blobs", "moons"], default="blobs", help="toy task layout")
    g.add_argument("--separation", type=float, default=0.0, help="toy class separation")
    g.add_argument("--noise", type=float, default=None, help="toy noise sigma (default 0.4 blobs, 0.1 moons) / grid pixel noise (default 0.15)")
    g.add_argument("--height", type=int, default=8)
    g.add_argument("--width", type=int, default=8)
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--imbalance", type=float, default=1.0)
    g.add_argument("--twist", type=float, default=3.0, help="grid colour drift with illumination")
    g.add_argument("--radius", type=int, default=1)
    g.add_argument("--background-fraction", type=float, default=None)
    g.add_argument("--labeled-ratio", type=float, default=None)
    g.add_argument("--labeled-count", type=int, default=None)
    g.add_argument("--valtiny", type=int, default=None)
    g.add_argument("--test-fraction", type=float, default=None)
    g.add_argument("--config", default=None)
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    t = sub.add_parser("train", help="run a training procedure", epilog=epilog, formatter_class=fmt)
    t.add_argument("--data", required=True, help="dataset CSV from gen-data")
    t.add_argument("--mode", default="dmt-cls", help="supervised | dmt-cls | dmt-seg | ablate:<tag>")
    t.add_argument("--config", default=None)
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--gamma", type=float, default=None, help="sets loss.gamma1 and loss.gamma2")
    t.add_argument("--seed", type=int, default=None, help="base seed (run.seed)")
    t.add_argument("--seeds", default=None, help="comma-separated seeds run as independent jobs")
    t.add_argument("--jobs", type=_positive_int, default=1, help="parallel workers for --seeds")
    t.add_argument("--labeled-ratio", type=float, default=None, help="ratio for the supervised epoch rule")
    t.add_argument("--base-epochs", type=int, default=None, help="fully supervised epoch budget N")
    t.add_argument("--classes", type=int, default=None, help="class count (default: inferred)")
    t.add_argument("--out", default="metrics.csv", help="metrics CSV path")
    t.add_argument("--save-checkpoints", default=None, metavar="DIR")

    a = sub.add_parser("analyze-pseudo", help="stratified pseudo-label error report", epilog=epilog,
                       formatter_class=fmt)
    a.add_argument("--model", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--out", default="noise.csv")
    a.add_argument("--fractions", default="0.2,0.4,0.6,0.8,1.0")
    a.add_argument("--corrupt-fraction", type=float, default=0.0,
                   help="replace this share of pseudo labels with a wrong class first")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--classes", type=int, default=None)

    e = sub.add_parser("eval", help="evaluate a saved model", epilog=epilog, formatter_class=fmt)
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=list(data.SPLITS[2:]) + ["labeled"])
    e.add_argument("--classes", type=int, default=None)
    e.add_argument("--out", default=None, help="optional metrics CSV")
    return p


def _overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# --- gen-data ---------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = load_config(args.config, _overrides(args.set))
    s = cfg.split
    ratio = s.labeled_ratio if args.labeled_ratio is None else args.labeled_ratio
    count = args.labeled_count if args.labeled_count is not None else (s.labeled_count or None)
    valtiny = s.valtiny if args.valtiny is None else args.valtiny
    test_fraction = s.test_fraction if args.test_fraction is None else args.test_fraction
    if args.task == "toy-binary":
        ds = data.gen_toy_binary(args.n, args.separation, args.noise, args.seed, shape=args.shape)
    else:
        ds = data.gen_grid_seg(args.n, args.height, args.width, args.classes, args.imbalance, args.seed,
                               noise=0.15 if args.noise is None else args.noise, twist=args.twist,
                               radius=args.radius,
                               background_fraction=args.background_fraction)
        valtiny = min(valtiny, max(0, args.n // 10))
    ds = data.split(ds, ratio, valtiny, args.seed, test_fraction, s.stratify, count)
    data.save_dataset(ds, args.out)
    print(f"wrote {args.out}: {len(ds)} {'images' if args.task == 'grid-seg' else 'rows'}, "
          f"{ds.class_count} classes")
    for tag in data.SPLITS:
        labels = ds.labels[ds.mask(tag)].ravel()
        counts = np.bincount(labels[labels >= 0], minlength=ds.class_count)
        print(f"  {tag:<9} {ds.count(tag):>6}  per class: {counts.tolist()}")
    return EXIT_OK


# --- train ----------------------------------------------------------------------------

def _train_config(args):
    overrides = _overrides(args.set)
    if args.gamma is not None:
        overrides["loss.gamma1"] = overrides["loss.gamma2"] = args.gamma
    if args.seed is not None:
        overrides["run.seed"] = args.seed
    if args.labeled_ratio is not None:
        overrides["train.labeled_ratio"] = args.labeled_ratio
    if args.base_epochs is not None:
        overrides["train.base_epochs"] = args.base_epochs
    return load_config(args.config, overrides)


def run_training(dataset, cfg, mode: str, out, checkpoint_dir=None) -> orchestrate.RunResult:
    result = orchestrate.run(dataset, cfg, mode, keep_checkpoints=checkpoint_dir is not None)
    task = orchestrate.TaskData.of(dataset)
    run_id = mode.replace(":", "-")
    rows = orchestrate.log_rows(result.logs, run_id, cfg.run.seed, task)
    if len(result.models) > 1:
        last = result.logs[-1].iteration
        rows.extend(metrics.MetricRow(f"{run_id}:best", cfg.run.seed, last, k, v)
                    for k, v in sorted(orchestrate.evaluate(result.model, task).items()))
    metrics.write_metrics(rows, out)
    if checkpoint_dir is not None:
        orchestrate.save_checkpoints(result, checkpoint_dir)
    return result


def _job(payload):
    data_path, classes, cfg, mode, out, ckpt = payload
    dataset = data.load_csv(data_path, classes)
    result = run_training(dataset, cfg, mode, out, ckpt)
    return orchestrate.evaluate(result.model, orchestrate.TaskData.of(dataset))


def _seeded_path(path: str, seed: int) -> str:
    p = Path(path)
    return str(p.with_name(f"{p.stem}_seed{seed}{p.suffix}"))


def cmd_train(args) -> int:
    cfg = _train_config(args)
    mode = args.mode
    if mode not in orchestrate.MODES and not mode.startswith("ablate:"):
        raise ConfigError(f"unknown mode {mode!r}; expected supervised, dmt-cls, dmt-seg or ablate:<tag>")
    if mode.startswith("ablate:"):
        cfg.run.ablation = mode.split(":", 1)[1]
        cfg.validate()
    dataset = data.load_csv(args.data, args.classes)
    orchestrate.TaskData.of(dataset)  # fail fast on an empty labelled set

    if args.seeds is None:
        result = run_training(dataset, cfg, mode, args.out, args.save_checkpoints)
        scores = orchestrate.evaluate(result.model, orchestrate.TaskData.of(dataset))
        _print_scores(f"{mode} seed {cfg.run.seed}", scores, args.out)
        return EXIT_OK

    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
    if len(set(seeds)) != len(seeds) or not seeds:
        raise ConfigError("--seeds must list distinct seeds")
    payloads = []
    for seed in seeds:
        c = copy.deepcopy(cfg)
        c.run.seed = seed
        ckpt = None if args.save_checkpoints is None else str(Path(args.save_checkpoints) / f"seed{seed}")
        payloads.append((args.data, args.classes, c, mode, _seeded_path(args.out, seed), ckpt))
    if args.jobs == 1:
        results = [_job(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_job, payloads))
    for seed, p, scores in zip(seeds, payloads, results):
        _print_scores(f"{mode} seed {seed}", scores, p[4])
    return EXIT_OK


def _print_scores(label: str, scores: dict, out) -> None:
    shown = ", ".join(f"{k}={v:.4f}" for k, v in sorted(scores.items())) or "no test split"
    print(f"{label}: {shown} (metrics in {out})")


# --- analyze / eval ---------------------------------------------------------------------

def cmd_analyze(args) -> int:
    try:
        fractions = tuple(float(f) for f in args.fractions.split(","))
    except ValueError:
        raise ConfigError(f"bad --fractions {args.fractions!r}") from None
    if not 0 <= args.corrupt_fraction <= 1:
        raise ConfigError("--corrupt-fraction must lie in [0, 1]")
    model = nn.load_model(args.model)
    dataset = data.load_csv(args.data, args.classes)
    task = orchestrate.TaskData.of(dataset)
    truth = dataset.sealed_truth().ravel()
    if truth.size == 0 or np.any(truth < 0):
        raise ConfigError("analysis needs the sealed ground truth of every unlabelled unit")
    pl = pseudo.generate_pseudo_labels(model, task.rows(task.units("unlabeled")))
    if args.corrupt_fraction > 0:
        labels, _ = orchestrate.corrupt_labels(pl.labels, np.ones(len(pl), bool), args.corrupt_fraction,
                                               dataset.class_count, nn.make_rng(args.seed))
        pl = pseudo.PseudoLabels(pl.unit_ids, labels, pl.confidences, pl.selected, pl.class_count)
    report = pseudo.noise_report(pl, truth, fractions)
    metrics.write_noise_report(report, args.out)
    for f, rate in report.stratified:
        print(f"  top {f:.0%}: error rate {rate:.4f}")
    print(f"  overall: error rate {report.overall_error_rate:.4f} (report in {args.out})")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = nn.load_model(args.model)
    dataset = data.load_csv(args.data, args.classes)
    task = orchestrate.TaskData(dataset, isinstance(dataset, data.GridDataset))
    if model.input_dim != task.input_dim:
        raise ConfigError(f"model expects {model.input_dim} inputs, dataset provides {task.input_dim}")
    if dataset.count(args.split) == 0:
        raise ConfigError(f"dataset has no {args.split} rows")
    scores = orchestrate.evaluate(model, task, args.split)
    if args.out:
        metrics.write_metrics([metrics.MetricRow("eval", 0, 0, k, v) for k, v in sorted(scores.items())],
                              args.out)
    _print_scores(f"eval on {args.split}", scores, args.out or "-")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "analyze-pseudo": cmd_analyze, "eval": cmd_eval}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ParseError, PermissionError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, DmtError, ArithmeticError, OSError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
