"""Command-line driver.

Commands: train, eval, solve-svdd, gradcheck, pack-dataset, baseline.
Exit codes: 0 success, 1 usage error, 2 data/configuration error,
3 numeric or solver error. Every run is deterministic given its flags; all
randomness flows from explicit seeds. A flat `key = value` file passed via
--config supplies values for flags not given on the command line.
"""

import argparse
import os
import sys

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, apply_primitive, grad_check
from .baseline import baseline_grid_eval, baseline_report_csv
from .data_io import (
    augment_rotations,
    ingest_idx,
    load_checkpoint,
    load_occb,
    load_split_datasets,
    resize_bilinear,
    save_checkpoint,
    save_occb,
)
from .encoder import init_encoder
from .episodes import (
    SPLIT_TAGS,
    EpisodeConfig,
    make_rng,
    sample_episode,
    synthetic_splits,
    take_classes,
)
from .errors import ConfigError, ContractError, NumericError, ParseError
from .heads import episode_forward
from .metrics import (
    accuracy_protocol,
    accuracy_report_csv,
    auc_protocol,
    auc_report_csv,
)
from .svdd import solve_svdd, svdd_alpha
from .train import TrainConfig, meta_train

DEFAULTS = {
    "head": "meta_svdd",
    "architecture": "conv4",
    "hidden_dim": 32,
    "shot": 5,
    "query_per_side": 10,
    "meta_batch": 16,
    "learning_rate": 5e-4,
    "lam": 1e-6,
    "tolerance": 1e-8,
    "eval_every": 100,
    "patience": 10,
    "val_tasks": 500,
    "max_steps": 0,
    "episodes": 10000,
    "repetitions": 10,
    "variance_keep": 0.95,
    "seed": 0,
    "data_seed": 0,
    "jobs": 1,
    "split": "test",
    "per_class": 30,
    "dim": 8,
    "spread": 0.1,
    "step": 1e-5,
}

# config-file key -> (argparse dest, converter)
CONFIG_SCHEMA = {
    "data": ("data", str),
    "splits": ("splits", str),
    "synthetic": ("synthetic", str),
    "per_class": ("per_class", int),
    "dim": ("dim", int),
    "spread": ("spread", float),
    "data_seed": ("data_seed", int),
    "head": ("head", str),
    "architecture": ("architecture", str),
    "hidden_dim": ("hidden_dim", int),
    "shot": ("shot", int),
    "query_per_side": ("query_per_side", int),
    "meta_batch": ("meta_batch", int),
    "learning_rate": ("learning_rate", float),
    "lambda": ("lam", float),
    "tolerance": ("tolerance", float),
    "eval_every": ("eval_every", int),
    "patience": ("patience", int),
    "val_tasks": ("val_tasks", int),
    "max_steps": ("max_steps", int),
    "episodes": ("episodes", int),
    "repetitions": ("repetitions", int),
    "variance_keep": ("variance_keep", float),
    "seed": ("seed", int),
    "jobs": ("jobs", int),
    "split": ("split", str),
    "protocol": ("protocol", str),
    "checkpoint": ("checkpoint", str),
    "out": ("out", str),
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise _UsageError(message)


def _load_config(path):
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in CONFIG_SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown configuration key {key!r}")
            dest, convert = CONFIG_SCHEMA[key]
            try:
                values[dest] = convert(value)
            except ValueError:
                raise ConfigError(
                    f"{path}:{lineno}: bad value for {key!r}: {value!r}"
                ) from None
    return values


def _resolve(args):
    """Fill unset flags from the config file, then from the defaults table."""
    config = _load_config(args.config) if getattr(args, "config", None) else {}
    for dest, value in config.items():
        if getattr(args, dest, None) is None and hasattr(args, dest):
            setattr(args, dest, value)
    for dest, value in DEFAULTS.items():
        if hasattr(args, dest) and getattr(args, dest) is None:
            setattr(args, dest, value)
    return args


def _add_data_flags(parser):
    parser.add_argument("--data", help="packed OCCB dataset path")
    parser.add_argument("--splits", help="split manifest path (used with --data)")
    parser.add_argument(
        "--synthetic",
        help="synthetic class counts 'train,validation,test' (instead of --data)",
    )
    parser.add_argument("--per-class", dest="per_class", type=int,
                        help="synthetic examples per class (default: 30)")
    parser.add_argument("--dim", type=int, help="synthetic input dimension (default: 8)")
    parser.add_argument("--spread", type=float,
                        help="synthetic cluster spread (default: 0.1)")
    parser.add_argument("--data-seed", dest="data_seed", type=int,
                        help="seed for synthetic data generation (default: 0)")
    parser.add_argument("--config", help="key = value configuration file")


def _load_splits(args, parser):
    if args.synthetic and args.data:
        parser.error("--data and --synthetic are mutually exclusive")
    if args.synthetic:
        try:
            counts = tuple(int(part) for part in args.synthetic.split(","))
        except ValueError:
            raise ConfigError(f"bad --synthetic value {args.synthetic!r}") from None
        if len(counts) != 3:
            raise ConfigError("--synthetic needs three counts: train,validation,test")
        return synthetic_splits(counts, args.per_class, args.dim, args.spread, args.data_seed)
    if not args.data:
        parser.error("one of --data or --synthetic is required")
    dataset = load_occb(args.data)
    if args.splits:
        return load_split_datasets(dataset, args.splits)
    return {
        tag: take_classes(dataset, list(dataset.class_ids), tag) for tag in SPLIT_TAGS
    }


def _write_report(csv_text, out_path):
    sys.stdout.write(csv_text)
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(csv_text)


# ---------------------------------------------------------------------------
# command handlers


def _cmd_train(args, parser):
    splits = _load_splits(args, parser)
    config = TrainConfig(
        episode=EpisodeConfig(
            shot=args.shot,
            query_per_side=args.query_per_side,
            meta_batch=args.meta_batch,
        ),
        architecture=args.architecture,
        hidden_dim=args.hidden_dim,
        learning_rate=args.learning_rate,
        lam=args.lam,
        tolerance=args.tolerance,
        eval_every=args.eval_every,
        patience=args.patience,
        val_tasks=args.val_tasks,
        max_steps=args.max_steps,
    )
    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "train_log.csv")
    state = meta_train(
        {"train": splits["train"], "validation": splits["validation"]},
        args.head,
        config,
        seeds=args.seed,
        log_path=log_path,
    )
    best_mean, best_lo = state.best_validation
    best_step = next(
        step for step, mean, lo in state.history if (mean, lo) == (best_mean, best_lo)
    )
    save_checkpoint(
        os.path.join(args.out, "checkpoint.occk"),
        state.best_params,
        args.head,
        step=best_step,
        best_validation=(best_mean, best_lo),
    )
    print(f"best step {best_step} val_mean {best_mean!r} val_ci_low {best_lo!r}")
    if state.skip_log:
        print(f"skipped episodes: {len(state.skip_log)}", file=sys.stderr)
    return 0


def _cmd_eval(args, parser):
    params, checkpoint_head, _ = load_checkpoint(args.checkpoint)
    head = args.head if args.head is not None else checkpoint_head
    splits = _load_splits(args, parser)
    dataset = splits[args.split]
    if args.protocol == "auc":
        report = auc_protocol(
            params, head, dataset, args.shot,
            repetitions=args.repetitions, seed=args.seed,
            lam=args.lam, tolerance=args.tolerance, jobs=args.jobs,
        )
        csv_text = auc_report_csv(report)
    else:
        report = accuracy_protocol(
            params, head, dataset, args.shot,
            episodes=args.episodes, seed=args.seed,
            lam=args.lam, tolerance=args.tolerance, jobs=args.jobs,
        )
        csv_text = accuracy_report_csv(report)
    out = args.out if args.out is not None else f"{args.protocol}_report.csv"
    _write_report(csv_text, out)
    return 0


def _cmd_baseline(args, parser):
    splits = _load_splits(args, parser)
    dataset = splits[args.split]
    grid = baseline_grid_eval(
        dataset,
        args.shot,
        args.protocol,
        seed=args.seed,
        repetitions=args.repetitions,
        episodes=args.episodes,
        variance_keep=args.variance_keep,
        jobs=args.jobs,
    )
    csv_text = baseline_report_csv(grid)
    out = args.out if args.out is not None else f"baseline_{args.protocol}_report.csv"
    _write_report(csv_text, out)
    return 0


def _cmd_solve_svdd(args, parser):
    try:
        matrix = np.loadtxt(args.matrix, dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise ParseError(f"{args.matrix}: {exc}") from None
    solution = solve_svdd(matrix, lam=args.lam, tolerance=args.tolerance)
    print("alpha: " + " ".join(f"{a:g}" for a in solution.alpha))
    print("center: " + " ".join(f"{c:g}" for c in solution.center))
    print(f"radius: {solution.radius:g}")
    print(f"kkt_residual: {solution.kkt_residual:g}")
    return 0


def _gradcheck_suite(seed, step):
    """Finite-difference checks: primitives, the QP path, both episode losses."""
    from .heads import HEADS

    rng = make_rng(seed)
    away = lambda shape: rng.uniform(0.5, 1.5, shape) * rng.choice([-1.0, 1.0], shape)
    checks = []

    b = rng.standard_normal((3, 2))
    checks.append((
        "matmul+sum", 1e-6,
        grad_check(lambda t: apply_primitive("sum", apply_primitive("matmul", t, Tensor(b))),
                   rng.standard_normal((2, 3)), step),
    ))
    bias = rng.standard_normal(3)
    checks.append((
        "add+scale+mean", 1e-6,
        grad_check(
            lambda t: apply_primitive(
                "mean", apply_primitive("scale", apply_primitive("add", t, Tensor(bias)), 1.7)
            ),
            rng.standard_normal((4, 3)), step,
        ),
    ))
    checks.append((
        "relu+sum", 1e-6,
        grad_check(lambda t: apply_primitive("sum", apply_primitive("relu", t)),
                   away((3, 3)), step),
    ))
    checks.append((
        "tanh+mean", 1e-6,
        grad_check(lambda t: apply_primitive("mean", apply_primitive("tanh", t)),
                   rng.standard_normal(6), step),
    ))
    checks.append((
        "clamp+log+sum", 1e-6,
        grad_check(
            lambda t: apply_primitive(
                "sum", apply_primitive("log", apply_primitive("clamp", t, 0.01, 10.0))
            ),
            rng.uniform(0.5, 2.0, 5), step,
        ),
    ))
    anchor = rng.standard_normal(4)
    checks.append((
        "squared-distance", 1e-6,
        grad_check(lambda t: apply_primitive("squared-distance", t, Tensor(anchor)),
                   rng.standard_normal(4), step),
    ))

    z = rng.standard_normal((4, 3))
    weights = rng.standard_normal(4)
    checks.append((
        "svdd-alpha", 1e-5,
        grad_check(
            lambda t: apply_primitive("sum", ad.mul(svdd_alpha(t), Tensor(weights))),
            z, min(step, 1e-6),
        ),
    ))

    splits = synthetic_splits((4, 2, 2), per_class=12, input_dim=3,
                              cluster_spread=0.1, seed=seed)
    params = init_encoder("mlp", (3,), seed, hidden_dim=6)
    episode = sample_episode(
        splits["train"], EpisodeConfig(shot=4, query_per_side=2), seed + 7
    )
    for head in HEADS:
        worst = 0.0
        for name in params.weights:
            def loss_of(t, probe=name):
                bound = {
                    n: (t if n == probe else Tensor(arr))
                    for n, arr in params.weights.items()
                }
                return episode_forward(head, params, episode, train=False, bound=bound).loss

            worst = max(worst, grad_check(loss_of, params.weights[name], step))
        checks.append((f"episode-loss[{head}]", 1e-3, worst))
    return checks


def _cmd_gradcheck(args, parser):
    checks = _gradcheck_suite(args.seed, args.step)
    failed = False
    for name, tolerance, err in checks:
        ok = err <= tolerance
        failed = failed or not ok
        print(f"{name}: max_rel_err={err:.3e} tolerance={tolerance:g} "
              f"{'PASS' if ok else 'FAIL'}")
    if failed:
        raise NumericError("gradient check failed")
    return 0


def _cmd_pack_dataset(args, parser):
    dataset = ingest_idx(args.images, args.labels)
    if args.resize:
        dataset = resize_bilinear(dataset, args.resize[0], args.resize[1])
    if args.augment_rotations:
        dataset = augment_rotations(dataset)
    save_occb(dataset, args.out)
    print(f"wrote {args.out}: {dataset.class_count} classes, "
          f"example shape {dataset.example_shape}")
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def build_parser():
    parser = _Parser(prog="fsocc", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", help="meta-train an encoder")
    _add_data_flags(p)
    p.add_argument("--head", choices=["meta_svdd", "oc_protonet"],
                   help="classification head (default: meta_svdd)")
    p.add_argument("--arch", dest="architecture", choices=["conv4", "mlp"],
                   help="encoder architecture (default: conv4)")
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int,
                   help="MLP hidden width (default: 32)")
    p.add_argument("--shot", type=int, help="support examples per episode (default: 5)")
    p.add_argument("--query-per-side", dest="query_per_side", type=int,
                   help="queries per class side (default: 10)")
    p.add_argument("--meta-batch", dest="meta_batch", type=int,
                   help="episodes per update (default: 16)")
    p.add_argument("--learning-rate", dest="learning_rate", type=float,
                   help="Adam learning rate (default: 0.0005)")
    p.add_argument("--lam", type=float, help="kernel stabilization (default: 1e-06)")
    p.add_argument("--tolerance", type=float, help="QP tolerance (default: 1e-08)")
    p.add_argument("--eval-every", dest="eval_every", type=int,
                   help="steps between validations (default: 100)")
    p.add_argument("--patience", type=int,
                   help="non-improving evaluations before halting (default: 10)")
    p.add_argument("--val-tasks", dest="val_tasks", type=int,
                   help="validation tasks per evaluation (default: 500)")
    p.add_argument("--max-steps", dest="max_steps", type=int,
                   help="hard step cap, 0 disables (default: 0)")
    p.add_argument("--seed", type=int, help="training seed (default: 0)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint under a protocol")
    _add_data_flags(p)
    p.add_argument("--checkpoint", required=True, help="OCCK checkpoint path")
    p.add_argument("--protocol", required=True, choices=["auc", "accuracy"])
    p.add_argument("--split", choices=list(SPLIT_TAGS),
                   help="dataset split to evaluate (default: test)")
    p.add_argument("--head", choices=["meta_svdd", "oc_protonet"],
                   help="override the checkpoint head")
    p.add_argument("--shot", type=int, help="support size (default: 5)")
    p.add_argument("--repetitions", type=int,
                   help="AUC repetitions per class pair (default: 10)")
    p.add_argument("--episodes", type=int,
                   help="accuracy protocol episodes (default: 10000)")
    p.add_argument("--lam", type=float, help="kernel stabilization (default: 1e-06)")
    p.add_argument("--tolerance", type=float, help="QP tolerance (default: 1e-08)")
    p.add_argument("--seed", type=int, help="evaluation seed (default: 0)")
    p.add_argument("--jobs", type=int, help="parallel workers (default: 1)")
    p.add_argument("--out", help="report file (default: <protocol>_report.csv)")
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("baseline", help="PCA + one-class SVM grid evaluation")
    _add_data_flags(p)
    p.add_argument("--protocol", required=True, choices=["auc", "accuracy"])
    p.add_argument("--split", choices=list(SPLIT_TAGS),
                   help="dataset split to evaluate (default: test)")
    p.add_argument("--shot", type=int, help="support size (default: 5)")
    p.add_argument("--repetitions", type=int,
                   help="AUC repetitions per class pair (default: 10)")
    p.add_argument("--episodes", type=int,
                   help="accuracy protocol episodes (default: 10000)")
    p.add_argument("--variance-keep", dest="variance_keep", type=float,
                   help="PCA variance retention (default: 0.95)")
    p.add_argument("--seed", type=int, help="evaluation seed (default: 0)")
    p.add_argument("--jobs", type=int, help="parallel workers (default: 1)")
    p.add_argument("--out", help="report file (default: baseline_<protocol>_report.csv)")
    p.set_defaults(handler=_cmd_baseline)

    p = sub.add_parser("solve-svdd", help="solve one SVDD ball from a text matrix")
    p.add_argument("matrix", help="whitespace-delimited numeric matrix file")
    p.add_argument("--lam", type=float, help="kernel stabilization (default: 1e-06)")
    p.add_argument("--tolerance", type=float, help="QP tolerance (default: 1e-08)")
    p.set_defaults(handler=_cmd_solve_svdd)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.add_argument("--seed", type=int, help="suite seed (default: 0)")
    p.add_argument("--step", type=float, help="finite-difference step (default: 1e-05)")
    p.set_defaults(handler=_cmd_gradcheck)

    p = sub.add_parser("pack-dataset", help="ingest IDX files into an OCCB pack")
    p.add_argument("--images", required=True, help="IDX image file")
    p.add_argument("--labels", required=True, help="IDX label file")
    p.add_argument("--resize", type=int, nargs=2, metavar=("H", "W"),
                   help="bilinear resize target")
    p.add_argument("--augment-rotations", action="store_true",
                   help="spawn 4 rotated classes per class")
    p.add_argument("--out", required=True, help="output OCCB path")
    p.set_defaults(handler=_cmd_pack_dataset)

    return parser


def dispatch(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return 1
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 0
    if getattr(args, "command", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        _resolve(args)
        return args.handler(args, parser)
    except _UsageError:
        return 1
    except (ParseError, ConfigError, ContractError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
