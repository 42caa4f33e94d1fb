"""Command line interface.

Subcommands:

* ``run``    one experiment from a config file
* ``tune``   grid search over the config's hyperparameter grid
* ``viz``    export a prediction-probability grid for a 2-feature model
* ``report`` aggregate persisted results into a summary table

Exit status is 0 on success, 1 on a runtime failure with a diagnostic on
stderr, and 2 on a usage error.
"""

import argparse
import sys

import numpy as np

from . import harness
from .autodiff import EvaluationError
from .optim import TrainingError
from .tasks import FeatureFileError


def _add_common(parser):
    parser.add_argument("--config", required=True, help="path to a JSON experiment config")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="override the output directory")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="clkit", description="continual-learning experiments on task sequences"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    _add_common(p_run)

    p_tune = sub.add_parser("tune", help="grid-search hyperparameters")
    _add_common(p_tune)

    p_viz = sub.add_parser("viz", help="export a probability grid after training")
    _add_common(p_viz)
    p_viz.add_argument("--resolution", type=int, default=100, help="lattice points per axis")
    p_viz.add_argument("--grid-out", default=None, help="output CSV path for the grid")

    p_report = sub.add_parser("report", help="summarize persisted results")
    p_report.add_argument("--dir", required=True, help="results directory holding index.csv")

    return parser


def _load(args):
    cfg = harness.load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _cmd_run(args):
    cfg = _load(args)
    records, estimator = harness.run_experiment(cfg, out_dir=args.out)
    n_tasks = estimator.task_count_
    val = harness.faa_from_records(records, "val", n_tasks)
    test = harness.faa_from_records(records, "test", n_tasks)
    print(f"method={cfg.method['name']} tasks={n_tasks}")
    print(f"validation FAA: {100 * val:.4f}")
    print(f"test FAA:       {100 * test:.4f}")
    return 0


def _cmd_tune(args):
    cfg = _load(args)
    result = harness.grid_search(cfg, out_dir=args.out)
    print(f"method={cfg.method['name']} cells={len(result.cells)}")
    print(f"best hyperparameters: {result.best_params or '(none)'}")
    print(f"best validation FAA: {100 * result.best_val_faa:.4f}")
    print(f"test FAA at best:    {100 * result.best_test_faa:.4f}")
    return 0


def _cmd_viz(args):
    cfg = _load(args)
    seq, _name = harness.build_sequence(cfg)
    if seq.tasks[0].train.n_features != 2:
        raise harness.ConfigError(
            f"viz needs a 2-feature sequence, got {seq.tasks[0].train.n_features} features"
        )
    records, estimator = harness.run_experiment(cfg, out_dir=args.out)
    X_all = np.vstack([t.train.X for t in seq])
    out_path = args.grid_out or "probgrid.csv"
    harness.export_prob_grid(
        estimator.spec_, estimator.weights_, X_all, resolution=args.resolution, path=out_path
    )
    print(f"wrote {args.resolution * args.resolution} grid rows to {out_path}")
    return 0


def _cmd_report(args):
    sys.stdout.write(harness.report(args.dir))
    return 0


_COMMANDS = {"run": _cmd_run, "tune": _cmd_tune, "viz": _cmd_viz, "report": _cmd_report}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except FileNotFoundError as err:
        print(f"error: file not found: {err.filename or err}", file=sys.stderr)
        return 1
    except (harness.ConfigError, FeatureFileError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (TrainingError, EvaluationError) as err:
        print(f"error: training failed: {err}", file=sys.stderr)
        return 1


def entry_point():
    raise SystemExit(main())


if __name__ == "__main__":
    entry_point()
