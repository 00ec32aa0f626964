"""Command-line entry points.

Subcommands cover the whole pipeline: generate-dataset, train,
evaluate-predictor, solve, run-po-experiment, plot-data. A single
--seed drives all randomness; --deterministic pins single-threaded
linear algebra and zeroes wall-clock columns so repeated runs produce
byte-identical files.

Exit codes: 0 success, 1 usage/config error, 2 runtime error.
"""

import argparse
import os
import sys


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="lifi-po",
                     description="Mobile-LiFi proactive optimization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="structured text config file")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--out-dir", default=".", help="output directory")
        p.add_argument("--deterministic", action="store_true",
                       help="single-threaded, reproducible outputs")

    p = sub.add_parser("generate-dataset", help="build and save a dataset pair")
    common(p)
    p.add_argument("--text", action="store_true", help="CSV records instead of binary")

    p = sub.add_parser("train", help="train the pose predictor on a dataset")
    common(p)
    p.add_argument("--dataset", help="dataset stem (defaults to paths.dataset_stem)")

    p = sub.add_parser("evaluate-predictor", help="per-step error report on the test split")
    common(p)
    p.add_argument("--dataset", help="dataset stem")
    p.add_argument("--model", help="model stem (defaults to paths.model_stem)")

    p = sub.add_parser("solve", help="solve one precoder problem file")
    common(p)
    p.add_argument("--problem", required=True, help="problem spec file")

    p = sub.add_parser("run-po-experiment", help="Monte-Carlo comparison experiments")
    common(p)
    p.add_argument("--model", help="model stem")
    p.add_argument("--experiment", default="aging",
                   choices=["aging", "sumrate-vs-k", "sumrate-vs-rth",
                            "timing", "static-collapse"])

    p = sub.add_parser("plot-data", help="render PNG figures from experiment CSVs")
    p.add_argument("--in-dir", default=".", help="directory holding the CSVs")
    p.add_argument("--out-dir", default=".", help="directory for the PNGs")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if getattr(args, "deterministic", False):
        os.environ.setdefault("OMP_NUM_THREADS", "1")
        os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
        os.environ.setdefault("MKL_NUM_THREADS", "1")
    try:
        return _dispatch(args)
    except _UsageError as err:
        sys.stderr.write(f"lifi-po: error: {err}\n")
        return 1
    except Exception as err:  # runtime failures map to exit code 2
        sys.stderr.write(f"lifi-po: runtime error: {err}\n")
        return 2


class _UsageError(Exception):
    pass


def _dispatch(args) -> int:
    # imports deferred so --deterministic can pin thread env vars first
    from .config import ConfigError, fingerprint, load_config

    if args.command == "plot-data":
        from .plots import render_all
        os.makedirs(args.out_dir, exist_ok=True)
        produced = render_all(args.in_dir, args.out_dir)
        for path in produced:
            print(path)
        return 0

    try:
        config = load_config(args.config)
    except ConfigError as err:
        raise _UsageError(str(err))
    if args.seed is not None:
        config.train.seed = args.seed
        config.solver.seed = args.seed
        config.scenario.seed = args.seed
    seed = args.seed if args.seed is not None else config.scenario.seed
    os.makedirs(args.out_dir, exist_ok=True)

    deterministic = getattr(args, "deterministic", False)
    if deterministic:
        _limit_threads()

    from .harness import write_run_manifest
    write_run_manifest(args.out_dir, args.command, seed, fingerprint(config),
                       deterministic)

    if args.command == "generate-dataset":
        return _cmd_generate(args, config, seed)
    if args.command == "train":
        return _cmd_train(args, config, seed)
    if args.command == "evaluate-predictor":
        return _cmd_evaluate(args, config)
    if args.command == "solve":
        return _cmd_solve(args, config)
    if args.command == "run-po-experiment":
        return _cmd_experiment(args, config, deterministic)
    raise _UsageError(f"unknown command {args.command}")


def _limit_threads():
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(1)
    except ImportError:
        pass


def _stem(args, config, attr, flag_value):
    base = flag_value if flag_value else getattr(config.paths, attr)
    if os.path.isabs(base):
        return base
    return os.path.join(args.out_dir, base)


def _cmd_generate(args, config, seed) -> int:
    from .config import fingerprint
    from .dataset import build_dataset, save_dataset

    dataset = build_dataset(config.dataset.n_samples, seed, config.dataset,
                            config.mobility, config.layout, config.geom,
                            config_fingerprint=fingerprint(config))
    stem = _stem(args, config, "dataset_stem", None)
    save_dataset(dataset, stem, text=args.text)
    print(f"wrote {stem}.meta and {stem}.{'csv' if args.text else 'dat'} "
          f"({len(dataset)} samples)")
    return 0


def _cmd_train(args, config, seed) -> int:
    from .dataset import load_dataset, split
    from .harness import write_csv
    from .lstm import save_model, train

    dataset = load_dataset(_stem(args, config, "dataset_stem", args.dataset))
    train_set, _ = split(dataset)
    config.train.seed = seed
    model, history = train(train_set, config.train, config.hidden_size)
    stem = _stem(args, config, "model_stem", None)
    save_model(model, stem)
    write_csv(os.path.join(args.out_dir, "loss_history.csv"),
              ["epoch", "train_mse", "validation_mse"],
              [[e, t, v] for e, t, v in zip(history.epochs, history.train_mse,
                                            history.val_mse)])
    print(f"wrote {stem}.meta/.params; best epoch {history.best_epoch}, "
          f"validation mse {min(history.val_mse):.6g}")
    return 0


def _cmd_evaluate(args, config) -> int:
    import numpy as np

    from .dataset import load_dataset, regenerate_anchors, split, split_indices
    from .harness import write_csv
    from .lstm import evaluate, load_model

    dataset = load_dataset(_stem(args, config, "dataset_stem", args.dataset))
    model = load_model(_stem(args, config, "model_stem", args.model))
    _, test_set = split(dataset)
    _, test_idx = split_indices(dataset.meta.n_samples,
                                dataset.meta.train_fraction,
                                dataset.meta.master_seed)
    test_set.anchors = regenerate_anchors(dataset.meta, test_idx,
                                          config.mobility, config.layout)
    report = evaluate(model, test_set, config.layout)

    rows = []
    for i, step in enumerate(report.steps):
        rows.append([int(step), report.position_error_mean[i],
                     report.persistence_error_mean[i],
                     report.angle_error_mean[i][0], report.angle_error_mean[i][1],
                     report.angle_error_mean[i][2]])
    write_csv(os.path.join(args.out_dir, "eval_summary.csv"),
              ["posterior_step", "mean_position_error_m",
               "persistence_position_error_m", "mean_yaw_error_deg",
               "mean_pitch_error_deg", "mean_roll_error_deg"], rows)
    cdf_rows = []
    for i, step in enumerate(report.steps):
        for err in np.sort(report.position_error_samples[i]):
            cdf_rows.append([int(step), float(err)])
    write_csv(os.path.join(args.out_dir, "eval_cdf.csv"),
              ["posterior_step", "position_error_m"], cdf_rows)
    for row in rows:
        print(f"L={row[0]}: position error {row[1]:.4f} m "
              f"(persistence {row[2]:.4f} m)")
    return 0


def _cmd_solve(args, config) -> int:
    from .precoder import CcpOptions, ccp_solve, load_problem, save_solution

    spec = load_problem(args.problem)
    solution = ccp_solve(spec, config.solver)
    stem = os.path.join(args.out_dir,
                        os.path.splitext(os.path.basename(args.problem))[0])
    save_solution(solution, stem)
    print(f"admitted {len(solution.admitted)} users, "
          f"objective {solution.objective:.6g} nats/s/Hz, "
          f"{len(solution.trace)} trace points -> {stem}.solution")
    return 0


def _cmd_experiment(args, config, deterministic) -> int:
    from .harness import (experiment_aging, experiment_static_collapse,
                          experiment_sumrate_vs_k, experiment_sumrate_vs_rth,
                          experiment_timing)

    needs_model = args.experiment in ("aging", "sumrate-vs-k", "sumrate-vs-rth")
    model = None
    if needs_model:
        from .lstm import load_model
        model = load_model(_stem(args, config, "model_stem", args.model))

    if args.experiment == "aging":
        stats = experiment_aging(config, model, args.out_dir, deterministic)
        for case in ("genie", "po_lstm", "persistence", "aged"):
            print(f"{case}: mean sum-rate {stats[case]['mean']:.4f} "
                  f"+- {stats[case]['ci95']:.4f} nats/s/Hz")
        print(f"relative gap to genie: po_lstm {stats['po_gap_rel']:.2%}, "
              f"aged {stats['aged_gap_rel']:.2%}")
    elif args.experiment == "sumrate-vs-k":
        experiment_sumrate_vs_k(config, model, args.out_dir, deterministic)
        print("wrote sumrate_vs_k.csv")
    elif args.experiment == "sumrate-vs-rth":
        experiment_sumrate_vs_rth(config, model, args.out_dir, deterministic)
        print("wrote sumrate_vs_rth.csv")
    elif args.experiment == "timing":
        results = experiment_timing(config, args.out_dir, deterministic)
        for k, entry in results.items():
            print(f"K={k}: ccp {entry['ccp']*1e3:.1f} ms, "
                  f"reference {entry['ref']*1e3:.1f} ms")
    elif args.experiment == "static-collapse":
        stats = experiment_static_collapse(config, args.out_dir, deterministic)
        print(f"max relative spread over {stats['n_slots']} slots: "
              f"{stats['max_relative_spread']:.3g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
