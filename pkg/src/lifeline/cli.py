"""Command line interface.

Subcommands: ``run`` (execute a config), ``report`` (aggregate run
directories into tables, curves and figures), ``oracle-check`` (exact
feasibility of a policy checkpoint on a tabular chain), and ``grad-check``
(finite-difference integrity sweep).

Exit codes: 0 success, 1 configuration error, 2 runtime failure,
3 oracle-check violation.
"""

from __future__ import annotations

import argparse
import sys

from .core import ConfigurationError, ContractViolation

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_VIOLATION = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lifeline",
        description="Safe continual reinforcement learning experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config", help="path to an INI experiment config")
    p_run.add_argument("--seed", type=int, default=None, help="run a single seed")
    p_run.add_argument("--steps-per-task", type=int, default=None)
    p_run.add_argument("--out", default=None, help="output directory override")

    p_report = sub.add_parser("report", help="aggregate finished runs")
    p_report.add_argument("out_dir", help="directory containing run outputs")
    p_report.add_argument("--no-figures", action="store_true")

    p_oracle = sub.add_parser(
        "oracle-check", help="exact feasibility of a policy on a chain spec"
    )
    p_oracle.add_argument("chain_spec", help="plain-text chain spec file")
    p_oracle.add_argument("policy_ckpt", help="categorical policy checkpoint")
    p_oracle.add_argument("--cost-limit", type=float, default=0.2)
    p_oracle.add_argument("--forget-tol", type=float, default=0.05)

    p_grad = sub.add_parser("grad-check", help="finite-difference gradient sweep")
    p_grad.add_argument("--instances", type=int, default=50)
    p_grad.add_argument("--tol", type=float, default=1e-4)

    return parser


def _cmd_run(args) -> int:
    from . import harness

    overrides = {
        "seed": args.seed,
        "steps_per_task": args.steps_per_task,
        "out": args.out,
    }
    config = harness.load_config(args.config, overrides)
    results = harness.run(config)
    for res in results:
        line = f"seed {res.seed}: {res.status}"
        if res.error:
            line += f" ({res.error})"
        print(line)
    print(f"wrote {config.out_dir}/summary.csv")
    return EXIT_OK


def _cmd_report(args) -> int:
    from . import harness

    aggregate = harness.report(args.out_dir, figures=not args.no_figures)
    for algorithm, metrics_map in aggregate.items():
        for metric, (mean, std, n) in metrics_map.items():
            print(f"{algorithm:<10} {metric:<24} {mean:>14.6f} +/- {std:<12.6f} (n={n})")
    return EXIT_OK


def _cmd_oracle_check(args) -> int:
    from .approximator import load_policy
    from .envs import load_chain_spec
    from .oracle import check_constraints, tabular_from_categorical

    spec = load_chain_spec(args.chain_spec)
    policy = load_policy(args.policy_ckpt)
    if not hasattr(policy, "action_probs"):
        raise ConfigurationError("oracle-check requires a categorical policy checkpoint")
    table = tabular_from_categorical(policy, spec.n_states)
    report = check_constraints(
        {"chain": spec}, table, args.cost_limit, args.forget_tol
    )
    print(report.as_table())
    return EXIT_OK if report.ok else EXIT_VIOLATION


def _cmd_grad_check(args) -> int:
    from .checks import gradient_integrity_sweep, sweep_summary

    results = gradient_integrity_sweep(n_instances=args.instances, tol=args.tol)
    worst = sweep_summary(results)
    failed = [r for r in results if not r.passed]
    for name in sorted(worst):
        status = "ok" if all(r.passed for r in results if r.loss_name == name) else "FAIL"
        print(f"{name:<20} max rel err {worst[name]:.3e}  {status}")
    if failed:
        print(f"{len(failed)} gradient checks failed (tol {args.tol})")
        return EXIT_RUNTIME
    print(f"all gradients match central differences (tol {args.tol})")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "report": _cmd_report,
        "oracle-check": _cmd_oracle_check,
        "grad-check": _cmd_grad_check,
    }
    try:
        return handlers[args.command](args)
    except (ConfigurationError, ContractViolation, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - surface as runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
