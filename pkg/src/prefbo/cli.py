"""Command-line entry points.

Subcommands: the three benchmark ablations under `bench`, autonomous
runs (`run-auto`), replay verification (`session replay`), task file
generation (`task make`), and the interactive service (`serve`).

Exit codes: 0 success, 2 configuration or usage error, 3 numerical
failure (including a failed replay verification).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import (
    BenchmarkSpec,
    run_ablation_choice_k,
    run_ablation_dbs_components,
    run_ablation_pairwise_vs_multiwise,
    write_report,
)
from .errors import ContractError, NumericalError, ProtocolError
from .likelihoods import LikelihoodModel
from .objectives import (
    ChoiceNoiseModel,
    load_task_file,
    make_objective,
    make_warp_match_task,
    save_task_file,
)
from .session import (
    SessionConfig,
    replay_session,
    run_autonomous,
    save_session,
    trajectory_tsv,
)


def _add_bench_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seeds", type=int, default=20, help="number of seeds to sweep")
    parser.add_argument("--budget", type=int, default=50, help="post-init rounds per run")
    parser.add_argument("--seed-offset", type=int, default=0, help="first seed value")
    parser.add_argument("--objective", default=None, help="objective name")
    parser.add_argument("--out", default="bench-out", help="report output directory")
    parser.add_argument("--noise", choices=["argmax", "k-scaled"], default=None)
    parser.add_argument("--init-batches", type=int, default=10)
    parser.add_argument("--field-size", type=int, default=48)
    parser.add_argument("--ei-restarts", type=int, default=8)
    parser.add_argument("--ei-raw-samples", type=int, default=1024)


def _bench_spec(args, k_values, default_objective: str, default_noise: str) -> BenchmarkSpec:
    return BenchmarkSpec(
        objective=args.objective or default_objective,
        budget=args.budget,
        seeds=args.seeds,
        seed_offset=args.seed_offset,
        k_values=tuple(k_values),
        noise=args.noise or default_noise,
        init_batches=args.init_batches,
        field_size=args.field_size,
        ei_restarts=args.ei_restarts,
        ei_raw_samples=args.ei_raw_samples,
    )


def _print_report(report, paths) -> None:
    for key, value in sorted(report.comparisons.items()):
        print(f"{key}: {value}")
    for path in paths:
        print(f"wrote {path}")


def _cmd_bench_pairwise(args) -> int:
    spec = _bench_spec(args, (2, args.k), "warp-affine8", "argmax")
    report = run_ablation_pairwise_vs_multiwise(spec)
    _print_report(report, write_report(report, args.out))
    return 0


def _cmd_bench_choice_k(args) -> int:
    spec = _bench_spec(args, args.k, "warp-affine8", "k-scaled")
    report = run_ablation_choice_k(spec)
    _print_report(report, write_report(report, args.out))
    return 0


def _cmd_bench_dbs(args) -> int:
    spec = _bench_spec(args, (args.k,), "sphere-6d", "argmax")
    report = run_ablation_dbs_components(spec)
    _print_report(report, write_report(report, args.out))
    return 0


def _cmd_run_auto(args) -> int:
    if args.task_file:
        objective = load_task_file(args.task_file)
    else:
        objective = make_objective(
            args.objective, task_seed=args.task_seed, size=args.field_size
        )
    noise = ChoiceNoiseModel(
        kind=args.noise, temperature=args.temperature, epsilon=args.epsilon
    )
    config = SessionConfig(
        bounds=objective.bounds,
        budget=args.budget,
        choices_per_round=args.k,
        init_batches=args.init_batches,
        likelihood=LikelihoodModel(kind=args.likelihood),
        proposal=args.proposal,
        seed=args.seed,
    )
    state = run_autonomous(config, objective, noise)
    text = trajectory_tsv(state)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    if args.session_out:
        save_session(state, args.session_out)
        print(f"wrote {args.session_out}")
    final = state.trajectory[-1]
    print(
        f"final round {final.round_index}: incumbent value {final.incumbent_value:.6f}, "
        f"regret {final.regret:.6f}"
    )
    return 0


def _cmd_session_replay(args) -> int:
    payload = json.loads(Path(args.file).read_text(encoding="utf-8"))
    report = replay_session(payload)
    print(f"rounds replayed: {report.rounds}")
    print(f"max archive diff: {report.max_archive_diff:.3e}")
    print(f"max f_map diff: {report.max_f_map_diff:.3e}")
    print(f"incumbent match: {report.incumbent_match}")
    print(f"rng state match: {report.rng_match}")
    if not report.passed:
        print("replay FAILED")
        return 3
    print("replay OK")
    return 0


def _cmd_task_make(args) -> int:
    objective = make_warp_match_task(
        args.task_seed,
        components=None,
        size=args.field_size,
        amplitude=args.amplitude,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_task_file(objective, out)
    print(f"wrote {out}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(data_dir=Path(args.data_dir), frontend_dir=args.frontend_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prefbo",
        description="Preferential Bayesian optimization: benchmarks, sessions, service",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="run benchmark ablations")
    bench_sub = bench.add_subparsers(dest="ablation", required=True)

    pairwise = bench_sub.add_parser(
        "pairwise-vs-multiwise", help="pairwise K=2 against a K-candidate choice set"
    )
    _add_bench_flags(pairwise)
    pairwise.add_argument("--k", type=int, default=4, help="multiwise choice-set size")
    pairwise.set_defaults(func=_cmd_bench_pairwise)

    choice_k = bench_sub.add_parser("choice-k", help="choice-set size sweep")
    _add_bench_flags(choice_k)
    choice_k.add_argument(
        "--k", type=int, nargs="+", default=[2, 4, 6, 10], help="choice-set sizes"
    )
    choice_k.set_defaults(func=_cmd_bench_choice_k)

    dbs = bench_sub.add_parser("dbs-components", help="proposer component ablation")
    _add_bench_flags(dbs)
    dbs.add_argument("--k", type=int, default=4, help="choice-set size")
    dbs.set_defaults(func=_cmd_bench_dbs)

    auto = sub.add_parser("run-auto", help="one autonomous run with a simulated chooser")
    auto.add_argument("--objective", default="warp-affine8")
    auto.add_argument("--task-file", default=None, help="warp task document to load")
    auto.add_argument("--task-seed", type=int, default=0)
    auto.add_argument("--field-size", type=int, default=48)
    auto.add_argument("--budget", type=int, default=50)
    auto.add_argument("--k", type=int, default=4)
    auto.add_argument("--init-batches", type=int, default=10)
    auto.add_argument("--seed", type=int, default=0)
    auto.add_argument(
        "--likelihood",
        default="multinomial-logit",
        choices=["multinomial-logit", "subset-logit", "pairwise-logit", "pairwise-probit"],
    )
    auto.add_argument(
        "--noise", default="argmax", choices=["argmax", "gumbel-logit", "subset-threshold"]
    )
    auto.add_argument("--temperature", type=float, default=1.0)
    auto.add_argument("--epsilon", type=float, default=0.0)
    auto.add_argument("--proposal", default="dbs", choices=["dbs", "ei-top-k", "random"])
    auto.add_argument("--out", default=None, help="trajectory TSV path (stdout when absent)")
    auto.add_argument("--session-out", default=None, help="session JSON path")
    auto.set_defaults(func=_cmd_run_auto)

    session = sub.add_parser("session", help="session file operations")
    session_sub = session.add_subparsers(dest="session_command", required=True)
    replay = session_sub.add_parser("replay", help="verify a recorded session reproduces")
    replay.add_argument("file", help="session JSON document")
    replay.set_defaults(func=_cmd_session_replay)

    task = sub.add_parser("task", help="warp task file operations")
    task_sub = task.add_subparsers(dest="task_command", required=True)
    make = task_sub.add_parser("make", help="generate a warp task document")
    make.add_argument("--out", default="task.json")
    make.add_argument("--task-seed", type=int, default=0)
    make.add_argument("--field-size", type=int, default=48)
    make.add_argument("--amplitude", type=float, default=0.4)
    make.set_defaults(func=_cmd_task_make)

    serve = sub.add_parser("serve", help="host interactive sessions over HTTP")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8321)
    serve.add_argument("--data-dir", default="service-data")
    serve.add_argument("--frontend-dir", default=None, help="static UI directory to serve at /")
    serve.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ContractError as error:
        print(f"configuration error: {error}", file=sys.stderr)
        return 2
    except ProtocolError as error:
        print(f"protocol error: {error}", file=sys.stderr)
        return 2
    except NumericalError as error:
        print(f"numerical failure: {error}", file=sys.stderr)
        return 3
    except FileNotFoundError as error:
        print(f"configuration error: {error}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
