"""Command-line front end: dataset generation, tracker runs, training, sweeps.

Exit codes: 0 success, 1 runtime/data error, 2 usage/validation error.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from .bench import (
    ExperimentSpec,
    run_experiment,
    score_rls_sequences,
    write_results_csv,
    write_sequence_scores_csv,
)
from .deep_rls import (
    TrainConfig,
    aligned_mse,
    forward,
    init_model,
    load_model,
    raw_mse,
    save_model,
    train,
)
from .errors import FormatError, NumericError, SingularMatrixError
from .rls import NONLINEARITIES, get_nonlinearity, init_state
from .signal_model import GeneratorConfig, generate_collection, load_dataset, save_dataset

_DEFAULT_SWEEPS = {"fig1": (10, 20, 50, 100), "fig2": (2, 3, 4, 5)}


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _add_seq_range(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--seq-start", type=int, default=0, help="index of the first sequence to use"
    )
    parser.add_argument(
        "--seq-count",
        type=int,
        default=None,
        help="number of sequences to use (default: all from --seq-start on)",
    )


def _select_sequences(sequences, start: int, count):
    if start < 0 or start >= len(sequences):
        raise ValueError(
            f"--seq-start {start} out of range for {len(sequences)} sequences"
        )
    picked = sequences[start:] if count is None else sequences[start : start + count]
    if count is not None and len(picked) != count:
        raise ValueError(
            f"--seq-count {count} exceeds the {len(sequences) - start} sequences "
            f"available from index {start}"
        )
    if not picked:
        raise ValueError("no sequences selected")
    return picked


def _derived_seeds(seed: int, n: int) -> list[int]:
    return [int(w) for w in np.random.SeedSequence(seed).generate_state(n)]


def cmd_gen(args) -> int:
    l = args.l if args.l is not None else args.m + 2
    config = GeneratorConfig(
        m=args.m,
        l=l,
        T=args.T,
        num_train_sequences=args.train,
        num_test_sequences=args.test,
        noise_sigma=args.noise_sigma,
        master_seed=args.seed,
        center=args.center,
    )
    coll = generate_collection(config)
    save_dataset(coll, args.out)
    print(
        f"wrote {len(coll.sequences)} sequences "
        f"({args.train} train + {args.test} test, m={args.m}, l={l}, T={args.T}) to {args.out}"
    )
    return 0


def cmd_rls(args) -> int:
    coll = load_dataset(args.data)
    seqs = _select_sequences(coll.sequences, args.seq_start, args.seq_count)
    g = get_nonlinearity(args.nonlinearity)
    state0 = init_state(coll.mixing.l, coll.mixing.m, args.beta, seed=args.seed)
    scores = score_rls_sequences(seqs, args.beta, g, state0.W, state0.P)
    rows = [(args.seq_start + i, raw, al) for i, (raw, al) in enumerate(scores)]
    write_sequence_scores_csv(args.out, rows)
    print(
        f"rls beta={args.beta} over {len(rows)} sequences: "
        f"raw_mse={_fmt(float(np.mean([r for _, r, _ in rows])))} "
        f"aligned_mse={_fmt(float(np.mean([a for _, _, a in rows])))}"
    )
    return 0


def cmd_train(args) -> int:
    coll = load_dataset(args.data)
    seqs = _select_sequences(coll.sequences, args.seq_start, args.seq_count)
    T = seqs[0].T
    g = get_nonlinearity(args.nonlinearity)
    model_seed, train_seed = _derived_seeds(args.seed, 2)
    model = init_model(
        coll.mixing.l, coll.mixing.m, T, g, seed=model_seed, tied=args.tied_weights
    )
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        penalty_lambda=args.penalty_lambda,
        seed=train_seed,
    )
    model, history = train(model, seqs, config)
    save_model(model, args.out)
    history_path = args.history if args.history else f"{args.out}.history.csv"
    with open(history_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss"])
        for epoch, value in enumerate(history, start=1):
            writer.writerow([epoch, _fmt(value)])
    print(
        f"trained {args.epochs} epochs on {len(seqs)} sequences; "
        f"checkpoint {args.out}, history {history_path}"
    )
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    coll = load_dataset(args.data)
    seqs = _select_sequences(coll.sequences, args.seq_start, args.seq_count)
    rows = []
    for i, ds in enumerate(seqs):
        res = forward(model, ds.X)
        rows.append(
            (
                args.seq_start + i,
                raw_mse(ds.sources.S, res.Y),
                aligned_mse(ds.sources.S, res.Y),
            )
        )
    if args.out:
        write_sequence_scores_csv(args.out, rows)
    print(
        f"raw_mse={_fmt(float(np.mean([r for _, r, _ in rows])))} "
        f"aligned_mse={_fmt(float(np.mean([a for _, _, a in rows])))}"
    )
    return 0


def cmd_experiment(args) -> int:
    if args.sweep:
        try:
            sweep = tuple(int(v) for v in args.sweep.split(","))
        except ValueError:
            raise ValueError(f"--sweep must be comma-separated integers, got {args.sweep!r}")
    else:
        sweep = _DEFAULT_SWEEPS[args.kind]
    spec = ExperimentSpec(
        kind=args.kind,
        sweep=sweep,
        sources=args.sources,
        layers=args.layers,
        sensors=args.sensors,
        train_sequences=args.train,
        test_sequences=args.test,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        penalty_lambda=args.penalty_lambda,
        rls_beta=args.beta,
        nonlinearity=args.nonlinearity,
        metric=args.metric,
        tied=args.tied_weights,
        timing=args.timing,
    )
    rows = run_experiment(spec)
    write_results_csv(args.out, spec, rows)
    for r in rows:
        print(
            f"{args.kind} sweep={r.sweep_value}: "
            f"deep_rls_mse={_fmt(r.deep_rls_mse)} rls_mse={_fmt(r.rls_mse)}"
        )
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ubss",
        description="Blind source separation benchmarks: classic RLS tracking "
        "and its trainable unfolded counterpart.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    nl_choices = sorted(NONLINEARITIES)

    p = sub.add_parser("gen", help="generate a dataset file")
    p.add_argument("--m", "--sources", dest="m", type=int, required=True)
    p.add_argument("--l", "--sensors", dest="l", type=int, default=None,
                   help="sensor count (default: sources + 2)")
    p.add_argument("--T", "--layers", dest="T", type=int, required=True,
                   help="time steps per sequence")
    p.add_argument("--train", type=int, default=1000, help="training sequences")
    p.add_argument("--test", type=int, default=100, help="test sequences")
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--center", action="store_true",
                   help="shift sources by -0.5 so they are zero-mean")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("rls", help="score the classic tracker on a dataset")
    p.add_argument("data")
    p.add_argument("--beta", type=float, default=0.99)
    p.add_argument("--nonlinearity", choices=nl_choices, default="tanh")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_seq_range(p)
    p.set_defaults(func=cmd_rls)

    p = sub.add_parser("train", help="train an unfolded network on a dataset")
    p.add_argument("data")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=40)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lambda", dest="penalty_lambda", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nonlinearity", choices=nl_choices, default="tanh")
    p.add_argument("--tied-weights", action="store_true")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", default=None,
                   help="loss-history CSV path (default: <out>.history.csv)")
    _add_seq_range(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("data")
    p.add_argument("--model", required=True)
    p.add_argument("--out", default=None, help="optional per-sequence CSV")
    _add_seq_range(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run a full sweep and write result rows")
    p.add_argument("--kind", choices=sorted(_DEFAULT_SWEEPS), required=True)
    p.add_argument("--sweep", default=None,
                   help="comma-separated sweep values (default per kind)")
    p.add_argument("--sources", type=int, default=2, help="fixed m for fig1")
    p.add_argument("--layers", type=int, default=50, help="fixed T for fig2")
    p.add_argument("--sensors", type=int, default=None)
    p.add_argument("--train", type=int, default=200)
    p.add_argument("--test", type=int, default=50)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=40)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lambda", dest="penalty_lambda", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.99)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nonlinearity", choices=nl_choices, default="tanh")
    p.add_argument("--metric", choices=["raw", "aligned"], default="aligned")
    p.add_argument("--tied-weights", action="store_true")
    p.add_argument("--timing", action="store_true",
                   help="record wall-clock seconds per row (breaks byte-for-byte reproducibility)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericError, SingularMatrixError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
