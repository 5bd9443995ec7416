"""End-to-end benchmark sweeps: generate data, train, compare against classic RLS.

A sweep varies either the network depth (kind "fig1") or the number of
sources (kind "fig2").  Every sweep point regenerates its data from seeds
derived deterministically from (experiment seed, kind, sweep value), trains
a fresh network, and scores both methods on the held-out sequences with the
same metric, so repeated runs reproduce the result rows exactly.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from .deep_rls import aligned_mse, evaluate, init_model, raw_mse, train, TrainConfig
from .errors import NumericError
from .rls import Nonlinearity, RlsState, get_nonlinearity, run_sequence
from .signal_model import GeneratorConfig, MixtureDataset, generate_collection

EXPERIMENT_KINDS = ("fig1", "fig2")
_KIND_CODES = {"fig1": 1, "fig2": 2}

RESULT_COLUMNS = [
    "sweep_value",
    "deep_rls_mse",
    "rls_mse",
    "wall_seconds",
    "seed",
    "kind",
    "sources",
    "sensors",
    "layers",
    "train_sequences",
    "test_sequences",
    "epochs",
    "batch_size",
    "learning_rate",
    "penalty_lambda",
    "rls_beta",
    "nonlinearity",
    "metric",
    "noise_sigma",
    "tied_weights",
]


@dataclass
class ExperimentSpec:
    kind: str  # "fig1": sweep depth at fixed sources; "fig2": sweep sources at fixed depth
    sweep: tuple[int, ...]
    sources: int = 2  # fixed m for fig1
    layers: int = 50  # fixed T for fig2
    sensors: int | None = None  # default m + 2
    train_sequences: int = 200
    test_sequences: int = 50
    noise_sigma: float = 0.0
    seed: int = 0
    epochs: int = 50
    batch_size: int = 40
    learning_rate: float = 1e-3
    penalty_lambda: float = 1.0
    rls_beta: float = 0.99
    nonlinearity: str = "tanh"
    metric: str = "aligned"
    tied: bool = False
    timing: bool = False  # wall_seconds stays 0.0 unless enabled, keeping output bytes reproducible

    def __post_init__(self):
        self.sweep = tuple(int(v) for v in self.sweep)
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"kind must be one of {EXPERIMENT_KINDS}, got {self.kind!r}")
        if not self.sweep:
            raise ValueError("sweep must contain at least one value")
        if any(v < 1 for v in self.sweep) or any(
            b <= a for a, b in zip(self.sweep, self.sweep[1:])
        ):
            raise ValueError(f"sweep values must be strictly increasing positive integers, got {self.sweep}")
        if self.metric not in ("raw", "aligned"):
            raise ValueError(f"metric must be 'raw' or 'aligned', got {self.metric!r}")
        if not 0.0 < self.rls_beta <= 1.0:
            raise ValueError(f"rls_beta must be in (0, 1], got {self.rls_beta}")
        get_nonlinearity(self.nonlinearity)  # validates the name

    def point_dims(self, value: int) -> tuple[int, int, int]:
        """Resolve (m, l, T) for one sweep value."""
        if self.kind == "fig1":
            m, T = self.sources, value
        else:
            m, T = value, self.layers
        l = self.sensors if self.sensors is not None else m + 2
        if l < m:
            raise ValueError(f"need sensors >= sources, got l={l}, m={m}")
        return m, l, T


@dataclass
class ResultRow:
    sweep_value: int
    deep_rls_mse: float
    rls_mse: float
    wall_seconds: float
    seed: int
    sources: int
    sensors: int
    layers: int


def score_rls_sequences(
    datasets: list[MixtureDataset],
    beta: float,
    nonlinearity: Nonlinearity,
    W0: np.ndarray,
    P0: np.ndarray,
) -> list[tuple[float, float]]:
    """Run the classic tracker from (W0, P0) over each sequence.

    Returns per-sequence (raw, aligned) MSE against the ground-truth sources.
    """
    scores = []
    for ds in datasets:
        state = RlsState(W=W0.copy(), P=P0.copy(), beta=beta)
        _, Y, _ = run_sequence(state, ds.X, nonlinearity)
        scores.append((raw_mse(ds.sources.S, Y), aligned_mse(ds.sources.S, Y)))
    return scores


def _point_seeds(spec: ExperimentSpec, value: int) -> tuple[int, int, int]:
    words = np.random.SeedSequence(
        (spec.seed, _KIND_CODES[spec.kind], value)
    ).generate_state(3)
    return int(words[0]), int(words[1]), int(words[2])


def run_experiment(spec: ExperimentSpec) -> list[ResultRow]:
    rows = []
    g = get_nonlinearity(spec.nonlinearity)
    for value in spec.sweep:
        m, l, T = spec.point_dims(value)
        data_seed, model_seed, train_seed = _point_seeds(spec, value)
        started = time.perf_counter()

        coll = generate_collection(
            GeneratorConfig(
                m=m,
                l=l,
                T=T,
                num_train_sequences=spec.train_sequences,
                num_test_sequences=spec.test_sequences,
                noise_sigma=spec.noise_sigma,
                master_seed=data_seed,
            )
        )
        train_seqs, test_seqs = coll.split(spec.train_sequences)

        model = init_model(l, m, T, g, seed=model_seed, tied=spec.tied)
        config = TrainConfig(
            epochs=spec.epochs,
            batch_size=spec.batch_size,
            learning_rate=spec.learning_rate,
            penalty_lambda=spec.penalty_lambda,
            seed=train_seed,
        )
        train(model, train_seqs, config)
        deep_metrics = evaluate(model, test_seqs)
        deep_mse = deep_metrics[f"{spec.metric}_mse"]

        # Baseline starts from the same frozen initial state the network uses.
        rls = score_rls_sequences(test_seqs, spec.rls_beta, g, model.W0, model.P0)
        col = 0 if spec.metric == "raw" else 1
        rls_mse = float(np.mean([s[col] for s in rls]))

        wall = time.perf_counter() - started if spec.timing else 0.0
        for name, val in (("deep_rls_mse", deep_mse), ("rls_mse", rls_mse)):
            if not np.isfinite(val) or val < 0:
                raise NumericError(f"{name} is {val} at sweep value {value}")
        rows.append(
            ResultRow(
                sweep_value=value,
                deep_rls_mse=deep_mse,
                rls_mse=rls_mse,
                wall_seconds=wall,
                seed=spec.seed,
                sources=m,
                sensors=l,
                layers=T,
            )
        )
    return rows


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def write_results_csv(path, spec: ExperimentSpec, rows: list[ResultRow]) -> None:
    """Result rows plus every hyperparameter, one column each."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for r in rows:
            writer.writerow(
                [
                    r.sweep_value,
                    _fmt(r.deep_rls_mse),
                    _fmt(r.rls_mse),
                    _fmt(r.wall_seconds),
                    r.seed,
                    spec.kind,
                    r.sources,
                    r.sensors,
                    r.layers,
                    spec.train_sequences,
                    spec.test_sequences,
                    spec.epochs,
                    spec.batch_size,
                    _fmt(spec.learning_rate),
                    _fmt(spec.penalty_lambda),
                    _fmt(spec.rls_beta),
                    spec.nonlinearity,
                    spec.metric,
                    _fmt(spec.noise_sigma),
                    int(spec.tied),
                ]
            )


def write_sequence_scores_csv(path, scores: list[tuple[int, float, float]]) -> None:
    """Per-sequence metric rows: (sequence index, raw MSE, aligned MSE)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sequence", "raw_mse", "aligned_mse"])
        for idx, raw, aligned in scores:
            writer.writerow([idx, _fmt(raw), _fmt(aligned)])
