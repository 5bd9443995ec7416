"""Synthetic source/mixture generation and the binary dataset container.

Sources are i.i.d. uniform draws (sub-Gaussian, negative excess kurtosis),
mixed through a fixed Gaussian sensing matrix with optional additive white
noise.  A dataset file bundles one mixing matrix with any number of
equal-length source/observation sequence pairs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError

DATASET_MAGIC = b"UBSSDAT1"
_DATASET_HEADER = struct.Struct("<8sIIIIdQ")  # magic, m, l, T, count, sigma, seed

# Anything np.random.default_rng accepts (int, SeedSequence, Generator, ...).
Seed = "int | np.random.SeedSequence"


@dataclass
class SourceSequence:
    """m independent source signals over T time steps; rows are sources."""

    S: np.ndarray

    def __post_init__(self):
        self.S = np.asarray(self.S, dtype=np.float64)
        if self.S.ndim != 2:
            raise ValueError(f"source matrix must be 2-d, got shape {self.S.shape}")

    @property
    def m(self) -> int:
        return self.S.shape[0]

    @property
    def T(self) -> int:
        return self.S.shape[1]


@dataclass
class MixingMatrix:
    """Sensing matrix mapping m sources to l >= m sensor channels."""

    A: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        if self.A.ndim != 2:
            raise ValueError(f"mixing matrix must be 2-d, got shape {self.A.shape}")
        if self.A.shape[0] < self.A.shape[1]:
            raise ValueError(
                f"need at least as many sensors as sources, got {self.A.shape}"
            )

    @property
    def l(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[1]


@dataclass
class MixtureDataset:
    """One observed sequence: X[:, t] = A @ S[:, t] + noise."""

    sources: SourceSequence
    mixing: MixingMatrix
    noise_sigma: float
    X: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)

    @property
    def T(self) -> int:
        return self.X.shape[1]


@dataclass
class GeneratorConfig:
    """Sizes and seeds for one reproducible train/test data build."""

    m: int
    l: int
    T: int
    num_train_sequences: int
    num_test_sequences: int
    noise_sigma: float = 0.0
    master_seed: int = 0
    center: bool = False  # subtract 0.5 so sources become zero-mean

    def __post_init__(self):
        for name in ("m", "l", "T", "num_train_sequences", "num_test_sequences"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.l < self.m:
            raise ValueError(f"need l >= m, got l={self.l}, m={self.m}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be nonnegative, got {self.noise_sigma}")


@dataclass
class MixtureCollection:
    """A mixing matrix shared by a list of equal-length sequences."""

    mixing: MixingMatrix
    noise_sigma: float
    master_seed: int
    sequences: list[MixtureDataset] = field(default_factory=list)

    def split(self, num_train: int) -> tuple[list[MixtureDataset], list[MixtureDataset]]:
        """First `num_train` sequences are training, the rest are test."""
        if not 0 <= num_train <= len(self.sequences):
            raise ValueError(
                f"num_train={num_train} out of range for {len(self.sequences)} sequences"
            )
        return self.sequences[:num_train], self.sequences[num_train:]


def generate_sources(m: int, T: int, seed) -> SourceSequence:
    """Draw an m x T matrix of i.i.d. uniform [0, 1) samples."""
    if m < 1 or T < 1:
        raise ValueError(f"source dimensions must be positive, got m={m}, T={T}")
    rng = np.random.default_rng(seed)
    return SourceSequence(rng.random((m, T)))


def generate_mixing(l: int, m: int, seed) -> MixingMatrix:
    """Draw an l x m matrix of i.i.d. standard normal entries, full column rank."""
    if m < 1:
        raise ValueError(f"source count must be positive, got m={m}")
    if l < m:
        raise ValueError(f"need at least as many sensors as sources, got l={l}, m={m}")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((l, m))
    # Rank deficiency has probability zero for Gaussian draws; redraw regardless.
    while np.linalg.matrix_rank(A) < m:
        A = rng.standard_normal((l, m))
    return MixingMatrix(A)


def mix(
    sources: SourceSequence,
    mixing: MixingMatrix,
    noise_sigma: float = 0.0,
    seed=0,
) -> MixtureDataset:
    """Form observations X[:, t] = A @ s(t) + sigma * z(t) with Gaussian z."""
    if mixing.m != sources.m:
        raise ValueError(
            f"mixing expects {mixing.m} sources but sequence has {sources.m}"
        )
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be nonnegative, got {noise_sigma}")
    X = mixing.A @ sources.S
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        X = X + noise_sigma * rng.standard_normal(X.shape)
    return MixtureDataset(sources, mixing, float(noise_sigma), X)


def generate_collection(config: GeneratorConfig) -> MixtureCollection:
    """Build the full train+test collection for a config.

    The mixing matrix is drawn once and shared by every sequence.  Per-sequence
    source and noise seeds are derived from the master seed, so any sequence is
    reproducible independently of the others.  Training sequences come first.
    """
    root = np.random.SeedSequence(config.master_seed)
    mixing_ss, source_ss, noise_ss = root.spawn(3)
    mixing = generate_mixing(config.l, config.m, mixing_ss)
    n = config.num_train_sequences + config.num_test_sequences
    source_children = source_ss.spawn(n)
    noise_children = noise_ss.spawn(n)
    sequences = []
    for i in range(n):
        src = generate_sources(config.m, config.T, source_children[i])
        if config.center:
            src = SourceSequence(src.S - 0.5)
        sequences.append(mix(src, mixing, config.noise_sigma, noise_children[i]))
    return MixtureCollection(mixing, config.noise_sigma, config.master_seed, sequences)


def _as_collection(dataset) -> MixtureCollection:
    if isinstance(dataset, MixtureCollection):
        return dataset
    if isinstance(dataset, MixtureDataset):
        return MixtureCollection(
            dataset.mixing, dataset.noise_sigma, 0, [dataset]
        )
    raise TypeError(f"cannot save object of type {type(dataset).__name__}")


def save_dataset(dataset, path) -> None:
    """Write a MixtureCollection (or a single MixtureDataset) to `path`.

    Layout: header (magic, m, l, T, sequence count, noise sigma, master seed),
    then A row-major, then per sequence S and X with one time step contiguous.
    All numbers little-endian; matrices as f64.
    """
    coll = _as_collection(dataset)
    if not coll.sequences:
        raise ValueError("cannot save an empty collection")
    mixing = coll.mixing
    T = coll.sequences[0].T
    for i, ds in enumerate(coll.sequences):
        if ds.mixing.A.shape != mixing.A.shape or not np.array_equal(ds.mixing.A, mixing.A):
            raise ValueError(f"sequence {i} does not share the collection mixing matrix")
        if ds.sources.m != mixing.m or ds.X.shape != (mixing.l, T) or ds.sources.T != T:
            raise ValueError(f"sequence {i} has inconsistent dimensions")
        if ds.noise_sigma != coll.noise_sigma:
            raise ValueError(f"sequence {i} has a different noise_sigma")
    if not 0 <= coll.master_seed < 2**64:
        raise ValueError("master_seed must fit in an unsigned 64-bit field")
    header = _DATASET_HEADER.pack(
        DATASET_MAGIC,
        mixing.m,
        mixing.l,
        T,
        len(coll.sequences),
        float(coll.noise_sigma),
        coll.master_seed,
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(mixing.A, dtype="<f8").tobytes())
        for ds in coll.sequences:
            f.write(np.asarray(ds.sources.S, dtype="<f8").tobytes(order="F"))
            f.write(np.asarray(ds.X, dtype="<f8").tobytes(order="F"))


def load_dataset(path) -> MixtureCollection:
    """Read a dataset file back; inverse of save_dataset, bit-exact."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _DATASET_HEADER.size:
        raise FormatError(
            f"file is {len(raw)} bytes, shorter than the {_DATASET_HEADER.size}-byte header",
            field="header",
        )
    magic, m, l, T, count, noise_sigma, master_seed = _DATASET_HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {DATASET_MAGIC!r}", field="magic")
    if m < 1:
        raise FormatError(f"source count m={m} must be positive", field="m")
    if l < m:
        raise FormatError(f"sensor count l={l} is smaller than m={m}", field="l")
    if T < 1:
        raise FormatError(f"sequence length T={T} must be positive", field="T")
    if count < 1:
        raise FormatError("sequence_count must be positive", field="sequence_count")
    if not np.isfinite(noise_sigma) or noise_sigma < 0:
        raise FormatError(f"noise_sigma={noise_sigma} invalid", field="noise_sigma")

    offset = _DATASET_HEADER.size
    a_bytes = l * m * 8
    s_bytes = m * T * 8
    x_bytes = l * T * 8

    def take(nbytes: int, what: str) -> bytes:
        nonlocal offset
        if len(raw) - offset < nbytes:
            raise FormatError(
                f"payload truncated while reading {what}: "
                f"need {nbytes} bytes, have {len(raw) - offset}",
                field=what,
            )
        chunk = raw[offset : offset + nbytes]
        offset += nbytes
        return chunk

    A = np.frombuffer(take(a_bytes, "A"), dtype="<f8").reshape(l, m)
    mixing = MixingMatrix(A.copy())
    sequences = []
    for i in range(count):
        S = np.frombuffer(take(s_bytes, f"sequence {i} S"), dtype="<f8")
        X = np.frombuffer(take(x_bytes, f"sequence {i} X"), dtype="<f8")
        sequences.append(
            MixtureDataset(
                SourceSequence(S.reshape((m, T), order="F").copy()),
                mixing,
                float(noise_sigma),
                X.reshape((l, T), order="F").copy(),
            )
        )
    if offset != len(raw):
        raise FormatError(
            f"{len(raw) - offset} trailing bytes after the declared payload",
            field="payload",
        )
    return MixtureCollection(mixing, float(noise_sigma), master_seed, sequences)
