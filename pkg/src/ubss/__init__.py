"""Blind source separation via recursive least squares nonlinear PCA,
with a trainable unfolded variant and benchmark tooling."""

from .errors import FormatError, NumericError, SingularMatrixError
from .signal_model import (
    GeneratorConfig,
    MixingMatrix,
    MixtureCollection,
    MixtureDataset,
    SourceSequence,
    generate_collection,
    generate_mixing,
    generate_sources,
    load_dataset,
    mix,
    save_dataset,
)
from .rls import (
    CorrelationAccumulators,
    IDENTITY,
    NONLINEARITIES,
    Nonlinearity,
    RlsState,
    TANH,
    closed_form_separator,
    get_nonlinearity,
    init_state,
    loss_gradient,
    rls_step,
    run_sequence,
    weighted_correlations,
)
from .tape import Node, Tape
from .deep_rls import (
    AdamOptimizer,
    DeepRlsModel,
    ForwardResult,
    LayerParams,
    LayerTrace,
    TrainConfig,
    aligned_mse,
    evaluate,
    forward,
    init_model,
    load_model,
    loss,
    omega_penalty,
    raw_mse,
    save_model,
    train,
)
from .bench import (
    ExperimentSpec,
    ResultRow,
    run_experiment,
    score_rls_sequences,
    write_results_csv,
)

__version__ = "0.1.0"
