"""Recursive least squares subspace tracking with an optional output nonlinearity.

The tracker maintains a separating matrix W (l x m, estimates come out as
y = g(W' x)) and the inverse P of the exponentially weighted autocorrelation
of the estimates.  Each sample triggers a rank-one update of both, which is
the Sherman-Morrison form of refitting the weighted least-squares separator.
Oracle routines (`weighted_correlations`, `closed_form_separator`,
`loss_gradient`) compute the same quantities non-recursively for checking.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NumericError, SingularMatrixError

DEFAULT_DELTA = 0.01
COND_LIMIT = 1e12


@dataclass(frozen=True)
class Nonlinearity:
    """An odd elementwise activation with its exact derivative."""

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]


IDENTITY = Nonlinearity("identity", lambda x: x, lambda x: np.ones_like(x))
TANH = Nonlinearity("tanh", np.tanh, lambda x: 1.0 - np.tanh(x) ** 2)

NONLINEARITIES = {"identity": IDENTITY, "tanh": TANH}


def get_nonlinearity(name: str) -> Nonlinearity:
    try:
        return NONLINEARITIES[name]
    except KeyError:
        raise ValueError(
            f"unknown nonlinearity {name!r}, choose from {sorted(NONLINEARITIES)}"
        ) from None


@dataclass
class RlsState:
    """Mutable tracker state: separator W, inverse autocorrelation P, step count."""

    W: np.ndarray
    P: np.ndarray
    beta: float
    t: int = 0
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.P = np.asarray(self.P, dtype=np.float64)
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"forgetting factor must be in (0, 1], got {self.beta}")
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.W.ndim != 2 or self.P.shape != (self.W.shape[1], self.W.shape[1]):
            raise ValueError(
                f"inconsistent state shapes W{self.W.shape}, P{self.P.shape}"
            )

    @property
    def l(self) -> int:
        return self.W.shape[0]

    @property
    def m(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "RlsState":
        return RlsState(self.W.copy(), self.P.copy(), self.beta, self.t, self.delta)


def init_state(l: int, m: int, beta: float, delta: float = DEFAULT_DELTA, seed=0) -> RlsState:
    """Fresh state: W orthonormalized Gaussian, P = I/delta, step counter 0."""
    if m < 1 or l < m:
        raise ValueError(f"need l >= m >= 1, got l={l}, m={m}")
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((l, m)))
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"forgetting factor must be in (0, 1], got {beta}")
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    return RlsState(W=Q, P=np.eye(m) / delta, beta=beta, t=0, delta=delta)


def rls_step(
    state: RlsState, x: np.ndarray, nonlinearity: Nonlinearity = TANH
) -> tuple[RlsState, np.ndarray]:
    """Advance the tracker by one sample, in place; returns (state, estimate y).

    Update order: project and activate, gain from the current inverse
    autocorrelation, rank-one downdate of P (then symmetrize), residual
    against the pre-update separator, rank-one separator correction.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (state.l,):
        raise ValueError(f"sample has shape {x.shape}, expected ({state.l},)")
    step = state.t + 1
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite sample at step {step}", step=step)
    W, P, beta = state.W, state.P, state.beta

    y = nonlinearity.f(W.T @ x)
    h = P @ y
    d = beta + y @ h
    f = h / d
    P_new = (P - np.outer(f, h)) / beta
    P_new = (P_new + P_new.T) * 0.5
    e = x - W @ y
    W_new = W + np.outer(e, f)

    if not np.isfinite(d) or not np.all(np.isfinite(P_new)) or not np.all(np.isfinite(W_new)):
        raise NumericError(f"non-finite update at step {step}", step=step)
    if np.any(np.diag(P_new) <= 0):
        raise NumericError(
            f"inverse autocorrelation lost positive definiteness at step {step}",
            step=step,
        )
    state.W = W_new
    state.P = P_new
    state.t = step
    return state, y


def run_sequence(
    state: RlsState, X: np.ndarray, nonlinearity: Nonlinearity = TANH
) -> tuple[RlsState, np.ndarray, np.ndarray]:
    """Step through the columns of X in time order.

    Returns (state, Y, errs) where Y[:, t] is the estimate at step t and
    errs[t] is the reconstruction error |x(t) - W(t-1) y(t)|_2 against the
    pre-update separator.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != state.l:
        raise ValueError(f"observations have shape {X.shape}, expected ({state.l}, T)")
    T = X.shape[1]
    Y = np.empty((state.m, T))
    errs = np.empty(T)
    for j in range(T):
        W_prev = state.W  # rls_step rebinds, so this snapshot stays valid
        state, y = rls_step(state, X[:, j], nonlinearity)
        Y[:, j] = y
        errs[j] = np.linalg.norm(X[:, j] - W_prev @ y)
    return state, Y, errs


@dataclass
class CorrelationAccumulators:
    """Exponentially weighted autocorrelation of y and cross-correlation of x, y."""

    Cy: np.ndarray
    Cxy: np.ndarray


def weighted_correlations(X: np.ndarray, Y: np.ndarray, beta: float) -> CorrelationAccumulators:
    """Run the decay-and-rank-one recursion over paired columns of X and Y."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[1] != Y.shape[1]:
        raise ValueError(f"mismatched shapes X{X.shape}, Y{Y.shape}")
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"forgetting factor must be in (0, 1], got {beta}")
    m = Y.shape[0]
    l = X.shape[0]
    Cy = np.zeros((m, m))
    Cxy = np.zeros((l, m))
    for t in range(X.shape[1]):
        y = Y[:, t]
        Cy = beta * Cy + np.outer(y, y)
        Cxy = beta * Cxy + np.outer(X[:, t], y)
    return CorrelationAccumulators(Cy, Cxy)


def closed_form_separator(acc: CorrelationAccumulators) -> np.ndarray:
    """Solve for the separator that zeroes the weighted-loss gradient.

    Returns W with the l x m layout used everywhere in this package
    (estimates are y = W' x).
    """
    Cy = np.asarray(acc.Cy, dtype=np.float64)
    cond = np.linalg.cond(Cy)
    if not np.isfinite(cond) or cond >= COND_LIMIT:
        raise SingularMatrixError(
            f"autocorrelation is singular or ill-conditioned (cond ~ {cond:.3e})",
            cond=float(cond),
        )
    Z = np.linalg.solve(Cy, np.asarray(acc.Cxy, dtype=np.float64).T)
    return Z.T


def loss_gradient(W: np.ndarray, acc: CorrelationAccumulators) -> np.ndarray:
    """Gradient of the exponentially weighted reconstruction loss at W.

    W uses the l x m layout, so the gradient is -2 Cxy + 2 W Cy.
    """
    W = np.asarray(W, dtype=np.float64)
    if W.shape != acc.Cxy.shape:
        raise ValueError(f"W has shape {W.shape}, expected {acc.Cxy.shape}")
    return -2.0 * acc.Cxy + 2.0 * W @ acc.Cy
