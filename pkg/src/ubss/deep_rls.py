"""Trainable unfolded RLS network.

Each layer replays one tracker update with its own learnable weight matrix,
bias, and forgetting parameter.  With the weight at identity, the bias at
zero, and the forgetting parameter equal to the classic factor, a forward
pass reproduces the classic tracker exactly; training lets every layer
deviate from that starting point to minimize the accumulated reconstruction
loss (plus a penalty keeping the forgetting parameters in their feasible
interval).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .errors import FormatError, NumericError
from .rls import DEFAULT_DELTA, TANH, Nonlinearity, get_nonlinearity
from .tape import Node, Tape

MODEL_MAGIC = b"UBSSMDL1"
_MODEL_HEADER = struct.Struct("<8sIIII")  # magic, l, m, T, nonlinearity tag
_NONLINEARITY_TAGS = {"identity": 0, "tanh": 1}
_TAG_NAMES = {v: k for k, v in _NONLINEARITY_TAGS.items()}


@dataclass
class LayerParams:
    """Per-layer trainable parameters: weight H (m x m), bias b (m), forgetting omega."""

    H: np.ndarray
    b: np.ndarray
    omega: float


@dataclass
class DeepRlsModel:
    """An unfolded network of fixed depth with frozen initial tracker state."""

    layers: list[LayerParams]
    W0: np.ndarray
    P0: np.ndarray
    g: Nonlinearity = TANH
    tied: bool = False  # all layers share one parameter set

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def l(self) -> int:
        return self.W0.shape[0]

    @property
    def m(self) -> int:
        return self.W0.shape[1]


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 40
    learning_rate: float = 1e-3
    penalty_lambda: float = 1.0
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be nonnegative, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.penalty_lambda < 0:
            raise ValueError(f"penalty_lambda must be nonnegative, got {self.penalty_lambda}")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("adam betas must lie in (0, 1)")
        if self.adam_eps <= 0:
            raise ValueError(f"adam_eps must be positive, got {self.adam_eps}")


@dataclass
class LayerTrace:
    """Per-layer snapshots from one forward pass (lists of length depth)."""

    ys: list[np.ndarray] = field(default_factory=list)
    es: list[np.ndarray] = field(default_factory=list)
    Ws: list[np.ndarray] = field(default_factory=list)
    Ps: list[np.ndarray] = field(default_factory=list)


@dataclass
class ForwardResult:
    """Outputs of one forward pass; node handles are set only when taped."""

    Y: np.ndarray
    trace: LayerTrace
    recon_terms: np.ndarray  # per-layer ||x(k) - W(k) y(k)||^2, post-update W
    omegas: np.ndarray
    tape: Tape | None = None
    param_nodes: dict[tuple[int, str], Node] | None = None
    recon_nodes: list[Node] | None = None
    omega_nodes: list[Node] | None = None
    loss_node: Node | None = None


def init_model(
    l: int,
    m: int,
    T: int,
    g: Nonlinearity = TANH,
    seed=0,
    delta: float = DEFAULT_DELTA,
    tied: bool = False,
) -> DeepRlsModel:
    """Network whose layers start at the classic tracker: H near identity,
    zero bias, forgetting parameter 0.99; W0 orthonormalized Gaussian,
    P0 = I/delta."""
    if m < 1 or l < m:
        raise ValueError(f"need l >= m >= 1, got l={l}, m={m}")
    if T < 1:
        raise ValueError(f"depth must be positive, got T={T}")
    rng = np.random.default_rng(seed)
    W0, _ = np.linalg.qr(rng.standard_normal((l, m)))
    P0 = np.eye(m) / delta

    def fresh_layer() -> LayerParams:
        return LayerParams(
            H=np.eye(m) + 0.01 * rng.standard_normal((m, m)),
            b=np.zeros(m),
            omega=0.99,
        )

    if tied:
        shared = fresh_layer()
        layers = [shared] * T
    else:
        layers = [fresh_layer() for _ in range(T)]
    return DeepRlsModel(layers, W0, P0, g, tied)


def forward(model: DeepRlsModel, X: np.ndarray, tape: Tape | None = None) -> ForwardResult:
    """Run X (l x depth) through the network, one column per layer.

    The layer applies its weight on the source side of the inherited
    separator, so the matrix that projects the sample is also the one the
    residual and the rank-one correction use.  When `tape` is given, every
    operation is recorded so the loss can be differentiated w.r.t. the
    layer parameters.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != model.l:
        raise ValueError(f"observations have shape {X.shape}, expected ({model.l}, T)")
    if X.shape[1] != model.depth:
        raise ValueError(
            f"depth mismatch: model has {model.depth} layers, sequence has {X.shape[1]} steps"
        )
    if tape is None:
        return _forward_plain(model, X)
    return _forward_taped(model, X, tape)


def _forward_plain(model: DeepRlsModel, X: np.ndarray) -> ForwardResult:
    T = model.depth
    act = model.g.f
    W, P = model.W0, model.P0
    trace = LayerTrace()
    recon = np.empty(T)
    omegas = np.empty(T)
    for k in range(T):
        x = X[:, k]
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite sample at layer {k + 1}", step=k + 1)
        layer = model.layers[k]
        H, b, w = layer.H, layer.b, layer.omega

        q = W.T @ x
        y = act(H @ q + b)
        h = P @ y
        d = w + y @ h
        if d == 0.0 or w == 0.0:
            raise NumericError(f"zero divisor at layer {k + 1}", step=k + 1)
        f = h / d
        P = (P - np.outer(f, h)) / w
        P = (P + P.T) * 0.5
        M = W @ H.T
        e = x - M @ y
        W = M + np.outer(e, f)
        r = x - W @ y
        recon[k] = r @ r
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(P))):
            raise NumericError(f"non-finite values at layer {k + 1}", step=k + 1)
        omegas[k] = w
        trace.ys.append(y)
        trace.es.append(e)
        trace.Ws.append(W)
        trace.Ps.append(P)
    return ForwardResult(np.stack(trace.ys, axis=1), trace, recon, omegas)


def _forward_taped(model: DeepRlsModel, X: np.ndarray, tp: Tape) -> ForwardResult:
    T = model.depth
    if model.g.name == "tanh":
        act = tp.tanh
    elif model.g.name == "identity":
        act = tp.identity
    else:
        raise ValueError(f"nonlinearity {model.g.name!r} has no recorded op")

    W = tp.constant(model.W0)
    P = tp.constant(model.P0)
    param_nodes: dict[tuple[int, str], Node] = {}
    omega_nodes: list[Node] = []
    recon_nodes: list[Node] = []
    trace = LayerTrace()
    recon = np.empty(T)
    omegas = np.empty(T)

    for k in range(T):
        if model.tied and k > 0:
            Hn = param_nodes[(0, "H")]
            bn = param_nodes[(0, "b")]
            wn = param_nodes[(0, "omega")]
        else:
            layer = model.layers[k]
            Hn = tp.input(layer.H)
            bn = tp.input(layer.b)
            wn = tp.input(layer.omega)
            param_nodes[(k, "H")] = Hn
            param_nodes[(k, "b")] = bn
            param_nodes[(k, "omega")] = wn
        try:
            xk = tp.constant(X[:, k])
            q = tp.matmul(tp.transpose(W), xk)
            y = act(tp.add(tp.matmul(Hn, q), bn))
            h = tp.matmul(P, y)
            d = tp.add(wn, tp.dot(y, h))
            f = tp.scalar_divide(h, d)
            Pn = tp.scalar_divide(tp.subtract(P, tp.outer(f, h)), wn)
            Pn = tp.scale(tp.add(Pn, tp.transpose(Pn)), 0.5)
            M = tp.matmul(W, tp.transpose(Hn))
            e = tp.subtract(xk, tp.matmul(M, y))
            Wn = tp.add(M, tp.outer(e, f))
            r = tp.subtract(xk, tp.matmul(Wn, y))
            term = tp.squared_norm(r)
        except NumericError as exc:
            if exc.step is None:
                raise NumericError(f"{exc} at layer {k + 1}", step=k + 1) from None
            raise
        if not (np.all(np.isfinite(Wn.value)) and np.all(np.isfinite(Pn.value))):
            raise NumericError(f"non-finite values at layer {k + 1}", step=k + 1)
        W, P = Wn, Pn
        recon[k] = term.value
        omegas[k] = wn.value
        recon_nodes.append(term)
        omega_nodes.append(wn)
        trace.ys.append(y.value)
        trace.es.append(e.value)
        trace.Ws.append(Wn.value)
        trace.Ps.append(Pn.value)
    return ForwardResult(
        np.stack(trace.ys, axis=1),
        trace,
        recon,
        omegas,
        tape=tp,
        param_nodes=param_nodes,
        recon_nodes=recon_nodes,
        omega_nodes=omega_nodes,
    )


def omega_penalty(omegas, penalty_lambda: float) -> float:
    """Feasibility penalty: lambda * sum of the distances of each forgetting
    parameter below 0 or above 1; exactly zero inside [0, 1]."""
    if penalty_lambda < 0:
        raise ValueError(f"penalty_lambda must be nonnegative, got {penalty_lambda}")
    om = np.asarray(omegas, dtype=np.float64)
    return float(
        penalty_lambda * np.sum(np.maximum(-om, 0.0) + np.maximum(om - 1.0, 0.0))
    )


def loss(result: ForwardResult, penalty_lambda: float) -> float:
    """Accumulated per-layer reconstruction loss plus the forgetting penalty.

    For a taped forward pass this also records the combination on the tape
    and sets `result.loss_node`; call it once per recorded pass.
    """
    if penalty_lambda < 0:
        raise ValueError(f"penalty_lambda must be nonnegative, got {penalty_lambda}")
    if result.tape is None:
        return float(np.sum(result.recon_terms)) + omega_penalty(
            result.omegas, penalty_lambda
        )
    tp = result.tape
    total = result.recon_nodes[0]
    for nd in result.recon_nodes[1:]:
        total = tp.add(total, nd)
    if penalty_lambda != 0.0:
        one = tp.constant(1.0)
        pen = None
        for wn in result.omega_nodes:
            p_k = tp.add(tp.relu(tp.scale(wn, -1.0)), tp.relu(tp.subtract(wn, one)))
            pen = p_k if pen is None else tp.add(pen, p_k)
        total = tp.add(total, tp.scale(pen, penalty_lambda))
    result.loss_node = total
    return float(total.value)


class AdamOptimizer:
    """Adam with bias correction over a dict of named float64 arrays."""

    def __init__(
        self,
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> dict:
        """One update; returns new parameter arrays, advances the moments."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        out = {}
        for key, p in params.items():
            g = np.asarray(grads[key], dtype=np.float64)
            if g.shape != np.shape(p):
                raise ValueError(f"gradient shape {g.shape} != param shape {np.shape(p)}")
            m = self.m.get(key)
            v = self.v.get(key)
            if m is None:
                m = np.zeros_like(g)
                v = np.zeros_like(g)
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            self.m[key] = m
            self.v[key] = v
            out[key] = p - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return out


def _param_range(model: DeepRlsModel) -> range:
    return range(1 if model.tied else model.depth)


def _param_arrays(model: DeepRlsModel) -> dict:
    out = {}
    for k in _param_range(model):
        layer = model.layers[k]
        out[(k, "H")] = layer.H
        out[(k, "b")] = layer.b
        out[(k, "omega")] = np.asarray(layer.omega, dtype=np.float64)
    return out


def _write_params(model: DeepRlsModel, params: dict) -> None:
    for (k, name), val in params.items():
        layer = model.layers[k]
        if name == "H":
            layer.H = val
        elif name == "b":
            layer.b = val
        else:
            layer.omega = float(val)


def train(
    model: DeepRlsModel,
    train_datasets,
    config: TrainConfig,
) -> tuple[DeepRlsModel, list[float]]:
    """Minibatch training over whole sequences.

    Per epoch the sequences are reshuffled; per batch, each member sequence
    gets its own tape for one forward/backward pass, the parameter gradients
    are averaged across the batch, and one Adam step is applied.  Returns the
    model (updated in place) and the mean per-sequence loss of each epoch.
    """
    if not train_datasets:
        raise ValueError("empty training set")
    depth = model.depth
    for i, ds in enumerate(train_datasets):
        if ds.X.shape != (model.l, depth):
            raise ValueError(
                f"sequence {i} has shape {ds.X.shape}, expected ({model.l}, {depth})"
            )
    rng = np.random.default_rng(config.seed)
    opt = AdamOptimizer(
        config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps
    )
    params = _param_arrays(model)
    history: list[float] = []
    n = len(train_datasets)
    for _epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_total = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            grad_sums: dict = {}
            for idx in batch:
                tape = Tape()
                res = forward(model, train_datasets[int(idx)].X, tape)
                epoch_total += loss(res, config.penalty_lambda)
                node_grads = tape.backward(res.loss_node)
                for key, node in res.param_nodes.items():
                    g = node_grads[node.id]
                    cur = grad_sums.get(key)
                    grad_sums[key] = g if cur is None else cur + g
            inv = 1.0 / len(batch)
            grads = {key: g * inv for key, g in grad_sums.items()}
            params = opt.step(params, grads)
            _write_params(model, params)
        history.append(epoch_total / n)
    return model, history


# -- metrics -------------------------------------------------------------------


def raw_mse(S: np.ndarray, Y: np.ndarray) -> float:
    """Mean over time of ||s(k) - y(k)||^2, rows matched as given."""
    S = np.asarray(S, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if S.shape != Y.shape or S.ndim != 2:
        raise ValueError(f"shape mismatch S{S.shape} vs Y{Y.shape}")
    return float(np.sum((S - Y) ** 2) / S.shape[1])


def aligned_mse(S: np.ndarray, Y: np.ndarray) -> float:
    """raw_mse minimized over signed permutations of the output rows.

    Separation is blind to the order and sign of the recovered rows; this
    searches all m! * 2^m signed assignments (the per-row sign choice
    factorizes, so only permutations are enumerated).  Supported for m <= 6.
    """
    S = np.asarray(S, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if S.shape != Y.shape or S.ndim != 2:
        raise ValueError(f"shape mismatch S{S.shape} vs Y{Y.shape}")
    m, T = S.shape
    if m > 6:
        raise ValueError(f"alignment search supports up to 6 sources, got m={m}")
    SS = np.sum(S * S, axis=1)
    YY = np.sum(Y * Y, axis=1)
    SY = S @ Y.T
    # cost of assigning output row j (with its best sign) to source row i
    cost = (SS[:, None] + YY[None, :] - 2.0 * np.abs(SY)) / T
    best = min(
        sum(cost[i, p[i]] for i in range(m)) for p in permutations(range(m))
    )
    return float(max(best, 0.0))


def evaluate(model: DeepRlsModel, test_datasets) -> dict[str, float]:
    """Mean raw and sign/permutation-aligned MSE of the model's estimates
    against the ground-truth sources, over a list of sequences."""
    if not test_datasets:
        raise ValueError("empty evaluation set")
    raws = []
    aligneds = []
    for i, ds in enumerate(test_datasets):
        if ds.sources is None:
            raise ValueError(f"sequence {i} carries no ground-truth sources")
        res = forward(model, ds.X)
        raws.append(raw_mse(ds.sources.S, res.Y))
        aligneds.append(aligned_mse(ds.sources.S, res.Y))
    return {"raw_mse": float(np.mean(raws)), "aligned_mse": float(np.mean(aligneds))}


# -- checkpoint codec ------------------------------------------------------------


def save_model(model: DeepRlsModel, path) -> None:
    """Write a checkpoint; tied models are materialized layer by layer."""
    tag = _NONLINEARITY_TAGS.get(model.g.name)
    if tag is None:
        raise ValueError(f"nonlinearity {model.g.name!r} has no checkpoint tag")
    with open(path, "wb") as fh:
        fh.write(_MODEL_HEADER.pack(MODEL_MAGIC, model.l, model.m, model.depth, tag))
        for layer in model.layers:
            fh.write(np.ascontiguousarray(layer.H, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(layer.b, dtype="<f8").tobytes())
            fh.write(np.float64(layer.omega).astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(model.W0, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.P0, dtype="<f8").tobytes())


def load_model(path) -> DeepRlsModel:
    """Read a checkpoint written by save_model (models load untied)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _MODEL_HEADER.size:
        raise FormatError(
            f"file is {len(raw)} bytes, shorter than the {_MODEL_HEADER.size}-byte header",
            field="header",
        )
    magic, l, m, T, tag = _MODEL_HEADER.unpack_from(raw)
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}", field="magic")
    if m < 1:
        raise FormatError(f"source count m={m} must be positive", field="m")
    if l < m:
        raise FormatError(f"sensor count l={l} is smaller than m={m}", field="l")
    if T < 1:
        raise FormatError(f"depth T={T} must be positive", field="T")
    if tag not in _TAG_NAMES:
        raise FormatError(f"unknown nonlinearity tag {tag}", field="nonlinearity")

    offset = _MODEL_HEADER.size

    def take(count: int, what: str) -> np.ndarray:
        nonlocal offset
        nbytes = count * 8
        if len(raw) - offset < nbytes:
            raise FormatError(
                f"payload truncated while reading {what}: "
                f"need {nbytes} bytes, have {len(raw) - offset}",
                field=what,
            )
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        offset += nbytes
        return arr

    layers = []
    for k in range(T):
        H = take(m * m, f"layer {k} H").reshape(m, m).copy()
        b = take(m, f"layer {k} b").copy()
        omega = float(take(1, f"layer {k} omega")[0])
        layers.append(LayerParams(H, b, omega))
    W0 = take(l * m, "W0").reshape(l, m).copy()
    P0 = take(m * m, "P0").reshape(m, m).copy()
    if offset != len(raw):
        raise FormatError(
            f"{len(raw) - offset} trailing bytes after the declared payload",
            field="payload",
        )
    return DeepRlsModel(layers, W0, P0, get_nonlinearity(_TAG_NAMES[tag]), tied=False)
