"""Echo state network with sparse random reservoir and quadratic readout.

Reservoir update (leaky, tanh by default):

    h_t = phi * f( (delta / lambda_W) * W h_{t-1} + U x_t ) + (1 - phi) * h_{t-1}

Readout:  y_t = V1 h_t + V2 (h_t * h_t), trained by ridge regression on the stacked
design [h_t, h_t * h_t].
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence
import warnings

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as splinalg

from WindESN.errors import ConfigurationError, InsufficientHistoryError, InvalidDataError, \
    SchemaError, SingularDesignError, WindEsnWarning

Activation = Callable[[np.ndarray], np.ndarray]

# Eigen-solver controls for the spectral radius of W
EIG_TOL = 1e-10
EIG_MAXITER = 10_000
ZERO_RADIUS = 1e-12
DENSE_EIG_MAX = 300

CHOLESKY_RETRIES = 10


@dataclass(frozen=True, slots=True)
class EsnSpec:
    """Reservoir hyperparameters.

    Defaults are the cross-validated values for the hourly wind field (n_h = 2500);
    desk-scale runs override ``reservoir_size``.

    Attributes:
        reservoir_size: Number of reservoir units n_h.
        n_lags: Number of lagged outputs m in each input vector.
        leak_rate: phi in [0, 1]; 0 freezes the state.
        spectral_scale: delta > 0, recurrent weights are scaled by delta / lambda_W.
        w_scale, u_scale: Magnitudes a_w, a_u of the uniform nonzero entries.
        w_density, u_density: Connection probabilities pi_w, pi_u.
        ridge: Ridge penalty lambda >= 0.
        seed: RNG seed for W and U.
        burn: Leading states excluded from the ridge design.
    """
    reservoir_size: int = 2500
    n_lags: int = 1
    leak_rate: float = 1.0
    spectral_scale: float = 0.9
    w_scale: float = 0.05
    u_scale: float = 0.01
    w_density: float = 0.1
    u_density: float = 0.01
    ridge: float = 0.15
    seed: int = 0
    burn: int = 100

    def __post_init__(self):
        if int(self.reservoir_size) < 1:
            raise ConfigurationError(f"reservoir_size must be >= 1, got {self.reservoir_size}.")
        if int(self.n_lags) < 1:
            raise ConfigurationError(f"n_lags must be >= 1, got {self.n_lags}.")
        if not (0.0 <= self.leak_rate <= 1.0):
            raise ConfigurationError(f"leak_rate must be in [0, 1], got {self.leak_rate}.")
        if not (self.spectral_scale > 0):
            raise ConfigurationError(f"spectral_scale must be > 0, got {self.spectral_scale}.")
        for name in ("w_scale", "u_scale"):
            if not (getattr(self, name) >= 0):
                raise ConfigurationError(f"{name} must be >= 0, got {getattr(self, name)}.")
        for name in ("w_density", "u_density"):
            if not (0.0 <= getattr(self, name) <= 1.0):
                raise ConfigurationError(f"{name} must be in [0, 1], got {getattr(self, name)}.")
        if not (self.ridge >= 0):
            raise ConfigurationError(f"ridge must be >= 0, got {self.ridge}.")
        if int(self.seed) < 0:
            raise ConfigurationError(f"seed must be unsigned, got {self.seed}.")
        if int(self.burn) < 0:
            raise ConfigurationError(f"burn must be >= 0, got {self.burn}.")

    def with_seed(self, seed: int) -> "EsnSpec":
        return EsnSpec(**{**asdict(self), "seed": int(seed)})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ReservoirMatrices:
    """Frozen recurrent (W) and input (U) weights plus the spectral radius of W."""
    W: sparse.csr_array
    U: sparse.csr_array
    spectral_radius: float

    def __post_init__(self):
        W = sparse.csr_array(np.asarray(self.W, dtype=float) if not sparse.issparse(self.W)
                             else self.W.astype(float))
        U = sparse.csr_array(np.asarray(self.U, dtype=float) if not sparse.issparse(self.U)
                             else self.U.astype(float))
        if W.shape[0] != W.shape[1]:
            raise SchemaError(f"W must be square, got {W.shape}.")
        if U.shape[0] != W.shape[0]:
            raise SchemaError(f"U has {U.shape[0]} rows but W has {W.shape[0]}.")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "spectral_radius", float(self.spectral_radius))

    @property
    def reservoir_size(self) -> int:
        return self.W.shape[0]

    @property
    def input_dim(self) -> int:
        return self.U.shape[1]

    def recurrent_gain(self, spec: EsnSpec) -> float:
        """delta / lambda_W, or 0 when W carries no recurrence."""
        if self.spectral_radius < ZERO_RADIUS:
            return 0.0
        return spec.spectral_scale / self.spectral_radius


@dataclass(frozen=True)
class ReadoutMap:
    """Stacked readout B = [V1^T; V2^T] of shape (2 n_h, n_out)."""
    B: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        if B.shape[0] % 2:
            raise SchemaError(f"Readout needs an even row count (2 n_h), got {B.shape[0]}.")
        if not np.all(np.isfinite(B)):
            raise InvalidDataError("Readout matrix contains non-finite entries.")
        object.__setattr__(self, "B", B)

    @property
    def reservoir_size(self) -> int:
        return self.B.shape[0] // 2

    @property
    def output_dim(self) -> int:
        return self.B.shape[1]

    @property
    def V1(self) -> np.ndarray:
        return self.B[:self.reservoir_size].T

    @property
    def V2(self) -> np.ndarray:
        return self.B[self.reservoir_size:].T


@dataclass(frozen=True)
class ReservoirState:
    h: np.ndarray
    t: int = 0

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float).ravel()
        if not np.all(np.isfinite(h)):
            raise InvalidDataError(f"Reservoir state at t={self.t} is not finite.")
        object.__setattr__(self, "h", h)


def generate_matrices(spec: EsnSpec, input_dim: int) -> ReservoirMatrices:
    """Draw sparse W (n_h x n_h) and U (n_h x input_dim) from the spec's seed.

    Each entry is nonzero with probability pi and then Uniform(-a, a).
    """
    if input_dim < 1:
        raise ConfigurationError(f"input_dim must be >= 1, got {input_dim}.")
    rng = np.random.default_rng(spec.seed)
    n_h = int(spec.reservoir_size)
    W = _sparse_uniform(rng, (n_h, n_h), spec.w_density, spec.w_scale)
    U = _sparse_uniform(rng, (n_h, input_dim), spec.u_density, spec.u_scale)
    return ReservoirMatrices(W=W, U=U, spectral_radius=spectral_radius(W))


def spectral_radius(W: sparse.csr_array) -> float:
    """Largest eigenvalue modulus of W (0 for the zero matrix)."""
    if W.nnz == 0:
        return 0.0
    n = W.shape[0]
    if n <= DENSE_EIG_MAX:
        return float(np.max(np.abs(np.linalg.eigvals(W.toarray()))))
    try:
        vals = splinalg.eigs(
            W, k=1, which="LM", tol=EIG_TOL, maxiter=EIG_MAXITER, v0=np.ones(n),
            return_eigenvectors=False, )
        return float(np.abs(vals[0]))
    except splinalg.ArpackNoConvergence:
        warnings.warn(
            "Sparse eigen-solver did not converge; using a dense eigen-decomposition.",
            WindEsnWarning, stacklevel=2, )
        return float(np.max(np.abs(np.linalg.eigvals(W.toarray()))))


def update_state(state: ReservoirState, x: np.ndarray, mats: ReservoirMatrices, spec: EsnSpec,
                 activation: Activation = np.tanh) -> ReservoirState:
    """One reservoir step with input vector ``x`` (intercept entry included)."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != mats.input_dim:
        raise SchemaError(f"Input has {x.size} entries, U expects {mats.input_dim}.")
    if state.h.size != mats.reservoir_size:
        raise SchemaError(
            f"State has {state.h.size} entries, reservoir has {mats.reservoir_size}."
        )
    if not np.all(np.isfinite(x)):
        raise InvalidDataError(f"Reservoir input at t={state.t + 1} is not finite.")
    h = _step(state.h, x, mats, spec, activation)
    return ReservoirState(h=h, t=state.t + 1)


def run_reservoir(inputs: np.ndarray, mats: ReservoirMatrices, spec: EsnSpec,
                  h0: Optional[np.ndarray] = None,
                  activation: Activation = np.tanh) -> np.ndarray:
    """Iterate the reservoir over time-ordered inputs.

    Args:
        inputs: (T, input_dim) input vectors.
        h0: Initial state (zero vector by default).

    Returns:
        (T, n_h) array, row t is the state after consuming ``inputs[t]``.
    """
    inputs = np.asarray(inputs, dtype=float)
    n_h = mats.reservoir_size
    if inputs.size == 0:
        return np.empty((0, n_h))
    inputs = inputs.reshape(inputs.shape[0], -1)
    if inputs.shape[1] != mats.input_dim:
        raise SchemaError(f"Inputs have {inputs.shape[1]} columns, U expects {mats.input_dim}.")
    if not np.all(np.isfinite(inputs)):
        raise InvalidDataError("Reservoir inputs contain non-finite values.")

    h = np.zeros(n_h) if h0 is None else np.asarray(h0, dtype=float).ravel().copy()
    if h.size != n_h:
        raise SchemaError(f"Initial state has {h.size} entries, reservoir has {n_h}.")

    # Input drive for all steps at once; only the recurrence is sequential
    drive = (mats.U @ inputs.T).T
    gain = mats.recurrent_gain(spec)
    W = mats.W
    phi = spec.leak_rate
    states = np.empty((inputs.shape[0], n_h))
    for t in range(inputs.shape[0]):
        pre = drive[t] + gain * (W @ h) if gain else drive[t]
        h = phi * activation(pre) + (1.0 - phi) * h
        states[t] = h
    return states


def step_batch(H: np.ndarray, X: np.ndarray, mats: ReservoirMatrices, spec: EsnSpec,
               activation: Activation = np.tanh) -> np.ndarray:
    """Advance many independent states (rows of H) by one step with inputs X."""
    pre = (mats.U @ X.T).T
    gain = mats.recurrent_gain(spec)
    if gain:
        pre = pre + gain * (mats.W @ H.T).T
    return spec.leak_rate * activation(pre) + (1.0 - spec.leak_rate) * H


def build_design(states: np.ndarray) -> np.ndarray:
    """Rows (h_t, h_t * h_t) for each state."""
    states = np.asarray(states, dtype=float)
    if states.ndim != 2 or states.shape[0] == 0:
        raise InsufficientHistoryError("Cannot build a readout design from zero states.")
    return np.hstack([states, states * states])


def ridge_fit(H: np.ndarray, Y: np.ndarray, lam: float) -> ReadoutMap:
    """Ridge readout B = (H^T H + lam I)^{-1} H^T Y by Cholesky solve.

    Raises:
        SingularDesignError: When lam = 0 and H^T H is singular.
    """
    H = np.asarray(H, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    if H.shape[0] != Y.shape[0]:
        raise SchemaError(f"Design has {H.shape[0]} rows, targets have {Y.shape[0]}.")
    if lam < 0:
        raise ConfigurationError(f"Ridge penalty must be >= 0, got {lam}.")

    p = H.shape[1]
    if lam == 0 and np.linalg.matrix_rank(H) < p:
        raise SingularDesignError(
            "Readout design is rank deficient with ridge penalty 0; use a penalty > 0."
        )
    gram = H.T @ H
    rhs = H.T @ Y
    jitter = 0.0
    base = max(float(np.trace(gram)) / max(p, 1), 1.0) * 1e-12
    for attempt in range(CHOLESKY_RETRIES + 1):
        try:
            factor = linalg.cho_factor(gram + (lam + jitter) * np.eye(p), lower=False)
            B = linalg.cho_solve(factor, rhs)
            if jitter:
                warnings.warn(
                    f"Ridge system needed diagonal jitter {jitter:.3g} to factorize.",
                    WindEsnWarning, stacklevel=2, )
            return ReadoutMap(B=B)
        except linalg.LinAlgError:
            if lam == 0:
                break
            jitter = base if attempt == 0 else jitter * 10.0
    raise SingularDesignError(
        f"Ridge system is not positive definite (penalty {lam}); use a larger penalty."
    )


def readout(state: ReservoirState | np.ndarray, B: ReadoutMap) -> np.ndarray:
    """y = V1 h + V2 (h * h)."""
    h = state.h if isinstance(state, ReservoirState) else np.asarray(state, dtype=float)
    if h.shape[-1] != B.reservoir_size:
        raise SchemaError(
            f"State has {h.shape[-1]} entries, readout expects {B.reservoir_size}."
        )
    return np.concatenate([h, h * h], axis=-1) @ B.B


def build_inputs(series: np.ndarray, n_lags: int) -> tuple[np.ndarray, np.ndarray]:
    """Lagged inputs x_t = (1, y_{t-1}, ..., y_{t-m}) and targets y_t for t = m..T-1.

    Returns:
        (inputs, targets) with shapes (T - m, 1 + m n*) and (T - m, n*).
    """
    Y = np.asarray(series, dtype=float)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    T = Y.shape[0]
    if T <= n_lags:
        raise InsufficientHistoryError(
            f"Need more than {n_lags} observations to build lagged inputs, got {T}."
        )
    lags = [Y[n_lags - j:T - j] for j in range(1, n_lags + 1)]
    inputs = np.hstack([np.ones((T - n_lags, 1))] + lags)
    return inputs, Y[n_lags:]


def lagged_input(recent: Sequence[np.ndarray], n_lags: int) -> np.ndarray:
    """x = (1, recent[0], ..., recent[m-1]) with ``recent`` ordered newest first."""
    if len(recent) < n_lags:
        raise InsufficientHistoryError(f"Need {n_lags} recent vectors, got {len(recent)}.")
    return np.concatenate([[1.0]] + [np.asarray(r, dtype=float).ravel()
                                     for r in recent[:n_lags]])


@dataclass(frozen=True)
class EsnModel:
    """A trained ensemble member: spec, frozen reservoir and fitted readout."""
    spec: EsnSpec
    matrices: ReservoirMatrices
    readout_map: ReadoutMap
    activation: Activation = np.tanh

    @property
    def output_dim(self) -> int:
        return self.readout_map.output_dim

    def states(self, series: np.ndarray) -> np.ndarray:
        """Reservoir states driven by the lagged inputs of ``series`` from h_0 = 0.

        Row ``i`` corresponds to time ``i + m`` of the series.
        """
        inputs, _ = build_inputs(series, self.spec.n_lags)
        return run_reservoir(inputs, self.matrices, self.spec, activation=self.activation)

    def predict_states(self, states: np.ndarray) -> np.ndarray:
        return readout(states, self.readout_map)


def train_esn(spec: EsnSpec, series: np.ndarray, activation: Activation = np.tanh) -> EsnModel:
    """Draw the reservoir for ``spec.seed`` and fit the ridge readout on ``series`` (T x n*)."""
    series = np.asarray(series, dtype=float)
    if series.ndim == 1:
        series = series.reshape(-1, 1)
    inputs, targets = build_inputs(series, spec.n_lags)
    mats = generate_matrices(spec, inputs.shape[1])
    states = run_reservoir(inputs, mats, spec, activation=activation)
    burn = min(int(spec.burn), max(states.shape[0] - 1, 0))
    if burn < spec.burn:
        warnings.warn(
            f"Training window too short for burn={spec.burn}; discarding {burn} states.",
            WindEsnWarning, stacklevel=2, )
    design = build_design(states[burn:])
    B = ridge_fit(design, targets[burn:], spec.ridge)
    return EsnModel(spec=spec, matrices=mats, readout_map=B, activation=activation)


def _sparse_uniform(rng: np.random.Generator, shape: tuple[int, int], density: float,
                    scale: float) -> sparse.csr_array:
    mask = rng.random(shape) < density
    values = rng.uniform(-scale, scale, size=shape)
    return sparse.csr_array(np.where(mask, values, 0.0))


def _step(h: np.ndarray, x: np.ndarray, mats: ReservoirMatrices, spec: EsnSpec,
          activation: Activation) -> np.ndarray:
    pre = mats.U @ x
    gain = mats.recurrent_gain(spec)
    if gain:
        pre = pre + gain * (mats.W @ h)
    return spec.leak_rate * activation(pre) + (1.0 - spec.leak_rate) * h
