"""Comparison models: sparse regression, analog forecasting, MLPs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bilinear import PolynomialCoefficients, RKCoefficients, RKModel, glorot_uniform
from .dynamics import Trajectory, rk4_step
from .numerics import DimensionError, ridge_least_squares
from .training import PairDataset

# ---------------------------------------------------------------------------
# sparse regression (SINDy-style STLSQ)


@dataclass(frozen=True)
class DictionarySpec:
    include_constant: bool = True
    include_linear: bool = True
    include_quadratic: bool = True

    def __post_init__(self):
        if not (self.include_constant or self.include_linear or self.include_quadratic):
            raise ValueError("at least one dictionary family must be enabled")

    def n_columns(self, d: int) -> int:
        return (int(self.include_constant) + d * int(self.include_linear)
                + d * (d + 1) // 2 * int(self.include_quadratic))

    def column_names(self, d: int) -> list[str]:
        names = []
        if self.include_constant:
            names.append("1")
        if self.include_linear:
            names += [f"x{i}" for i in range(d)]
        if self.include_quadratic:
            names += [f"x{i}*x{j}" for i in range(d) for j in range(i, d)]
        return names


def build_dictionary(states, spec: DictionarySpec = DictionarySpec()) -> np.ndarray:
    """Rows ``[1 | x_0..x_{d-1} | x_i x_j (i <= j, lexicographic)]`` for enabled families."""
    X = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("empty state sequence")
    n, d = X.shape
    cols = []
    if spec.include_constant:
        cols.append(np.ones((n, 1)))
    if spec.include_linear:
        cols.append(X)
    if spec.include_quadratic:
        iu, ju = np.triu_indices(d)
        cols.append(X[:, iu] * X[:, ju])
    return np.hstack(cols)


def estimate_derivatives(traj: Trajectory) -> np.ndarray:
    """Central differences at interior points (first and last state dropped)."""
    if len(traj) < 3:
        raise ValueError("need at least 3 states for central differences")
    S = traj.states
    return (S[2:] - S[:-2]) / (2.0 * traj.h)


class EmptySupportError(RuntimeError):
    pass


@dataclass
class SparseModel:
    xi: np.ndarray
    spec: DictionarySpec
    threshold: float
    dt: float | None = None

    @property
    def dim(self) -> int:
        return self.xi.shape[1]

    def field(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = build_dictionary(x, self.spec) @ self.xi
        return out[0] if x.ndim == 1 else out

    def predict(self, X) -> np.ndarray:
        if self.dt is None:
            raise ValueError("SparseModel.dt must be set to forecast")
        return sparse_forecast_step(self, X, self.dt)

    def to_polynomial(self) -> PolynomialCoefficients:
        if self.spec != DictionarySpec():
            raise ValueError("polynomial view needs the full constant/linear/quadratic dictionary")
        return PolynomialCoefficients.from_monomials(self.xi)


def stlsq_fit(dictionary, derivatives, threshold: float = 0.05, iters: int = 10,
              spec: DictionarySpec = DictionarySpec(), ridge: float = 1e-10) -> SparseModel:
    """Sequentially thresholded least squares, run independently per output dimension."""
    Theta = np.asarray(dictionary, dtype=np.float64)
    dX = np.atleast_2d(np.asarray(derivatives, dtype=np.float64))
    if dX.shape[0] != Theta.shape[0]:
        raise DimensionError("dictionary and derivative row counts differ")
    n_cols, d = Theta.shape[1], dX.shape[1]
    xi = np.zeros((n_cols, d))
    for k in range(d):
        y = dX[:, k]
        if not np.any(y):
            continue  # identically zero derivative: the all-zero model is exact
        support = np.ones(n_cols, dtype=bool)
        coef = np.zeros(n_cols)
        for _ in range(iters):
            coef = np.zeros(n_cols)
            coef[support] = ridge_least_squares(Theta[:, support], y, ridge)
            small = np.abs(coef) < threshold
            new_support = support & ~small
            if not new_support.any():
                raise EmptySupportError(f"every coefficient of dimension {k} fell below the threshold")
            if np.array_equal(new_support, support):
                break
            support = new_support
        coef = np.zeros(n_cols)
        coef[support] = ridge_least_squares(Theta[:, support], y, ridge)
        xi[:, k] = coef
    return SparseModel(xi, spec, threshold)


def sparse_forecast_step(model: SparseModel, x, dt: float) -> np.ndarray:
    return rk4_step(model.field, x, dt)


# ---------------------------------------------------------------------------
# analog forecasting


@dataclass(frozen=True)
class AnalogConfig:
    k: int = 50
    bandwidth: float | None = None  # None: median of the k neighbour distances
    ridge: float = 1e-6

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ValueError("fixed bandwidth must be positive")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")


def _k_nearest(d2: np.ndarray, k: int) -> np.ndarray:
    # exact k smallest with ties resolved toward lower indices
    if k >= d2.shape[0]:
        return np.argsort(d2, kind="stable")[:k]
    kth = np.partition(d2, k - 1)[k - 1]
    below = np.flatnonzero(d2 < kth)
    equal = np.flatnonzero(d2 == kth)[: k - below.size]
    idx = np.concatenate([below, equal])
    return idx[np.argsort(d2[idx], kind="stable")]


def analog_forecast_step(train: PairDataset, x, config: AnalogConfig = AnalogConfig()) -> np.ndarray:
    """Kernel-weighted locally affine regression on the k nearest analogs.

    The affine model is centred on the query, so the prediction is the
    fitted intercept; the ridge penalty applies to the slope only.
    """
    if config.k > len(train):
        raise ValueError(f"k={config.k} exceeds the {len(train)} training pairs")
    x = np.asarray(x, dtype=np.float64)
    Xq = np.atleast_2d(x)
    if Xq.shape[1] != train.dim:
        raise DimensionError("query dim does not match the training pairs")
    Xin, Yout = train.inputs, train.targets
    sq_norms = np.einsum("ij,ij->i", Xin, Xin)
    d = train.dim
    out = np.empty_like(Xq)
    for s in range(0, len(Xq), 64):
        Q = Xq[s:s + 64]
        D2 = sq_norms[None, :] - 2.0 * Q @ Xin.T + np.einsum("ij,ij->i", Q, Q)[:, None]
        for r, q in enumerate(Q):
            idx = _k_nearest(D2[r], config.k)
            # exact distances for the selected analogs (the expansion above can lose digits)
            diff = Xin[idx] - q
            dist2 = np.einsum("ij,ij->i", diff, diff)
            if config.bandwidth is None:
                bw = max(float(np.median(np.sqrt(dist2))), 1e-12)
            else:
                bw = config.bandwidth
            w = np.exp(-dist2 / bw ** 2)
            w = w / w.sum()
            sw = np.sqrt(w)[:, None]
            A = np.hstack([np.ones((len(idx), 1)), diff]) * sw
            B = Yout[idx] * sw
            if config.ridge > 0:
                pen = np.hstack([np.zeros((d, 1)), np.sqrt(config.ridge) * np.eye(d)])
                A = np.vstack([A, pen])
                B = np.vstack([B, np.zeros((d, d))])
            coef = np.linalg.lstsq(A, B, rcond=None)[0]
            out[s + r] = coef[0]
    return out[0] if x.ndim == 1 else out


@dataclass
class AnalogForecaster:
    """Instance-based one-step predictor; 'fitting' just stores the pairs."""

    train: PairDataset
    config: AnalogConfig = AnalogConfig()

    @property
    def dim(self) -> int:
        return self.train.dim

    def predict(self, X) -> np.ndarray:
        return analog_forecast_step(self.train, X, self.config)


# ---------------------------------------------------------------------------
# multilayer perceptrons

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda a, y: 1.0 - y * y),
    "relu": (lambda a: np.maximum(a, 0.0), lambda a, y: (a > 0).astype(np.float64)),
}


@dataclass
class MlpParams:
    weights: list
    biases: list
    activation: str = "tanh"

    kind = "mlp"

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weights = [np.array(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.array(b, dtype=np.float64) for b in self.biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("need one bias per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[0],):
                raise DimensionError(f"layer {i}: bias shape {b.shape} vs weight {w.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise DimensionError(f"layer {i} input width does not match layer {i - 1}")

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def names(self) -> tuple:
        return tuple(n for i in range(len(self.weights)) for n in (f"W{i}", f"b{i}"))

    def params(self) -> dict:
        p = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            p[f"W{i}"] = w
            p[f"b{i}"] = b
        return p

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation)

    def zeros_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.params().items()}

    def forward(self, X: np.ndarray):
        act = _ACTIVATIONS[self.activation][0]
        hs = [X]
        pre = []
        h = X
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = h @ w.T + b
            if i == last:
                h = a
            else:
                pre.append(a)
                h = act(a)
                hs.append(h)
        return h, (hs, pre)

    def backward(self, cache, g: np.ndarray):
        dact = _ACTIVATIONS[self.activation][1]
        hs, pre = cache
        grads = {}
        for i in range(len(self.weights) - 1, -1, -1):
            grads[f"W{i}"] = g.T @ hs[i]
            grads[f"b{i}"] = g.sum(axis=0)
            g = g @ self.weights[i]
            if i > 0:
                g = g * dact(pre[i - 1], hs[i])
        return grads, g


def init_mlp(widths, rng: np.random.Generator, activation: str = "tanh") -> MlpParams:
    widths = list(widths)
    if len(widths) < 2:
        raise ValueError("an MLP needs input and output widths")
    ws = [glorot_uniform(rng, o, i) for i, o in zip(widths[:-1], widths[1:])]
    return MlpParams(ws, [np.zeros(o) for o in widths[1:]], activation)


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.in_dim:
        raise DimensionError(f"MLP expects dim {params.in_dim}, got {x.shape[-1]}")
    out, _ = params.forward(np.atleast_2d(x))
    return out[0] if x.ndim == 1 else out


def mlp_backward(params: MlpParams, x, upstream_grad):
    """Gradients of ``<upstream_grad, mlp_forward(x)>`` w.r.t. weights and input."""
    x = np.asarray(x, dtype=np.float64)
    _, cache = params.forward(np.atleast_2d(x))
    grads, gx = params.backward(cache, np.atleast_2d(np.asarray(upstream_grad, dtype=np.float64)))
    return grads, (gx[0] if x.ndim == 1 else gx)


# Hidden-layer layouts from the benchmark: (hidden layers, nodes per layer)
MLP_LAYOUT = {"lorenz63": (5, 6), "oregonator": (5, 6), "lorenz96": (10, 80)}
MLP_SL4_LAYOUT = {"lorenz63": (5, 6), "oregonator": (5, 6), "lorenz96": (11, 80)}


def mlp_widths(d: int, n_hidden: int, width: int) -> list[int]:
    return [d] + [width] * n_hidden + [d]


@dataclass
class DirectMLP:
    """MLP mapping the state at t to the state at t + h (no residual)."""

    mlp: MlpParams
    norm: tuple | None = None

    @property
    def dim(self) -> int:
        return self.mlp.in_dim

    def params(self) -> dict:
        return self.mlp.params()

    def copy(self) -> "DirectMLP":
        norm = None if self.norm is None else (self.norm[0].copy(), self.norm[1].copy())
        return DirectMLP(self.mlp.copy(), norm)

    def to_normalized(self, X):
        return X if self.norm is None else (X - self.norm[0]) / self.norm[1]

    def from_normalized(self, Z):
        return Z if self.norm is None else Z * self.norm[1] + self.norm[0]

    def forward_normalized(self, Z):
        return self.mlp.forward(Z)

    def loss_and_grad(self, Zin, Zout):
        pred, cache = self.mlp.forward(Zin)
        diff = pred - Zout
        grads, _ = self.mlp.backward(cache, 2.0 * diff / diff.size)
        return float(np.mean(diff * diff)), grads

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = self.from_normalized(mlp_forward(self.mlp, self.to_normalized(X)))
        return out


def make_mlp_sl4(mlp_block: MlpParams, dt: float, norm=None) -> RKModel:
    """Four-stage residual RK model whose shared block is an MLP."""
    if mlp_block.in_dim != mlp_block.out_dim:
        raise DimensionError("MLP block must map R^d to R^d")
    return RKModel(mlp_block, 4, dt, RKCoefficients.default(4), norm)
