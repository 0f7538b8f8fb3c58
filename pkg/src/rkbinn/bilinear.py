"""Bilinear block and the Runge-Kutta shaped residual network.

A block maps ``x -> W4 [W1 x + b1 ; (W2 x + b2) * (W3 x + b3)] + b4``,
i.e. a general quadratic polynomial whose number of linear and product
terms is set by the hidden widths. :class:`RKModel` chains ``n_blocks``
evaluations of a single shared block the way an explicit RK scheme
chains stage evaluations of a vector field:

    k_1 = F(z),  k_i = F(z + beta_i dt k_{i-1}),  z' = z + dt * sum_i alpha_i k_i

With ``n_blocks=1`` this is forward Euler, with ``n_blocks=4`` and the
classical coefficients it is RK4. Because there is only one block
object, weight sharing holds by construction and the backward pass
accumulates every stage's contribution into one gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import RK4_ALPHA, RK4_BETA
from .numerics import DimensionError


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


@dataclass
class BlockParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    W4: np.ndarray
    b4: np.ndarray

    names = ("W1", "b1", "W2", "b2", "W3", "b3", "W4", "b4")
    kind = "bilinear"

    def __post_init__(self):
        for n in self.names:
            setattr(self, n, np.array(getattr(self, n), dtype=np.float64))
        d, pl, pb = self.d, self.p_lin, self.p_bil
        expected = {
            "W1": (pl, d), "b1": (pl,), "W2": (pb, d), "b2": (pb,),
            "W3": (pb, d), "b3": (pb,), "W4": (d, pl + pb), "b4": (d,),
        }
        for n, shape in expected.items():
            if getattr(self, n).shape != shape:
                raise DimensionError(f"{n} has shape {getattr(self, n).shape}, expected {shape}")

    @property
    def d(self) -> int:
        return self.W1.shape[1]

    @property
    def p_lin(self) -> int:
        return self.W1.shape[0]

    @property
    def p_bil(self) -> int:
        return self.W2.shape[0]

    @property
    def in_dim(self) -> int:
        return self.d

    @property
    def out_dim(self) -> int:
        return self.d

    def params(self) -> dict:
        return {n: getattr(self, n) for n in self.names}

    def copy(self) -> "BlockParams":
        return BlockParams(**{n: getattr(self, n).copy() for n in self.names})

    def zeros_like(self) -> dict:
        return {n: np.zeros_like(getattr(self, n)) for n in self.names}

    def forward(self, X: np.ndarray):
        """Batch forward on ``X`` of shape ``(n, d)``; returns output and cache."""
        lin = X @ self.W1.T + self.b1
        u = X @ self.W2.T + self.b2
        v = X @ self.W3.T + self.b3
        hidden = np.concatenate([lin, u * v], axis=1)
        return hidden @ self.W4.T + self.b4, (X, u, v, hidden)

    def backward(self, cache, g: np.ndarray):
        X, u, v, hidden = cache
        pl = self.p_lin
        gh = g @ self.W4
        gp = gh[:, pl:]
        glin = gh[:, :pl]
        gu = gp * v
        gv = gp * u
        grads = {
            "W4": g.T @ hidden, "b4": g.sum(axis=0),
            "W1": glin.T @ X, "b1": glin.sum(axis=0),
            "W2": gu.T @ X, "b2": gu.sum(axis=0),
            "W3": gv.T @ X, "b3": gv.sum(axis=0),
        }
        gX = glin @ self.W1 + gu @ self.W2 + gv @ self.W3
        return grads, gX


def init_block(d: int, p_lin: int, p_bil: int, rng: np.random.Generator) -> BlockParams:
    if min(d, p_lin, p_bil) < 1:
        raise ValueError("d, p_lin and p_bil must be >= 1")
    return BlockParams(
        W1=glorot_uniform(rng, p_lin, d), b1=np.zeros(p_lin),
        W2=glorot_uniform(rng, p_bil, d), b2=np.zeros(p_bil),
        W3=glorot_uniform(rng, p_bil, d), b3=np.zeros(p_bil),
        W4=glorot_uniform(rng, d, p_lin + p_bil), b4=np.zeros(d),
    )


def block_forward(block, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != block.in_dim:
        raise DimensionError(f"block expects dim {block.in_dim}, got {x.shape[-1]}")
    out, _ = block.forward(np.atleast_2d(x))
    return out[0] if x.ndim == 1 else out


@dataclass
class RKCoefficients:
    alpha: np.ndarray
    beta: np.ndarray
    trainable: bool = False

    def __post_init__(self):
        self.alpha = np.array(self.alpha, dtype=np.float64)
        self.beta = np.array(self.beta, dtype=np.float64)
        if self.alpha.shape != self.beta.shape or self.alpha.ndim != 1:
            raise DimensionError("alpha and beta must be 1-D of equal length")

    @classmethod
    def default(cls, n_blocks: int, trainable: bool = False) -> "RKCoefficients":
        if n_blocks == 1:
            return cls([1.0], [1.0], trainable)
        if n_blocks == 4:
            return cls(RK4_ALPHA, RK4_BETA, trainable)
        raise ValueError(f"n_blocks must be 1 or 4, got {n_blocks}")

    def copy(self) -> "RKCoefficients":
        return RKCoefficients(self.alpha.copy(), self.beta.copy(), self.trainable)


def rk_forward(block, Z: np.ndarray, dt: float, rk: RKCoefficients, base=None, decoder=None):
    """Residual RK composition of ``block`` over a batch ``Z``.

    Same operation order as ``rk4_step``. ``base``/``decoder`` let the
    residual live in another space: the result is
    ``base + sum_i (alpha_i dt k_i) @ decoder.T``.
    """
    acc = Z if base is None else base
    k = np.zeros_like(Z)
    caches, ks = [], []
    for a, b in zip(rk.alpha, rk.beta):
        k, c = block.forward(Z + b * dt * k)
        caches.append(c)
        ks.append(k)
        inc = a * dt * k
        acc = acc + (inc if decoder is None else inc @ decoder.T)
    return acc, (caches, ks)


def rk_backward(block, cache, g_out: np.ndarray, dt: float, rk: RKCoefficients, decoder=None):
    """Backward pass of :func:`rk_forward`.

    Returns the parameter gradients and the gradient reaching ``Z``
    through the stages only; the identity path ``base -> output`` is left
    to the caller.
    """
    caches, ks = cache
    n = len(ks)
    grads = block.zeros_like()
    g_alpha = np.zeros(n)
    g_beta = np.zeros(n)
    g_inc = g_out if decoder is None else g_out @ decoder
    gZ = np.zeros_like(ks[0])
    g_k = np.zeros_like(ks[0])
    for i in range(n - 1, -1, -1):
        g_alpha[i] = dt * np.sum(g_inc * ks[i])
        g_k = g_k + rk.alpha[i] * dt * g_inc
        pg, g_in = block.backward(caches[i], g_k)
        for name, val in pg.items():
            grads[name] += val
        gZ += g_in
        if i > 0:
            g_beta[i] = dt * np.sum(g_in * ks[i - 1])
            g_k = rk.beta[i] * dt * g_in
        # k_0 = 0, so beta_1 gets no gradient
    if rk.trainable:
        grads["alpha"] = g_alpha
        grads["beta"] = g_beta
    if decoder is not None:
        total = sum(a * dt * k for a, k in zip(rk.alpha, ks))
        grads["decoder"] = g_out.T @ total
    return grads, gZ


@dataclass
class RKModel:
    """Shared block + RK coefficients + step + optional standardization.

    ``norm = (mean, std)`` means the block operates on standardized
    states ``(x - mean) / std``; inputs are standardized on entry and the
    output is mapped back on exit.
    """

    block: object
    n_blocks: int
    dt: float
    rk: RKCoefficients = None
    norm: tuple | None = None

    def __post_init__(self):
        if self.n_blocks not in (1, 4):
            raise ValueError(f"n_blocks must be 1 or 4, got {self.n_blocks}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.rk is None:
            self.rk = RKCoefficients.default(self.n_blocks)
        if len(self.rk.alpha) != self.n_blocks:
            raise ValueError("RK coefficient count must equal n_blocks")
        if self.block.in_dim != self.block.out_dim:
            raise DimensionError("residual block must map R^d to R^d")
        if self.norm is not None:
            mean, std = (np.asarray(a, dtype=np.float64) for a in self.norm)
            if mean.shape != (self.dim,) or std.shape != (self.dim,):
                raise DimensionError("normalization stats must match the state dim")
            if np.any(std <= 0):
                raise ValueError("normalization std entries must be positive")
            self.norm = (mean, std)

    @property
    def dim(self) -> int:
        return self.block.in_dim

    def params(self) -> dict:
        p = dict(self.block.params())
        if self.rk.trainable:
            p["alpha"] = self.rk.alpha
            p["beta"] = self.rk.beta
        return p

    def copy(self) -> "RKModel":
        norm = None if self.norm is None else (self.norm[0].copy(), self.norm[1].copy())
        return RKModel(self.block.copy(), self.n_blocks, self.dt, self.rk.copy(), norm)

    def to_normalized(self, X: np.ndarray) -> np.ndarray:
        if self.norm is None:
            return X
        return (X - self.norm[0]) / self.norm[1]

    def from_normalized(self, Z: np.ndarray) -> np.ndarray:
        if self.norm is None:
            return Z
        return Z * self.norm[1] + self.norm[0]

    def forward_normalized(self, Z: np.ndarray):
        return rk_forward(self.block, Z, self.dt, self.rk)

    def backward_normalized(self, cache, g: np.ndarray):
        grads, gZ = rk_backward(self.block, cache, g, self.dt, self.rk)
        return grads, gZ + g

    def loss_and_grad(self, Zin: np.ndarray, Zout: np.ndarray):
        """MSE of the one-step map in normalized coordinates, with gradients."""
        pred, cache = self.forward_normalized(Zin)
        diff = pred - Zout
        loss = float(np.mean(diff * diff))
        grads, _ = self.backward_normalized(cache, 2.0 * diff / diff.size)
        return loss, grads

    def predict(self, X) -> np.ndarray:
        return model_forward(self, X)

    def field(self, x) -> np.ndarray:
        """The learned vector field in raw coordinates, ``std * F((x - mean) / std)``."""
        x = np.asarray(x, dtype=np.float64)
        out = block_forward(self.block, self.to_normalized(x))
        return out if self.norm is None else out * self.norm[1]


def make_binn(d: int, n_blocks: int, dt: float, rng: np.random.Generator,
              p_lin: int | None = None, p_bil: int | None = None,
              norm=None, trainable_rk: bool = False) -> RKModel:
    block = init_block(d, p_lin or d, p_bil or d, rng)
    return RKModel(block, n_blocks, dt, RKCoefficients.default(n_blocks, trainable_rk), norm)


def model_forward(model: RKModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.dim:
        raise DimensionError(f"model expects dim {model.dim}, got {x.shape[-1]}")
    X = np.atleast_2d(x)
    out, _ = model.forward_normalized(model.to_normalized(X))
    out = model.from_normalized(out)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite output in model_forward")
    return out[0] if x.ndim == 1 else out


def model_backward(model: RKModel, x, upstream_grad):
    """Gradients of ``<upstream_grad, model_forward(x)>`` w.r.t. parameters and input."""
    x = np.asarray(x, dtype=np.float64)
    X = np.atleast_2d(x)
    G = np.atleast_2d(np.asarray(upstream_grad, dtype=np.float64))
    if G.shape != X.shape:
        raise DimensionError("upstream gradient must match input shape")
    _, cache = model.forward_normalized(model.to_normalized(X))
    if model.norm is not None:
        G = G * model.norm[1]
    grads, gZ = model.backward_normalized(cache, G)
    gX = gZ if model.norm is None else gZ / model.norm[1]
    return grads, (gX[0] if x.ndim == 1 else gX)


# ---------------------------------------------------------------------------
# polynomial view of a block


@dataclass
class PolynomialCoefficients:
    """``F_k(x) = c_k + sum_j L[k, j] x_j + x^T Q[k] x`` with each ``Q[k]`` symmetric."""

    c: np.ndarray
    L: np.ndarray
    Q: np.ndarray

    @property
    def d(self) -> int:
        return self.c.shape[0]

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        X = np.atleast_2d(x)
        quad = np.einsum("ni,kij,nj->nk", X, self.Q, X)
        out = self.c + X @ self.L.T + quad
        return out[0] if x.ndim == 1 else out

    def to_monomials(self) -> np.ndarray:
        """Coefficient matrix ``(n_terms, d)`` in dictionary column order.

        Rows: constant, ``x_0..x_{d-1}``, then ``x_i x_j`` for ``i <= j``
        in lexicographic order (off-diagonal entries counted twice).
        """
        d = self.d
        rows = [self.c, *self.L.T]
        for i in range(d):
            for j in range(i, d):
                rows.append(self.Q[:, i, i] if i == j else 2.0 * self.Q[:, i, j])
        return np.array(rows)

    @classmethod
    def from_monomials(cls, xi: np.ndarray) -> "PolynomialCoefficients":
        xi = np.asarray(xi, dtype=np.float64)
        d = xi.shape[1]
        if xi.shape[0] != 1 + d + d * (d + 1) // 2:
            raise DimensionError("monomial table has the wrong number of rows")
        c = xi[0].copy()
        L = xi[1:1 + d].T.copy()
        Q = np.zeros((d, d, d))
        r = 1 + d
        for i in range(d):
            for j in range(i, d):
                if i == j:
                    Q[:, i, i] = xi[r]
                else:
                    Q[:, i, j] = Q[:, j, i] = 0.5 * xi[r]
                r += 1
        return cls(c, L, Q)


def expand_to_polynomial(block: BlockParams, norm=None) -> PolynomialCoefficients:
    """Exact constant/linear/quadratic expansion of a bilinear block.

    With ``norm = (mean, std)`` the result describes the raw-coordinate
    field ``std * F((x - mean) / std)``.
    """
    pl = block.p_lin
    Wa, Wb = block.W4[:, :pl], block.W4[:, pl:]
    c = Wa @ block.b1 + Wb @ (block.b2 * block.b3) + block.b4
    L = Wa @ block.W1 + Wb @ (block.b3[:, None] * block.W2 + block.b2[:, None] * block.W3)
    outer = np.einsum("mi,mj->mij", block.W2, block.W3)
    Q = np.einsum("km,mij->kij", Wb, 0.5 * (outer + outer.transpose(0, 2, 1)))
    if norm is None:
        return PolynomialCoefficients(c, L, Q)
    mean, std = (np.asarray(a, dtype=np.float64) for a in norm)
    # z = P x + q with P = diag(1/std), q = -mean/std
    p = 1.0 / std
    q = -mean * p
    Qq = Q @ q
    c_raw = c + L @ q + q @ Qq.T
    L_raw = (L + 2.0 * Qq) * p
    Q_raw = Q * p[None, :, None] * p[None, None, :]
    return PolynomialCoefficients(std * c_raw, std[:, None] * L_raw, std[:, None, None] * Q_raw)
