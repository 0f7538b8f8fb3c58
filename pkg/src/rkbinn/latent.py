"""Latent low-dimensional dynamics behind linear observations ``y = H x``.

The model encodes an observation, runs the RK-shaped bilinear dynamics
in the latent space and decodes the stage increments back, keeping the
residual skip in observation space:

    y' = y + sum_i (alpha_i dt k_i) @ decoder.T,  k_i from the latent block at encoder(y)

Since ``dy/dt = H dx/dt`` for linear observations, the observation
increment is a linear image of the latent field, which is exactly what
the decoder represents. With ``norm`` set, the whole map works on
z-scored observations and is wrapped by the standardization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bilinear import RKModel, glorot_uniform, make_binn, rk_backward, rk_forward
from .dynamics import Trajectory
from .numerics import DimensionError


def random_observation_map(D: int, d: int, rng: np.random.Generator,
                           min_singular: float = 0.1) -> np.ndarray:
    """Uniform[-1, 1] entries, redrawn until the smallest singular value exceeds ``min_singular``."""
    if D <= d:
        raise ValueError("observation dim must exceed latent dim")
    while True:
        H = rng.uniform(-1.0, 1.0, size=(D, d))
        if np.linalg.svd(H, compute_uv=False)[-1] > min_singular:
            return H


def check_observation_map(H, min_singular: float = 0.0) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] <= H.shape[1]:
        raise DimensionError("H must be a tall (D x d) matrix with D > d")
    if np.linalg.svd(H, compute_uv=False)[-1] <= max(min_singular, 1e-12 * np.abs(H).max()):
        raise ValueError("H is rank deficient")
    return H


def synthesize_observations(latent_traj: Trajectory, H=None, rng=None) -> tuple[Trajectory, np.ndarray]:
    """Observe a latent trajectory through ``H`` (drawn from ``rng`` if not given)."""
    if H is None:
        if rng is None:
            raise ValueError("need either H or an rng to draw it")
        H = random_observation_map(5, latent_traj.dim, rng)
    H = check_observation_map(H)
    if H.shape[1] != latent_traj.dim:
        raise DimensionError("H columns must equal the latent dim")
    return Trajectory(latent_traj.t0, latent_traj.h, latent_traj.states @ H.T), H


@dataclass
class LatentModel:
    encoder: np.ndarray  # (d_latent, D)
    encoder_bias: np.ndarray  # (d_latent,)
    dynamics: RKModel
    decoder: np.ndarray  # (D, d_latent)
    norm: tuple | None = None  # observation (mean, std)

    def __post_init__(self):
        self.encoder = np.array(self.encoder, dtype=np.float64)
        self.encoder_bias = np.array(self.encoder_bias, dtype=np.float64)
        self.decoder = np.array(self.decoder, dtype=np.float64)
        dl, D = self.encoder.shape
        if self.encoder_bias.shape != (dl,) or self.decoder.shape != (D, dl):
            raise DimensionError("encoder/decoder shapes do not chain")
        if self.dynamics.dim != dl:
            raise DimensionError("latent dynamics dim must match the encoder output")
        if self.dynamics.norm is not None:
            raise ValueError("latent dynamics run unnormalized")
        if self.norm is not None:
            mean = np.array(self.norm[0], dtype=np.float64)
            std = np.array(self.norm[1], dtype=np.float64)
            if mean.shape != (D,) or std.shape != (D,):
                raise DimensionError("norm stats must match the observation dim")
            if np.any(std <= 0):
                raise ValueError("norm std entries must be positive")
            self.norm = (mean, std)

    @property
    def dim(self) -> int:
        return self.encoder.shape[1]

    @property
    def latent_dim(self) -> int:
        return self.encoder.shape[0]

    @property
    def dt(self) -> float:
        return self.dynamics.dt

    def params(self) -> dict:
        p = {"encoder": self.encoder, "encoder_bias": self.encoder_bias, "decoder": self.decoder}
        p.update(self.dynamics.params())
        return p

    def copy(self) -> "LatentModel":
        norm = None if self.norm is None else (self.norm[0].copy(), self.norm[1].copy())
        return LatentModel(self.encoder.copy(), self.encoder_bias.copy(),
                           self.dynamics.copy(), self.decoder.copy(), norm)

    def to_normalized(self, Y):
        if self.norm is None:
            return Y
        return (Y - self.norm[0]) / self.norm[1]

    def from_normalized(self, Y):
        if self.norm is None:
            return Y
        return Y * self.norm[1] + self.norm[0]

    def encode(self, Y) -> np.ndarray:
        """Latent coordinates of raw observations."""
        return self._encode(self.to_normalized(np.asarray(Y, dtype=np.float64)))

    def _encode(self, Yn):
        return Yn @ self.encoder.T + self.encoder_bias

    def forward_normalized(self, Y):
        Z = self._encode(Y)
        return rk_forward(self.dynamics.block, Z, self.dt, self.dynamics.rk, base=Y, decoder=self.decoder)

    def backward_normalized(self, Y, cache, g):
        grads, gZ = rk_backward(self.dynamics.block, cache, g, self.dt, self.dynamics.rk, decoder=self.decoder)
        grads["encoder"] = gZ.T @ Y
        grads["encoder_bias"] = gZ.sum(axis=0)
        return grads, g + gZ @ self.encoder

    def loss_and_grad(self, Yin, Yout):
        pred, cache = self.forward_normalized(Yin)
        diff = pred - Yout
        grads, _ = self.backward_normalized(Yin, cache, 2.0 * diff / diff.size)
        return float(np.mean(diff * diff)), grads

    def predict(self, Y) -> np.ndarray:
        return latent_forward(self, Y)


def make_latent_model(D: int, d_latent: int, n_blocks: int, dt: float, rng: np.random.Generator,
                      p_lin: int | None = None, p_bil: int | None = None, norm=None) -> LatentModel:
    dyn = make_binn(d_latent, n_blocks, dt, rng, p_lin, p_bil)
    return LatentModel(glorot_uniform(rng, d_latent, D), np.zeros(d_latent), dyn,
                       glorot_uniform(rng, D, d_latent), norm)


def latent_forward(model: LatentModel, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != model.dim:
        raise DimensionError(f"latent model expects observations of dim {model.dim}, got {y.shape[-1]}")
    out, _ = model.forward_normalized(model.to_normalized(np.atleast_2d(y)))
    out = model.from_normalized(out)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite output in latent_forward")
    return out[0] if y.ndim == 1 else out


def latent_backward(model: LatentModel, y, upstream_grad):
    """Gradients of ``<upstream_grad, latent_forward(y)>`` w.r.t. parameters and input."""
    Y = model.to_normalized(np.atleast_2d(np.asarray(y, dtype=np.float64)))
    G = np.atleast_2d(np.asarray(upstream_grad, dtype=np.float64))
    if G.shape != Y.shape:
        raise DimensionError("upstream gradient must match input shape")
    if model.norm is not None:
        G = G * model.norm[1]
    _, cache = model.forward_normalized(Y)
    grads, gY = model.backward_normalized(Y, cache, G)
    if model.norm is not None:
        gY = gY / model.norm[1]
    return grads, (gY[0] if np.ndim(y) == 1 else gY)


@dataclass
class Alignment:
    A: np.ndarray
    b: np.ndarray
    residual_rmse: float

    def apply(self, learned) -> np.ndarray:
        return np.asarray(learned, dtype=np.float64) @ self.A.T + self.b


def align_latent(learned, truth) -> Alignment:
    """Least-squares affine map ``A z + b`` from learned latent states onto the true ones."""
    Zl = np.asarray(learned, dtype=np.float64)
    Zt = np.asarray(truth, dtype=np.float64)
    if Zl.shape != Zt.shape or Zl.ndim != 2:
        raise DimensionError("learned and true latent series must have equal (n, d) shapes")
    n, d = Zl.shape
    if n < d + 1:
        raise ValueError(f"need at least {d + 1} states to fit an affine alignment")
    centred = Zl - Zl.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    if sv[-1] <= 1e-10 * max(sv[0], 1e-300):
        raise np.linalg.LinAlgError(f"learned latent cloud has rank < {d}")
    design = np.hstack([Zl, np.ones((n, 1))])
    coef = np.linalg.lstsq(design, Zt, rcond=None)[0]
    A, b = coef[:d].T, coef[d]
    resid = design @ coef - Zt
    return Alignment(A, b, float(np.sqrt(np.mean(resid * resid))))
