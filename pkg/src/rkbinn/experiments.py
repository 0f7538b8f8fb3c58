"""Build and fit every benchmark model kind from a training trajectory."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import (MLP_LAYOUT, MLP_SL4_LAYOUT, AnalogConfig, AnalogForecaster, DictionarySpec,
                        DirectMLP, build_dictionary, estimate_derivatives, init_mlp, make_mlp_sl4,
                        mlp_widths, stlsq_fit)
from .bilinear import BlockParams, RKModel, expand_to_polynomial, make_binn
from .dynamics import IntegratorConfig, Trajectory, generate_dataset
from .evaluation import rollout
from .latent import (Alignment, LatentModel, align_latent, latent_forward, make_latent_model,
                     random_observation_map, synthesize_observations)
from .numerics import make_rng, standardize_stats
from .training import TrainConfig, TrainResult, make_pairs, train, train_binn

MODEL_KINDS = ("binn1", "binn4", "mlp", "mlp_sl4", "sr", "af")
NEURAL_KINDS = ("binn1", "binn4", "mlp", "mlp_sl4")

# Per-system epoch budgets, chosen from convergence runs. The oregonator
# budget stops on the stable plateau: longer runs lower the one-step loss
# further but make 8-step rollouts blow up.
DEFAULT_EPOCHS = {"lorenz63": 200, "oregonator": 100, "lorenz96": 80}
NORMALIZED_SYSTEMS = ("oregonator", "lorenz96")


@dataclass
class ModelOptions:
    p_lin: int | None = None
    p_bil: int | None = None
    normalize: bool | None = None  # None: on for NORMALIZED_SYSTEMS and the MLP kinds
    mlp_hidden: int | None = None
    mlp_width: int | None = None
    activation: str = "tanh"
    sr_threshold: float = 0.05
    sr_exact_field: bool = False
    af: AnalogConfig = field(default_factory=AnalogConfig)
    trainable_rk: bool = False


def uses_normalization(kind: str, system: str, opts: ModelOptions) -> bool:
    if opts.normalize is not None:
        return opts.normalize
    return kind in ("mlp", "mlp_sl4") or system in NORMALIZED_SYSTEMS


def build_model(kind: str, system: str, train_traj: Trajectory, opts: ModelOptions, seed: int):
    """Fresh (untrained) neural model for ``kind``."""
    d = train_traj.dim
    dt = train_traj.h
    rng = make_rng(seed, "init")
    norm = standardize_stats(train_traj.states) if uses_normalization(kind, system, opts) else None
    if kind in ("binn1", "binn4"):
        return make_binn(d, 1 if kind == "binn1" else 4, dt, rng, opts.p_lin, opts.p_bil, norm,
                         opts.trainable_rk)
    if kind in ("mlp", "mlp_sl4"):
        layout = (MLP_LAYOUT if kind == "mlp" else MLP_SL4_LAYOUT).get(system, (5, 6))
        n_hidden = opts.mlp_hidden or layout[0]
        width = opts.mlp_width or layout[1]
        mlp = init_mlp(mlp_widths(d, n_hidden, width), rng, opts.activation)
        return DirectMLP(mlp, norm) if kind == "mlp" else make_mlp_sl4(mlp, dt, norm)
    raise ValueError(f"{kind!r} is not a neural model kind")


def fit_model(kind: str, system: str, train_traj: Trajectory, opts: ModelOptions = None,
              config: TrainConfig = None, seed: int = 0, true_field=None):
    """Fit any model kind; returns ``(model, TrainResult | None)``."""
    opts = opts or ModelOptions()
    if kind == "sr":
        spec = DictionarySpec()
        if opts.sr_exact_field:
            if true_field is None:
                raise ValueError("exact-field SR needs the true vector field")
            states = train_traj.states
            derivs = true_field(states)
        else:
            states = train_traj.states[1:-1]
            derivs = estimate_derivatives(train_traj)
        model = stlsq_fit(build_dictionary(states, spec), derivs, opts.sr_threshold, spec=spec)
        model.dt = train_traj.h
        return model, None
    if kind == "af":
        return AnalogForecaster(make_pairs(train_traj), opts.af), None
    if config is None:
        config = TrainConfig(epochs=DEFAULT_EPOCHS.get(system, 100), seed=seed)
    model = build_model(kind, system, train_traj, opts, seed)
    pairs = make_pairs(train_traj)
    if isinstance(model, RKModel):
        result = train_binn(model, pairs, config)
    else:
        result = train(model, pairs, config)
    return model, result


def identification_polynomial(model):
    """Polynomial view of an identifiable model (bilinear RK model or sparse regression)."""
    if isinstance(model, RKModel):
        if not isinstance(model.block, BlockParams):
            raise TypeError("only bilinear blocks have a polynomial expansion")
        return expand_to_polynomial(model.block, model.norm)
    return model.to_polynomial()


@dataclass
class LatentConfig:
    D: int = 5
    d_latent: int = 3
    n_blocks: int = 1
    p_lin: int | None = None
    p_bil: int | None = None
    normalize: bool = True
    epochs: int = 100
    learning_rate: float = 3e-3
    batch_size: int = 256
    n_train: int = 50000
    n_test: int = 1000
    free_run_steps: int = 5000


@dataclass
class LatentRun:
    model: LatentModel
    result: TrainResult
    H: np.ndarray
    latent_test: Trajectory
    observed_test: Trajectory
    learned_test: np.ndarray  # encoded test observations
    alignment: Alignment
    one_step_rmse: float
    free_run: np.ndarray  # aligned latent states of a free observation-space rollout
    free_run_diverged: bool

    @property
    def relative_residual(self) -> np.ndarray:
        """Alignment residual RMSE over the true per-dimension std."""
        return self.alignment.residual_rmse / self.latent_test.states.std(axis=0)


def run_latent(cfg: LatentConfig = None, seed: int = 0, H=None, dataset=None,
               integrator: IntegratorConfig = None) -> LatentRun:
    """Observe lorenz63 through ``H``, fit a latent model, align it to the truth."""
    cfg = cfg or LatentConfig()
    if dataset is None:
        dataset = generate_dataset("lorenz63", cfg.n_train, cfg.n_test, seed=seed,
                                   config=integrator or IntegratorConfig())
    train_lat, test_lat = dataset
    if H is None:
        H = random_observation_map(cfg.D, train_lat.dim, make_rng(seed, "observation"))
    obs, H = synthesize_observations(train_lat, H)
    obs_test, _ = synthesize_observations(test_lat, H)
    norm = standardize_stats(obs.states) if cfg.normalize else None
    model = make_latent_model(obs.dim, cfg.d_latent, cfg.n_blocks, obs.h, make_rng(seed, "init"),
                              cfg.p_lin, cfg.p_bil, norm)
    config = TrainConfig(learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
                         epochs=cfg.epochs, seed=seed)
    result = train(model, make_pairs(obs), config)
    pred = latent_forward(model, obs_test.states[:-1])
    rmse = float(np.sqrt(np.mean((pred - obs_test.states[1:]) ** 2)))
    learned = model.encode(obs_test.states)
    alignment = align_latent(learned, test_lat.states)
    free = rollout(lambda y: latent_forward(model, y), obs_test.states[0], cfg.free_run_steps)
    return LatentRun(model, result, H, test_lat, obs_test, learned, alignment, rmse,
                     alignment.apply(model.encode(free.trajectory.states)), free.diverged)
