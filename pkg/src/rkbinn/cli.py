"""Command-line entry point: ``rkbinn {generate,train,evaluate,latent,gradcheck}``.

Every command takes ``--config run.json`` (a flat JSON object whose keys
are the long option names with ``-`` replaced by ``_``); flags given on
the command line override config keys. The merged effective config is
written to ``manifest.json`` in the output directory together with a
timestamp, which is the only non-reproducible field of a run.

Exit codes: 0 success, 2 usage, 3 I/O (missing/unreadable/malformed
files), 4 numerical divergence, 5 data or dimension mismatch.
"""

from __future__ import annotations

import argparse
import datetime
import json
import logging
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DIVERGED, EXIT_MISMATCH = 0, 2, 3, 4, 5

log = logging.getLogger("rkbinn")

# numpy and numba are imported lazily so that --threads can still reach the
# BLAS and numba thread pools through the environment
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS")


class UsageError(Exception):
    pass


class MismatchError(Exception):
    pass


DEFAULTS = {
    "generate": {"system": None, "seed": 0, "n_train": 50000, "n_test": 1000, "h": None, "spinup": 1000,
                 "rel_tol": 1e-8, "abs_tol": 1e-10, "max_substeps": 10_000_000, "params": {}, "out": "data"},
    "train": {"data": "data", "system": None, "kind": "binn4", "seed": 0, "epochs": None,
              "learning_rate": 1e-3, "batch_size": 256, "incremental": False, "normalize": None,
              "p_lin": None, "p_bil": None, "mlp_hidden": None, "mlp_width": None, "activation": "tanh",
              "trainable_rk": False, "sr_threshold": 0.05, "sr_exact_field": False,
              "af_k": 50, "af_bandwidth": None, "af_ridge": 1e-6, "out": "run"},
    "evaluate": {"data": "data", "checkpoint": None, "kind": None, "system": None, "horizons": [1, 4, 8],
                 "af_k": 50, "af_bandwidth": None, "af_ridge": 1e-6, "out": None},
    "latent": {"seed": 0, "D": 5, "d_latent": 3, "n_blocks": 1, "p_lin": None, "p_bil": None,
               "normalize": True, "epochs": 100, "learning_rate": 3e-3, "batch_size": 256,
               "n_train": 50000, "n_test": 1000, "free_run_steps": 5000, "observation_map": "random",
               "out": "latent"},
    "gradcheck": {"kinds": ["binn1", "binn4", "mlp", "mlp_sl4", "latent"], "seed": 0, "batch": 8,
                  "tol": 1e-5},
}


def _parse_param(text: str):
    name, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected name=value, got {text!r}")
    return name, float(value)


def _bool_flag(p, name, help_text):
    p.add_argument(f"--{name}", dest=name.replace("-", "_"), action=argparse.BooleanOptionalAction,
                   help=help_text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON file with option values")
    common.add_argument("--threads", type=int, help="cap on BLAS/numba worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="rkbinn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    g = sub.add_parser("generate", parents=[common], argument_default=S, help="simulate train/test series")
    g.add_argument("--system")
    g.add_argument("--seed", type=int)
    g.add_argument("--n-train", type=int)
    g.add_argument("--n-test", type=int)
    g.add_argument("--h", type=float, help="output step (system default if omitted)")
    g.add_argument("--spinup", type=int)
    g.add_argument("--rel-tol", type=float)
    g.add_argument("--abs-tol", type=float)
    g.add_argument("--max-substeps", type=int)
    g.add_argument("--param", dest="param_list", action="append", type=_parse_param,
                   help="override a system parameter, e.g. --param rho=28")
    g.add_argument("--out")

    t = sub.add_parser("train", parents=[common], argument_default=S, help="fit one model kind")
    t.add_argument("--data", help="directory holding train.csv")
    t.add_argument("--system", help="defaults to the system recorded in the data manifest")
    t.add_argument("--kind")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--learning-rate", type=float)
    t.add_argument("--batch-size", type=int)
    _bool_flag(t, "incremental", "one-block phase before the four-block phase")
    _bool_flag(t, "normalize", "z-score states (default depends on system and kind)")
    t.add_argument("--p-lin", type=int)
    t.add_argument("--p-bil", type=int)
    t.add_argument("--mlp-hidden", type=int)
    t.add_argument("--mlp-width", type=int)
    t.add_argument("--activation", choices=["tanh", "relu"])
    _bool_flag(t, "trainable-rk", "learn alpha/beta as well")
    t.add_argument("--sr-threshold", type=float)
    _bool_flag(t, "sr-exact-field", "regress on the true field instead of finite differences")
    t.add_argument("--af-k", type=int)
    t.add_argument("--af-bandwidth", type=float)
    t.add_argument("--af-ridge", type=float)
    t.add_argument("--out")

    e = sub.add_parser("evaluate", parents=[common], argument_default=S, help="forecast and identification reports")
    e.add_argument("--data", help="directory holding test.csv (and train.csv for af)")
    e.add_argument("--checkpoint")
    e.add_argument("--kind", choices=["af", "oracle"], help="checkpoint-free model kinds")
    e.add_argument("--system")
    e.add_argument("--horizons", type=int, nargs="+")
    e.add_argument("--af-k", type=int)
    e.add_argument("--af-bandwidth", type=float)
    e.add_argument("--af-ridge", type=float)
    e.add_argument("--out")

    lt = sub.add_parser("latent", parents=[common], argument_default=S, help="latent lorenz63 experiment")
    lt.add_argument("--seed", type=int)
    lt.add_argument("--D", type=int, help="observation dim")
    lt.add_argument("--d-latent", type=int)
    lt.add_argument("--n-blocks", type=int, choices=[1, 4])
    lt.add_argument("--p-lin", type=int)
    lt.add_argument("--p-bil", type=int)
    _bool_flag(lt, "normalize", "z-score the observations")
    lt.add_argument("--epochs", type=int)
    lt.add_argument("--learning-rate", type=float)
    lt.add_argument("--batch-size", type=int)
    lt.add_argument("--n-train", type=int)
    lt.add_argument("--n-test", type=int)
    lt.add_argument("--free-run-steps", type=int)
    lt.add_argument("--observation-map", choices=["random", "identity"],
                    help="identity: first d_latent observations copy the state, the rest are zero")
    lt.add_argument("--out")

    gc = sub.add_parser("gradcheck", parents=[common], argument_default=S,
                        help="finite-difference check of every trainable model kind")
    gc.add_argument("--kinds", nargs="+", choices=DEFAULTS["gradcheck"]["kinds"])
    gc.add_argument("--seed", type=int)
    gc.add_argument("--batch", type=int)
    gc.add_argument("--tol", type=float)
    return parser


def effective_config(command: str, ns: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    if getattr(ns, "config", None):
        try:
            loaded = json.loads(Path(ns.config).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {ns.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
        cfg.update(loaded)
    explicit = {k: v for k, v in vars(ns).items() if k not in ("command", "config", "threads", "verbose")}
    if "param_list" in explicit:
        cfg["params"] = {**cfg["params"], **dict(explicit.pop("param_list"))}
    cfg.update(explicit)
    return cfg


def write_manifest(out: Path, command: str, cfg: dict, extra: dict | None = None) -> None:
    doc = {"command": command, "config": cfg,
           "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")}
    doc.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_series(path: Path):
    from .dynamics import read_trajectory_csv
    if not path.is_file():
        raise FileNotFoundError(f"missing data file {path}")
    try:
        return read_trajectory_csv(path)
    except (ValueError, IndexError) as exc:
        raise OSError(f"malformed trajectory file {path}: {exc}") from exc


def _data_manifest(data_dir: Path) -> dict:
    p = data_dir / "manifest.json"
    if not p.is_file():
        return {}
    try:
        return json.loads(p.read_text()).get("config", {})
    except json.JSONDecodeError:
        return {}


def _resolve_system(cfg: dict, data_dir: Path | None = None):
    from .dynamics import SYSTEM_NAMES, make_system
    recorded = _data_manifest(data_dir) if data_dir is not None else {}
    name = cfg.get("system") or recorded.get("system")
    if name is None:
        return None
    if name not in SYSTEM_NAMES:
        raise UsageError(f"unknown system {name!r}; valid names: {', '.join(SYSTEM_NAMES)}")
    params = cfg.get("params") or recorded.get("params") or {}
    try:
        return make_system(name, **params)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------------------
# commands


def cmd_generate(cfg: dict) -> int:
    from .dynamics import IntegratorConfig, generate_dataset, write_trajectory_csv
    if cfg["system"] is None:
        raise UsageError("generate needs --system")
    system = _resolve_system(cfg)
    integ = IntegratorConfig("rk45", cfg["rel_tol"], cfg["abs_tol"], cfg["max_substeps"])
    train, test = generate_dataset(system, cfg["n_train"], cfg["n_test"], cfg["h"], cfg["spinup"],
                                   cfg["seed"], integ)
    out = _outdir(cfg["out"])
    write_trajectory_csv(train, out / "train.csv")
    write_trajectory_csv(test, out / "test.csv")
    cfg = {**cfg, "h": train.h, "params": dict(system.params)}
    write_manifest(out, "generate", cfg, {"solver": "dormand-prince 5(4)", "files": ["train.csv", "test.csv"]})
    print(f"{system.name}: {len(train)} train and {len(test)} test states (h={train.h}) -> {out}")
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    import numpy as np

    from .baselines import AnalogConfig
    from .checkpoint import save_checkpoint
    from .experiments import DEFAULT_EPOCHS, MODEL_KINDS, ModelOptions, fit_model
    from .training import TrainConfig, write_training_log

    kind = cfg["kind"]
    if kind not in MODEL_KINDS:
        raise UsageError(f"unknown model kind {kind!r}; valid kinds: {', '.join(MODEL_KINDS)}")
    data_dir = Path(cfg["data"])
    train_traj = _read_series(data_dir / "train.csv")
    system = _resolve_system(cfg, data_dir)
    if system is None:
        raise UsageError("no --system given and none recorded next to the data")
    if system.dim != train_traj.dim:
        raise MismatchError(f"{system.name} has dim {system.dim} but the data has dim {train_traj.dim}")
    af = AnalogConfig(cfg["af_k"], cfg["af_bandwidth"], cfg["af_ridge"])
    opts = ModelOptions(cfg["p_lin"], cfg["p_bil"], cfg["normalize"], cfg["mlp_hidden"], cfg["mlp_width"],
                        cfg["activation"], cfg["sr_threshold"], cfg["sr_exact_field"], af, cfg["trainable_rk"])
    epochs = cfg["epochs"] or DEFAULT_EPOCHS.get(system.name, 100)
    tcfg = TrainConfig(learning_rate=cfg["learning_rate"], batch_size=cfg["batch_size"], epochs=epochs,
                       seed=cfg["seed"], incremental=cfg["incremental"])
    out = _outdir(cfg["out"])
    cfg = {**cfg, "system": system.name, "epochs": epochs}
    if kind == "af":
        save_checkpoint(af, out / "checkpoint.json")
        write_manifest(out, "train", cfg)
        print("af is instance-based: stored its settings, the pairs are read at evaluation time")
        return EXIT_OK
    model, result = fit_model(kind, system.name, train_traj, opts, tcfg, cfg["seed"], true_field=system.field)
    save_checkpoint(model, out / "checkpoint.json")
    if result is not None:
        write_training_log(result.history, out / "training_log.csv")
        units = " (normalized units)" if model.norm is not None else ""
        print(f"{kind} on {system.name}: final train RMSE {np.sqrt(result.final_train_mse):.4e}, "
              f"best val RMSE {np.sqrt(result.best_val_mse):.4e}{units}")
    else:
        X = train_traj.states
        rmse = float(np.sqrt(np.mean((model.predict(X[:-1]) - X[1:]) ** 2)))
        print(f"{kind} on {system.name}: one-step train RMSE {rmse:.4e}, "
              f"{int(np.count_nonzero(model.xi))} active terms")
    write_manifest(out, "train", cfg)
    return EXIT_OK


def _load_predictor(cfg: dict, data_dir: Path, test):
    from .baselines import AnalogConfig, AnalogForecaster
    from .checkpoint import load_checkpoint
    from .evaluation import ReplayPredictor
    from .training import make_pairs

    if cfg["checkpoint"] is None:
        if cfg["kind"] == "oracle":
            return ReplayPredictor(test), "oracle"
        if cfg["kind"] == "af":
            af = AnalogConfig(cfg["af_k"], cfg["af_bandwidth"], cfg["af_ridge"])
            return AnalogForecaster(make_pairs(_read_series(data_dir / "train.csv")), af), "af"
        raise UsageError("evaluate needs --checkpoint or --kind {af,oracle}")
    path = Path(cfg["checkpoint"])
    if not path.is_file():
        raise FileNotFoundError(f"missing checkpoint {path}")
    model = load_checkpoint(path)
    if isinstance(model, AnalogConfig):
        return AnalogForecaster(make_pairs(_read_series(data_dir / "train.csv")), model), "af"
    return model, _model_label(model)


def _model_label(model) -> str:
    from .baselines import DirectMLP, MlpParams, SparseModel
    from .bilinear import RKModel
    from .latent import LatentModel
    if isinstance(model, RKModel):
        if isinstance(model.block, MlpParams):
            return "mlp_sl4"
        return f"binn{model.n_blocks}"
    if isinstance(model, DirectMLP):
        return "mlp"
    if isinstance(model, SparseModel):
        return "sr"
    if isinstance(model, LatentModel):
        return "latent"
    return type(model).__name__


def cmd_evaluate(cfg: dict) -> int:
    from .baselines import SparseModel
    from .bilinear import BlockParams, RKModel
    from .evaluation import (format_forecast_table, format_identification_table, parameter_mse,
                             rmse_at_horizons, write_forecast_csv, write_identification_csv)
    from .experiments import identification_polynomial

    data_dir = Path(cfg["data"])
    test = _read_series(data_dir / "test.csv")
    predictor, label = _load_predictor(cfg, data_dir, test)
    if predictor.dim != test.dim:
        raise MismatchError(f"model dim {predictor.dim} does not match test data dim {test.dim}")
    horizons = sorted(set(int(m) for m in cfg["horizons"]))
    if horizons[0] < 1:
        raise UsageError("horizons must be positive step counts")
    report = rmse_at_horizons(predictor.predict, test, horizons, label)
    out_default = Path(cfg["checkpoint"]).parent if cfg["checkpoint"] else Path("eval")
    out = _outdir(cfg["out"] or out_default)
    write_forecast_csv([report], out / "report.csv", test.h)
    table = format_forecast_table([report])
    (out / "report.txt").write_text(table + "\n")
    print(table)
    system = _resolve_system(cfg, data_dir)
    identifiable = isinstance(predictor, SparseModel) or (
        isinstance(predictor, RKModel) and isinstance(predictor.block, BlockParams))
    extra = {}
    if identifiable and system is not None and system.name == "lorenz63":
        ident = parameter_mse(identification_polynomial(predictor), system)
        write_identification_csv(ident, out / "identification.csv")
        text = format_identification_table({label: ident})
        (out / "identification.txt").write_text(text + "\n")
        print(text)
        extra["identification_mse"] = ident.mse
    write_manifest(out, "evaluate", cfg, {"rmse": dict(zip(map(str, report.horizons), report.rmse)),
                                          "n_diverged": report.n_diverged[0], **extra})
    return EXIT_OK


def cmd_latent(cfg: dict) -> int:
    import numpy as np

    from .checkpoint import save_checkpoint
    from .dynamics import Trajectory, write_trajectory_csv
    from .experiments import LatentConfig, run_latent
    from .training import write_training_log

    lcfg = LatentConfig(cfg["D"], cfg["d_latent"], cfg["n_blocks"], cfg["p_lin"], cfg["p_bil"],
                        cfg["normalize"], cfg["epochs"], cfg["learning_rate"], cfg["batch_size"],
                        cfg["n_train"], cfg["n_test"], cfg["free_run_steps"])
    if lcfg.d_latent != 3:
        raise MismatchError("the latent experiment observes lorenz63, so d_latent must be 3")
    if lcfg.D <= lcfg.d_latent:
        raise UsageError("D must exceed d_latent")
    H = None
    if cfg["observation_map"] == "identity":
        H = np.vstack([np.eye(lcfg.d_latent), np.zeros((lcfg.D - lcfg.d_latent, lcfg.d_latent))])
    run = run_latent(lcfg, cfg["seed"], H)
    out = _outdir(cfg["out"])
    truth = run.latent_test
    write_trajectory_csv(truth, out / "latent_true.csv")
    write_trajectory_csv(Trajectory(truth.t0, truth.h, run.alignment.apply(run.learned_test)),
                         out / "latent_learned_aligned.csv")
    write_trajectory_csv(Trajectory(truth.t0, truth.h, run.free_run), out / "latent_free_run_aligned.csv")
    save_checkpoint(run.model, out / "checkpoint.json")
    write_training_log(run.result.history, out / "training_log.csv")
    rel = run.relative_residual
    lines = [
        f"observation one-step RMSE   {run.one_step_rmse:.4e}",
        f"alignment residual RMSE     {run.alignment.residual_rmse:.4e}",
        "residual / true std         " + " ".join(f"{r:.3e}" for r in rel),
        f"free run diverged           {run.free_run_diverged}",
        f"free run first component    [{run.free_run[:, 0].min():.3f}, {run.free_run[:, 0].max():.3f}]",
    ]
    report = "\n".join(lines)
    (out / "latent_report.txt").write_text(report + "\n")
    print(report)
    write_manifest(out, "latent", cfg, {"H": run.H.tolist(), "one_step_rmse": run.one_step_rmse,
                                        "alignment_residual_rmse": run.alignment.residual_rmse})
    return EXIT_OK


def cmd_gradcheck(cfg: dict) -> int:
    from .baselines import DirectMLP, init_mlp, make_mlp_sl4
    from .bilinear import make_binn
    from .latent import make_latent_model
    from .numerics import make_rng
    from .training import gradcheck_report

    worst = 0.0
    for kind in cfg["kinds"]:
        rng = make_rng(cfg["seed"], "gradcheck-" + kind)
        if kind in ("binn1", "binn4"):
            model = make_binn(3, 1 if kind == "binn1" else 4, 0.05, rng)
        elif kind == "mlp":
            model = DirectMLP(init_mlp([3, 6, 6, 3], rng), None)
        elif kind == "mlp_sl4":
            model = make_mlp_sl4(init_mlp([3, 6, 6, 3], rng), 0.05)
        else:
            model = make_latent_model(5, 3, 4, 0.05, rng)
        for p in model.params().values():
            p += 0.1 * rng.standard_normal(p.shape)  # nonzero biases exercise every path
        X = rng.standard_normal((cfg["batch"], model.dim))
        Y = rng.standard_normal((cfg["batch"], model.dim))
        err = gradcheck_report(model, (X, Y))
        worst = max(worst, err)
        print(f"{kind:8s} max relative error {err:.3e}")
    if worst >= cfg["tol"]:
        log.error("gradient check failed: %.3e >= %.1e", worst, cfg["tol"])
        return EXIT_DIVERGED
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate,
            "latent": cmd_latent, "gradcheck": cmd_gradcheck}


def _apply_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be >= 1")
    for var in _THREAD_VARS:
        os.environ[var] = str(n)
    if "numba" in sys.modules:
        import numba
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(ns, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _apply_threads(getattr(ns, "threads", None))
        cfg = effective_config(ns.command, ns)
        return COMMANDS[ns.command](cfg)
    except UsageError as exc:
        print(f"rkbinn: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MismatchError as exc:
        print(f"rkbinn: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except Exception as exc:  # classify library errors into exit codes
        code = _classify(exc)
        if code is None:
            raise
        print(f"rkbinn: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code


def _classify(exc: Exception) -> int | None:
    from .checkpoint import CheckpointError
    from .dynamics import IntegrationError
    from .numerics import DimensionError
    if isinstance(exc, DimensionError):
        return EXIT_MISMATCH
    if isinstance(exc, (CheckpointError, OSError)):
        return EXIT_IO
    if isinstance(exc, (FloatingPointError, IntegrationError)):
        return EXIT_DIVERGED
    return None


if __name__ == "__main__":
    sys.exit(main())
