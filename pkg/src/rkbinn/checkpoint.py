"""Versioned JSON checkpoints for every model kind in the package.

Floats are written with ``repr`` (shortest string that round-trips), so
a save -> load -> save cycle reproduces the file byte for byte and the
loaded parameters are bit-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .baselines import AnalogConfig, DictionarySpec, DirectMLP, MlpParams, SparseModel
from .bilinear import BlockParams, RKCoefficients, RKModel
from .latent import LatentModel

FORMAT = "rkbinn-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


class MalformedCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointInvariantError(CheckpointError):
    pass


def _arr(a) -> list:
    return np.asarray(a, dtype=np.float64).tolist()


def _norm_doc(norm):
    return None if norm is None else {"mean": _arr(norm[0]), "std": _arr(norm[1])}


def _block_doc(block) -> dict:
    if isinstance(block, BlockParams):
        return {"type": "bilinear", "d": block.d, "p_lin": block.p_lin, "p_bil": block.p_bil,
                "params": {n: _arr(v) for n, v in block.params().items()}}
    if isinstance(block, MlpParams):
        return {"type": "mlp", "widths": block.widths, "activation": block.activation,
                "weights": [_arr(w) for w in block.weights], "biases": [_arr(b) for b in block.biases]}
    raise TypeError(f"cannot serialize block of type {type(block).__name__}")


def _rk_doc(model: RKModel) -> dict:
    return {"block": _block_doc(model.block), "n_blocks": model.n_blocks, "dt": model.dt,
            "alpha": _arr(model.rk.alpha), "beta": _arr(model.rk.beta),
            "trainable_rk": model.rk.trainable, "norm": _norm_doc(model.norm)}


def to_document(model) -> dict:
    if isinstance(model, RKModel):
        body = {"kind": "rk_model", **_rk_doc(model)}
    elif isinstance(model, DirectMLP):
        body = {"kind": "direct_mlp", "block": _block_doc(model.mlp), "norm": _norm_doc(model.norm)}
    elif isinstance(model, SparseModel):
        d = model.dim
        body = {"kind": "sparse", "dictionary": {
                    "include_constant": model.spec.include_constant,
                    "include_linear": model.spec.include_linear,
                    "include_quadratic": model.spec.include_quadratic,
                    "columns": model.spec.column_names(d)},
                "d": d, "threshold": model.threshold, "dt": model.dt, "xi": _arr(model.xi)}
    elif isinstance(model, AnalogConfig):
        # instance-based: only the settings persist, the pairs come from the training data
        body = {"kind": "analog", "k": model.k, "bandwidth": model.bandwidth, "ridge": model.ridge}
    elif isinstance(model, LatentModel):
        body = {"kind": "latent", "encoder": _arr(model.encoder),
                "encoder_bias": _arr(model.encoder_bias), "decoder": _arr(model.decoder),
                "dynamics": _rk_doc(model.dynamics), "norm": _norm_doc(model.norm)}
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return {"format": FORMAT, "version": VERSION, **body}


def dumps(model) -> str:
    return json.dumps(to_document(model), sort_keys=True, indent=1) + "\n"


def save_checkpoint(model, path) -> None:
    Path(path).write_text(dumps(model))


def _f64(x, shape=None, what="array"):
    try:
        a = np.array(x, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise MalformedCheckpointError(f"{what} is not numeric") from exc
    if shape is not None and a.shape != tuple(shape):
        raise CheckpointInvariantError(f"{what} has shape {a.shape}, expected {tuple(shape)}")
    return a


def _load_norm(doc, d):
    if doc is None:
        return None
    std = _f64(doc["std"], (d,), "norm.std")
    if np.any(std <= 0):
        raise CheckpointInvariantError("norm.std entries must be positive")
    return (_f64(doc["mean"], (d,), "norm.mean"), std)


def _load_block(doc):
    if doc["type"] == "bilinear":
        d, pl, pb = int(doc["d"]), int(doc["p_lin"]), int(doc["p_bil"])
        shapes = {"W1": (pl, d), "b1": (pl,), "W2": (pb, d), "b2": (pb,),
                  "W3": (pb, d), "b3": (pb,), "W4": (d, pl + pb), "b4": (d,)}
        p = doc["params"]
        return BlockParams(**{n: _f64(p[n], s, n) for n, s in shapes.items()})
    if doc["type"] == "mlp":
        widths = [int(w) for w in doc["widths"]]
        ws = [_f64(w, (o, i), f"W{n}") for n, (w, i, o) in enumerate(zip(doc["weights"], widths[:-1], widths[1:]))]
        bs = [_f64(b, (o,), f"b{n}") for n, (b, o) in enumerate(zip(doc["biases"], widths[1:]))]
        if len(ws) != len(widths) - 1 or len(bs) != len(ws):
            raise CheckpointInvariantError("layer count does not match the declared widths")
        return MlpParams(ws, bs, doc["activation"])
    raise CheckpointInvariantError(f"unknown block type {doc['type']!r}")


def _load_rk(doc) -> RKModel:
    n_blocks = int(doc["n_blocks"])
    if n_blocks not in (1, 4):
        raise CheckpointInvariantError(f"n_blocks must be 1 or 4, got {n_blocks}")
    block = _load_block(doc["block"])
    rk = RKCoefficients(_f64(doc["alpha"], (n_blocks,), "alpha"), _f64(doc["beta"], (n_blocks,), "beta"),
                        bool(doc["trainable_rk"]))
    dt = float(doc["dt"])
    if dt <= 0:
        raise CheckpointInvariantError("dt must be positive")
    return RKModel(block, n_blocks, dt, rk, _load_norm(doc["norm"], block.in_dim))


def from_document(doc: dict):
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise MalformedCheckpointError("not an rkbinn checkpoint")
    if doc.get("version") != VERSION:
        raise CheckpointVersionError(f"checkpoint version {doc.get('version')!r}, this build reads {VERSION}")
    try:
        kind = doc["kind"]
        if kind == "rk_model":
            return _load_rk(doc)
        if kind == "direct_mlp":
            block = _load_block(doc["block"])
            return DirectMLP(block, _load_norm(doc["norm"], block.in_dim))
        if kind == "sparse":
            dd = doc["dictionary"]
            spec = DictionarySpec(dd["include_constant"], dd["include_linear"], dd["include_quadratic"])
            d = int(doc["d"])
            if dd["columns"] != spec.column_names(d):
                raise CheckpointInvariantError("dictionary column order differs from this build")
            xi = _f64(doc["xi"], (spec.n_columns(d), d), "xi")
            return SparseModel(xi, spec, float(doc["threshold"]), None if doc["dt"] is None else float(doc["dt"]))
        if kind == "analog":
            bw = doc["bandwidth"]
            return AnalogConfig(int(doc["k"]), None if bw is None else float(bw), float(doc["ridge"]))
        if kind == "latent":
            dyn = _load_rk(doc["dynamics"])
            enc = _f64(doc["encoder"], what="encoder")
            if enc.ndim != 2:
                raise CheckpointInvariantError("encoder must be a matrix")
            dl, D = enc.shape
            return LatentModel(enc, _f64(doc["encoder_bias"], (dl,), "encoder_bias"), dyn,
                               _f64(doc["decoder"], (D, dl), "decoder"), _load_norm(doc["norm"], D))
    except KeyError as exc:
        raise MalformedCheckpointError(f"missing field {exc}") from exc
    except CheckpointError:
        raise
    except ValueError as exc:
        raise CheckpointInvariantError(str(exc)) from exc
    raise MalformedCheckpointError(f"unknown model kind {kind!r}")


def load_checkpoint(path):
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedCheckpointError(f"{path}: {exc}") from exc
    return from_document(doc)
