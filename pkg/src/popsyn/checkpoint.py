"""JSON model checkpoints.

A checkpoint is one JSON document: format version, model kind, the schema
and its SHA-256 fingerprint, the training config, per-network layer specs
and flat parameter lists.  Floats are written with Python's shortest
round-trip repr, so loading restores every parameter bit for bit.
Optimizer moments are not stored; a loaded model gets fresh Adam state.
"""
from __future__ import annotations

import json

import numpy as np

from popsyn.codec import build_layout
from popsyn.errors import CorruptFile, SchemaFingerprintMismatch, VersionMismatch
from popsyn.generators import GanModel, TrainConfig, VaeModel
from popsyn.nn_core import AdamState, DenseLayer, MlpNetwork
from popsyn.survey_data import SurveySchema

FORMAT_VERSION = 1

_NETWORKS = {"gan": ("generator", "discriminator"), "vae": ("encoder", "decoder")}


def _dump_net(net):
    layers = [{"shape": list(l.weights.shape), "activation": l.activation, "alpha": l.alpha}
              for l in net.layers]
    params = [p.reshape(-1).tolist() for p in net.params()]
    return layers, params


def checkpoint_document(model):
    schema = model.layout.schema
    doc = {
        "format_version": FORMAT_VERSION,
        "model_kind": model.kind,
        "schema_fingerprint": schema.fingerprint(),
        "schema": schema.to_json(),
        "config": model.config.to_json(),
        "layers": {},
        "params": {},
    }
    for name in _NETWORKS[model.kind]:
        doc["layers"][name], doc["params"][name] = _dump_net(getattr(model, name))
    return doc


def save_checkpoint(model, path):
    with open(path, "w") as fh:
        json.dump(checkpoint_document(model), fh, separators=(",", ":"))
        fh.write("\n")


def _load_net(layer_specs, params, layout):
    if len(params) != 2 * len(layer_specs):
        raise CorruptFile("parameter array count does not match the layer list")
    layers = []
    for i, spec in enumerate(layer_specs):
        out_dim, in_dim = spec["shape"]
        w, b = params[2 * i], params[2 * i + 1]
        if len(w) != out_dim * in_dim or len(b) != out_dim:
            raise CorruptFile(f"layer {i}: parameter counts do not match shape {spec['shape']}")
        act = spec["activation"]
        layers.append(DenseLayer(
            np.array(w, dtype=np.float64).reshape(out_dim, in_dim),
            np.array(b, dtype=np.float64),
            act,
            alpha=float(spec.get("alpha", 0.2)),
            layout=layout if act == "softmax_blocks" else None,
        ))
    return MlpNetwork(layers)


def load_checkpoint(path, schema=None):
    """Rebuild a model; ``schema``, when given, must match the stored fingerprint."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"{path}: not valid JSON ({exc})") from None
    try:
        version = doc["format_version"]
        if version != FORMAT_VERSION:
            raise VersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
        stored_schema = SurveySchema.from_json(doc["schema"])
        fp = doc["schema_fingerprint"]
        if stored_schema.fingerprint() != fp:
            raise SchemaFingerprintMismatch(f"{path}: stored fingerprint does not match its schema")
        if schema is not None and schema.fingerprint() != fp:
            raise SchemaFingerprintMismatch(f"{path}: checkpoint was trained on a different schema")
        kind = doc["model_kind"]
        if kind not in _NETWORKS:
            raise CorruptFile(f"{path}: unknown model kind {kind!r}")
        config = TrainConfig.from_json(doc["config"])
        layout = build_layout(stored_schema)
        nets = [_load_net(doc["layers"][n], doc["params"][n], layout) for n in _NETWORKS[kind]]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (VersionMismatch, SchemaFingerprintMismatch, CorruptFile)):
            raise
        raise CorruptFile(f"{path}: malformed checkpoint ({exc})") from None
    if kind == "gan":
        gen, disc = nets
        return GanModel(gen, disc, gen.input_dim, layout, config,
                        AdamState.for_params(gen.params(), config.lr_generator,
                                             config.beta1, config.beta2),
                        AdamState.for_params(disc.params(), config.lr_discriminator,
                                             config.beta1, config.beta2))
    enc, dec = nets
    return VaeModel(enc, dec, dec.input_dim, layout, config,
                    AdamState.for_params(enc.params() + dec.params(), config.lr_vae,
                                         config.beta1, config.beta2))
