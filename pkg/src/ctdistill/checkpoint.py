"""Self-describing checkpoint container on top of numpy's npz format.

Layout: a format-version integer, a JSON-encoded encoder config, the
parameter name order, and one array per entry under section-qualified keys
like ``model::tok_emb`` or ``bank::M``.  Float64 arrays survive the round
trip bit-exactly.
"""

import json
from dataclasses import asdict

import numpy as np

from .encoder import EncoderConfig, TransformerEncoder
from .errors import ConfigError, InputError

FORMAT_VERSION = 1


def save_checkpoint(path, model: TransformerEncoder, sections=None,
                    meta=None) -> None:
    """Write model parameters plus optional extra sections.

    ``sections`` maps section name -> {array name -> ndarray}, e.g. the
    memory bank or the projection heads.  ``meta`` is a small JSON-able
    dict (stage, step counts, seeds).
    """
    payload = {
        "__format_version__": np.asarray(FORMAT_VERSION),
        "__config__": np.asarray(json.dumps(asdict(model.config))),
        "__param_order__": np.asarray(model.param_order()),
        "__meta__": np.asarray(json.dumps(meta or {})),
    }
    for name, tensor in model.params.items():
        payload["model::" + name] = tensor.data
    for sec, arrays in (sections or {}).items():
        if sec == "model" or "::" in sec:
            raise ConfigError("invalid checkpoint section name %r" % sec)
        for name, arr in arrays.items():
            payload["%s::%s" % (sec, name)] = np.asarray(arr)
    try:
        with open(path, "wb") as fh:
            np.savez(fh, **payload)
    except OSError as exc:
        raise InputError("cannot write checkpoint %s: %s" % (path, exc))


class Checkpoint:
    def __init__(self, config: EncoderConfig, params: dict, sections: dict,
                 meta: dict, param_order: list):
        self.config = config
        self.params = params
        self.sections = sections
        self.meta = meta
        self.param_order = param_order

    def build_model(self) -> TransformerEncoder:
        model = TransformerEncoder(self.config, seed=0)
        model.load_arrays(self.params, strict=True)
        return model


def load_checkpoint(path) -> Checkpoint:
    try:
        z = np.load(path, allow_pickle=False)
    except OSError as exc:
        raise InputError("cannot read checkpoint %s: %s" % (path, exc))
    with z:
        if "__format_version__" not in z:
            raise ConfigError("%s is not a checkpoint (no format version)" % path)
        version = int(z["__format_version__"])
        if version != FORMAT_VERSION:
            raise ConfigError(
                "checkpoint format %d unsupported (expected %d)"
                % (version, FORMAT_VERSION)
            )
        config = EncoderConfig(**json.loads(str(z["__config__"])))
        meta = json.loads(str(z["__meta__"])) if "__meta__" in z else {}
        order = [str(s) for s in z["__param_order__"]]
        params = {}
        sections = {}
        for key in z.files:
            if key.startswith("__"):
                continue
            sec, _, name = key.partition("::")
            if sec == "model":
                params[name] = z[key]
            else:
                sections.setdefault(sec, {})[name] = z[key]
    missing = [n for n in order if n not in params]
    if missing:
        raise ConfigError("checkpoint missing parameters: %s" % missing[:3])
    return Checkpoint(config, params, sections, meta, order)
