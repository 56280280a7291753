"""Flat key=value config files with sections, merged under CLI flags.

Sections: [encoder] feeds EncoderConfig, [train] feeds TrainConfig,
[loss] feeds LossWeights, [data] feeds SyntheticSpec.  Any value given on
the command line wins over the file; the file wins over built-in defaults.
"""

import configparser
import os
from dataclasses import fields

from .data import SyntheticSpec
from .encoder import EncoderConfig
from .errors import ConfigError
from .losses import LossWeights
from .train import TrainConfig

SECTIONS = ("encoder", "train", "loss", "data")


def read_config_file(path) -> dict:
    """Parse into {section: {key: raw string value}}."""
    if not os.path.exists(path):
        raise ConfigError("config file %s does not exist" % path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError("cannot parse %s: %s" % (path, exc))
    out = {}
    for sec in parser.sections():
        if sec not in SECTIONS:
            raise ConfigError(
                "unknown config section [%s] (expected one of %s)"
                % (sec, SECTIONS)
            )
        out[sec] = dict(parser.items(sec))
    return out


def _coerce(dataclass_type, mapping: dict, where: str) -> dict:
    """String values -> the field's declared type."""
    spec = {f.name: f.type for f in fields(dataclass_type)}
    out = {}
    for key, raw in mapping.items():
        if key not in spec:
            raise ConfigError("unknown key %r in [%s]" % (key, where))
        ftype = spec[key]
        try:
            if ftype is bool:
                if str(raw).lower() in ("1", "true", "yes", "on"):
                    out[key] = True
                elif str(raw).lower() in ("0", "false", "no", "off"):
                    out[key] = False
                else:
                    raise ValueError(raw)
            elif ftype in (int, float, str):
                out[key] = ftype(raw)
            else:
                out[key] = raw  # nested dataclasses are built separately
        except (TypeError, ValueError):
            raise ConfigError(
                "bad value %r for %s in [%s]" % (raw, key, where)
            )
    return out


def merge(file_map: dict, overrides: dict) -> dict:
    """overrides win; None values in overrides are ignored."""
    out = dict(file_map)
    for k, v in overrides.items():
        if v is not None:
            out[k] = v
    return out


def build_encoder_config(file_sections: dict, overrides: dict) -> EncoderConfig:
    raw = merge(file_sections.get("encoder", {}), overrides)
    return EncoderConfig(**_coerce(EncoderConfig, raw, "encoder"))


def build_loss_weights(file_sections: dict, overrides: dict) -> LossWeights:
    raw = merge(file_sections.get("loss", {}), overrides)
    return LossWeights(**_coerce(LossWeights, raw, "loss"))


def build_train_config(file_sections: dict, overrides: dict,
                       encoder: EncoderConfig,
                       weights: LossWeights) -> TrainConfig:
    raw = merge(file_sections.get("train", {}), overrides)
    kwargs = _coerce(TrainConfig, raw, "train")
    kwargs.pop("encoder", None)
    kwargs.pop("weights", None)
    if "stage" not in kwargs:
        raise ConfigError("a training stage is required (flag or [train] stage)")
    return TrainConfig(encoder=encoder, weights=weights, **kwargs)


def build_synthetic_spec(file_sections: dict, overrides: dict) -> SyntheticSpec:
    raw = merge(file_sections.get("data", {}), overrides)
    return SyntheticSpec(**_coerce(SyntheticSpec, raw, "data"))
