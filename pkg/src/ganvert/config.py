"""Run configuration: one JSON document for the generator, loss, inversion,
master seed and I/O paths.

Missing sections and keys take their defaults; unknown keys are rejected.
``RunConfig.to_dict`` returns the fully populated document, which every
CLI artifact embeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
import json

import jsonschema

from .generator import GeneratorConfig
from .inversion import InversionConfig
from .loss import LossConfig


class RunConfigError(ValueError):
    pass


_INT = {"type": "integer"}
_POS_INT = {"type": "integer", "minimum": 1}
_NONNEG = {"type": "number", "minimum": 0}
_POS = {"type": "number", "exclusiveMinimum": 0}


def _section(props):
    return {"type": "object", "properties": props, "additionalProperties": False}


SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ganvert run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "generator": _section({
            "d_z": _POS_INT,
            "dense_out": {"type": "array", "items": _POS_INT, "minItems": 3, "maxItems": 3},
            "block_channels": {"type": "array", "items": _POS_INT, "minItems": 1},
            "attention_stage": {"type": "integer", "minimum": 0},
            "attention_subsample": _POS_INT,
            "out_channels": _POS_INT,
            "out_resolution": _POS_INT,
        }),
        "loss": _section({"lambda_feat": _NONNEG, "lambda1": _NONNEG, "lambda2": _NONNEG}),
        "inversion": _section({
            "steps_z": _POS_INT,
            "steps_delta": _POS_INT,
            "lr_z": _POS,
            "lr_delta": _POS,
            "restarts": _POS_INT,
            "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "eps": _POS,
            "patience": _POS_INT,
            "plateau_tol": _NONNEG,
            "lr_decay": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            "extractor": {"enum": ["randconv", "pixel"]},
            "extractor_seed": {"type": "integer", "minimum": 0},
        }),
        "seed": {"type": "integer", "minimum": 0},
        "io": _section({
            "weights": {"type": "string"},
            "target": {"type": "string"},
            "out": {"type": "string"},
        }),
    },
}


def _inversion_defaults():
    return {f.name: f.default for f in fields(InversionConfig) if f.name not in ("seed", "loss")}


@dataclass(frozen=True)
class RunConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    inversion: dict = field(default_factory=dict)
    seed: int = 0
    io: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "inversion", {**_inversion_defaults(), **self.inversion})
        object.__setattr__(self, "io", dict(self.io))

    @classmethod
    def from_dict(cls, doc):
        try:
            jsonschema.validate(doc, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise RunConfigError(f"run config {where}: {exc.message}") from None
        try:
            return cls(GeneratorConfig.from_dict(doc.get("generator", {})),
                       LossConfig(**doc.get("loss", {})), doc.get("inversion", {}),
                       doc.get("seed", 0), doc.get("io", {}))
        except ValueError as exc:
            raise RunConfigError(f"run config: {exc}") from None

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise RunConfigError(f"run config is not valid JSON: {exc}") from None
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.from_json(f.read())

    def inversion_config(self):
        return InversionConfig(**self.inversion, seed=self.seed, loss=self.loss)

    def replace(self, **changes):
        d = self.to_dict()
        for k, v in changes.items():
            d[k] = v
        return RunConfig.from_dict(d)

    def to_dict(self):
        return {
            "generator": self.generator.to_dict(),
            "loss": self.loss.to_dict(),
            "inversion": dict(self.inversion),
            "seed": self.seed,
            "io": dict(self.io),
        }
