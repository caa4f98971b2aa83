"""Run configuration: JSON config files merged with command-line overrides."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .priors import PriorHyperparams
from .sampler import SamplerConfig

MODELS = ("wrgm", "rgm", "mfm")
MODEL_METRIC = {"wrgm": "wasserstein", "rgm": "mean_euclidean", "mfm": "none"}

PRIOR_FIELDS = {f.name for f in fields(PriorHyperparams)}
SAMPLER_FIELDS = {f.name for f in fields(SamplerConfig)} - {"prior"}


@dataclass(frozen=True)
class RunConfig:
    model: str = "wrgm"
    covariance: str = "full"
    prior: PriorHyperparams = field(default_factory=PriorHyperparams)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    data: object = None
    output_dir: str = "."
    chains: int = 1

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"must be one of {MODELS}, got {self.model!r}", field="model")
        if self.covariance not in ("full", "diagonal"):
            raise ConfigError(f"must be 'full' or 'diagonal', got {self.covariance!r}",
                              field="covariance")
        if not isinstance(self.chains, int) or self.chains < 1:
            raise ConfigError(f"must be a positive integer, got {self.chains!r}", field="chains")
        # the model name fixes the repulsion metric; covariance fixes the shape
        prior = replace(self.prior, repulsion_metric=MODEL_METRIC[self.model],
                        covariance_shape=self.covariance)
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "sampler", replace(self.sampler, prior=prior))

    def to_dict(self):
        return {
            "model": self.model,
            "covariance": self.covariance,
            "prior": self.prior.to_dict(),
            "sampler": {k: v for k, v in self.sampler.to_dict().items() if k != "prior"},
            "data": self.data,
            "output_dir": self.output_dir,
            "chains": self.chains,
        }


def load_config_file(path):
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return d


def build_run_config(file_cfg=None, overrides=None) -> RunConfig:
    """Merge a config-file dict with flag overrides (flags win).

    ``overrides`` is a flat dict keyed by prior/sampler field names or the
    top-level RunConfig fields; ``None`` values are ignored.
    """
    file_cfg = dict(file_cfg or {})
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    unknown = set(file_cfg) - {"model", "covariance", "prior", "sampler", "data",
                               "output_dir", "chains"}
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    prior_d = dict(file_cfg.get("prior") or {})
    sampler_d = dict(file_cfg.get("sampler") or {})
    for key in list(prior_d):
        if key not in PRIOR_FIELDS:
            raise ConfigError("unknown prior field", field=f"prior.{key}")
    for key in list(sampler_d):
        if key not in SAMPLER_FIELDS:
            raise ConfigError("unknown sampler field", field=f"sampler.{key}")
    top = {k: file_cfg[k] for k in ("model", "covariance", "data", "output_dir", "chains")
           if k in file_cfg}
    for k, v in overrides.items():
        if k in PRIOR_FIELDS:
            prior_d[k] = v
        elif k in SAMPLER_FIELDS:
            sampler_d[k] = v
        else:
            top[k] = v
    prior = PriorHyperparams.from_dict(prior_d)
    sampler = SamplerConfig(prior=prior, **sampler_d)
    return RunConfig(prior=prior, sampler=sampler, **top)
