"""Experiment configuration: plain-text `section.key = value` files.

Blank lines and `#` comments are ignored. Every key has a default, so an
empty file yields the default experiment; unknown keys and invariant
violations are rejected with the offending key named.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from . import data as dat
from . import losses as lss
from . import model as mdl
from . import trainer as trn
from .data import ConfigError

DEFAULT_MASTER_SEED = 2024


@dataclass
class ExperimentConfig:
    dataset: dat.DatasetConfig = field(default_factory=dat.DatasetConfig)
    model: mdl.ModelConfig = field(default_factory=lambda: mdl.ModelConfig(input_dim=0))
    loss: lss.LossConfig = field(default_factory=lss.LossConfig)
    optimizer: trn.OptimizerConfig = field(default_factory=trn.OptimizerConfig)
    early_stop: trn.EarlyStopConfig = field(default_factory=trn.EarlyStopConfig)
    variants: list[trn.Variant] = field(default_factory=lambda: list(trn.Variant))
    n_runs: int = 10
    master_seed: int = DEFAULT_MASTER_SEED
    output_dir: str = "results"

    def __post_init__(self):
        # the encoder consumes the generated features directly
        if self.model.input_dim == 0:
            self.model.input_dim = self.dataset.feature_dim

    def validate(self) -> None:
        self.dataset.validate()
        self.model.validate()
        self.optimizer.validate()
        self.early_stop.validate()
        if self.model.input_dim != self.dataset.feature_dim:
            raise ConfigError(
                f"model.input_dim {self.model.input_dim} != dataset.feature_dim {self.dataset.feature_dim}"
            )
        if self.n_runs < 1:
            raise ConfigError(f"experiment.n_runs must be >= 1, got {self.n_runs}")
        if not self.variants:
            raise ConfigError("experiment.variants must not be empty")
        margin_matters = any(v != trn.Variant.NO_MARGIN for v in self.variants)
        try:
            self.loss.validate(require_margin=margin_matters)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def default_config() -> ExperimentConfig:
    return ExperimentConfig()


def _parse_domains(text: str) -> list[dat.DomainSpec]:
    # role:offset:count0,count1[;role:offset:...]  domain ids follow position
    specs = []
    for i, chunk in enumerate(text.split(";")):
        parts = chunk.strip().split(":")
        if len(parts) != 3:
            raise ConfigError(f"dataset.domains entry {chunk!r} is not role:offset:counts")
        role, offset, counts = parts
        specs.append(
            dat.DomainSpec(
                domain_id=i,
                nuisance_offset=float(offset),
                role=role.strip(),
                class_counts=[int(c) for c in counts.split(",")],
            )
        )
    return specs


def _emit_domains(specs: list[dat.DomainSpec]) -> str:
    return ";".join(
        f"{s.role}:{s.nuisance_offset!r}:{','.join(str(c) for c in s.class_counts)}" for s in specs
    )


def _parse_fractions(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"dataset.split_fractions needs three values, got {text!r}")
    return (parts[0], parts[1], parts[2])


def _parse_hidden(text: str) -> list[int]:
    text = text.strip()
    if not text:
        return []
    return [int(p) for p in text.split(",")]


def _parse_variants(text: str) -> list[trn.Variant]:
    return [trn.parse_variant(p.strip()) for p in text.split(",") if p.strip()]


_SETTERS = {
    "dataset.num_classes": lambda c, v: setattr(c.dataset, "num_classes", int(v)),
    "dataset.feature_dim": lambda c, v: setattr(c.dataset, "feature_dim", int(v)),
    "dataset.class_signal": lambda c, v: setattr(c.dataset, "class_signal", float(v)),
    "dataset.nuisance_scale": lambda c, v: setattr(c.dataset, "nuisance_scale", float(v)),
    "dataset.noise_sigma": lambda c, v: setattr(c.dataset, "noise_sigma", float(v)),
    "dataset.split_fractions": lambda c, v: setattr(c.dataset, "split_fractions", _parse_fractions(v)),
    "dataset.seed": lambda c, v: setattr(c.dataset, "seed", int(v)),
    "dataset.domains": lambda c, v: setattr(c.dataset, "domains", _parse_domains(v)),
    "model.encoder_hidden": lambda c, v: setattr(c.model, "encoder_hidden", _parse_hidden(v)),
    "model.latent_dim": lambda c, v: setattr(c.model, "latent_dim", int(v)),
    "loss.lambda_cen": lambda c, v: setattr(c.loss, "lambda_cen", float(v)),
    "loss.lambda_latent": lambda c, v: setattr(c.loss, "lambda_latent", float(v)),
    "loss.r": lambda c, v: setattr(c.loss, "r", float(v)),
    "loss.d": lambda c, v: setattr(c.loss, "d", float(v)),
    "optimizer.beta1": lambda c, v: setattr(c.optimizer, "beta1", float(v)),
    "optimizer.beta2": lambda c, v: setattr(c.optimizer, "beta2", float(v)),
    "optimizer.weight_decay": lambda c, v: setattr(c.optimizer, "weight_decay", float(v)),
    "optimizer.lr_O": lambda c, v: setattr(c.optimizer, "lr_O", float(v)),
    "optimizer.lr_EC": lambda c, v: setattr(c.optimizer, "lr_EC", float(v)),
    "optimizer.eps": lambda c, v: setattr(c.optimizer, "eps", float(v)),
    "early_stop.patience": lambda c, v: setattr(c.early_stop, "patience", int(v)),
    "early_stop.max_steps": lambda c, v: setattr(c.early_stop, "max_steps", int(v)),
    "early_stop.eval_interval": lambda c, v: setattr(c.early_stop, "eval_interval", int(v)),
    "experiment.variants": lambda c, v: setattr(c, "variants", _parse_variants(v)),
    "experiment.n_runs": lambda c, v: setattr(c, "n_runs", int(v)),
    "experiment.master_seed": lambda c, v: setattr(c, "master_seed", int(v)),
    "experiment.output_dir": lambda c, v: setattr(c, "output_dir", v),
}


def parse_config_text(text: str) -> ExperimentConfig:
    cfg = default_config()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        setter = _SETTERS.get(key)
        if setter is None:
            raise ConfigError(f"line {lineno}: unknown config key: {key}")
        try:
            setter(cfg, value)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    cfg.model.input_dim = cfg.dataset.feature_dim
    cfg.model.num_classes = cfg.dataset.num_classes
    cfg.validate()
    return cfg


def parse_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config_text(fh.read())


def emit_config(cfg: ExperimentConfig) -> str:
    """Render a config as parseable text; parse(emit(cfg)) == cfg."""
    lines = [
        f"dataset.num_classes = {cfg.dataset.num_classes}",
        f"dataset.feature_dim = {cfg.dataset.feature_dim}",
        f"dataset.class_signal = {cfg.dataset.class_signal!r}",
        f"dataset.nuisance_scale = {cfg.dataset.nuisance_scale!r}",
        f"dataset.noise_sigma = {cfg.dataset.noise_sigma!r}",
        "dataset.split_fractions = " + ",".join(repr(f) for f in cfg.dataset.split_fractions),
        f"dataset.seed = {cfg.dataset.seed}",
    ]
    if cfg.dataset.domains is not None:
        lines.append(f"dataset.domains = {_emit_domains(cfg.dataset.domains)}")
    lines += [
        "model.encoder_hidden = " + ",".join(str(w) for w in cfg.model.encoder_hidden),
        f"model.latent_dim = {cfg.model.latent_dim}",
        f"loss.lambda_cen = {cfg.loss.lambda_cen!r}",
        f"loss.lambda_latent = {cfg.loss.lambda_latent!r}",
        f"loss.r = {cfg.loss.r!r}",
        f"loss.d = {cfg.loss.d!r}",
        f"optimizer.beta1 = {cfg.optimizer.beta1!r}",
        f"optimizer.beta2 = {cfg.optimizer.beta2!r}",
        f"optimizer.weight_decay = {cfg.optimizer.weight_decay!r}",
        f"optimizer.lr_O = {cfg.optimizer.lr_O!r}",
        f"optimizer.lr_EC = {cfg.optimizer.lr_EC!r}",
        f"optimizer.eps = {cfg.optimizer.eps!r}",
        f"early_stop.patience = {cfg.early_stop.patience}",
        f"early_stop.max_steps = {cfg.early_stop.max_steps}",
        f"early_stop.eval_interval = {cfg.early_stop.eval_interval}",
        "experiment.variants = " + ",".join(v.value for v in cfg.variants),
        f"experiment.n_runs = {cfg.n_runs}",
        f"experiment.master_seed = {cfg.master_seed}",
        f"experiment.output_dir = {cfg.output_dir}",
    ]
    return "\n".join(lines) + "\n"


def with_overrides(cfg: ExperimentConfig, seed=None, variants=None, n_runs=None, output_dir=None):
    out = replace(cfg)
    if seed is not None:
        out.master_seed = int(seed)
    if variants is not None:
        out.variants = variants
    if n_runs is not None:
        out.n_runs = int(n_runs)
    if output_dir is not None:
        out.output_dir = str(output_dir)
    out.validate()
    return out
