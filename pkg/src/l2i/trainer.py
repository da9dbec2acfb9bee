"""Training loop: grouped Adam, sphere re-projection, early stopping, variants.

Reductions: the classification and latent terms are means over the 10-sample
random batch; the center-point term is a sum over the per-class target
samples. Weight decay is coupled (added to the gradient) and applied to the
encoder and classifier groups only; the center points are re-projected to
the unit sphere after every step instead.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import data as dat
from . import losses as lss
from . import metrics as met
from . import model as mdl


class Variant(str, enum.Enum):
    L2I = "L2I"
    VANILLA = "Vanilla"
    CLASS_AWARE = "ClassAware"
    WEIGHTED = "Weighted"
    FIXED = "Fixed"
    NO_MARGIN = "NoMargin"


MARGIN_FAMILY = (Variant.L2I, Variant.FIXED, Variant.NO_MARGIN)
BASELINE_FAMILY = (Variant.VANILLA, Variant.CLASS_AWARE, Variant.WEIGHTED)


def parse_variant(name: str) -> Variant:
    try:
        return Variant(name)
    except ValueError:
        allowed = ", ".join(v.value for v in Variant)
        raise dat.ConfigError(f"unknown variant {name!r}; expected one of {allowed}") from None


@dataclass
class OptimizerConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 5e-5
    lr_O: float = 1e-4
    lr_EC: float = 5e-5
    eps: float = 1e-8

    def validate(self) -> None:
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise dat.ConfigError(f"betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if self.lr_O <= 0 or self.lr_EC <= 0:
            raise dat.ConfigError(f"learning rates must be > 0, got lr_O={self.lr_O}, lr_EC={self.lr_EC}")
        if self.weight_decay < 0 or self.eps <= 0:
            raise dat.ConfigError("weight_decay must be >= 0 and eps > 0")


@dataclass
class EarlyStopConfig:
    patience: int = 20
    max_steps: int = 5000
    eval_interval: int = 25

    def validate(self) -> None:
        if self.patience < 1:
            raise dat.ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.max_steps < 1 or self.eval_interval < 1:
            raise dat.ConfigError("max_steps and eval_interval must be >= 1")


class AdamState:
    """First/second moment buffers per parameter plus one shared step count."""

    def __init__(self, params: Sequence[ad.Tensor]):
        self.m = {id(p): np.zeros_like(p.values) for p in params}
        self.v = {id(p): np.zeros_like(p.values) for p in params}
        self.t = 0


def adam_step(
    params: Sequence[ad.Tensor],
    state: AdamState,
    lr: float,
    cfg: OptimizerConfig,
    weight_decay: float,
) -> None:
    """Bias-corrected Adam update for one group at its group learning rate.

    Parameters whose gradient buffer is entirely zero are skipped, so an
    inactive loss term leaves its group untouched (including weight decay).
    state.t must be incremented once per optimizer step by the caller.
    """
    for p in params:
        g = p.grad
        if g is None or not np.any(g):
            continue
        if weight_decay:
            g = g + weight_decay * p.values
        m = state.m[id(p)]
        v = state.v[id(p)]
        m *= cfg.beta1
        m += (1 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1 - cfg.beta2) * g * g
        m_hat = m / (1 - cfg.beta1 ** state.t)
        v_hat = v / (1 - cfg.beta2 ** state.t)
        p.values -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


class Optimizer:
    """Grouped Adam over the three parameter groups.

    The center points get their own learning rate, no weight decay, and a
    unit-norm row re-projection after every step; when frozen they are left
    out entirely.
    """

    def __init__(self, params: mdl.ModelParams, cfg: OptimizerConfig, freeze_centers: bool = False):
        cfg.validate()
        self.params = params
        self.cfg = cfg
        self.freeze_centers = freeze_centers
        tracked = params.theta_E + params.theta_C + ([] if freeze_centers else [params.theta_O])
        self.state = AdamState(tracked)

    def zero_grad(self) -> None:
        ad.zero_grad(self.params.all_params())

    def step(self) -> None:
        self.state.t += 1
        adam_step(self.params.theta_E, self.state, self.cfg.lr_EC, self.cfg, self.cfg.weight_decay)
        adam_step(self.params.theta_C, self.state, self.cfg.lr_EC, self.cfg, self.cfg.weight_decay)
        theta_O = self.params.theta_O
        updated = not self.freeze_centers and theta_O.grad is not None and np.any(theta_O.grad)
        if updated:
            adam_step([theta_O], self.state, self.cfg.lr_O, self.cfg, 0.0)
            o = theta_O.values
            norms = np.linalg.norm(o, axis=1, keepdims=True)
            if np.any(norms <= ad.NORM_EPS):
                raise ad.NumericalError("center point collapsed to zero norm")
            o /= norms


class EarlyStopper:
    """Stop after `patience` evaluations without a strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_snapshot = None
        self.best_step = -1
        self.bad = 0
        self.n_evals = 0

    def update(self, loss: float, snapshot, step: int) -> bool:
        self.n_evals += 1
        if loss < self.best:
            self.best = loss
            self.best_snapshot = snapshot
            self.best_step = step
            self.bad = 0
        else:
            self.bad += 1
        return self.bad >= self.patience


@dataclass
class TrainLog:
    rows: list[tuple] = field(default_factory=list)  # (step, cls, cen, latent, total, val or None)
    best_val: float = np.inf
    best_step: int = -1
    steps_run: int = 0
    n_evals: int = 0
    max_latent_norm_dev: float = 0.0
    max_center_norm_dev: float = 0.0


def effective_loss_config(variant: Variant, cfg: lss.LossConfig) -> lss.LossConfig:
    if variant == Variant.NO_MARGIN:
        return lss.LossConfig(lambda_cen=cfg.lambda_cen, lambda_latent=cfg.lambda_latent, r=0.0, d=2.0)
    if variant in BASELINE_FAMILY:
        return lss.LossConfig(lambda_cen=0.0, lambda_latent=0.0, r=cfg.r, d=cfg.d)
    return cfg


def _track_geometry(log: TrainLog, params: mdl.ModelParams, latents: np.ndarray) -> None:
    dev = float(np.max(np.abs(np.linalg.norm(latents, axis=1) - 1.0)))
    log.max_latent_norm_dev = max(log.max_latent_norm_dev, dev)
    cdev = float(np.max(np.abs(np.linalg.norm(params.theta_O.values, axis=1) - 1.0)))
    log.max_center_norm_dev = max(log.max_center_norm_dev, cdev)


def train_step(
    params: mdl.ModelParams,
    batch,
    variant: Variant,
    loss_cfg: lss.LossConfig,
    optimizer: Optimizer,
    weights: np.ndarray | None = None,
    include_cls: bool = True,
    log: TrainLog | None = None,
) -> lss.LossBreakdown:
    """One optimizer step on a batch; returns the loss breakdown.

    For the margin family `batch` is a data.Batch; baselines take a plain
    sample list. include_cls exists for routing ablations.
    """
    optimizer.zero_grad()
    if variant in MARGIN_FAMILY:
        rand = batch.random_part
        cent = batch.center_part
        x_all = dat.feature_matrix(rand + cent)
        latents = mdl.encode_batch(params, x_all)
        if log is not None:
            _track_geometry(log, params, latents.values)
        rand_rows = ad.take_rows(latents, range(len(rand)))
        rand_labels = [s.class_label for s in rand]

        cls = lss.classification_loss_batch(params, rand_rows, rand_labels) if include_cls else None
        latent = (
            lss.latent_loss_batch(rand_rows, rand_labels, params.theta_O, loss_cfg)
            if loss_cfg.lambda_latent != 0.0
            else None
        )
        cen = None
        if loss_cfg.lambda_cen != 0.0:
            target_latents = [
                mdl.LatentVector(ad.row(latents, len(rand) + i), s.domain_role, s.class_label)
                for i, s in enumerate(cent)
            ]
            cen = lss.center_point_loss(target_latents, params.theta_O, loss_cfg)
        total, breakdown = lss.total_loss(cls, cen, latent, loss_cfg)
    else:
        samples = list(batch)
        latents = mdl.encode_batch(params, dat.feature_matrix(samples))
        if log is not None:
            _track_geometry(log, params, latents.values)
        logits = mdl.class_logits(params, latents)  # not detached: encoder learns from it
        labels = [s.class_label for s in samples]
        total = ad.softmax_cross_entropy_mean(logits, labels, weights=weights)
        breakdown = lss.LossBreakdown(cls=total.item(), cen=0.0, latent=0.0, total=total.item())

    ad.backward(total)
    optimizer.step()
    return breakdown


def _stable_ce_rows(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return np.log(np.exp(z).sum(axis=1)) - z[np.arange(len(labels)), labels]


def validation_loss(
    params: mdl.ModelParams,
    val_target: Sequence[dat.Sample],
    variant: Variant,
    loss_cfg: lss.LossConfig,
) -> float:
    """Monitored quantity on the target-domain validation split.

    Margin-family variants monitor the full weighted objective, with the
    center term using the per-class mean of the sphere hinge; baselines
    monitor the plain cross-entropy.
    """
    latents = mdl.encode_batch(params, dat.feature_matrix(val_target)).values
    labels = dat.labels_of(val_target)
    wc, bc = params.theta_C[0].values, params.theta_C[1].values
    logits = latents @ wc + bc
    cls = float(np.mean(_stable_ce_rows(logits, labels)))
    if variant not in MARGIN_FAMILY:
        return cls

    centers = params.theta_O.values
    n = centers.shape[0]
    dists = np.linalg.norm(latents - centers[labels], axis=1)
    hinge = np.maximum(dists - loss_cfg.r, 0.0) ** 2
    latent_term = float(np.mean(hinge))
    cen_term = 0.0
    for i in range(n):
        mask = labels == i
        if np.any(mask):
            cen_term += float(np.mean(hinge[mask]))
        for k in range(n):
            if k != i:
                gap = loss_cfg.d - np.linalg.norm(centers[k] - centers[i])
                cen_term += 0.5 * max(gap, 0.0) ** 2
    return cls + loss_cfg.lambda_cen * cen_term + loss_cfg.lambda_latent * latent_term


def make_batch_sampler(
    variant: Variant, train_set: Sequence[dat.Sample], rng: np.random.Generator
) -> Callable[[], object]:
    if variant in MARGIN_FAMILY:
        # same draw sequence as data.sample_batch, with the per-class target
        # pools computed once instead of per batch
        if len(train_set) < dat.RANDOM_PART_SIZE:
            raise dat.ConfigError(
                f"training set has {len(train_set)} samples, need >= {dat.RANDOM_PART_SIZE}"
            )
        num_classes = max(s.class_label for s in train_set) + 1
        pools = []
        for cls in range(num_classes):
            pool = [s for s in train_set if s.domain_role == "target" and s.class_label == cls]
            if not pool:
                raise dat.SamplerContractError(f"no target-domain training sample for class {cls}")
            pools.append(pool)

        def margin_batch():
            idx = rng.choice(len(train_set), size=dat.RANDOM_PART_SIZE, replace=False)
            random_part = [train_set[i] for i in idx]
            center_part = [pool[int(rng.integers(len(pool)))] for pool in pools]
            return dat.Batch(random_part=random_part, center_part=center_part)

        return margin_batch
    if variant == Variant.CLASS_AWARE:
        return lambda: dat.class_aware_batch(train_set, rng)

    def random_only():
        if len(train_set) < dat.RANDOM_PART_SIZE:
            raise dat.ConfigError(
                f"training set has {len(train_set)} samples, need >= {dat.RANDOM_PART_SIZE}"
            )
        idx = rng.choice(len(train_set), size=dat.RANDOM_PART_SIZE, replace=False)
        return [train_set[i] for i in idx]

    return random_only


def train(
    samples: Sequence[dat.Sample],
    variant: Variant,
    model_cfg: mdl.ModelConfig,
    loss_cfg: lss.LossConfig,
    opt_cfg: OptimizerConfig,
    stop_cfg: EarlyStopConfig,
    batch_rng: np.random.Generator,
    val_loss_fn: Callable[[mdl.ModelParams], float] | None = None,
) -> tuple[mdl.ModelParams, TrainLog]:
    """Train one variant with early stopping on target-domain validation loss.

    Evaluates before the first step and every eval_interval steps after;
    stops once `patience` evaluations pass without improvement (or at
    max_steps) and restores the best checkpoint seen.
    """
    stop_cfg.validate()
    loss_cfg = effective_loss_config(variant, loss_cfg)
    loss_cfg.validate(require_margin=variant != Variant.NO_MARGIN)

    train_set = dat.split_samples(samples, "train")
    val_target = [s for s in dat.split_samples(samples, "val") if s.domain_role == "target"]
    if not val_target and val_loss_fn is None:
        raise dat.ConfigError("no target-domain validation data")

    centers = None
    if variant == Variant.FIXED:
        centers = mdl.fixed_center_points(model_cfg.latent_dim, model_cfg.num_classes)
    params = mdl.init_params(model_cfg, center_points=centers)
    optimizer = Optimizer(params, opt_cfg, freeze_centers=variant == Variant.FIXED)

    weights_by_index = None
    if variant == Variant.WEIGHTED:
        weights_by_index = dat.class_domain_weights(train_set)
        index_of = {id(s): i for i, s in enumerate(train_set)}

    if val_loss_fn is None:
        val_loss_fn = lambda p: validation_loss(p, val_target, variant, loss_cfg)

    next_batch = make_batch_sampler(variant, train_set, batch_rng)
    stopper = EarlyStopper(stop_cfg.patience)
    log = TrainLog()

    stopper.update(val_loss_fn(params), mdl.snapshot(params), step=0)
    for step in range(1, stop_cfg.max_steps + 1):
        batch = next_batch()
        weights = None
        if weights_by_index is not None:
            weights = np.array([weights_by_index[index_of[id(s)]] for s in batch])
        try:
            breakdown = train_step(params, batch, variant, loss_cfg, optimizer, weights=weights, log=log)
        except ad.NumericalError as exc:
            raise ad.NumericalError(f"step {step}: {exc}") from exc
        log.steps_run = step
        val = None
        if step % stop_cfg.eval_interval == 0:
            val = val_loss_fn(params)
            should_stop = stopper.update(val, mdl.snapshot(params), step=step)
        else:
            should_stop = False
        log.rows.append((step, breakdown.cls, breakdown.cen, breakdown.latent, breakdown.total, val))
        if should_stop:
            break

    mdl.restore(params, stopper.best_snapshot)
    log.best_val = stopper.best
    log.best_step = stopper.best_step
    log.n_evals = stopper.n_evals
    return params, log


def evaluate(
    params: mdl.ModelParams, samples: Sequence[dat.Sample], domain_filter: str = "all"
) -> met.MetricScores:
    """Accuracy, kappa and AUROC over the filtered samples, from argmax
    predictions and the class-1 score."""
    if domain_filter not in ("source", "target", "all"):
        raise ValueError(f"domain filter must be source, target or all, got {domain_filter!r}")
    chosen = [s for s in samples if domain_filter == "all" or s.domain_role == domain_filter]
    if not chosen:
        raise ValueError(f"no samples match domain filter {domain_filter!r}")
    latents = mdl.encode_batch(params, dat.feature_matrix(chosen)).values
    logits = latents @ params.theta_C[0].values + params.theta_C[1].values
    z = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(z)
    probs /= probs.sum(axis=1, keepdims=True)
    preds = np.argmax(logits, axis=1)
    true = dat.labels_of(chosen)
    return met.MetricScores(
        accuracy=met.accuracy(preds, true),
        kappa=met.cohen_kappa(preds, true),
        auroc=met.auroc(probs[:, 1], true),
        n_samples=len(chosen),
    )


@dataclass
class RunResult:
    variant: str
    run_index: int
    target: met.MetricScores
    source: met.MetricScores
    steps_run: int
    best_val: float
    max_latent_norm_dev: float
    max_center_norm_dev: float
    center_separation: float


STREAM_DATASET, STREAM_MODEL, STREAM_BATCHES = 1, 2, 3


def derive_seed(master_seed: int, run_index: int, stream: int) -> np.random.SeedSequence:
    return np.random.SeedSequence((master_seed, run_index, stream))


def run_single(
    variant: Variant,
    run_index: int,
    master_seed: int,
    dataset_cfg: dat.DatasetConfig,
    model_template: mdl.ModelConfig,
    loss_cfg: lss.LossConfig,
    opt_cfg: OptimizerConfig,
    stop_cfg: EarlyStopConfig,
) -> tuple[RunResult, mdl.ModelParams, mdl.ModelConfig, TrainLog]:
    """One seeded run: regenerate the dataset and splits, train, score both
    test domains."""
    ds_seed = int(derive_seed(master_seed, run_index, STREAM_DATASET).generate_state(1)[0])
    model_seed = int(derive_seed(master_seed, run_index, STREAM_MODEL).generate_state(1)[0])
    samples = dat.generate_dataset(dat.with_seed(dataset_cfg, ds_seed))
    model_cfg = mdl.ModelConfig(
        input_dim=dataset_cfg.feature_dim,
        encoder_hidden=list(model_template.encoder_hidden),
        latent_dim=model_template.latent_dim,
        num_classes=dataset_cfg.num_classes,
        seed=model_seed,
    )
    batch_rng = np.random.default_rng(derive_seed(master_seed, run_index, STREAM_BATCHES))
    params, log = train(samples, variant, model_cfg, loss_cfg, opt_cfg, stop_cfg, batch_rng)
    test = dat.split_samples(samples, "test")
    centers = params.theta_O.values
    result = RunResult(
        variant=variant.value,
        run_index=run_index,
        target=evaluate(params, test, "target"),
        source=evaluate(params, test, "source"),
        steps_run=log.steps_run,
        best_val=log.best_val,
        max_latent_norm_dev=log.max_latent_norm_dev,
        max_center_norm_dev=log.max_center_norm_dev,
        center_separation=float(np.linalg.norm(centers[0] - centers[1])) if len(centers) == 2 else 0.0,
    )
    return result, params, model_cfg, log


def run_experiment(
    variant: Variant,
    n_runs: int,
    master_seed: int,
    dataset_cfg: dat.DatasetConfig,
    model_template: mdl.ModelConfig,
    loss_cfg: lss.LossConfig,
    opt_cfg: OptimizerConfig,
    stop_cfg: EarlyStopConfig,
    on_run=None,
) -> tuple[list[RunResult], list[tuple[int, str]]]:
    """n_runs seeded runs of one variant; failures are recorded per run and
    aggregation proceeds over the completed ones."""
    if n_runs < 1:
        raise dat.ConfigError(f"n_runs must be >= 1, got {n_runs}")
    results: list[RunResult] = []
    failures: list[tuple[int, str]] = []
    for run_index in range(n_runs):
        try:
            result, params, model_cfg, log = run_single(
                variant, run_index, master_seed, dataset_cfg, model_template,
                loss_cfg, opt_cfg, stop_cfg,
            )
        except Exception as exc:  # noqa: BLE001 - per-run isolation is the contract
            failures.append((run_index, f"{type(exc).__name__}: {exc}"))
            continue
        results.append(result)
        if on_run is not None:
            on_run(result, params, model_cfg, log)
    return results, failures
