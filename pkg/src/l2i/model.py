"""Encoder / classifier / center-point network with three parameter groups.

The encoder is an MLP with ReLU hidden layers whose output is scaled to the
unit hypersphere; the classifier is a single linear layer on the normalized
latent vector; the center points are one learnable unit vector per class,
kept on the sphere by re-projection after each optimizer step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad


@dataclass
class ModelConfig:
    input_dim: int
    encoder_hidden: list[int] = field(default_factory=lambda: [64, 64])
    latent_dim: int = 16
    num_classes: int = 2
    seed: int = 0

    def validate(self) -> None:
        if self.latent_dim < 2:
            raise ValueError(f"latent_dim must be >= 2, got {self.latent_dim}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if any(w < 1 for w in self.encoder_hidden):
            raise ValueError(f"encoder widths must be >= 1, got {self.encoder_hidden}")


@dataclass
class ModelParams:
    """Three disjoint parameter groups: encoder, classifier, center points.

    theta_E holds [W, b] per encoder layer, theta_C the classifier [W, b],
    theta_O the num_classes x latent_dim matrix of center points. Biases are
    stored as 1 x width rows.
    """

    theta_E: list[ad.Tensor]
    theta_C: list[ad.Tensor]
    theta_O: ad.Tensor

    def all_params(self) -> list[ad.Tensor]:
        return [*self.theta_E, *self.theta_C, self.theta_O]


@dataclass
class LatentVector:
    """Unit-norm latent vector tagged with its sample's domain and class."""

    f: ad.Tensor
    domain_tag: str
    class_tag: int


def _kaiming(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))


def init_center_points(n: int, m: int, seed: int) -> ad.Tensor:
    """Unit-norm rows from an isotropic Gaussian; for n=2 the pair is
    re-sampled until the centers start at least 0.5 apart."""
    if n < 2 or m < 2:
        raise ValueError(f"need n >= 2 and m >= 2, got n={n}, m={m}")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x0C)))
    while True:
        rows = rng.normal(size=(n, m))
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        if n != 2 or np.linalg.norm(rows[0] - rows[1]) >= 0.5:
            return ad.Tensor(rows, requires_grad=True)


def fixed_center_points(m: int, n: int = 2) -> ad.Tensor:
    """Antipodal diagonal centers (1,...,1)/sqrt(m) and its negation."""
    if n != 2:
        raise ValueError(f"fixed center points are defined for n=2 only, got n={n}")
    o1 = np.full(m, 1.0 / np.sqrt(m))
    return ad.Tensor(np.stack([o1, -o1]), requires_grad=True)


def init_params(cfg: ModelConfig, center_points: ad.Tensor | None = None) -> ModelParams:
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x0E)))
    widths = [cfg.input_dim, *cfg.encoder_hidden, cfg.latent_dim]
    theta_E: list[ad.Tensor] = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        theta_E.append(ad.Tensor(_kaiming(rng, fan_in, fan_out), requires_grad=True))
        # small positive bias keeps ReLU units initially active and gives
        # inputs that would die in every unit a nonzero latent direction
        theta_E.append(ad.Tensor(np.full((1, fan_out), 0.01), requires_grad=True))
    theta_C = [
        ad.Tensor(_kaiming(rng, cfg.latent_dim, cfg.num_classes), requires_grad=True),
        ad.Tensor(np.zeros((1, cfg.num_classes)), requires_grad=True),
    ]
    if center_points is None:
        center_points = init_center_points(cfg.num_classes, cfg.latent_dim, cfg.seed)
    return ModelParams(theta_E=theta_E, theta_C=theta_C, theta_O=center_points)


def encode_batch(params: ModelParams, x: np.ndarray) -> ad.Tensor:
    """Normalized latent rows for a batch of feature rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"encode_batch expects a sample matrix, got shape {x.shape}")
    h = ad.Tensor(x)
    n_layers = len(params.theta_E) // 2
    for i in range(n_layers):
        h = ad.affine(h, params.theta_E[2 * i], params.theta_E[2 * i + 1])
        if i < n_layers - 1:
            h = ad.relu(h)
    return ad.l2_normalize(h)


def encode(params: ModelParams, x: np.ndarray) -> ad.Tensor:
    """Normalized latent vector of a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"encode expects a feature vector, got shape {x.shape}")
    return ad.row(encode_batch(params, x[None, :]), 0)


def encode_sample(params: ModelParams, sample) -> LatentVector:
    return LatentVector(
        f=encode(params, sample.x), domain_tag=sample.domain_role, class_tag=sample.class_label
    )


def class_logits(params: ModelParams, f: ad.Tensor) -> ad.Tensor:
    """Classifier logits for a latent vector or a matrix of latent rows."""
    single = f.values.ndim == 1
    h = ad.reshape(f, (1, f.values.shape[0])) if single else f
    logits = ad.affine(h, params.theta_C[0], params.theta_C[1])
    return ad.row(logits, 0) if single else logits


def classify(params: ModelParams, f: ad.Tensor) -> ad.Tensor:
    """Class scores (softmax of the classifier logits, summing to 1).

    The scores are reporting-side values and carry no gradient; training
    losses consume the logits directly.
    """
    logits = class_logits(params, f).values
    z = logits - logits.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ad.Tensor(ez / ez.sum(axis=-1, keepdims=True))


def save_checkpoint(path, params: ModelParams, cfg: ModelConfig) -> None:
    arrays = {f"E{i}": t.values for i, t in enumerate(params.theta_E)}
    arrays.update({f"C{i}": t.values for i, t in enumerate(params.theta_C)})
    arrays["O"] = params.theta_O.values
    header = {
        "n_encoder": len(params.theta_E),
        "config": {
            "input_dim": cfg.input_dim,
            "encoder_hidden": list(cfg.encoder_hidden),
            "latent_dim": cfg.latent_dim,
            "num_classes": cfg.num_classes,
            "seed": cfg.seed,
        },
    }
    arrays["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig]:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        cfg = ModelConfig(**header["config"])
        theta_E = [ad.Tensor(data[f"E{i}"], requires_grad=True) for i in range(header["n_encoder"])]
        theta_C = [ad.Tensor(data[f"C{i}"], requires_grad=True) for i in range(2)]
        theta_O = ad.Tensor(data["O"], requires_grad=True)
    return ModelParams(theta_E=theta_E, theta_C=theta_C, theta_O=theta_O), cfg


def snapshot(params: ModelParams) -> list[np.ndarray]:
    return [t.values.copy() for t in params.all_params()]


def restore(params: ModelParams, snap: Sequence[np.ndarray]) -> None:
    for t, arr in zip(params.all_params(), snap, strict=True):
        np.copyto(t.values, arr)
