"""Model fitting: standardization stats, Adam, and the epoch/batch loop."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import data as dt
from .errors import ConfigError, NumericError
from .model import (
    ArchConfig,
    DemandModel,
    FeatureEncoder,
    StandardizationStats,
    build_model,
    build_schema,
    build_vocabs,
)
from .tensor import Parameter, backward, mse_loss, sum_sq, Tensor

STD_FLOOR = 1e-8


@dataclass
class TrainConfig:
    epochs: int = 25
    batch_size: int = 128
    learning_rate: float = 0.01
    l2_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.learning_rate < 0:
            raise ConfigError("epochs and batch_size must be positive, learning_rate non-negative")
        if self.l2_decay < 0:
            raise ConfigError(f"l2_decay must be non-negative, got {self.l2_decay}")


@dataclass
class TrainReport:
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    final_param_norms: dict = field(default_factory=dict)
    wall_time_seconds: float = 0.0

    def to_json_dict(self, include_timing: bool = False) -> dict:
        out = {
            "epochs": [
                {"epoch": i + 1, "train_loss": t, "val_loss": v}
                for i, (t, v) in enumerate(zip(self.train_losses, self.val_losses))
            ],
            "final_param_norms": dict(sorted(self.final_param_norms.items())),
        }
        if include_timing:
            out["wall_time_seconds"] = self.wall_time_seconds
        return out


class Adam:
    """Bias-corrected Adam; moment buffers keyed by parameter name."""

    def __init__(self, params: list[Parameter], config: TrainConfig):
        self.params = params
        self.cfg = config
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.v = {p.name: np.zeros_like(p.data) for p in params}

    def step(self) -> None:
        self.t += 1
        cfg = self.cfg
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for p in self.params:
            g = p.grad
            m = self.m[p.name]
            v = self.v[p.name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * (g * g)
            p.data -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def fit_stats(pairs, cont_names, mono_names) -> StandardizationStats:
    """Population means/stds over training pairs only; stds floored at 1e-8."""
    if not pairs:
        raise ConfigError("cannot fit standardization stats on an empty split")
    means, stds = {}, {}
    for name in list(cont_names) + list(mono_names):
        col = np.array([dt.pair_value(p, name) for p in pairs], dtype=np.float64)
        means[name] = float(col.mean())
        stds[name] = float(max(col.std(), STD_FLOOR))
    targets = np.array([p.target for p in pairs], dtype=np.float64)
    return StandardizationStats(
        means=means,
        stds=stds,
        target_mean=float(targets.mean()),
        target_std=float(max(targets.std(), STD_FLOOR)),
    )


def prepare_model(
    split: dt.DatasetSplit,
    arch: ArchConfig | None = None,
    seed: int = 0,
    holdout_fraction: float = 0.01,
) -> DemandModel:
    """Build an untrained model wired to a dataset: vocabs, stats, schema hash."""
    arch = arch or ArchConfig()
    names = split.names
    vocabs = build_vocabs(split.train, names.categorical, seed=seed, holdout_fraction=holdout_fraction)
    schema = build_schema(names, vocabs, arch)
    model = build_model(schema, arch, seed=seed)
    model.encoder = FeatureEncoder(vocabs=vocabs, continuous=schema.continuous, monotone=names.monotone)
    model.stats = fit_stats(split.train, schema.continuous, names.monotone)
    model.dataset_schema_hash = split.schema_hash
    return model


def _encode(model: DemandModel, pairs):
    cat_names = tuple(s.name for s in model.schema.categoricals)
    cat = model.encoder.cat_matrix(pairs, cat_names)
    cont = model.stats.standardize(model.encoder.cont_matrix(pairs), model.schema.continuous)
    mono_names = [name for name, _ in model.schema.monotone]
    mono_raw = np.column_stack([[dt.pair_value(p, n) for p in pairs] for n in mono_names])
    mono = model.stats.standardize(mono_raw, mono_names)
    target = model.stats.scale_target(np.array([[p.target] for p in pairs], dtype=np.float64))
    return cat, cont, mono, target


def _batched_loss(model: DemandModel, cat, cont, mono, target, batch_size=4096) -> float:
    """Full-pass MSE in scaled space, forward only."""
    n = target.shape[0]
    total = 0.0
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        pred = model.forward(cat[lo:hi], cont[lo:hi], mono[lo:hi]).data
        total += float(np.sum((pred - target[lo:hi]) ** 2))
    return total / n


def train(
    model: DemandModel,
    split: dt.DatasetSplit,
    config: TrainConfig | None = None,
    epoch_callback=None,
) -> TrainReport:
    """Minimize MSE (scaled target) + L2 on dense/monodense raw weights.

    Each epoch shuffles the training rows with the seeded generator and
    iterates batches (last partial batch kept). ``epoch_callback(epoch,
    model)`` runs after each epoch, e.g. for monotonicity probes.
    """
    config = config or TrainConfig()
    model._require_fitted()
    t0 = time.perf_counter()

    cat_tr, cont_tr, mono_tr, y_tr = _encode(model, split.train)
    val_data = _encode(model, split.validation) if split.validation else None

    params = model.parameters()
    decayed = model.decayed_parameters()
    opt = Adam(params, config)
    rng = np.random.default_rng(config.seed)
    n = y_tr.shape[0]
    report = TrainReport()

    for epoch in range(config.epochs):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        sq_err_sum = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            opt.zero_grad()
            pred = model.forward(cat_tr[idx], cont_tr[idx], mono_tr[idx])
            batch_mse = mse_loss(pred, Tensor(y_tr[idx]))
            loss = batch_mse
            if config.l2_decay > 0:
                for w in decayed:
                    loss = loss + config.l2_decay * sum_sq(w)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                norms = {p.name: float(np.linalg.norm(p.data)) for p in params}
                raise NumericError(
                    f"non-finite loss at epoch {epoch + 1}, batch {lo // config.batch_size + 1}; "
                    f"parameter norms: {norms}"
                )
            backward(loss)
            opt.step()
            sq_err_sum += batch_mse.item() * idx.shape[0]
        report.train_losses.append(sq_err_sum / n)
        if val_data is not None:
            report.val_losses.append(_batched_loss(model, *val_data))
        else:
            report.val_losses.append(float("nan"))
        if epoch_callback is not None:
            epoch_callback(epoch + 1, model)

    report.final_param_norms = {p.name: float(np.linalg.norm(p.data)) for p in params}
    report.wall_time_seconds = time.perf_counter() - t0
    return report
