"""Importance-weight estimation from relabeled data.

Two logistic models are fit on the relabeled D1/D0 sets: one predicts how
likely a converting click has already been observed ("pos" model), the other
how likely a currently-negative click will stay negative ("neg" model). Each
consumes hashed click features plus an elapsed-time basis (log time and
coarse duration bins) so the time dependence need not be linear. Per-sample
weights are then the reciprocal of the pos-model probability for positives
and the neg-model probability itself for negatives, clipped away from zero.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import FeatureVector, LabeledSample
from .optim import OptConfig, append_columns, features_to_csr, sigmoid
from .relabel import ArtificialSample
from .training import fit_logistic

DEFAULT_EDGES = (3600, 21600, 43200, 86400, 172800, 345600, 604800)
DEFAULT_CLIP_FLOOR = 0.01
SECONDS_PER_DAY = 86400.0


@dataclass(frozen=True)
class ElapsedBasis:
    """Feature expansion of an elapsed time: one-hot duration bin + log days."""

    edges: tuple[int, ...] = DEFAULT_EDGES

    def __post_init__(self):
        if list(self.edges) != sorted(set(self.edges)) or any(e <= 0 for e in self.edges):
            raise ValueError("edges must be strictly increasing positive durations")

    @property
    def n_columns(self) -> int:
        return len(self.edges) + 2

    def transform(self, e: np.ndarray) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        if np.any(e <= 0):
            raise ValueError("elapsed times must be positive")
        out = np.zeros((e.shape[0], self.n_columns))
        bins = np.searchsorted(np.asarray(self.edges, dtype=float), e, side="left")
        out[np.arange(e.shape[0]), bins] = 1.0
        out[:, -1] = np.log(e / SECONDS_PER_DAY)
        return out


@dataclass(frozen=True)
class WeightModelHyper:
    l2: float = 1e-3
    basis: ElapsedBasis = ElapsedBasis()
    opt: OptConfig = OptConfig(max_iter=300, tol=1e-10, eval_every=5, patience=5)
    holdout_fraction: float = 0.1
    clip_floor: float = DEFAULT_CLIP_FLOOR
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.holdout_fraction < 0.5:
            raise ValueError("holdout_fraction must be in [0, 0.5)")
        if not 0.0 < self.clip_floor < 1.0:
            raise ValueError("clip_floor must be a probability strictly inside (0, 1)")


@dataclass(frozen=True)
class WeightModel:
    """Probabilistic classifier over (hashed features, elapsed-time basis).

    ``degenerate`` marks the single-class fallback: a constant predictor at
    the (clipped) class rate, flagged so callers can surface the anomaly.
    """

    coef: np.ndarray
    intercept: float
    dim: int
    basis: ElapsedBasis
    degenerate: bool = False
    constant: float | None = None

    def predict(self, features: Sequence[FeatureVector], e: np.ndarray) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        if len(features) != e.shape[0]:
            raise ValueError("feature/elapsed-time length mismatch")
        if self.degenerate:
            return np.full(e.shape[0], float(self.constant))
        x = append_columns(features_to_csr(features, dim=self.dim), self.basis.transform(e))
        return sigmoid(x @ self.coef + self.intercept)


@dataclass(frozen=True)
class WeightModelPair:
    model_pos: WeightModel
    model_neg: WeightModel
    clip_floor: float = DEFAULT_CLIP_FLOOR


@dataclass(frozen=True)
class WeightedDataset:
    """Training samples with aligned positive importance weights."""

    samples: tuple[LabeledSample, ...]
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(self.samples) != w.shape[0]:
            raise ValueError("sample/weight length mismatch")
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("weights must be positive and finite")
        for i, s in enumerate(self.samples):
            if s.y == 0 and w[i] > 1.0 + 1e-12:
                raise ValueError(f"negative sample {i} has weight {w[i]} > 1")
            if s.y == 1 and w[i] < 1.0 - 1e-12:
                raise ValueError(f"positive sample {i} has weight {w[i]} < 1")

    def __len__(self) -> int:
        return len(self.samples)


def unit_weights(samples: Sequence[LabeledSample]) -> WeightedDataset:
    return WeightedDataset(samples=tuple(samples), weights=np.ones(len(samples)))


def fit_weight_model(
    data: Sequence[ArtificialSample],
    hyper: WeightModelHyper | None = None,
) -> WeightModel:
    """Fit one of the two weight models on relabeled samples.

    Training pairs the hashed click features with a basis expansion of the
    *adjusted* elapsed time and targets the s-label. A 10% holdout (seeded)
    drives early stopping. Single-class inputs degrade to a constant
    predictor at the clipped class rate, with a warning.
    """
    hyper = hyper or WeightModelHyper()
    if not data:
        raise ValueError("cannot fit a weight model on an empty dataset")
    s = np.fromiter((a.s for a in data), dtype=float, count=len(data))
    dim = data[0].x.dim

    n_classes = len(np.unique(s))
    if n_classes == 1:
        rate = float(s[0])
        clipped = min(max(rate, hyper.clip_floor), 1.0)
        warnings.warn(
            f"weight-model data has a single s-class ({int(rate)}); "
            f"falling back to a constant predictor at {clipped}",
            RuntimeWarning,
            stacklevel=2,
        )
        return WeightModel(
            coef=np.zeros(dim + hyper.basis.n_columns),
            intercept=0.0,
            dim=dim,
            basis=hyper.basis,
            degenerate=True,
            constant=clipped,
        )

    e_adj = np.fromiter((a.e_adj for a in data), dtype=float, count=len(data))
    x = append_columns(
        features_to_csr([a.x for a in data], dim=dim), hyper.basis.transform(e_adj)
    )

    validation = None
    train_idx = np.arange(len(data))
    if hyper.holdout_fraction > 0 and len(data) >= 20:
        rng = np.random.default_rng(np.random.SeedSequence([hyper.seed, 0x77]))
        perm = rng.permutation(len(data))
        n_hold = max(1, int(len(data) * hyper.holdout_fraction))
        hold_idx, fit_idx = perm[:n_hold], perm[n_hold:]
        # early stopping only makes sense when the retained part still has
        # both classes; otherwise fit on everything without a holdout
        if len(np.unique(s[fit_idx])) == 2:
            train_idx = fit_idx
            validation = (
                x[hold_idx],
                s[hold_idx],
                np.ones(len(hold_idx)),
            )

    theta, _ = fit_logistic(
        x[train_idx],
        s[train_idx],
        l2=hyper.l2,
        opt=hyper.opt,
        validation=validation,
    )
    return WeightModel(
        coef=theta[:-1],
        intercept=float(theta[-1]),
        dim=dim,
        basis=hyper.basis,
    )


def assign_fsiw(models: WeightModelPair, train: Sequence[LabeledSample]) -> WeightedDataset:
    """Attach an importance weight to every training sample.

    Predictions use each sample's original elapsed time (not the adjusted one
    the models were trained with). Positives get the reciprocal of the pos
    model's probability; negatives get the neg model's probability directly.
    Probabilities are clipped to [clip_floor, 1] first, which caps any weight
    at 1/clip_floor.
    """
    samples = tuple(train)
    if not samples:
        return WeightedDataset(samples=samples, weights=np.zeros(0))
    features = [s.x for s in samples]
    e = np.fromiter((s.e for s in samples), dtype=float, count=len(samples))
    y = np.fromiter((s.y for s in samples), dtype=int, count=len(samples))

    p_pos = np.clip(models.model_pos.predict(features, e), models.clip_floor, 1.0)
    p_neg = np.clip(models.model_neg.predict(features, e), models.clip_floor, 1.0)
    weights = np.where(y == 1, 1.0 / p_pos, p_neg)
    return WeightedDataset(samples=samples, weights=weights)


def dump_weights(dataset: WeightedDataset, path: str | Path) -> None:
    """Audit dump: one row per sample (index, y, e, weight)."""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("index\ty\te\tweight\n")
        for i, sample in enumerate(dataset.samples):
            handle.write(f"{i}\t{sample.y}\t{sample.e}\t{float(dataset.weights[i])!r}\n")
