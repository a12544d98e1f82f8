"""Shared numerical kernel: stable link functions, sparse design matrices,
and a deterministic gradient-descent minimizer with backtracking line search.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.special import expit as sigmoid  # noqa: F401  (re-exported)

from .data import FeatureVector


def softplus(z: np.ndarray | float) -> np.ndarray:
    """log(1 + exp(z)) without overflow."""
    return np.logaddexp(0.0, z)


def features_to_csr(features: Sequence[FeatureVector], dim: int | None = None) -> sparse.csr_matrix:
    """Stack sparse binary FeatureVectors into an (n, dim) CSR matrix."""
    if dim is None:
        if not features:
            raise ValueError("cannot infer dim from an empty feature list")
        dim = features[0].dim
    indptr = np.zeros(len(features) + 1, dtype=np.int64)
    for i, fv in enumerate(features):
        if fv.dim != dim:
            raise ValueError(f"feature dim mismatch: {fv.dim} != {dim}")
        indptr[i + 1] = indptr[i] + len(fv.indices)
    indices = np.empty(indptr[-1], dtype=np.int64)
    for i, fv in enumerate(features):
        indices[indptr[i] : indptr[i + 1]] = fv.indices
    data = np.ones(indptr[-1], dtype=np.float64)
    return sparse.csr_matrix((data, indices, indptr), shape=(len(features), dim))


def append_columns(x: sparse.csr_matrix, extra: np.ndarray) -> sparse.csr_matrix:
    """Append dense columns (e.g. an elapsed-time basis) to a CSR matrix."""
    if extra.ndim != 2 or extra.shape[0] != x.shape[0]:
        raise ValueError("extra columns must be 2-D with matching row count")
    return sparse.hstack([x, sparse.csr_matrix(extra)], format="csr")


@dataclass(frozen=True)
class OptConfig:
    max_iter: int = 500
    tol: float = 1e-9
    step0: float = 1.0
    mode: str = "batch"
    batch_size: int = 4096
    eval_every: int = 10
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("batch", "minibatch"):
            raise ValueError(f"unknown optimizer mode {self.mode!r}")
        if self.max_iter < 1 or self.step0 <= 0 or self.tol < 0:
            raise ValueError("bad optimizer config")


@dataclass
class OptResult:
    theta: np.ndarray
    loss: float
    n_iter: int
    converged: bool
    stopped_early: bool = False


def minimize_batch(
    fun_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    fun: Callable[[np.ndarray], float],
    theta0: np.ndarray,
    cfg: OptConfig,
    validation: Callable[[np.ndarray], float] | None = None,
) -> OptResult:
    """Full-batch descent with Armijo backtracking.

    The step that passed the Armijo test is doubled for the next iteration,
    so the step size adapts in both directions. Convergence is declared when
    the relative loss decrease over one iteration drops below cfg.tol.

    When ``validation`` is given, it is evaluated every cfg.eval_every
    iterations; after cfg.patience evaluations without improvement the best
    iterate seen (by validation score) is returned with stopped_early=True.
    """
    theta = np.array(theta0, dtype=np.float64)
    loss, grad = fun_grad(theta)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss at the initial point")
    step = cfg.step0

    best_val = np.inf
    best_theta = theta.copy()
    strikes = 0
    stopped_early = False

    n_iter = 0
    converged = False
    for n_iter in range(1, cfg.max_iter + 1):
        gnorm2 = float(grad @ grad)
        if gnorm2 == 0.0:
            converged = True
            break
        accepted = False
        for _ in range(60):
            candidate = theta - step * grad
            cand_loss = fun(candidate)
            if np.isfinite(cand_loss) and cand_loss <= loss - 1e-4 * step * gnorm2:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True  # no descent at machine-level steps: at a minimum
            break
        new_loss, new_grad = fun_grad(candidate)
        rel_drop = (loss - new_loss) / max(1.0, abs(loss))
        theta, loss, grad = candidate, new_loss, new_grad
        step *= 2.0

        if validation is not None and n_iter % cfg.eval_every == 0:
            score = validation(theta)
            if score < best_val - 1e-12:
                best_val = score
                best_theta = theta.copy()
                strikes = 0
            else:
                strikes += 1
                if strikes >= cfg.patience:
                    stopped_early = True
                    break

        if 0 <= rel_drop < cfg.tol:
            converged = True
            break

    if validation is not None:
        final_val = validation(theta)
        if final_val < best_val:
            best_val = final_val
            best_theta = theta.copy()
        return OptResult(
            theta=best_theta,
            loss=fun(best_theta),
            n_iter=n_iter,
            converged=converged,
            stopped_early=stopped_early,
        )
    return OptResult(theta=theta, loss=loss, n_iter=n_iter, converged=converged)


def minimize_minibatch(
    grad_batch: Callable[[np.ndarray, np.ndarray], np.ndarray],
    fun: Callable[[np.ndarray], float],
    theta0: np.ndarray,
    n_samples: int,
    cfg: OptConfig,
) -> OptResult:
    """Seeded mini-batch SGD with a 1/sqrt(epoch) step decay.

    Shuffling comes from a generator derived only from cfg.seed, so runs are
    reproducible. Intended for datasets too large for full-batch passes; the
    batch path remains the default everywhere.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x6D62]))
    theta = np.array(theta0, dtype=np.float64)
    loss = fun(theta)
    for epoch in range(1, cfg.max_iter + 1):
        order = rng.permutation(n_samples)
        step = cfg.step0 / np.sqrt(epoch)
        for lo in range(0, n_samples, cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            theta -= step * grad_batch(theta, batch)
        new_loss = fun(theta)
        if not np.isfinite(new_loss):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}")
        if abs(loss - new_loss) < cfg.tol * max(1.0, abs(loss)):
            return OptResult(theta=theta, loss=new_loss, n_iter=epoch, converged=True)
        loss = new_loss
    return OptResult(theta=theta, loss=loss, n_iter=cfg.max_iter, converged=False)


def with_seed(cfg: OptConfig, seed: int) -> OptConfig:
    return replace(cfg, seed=seed)
