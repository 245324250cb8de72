"""Adjustable-loss ensemble training.

An ensemble of M MLPs is trained by averaging their outputs and driving each
learner with a per-learner output-space gradient chosen by method:

* ``sea``         half squared distance between the learner's own error
                  (f_i - t) and k times its complementary error (g_i - t),
                  where g_i = M(t - fbar) + f_i is the prediction that would
                  make the ensemble output hit the target exactly. Gradient
                  treats g_i as a constant (stop-gradient).
* ``ncl``         half squared error plus lambda times the classical
                  negative-correlation penalty; gradient treats fbar as a
                  constant.
* ``nclstar``     half squared error minus gamma/2 times (f_i - fbar)^2;
                  gradient differentiates through fbar (the (1 - 1/M) factor).
* ``independent`` alias for sea with k = 0 (plain per-learner squared error);
                  shares the sea code path so the equivalence is structural.
* ``bagging``     each learner trains on its own bootstrap resample with the
                  plain squared-error gradient.

Cross-learner gradient terms are dropped throughout: learner i's parameters
only feel d(e_i)/d(f_i).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from . import theory
from .mlp import (
    MLP,
    DivergenceError,
    MLPGradients,
    backward_batch,
    forward_batch,
    init_mlp,
    mlp_from_dict,
    mlp_to_dict,
    sgd_step,
)
from .seeds import derive_seed

log = logging.getLogger(__name__)

METHODS = ("independent", "sea", "ncl", "nclstar", "bagging")
ADJUSTABLE = ("sea", "ncl", "nclstar")


@dataclass(frozen=True)
class MethodConfig:
    """Loss family plus its adjustable parameter (ignored for independent/bagging)."""

    method: str
    param: float = 0.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        object.__setattr__(self, "param", float(self.param))


@dataclass
class EnsembleModel:
    """M base learners sharing input/output widths, plus the training method."""

    learners: list[MLP]
    config: MethodConfig
    seed: int
    bootstrap: list[np.ndarray] | None = None

    def __post_init__(self):
        if not self.learners:
            raise ValueError("ensemble needs at least one learner")
        d_in, d_out = self.learners[0].d_in, self.learners[0].d_out
        for i, m in enumerate(self.learners):
            if m.d_in != d_in or m.d_out != d_out:
                raise ValueError(f"learner {i} widths differ from learner 0")
        if self.config.method in ADJUSTABLE and self.m < 2:
            raise ValueError(f"{self.config.method} requires M >= 2, got M={self.m}")
        if self.config.method == "sea":
            lo, hi = theory.sea_k_bounds(self.m)
            if not lo < self.config.param < hi:
                log.warning(
                    "SEA k=%g outside the theoretical interval (%g, %g) for M=%d; proceeding",
                    self.config.param, lo, hi, self.m,
                )
        if self.config.method == "bagging" and self.bootstrap is None:
            raise ValueError("bagging ensemble needs bootstrap indices")

    @property
    def m(self) -> int:
        return len(self.learners)

    @property
    def d_in(self) -> int:
        return self.learners[0].d_in

    @property
    def d_out(self) -> int:
        return self.learners[0].d_out


@dataclass(frozen=True)
class StepDiagnostics:
    """Batch-averaged view of one training step."""

    learner_losses: np.ndarray      # (M,) mean per-learner loss
    ensemble_sq_error: float        # mean over samples of sum_dims (fbar - t)^2
    prediction_std: float           # mean per-sample std of learner predictions


def build_ensemble(
    d_in: int,
    hidden: list[int],
    d_out: int,
    m: int,
    config: MethodConfig,
    seed: int,
    n_train: int | None = None,
) -> EnsembleModel:
    """Initialize M learners from a single seed.

    Learner i is seeded by ``derive_seed(seed, "learner", i)``; the method
    never enters the derivation, so all methods started from the same seed
    share initial parameters. Bagging additionally draws its bootstrap
    resamples (requires ``n_train``).
    """
    learners = [init_mlp(d_in, hidden, d_out, derive_seed(seed, "learner", i)) for i in range(m)]
    bootstrap = None
    if config.method == "bagging":
        if n_train is None:
            raise ValueError("bagging needs n_train to draw bootstrap indices")
        bootstrap = bootstrap_indices(n_train, m, derive_seed(seed, "bootstrap"))
    return EnsembleModel(learners, config, seed, bootstrap)


def bootstrap_indices(n: int, m: int, seed: int) -> list[np.ndarray]:
    """M independent with-replacement resamples of 0..n-1, each of length n."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    rng = np.random.default_rng(seed)
    return [rng.integers(0, n, size=n) for _ in range(m)]


# ---------------------------------------------------------------------------
# predictions


def predictions_batch(ens: EnsembleModel, x: np.ndarray) -> tuple[np.ndarray, list]:
    """All learner outputs on an (N, D) batch: returns (M, N, O) plus traces."""
    outs, traces = [], []
    for m in ens.learners:
        y, tr = forward_batch(m, x)
        outs.append(y)
        traces.append(tr)
    return np.stack(outs), traces


def ensemble_predict_batch(ens: EnsembleModel, x: np.ndarray) -> np.ndarray:
    """Mean learner output on an (N, D) batch."""
    preds, _ = predictions_batch(ens, x)
    return preds.mean(axis=0)


def ensemble_predict(ens: EnsembleModel, x: np.ndarray) -> np.ndarray:
    """Mean learner output for a single D-vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-D input, got shape {x.shape}")
    return ensemble_predict_batch(ens, x[None, :])[0]


def complementary_prediction(preds: np.ndarray, t: np.ndarray, i: int) -> np.ndarray:
    """g_i = M (t - fbar) + f_i: replacing f_i by g_i makes the ensemble hit t exactly."""
    preds = np.asarray(preds, dtype=np.float64)
    m = preds.shape[0]
    if not 0 <= i < m:
        raise IndexError(f"learner index {i} out of range for M={m}")
    fbar = preds.mean(axis=0)
    return m * (np.asarray(t, dtype=np.float64) - fbar) + preds[i]


# ---------------------------------------------------------------------------
# losses and output-space gradients (single sample; vector over output dims)


def sea_loss(f_i, g_i, t, k: float) -> float:
    """0.5 * || (f_i - t) - k (g_i - t) ||^2 summed over output dimensions."""
    r = (np.asarray(f_i) - np.asarray(t)) - k * (np.asarray(g_i) - np.asarray(t))
    return 0.5 * float(np.sum(r * r))


def sea_output_gradient(f_i, g_i, t, k: float) -> np.ndarray:
    """Gradient of sea_loss in f_i with g_i held constant: (f_i - t) - k (g_i - t)."""
    return (np.asarray(f_i, dtype=np.float64) - t) - k * (np.asarray(g_i) - t)


def ncl_loss(f_i, preds, t, lam: float, i: int) -> float:
    """0.5 ||f_i - t||^2 + lambda * (f_i - fbar) . sum_{j != i} (f_j - fbar).

    ``fbar`` and the other learners' deviations are computed from ``preds``
    (row i included as currently predicted), so perturbing the ``f_i``
    argument alone probes the frozen-fbar differentiation convention.
    """
    preds = np.asarray(preds, dtype=np.float64)
    f_i = np.asarray(f_i, dtype=np.float64)
    fbar = preds.mean(axis=0)
    others = (preds - fbar).sum(axis=0) - (preds[i] - fbar)
    penalty = float(np.sum((f_i - fbar) * others))
    return 0.5 * float(np.sum((f_i - t) ** 2)) + lam * penalty


def ncl_output_gradient(f_i, f_bar, t, lam: float) -> np.ndarray:
    """(f_i - t) - lambda (f_i - fbar), the frozen-fbar gradient of ncl_loss."""
    f_i = np.asarray(f_i, dtype=np.float64)
    return (f_i - t) - lam * (f_i - f_bar)


def nclstar_loss(f_i, f_bar, t, gamma: float) -> float:
    """0.5 ||f_i - t||^2 - gamma * 0.5 ||f_i - fbar||^2."""
    f_i = np.asarray(f_i, dtype=np.float64)
    return 0.5 * float(np.sum((f_i - t) ** 2)) - gamma * 0.5 * float(
        np.sum((f_i - np.asarray(f_bar)) ** 2)
    )


def nclstar_output_gradient(f_i, f_bar, t, gamma: float, m: int) -> np.ndarray:
    """(f_i - t) - gamma (1 - 1/M)(f_i - fbar).

    Unlike ncl, the penalty is differentiated through fbar (d fbar / d f_i
    = 1/M), which is where the (1 - 1/M) factor comes from. The coefficient
    is computed as gamma (M-1)/M so that the identity with the ncl gradient
    at lambda = gamma (M-1)/M is bitwise exact, not just within rounding.
    """
    f_i = np.asarray(f_i, dtype=np.float64)
    coef = gamma * (m - 1.0) / m
    return (f_i - t) - coef * (f_i - np.asarray(f_bar))


def output_gradients(preds: np.ndarray, t: np.ndarray, config: MethodConfig) -> np.ndarray:
    """Per-learner output-space gradients, vectorized over an (M, N, O) stack."""
    m = preds.shape[0]
    err = preds - t  # (M, N, O) broadcast of f_i - t
    if config.method in ("sea", "independent"):
        k = config.param if config.method == "sea" else 0.0
        fbar = preds.mean(axis=0)
        comp_err = err - m * (fbar - t)  # g_i - t
        return err - k * comp_err
    if config.method == "ncl":
        fbar = preds.mean(axis=0)
        return err - config.param * (preds - fbar)
    if config.method == "nclstar":
        fbar = preds.mean(axis=0)
        return err - config.param * (m - 1.0) / m * (preds - fbar)
    if config.method == "bagging":
        raise ValueError("bagging gradients are per-bootstrap; handled in train_epoch")
    raise ValueError(f"unknown method {config.method!r}")


def _learner_losses(preds: np.ndarray, t: np.ndarray, config: MethodConfig) -> np.ndarray:
    """Batch-mean loss per learner for diagnostics (same conventions as the gradients)."""
    m = preds.shape[0]
    err = preds - t
    if config.method in ("sea", "independent", "bagging"):
        k = config.param if config.method == "sea" else 0.0
        fbar = preds.mean(axis=0)
        r = err - k * (err - m * (fbar - t))
        return 0.5 * (r * r).sum(axis=2).mean(axis=1)
    fbar = preds.mean(axis=0)
    dev = preds - fbar
    if config.method == "ncl":
        others = dev.sum(axis=0) - dev  # (M, N, O) of sum_{j != i}(f_j - fbar)
        pen = (dev * others).sum(axis=2).mean(axis=1)
        return 0.5 * (err * err).sum(axis=2).mean(axis=1) + config.param * pen
    if config.method == "nclstar":
        return (
            0.5 * (err * err).sum(axis=2).mean(axis=1)
            - config.param * 0.5 * (dev * dev).sum(axis=2).mean(axis=1)
        )
    raise ValueError(f"unknown method {config.method!r}")


# ---------------------------------------------------------------------------
# training


def train_epoch(ens: EnsembleModel, x: np.ndarray, t: np.ndarray, alpha: float) -> StepDiagnostics:
    """One synchronized gradient step on the given batch.

    All M learners are forwarded, the ensemble mean and per-learner
    output-space gradients are computed from the pre-update parameters, and
    every learner takes one SGD step at the end. Gradients are averaged over
    the batch. Bagging learners see only their own bootstrap rows and use the
    plain squared-error gradient.
    """
    if alpha <= 0:
        raise ValueError(f"learning rate must be positive, got {alpha}")
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 1:
        t = t[:, None]
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if x.shape[0] != t.shape[0]:
        raise ValueError(f"batch has {x.shape[0]} inputs but {t.shape[0]} targets")

    if ens.config.method == "bagging":
        return _train_epoch_bagging(ens, x, t, alpha)

    # Overflow in a diverging run surfaces as DivergenceError at the update.
    with np.errstate(over="ignore", invalid="ignore"):
        preds, traces = predictions_batch(ens, x)
        deltas = output_gradients(preds, t, ens.config)
        n = x.shape[0]
        grads = [
            backward_batch(learner, trace, deltas[i] / n)
            for i, (learner, trace) in enumerate(zip(ens.learners, traces))
        ]
        _apply_updates(ens, grads, alpha)
        return _diagnostics(preds, t, ens.config)


def _train_epoch_bagging(ens: EnsembleModel, x, t, alpha: float) -> StepDiagnostics:
    n = x.shape[0]
    if any(idx.max() >= n for idx in ens.bootstrap):
        raise ValueError("bootstrap indices exceed batch size; bagging trains full-batch")
    grads = []
    for i, learner in enumerate(ens.learners):
        idx = ens.bootstrap[i]
        y, trace = forward_batch(learner, x[idx])
        delta = (y - t[idx]) / len(idx)
        grads.append(backward_batch(learner, trace, delta))
    _apply_updates(ens, grads, alpha)
    preds, _ = predictions_batch(ens, x)  # diagnostics on the full batch, post-update
    return _diagnostics(preds, t, ens.config)


def _apply_updates(ens: EnsembleModel, grads: list[MLPGradients], alpha: float) -> None:
    updated = []
    for i, (learner, g) in enumerate(zip(ens.learners, grads)):
        try:
            updated.append(sgd_step(learner, g, alpha))
        except DivergenceError as exc:
            exc.learner = i
            raise
    ens.learners = updated


def _diagnostics(preds: np.ndarray, t: np.ndarray, config: MethodConfig) -> StepDiagnostics:
    fbar = preds.mean(axis=0)
    ens_sq = float(((fbar - t) ** 2).sum(axis=1).mean())
    return StepDiagnostics(
        learner_losses=_learner_losses(preds, t, config),
        ensemble_sq_error=ens_sq,
        prediction_std=float(theory.empirical_std(preds)),
    )


# ---------------------------------------------------------------------------
# checkpointing


def ensemble_to_json(ens: EnsembleModel) -> str:
    doc = {
        "format": "sea-ensemble/1",
        "method": ens.config.method,
        "param": ens.config.param,
        "seed": ens.seed,
        "learners": [mlp_to_dict(m) for m in ens.learners],
        "bootstrap": None
        if ens.bootstrap is None
        else [[int(v) for v in idx] for idx in ens.bootstrap],
    }
    return json.dumps(doc, sort_keys=True)


def ensemble_from_json(text: str) -> EnsembleModel:
    doc = json.loads(text)
    if doc.get("format") != "sea-ensemble/1":
        raise ValueError(f"unsupported checkpoint format: {doc.get('format')!r}")
    learners = [mlp_from_dict(d) for d in doc["learners"]]
    bootstrap = None
    if doc["bootstrap"] is not None:
        bootstrap = [np.asarray(idx, dtype=np.int64) for idx in doc["bootstrap"]]
    return EnsembleModel(
        learners, MethodConfig(doc["method"], doc["param"]), doc["seed"], bootstrap
    )
