"""Finite-difference verification suites for the analytic gradients.

These re-check, at runtime, the same identities the test suite pins down:
network backward against central differences of the induced scalar loss, and
each ensemble loss gradient against central differences under its stated
differentiation convention (complement frozen for sea, mean frozen for ncl,
mean live for nclstar), plus the sea/ncl gradient proportionality.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import theory
from .ensemble import (
    complementary_prediction,
    ncl_loss,
    ncl_output_gradient,
    nclstar_loss,
    nclstar_output_gradient,
    sea_loss,
    sea_output_gradient,
)
from .mlp import MLP, backward, forward, init_mlp


@dataclass(frozen=True)
class CheckResult:
    name: str
    worst_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.worst_rel_err < self.tolerance


def _rel_err(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def _central_diff(loss_of, f: np.ndarray, h: float) -> np.ndarray:
    g = np.zeros_like(f)
    for j in range(f.size):
        fp, fm = f.copy(), f.copy()
        fp[j] += h
        fm[j] -= h
        g[j] = (loss_of(fp) - loss_of(fm)) / (2 * h)
    return g


def check_mlp_backward(n_nets: int = 50, seed: int = 0, h: float = 1e-6, tol: float = 1e-6) -> CheckResult:
    """Backward vs central differences of <delta, y(theta)> on random small nets."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_nets):
        d_in = int(rng.integers(1, 5))
        d_out = int(rng.integers(1, 4))
        hidden = [int(rng.integers(1, 9)) for _ in range(int(rng.integers(0, 3)))]
        net = init_mlp(d_in, hidden, d_out, int(rng.integers(0, 2**31)))
        x = rng.normal(size=d_in)
        delta = rng.normal(size=d_out)
        _, trace = forward(net, x)
        g = backward(net, trace, delta)

        def loss(model: MLP) -> float:
            y, _ = forward(model, x)
            return float(np.dot(delta, y))

        for l in range(net.n_layers):
            fd_w = np.zeros_like(net.weights[l])
            for idx in np.ndindex(*fd_w.shape):
                wp = [w.copy() for w in net.weights]
                wm = [w.copy() for w in net.weights]
                wp[l][idx] += h
                wm[l][idx] -= h
                fd_w[idx] = (loss(MLP(tuple(wp), net.biases)) - loss(MLP(tuple(wm), net.biases))) / (2 * h)
            worst = max(worst, _rel_err(g.d_weights[l], fd_w))
            fd_b = np.zeros_like(net.biases[l])
            for idx in np.ndindex(*fd_b.shape):
                bp = [b.copy() for b in net.biases]
                bm = [b.copy() for b in net.biases]
                bp[l][idx] += h
                bm[l][idx] -= h
                fd_b[idx] = (loss(MLP(net.weights, tuple(bp))) - loss(MLP(net.weights, tuple(bm)))) / (2 * h)
            worst = max(worst, _rel_err(g.d_biases[l], fd_b))
    return CheckResult("mlp_backward", worst, tol)


def check_loss_gradients(n_states: int = 1000, seed: int = 1, tol: float = 1e-8) -> list[CheckResult]:
    """The three loss gradients vs central differences under their conventions.

    The losses are quadratic, so a relatively large step (1e-3) has no
    truncation error and keeps rounding noise far below the tolerance.
    """
    rng = np.random.default_rng(seed)
    h = 1e-3
    worst = {"sea": 0.0, "ncl": 0.0, "nclstar": 0.0}
    for _ in range(n_states):
        m = int(rng.integers(2, 21))
        o = int(rng.integers(1, 6))
        preds = rng.normal(size=(m, o))
        t = rng.normal(size=o)
        i = int(rng.integers(0, m))
        fbar = preds.mean(axis=0)
        f = preds[i].copy()

        k = float(rng.uniform(-0.5, 2.5))
        g_i = complementary_prediction(preds, t, i)
        fd = _central_diff(lambda ff: sea_loss(ff, g_i, t, k), f, h)
        worst["sea"] = max(worst["sea"], _rel_err(sea_output_gradient(f, g_i, t, k), fd))

        lam = float(rng.uniform(-0.5, 1.5))
        fd = _central_diff(lambda ff: ncl_loss(ff, preds, t, lam, i), f, h)
        worst["ncl"] = max(worst["ncl"], _rel_err(ncl_output_gradient(f, fbar, t, lam), fd))

        gamma = float(rng.uniform(-0.5, 1.5))
        others = preds.sum(axis=0) - preds[i]
        fd = _central_diff(lambda ff: nclstar_loss(ff, (others + ff) / m, t, gamma), f, h)
        worst["nclstar"] = max(
            worst["nclstar"], _rel_err(nclstar_output_gradient(f, fbar, t, gamma, m), fd)
        )
    return [CheckResult(f"{name}_gradient", err, tol) for name, err in worst.items()]


def check_sea_ncl_proportionality(n_states: int = 1000, seed: int = 2, tol: float = 1e-12) -> CheckResult:
    """sea gradient = (1 + k(M-1)) * ncl gradient at lambda(k), state by state."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_states):
        m = int(rng.integers(2, 21))
        o = int(rng.integers(1, 6))
        preds = rng.normal(size=(m, o))
        t = rng.normal(size=o)
        i = int(rng.integers(0, m))
        k = float(rng.uniform(-1.0 / (m - 1) + 0.05, 2.2))
        g_i = complementary_prediction(preds, t, i)
        sea = sea_output_gradient(preds[i], g_i, t, k)
        lam = theory.lambda_from_k(k, m)
        ncl = ncl_output_gradient(preds[i], preds.mean(axis=0), t, lam)
        worst = max(worst, _rel_err(sea, (1.0 + k * (m - 1)) * ncl))
    return CheckResult("sea_ncl_proportionality", worst, tol)


def run_all(quick: bool = False) -> list[CheckResult]:
    n_nets = 10 if quick else 50
    n_states = 200 if quick else 1000
    results = [check_mlp_backward(n_nets=n_nets)]
    results.extend(check_loss_gradients(n_states=n_states))
    results.append(check_sea_ncl_proportionality(n_states=n_states))
    return results
