"""DDPM mathematics: schedule, forward noising, posterior, losses, sampler.

Steps are 1-based (t in [1, T]); schedule arrays store index t-1. The
variance of the reverse kernel is the fixed beta_t. Losses build on the
autodiff Tensor type; everything else is plain NumPy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step noise levels: beta_t, alpha_t = 1 - beta_t, their running
    product alpha_bar_t, and the (non-learned) reverse variance sigma_t^2 = beta_t."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma2: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    def _check_t(self, t):
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"step index must lie in [1, {self.T}]")
        return t

    def alpha_at(self, t):
        return self.alpha[self._check_t(t) - 1]

    def alpha_bar_at(self, t):
        return self.alpha_bar[self._check_t(t) - 1]

    def beta_at(self, t):
        return self.beta[self._check_t(t) - 1]


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02,
                  kind: str = "linear") -> DiffusionSchedule:
    if kind != "linear":
        raise ValueError(f"unknown schedule kind {kind!r}")
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    beta = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return DiffusionSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar,
                             sigma2=beta.copy())


def _per_sample(values: np.ndarray, like: np.ndarray) -> np.ndarray:
    """Broadcast per-sample scalars over the trailing data axes."""
    v = np.asarray(values, dtype=like.dtype)
    if v.ndim == 0:
        return v
    return v.reshape((-1,) + (1,) * (like.ndim - 1))


def forward_sample(n0: np.ndarray, t, eps: np.ndarray,
                   sched: DiffusionSchedule) -> np.ndarray:
    """Closed-form noising: sqrt(abar_t) n0 + sqrt(1 - abar_t) eps.

    t may be a scalar or one step per sample.
    """
    if eps.shape != n0.shape:
        raise ValueError("noise must match the data shape")
    ab = sched.alpha_bar_at(t)
    return (_per_sample(np.sqrt(ab), n0) * n0
            + _per_sample(np.sqrt(1.0 - ab), n0) * eps)


def single_step_sample(n_prev: np.ndarray, t, eps: np.ndarray,
                       sched: DiffusionSchedule) -> np.ndarray:
    """One forward Markov step: sqrt(alpha_t) n_{t-1} + sqrt(1 - alpha_t) eps."""
    a = sched.alpha_at(t)
    return (_per_sample(np.sqrt(a), n_prev) * n_prev
            + _per_sample(np.sqrt(1.0 - a), n_prev) * eps)


def posterior_mean(n_t: np.ndarray, eps: np.ndarray, t,
                   sched: DiffusionSchedule) -> np.ndarray:
    """True posterior mean given the realized noise:
    (n_t - (1 - alpha_t) / sqrt(1 - abar_t) * eps) / sqrt(alpha_t)."""
    if np.any(np.asarray(t) < 1):
        raise ValueError("posterior mean is defined for t >= 1")
    a = sched.alpha_at(t)
    ab = sched.alpha_bar_at(t)
    coef = _per_sample((1.0 - a) / np.sqrt(1.0 - ab), n_t)
    return (n_t - coef * eps) / _per_sample(np.sqrt(a), n_t)


def reverse_step(n_t: np.ndarray, eps_hat: np.ndarray, t: int,
                 sched: DiffusionSchedule, noise: np.ndarray | None) -> np.ndarray:
    """One reverse transition: mu_t + sqrt(beta_t) * noise (noise forced to
    zero at t = 1, the final step)."""
    if eps_hat.shape != n_t.shape:
        raise ValueError("predicted noise must match the state shape")
    t = int(t)
    mu = posterior_mean(n_t, eps_hat, t, sched)
    if t <= 1 or noise is None:
        return mu
    return mu + np.sqrt(sched.beta_at(t)) * noise


def simple_loss(model, batch: np.ndarray, sched: DiffusionSchedule,
                rng: np.random.Generator) -> Tensor:
    """The epsilon-prediction MSE: mean over batch and coordinates of
    (eps - eps_theta(n_t, t))^2 at per-sample uniform steps."""
    if batch.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    B = batch.shape[0]
    t = rng.integers(1, sched.T + 1, size=B)
    eps = rng.standard_normal(batch.shape).astype(np.float32)
    n_t = forward_sample(batch.astype(np.float32), t, eps, sched).astype(np.float32)
    eps_hat = model(Tensor(n_t), t)
    diff = ad.sub(eps_hat, Tensor(eps))
    return ad.mean(ad.mul(diff, diff))


def gaussian_kl(mu_a: np.ndarray, mu_b: np.ndarray, sigma2: float) -> float:
    """KL between two Gaussians with common isotropic variance:
    |mu_a - mu_b|^2 / (2 sigma^2), summed over coordinates, averaged over
    the batch axis."""
    d = mu_a - mu_b
    per_sample = np.sum(d * d, axis=tuple(range(1, d.ndim))) / (2.0 * sigma2)
    return float(np.mean(per_sample))


def elbo_terms(model, batch: np.ndarray, sched: DiffusionSchedule,
               rng: np.random.Generator) -> dict:
    """Diagnostic ELBO decomposition on a fixed batch.

    Draws one noise realization per step, t ascending from 1 (the t = 1
    draw feeds the reconstruction term). Returns per-step KL values
    between the true posterior mean and the model mean under the shared
    variance, plus the Gaussian reconstruction log-likelihood.
    """
    if batch.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    batch = batch.astype(np.float32)
    B = batch.shape[0]
    out = {"t": [], "kl": []}
    for t in range(1, sched.T + 1):
        eps = rng.standard_normal(batch.shape).astype(np.float32)
        n_t = forward_sample(batch, t, eps, sched).astype(np.float32)
        eps_hat = model(Tensor(n_t), np.full(B, t)).data
        if t == 1:
            mu_model = posterior_mean(n_t, eps_hat, 1, sched)
            s2 = float(sched.sigma2[0])
            d = batch - mu_model
            ll = -0.5 * (np.log(2.0 * np.pi * s2) + d * d / s2)
            out["recon_loglik"] = float(np.mean(np.sum(
                ll, axis=tuple(range(1, ll.ndim)))))
        else:
            mu_true = posterior_mean(n_t, eps, t, sched)
            mu_model = posterior_mean(n_t, eps_hat, t, sched)
            out["t"].append(t)
            out["kl"].append(gaussian_kl(mu_true, mu_model, float(sched.sigma2[t - 1])))
    return out


def sample(model, sched: DiffusionSchedule, count: int, image_shape: tuple,
           rng: np.random.Generator, trace_every: int = 0) -> np.ndarray | tuple:
    """Run the full reverse chain from pure noise with frozen weights.

    Returns (count, C, H, W) samples; with trace_every > 0 also returns a
    list of (t, state snapshot) pairs.
    """
    n = rng.standard_normal((count,) + tuple(image_shape)).astype(np.float32)
    traces = []
    for t in range(sched.T, 0, -1):
        eps_hat = model(Tensor(n), np.full(count, t)).data
        noise = rng.standard_normal(n.shape).astype(np.float32) if t > 1 else None
        n = reverse_step(n, eps_hat, t, sched, noise).astype(np.float32)
        if trace_every and (t - 1) % trace_every == 0:
            traces.append((t - 1, n.copy()))
    if trace_every:
        return n, traces
    return n
