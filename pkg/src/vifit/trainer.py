"""Stochastic ELBO maximization for any family.

The estimator follows the sampled-log-density form: each Monte-Carlo draw
contributes log lik(theta_k) + log prior(theta_k) − log q(theta_k), with the
full expression differentiated end to end through the sampling rule.  The
entropy term is always the sampled −log q, never the closed form; for the
atomic families (MAP, dropout) it is a constant and is dropped, which makes
their objective penalized likelihood at the sampled atoms.

Targets are duck-typed: a regression problem exposes ``loglik_rows`` /
``prior_rows`` and a density target exposes ``log_density``; both shapes
accept stacked parameter rows and autodiff Vars.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import families as fam


class TrainingError(RuntimeError):
    pass


class ElboNotFiniteError(TrainingError):
    def __init__(self, step: int, detail: str):
        self.step = step
        super().__init__(f"non-finite ELBO at step {step}: {detail}")


class TrainingDivergedError(TrainingError):
    def __init__(self, step: int, grad_norm: float):
        self.step = step
        self.grad_norm = grad_norm
        super().__init__(f"gradient norm {grad_norm:.3e} exceeded guard at step {step}")


GRAD_NORM_GUARD = 1e6


@dataclass
class TrainConfig:
    steps: int = 2000
    learning_rate: float = 1e-2
    lr_decay: float = 1.0  # multiplicative per-step factor
    mc_samples: int = 8
    minibatch: int | None = None
    mode: str = "naive"
    seed: int = 0
    convergence_window: int = 0  # 0 disables early stopping
    convergence_tol: float = 1e-3

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be nonnegative")
        if not 0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if self.minibatch is not None and self.minibatch < 1:
            raise ValueError("minibatch must be >= 1")
        if self.mode not in fam.MODES:
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        if self.convergence_window < 0 or self.convergence_tol < 0:
            raise ValueError("convergence settings must be nonnegative")

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls(**json.load(fh))

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "learning_rate": self.learning_rate,
            "lr_decay": self.lr_decay,
            "mc_samples": self.mc_samples,
            "minibatch": self.minibatch,
            "mode": self.mode,
            "seed": self.seed,
            "convergence_window": self.convergence_window,
            "convergence_tol": self.convergence_tol,
        }


@dataclass
class ElboEstimate:
    total: float
    expected_loglik: float
    expected_logprior: float
    neg_mean_logq: float
    n_samples: int
    mode: str


@dataclass
class TrainTrace:
    elbo: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    runtime_s: float = 0.0
    steps_run: int = 0
    final_state: fam.FamilyState | None = None

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("step,elbo,grad_norm\n")
            for i, (e, g) in enumerate(zip(self.elbo, self.grad_norm)):
                fh.write(f"{i},{e!r},{g!r}\n")


def _effective_sample_count(state: fam.FamilyState, config: TrainConfig) -> int:
    """Round the per-step sample count up to what the mode's groups need."""
    s = config.mc_samples
    if isinstance(state, fam.MapState):
        return 1
    if isinstance(state, fam.MixtureState):
        # Stratified allocation needs a full round over the components
        # (twice that in paired mode so twins stay within one component).
        group = state.n_components * (2 if config.mode == "paired" else 1)
        s = group * max(1, math.ceil(s / group))
    if config.mode == "paired" and s % 2:
        s += 1
    if config.mode == "unscented" and isinstance(state, fam.StructuredNormalState):
        group = 2 * max(state.rank, 1)
        s = group * max(1, math.ceil(s / group))
    return s


def _target_rows(problem, theta, batch_indices):
    """(loglik, logprior) per row for either target flavour."""
    if hasattr(problem, "loglik_rows"):
        return problem.loglik_rows(theta, batch_indices), problem.prior_rows(theta)
    return problem.log_density(theta), 0.0


def _draw_coefficients(template: fam.FamilyState, params, noise: fam.NoiseBatch):
    """Per-draw averaging weights; one except under stratified allocation.

    With components allocated evenly instead of drawn from the mixture
    weights, each draw carries M * w_m so the average stays an unbiased
    estimate of the mixture expectation -- and the weights become a live
    differentiable path, which is what keeps them trainable.
    """
    if not noise.stratified:
        return None
    logits = params["weight_logits"]
    weights = ad.exp(logits - ad.logsumexp(logits))
    return len(template.components) * weights[noise.components]


def _elbo_terms(template, params, noise, problem, batch_indices):
    """Per-draw (loglik, logprior, log q or None, coefficients or None)."""
    theta = fam.draws_rows(template, params, noise)
    loglik, logprior = _target_rows(problem, theta, batch_indices)
    log_q = None
    if template.tag not in fam.ATOMIC_TAGS:
        log_q = fam.log_q_rows(template, params, theta)
    return loglik, logprior, log_q, _draw_coefficients(template, params, noise)


def elbo_graph(
    template: fam.FamilyState, psi, noise: fam.NoiseBatch, problem, batch_indices=None
):
    """The scalar MC ELBO estimate; differentiable when psi is a Var."""
    params = fam.unpack_vars(template, psi)
    loglik, logprior, log_q, coeff = _elbo_terms(
        template, params, noise, problem, batch_indices
    )
    rows = loglik + logprior
    if log_q is not None:
        rows = rows - log_q
    if coeff is not None:
        rows = rows * coeff
    return ad.sum(rows) / noise.count


def elbo_estimate(
    state: fam.FamilyState, problem, config: TrainConfig, rng: np.random.Generator
) -> ElboEstimate:
    """One Monte-Carlo ELBO estimate with its term decomposition."""
    count = _effective_sample_count(state, config)
    noise = fam.draw_noise(
        state, config.mode, count, rng,
        stratify_components=isinstance(state, fam.MixtureState),
    )
    batch = _draw_minibatch(problem, config, rng)
    params = fam.unpack_vars(state, fam.pack(state))
    loglik, logprior, log_q, coeff = _elbo_terms(state, params, noise, problem, batch)
    weigh = (lambda rows: float(np.mean(rows * coeff))) if coeff is not None else (
        lambda rows: float(np.mean(rows))
    )
    loglik = weigh(loglik)
    logprior = weigh(np.broadcast_to(np.asarray(logprior, float), (count,)))
    neg_logq = -weigh(log_q) if log_q is not None else 0.0
    return ElboEstimate(
        total=loglik + logprior + neg_logq,
        expected_loglik=loglik,
        expected_logprior=logprior,
        neg_mean_logq=neg_logq,
        n_samples=count,
        mode=config.mode,
    )


def _draw_minibatch(problem, config: TrainConfig, rng: np.random.Generator):
    if config.minibatch is None or not hasattr(problem, "n"):
        return None
    if config.minibatch >= problem.n:
        return None
    return rng.choice(problem.n, size=config.minibatch, replace=False)


def train(state: fam.FamilyState, problem, config: TrainConfig) -> TrainTrace:
    """First-order stochastic ascent with bias-corrected moment averaging.

    Per-coordinate step scaling uses exponential moving averages of the
    gradient (decay 0.9) and its square (decay 0.999).  Stops at the step
    budget, or early once the moving-average ELBO improves by less than the
    configured tolerance over the window.  Deterministic given the seed.
    """
    rng = np.random.default_rng(config.seed)
    psi = fam.pack(state)
    m = np.zeros_like(psi)
    v = np.zeros_like(psi)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    count = _effective_sample_count(state, config)
    stratify = isinstance(state, fam.MixtureState)
    trace = TrainTrace()
    lr = config.learning_rate
    start = time.perf_counter()
    for step in range(config.steps):
        noise = fam.draw_noise(
            state, config.mode, count, rng, stratify_components=stratify
        )
        batch = _draw_minibatch(problem, config, rng)
        try:
            report = ad.evaluate_with_gradient(
                lambda p: elbo_graph(state, p, noise, problem, batch), psi
            )
        except ad.NonFiniteValueError as err:
            raise ElboNotFiniteError(step, str(err)) from err
        grad = report.gradient
        gnorm = float(np.linalg.norm(grad))
        if gnorm > GRAD_NORM_GUARD:
            raise TrainingDivergedError(step, gnorm)
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        m_hat = m / (1.0 - beta1 ** (step + 1))
        v_hat = v / (1.0 - beta2 ** (step + 1))
        psi = psi + lr * m_hat / (np.sqrt(v_hat) + eps)
        lr *= config.lr_decay
        trace.elbo.append(report.value)
        trace.grad_norm.append(gnorm)
        if _converged(trace.elbo, config):
            break
    trace.steps_run = len(trace.elbo)
    trace.runtime_s = time.perf_counter() - start
    trace.final_state = fam.unpack(state, psi)
    return trace


def _converged(history: list, config: TrainConfig) -> bool:
    # Stop when the window means have stopped moving; a one-sided rule would
    # fire on downward noise spikes long before the climb is over.
    w = config.convergence_window
    if w == 0 or len(history) < 2 * w:
        return False
    recent = float(np.mean(history[-w:]))
    previous = float(np.mean(history[-2 * w : -w]))
    return abs(recent - previous) < config.convergence_tol


@dataclass
class GradientProbe:
    """Per-coordinate moments of the ELBO gradient estimator at fixed psi."""

    mean: np.ndarray
    variance: np.ndarray
    repeats: int

    def std_error(self) -> np.ndarray:
        return np.sqrt(self.variance / self.repeats)


def gradient_variance_probe(
    state: fam.FamilyState,
    problem,
    mode: str,
    repeats: int,
    rng: np.random.Generator,
    mc_samples: int = 8,
) -> GradientProbe:
    """Empirical gradient mean/variance across repeated noise draws.

    The variational parameters and the (full) batch stay fixed; only the
    sampling noise varies, so the numbers isolate the estimator itself.
    """
    if repeats < 100:
        raise ValueError("need at least 100 repeats for a stable variance")
    config = TrainConfig(mc_samples=mc_samples, mode=mode)
    count = _effective_sample_count(state, config)
    stratify = isinstance(state, fam.MixtureState)
    psi = fam.pack(state)
    grads = np.empty((repeats, psi.size))
    for r in range(repeats):
        noise = fam.draw_noise(state, mode, count, rng, stratify_components=stratify)
        grads[r] = ad.evaluate_with_gradient(
            lambda p: elbo_graph(state, p, noise, problem), psi
        ).gradient
    return GradientProbe(
        mean=grads.mean(axis=0), variance=grads.var(axis=0, ddof=1), repeats=repeats
    )


def save_final_state(trace: TrainTrace, path):
    with open(path, "w") as fh:
        fh.write(fam.state_to_json(trace.final_state))


def load_train_config(path) -> TrainConfig:
    return TrainConfig.from_json(path)


def make_config(**kwargs) -> TrainConfig:
    return replace(TrainConfig(), **kwargs)
