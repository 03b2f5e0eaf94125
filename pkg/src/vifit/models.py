"""Regression models, likelihoods, priors, and synthetic data.

The workhorse is a linear-in-parameters model y = design @ theta with known
Gaussian observation noise; the design matrix comes from a squared-
exponential RBF layer with regularly spaced centers.  Likelihood and prior
evaluations accept autodiff Vars and stacked parameter rows, so the same
code backs plain evaluation, training, and test oracles.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from . import autodiff as ad
from .families import ModelShape, ParamBlock

LOG_TWO_PI = math.log(2.0 * math.pi)

DATA_INTERVAL = (-1.0, 1.0)


@dataclass(frozen=True)
class RbfModelSpec:
    """Squared-exponential basis layer: K(c, x) = exp(−(x−c)²/(2h²))."""

    centers: np.ndarray
    bandwidth: float
    noise_sigma: float

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=np.float64)
        object.__setattr__(self, "centers", centers)
        if centers.ndim != 1 or centers.size < 1:
            raise ValueError("need at least one center")
        if centers.size > 1 and not np.all(np.diff(centers) > 0):
            raise ValueError("centers must be strictly increasing")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.noise_sigma <= 0:
            raise ValueError("noise scale must be positive")

    @classmethod
    def regular(
        cls,
        n_centers: int,
        interval: tuple = DATA_INTERVAL,
        noise_sigma: float = 0.25,
    ) -> "RbfModelSpec":
        """Regularly spaced centers with bandwidth equal to their spacing."""
        centers = np.linspace(interval[0], interval[1], n_centers)
        spacing = (
            (interval[1] - interval[0]) / (n_centers - 1) if n_centers > 1 else 1.0
        )
        return cls(centers=centers, bandwidth=spacing, noise_sigma=noise_sigma)

    @property
    def n_basis(self) -> int:
        return self.centers.size


def rbf_design_matrix(xs: np.ndarray, spec: RbfModelSpec) -> np.ndarray:
    xs = np.atleast_1d(np.asarray(xs, dtype=np.float64))
    diff = xs[:, None] - spec.centers[None, :]
    return np.exp(-(diff**2) / (2.0 * spec.bandwidth**2))


@dataclass(frozen=True)
class GaussianPrior:
    """Independent N(0, 1/lam) coordinates; lam is the precision."""

    lam: float = 1.0

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("precision must be positive")


@dataclass(frozen=True)
class StudentTPrior:
    """Independent scale-s Student-t coordinates with nu degrees of freedom."""

    nu: float
    scale: float = 1.0

    def __post_init__(self):
        if self.nu <= 0 or self.scale <= 0:
            raise ValueError("nu and scale must be positive")


PriorSpec = Union[GaussianPrior, StudentTPrior]


def prior_logpdf(spec: PriorSpec, theta):
    """Sum of per-coordinate prior log-densities; rows may be (P,) or (S, P)."""
    if isinstance(spec, GaussianPrior):
        p = theta.shape[-1]
        const = -0.5 * p * (LOG_TWO_PI - math.log(spec.lam))
        return const - 0.5 * spec.lam * ad.sum(theta * theta, axis=-1)
    if isinstance(spec, StudentTPrior):
        nu, s = spec.nu, spec.scale
        p = theta.shape[-1]
        const = p * (
            math.lgamma((nu + 1.0) / 2.0)
            - math.lgamma(nu / 2.0)
            - 0.5 * math.log(nu * math.pi)
            - math.log(s)
        )
        scaled = theta / s
        return const - 0.5 * (nu + 1.0) * ad.sum(
            ad.log(1.0 + scaled * scaled / nu), axis=-1
        )
    raise TypeError(f"unknown prior spec {spec!r}")


@dataclass
class RegressionProblem:
    """Design matrix, targets, known noise scale, and a prior choice."""

    design: np.ndarray
    targets: np.ndarray
    noise_sigma: float
    prior: PriorSpec
    rbf: RbfModelSpec | None = None
    inputs: np.ndarray | None = None

    def __post_init__(self):
        self.design = np.asarray(self.design, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.design.ndim != 2 or self.design.shape[0] != self.targets.shape[0]:
            raise ValueError("design and targets are inconsistent")
        if self.targets.shape[0] < 1:
            raise ValueError("need at least one observation")
        if self.noise_sigma <= 0:
            raise ValueError("noise scale must be positive")

    @property
    def n(self) -> int:
        return self.targets.shape[0]

    @property
    def dim(self) -> int:
        return self.design.shape[1]

    def model_shape(self) -> ModelShape:
        return ModelShape.linear(self.dim)

    def features(self, xs: np.ndarray) -> np.ndarray:
        """Design rows for new inputs; needs the RBF spec that built us."""
        if self.rbf is None:
            raise ValueError("problem carries no feature map for new inputs")
        return rbf_design_matrix(xs, self.rbf)

    def loglik_rows(self, theta, batch_indices=None):
        """Gaussian log-likelihood per parameter row, minibatch-rescaled."""
        if batch_indices is None:
            design, targets, scale = self.design, self.targets, 1.0
        else:
            batch_indices = np.asarray(batch_indices)
            if batch_indices.size == 0:
                raise ValueError("minibatch must be nonempty")
            design = self.design[batch_indices]
            targets = self.targets[batch_indices]
            scale = self.n / batch_indices.size
        resid = targets - ad.matmul(theta, ad.transpose(design))
        n_b = design.shape[0]
        const = -0.5 * n_b * (LOG_TWO_PI + 2.0 * math.log(self.noise_sigma))
        quad = ad.sum(resid * resid, axis=-1) / (2.0 * self.noise_sigma**2)
        return scale * (const - quad)

    def prior_rows(self, theta):
        return prior_logpdf(self.prior, theta)


def gaussian_loglik(problem: RegressionProblem, theta):
    """Full-data log-likelihood at one parameter vector (or stacked rows)."""
    return problem.loglik_rows(theta)


def minibatch_loglik(problem: RegressionProblem, theta, batch_indices):
    """Unbiased (N/|B|)-rescaled minibatch estimate of gaussian_loglik."""
    return problem.loglik_rows(theta, batch_indices)


@dataclass
class SyntheticTruth:
    theta_star: np.ndarray
    clean: np.ndarray
    noisy: np.ndarray


def make_rbf_dataset(
    spec: RbfModelSpec,
    n: int,
    seed: int,
    prior: PriorSpec | None = None,
    interval: tuple = DATA_INTERVAL,
) -> tuple:
    """Equispaced inputs, standard-normal true weights, noisy targets."""
    if n < 1:
        raise ValueError("need at least one observation")
    rng = np.random.default_rng(seed)
    xs = np.linspace(interval[0], interval[1], n)
    design = rbf_design_matrix(xs, spec)
    theta_star = rng.standard_normal(spec.n_basis)
    clean = design @ theta_star
    noisy = clean + spec.noise_sigma * rng.standard_normal(n)
    problem = RegressionProblem(
        design=design,
        targets=noisy,
        noise_sigma=spec.noise_sigma,
        prior=prior if prior is not None else GaussianPrior(1.0),
        rbf=spec,
        inputs=xs,
    )
    return problem, SyntheticTruth(theta_star=theta_star, clean=clean, noisy=noisy)


def save_dataset(problem: RegressionProblem, truth: SyntheticTruth, path, seed: int):
    """CSV of (x, t, y_clean) plus a JSON sidecar holding spec and seed."""
    path = Path(path)
    if problem.inputs is None or problem.rbf is None:
        raise ValueError("only RBF-generated datasets serialize to CSV")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "t", "y_clean"])
        for x, t, y in zip(problem.inputs, problem.targets, truth.clean):
            writer.writerow([repr(float(x)), repr(float(t)), repr(float(y))])
    sidecar = {
        "seed": seed,
        "centers": problem.rbf.centers.tolist(),
        "bandwidth": problem.rbf.bandwidth,
        "noise_sigma": problem.rbf.noise_sigma,
        "theta_star": truth.theta_star.tolist(),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))


def load_dataset(path) -> tuple:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text())
    xs, ts, ys = [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            xs.append(float(row["x"]))
            ts.append(float(row["t"]))
            ys.append(float(row["y_clean"]))
    spec = RbfModelSpec(
        centers=np.asarray(sidecar["centers"]),
        bandwidth=sidecar["bandwidth"],
        noise_sigma=sidecar["noise_sigma"],
    )
    xs = np.asarray(xs)
    problem = RegressionProblem(
        design=rbf_design_matrix(xs, spec),
        targets=np.asarray(ts),
        noise_sigma=spec.noise_sigma,
        prior=GaussianPrior(1.0),
        rbf=spec,
        inputs=xs,
    )
    truth = SyntheticTruth(
        theta_star=np.asarray(sidecar["theta_star"]),
        clean=np.asarray(ys),
        noisy=np.asarray(ts),
    )
    return problem, truth


class OneHiddenMlp:
    """Tiny tanh-hidden-layer regression model; smoke-test hook only."""

    def __init__(self, n_hidden: int, noise_sigma: float = 0.25):
        self.n_hidden = n_hidden
        self.noise_sigma = noise_sigma

    def model_shape(self) -> ModelShape:
        h = self.n_hidden
        return ModelShape(
            blocks=(
                ParamBlock("w1", h, 1),
                ParamBlock("b1", h, 1, is_bias=True),
                ParamBlock("w2", h, h),
                ParamBlock("b2", 1, h, is_bias=True),
            )
        )

    def predict_rows(self, xs: np.ndarray, theta):
        """Network outputs for all inputs; theta is one flat row."""
        h = self.n_hidden
        w1 = theta[0:h]
        b1 = theta[h : 2 * h]
        w2 = theta[2 * h : 3 * h]
        b2 = theta[3 * h]
        hidden = ad.tanh(np.outer(xs, np.ones(h)) * w1 + b1)
        return ad.matmul(hidden, w2) + b2


@dataclass
class MlpProblem:
    """Nonlinear regression wrapper with the same trainer-facing surface."""

    mlp: OneHiddenMlp
    xs: np.ndarray
    targets: np.ndarray
    prior: PriorSpec

    @property
    def dim(self) -> int:
        return 3 * self.mlp.n_hidden + 1

    @property
    def n(self) -> int:
        return self.targets.shape[0]

    def model_shape(self) -> ModelShape:
        return self.mlp.model_shape()

    def loglik_rows(self, theta, batch_indices=None):
        if batch_indices is None:
            xs, ts, scale = self.xs, self.targets, 1.0
        else:
            xs = self.xs[batch_indices]
            ts = self.targets[batch_indices]
            scale = self.n / len(batch_indices)
        sigma = self.mlp.noise_sigma
        if getattr(theta, "ndim", 1) == 1:
            resid = ts - self.mlp.predict_rows(xs, theta)
            quad = ad.sum(resid * resid) / (2.0 * sigma**2)
        else:
            per = [
                ad.sum((ts - self.mlp.predict_rows(xs, theta[s])) ** 2)
                for s in range(theta.shape[0])
            ]
            quad = ad.stack(per) / (2.0 * sigma**2)
        const = -0.5 * xs.shape[0] * (LOG_TWO_PI + 2.0 * math.log(sigma))
        return scale * (const - quad)

    def prior_rows(self, theta):
        return prior_logpdf(self.prior, theta)
