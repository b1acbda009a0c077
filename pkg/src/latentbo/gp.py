"""Gaussian process surrogate over the 2D latent space.

RBF kernel with per-dimension lengthscales and an overall variance, a
small fixed nugget for numerical stability, constant-mean regression on
standardized targets, marginal-likelihood fitting by Adam in log-parameter
space with random restarts, and Cholesky-backed posterior prediction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve

from .errors import (
    DegenerateDataError,
    FitFailedError,
    InvalidSpecError,
    NotPositiveDefiniteError,
)
from .vae import LatentPoint

DEFAULT_NUGGET = 1e-6
MAX_NUGGET = 1e-2


@dataclass(frozen=True)
class GpHyperparams:
    """Kernel hyperparameters, held in log-space; nugget is fixed, not learned."""

    log_sigma2: float
    log_lengthscales: tuple[float, float]
    nugget: float = DEFAULT_NUGGET

    def __post_init__(self):
        vals = (self.log_sigma2, *self.log_lengthscales)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidSpecError(f"log-hyperparameters must be finite, got {vals}")
        if self.nugget <= 0:
            raise InvalidSpecError(f"nugget must be positive, got {self.nugget}")

    @classmethod
    def from_natural(cls, sigma2: float, lengthscales, nugget: float = DEFAULT_NUGGET):
        if sigma2 <= 0 or any(l <= 0 for l in lengthscales):
            raise InvalidSpecError("sigma2 and lengthscales must be strictly positive")
        return cls(
            log_sigma2=math.log(sigma2),
            log_lengthscales=(math.log(lengthscales[0]), math.log(lengthscales[1])),
            nugget=nugget,
        )

    @property
    def sigma2(self) -> float:
        return math.exp(self.log_sigma2)

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(np.array(self.log_lengthscales))

    def log_vector(self) -> np.ndarray:
        return np.array([self.log_sigma2, *self.log_lengthscales])

    @classmethod
    def from_log_vector(cls, x: np.ndarray, nugget: float = DEFAULT_NUGGET):
        return cls(log_sigma2=float(x[0]), log_lengthscales=(float(x[1]), float(x[2])),
                   nugget=nugget)


@dataclass(frozen=True)
class GpFitConfig:
    learning_rate: float = 1e-4
    steps: int = 50000
    restarts: int = 3
    seed: int = 0
    # NLL-improvement stall tolerance, checked every `check_every` steps.
    check_every: int = 500
    stall_tol: float = 1e-9


@dataclass(frozen=True)
class GpPosterior:
    mean: float
    variance: float

    def __post_init__(self):
        if self.variance < 0:
            raise InvalidSpecError(f"posterior variance must be >= 0, got {self.variance}")

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)


@dataclass
class GpModel:
    hyper: GpHyperparams
    train_z: np.ndarray          # (n, 2)
    train_y_raw: np.ndarray      # (n,)
    y_mean: float
    y_sd: float
    chol: np.ndarray             # lower factor of K + nugget*I, standardized space
    alpha: np.ndarray            # (K + nugget*I)^-1 y_standardized
    fit_info: dict = field(default_factory=dict)

    @property
    def y_standardized(self) -> np.ndarray:
        return (self.train_y_raw - self.y_mean) / self.y_sd


def _as_point(p) -> np.ndarray:
    if isinstance(p, LatentPoint):
        return p.as_array()
    arr = np.asarray(p, dtype=np.float64).reshape(-1)
    if arr.shape != (2,):
        raise InvalidSpecError(f"latent points are 2D, got shape {arr.shape}")
    return arr


def rbf_kernel(a, b, hyper: GpHyperparams) -> float:
    """sigma2 * exp(-0.5 * sum_m (a_m - b_m)^2 / theta_m^2); symmetric in (a, b)."""
    av, bv = _as_point(a), _as_point(b)
    theta = hyper.lengthscales
    return float(hyper.sigma2 * np.exp(-0.5 * np.sum(((av - bv) / theta) ** 2)))


def _sq_dists(za: np.ndarray, zb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension squared distance matrices, shape (len(za), len(zb))."""
    d1 = (za[:, 0:1] - zb[None, :, 0]) ** 2
    d2 = (za[:, 1:2] - zb[None, :, 1]) ** 2
    return d1, d2


def _corr_from_dists(d1, d2, theta) -> np.ndarray:
    return np.exp(-0.5 * (d1 / theta[0] ** 2 + d2 / theta[1] ** 2))


def kernel_matrix(z: np.ndarray, hyper: GpHyperparams) -> np.ndarray:
    d1, d2 = _sq_dists(z, z)
    return hyper.sigma2 * _corr_from_dists(d1, d2, hyper.lengthscales)


def cross_kernel(zq: np.ndarray, z: np.ndarray, hyper: GpHyperparams) -> np.ndarray:
    d1, d2 = _sq_dists(np.atleast_2d(zq), z)
    return hyper.sigma2 * _corr_from_dists(d1, d2, hyper.lengthscales)


def _chol_escalating(k: np.ndarray, nugget: float) -> tuple[np.ndarray, float]:
    """Cholesky of k + nugget*I, escalating the nugget x10 up to MAX_NUGGET."""
    n = k.shape[0]
    nu = nugget
    while True:
        try:
            return np.linalg.cholesky(k + nu * np.eye(n)), nu
        except np.linalg.LinAlgError:
            if nu >= MAX_NUGGET:
                raise NotPositiveDefiniteError(
                    f"kernel matrix not positive definite even with nugget {nu}"
                ) from None
            nu = min(nu * 10.0, MAX_NUGGET)


def _nll_core(x: np.ndarray, nugget: float, d1, d2, y: np.ndarray, with_grad: bool):
    """NLL (and gradient over log-params) at log-parameter vector x."""
    sigma2 = math.exp(x[0])
    theta = np.exp(x[1:3])
    n = y.shape[0]
    r = _corr_from_dists(d1, d2, theta)
    k = sigma2 * r
    chol, nu = _chol_escalating(k, nugget)
    alpha = cho_solve((chol, True), y)
    nll = 0.5 * float(y @ alpha) + float(np.sum(np.log(np.diag(chol)))) \
        + 0.5 * n * math.log(2.0 * math.pi)
    if not with_grad:
        return nll, None, (chol, alpha, nu)
    kinv = cho_solve((chol, True), np.eye(n))
    t = kinv - np.outer(alpha, alpha)
    g = np.empty(3)
    g[0] = 0.5 * sigma2 * np.sum(t * r)
    g[1] = 0.5 * sigma2 * np.sum(t * r * d1) / theta[0] ** 2
    g[2] = 0.5 * sigma2 * np.sum(t * r * d2) / theta[1] ** 2
    return nll, g, (chol, alpha, nu)


def neg_log_marginal_likelihood(hyper: GpHyperparams, z: np.ndarray, y_std: np.ndarray) -> float:
    """0.5*y'(K+nug I)^-1 y + 0.5*log det(K+nug I) + (n/2) log 2pi, via Cholesky."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    y_std = np.asarray(y_std, dtype=np.float64).reshape(-1)
    if z.shape[0] != y_std.shape[0] or z.shape[0] < 1:
        raise InvalidSpecError("Z and Y must be non-empty and the same length")
    d1, d2 = _sq_dists(z, z)
    nll, _, _ = _nll_core(hyper.log_vector(), hyper.nugget, d1, d2, y_std, with_grad=False)
    return nll


def nll_gradient(hyper: GpHyperparams, z: np.ndarray, y_std: np.ndarray) -> np.ndarray:
    """Analytic NLL gradient over (log sigma2, log theta1, log theta2).

    Uses the trace identity dNLL/dphi = 0.5 tr((K^-1 - aa') dK/dphi) with
    a = K^-1 y, re-expressed in log coordinates.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    y_std = np.asarray(y_std, dtype=np.float64).reshape(-1)
    d1, d2 = _sq_dists(z, z)
    _, g, _ = _nll_core(hyper.log_vector(), hyper.nugget, d1, d2, y_std, with_grad=True)
    return g


def _batch_nll_grad(xs: np.ndarray, nugget: float, d1, d2, y: np.ndarray):
    """NLLs and log-space gradients for a stack of parameter vectors (r, 3).

    All restarts share one set of batched linear-algebra calls; a batch
    Cholesky failure falls back to per-restart nugget escalation. Restarts
    whose NLL is non-finite get NaN gradients (callers freeze them).
    """
    r = xs.shape[0]
    n = y.shape[0]
    sigma2 = np.exp(xs[:, 0])
    theta2 = np.exp(2.0 * xs[:, 1:3])
    corr = np.exp(-0.5 * (d1[None] / theta2[:, 0, None, None]
                          + d2[None] / theta2[:, 1, None, None]))
    k = sigma2[:, None, None] * corr + nugget * np.eye(n)[None]
    try:
        chols = np.linalg.cholesky(k)
    except np.linalg.LinAlgError:
        # escalate per restart, keeping k consistent with the factor used;
        # hopeless restarts get an identity k and an inf NLL below
        chols = np.empty_like(k)
        for i in range(r):
            try:
                chols[i], nu_i = _chol_escalating(sigma2[i] * corr[i], nugget)
                k[i] = sigma2[i] * corr[i] + nu_i * np.eye(n)
            except NotPositiveDefiniteError:
                chols[i] = np.nan
                k[i] = np.eye(n)
    with np.errstate(all="ignore"):
        logdets = np.sum(np.log(np.diagonal(chols, axis1=1, axis2=2)), axis=1)
        kinv = np.linalg.solve(k, np.broadcast_to(np.eye(n), (r, n, n)).copy())
        alpha = kinv @ y
        nll = 0.5 * (alpha @ y) + logdets + 0.5 * n * math.log(2.0 * math.pi)
        t = kinv - alpha[:, :, None] * alpha[:, None, :]
        tc = t * corr
        g = np.empty((r, 3))
        g[:, 0] = 0.5 * sigma2 * np.einsum("rij->r", tc)
        g[:, 1] = 0.5 * sigma2 * np.einsum("rij,ij->r", tc, d1) / theta2[:, 0]
        g[:, 2] = 0.5 * sigma2 * np.einsum("rij,ij->r", tc, d2) / theta2[:, 1]
    bad = ~np.isfinite(nll)
    nll[bad] = np.inf
    g[bad] = np.nan
    return nll, g


def _adam_minimize_batch(x0s: np.ndarray, nugget: float, d1, d2, y: np.ndarray,
                         config: GpFitConfig):
    """Adam descent on all restarts at once, tracking each restart's best
    iterate; stops when every restart's best NLL has stalled."""
    xs = x0s.copy()
    m = np.zeros_like(xs)
    v = np.zeros_like(xs)
    nll, g = _batch_nll_grad(xs, nugget, d1, d2, y)
    active = np.isfinite(nll)
    best_xs, best_nll = xs.copy(), nll.copy()
    last_check_best = best_nll.copy()
    for t in range(1, config.steps + 1):
        g_eff = np.where(active[:, None], np.nan_to_num(g), 0.0)
        m = 0.9 * m + 0.1 * g_eff
        v = 0.999 * v + 0.001 * (g_eff * g_eff)
        m_hat = m / (1.0 - 0.9 ** t)
        v_hat = v / (1.0 - 0.999 ** t)
        xs = xs - config.learning_rate * (m_hat / (np.sqrt(v_hat) + 1e-8)) * active[:, None]
        nll, g = _batch_nll_grad(xs, nugget, d1, d2, y)
        active = active & np.isfinite(nll)
        improved = active & (nll < best_nll)
        best_xs[improved] = xs[improved]
        best_nll[improved] = nll[improved]
        if t % config.check_every == 0:
            stalled = (last_check_best - best_nll) < config.stall_tol * np.maximum(
                1.0, np.abs(best_nll))
            if np.all(stalled | ~active):
                break
            last_check_best = best_nll.copy()
    return best_xs, best_nll


def fit(z, y, config: GpFitConfig = GpFitConfig(),
        warm_start: GpHyperparams | None = None) -> GpModel:
    """Fit hyperparameters by minimizing the NLL of standardized targets.

    Targets are standardized to zero mean / unit variance first (Adam at
    small learning rates is scale-sensitive). Restart initializations are
    drawn log-uniformly around the data extent; the best-NLL iterate over
    all restarts wins. With `warm_start` a single descent starts from the
    given hyperparameters instead.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = z.shape[0]
    if n != y.shape[0] or n < 2:
        raise InvalidSpecError(f"need at least 2 matching (z, y) pairs, got {n}")
    y_sd = float(np.std(y))
    if y_sd == 0.0:
        raise DegenerateDataError("objective values have zero variance; cannot standardize")
    y_mean = float(np.mean(y))
    y_std = (y - y_mean) / y_sd

    d1, d2 = _sq_dists(z, z)
    nugget = warm_start.nugget if warm_start is not None else DEFAULT_NUGGET

    if warm_start is not None:
        inits = np.array([warm_start.log_vector()])
    else:
        rng = np.random.default_rng(config.seed)
        extent = np.maximum(z.max(axis=0) - z.min(axis=0), 1e-12)
        inits = np.empty((config.restarts, 3))
        for i in range(config.restarts):
            inits[i, 1:] = np.log(extent) + rng.uniform(math.log(0.1), math.log(10.0), size=2)
            inits[i, 0] = rng.uniform(math.log(0.1), math.log(10.0))

    init_nlls, _ = _batch_nll_grad(inits, nugget, d1, d2, y_std)
    best_xs, best_nlls = _adam_minimize_batch(inits, nugget, d1, d2, y_std, config)
    if not np.any(np.isfinite(best_nlls)):
        raise FitFailedError("all hyperparameter restarts diverged")
    winner = int(np.argmin(best_nlls))
    best_x = best_xs[winner]

    nll, _, (chol, alpha, nu) = _nll_core(best_x, nugget, d1, d2, y_std, with_grad=False)
    hyper = GpHyperparams.from_log_vector(best_x, nugget=nu)
    return GpModel(
        hyper=hyper, train_z=z.copy(), train_y_raw=y.copy(),
        y_mean=y_mean, y_sd=y_sd, chol=chol, alpha=alpha,
        fit_info={"init_nlls": [float(v) for v in init_nlls],
                  "final_nll": float(best_nlls[winner])},
    )


def predict_batch(model: GpModel, zq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior means and variances (original Y units) at (m, 2) query points."""
    zq = np.atleast_2d(np.asarray(zq, dtype=np.float64))
    kq = cross_kernel(zq, model.train_z, model.hyper)          # (m, n)
    mean_std = kq @ model.alpha
    w = cho_solve((model.chol, True), kq.T)                    # (n, m)
    var_std = model.hyper.sigma2 - np.einsum("mn,nm->m", kq, w)
    var_std = np.maximum(var_std, 0.0)
    mean = model.y_mean + model.y_sd * mean_std
    var = (model.y_sd ** 2) * var_std
    return mean, var


def predict(model: GpModel, query) -> GpPosterior:
    """Posterior at a single latent point (Cholesky-backed, variance floored at 0)."""
    mean, var = predict_batch(model, _as_point(query)[None, :])
    return GpPosterior(mean=float(mean[0]), variance=float(var[0]))


def refit_config(config: GpFitConfig, steps: int) -> GpFitConfig:
    return replace(config, steps=steps)


# ---------------------------------------------------------------------------
# Serialization: hyperparameters, training data, and standardization
# constants; the Cholesky factor is recomputed on load.


def save_gp(model: GpModel, path) -> None:
    doc = {
        "log_sigma2": model.hyper.log_sigma2,
        "log_lengthscales": list(model.hyper.log_lengthscales),
        "nugget": model.hyper.nugget,
        "train_z": model.train_z.tolist(),
        "train_y_raw": model.train_y_raw.tolist(),
        "y_mean": model.y_mean,
        "y_sd": model.y_sd,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_gp(path) -> GpModel:
    with open(path) as fh:
        doc = json.load(fh)
    hyper = GpHyperparams(
        log_sigma2=float(doc["log_sigma2"]),
        log_lengthscales=(float(doc["log_lengthscales"][0]), float(doc["log_lengthscales"][1])),
        nugget=float(doc["nugget"]),
    )
    z = np.array(doc["train_z"], dtype=np.float64)
    y = np.array(doc["train_y_raw"], dtype=np.float64)
    y_mean, y_sd = float(doc["y_mean"]), float(doc["y_sd"])
    y_std = (y - y_mean) / y_sd
    k = kernel_matrix(z, hyper)
    chol, _ = _chol_escalating(k, hyper.nugget)
    alpha = cho_solve((chol, True), y_std)
    return GpModel(hyper=hyper, train_z=z, train_y_raw=y, y_mean=y_mean, y_sd=y_sd,
                   chol=chol, alpha=alpha)
