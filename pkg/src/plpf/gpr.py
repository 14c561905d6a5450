"""Exact Gaussian-process regression with an isotropic squared-exponential kernel.

Zero prior mean, hyperparameters (signal variance, length scale and
optionally a white-noise variance) fitted by maximising the log marginal likelihood with multi-start L-BFGS-B on log
parameters.  Inputs are standardised per dimension before the kernel is
evaluated; the scaler is stored with the model.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, lapack, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .errors import DegenerateTargets, DimMismatch, FactorizationFailure

log = logging.getLogger(__name__)

JITTER_LADDER = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
BOUNDS = (1e-3, 1e3)
NOISE_BOUNDS = (1e-10, 1.0)


@dataclass(frozen=True)
class Hyperparams:
    signal_var: float
    length_scale: float
    noise_var: float = 0.0

    def __post_init__(self):
        if not self.signal_var > 0 or not self.length_scale > 0 or self.noise_var < 0:
            raise ValueError(f"invalid hyperparameters {self}")


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.shape[0] != y.size:
            raise DimMismatch(f"X has {X.shape[0]} rows, y has {y.size}")
        if y.size < 1:
            raise ValueError("dataset is empty")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.y.size


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Scaler":
        std = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(std > 0, std, 1.0))

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.std


def kernel(X, X2, hp: Hyperparams) -> np.ndarray:
    """Squared-exponential covariance between the rows of ``X`` and ``X2``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    if X.shape[1] != X2.shape[1]:
        raise DimMismatch(f"inputs have {X.shape[1]} and {X2.shape[1]} columns")
    d2 = cdist(X, X2, "sqeuclidean")
    return hp.signal_var * np.exp(-0.5 * d2 / hp.length_scale**2)


def _factor(K: np.ndarray, noise_var: float) -> tuple[np.ndarray, float]:
    n = K.shape[0]
    for jitter in JITTER_LADDER:
        try:
            L = cholesky(K + (noise_var + jitter) * np.eye(n), lower=True, check_finite=False)
        except LinAlgError:
            continue
        return L, jitter
    raise FactorizationFailure(f"Cholesky failed with jitter up to {JITTER_LADDER[-1]:g}")


def _inverse_from_chol(L: np.ndarray) -> np.ndarray:
    inv, info = lapack.dpotri(L, lower=1)
    if info != 0:
        raise FactorizationFailure(f"dpotri failed (info={info})")
    return inv + np.tril(inv, -1).T


def log_marginal_likelihood(
    theta,
    X: np.ndarray,
    y: np.ndarray,
    noise_var: float | None = 0.0,
    eval_gradient: bool = False,
    sqdist: np.ndarray | None = None,
):
    """Log evidence at ``theta = (log signal_var, log length_scale[, log noise_var])``.

    The third entry of ``theta`` is only read when ``noise_var`` is None.
    ``X`` is used as given (already standardised).  With ``eval_gradient``
    returns ``(value, grad)``, the gradient taken w.r.t. ``theta``.
    """
    theta = np.asarray(theta, dtype=float)
    sf2, ell = np.exp(theta[:2])
    free_noise = noise_var is None
    sn2 = float(np.exp(theta[2])) if free_noise else noise_var
    d2 = cdist(X, X, "sqeuclidean") if sqdist is None else sqdist
    Kf = sf2 * np.exp(-0.5 * d2 / ell**2)
    L, _ = _factor(Kf, sn2)
    a = cho_solve((L, True), y, check_finite=False)
    n = y.size
    value = -0.5 * y @ a - np.log(np.diag(L)).sum() - 0.5 * n * np.log(2 * np.pi)
    if not eval_gradient:
        return value
    W = np.outer(a, a)
    W -= _inverse_from_chol(L)
    WK = W * Kf
    grad = [0.5 * WK.sum(), 0.5 * np.sum(WK * d2) / ell**2]
    if free_noise:
        grad.append(0.5 * sn2 * np.trace(W))
    return value, np.array(grad)


@dataclass(frozen=True)
class _Groups:
    """Training set collapsed onto its distinct input rows.

    With a positive diagonal term ``s`` the evidence of replicated inputs
    depends on the data only through per-row counts ``a``, group means
    ``ybar`` and the within-group sum of squares, so the likelihood can be
    evaluated with a Cholesky factor of size ``n_unique`` instead of ``N``.
    """

    X: np.ndarray
    counts: np.ndarray
    ybar: np.ndarray
    ss_within: float
    n_total: int

    @classmethod
    def of(cls, X: np.ndarray, y: np.ndarray) -> "_Groups":
        Xu, inv, counts = np.unique(X, axis=0, return_inverse=True, return_counts=True)
        inv = inv.reshape(-1)
        ybar = np.bincount(inv, weights=y) / counts
        ss = float(np.sum((y - ybar[inv]) ** 2))
        return cls(Xu, counts.astype(float), ybar, ss, y.size)


def _lml_grouped(theta, g: _Groups, noise_var, d2: np.ndarray):
    """Exact log evidence and gradient computed on the collapsed data set."""
    theta = np.asarray(theta, dtype=float)
    sf2, ell = np.exp(theta[:2])
    free_noise = noise_var is None
    sn2 = float(np.exp(theta[2])) if free_noise else noise_var
    Ku = sf2 * np.exp(-0.5 * d2 / ell**2)
    inv_a = 1.0 / g.counts
    n_u = g.counts.size
    for jitter in JITTER_LADDER:
        s = sn2 + jitter
        try:
            L = cholesky(Ku + np.diag(s * inv_a), lower=True, check_finite=False)
        except LinAlgError:
            continue
        break
    else:
        raise FactorizationFailure(f"Cholesky failed with jitter up to {JITTER_LADDER[-1]:g}")
    b = cho_solve((L, True), g.ybar, check_finite=False)
    n_rep = g.n_total - n_u
    quad = g.ss_within / s + g.ybar @ b
    logdet = 2 * np.log(np.diag(L)).sum() + np.log(g.counts).sum() + n_rep * np.log(s)
    value = -0.5 * (quad + logdet + g.n_total * np.log(2 * np.pi))
    Cinv = _inverse_from_chol(L)
    W = np.outer(b, b)
    W -= Cinv
    WK = W * Ku
    grad = [0.5 * WK.sum(), 0.5 * np.sum(WK * d2) / ell**2]
    if free_noise:
        d_ds = 0.5 * (g.ss_within / s**2 + b @ (inv_a * b) - np.sum(np.diag(Cinv) * inv_a) - n_rep / s)
        grad.append(sn2 * d_ds)
    return value, np.array(grad)


@dataclass(frozen=True, eq=False)
class GPModel:
    """A fitted GP: hyperparameters plus the cached training factorisation."""

    hyperparams: Hyperparams
    X_train: np.ndarray  # standardised
    y_train: np.ndarray
    chol: np.ndarray
    weights: np.ndarray  # (K + noise I)^-1 y
    scaler: Scaler
    jitter: float
    log_likelihood: float = float("nan")

    @classmethod
    def from_data(cls, data: Dataset, hp: Hyperparams, scaler: Scaler | None = None) -> "GPModel":
        scaler = scaler or Scaler.fit(data.X)
        Xs = scaler.transform(data.X)
        K = kernel(Xs, Xs, hp)
        L, jitter = _factor(K, hp.noise_var)
        w = cho_solve((L, True), data.y, check_finite=False)
        ll = -0.5 * data.y @ w - np.log(np.diag(L)).sum() - 0.5 * data.y.size * np.log(2 * np.pi)
        return cls(hp, Xs, data.y.copy(), L, w, scaler, jitter, float(ll))

    @property
    def n_train(self) -> int:
        return self.y_train.size


def fit(
    data: Dataset,
    restarts: int = 5,
    seed: int = 0,
    noise_var: float | None = 0.0,
) -> GPModel:
    """Fit hyperparameters by maximum marginal likelihood.

    A float ``noise_var`` is held fixed (0 gives noise-free interpolation up
    to jitter).  ``None`` treats the noise variance as a third hyperparameter
    inside ``NOISE_BOUNDS``.  The first start is a data-driven guess, the
    remaining ``restarts - 1`` are drawn from ``seed``.
    """
    if len(data) < 2:
        raise ValueError("need at least two training points")
    if np.ptp(data.y) == 0:
        raise DegenerateTargets("all training targets are identical")
    scaler = Scaler.fit(data.X)
    Xs = scaler.transform(data.X)
    y = data.y
    # collapsing replicated rows is exact only with a positive noise term
    groups = _Groups.of(Xs, y) if noise_var is None or noise_var > 0 else None
    if groups is not None:
        d2 = cdist(groups.X, groups.X, "sqeuclidean")
    else:
        d2 = cdist(Xs, Xs, "sqeuclidean")
    bounds = [tuple(np.log(BOUNDS))] * 2
    if noise_var is None:
        bounds.append(tuple(np.log(NOISE_BOUNDS)))
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])

    def objective(theta):
        try:
            if groups is None:
                v, g = log_marginal_likelihood(theta, Xs, y, noise_var, eval_gradient=True, sqdist=d2)
            else:
                v, g = _lml_grouped(theta, groups, noise_var, d2)
        except FactorizationFailure:
            return 1e25, np.zeros(theta.size)
        return -v, -g

    rng = np.random.default_rng(seed)
    msq = max(float(np.mean(y**2)), 1e-12)
    guess = [np.log(msq), 0.0] + ([np.log(0.1 * msq)] if noise_var is None else [])
    starts = [np.clip(guess, lo, hi)]
    starts += [rng.uniform(lo, hi) for _ in range(max(restarts, 1) - 1)]
    best = None
    for x0 in starts:
        res = minimize(objective, x0, jac=True, method="L-BFGS-B", bounds=bounds)
        if best is None or res.fun < best.fun:
            best = res
    if best.fun >= 1e25:
        raise FactorizationFailure("no start produced a factorisable kernel matrix")
    sf2, ell = np.exp(best.x[:2])
    sn2 = float(np.exp(best.x[2])) if noise_var is None else noise_var
    hp = Hyperparams(float(sf2), float(ell), sn2)
    log.debug("GP fit: %s nll=%.6g", hp, best.fun)
    return GPModel.from_data(data, hp, scaler)


def posterior(
    model: GPModel,
    X_star,
    full_cov: bool = False,
    return_var: bool = True,
    counter: Counter | None = None,
):
    """Posterior mean and variance (or full covariance) at raw inputs ``X_star``.

    Returns ``(mu, var)``, ``(mu, var, cov)`` when ``full_cov``, or just
    ``mu`` when ``return_var`` is false.
    """
    X_star = np.atleast_2d(np.asarray(X_star, dtype=float))
    if X_star.shape[1] != model.X_train.shape[1]:
        raise DimMismatch(f"X_star has {X_star.shape[1]} columns, model expects {model.X_train.shape[1]}")
    Xs = model.scaler.transform(X_star)
    Ks = kernel(model.X_train, Xs, model.hyperparams)  # N x t
    mu = Ks.T @ model.weights
    if counter is not None:
        counter["kernel_evals"] += Ks.size
        counter["mean_flops"] += Ks.size
    if not return_var and not full_cov:
        return mu
    v = solve_triangular(model.chol, Ks, lower=True, check_finite=False)
    sf2 = model.hyperparams.signal_var
    var = np.clip(sf2 - np.sum(v * v, axis=0), 0.0, None)
    if full_cov:
        cov = kernel(Xs, Xs, model.hyperparams) - v.T @ v
        return mu, var, cov
    return mu, var


def model_to_dict(model: GPModel) -> dict:
    hp = model.hyperparams
    return {
        "hyperparams": {"signal_var": hp.signal_var, "length_scale": hp.length_scale, "noise_var": hp.noise_var},
        "scaler": {"mean": model.scaler.mean.tolist(), "std": model.scaler.std.tolist()},
        "X_train": model.X_train.tolist(),
        "y_train": model.y_train.tolist(),
        "weights": model.weights.tolist(),
        "jitter": model.jitter,
        "log_likelihood": model.log_likelihood,
    }


def model_from_dict(d: dict) -> GPModel:
    """Rebuild a model; the Cholesky factor is recomputed with the stored jitter."""
    hp = Hyperparams(**d["hyperparams"])
    scaler = Scaler(np.array(d["scaler"]["mean"]), np.array(d["scaler"]["std"]))
    Xs = np.array(d["X_train"], dtype=float)
    y = np.array(d["y_train"], dtype=float)
    K = kernel(Xs, Xs, hp)
    jitter = float(d["jitter"])
    L = cholesky(K + (hp.noise_var + jitter) * np.eye(y.size), lower=True, check_finite=False)
    return GPModel(hp, Xs, y, L, np.array(d["weights"], dtype=float), scaler, jitter, float(d["log_likelihood"]))
