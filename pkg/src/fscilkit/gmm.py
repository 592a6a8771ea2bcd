"""Diagonal-covariance Gaussian mixtures fitted by EM, one pair per class.

Each class keeps two mixtures (component j=1 over the original channel,
j=2 over the transformed channel).  Fits are initialized with k-means++ and
one hard M-step, then iterated to convergence; every fit also records the
overall sample mean as the mean prior used later by MAP calibration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    DuplicateClassError,
    EmptyBankError,
    EmptySampleSetError,
    ZeroVectorError,
)
from .vectors import DualFeature, cosine_set

VARIANCE_FLOOR = 1e-6


@dataclass(eq=False)
class GmmParams:
    """Parameters of one diagonal-covariance mixture.

    weights: (M,) on the probability simplex; means: (M, d);
    variances: (M, d) with every entry >= VARIANCE_FLOOR;
    mean_prior: (d,) overall mean of the fitting samples.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    mean_prior: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        self.mean_prior = np.asarray(self.mean_prior, dtype=np.float64)
        if self.means.shape != self.variances.shape or self.means.ndim != 2:
            raise DimensionMismatchError("means and variances must both be (M, d)")
        if self.weights.shape != (self.means.shape[0],):
            raise DimensionMismatchError("weights length must match component count")

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def copy(self) -> "GmmParams":
        return GmmParams(
            self.weights.copy(),
            self.means.copy(),
            self.variances.copy(),
            self.mean_prior.copy(),
        )


def _log_gauss(X: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """(n, M) log densities of diagonal Gaussians."""
    # log N(x | mu, sigma^2) = -.5 * sum_l [log(2 pi sigma_l^2) + (x_l-mu_l)^2/sigma_l^2]
    const = -0.5 * np.sum(np.log(2.0 * np.pi * variances), axis=1)  # (M,)
    diff = X[:, None, :] - means[None, :, :]  # (n, M, d)
    quad = -0.5 * np.sum(diff * diff / variances[None, :, :], axis=2)
    return const[None, :] + quad


def _log_resp(params: GmmParams, X: np.ndarray):
    """Per-sample log responsibilities and total data log-likelihood."""
    with np.errstate(divide="ignore"):
        log_w = np.log(params.weights)
    joint = log_w[None, :] + _log_gauss(X, params.means, params.variances)
    norm = np.logaddexp.reduce(joint, axis=1)
    return joint - norm[:, None], float(np.sum(norm))


def log_likelihood(params: GmmParams, X: np.ndarray) -> float:
    _, ll = _log_resp(params, np.asarray(X, dtype=np.float64))
    return ll


def _kmeans_pp_centers(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [X[int(rng.integers(n))]]
    for _ in range(1, k):
        d2 = np.min(
            [np.sum((X - c) ** 2, axis=1) for c in centers], axis=0
        )
        total = float(d2.sum())
        if total == 0.0:
            centers.append(X[int(rng.integers(n))])
        else:
            centers.append(X[int(rng.choice(n, p=d2 / total))])
    return np.stack(centers)


def fit_gmm(
    samples,
    n_components: int,
    seed: int,
    tol: float = 1e-6,
    max_iter: int = 200,
    loglik_trace: list | None = None,
) -> GmmParams:
    """Fit a diagonal-covariance mixture by EM.

    Initialization: k-means++ over the samples (seeded), one hard M-step, then
    EM iterations until the data log-likelihood improves by less than ``tol``
    or ``max_iter`` is reached.  The effective component count is reduced to
    the number of distinct samples when smaller.  Deterministic under seed.

    ``loglik_trace``, if given, receives the per-iteration log-likelihoods.
    """
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptySampleSetError("fit requires a nonempty (n, d) sample array")
    n, d = X.shape
    if n_components < 1:
        raise EmptySampleSetError("component count must be >= 1")
    m = min(n_components, n)
    if m > 1:
        m = min(m, np.unique(X, axis=0).shape[0])

    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    if m == 1:
        centers = X.mean(axis=0, keepdims=True)
    else:
        centers = _kmeans_pp_centers(X, m, rng)
    assign = np.argmin(
        np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2), axis=1
    )
    weights = np.zeros(m)
    means = np.zeros((m, d))
    variances = np.ones((m, d))
    global_var = np.maximum(X.var(axis=0), VARIANCE_FLOOR)
    for k in range(m):
        mask = assign == k
        count = int(mask.sum())
        if count == 0:
            means[k] = centers[k]
            variances[k] = global_var
            continue
        weights[k] = count
        means[k] = X[mask].mean(axis=0)
        variances[k] = np.maximum(
            ((X[mask] - means[k]) ** 2).mean(axis=0), VARIANCE_FLOOR
        )
    if weights.sum() == 0:
        weights[:] = 1.0
    weights = weights / weights.sum()

    params = GmmParams(weights, means, variances, X.mean(axis=0))
    prev_ll = -np.inf
    for _ in range(max_iter):
        logr, ll = _log_resp(params, X)
        if loglik_trace is not None:
            loglik_trace.append(ll)
        if abs(ll - prev_ll) < tol:
            break
        prev_ll = ll
        resp = np.exp(logr)
        nk = resp.sum(axis=0)  # (m,)
        params.weights = nk / n
        for k in range(m):
            if nk[k] < 1e-300:
                continue  # dead component keeps its parameters, weight ~ 0
            mu = resp[:, k] @ X / nk[k]
            params.means[k] = mu
            params.variances[k] = np.maximum(
                resp[:, k] @ ((X - mu) ** 2) / nk[k], VARIANCE_FLOOR
            )
    return params


def overall_mean(params: GmmParams, weighting: str = "pi") -> np.ndarray:
    """Reduce a mixture to one representative vector.

    ``pi``:    sum_m pi^m * mu^m  (the mixture mean, default).
    ``sigma``: sum_m Sigma^m (.) mu^m, the entrywise variance-weighted form;
               selectable for fidelity experiments against the pi form.
    """
    if weighting == "pi":
        return params.weights @ params.means
    if weighting == "sigma":
        return np.sum(params.variances * params.means, axis=0)
    raise ValueError(f"unknown weighting {weighting!r}")


class GmmBank:
    """Per-(class, component) mixtures plus class-to-session bookkeeping."""

    def __init__(self, dim: int):
        self.dim = dim
        self.entries: dict[tuple[int, int], GmmParams] = {}
        self.session_of: dict[int, int] = {}

    @property
    def class_ids(self) -> list[int]:
        return sorted(self.session_of)

    def __len__(self) -> int:
        return len(self.session_of)

    def __contains__(self, class_id: int) -> bool:
        return class_id in self.session_of

    def get(self, class_id: int, j: int) -> GmmParams:
        return self.entries[(class_id, j)]

    def add_class(
        self, class_id: int, params1: GmmParams, params2: GmmParams, session: int
    ):
        if class_id in self.session_of:
            raise DuplicateClassError(f"class {class_id} already in bank")
        for p in (params1, params2):
            if p.dim != self.dim:
                raise DimensionMismatchError(
                    f"mixture dim {p.dim} != bank dim {self.dim}"
                )
        self.entries[(class_id, 1)] = params1
        self.entries[(class_id, 2)] = params2
        self.session_of[class_id] = session

    def mean_pair(self, class_id: int, weighting: str = "pi") -> DualFeature:
        return DualFeature(
            overall_mean(self.entries[(class_id, 1)], weighting),
            overall_mean(self.entries[(class_id, 2)], weighting),
        )


def gmm_classify(x: DualFeature, bank: GmmBank, weighting: str = "pi") -> int:
    """Argmax over classes of the set-cosine against each mixture mean pair.

    Ties break toward the lowest class id.
    """
    if len(bank) == 0:
        raise EmptyBankError("cannot classify against an empty bank")
    best_id = -1
    best_score = -np.inf
    for class_id in bank.class_ids:
        score = cosine_set(x, bank.mean_pair(class_id, weighting))
        if score > best_score:
            best_score = score
            best_id = class_id
    return best_id
