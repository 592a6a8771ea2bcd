"""Classifier self-optimization: resistance and calibration.

Resistance accumulates, per base class and component, the positively-similar
novel prototype directions; a transient pre-inference view then shifts the
stored base prototypes away from that direction by a seeded random amount.
The stored bank is never modified by the view.

Calibration pseudo-labels unlabeled pool features by cosine threshold and
blends their average into the prototypes (or, for mixture banks, reruns EM
over the recognized pool with the mean anchored to the training-set prior).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, ZeroVectorError
from .gmm import (
    VARIANCE_FLOOR,
    GmmBank,
    GmmParams,
    _log_resp,
    overall_mean,
)
from .prototypes import DualPrototype, PrototypeBank
from .vectors import DualFeature, cosine

BASE_GROUP = "base"
INC_GROUP = "inc"


@dataclass(frozen=True)
class ResistConfig:
    """Random-amplitude bounds for the two resistance variants."""

    gamma_max: float = 0.3        # prototype shift amplitude, Uniform(0, gamma_max]
    gamma_prime_max: float = 1.0  # mixture weight decay factor, Uniform(0, gamma_prime_max]
    seed: int = 0

    def __post_init__(self):
        if self.gamma_max <= 0:
            raise ConfigError("gamma_max must be > 0")
        if not 0 < self.gamma_prime_max <= 1:
            raise ConfigError("gamma_prime_max must be in (0, 1]")


@dataclass(frozen=True)
class CalibConfig:
    """Pseudo-labeling thresholds and per-group calibration strengths."""

    r: float = 0.8
    max_pool: int = 40  # at most this many recognized features per prototype
    alpha: Mapping[str, float] = field(
        default_factory=lambda: {BASE_GROUP: 0.1, INC_GROUP: 0.6}
    )
    alpha_prime: Mapping[str, float] = field(
        default_factory=lambda: {BASE_GROUP: 20.0, INC_GROUP: 10.0}
    )

    def __post_init__(self):
        if not -1 < self.r < 1:
            raise ConfigError("threshold r must be in (-1, 1)")
        if self.max_pool < 1:
            raise ConfigError("max_pool must be >= 1")
        for group in (BASE_GROUP, INC_GROUP):
            a = self.alpha[group]
            if not 0 <= a <= 1:
                raise ConfigError(f"alpha[{group}] must be in [0, 1]")
            if self.alpha_prime[group] < 0:
                raise ConfigError(f"alpha_prime[{group}] must be >= 0")


def _group(bank, class_id: int) -> str:
    return BASE_GROUP if bank.session_of[class_id] == 0 else INC_GROUP


def _uniform_pos(rng: np.random.Generator, upper: float) -> float:
    """Draw from Uniform(0, upper] (excludes exact zero)."""
    return upper * (1.0 - rng.random())


# ---------------------------------------------------------------------------
# Prototype resistance


def accumulate_resistance(
    bank: PrototypeBank, novel_prototypes: Iterable[DualPrototype]
):
    """Fold one session's novel prototypes into the base-class accumulators.

    For each base class c and component j the accumulator gains
    sum_i max(cos(P_cj, P_ij), 0) * unit(P_ij) over the novel classes i of
    the current session.  Stored prototypes themselves stay at their initial
    state.
    """
    novel = sorted(novel_prototypes, key=lambda p: p.class_id)
    for c in sorted(bank.base_classes):
        for j in (1, 2):
            p = bank.get(c).component(j)
            delta = np.zeros(bank.dim, dtype=np.float64)
            for proto in novel:
                q = proto.component(j)
                s = cosine(p, q)
                if s > 0:
                    delta += s * (q / np.linalg.norm(q))
            if delta.any():
                bank.add_resistance(c, j, delta)


def shift_prototype(p: np.ndarray, delta: np.ndarray, gamma: float) -> np.ndarray:
    """One resisted component: p - gamma * delta / ||delta||."""
    norm = float(np.linalg.norm(delta))
    if norm == 0.0:
        return np.array(p, dtype=np.float64)
    return p - gamma * (delta / norm)


def resist_for_inference(bank: PrototypeBank, cfg: ResistConfig) -> PrototypeBank:
    """Transient view with base prototypes shifted against their accumulators.

    The shift amplitude gamma is drawn per (class, component) from
    Uniform(0, gamma_max] under cfg.seed, in ascending (class, component)
    order over base classes with a nonzero accumulator.  Non-base prototypes
    and the stored bank are untouched.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed]))
    view = bank.copy()
    for c in sorted(bank.base_classes):
        proto = bank.get(c)
        shifted = {}
        for j in (1, 2):
            delta = bank.resistance[(c, j)]
            if not delta.any():
                continue
            gamma = _uniform_pos(rng, cfg.gamma_max)
            shifted[f"p{j}"] = shift_prototype(proto.component(j), delta, gamma)
        if shifted:
            for name, vec in shifted.items():
                if not vec.any():
                    raise ZeroVectorError(
                        f"class {c}: resisted prototype collapsed to zero"
                    )
            view.replace_prototype(c, **shifted)
    return view


# ---------------------------------------------------------------------------
# Prototype calibration


def select_pool(
    features: np.ndarray, reference: np.ndarray, r: float, max_pool: int
) -> np.ndarray:
    """Indices of the at-most-``max_pool`` rows with cosine(row, reference) > r,
    picked most-similar-first (stable toward lower row index on ties)."""
    norms = np.linalg.norm(features, axis=1)
    ref_norm = float(np.linalg.norm(reference))
    if ref_norm == 0.0:
        raise ZeroVectorError("pool selection against a zero reference")
    valid = norms > 0
    sims = np.full(features.shape[0], -np.inf)
    sims[valid] = features[valid] @ reference / (norms[valid] * ref_norm)
    qualifying = np.flatnonzero(sims > r)
    if qualifying.size == 0:
        return qualifying
    order = qualifying[np.argsort(-sims[qualifying], kind="stable")]
    return order[:max_pool]


def calibrate_prototypes(
    bank: PrototypeBank, pool: Sequence[DualFeature], cfg: CalibConfig
):
    """Blend recognized unlabeled pool features into every prototype.

    Per (class, component): take the channel-matched pool features (original
    channel for component 1, transformed for component 2) with similarity
    above cfg.r, capped at cfg.max_pool most-similar, and move the prototype
    to (1-alpha) * P + alpha * avg(pool).  Empty selections and alpha == 0
    leave the prototype bit-identical.
    """
    if not pool:
        return bank
    channels = {
        1: np.stack([f.original for f in pool]),
        2: np.stack([f.transformed for f in pool]),
    }
    for c in bank.class_ids:
        alpha = cfg.alpha[_group(bank, c)]
        if alpha == 0.0:
            continue
        proto = bank.get(c)
        updates = {}
        for j in (1, 2):
            chosen = select_pool(channels[j], proto.component(j), cfg.r, cfg.max_pool)
            if chosen.size == 0:
                continue
            avg = channels[j][chosen].mean(axis=0)
            updates[f"p{j}"] = (1.0 - alpha) * proto.component(j) + alpha * avg
        if updates:
            bank.replace_prototype(c, **updates)
    return bank


def absorb_labeled(
    bank: PrototypeBank, class_id: int, samples: Sequence[DualFeature]
):
    """Fold trusted labeled samples of a known class into its prototype.

    The blend weight is n_new / (n_old + n_new) per component, i.e. the exact
    running-mean update; source_count grows by n_new.
    """
    proto = bank.get(class_id)
    n_new = len(samples)
    if n_new == 0:
        return bank
    n_old = proto.source_count
    alpha = n_new / (n_old + n_new)
    avg1 = np.mean([s.original for s in samples], axis=0)
    avg2 = np.mean([s.transformed for s in samples], axis=0)
    bank.replace_prototype(
        class_id,
        p1=(1.0 - alpha) * proto.p1 + alpha * avg1,
        p2=(1.0 - alpha) * proto.p2 + alpha * avg2,
        source_count=n_old + n_new,
    )
    return bank


# ---------------------------------------------------------------------------
# Mixture-bank variants


def resist_gmm(
    bank: GmmBank,
    novel_class_ids: Iterable[int],
    cfg: ResistConfig,
    weighting: str = "pi",
):
    """Decay, for every old class, the weight of its component most similar
    to each novel class's overall mean.

    For old entry (c, j) and novel class i (ascending): the component
    k = argmax_m cos(mu^m, mean_i) has its weight multiplied by
    gamma' * (1 - cos(mu^k, mean_i)) with gamma' ~ Uniform(0, gamma_prime_max]
    per decay event.  Weights are renormalized to the simplex afterwards; a
    fully annihilated weight vector falls back to uniform.
    """
    novel = sorted(set(novel_class_ids))
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed]))
    novel_means = {
        (i, j): overall_mean(bank.get(i, j), weighting) for i in novel for j in (1, 2)
    }
    for c in bank.class_ids:
        if c in novel:
            continue
        for j in (1, 2):
            entry = bank.get(c, j)
            for i in novel:
                ref = novel_means[(i, j)]
                if not ref.any():
                    continue
                sims = np.array(
                    [cosine(entry.means[m], ref) for m in range(entry.n_components)]
                )
                k = int(np.argmax(sims))
                gamma_p = _uniform_pos(rng, cfg.gamma_prime_max)
                entry.weights[k] *= gamma_p * (1.0 - sims[k])
            total = entry.weights.sum()
            if total > 0:
                entry.weights = entry.weights / total
            else:
                entry.weights = np.full(entry.n_components, 1.0 / entry.n_components)
    return bank


def calibrate_gmm(
    entry: GmmParams,
    pool,
    alpha_prime: float,
    tol: float = 1e-6,
    max_iter: int = 50,
) -> GmmParams:
    """MAP-EM over a recognized pool with the mean anchored to the prior.

    Mean update: mu^m <- (sum_n r_nm x_n + alpha' * mean_prior)
                         / (sum_n r_nm + alpha').
    Weights and variances follow the standard M-step over the pool (variances
    floored).  The mean prior itself is never recomputed from the pool.  An
    empty pool is a no-op.
    """
    X = np.asarray(pool, dtype=np.float64)
    if X.size == 0:
        return entry
    if X.ndim != 2:
        raise ConfigError("calibration pool must be a (n, d) array")
    n = X.shape[0]
    params = entry.copy()
    prior = params.mean_prior
    prev_ll = -np.inf
    for _ in range(max_iter):
        logr, ll = _log_resp(params, X)
        if abs(ll - prev_ll) < tol:
            break
        prev_ll = ll
        resp = np.exp(logr)
        nk = resp.sum(axis=0)
        params.weights = nk / n
        for k in range(params.n_components):
            denom = nk[k] + alpha_prime
            if denom < 1e-300:
                continue
            mu = (resp[:, k] @ X + alpha_prime * prior) / denom
            params.means[k] = mu
            if nk[k] >= 1e-300:
                params.variances[k] = np.maximum(
                    resp[:, k] @ ((X - mu) ** 2) / nk[k], VARIANCE_FLOOR
                )
    return params
