"""Minimum Covariance Determinant fit and Mahalanobis scoring.

FAST-MCD after Rousseeuw and Van Driessen (1999): many random elemental
starts, two concentration steps (C-steps) each, then full convergence for the
few best candidates.  Graphlet count vectors are often rank deficient, so two
safeguards sit on top of the textbook procedure:

* coordinates that are constant over the whole fit set are removed from the
  search and re-enter the model with a small ridge variance, so any deviation
  from the constant still scores;
* if some h-subset covariance turns out singular, the search is rerun with a
  ridge ``lam * I`` added to every covariance.  C-steps then minimise
  ``det(S_H + lam * I)``, which is still monotone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

log = logging.getLogger(__name__)


class InsufficientDataError(ValueError):
    pass


class DegenerateDataError(ValueError):
    pass


@dataclass
class RobustGaussian:
    mean: np.ndarray
    covariance: np.ndarray
    precision: np.ndarray
    support_size: int
    n_fit: int
    support: np.ndarray | None = None
    kept: np.ndarray | None = None
    ridge: float = 0.0
    logdet_trace: list[float] = field(default_factory=list)

    @classmethod
    def from_moments(cls, mean, covariance) -> "RobustGaussian":
        mean = np.asarray(mean, dtype=float)
        covariance = np.asarray(covariance, dtype=float)
        return cls(mean, covariance, np.linalg.inv(covariance), 0, 0)

    @property
    def dim(self) -> int:
        return len(self.mean)


@dataclass(frozen=True)
class AnomalyScore:
    window_index: int
    score: float


def mahalanobis(model: RobustGaussian, x) -> float | np.ndarray:
    """Squared Mahalanobis distance ``(x - mean)' inv(cov) (x - mean)``; rows of a 2-D ``x`` are scored separately."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.dim:
        raise ValueError(f"dimension mismatch: model has {model.dim}, got {x.shape[-1]}")
    diff = x - model.mean
    q = np.einsum("...i,ij,...j->...", diff, model.precision, diff)
    return np.maximum(q, 0.0) if q.ndim else max(float(q), 0.0)


def _moments(Y: np.ndarray, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sub = Y[idx]
    mu = sub.mean(axis=0)
    c = sub - mu
    return mu, c.T @ c / len(sub)


def _batched_moments(Y: np.ndarray, subsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sub = Y[subsets]  # (k, h, p)
    mu = sub.mean(axis=1)
    c = sub - mu[:, None, :]
    return mu, np.matmul(c.transpose(0, 2, 1), c) / subsets.shape[1]


def _sq_dist(Y: np.ndarray, mu: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """Squared distances of every row of Y under each (mu, L L') in the batch: (k, n)."""
    out = np.empty((len(mu), len(Y)))
    for s in range(0, len(mu), 64):
        inv_l = np.linalg.inv(chol[s : s + 64])  # (k, p, p)
        z = Y @ inv_l.transpose(0, 2, 1) - np.einsum("kpq,kq->kp", inv_l, mu[s : s + 64])[:, None, :]
        out[s : s + 64] = np.einsum("knp,knp->kn", z, z)
    return out


class _Singular(Exception):
    pass


def _cholesky(cov: np.ndarray, lam: float) -> tuple[np.ndarray, np.ndarray]:
    p = cov.shape[-1]
    reg = cov + lam * np.eye(p)
    try:
        chol = np.linalg.cholesky(reg)
    except np.linalg.LinAlgError as exc:
        raise _Singular from exc
    diag = np.diagonal(chol, axis1=-2, axis2=-1)
    scale = np.diagonal(reg, axis1=-2, axis2=-1).mean(axis=-1)
    if lam == 0.0 and np.any(diag.min(axis=-1) ** 2 <= 1e-10 * scale):
        raise _Singular
    return chol, 2.0 * np.log(diag).sum(axis=-1)


def _smallest(d2: np.ndarray, h: int) -> np.ndarray:
    # stable sort: equal distances resolve to the lower point index
    return np.sort(np.argsort(d2, axis=-1, kind="stable")[..., :h], axis=-1)


class _Search:
    def __init__(self, Y: np.ndarray, h: int, lam: float, max_csteps: int, tol: float):
        self.Y, self.h, self.lam, self.max_csteps, self.tol = Y, h, lam, max_csteps, tol

    def starts(self, perms: np.ndarray) -> np.ndarray:
        """Elemental starts: first p+1 points of each permutation, grown while singular.  Returns their h-subsets."""
        n, p = self.Y.shape
        size = min(p + 1, self.h)
        mu, cov = _batched_moments(self.Y, perms[:, :size])
        try:
            chol, _ = _cholesky(cov, self.lam)
        except _Singular:
            mu, chol = map(np.array, zip(*(self._grown(perm) for perm in perms)))
        return _smallest(_sq_dist(self.Y, mu, chol), self.h)

    def _grown(self, perm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        size = min(self.Y.shape[1] + 1, self.h)
        while True:
            mu, cov = _moments(self.Y, perm[:size])
            try:
                return mu, _cholesky(cov, self.lam)[0]
            except _Singular:
                if size >= self.h:
                    raise
                size += 1

    def csteps(self, subsets: np.ndarray, steps: int, logdet: np.ndarray | None = None, traces=None):
        """Run up to ``steps`` C-steps on a batch of h-subsets; each lane stops once its determinant stalls."""
        mu, cov = _batched_moments(self.Y, subsets)
        chol, cur = _cholesky(cov, self.lam)
        if traces is not None:
            for t, v in zip(traces, cur):
                if not t:
                    t.append(float(v))
        active = np.ones(len(subsets), dtype=bool)
        for _ in range(steps):
            if not active.any():
                break
            a = np.flatnonzero(active)
            new = _smallest(_sq_dist(self.Y, mu[a], chol[a]), self.h)
            nmu, ncov = _batched_moments(self.Y, new)
            nchol, nld = _cholesky(ncov, self.lam)
            rise = nld - cur[a]
            if np.any(rise > self.tol * (1.0 + np.abs(cur[a]))):
                raise AssertionError(f"C-step increased log det by {rise.max():.3g}")
            if traces is not None:
                for j, i in enumerate(a):
                    traces[i].append(float(nld[j]))
            same = np.all(new == subsets[a], axis=1)
            stalled = same | (nld >= cur[a])
            subsets[a], mu[a], chol[a], cur[a] = new, nmu, nchol, nld
            active[a[stalled]] = False
        return subsets, mu, chol, cur


def fit_mcd(
    data,
    h: int | None = None,
    seed: int | None = 0,
    n_subsets: int = 500,
    n_best: int = 10,
    max_csteps: int = 100,
    ridge: float = 1e-6,
    consistency: bool = True,
    reweight_quantile: float = 0.975,
) -> RobustGaussian:
    """Robust Gaussian covering the ``h`` points whose covariance has the smallest determinant.

    ``h`` defaults to ``ceil(0.85 n)``.  When ``h < n`` the raw estimate is
    rescaled by ``median(d^2) / chi2_p.median`` and then reweighted: mean and
    covariance are recomputed from all points whose squared distance is
    within the ``reweight_quantile`` of chi2_p.  With ``h == n`` the result is
    exactly the classical maximum-likelihood estimate.
    """
    X = np.asarray(data, dtype=float)
    if X.ndim != 2:
        raise ValueError("data must be a 2-D array")
    n, d = X.shape
    if n < d + 1:
        raise InsufficientDataError(f"need at least {d + 1} points in dimension {d}, got {n}")
    if h is None:
        h = int(np.ceil(0.85 * n))
    if not (n / 2 <= h <= n):
        raise ValueError(f"h={h} outside [{n / 2}, {n}]")

    var = X.var(axis=0)
    kept = var > 0
    if not kept.any():
        raise DegenerateDataError("all points identical")
    Y = X[:, kept]
    p = Y.shape[1]
    lam0 = ridge * var[kept].sum() / p
    rng = np.random.default_rng(seed)
    perms = np.array([rng.permutation(n) for _ in range(n_subsets)])

    lam = 0.0 if h > p and not _exact_fit_possible(Y, h) else lam0
    while True:
        try:
            best = _mcd_search(Y, h, lam, perms, n_best, max_csteps)
            break
        except _Singular:
            if lam > 0:
                raise
            log.debug("singular h-subset covariance; refitting with ridge %.3g", lam0)
            lam = lam0
    support_idx, mu, cov, trace = best

    if h < n:
        if consistency:
            cov = cov * _consistency_factor(Y, mu, cov, lam)
        # reweighting: refit on every point inside the 97.5% tolerance ellipsoid
        chol = np.linalg.cholesky(cov + lam * np.eye(p))
        d2 = _sq_dist(Y, mu[None], chol[None])[0]
        inside = np.flatnonzero(d2 <= stats.chi2.ppf(reweight_quantile, p))
        if len(inside) > p:
            support_idx = inside
            mu, cov = _moments(Y, inside)

    full_mean = X.mean(axis=0)  # constant coordinates keep their value
    full_mean[kept] = mu
    block = cov + lam * np.eye(p)
    eig = np.linalg.eigvalsh(block)
    lam_final = ridge * np.trace(block) / p
    if eig[0] <= 1e-10 * eig[-1]:
        block = block + lam_final * np.eye(p)
    cov_full = np.diag(np.full(d, lam_final))
    cov_full[np.ix_(kept, kept)] = block
    precision = np.diag(np.full(d, 1.0 / lam_final))
    precision[np.ix_(kept, kept)] = np.linalg.inv(block)
    support = np.zeros(n, dtype=bool)
    support[support_idx] = True
    return RobustGaussian(full_mean, cov_full, precision, h, n, support, kept, lam, trace)


def _exact_fit_possible(Y: np.ndarray, h: int) -> bool:
    """True when some coordinate takes one value on at least h points, so an h-subset is singular."""
    for col in Y.T:
        _, counts = np.unique(col, return_counts=True)
        if counts.max() >= h:
            return True
    return False


def _consistency_factor(Y, mu, cov, lam) -> float:
    p = Y.shape[1]
    chol = np.linalg.cholesky(cov + lam * np.eye(p))
    d2 = _sq_dist(Y, mu[None], chol[None])[0]
    factor = np.median(d2) / stats.chi2.ppf(0.5, p)
    return factor if factor > 0 else 1.0


def _mcd_search(Y, h, lam, perms, n_best, max_csteps):
    search = _Search(Y, h, lam, max_csteps, tol=1e-10)
    subsets = search.starts(perms)
    traces: list[list[float]] = [[] for _ in range(len(subsets))]
    subsets, mu, chol, cur = search.csteps(subsets, 2, traces=traces)
    # stable ordering: equal determinants keep the lower subset index
    top = np.argsort(cur, kind="stable")[:n_best]
    sub_traces = [traces[i] for i in top]
    subsets, mu, chol, cur = search.csteps(subsets[top].copy(), max_csteps, traces=sub_traces)
    # dedupe identical converged subsets is unnecessary; argmin picks the first
    j = int(np.argmin(cur))
    idx = subsets[j]
    m, cov = _moments(Y, idx)
    return idx, m, cov, sub_traces[j]


class StreamingDetector:
    """Scores each new vector against the current fit, then refits including it."""

    def __init__(self, train_count: int = 150, h_frac: float = 0.85, seed: int | None = 0, **mcd_kwargs):
        if not 0.5 < h_frac <= 1:
            raise ValueError("h_frac must be in (0.5, 1]")
        self.train_count = train_count
        self.h_frac = h_frac
        self.seed = seed
        self.mcd_kwargs = mcd_kwargs
        self.data: list[np.ndarray] = []
        self.model: RobustGaussian | None = None
        self.initial_model: RobustGaussian | None = None

    def _refit(self) -> None:
        n = len(self.data)
        h = min(n, int(np.ceil(self.h_frac * n)))
        self.model = fit_mcd(np.array(self.data), h=h, seed=self.seed, **self.mcd_kwargs)

    def update(self, x) -> float | None:
        x = np.asarray(x, dtype=float)
        score = None
        if self.model is not None:
            score = float(mahalanobis(self.model, x))
        self.data.append(x)
        if len(self.data) >= self.train_count:
            self._refit()
            if self.initial_model is None:
                self.initial_model = self.model
        return score


def streaming_detect(
    vectors: Iterable[Sequence[float]],
    train_count: int = 150,
    h_frac: float = 0.85,
    seed: int | None = 0,
    window_indices: Sequence[int] | None = None,
    **mcd_kwargs,
) -> list[AnomalyScore]:
    """Fit on the first ``train_count`` vectors, then score-and-refit each later vector in order."""
    det = StreamingDetector(train_count, h_frac, seed, **mcd_kwargs)
    out = []
    for i, x in enumerate(vectors):
        s = det.update(x)
        if s is not None:
            out.append(AnomalyScore(window_indices[i] if window_indices is not None else i, s))
    if det.model is None:
        log.warning("stream shorter than train_count=%d; no scores emitted", train_count)
    return out
