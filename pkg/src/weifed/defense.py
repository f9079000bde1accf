"""WeiDetect: score client models on server-held data, fit a Weibull, keep the top T.

Round flow on the server:

    scores = validate_models(arch, models, aux)       # macro F1 per client
    fit = fit_weibull(scores.f1, floc)                 # 2-parameter MLE
    sel = weibull_filter(...)                          # rank by CDF, keep T
    new_global = aggregate_selected(models, sel)       # plain mean of survivors
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .aggregation import fedavg
from .data import AuxiliaryDataset
from .metrics import macro_f1

CLAMP = 1e-6
BETA_BRACKET = (1e-3, 1e3)
BETA_TOL = 1e-10


@dataclass
class ValidationScores:
    client_ids: list[int]
    f1: np.ndarray
    round: int = 0


def validate_models(arch, models, aux: AuxiliaryDataset | None, client_ids=None, round_=0):
    """Macro F1 of every model on the auxiliary set."""
    if aux is None or len(aux) == 0:
        raise ValueError("auxiliary dataset is empty; WeiDetect cannot score models")
    ids = list(range(len(models))) if client_ids is None else [int(i) for i in client_ids]
    if len(ids) != len(models):
        raise ValueError("one client id per model required")
    d = aux.data
    f1 = np.array([macro_f1(d.labels, nn.predict(arch, m, d.features), d.n_classes) for m in models])
    return ValidationScores(ids, f1, round_)


@dataclass
class WeibullFit:
    shape: float
    scale: float
    floc: float = 0.0
    converged: bool = True
    iterations: int = 0
    cdf_values: np.ndarray | None = None

    def cdf(self, x):
        return weibull_cdf(x, self)

    def log_likelihood(self, x) -> float:
        return weibull_loglik(np.asarray(x, dtype=np.float64) - self.floc, self.shape, self.scale)


def weibull_loglik(x, shape: float, scale: float) -> float:
    """Sum of log densities of (already shifted) positive samples ``x``."""
    x = np.asarray(x, dtype=np.float64)
    z = x / scale
    return float(
        x.size * (math.log(shape) - math.log(scale))
        + (shape - 1) * np.log(z).sum()
        - np.power(z, shape).sum()
    )


def _profile_equation(log_x: np.ndarray, mean_log: float):
    """g(b) = sum x^b ln x / sum x^b - 1/b - mean ln x, and its derivative.

    Uses weights exp(b (ln x - max ln x)) so large b never overflows.
    """
    top = log_x.max()
    shifted = log_x - top

    def g(b):
        w = np.exp(b * shifted)
        sw = w.sum()
        m1 = (w * log_x).sum() / sw
        m2 = (w * log_x * log_x).sum() / sw
        return m1 - 1.0 / b - mean_log, (m2 - m1 * m1) + 1.0 / (b * b)

    return g


def fit_weibull(scores, floc: float = 0.0) -> WeibullFit:
    """Maximum-likelihood shape and scale with a fixed location.

    Scores at or below ``floc`` are clamped to ``floc + 1e-6``. The shape
    solves the profile-likelihood equation by Newton steps, falling back to
    bisection whenever a step leaves the current bracket in [1e-3, 1e3].
    The fit is flagged ``converged=False`` (shape/scale NaN) when the scores
    are numerically constant or the root is not bracketed.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size < 3:
        raise ValueError("need at least 3 scores to fit a Weibull")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    x = np.maximum(s - floc, CLAMP)
    if x.std() < 1e-9:
        return WeibullFit(math.nan, math.nan, floc, converged=False)

    log_x = np.log(x)
    g = _profile_equation(log_x, float(log_x.mean()))
    lo, hi = BETA_BRACKET
    g_lo, _ = g(lo)
    g_hi, _ = g(hi)
    if not (g_lo < 0 < g_hi):
        return WeibullFit(math.nan, math.nan, floc, converged=False)

    b = min(max(1.2 / log_x.std(), lo), hi)
    it = 0
    converged = False
    for it in range(1, 201):
        val, slope = g(b)
        if val == 0:
            converged = True
            break
        if val < 0:
            lo = b
        else:
            hi = b
        step = b - val / slope
        new_b = step if lo < step < hi else 0.5 * (lo + hi)
        if abs(new_b - b) <= BETA_TOL:
            b = new_b
            converged = True
            break
        b = new_b
    if not converged:
        return WeibullFit(math.nan, math.nan, floc, converged=False, iterations=it)

    top = log_x.max()
    scale = math.exp(top + math.log(np.exp(b * (log_x - top)).mean()) / b)
    return WeibullFit(float(b), float(scale), floc, True, it)


def weibull_cdf(x, fit: WeibullFit):
    """1 - exp(-((x - floc) / scale) ** shape); scalar in, scalar out."""
    if not fit.converged:
        raise ValueError("CDF of a non-converged fit is undefined")
    arr = np.asarray(x, dtype=np.float64)
    if (arr < fit.floc).any():
        raise ValueError("CDF argument below the location parameter")
    out = -np.expm1(-np.power((arr - fit.floc) / fit.scale, fit.shape))
    return float(out) if out.ndim == 0 else out


def default_top_t(n: int) -> int:
    """Keep all but the largest Byzantine minority floor(n / 3)."""
    return n - n // 3


@dataclass
class SelectionResult:
    benign_ids: list[int]
    rejected_ids: list[int]
    T: int
    scores: ValidationScores | None = None
    fit: WeibullFit | None = None
    notes: list[str] = field(default_factory=list)

    def log_record(self) -> dict:
        """Flat dict for the per-round defense log."""
        rec = {
            "round": self.scores.round if self.scores else None,
            "selected": list(self.benign_ids),
            "rejected": list(self.rejected_ids),
            "T": self.T,
        }
        if self.scores is not None:
            rec["f1"] = {str(i): float(v) for i, v in zip(self.scores.client_ids, self.scores.f1)}
        if self.fit is not None:
            rec["converged"] = self.fit.converged
            rec["shape"] = None if math.isnan(self.fit.shape) else self.fit.shape
            rec["scale"] = None if math.isnan(self.fit.scale) else self.fit.scale
            if self.fit.cdf_values is not None and self.scores is not None:
                rec["cdf"] = {
                    str(i): float(v) for i, v in zip(self.scores.client_ids, self.fit.cdf_values)
                }
        return rec


def rank_clients(client_ids, f1, cdf=None) -> list[int]:
    """Best first: CDF descending, then raw score descending, then lower id."""
    key_cdf = np.zeros(len(f1)) if cdf is None else np.asarray(cdf)
    order = sorted(
        range(len(client_ids)), key=lambda i: (-key_cdf[i], -f1[i], client_ids[i])
    )
    return [client_ids[i] for i in order]


def select_by_scores(scores: ValidationScores, T: int | None = None, floc: float = 0.0):
    """Fit the Weibull to precomputed validation scores and keep the top ``T``.

    Falls back to ranking by raw score when the fit does not converge.
    """
    if T is not None and T < 1:
        raise ValueError("T must be >= 1")
    n = len(scores.client_ids)
    if n == 0:
        raise ValueError("no client scores to rank")
    T = default_top_t(n) if T is None else T
    notes = []
    if n >= 3:
        fit = fit_weibull(scores.f1, floc)
    else:
        fit = WeibullFit(math.nan, math.nan, floc, converged=False)
        notes.append("fewer than 3 clients; ranking by raw score")
    if fit.converged:
        fit.cdf_values = np.atleast_1d(weibull_cdf(np.maximum(scores.f1, floc + CLAMP), fit))
    else:
        notes.append("Weibull fit did not converge; ranking by raw score")
    ranked = rank_clients(scores.client_ids, scores.f1, fit.cdf_values)
    k = min(T, n)
    return SelectionResult(ranked[:k], ranked[k:], T, scores, fit, notes)


def weibull_filter(
    arch, models, aux, T: int | None = None, floc: float = 0.0, client_ids=None, round_=0
) -> SelectionResult:
    """Keep the ``T`` clients whose validation scores sit highest under the fitted CDF."""
    if T is not None and T < 1:
        raise ValueError("T must be >= 1")
    scores = validate_models(arch, models, aux, client_ids, round_)
    return select_by_scores(scores, T, floc)


def aggregate_selected(models, selection: SelectionResult, client_ids=None) -> np.ndarray:
    """Plain mean over the selected clients, taken in client order."""
    if not selection.benign_ids:
        raise ValueError("empty selection; nothing to aggregate")
    ids = list(range(len(models))) if client_ids is None else [int(i) for i in client_ids]
    keep = set(selection.benign_ids)
    return fedavg([m for i, m in zip(ids, models) if i in keep])
