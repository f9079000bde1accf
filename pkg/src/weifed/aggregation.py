"""Server-side aggregation rules over stacked client param vectors.

All rules take a sequence of equal-length 1-D arrays (one per client, in
client order) and return a new 1-D array.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class AggregatorKind(str, enum.Enum):
    FEDAVG = "FedAvg"
    KRUM = "Krum"
    MULTI_KRUM = "MultiKrum"
    MEDIAN = "Median"
    TRIMMED_MEAN = "TrimmedMean"
    WEIDETECT = "WeiDetect"

    @classmethod
    def parse(cls, value) -> AggregatorKind:
        if isinstance(value, cls):
            return value
        for kind in cls:
            if str(value).lower() == kind.value.lower():
                return kind
        raise ValueError(
            f"unknown aggregator {value!r}; choose from {[k.value for k in cls]}"
        )


def _stack(updates) -> np.ndarray:
    if len(updates) == 0:
        raise ValueError("no updates to aggregate")
    U = np.stack([np.asarray(u, dtype=np.float64) for u in updates])
    if U.ndim != 2:
        raise ValueError("updates must be 1-D vectors of equal length")
    return U


def fedavg(updates) -> np.ndarray:
    """Unweighted coordinate-wise mean."""
    return _stack(updates).mean(axis=0)


def krum_scores(updates, f: int) -> np.ndarray:
    """Sum of squared distances from each update to its n - f - 2 nearest peers."""
    U = _stack(updates)
    n = U.shape[0]
    if n < 2 * f + 3:
        raise ValueError(f"Krum with f={f} needs at least {2 * f + 3} updates, got {n}")
    sq = np.empty((n, n))
    for i in range(n):
        sq[i] = ((U - U[i]) ** 2).sum(axis=1)
    k = n - f - 2
    scores = np.empty(n)
    for i in range(n):
        others = np.sort(np.delete(sq[i], i))
        scores[i] = others[:k].sum()
    return scores


def _krum_order(updates, f):
    # stable sort: equal scores keep client order, i.e. lower index wins
    return np.argsort(krum_scores(updates, f), kind="stable")


def krum(updates, f: int) -> np.ndarray:
    order = _krum_order(updates, f)
    return np.array(updates[order[0]], dtype=np.float64, copy=True)


def multi_krum(updates, f: int, m_select: int | None = None) -> np.ndarray:
    """Mean of the ``m_select`` lowest-scoring updates (default ``n - f``)."""
    n = len(updates)
    m = n - f if m_select is None else m_select
    if not 1 <= m <= n:
        raise ValueError(f"m_select must lie in [1, {n}]")
    order = _krum_order(updates, f)
    return _stack([updates[i] for i in np.sort(order[:m])]).mean(axis=0)


def coord_median(updates) -> np.ndarray:
    """Per-coordinate median; even counts average the two middle values."""
    # a full sort down the columns beats np.median's axis-0 partition here
    S = np.sort(_stack(updates), axis=0)
    n = S.shape[0]
    k = n // 2
    return S[k] if n % 2 else (S[k - 1] + S[k]) / 2


def trimmed_mean(updates, trim_k: int) -> np.ndarray:
    """Per-coordinate mean after dropping the ``trim_k`` lowest and highest values."""
    U = _stack(updates)
    n = U.shape[0]
    if trim_k < 0 or 2 * trim_k >= n:
        raise ValueError(f"trim_k must satisfy 0 <= trim_k < n/2 (n={n})")
    S = np.sort(U, axis=0)
    return S[trim_k : n - trim_k].mean(axis=0)


@dataclass(frozen=True)
class AggregatorSpec:
    """Which rule the server runs and its knobs.

    ``f``, ``m_select`` and ``trim_k`` default (when None) to
    floor(0.15 n), n - f and floor(0.15 n) respectively, resolved against
    the number of updates received in the round.
    """

    kind: AggregatorKind = AggregatorKind.FEDAVG
    f: int | None = None
    m_select: int | None = None
    trim_k: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", AggregatorKind.parse(self.kind))

    def resolved(self, n: int) -> dict:
        f = self.f if self.f is not None else int(np.floor(0.15 * n))
        out = {"kind": self.kind.value}
        if self.kind in (AggregatorKind.KRUM, AggregatorKind.MULTI_KRUM):
            out["f"] = f
        if self.kind is AggregatorKind.MULTI_KRUM:
            out["m_select"] = self.m_select if self.m_select is not None else n - f
        if self.kind is AggregatorKind.TRIMMED_MEAN:
            out["trim_k"] = self.trim_k if self.trim_k is not None else int(np.floor(0.15 * n))
        return out

    def validate(self, n: int) -> list[str]:
        errors = []
        r = self.resolved(n)
        if "f" in r and n < 2 * r["f"] + 3:
            errors.append(f"f: {self.kind.value} with f={r['f']} needs n >= {2 * r['f'] + 3}, n={n}")
        if "m_select" in r and not 1 <= r["m_select"] <= n:
            errors.append(f"m_select: must lie in [1, {n}]")
        if "trim_k" in r and not 0 <= r["trim_k"] < n / 2:
            errors.append(f"trim_k: must satisfy 0 <= trim_k < n/2 (n={n})")
        return errors

    def aggregate(self, updates) -> np.ndarray:
        """Apply a baseline rule; WeiDetect goes through ``defense`` instead."""
        r = self.resolved(len(updates))
        if self.kind is AggregatorKind.FEDAVG:
            return fedavg(updates)
        if self.kind is AggregatorKind.KRUM:
            return krum(updates, r["f"])
        if self.kind is AggregatorKind.MULTI_KRUM:
            return multi_krum(updates, r["f"], r["m_select"])
        if self.kind is AggregatorKind.MEDIAN:
            return coord_median(updates)
        if self.kind is AggregatorKind.TRIMMED_MEAN:
            return trimmed_mean(updates, r["trim_k"])
        raise ValueError("WeiDetect needs validation data; use defense.weibull_filter")
