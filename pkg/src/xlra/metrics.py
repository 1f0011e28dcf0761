"""Performance metrics over contention outcomes and trial tallies.

Four reported quantities: average number of RA attempts, probability of
failed access, normalized number of accepted users, and the average
sum-rate.  Per-trial values come out of ``TrialTallies``; across trials
a streaming (Welford) accumulator yields means with 95% confidence
intervals.  Trials where a metric is undefined (e.g. nobody attempted)
are excluded from that metric's aggregation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .protocol import MAX_ATTEMPTS, ContentionOutcome
from .scenario import FadingMap, VisibilityMap

Z_95 = 1.959963984540054  # two-sided 95% normal quantile


@dataclass
class TrialTallies:
    """Raw per-trial counts the metrics are computed from.

    ``accepted_by_attempts[a]`` counts episodes accepted on their a-th
    attempt (index 0 unused); ``unfinished_by_attempts`` the episodes
    still backlogged when the trial horizon ended, by attempts so far.
    """

    accepted_by_attempts: np.ndarray  # (MAX_ATTEMPTS+1,) int64
    dropped: int
    unfinished_by_attempts: np.ndarray  # (MAX_ATTEMPTS+1,) int64
    per_block_attempting: np.ndarray  # (n_blocks,) int64
    per_block_accepted: np.ndarray    # (n_blocks,) int64
    per_block_sum_rate: np.ndarray    # (n_blocks,) float64

    @property
    def accepted_total(self) -> int:
        return int(self.accepted_by_attempts.sum())

    @property
    def unfinished_total(self) -> int:
        return int(self.unfinished_by_attempts.sum())

    @property
    def episodes_total(self) -> int:
        return self.accepted_total + self.dropped + self.unfinished_total


def avg_access_attempts(tallies: TrialTallies) -> float | None:
    """Mean attempts per access episode; dropped episodes count the cap.

    Episodes still open at the horizon contribute their attempts so far.
    None when no user ever attempted.
    """
    episodes = tallies.episodes_total
    if episodes == 0:
        return None
    counts = np.arange(MAX_ATTEMPTS + 1)
    total = (int((counts * tallies.accepted_by_attempts).sum())
             + MAX_ATTEMPTS * tallies.dropped
             + int((counts * tallies.unfinished_by_attempts).sum()))
    return total / episodes


def failed_access_probability(tallies: TrialTallies) -> float | None:
    """Fraction of access episodes that ended dropped."""
    episodes = tallies.episodes_total
    if episodes == 0:
        return None
    return tallies.dropped / episodes


def normalized_accepted(tallies: TrialTallies) -> float | None:
    """Per-block accepted/attempting ratio, averaged over nonempty blocks."""
    active = tallies.per_block_attempting > 0
    if not active.any():
        return None
    ratios = tallies.per_block_accepted[active] / tallies.per_block_attempting[active]
    return float(ratios.mean())


def avg_sum_rate(tallies: TrialTallies, order: str = "block_mean") -> float:
    """Trial sum-rate [bpcu]: per-block samples averaged (default) or summed."""
    if order == "block_mean":
        return float(tallies.per_block_sum_rate.mean())
    if order == "block_total":
        return float(tallies.per_block_sum_rate.sum())
    raise ValueError(f"unknown averaging order {order!r}")


# ---------------------------------------------------------------------------
# Sum rates straight from contention outcomes (object-level route)
# ---------------------------------------------------------------------------

def sum_rate_nvr(outcomes: list[ContentionOutcome]) -> float:
    """NVR-XL block sum-rate: log2(1 + SINR) over every admitted user's
    per-subarray SINRs (zeros at unreachable subarrays contribute 0)."""
    total = 0.0
    for outcome in outcomes:
        for u in outcome.admitted:
            total += float(np.log2(1.0 + outcome.sinr[u]).sum())
    return total


def sum_rate_sucre(outcomes: list[ContentionOutcome], fading: FadingMap,
                   vis: VisibilityMap, sigma2: float = 1.0) -> float:
    """SUCRe-XL block sum-rate: interference-free per-subarray SNR terms
    over each admitted user's visible subarrays."""
    total = 0.0
    for outcome in outcomes:
        for u in outcome.admitted:
            mask = vis.visible[u]
            snr = fading.rho[u] * fading.beta[u, mask] / sigma2
            total += float(np.log2(1.0 + snr).sum())
    return total


# ---------------------------------------------------------------------------
# Cross-trial aggregation
# ---------------------------------------------------------------------------

@dataclass
class StreamingMean:
    """Welford accumulator: numerically stable running mean/variance."""

    n: int = 0
    mean: float = 0.0
    _m2: float = 0.0

    def add(self, x: float) -> None:
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self._m2 += delta * (x - self.mean)

    @property
    def variance(self) -> float:
        """Sample variance (ddof=1); zero until two samples arrive."""
        return self._m2 / (self.n - 1) if self.n > 1 else 0.0

    def ci95(self) -> float:
        """Half-width of the normal-approximation 95% interval."""
        if self.n < 2:
            return float("nan") if self.n == 0 else 0.0
        return Z_95 * math.sqrt(self.variance / self.n)

    def merge(self, other: "StreamingMean") -> None:
        if other.n == 0:
            return
        if self.n == 0:
            self.n, self.mean, self._m2 = other.n, other.mean, other._m2
            return
        delta = other.mean - self.mean
        n_total = self.n + other.n
        self._m2 += other._m2 + delta * delta * self.n * other.n / n_total
        self.mean += delta * other.n / n_total
        self.n = n_total


METRIC_NAMES = ("avg_attempts", "failed_prob", "norm_accepted", "sum_rate")


@dataclass
class MetricsAccumulator:
    """Streaming cross-trial estimators for the four reported metrics."""

    stats: dict[str, StreamingMean] = field(
        default_factory=lambda: {name: StreamingMean() for name in METRIC_NAMES})

    def add_trial(self, tallies: TrialTallies) -> None:
        values = trial_metrics(tallies)
        for name, value in values.items():
            if value is not None:
                self.stats[name].add(value)

    def merge(self, other: "MetricsAccumulator") -> None:
        for name in METRIC_NAMES:
            self.stats[name].merge(other.stats[name])

    def summary(self) -> dict[str, tuple[float | None, float | None, int]]:
        """Per metric: (mean, ci95 half-width, #defined trials)."""
        out = {}
        for name, acc in self.stats.items():
            if acc.n == 0:
                out[name] = (None, None, 0)
            else:
                out[name] = (acc.mean, acc.ci95(), acc.n)
        return out


def trial_metrics(tallies: TrialTallies) -> dict[str, float | None]:
    return {
        "avg_attempts": avg_access_attempts(tallies),
        "failed_prob": failed_access_probability(tallies),
        "norm_accepted": normalized_accepted(tallies),
        "sum_rate": avg_sum_rate(tallies),
    }
