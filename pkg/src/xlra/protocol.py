"""Per-RA-block contention machinery for SUCRe-XL and NVR-XL.

This module is the readable, object-level reference: pilot selection,
gain estimation, the distributed retransmission decision, per-subarray
collision resolution (with one-step SIC for NVR-XL), and admission.  The
Monte Carlo engine runs the same logic through a vectorized kernel (see
``xlra.backend``); tests pin the two paths against each other.

Both protocols share steps: contenders pick a pilot, the base station
answers with a precoded response from which each contender estimates the
total contending gain on its pilot, and each contender independently
decides whether to retransmit.  They differ in how the base station
resolves whoever retransmitted:

* SUCRe-XL admits a retransmitter only if its visibility region is
  disjoint from every other retransmitter's on that pilot.
* NVR-XL admits overlapping retransmitters pairwise per subarray via
  power-domain NOMA with one SIC step; any subarray seeing three or more
  retransmitters of one pilot fails all of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .scenario import FadingMap, Scenario, VisibilityMap, effective_uplink_gain

MAX_ATTEMPTS = 10

SUCRE_XL = "sucre-xl"
NVR_XL = "nvr-xl"
PROTOCOLS = (SUCRE_XL, NVR_XL)


@dataclass(frozen=True)
class PilotPool:
    """tau_RA mutually orthogonal RA pilots, each of length (and squared
    norm) tau_RA.  Only indices matter here; no waveforms are stored."""

    tau_RA: int

    def __post_init__(self):
        if self.tau_RA < 1:
            raise ValueError("need at least one pilot")


class Lifecycle(Enum):
    INACTIVE = "inactive"
    CONTENDING = "contending"
    BACKLOGGED = "backlogged"
    ACCEPTED = "accepted"
    DROPPED = "dropped"


@dataclass
class RaUserState:
    """One user's progress through an access episode."""

    user_id: int
    lifecycle: Lifecycle = Lifecycle.INACTIVE
    attempts: int = 0
    chosen_pilot: Optional[int] = None

    def check(self):
        assert 0 <= self.attempts <= MAX_ATTEMPTS
        assert (self.chosen_pilot is not None) == (self.lifecycle is Lifecycle.CONTENDING)


BIAS_GAIN_SCALED = "gain_scaled"
BIAS_LITERAL = "literal"


@dataclass(frozen=True)
class DecisionConfig:
    """Knobs of the distributed retransmission decision.

    estimator_mode "genie" hands every contender the exact total
    contending gain on its pilot; "noisy" perturbs it with a zero-mean
    Gaussian whose deviation shrinks with the subarray size and the
    number of visible subarrays.

    bias_mode selects how the tunable scale factor delta enters the bias:
    "gain_scaled" (default) multiplies the user's summed visible gain,
    keeping the bias commensurate with the compared pilot energies;
    "literal" divides by it, reproducing the published expression
    verbatim (which at cell-realistic gains makes any appreciable
    negative delta force retransmission).
    """

    delta: float = 0.0
    estimator_mode: str = "genie"
    noise_scale: float = 1.0
    bias_mode: str = BIAS_GAIN_SCALED

    def __post_init__(self):
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be nonnegative")
        if self.estimator_mode not in ("genie", "noisy"):
            raise ValueError(f"unknown estimator_mode {self.estimator_mode!r}")
        if self.bias_mode not in (BIAS_GAIN_SCALED, BIAS_LITERAL):
            raise ValueError(f"unknown bias_mode {self.bias_mode!r}")


class FailureReason(Enum):
    NONE = "none"
    THREE_PLUS_OVERLAP = "three_plus_overlap"
    OVERLAP_UNRESOLVABLE = "overlap_unresolvable"
    DECODE_FAIL = "decode_fail"


@dataclass
class ContentionOutcome:
    """Resolution record for one (pilot, RA block)."""

    pilot: int
    contenders: list[int]
    retransmitters: list[int]
    admitted: list[int]
    # per admitted user: (B,) SINR vector, zero at subarrays the user
    # does not reach (meaningful for NVR-XL; SUCRe-XL rates are derived
    # from the fading map directly).
    sinr: dict[int, np.ndarray] = field(default_factory=dict)
    failure_reason: FailureReason = FailureReason.NONE


# ---------------------------------------------------------------------------
# Step I: pilot selection
# ---------------------------------------------------------------------------

def step1_select_pilots(states: list[RaUserState], pool: PilotPool,
                        P_a: float, P_na: float,
                        rng: np.random.Generator) -> dict[int, list[int]]:
    """Activate contenders and assign pilots; returns pilot -> user ids.

    Inactive users enter with probability P_a, backlogged ones retry with
    P_na; every contender picks one of the tau_RA pilots uniformly.
    Selected states move to CONTENDING with their pilot recorded.
    """
    if not (0 <= P_a <= 1 and 0 <= P_na <= 1):
        raise ValueError("P_a and P_na must be probabilities")
    sets: dict[int, list[int]] = {t: [] for t in range(pool.tau_RA)}
    for state in states:
        if state.lifecycle is Lifecycle.INACTIVE:
            p = P_a
        elif state.lifecycle is Lifecycle.BACKLOGGED:
            p = P_na
        else:
            continue
        if rng.random() < p:
            t = int(rng.integers(pool.tau_RA))
            state.lifecycle = Lifecycle.CONTENDING
            state.chosen_pilot = t
            sets[t].append(state.user_id)
    return sets


# ---------------------------------------------------------------------------
# Step II/III: gain estimation and the retransmission decision
# ---------------------------------------------------------------------------

def estimate_alpha(t: int, k: int, contenders: list[int], scenario: Scenario,
                   cfg: DecisionConfig, rng: np.random.Generator,
                   tau: int, sigma2: float = 1.0) -> float:
    """User k's estimate of the total contending gain on pilot t.

    Genie mode returns the exact sum of every contender's effective
    uplink gain.  Noisy mode adds N(0, (noise_scale * sigma^2 /
    sqrt(M_b * |V_k|))^2) truncated at zero, with |V_k| floored at 1:
    the estimate sharpens with the subarray size and with how much of
    the array the user actually reaches.
    """
    if k not in contenders:
        raise ValueError("estimating user must be contending on the pilot")
    alpha = sum(effective_uplink_gain(i, scenario.fading, scenario.visibility, tau)
                for i in contenders)
    if cfg.estimator_mode == "genie":
        return alpha
    n_vis = max(1, int(scenario.visibility.visible[k].sum()))
    sd = cfg.noise_scale * sigma2 / math.sqrt(scenario.partition.M_b * n_vis)
    return max(0.0, alpha + rng.normal(0.0, sd)) if sd > 0 else alpha


def bias_term(delta: float, M_b: int, sum_beta_visible: float) -> float:
    """Decision bias as published: delta / (sqrt(M_b) * sum of visible beta)."""
    if M_b <= 0:
        raise ValueError("M_b must be positive")
    if sum_beta_visible <= 0:
        raise ValueError("caller must short-circuit empty visibility regions")
    return delta / (math.sqrt(M_b) * sum_beta_visible)


def bias_term_gain_scaled(delta: float, M_b: int, sum_beta_visible: float) -> float:
    """Decision bias scaled to the user's own gain: delta * sum beta / sqrt(M_b).

    Keeps the bias on the same scale as the compared pilot energies for
    every user, so delta acts as a dimensionless threshold knob.  This is
    the default; ``bias_term`` is the published form, kept selectable.
    """
    if M_b <= 0:
        raise ValueError("M_b must be positive")
    if sum_beta_visible <= 0:
        raise ValueError("caller must short-circuit empty visibility regions")
    return delta * sum_beta_visible / math.sqrt(M_b)


def compute_bias(cfg: DecisionConfig, M_b: int, sum_beta_visible: float) -> float:
    if cfg.bias_mode == BIAS_LITERAL:
        return bias_term(cfg.delta, M_b, sum_beta_visible)
    return bias_term_gain_scaled(cfg.delta, M_b, sum_beta_visible)


def decide_retransmit(lhs: float, alpha_hat: float, epsilon: float) -> bool:
    """True iff the contender repeats its pilot: lhs > alpha_hat/2 + epsilon.

    Strict inequality; exact ties withdraw.
    """
    return lhs > 0.5 * alpha_hat + epsilon


# ---------------------------------------------------------------------------
# Step III resolution: SUCRe-XL (disjoint visibility regions)
# ---------------------------------------------------------------------------

def resolve_sucre_xl(t: int, retransmitters: list[int],
                     vis: VisibilityMap) -> ContentionOutcome:
    """Admit retransmitters whose visibility regions collide with nobody.

    A user is admitted iff its VR is nonempty and disjoint from every
    other retransmitter's VR on this pilot; equivalently, every subarray
    it reaches hears exactly one retransmitter.
    """
    users = sorted(retransmitters)
    admitted = []
    if users:
        counts = vis.visible[users].sum(axis=0)  # retransmitters per SA
        for u in users:
            mask = vis.visible[u]
            if mask.any() and not np.any(counts[mask] > 1):
                admitted.append(u)
    reason = FailureReason.NONE if len(admitted) == len(users) \
        else FailureReason.OVERLAP_UNRESOLVABLE
    return ContentionOutcome(pilot=t, contenders=list(users),
                             retransmitters=list(users), admitted=admitted,
                             failure_reason=reason)


# ---------------------------------------------------------------------------
# Step III resolution: NVR-XL (pairwise NOMA per subarray)
# ---------------------------------------------------------------------------

def sic_sinr(rho1: float, beta1_b: float, rho2: float, beta2_b: float,
             varpi: float, sigma2: float,
             literal_eq3: bool = False) -> tuple[float, float]:
    """Per-subarray SINRs of a NOMA pair decoded strongest-first.

    Caller orders the pair so rho1*beta1_b >= rho2*beta2_b.  The first
    user is decoded against the second's signal plus noise; after
    reconstruction and cancellation a fraction varpi of the first user's
    power remains as interference to the second.  ``literal_eq3``
    reproduces the published first-user denominator, where the weaker
    signal and the noise power multiply instead of adding.
    """
    if sigma2 <= 0:
        raise ValueError("noise power must be positive")
    if not 0.0 <= varpi <= 1.0:
        raise ValueError("residual interference factor must lie in [0, 1]")
    p1, p2 = rho1 * beta1_b, rho2 * beta2_b
    if p1 < p2:
        raise ValueError("caller must order the pair by descending power")
    if literal_eq3:
        gamma1 = p1 / (p2 * sigma2) if p2 > 0 else p1 / sigma2
    else:
        gamma1 = p1 / (p2 + sigma2)
    gamma2 = p2 / (varpi * p1 + sigma2)
    return gamma1, gamma2


def resolve_nvr_xl(t: int, retransmitters: list[int], vis: VisibilityMap,
                   fading: FadingMap, varpi: float, sigma2: float,
                   literal_eq3: bool = False) -> ContentionOutcome:
    """Admit retransmitters pairwise per subarray; triples fail outright.

    Every subarray hearing >= 3 retransmitters of this pilot fails all of
    them (one SIC step cannot separate three signals); a user failing in
    any subarray is rejected for the whole block.  Survivors with a
    nonempty VR are admitted.  Per admitted user the record carries one
    SINR per subarray: the SIC pair values where two admitted users
    share a subarray, plain rho*beta/sigma^2 where it is alone, zero
    where it is not visible.
    """
    users = sorted(retransmitters)
    B = vis.visible.shape[1]
    outcome = ContentionOutcome(pilot=t, contenders=list(users),
                                retransmitters=list(users), admitted=[])
    if not users:
        return outcome
    counts = vis.visible[users].sum(axis=0)
    overloaded = counts >= 3
    admitted = [u for u in users
                if vis.visible[u].any() and not np.any(overloaded & vis.visible[u])]
    outcome.admitted = admitted
    if len(admitted) < len(users):
        outcome.failure_reason = FailureReason.THREE_PLUS_OVERLAP
    for u in admitted:
        outcome.sinr[u] = np.zeros(B)
    for b in range(B):
        present = [u for u in admitted if vis.visible[u, b]]
        if len(present) == 1:
            u = present[0]
            outcome.sinr[u][b] = fading.rho[u] * fading.beta[u, b] / sigma2
        elif len(present) == 2:
            u1, u2 = present
            # strongest decodes first; ties keep the lower user id first
            if fading.rho[u2] * fading.beta[u2, b] > fading.rho[u1] * fading.beta[u1, b]:
                u1, u2 = u2, u1
            g1, g2 = sic_sinr(fading.rho[u1], fading.beta[u1, b],
                              fading.rho[u2], fading.beta[u2, b],
                              varpi, sigma2, literal_eq3)
            outcome.sinr[u1][b] = g1
            outcome.sinr[u2][b] = g2
        elif len(present) > 2:
            raise AssertionError("admission left >2 users on one subarray")
    return outcome


# ---------------------------------------------------------------------------
# Step IV: admission bookkeeping
# ---------------------------------------------------------------------------

def step4_admit(outcomes: list[ContentionOutcome],
                states: dict[int, RaUserState]) -> None:
    """Fold block outcomes back into user states.

    Every contender's attempt counter advances by one.  Admitted users
    become ACCEPTED with the counter frozen at the successful attempt;
    everyone else returns to BACKLOGGED, or DROPPED once the counter
    reaches the attempt cap without success.
    """
    for outcome in outcomes:
        admitted = set(outcome.admitted)
        for u in outcome.contenders:
            state = states[u]
            state.attempts += 1
            state.chosen_pilot = None
            if u in admitted:
                state.lifecycle = Lifecycle.ACCEPTED
            elif state.attempts >= MAX_ATTEMPTS:
                state.lifecycle = Lifecycle.DROPPED
            else:
                state.lifecycle = Lifecycle.BACKLOGGED
