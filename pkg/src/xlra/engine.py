"""Monte Carlo orchestration: trials, sweeps, and the delta search.

A trial draws one scenario and advances ``n_blocks`` RA blocks under
stationary load: inactive users attempt with P_a, backlogged ones retry
with P_na, and accepted or dropped users return to the inactive pool so
the contention level stays constant.  Trials are independent work units
seeded from (master seed, trial index, stream id), so results do not
depend on how many workers run them.

Comparative runs (protocol pairs, delta grids) share each trial's
scenario and pre-drawn contention randomness across the compared
variants: common random numbers, which is also what makes the exhaustive
delta search stable at desk-scale trial counts.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from multiprocessing import get_context

import numpy as np

from . import backend as backend_mod
from .metrics import MAX_ATTEMPTS, MetricsAccumulator, TrialTallies
from .protocol import NVR_XL, PROTOCOLS, SUCRE_XL
from .scenario import (STREAM_PROTOCOL, CellLayout, ConfigurationError,
                       Scenario, ScenarioConfig, UraGeometry, build_scenario,
                       stream)

PROTOCOL_CODES = {SUCRE_XL: 0, NVR_XL: 1}

# Protocol-specific default bias scale factors, applied when delta is not
# given: the NVR-XL value sits mid-way in the tuned band, the baseline
# runs the classic unbiased strongest-user rule.
DELTA_DEFAULTS = {NVR_XL: -300.0, SUCRE_XL: 0.0}


@dataclass(frozen=True)
class TrialConfig:
    """One experiment cell: protocol, load, array split, and knobs.

    Defaults reproduce the reference crowded-cell setup: a 100 m, 500
    element URA 12 m up, a 200 x 100 m cell with user distances in
    [10, 180] m, unit transmit and noise powers, tau_RA = 10 pilots,
    P_a = 0.01, P_na = 0.5, and a 0.1 residual after the SIC step.
    """

    protocol: str = NVR_XL
    K: int = 1000
    B: int = 10
    P_a: float = 0.01
    P_na: float = 0.5
    P_b: float = 0.5
    tau: int = 10
    delta: float | None = None
    varpi: float = 0.1
    sigma2: float = 1.0
    rho: float = 1.0
    n_blocks: int = 100
    n_trials: int = 500
    seed: int = 1
    estimator: str = "genie"
    noise_scale: float = 1.0
    bias_mode: str = "gain_scaled"
    literal_eq3: bool = False
    shadow_mode: str = "per_antenna"
    M_y: int = 100
    M_z: int = 5
    d_m: float = 1.0
    h_array: float = 12.0
    cell_width: float = 200.0
    cell_depth: float = 100.0
    d_min: float = 10.0
    d_max: float = 180.0
    h_user_min: float = 1.0
    h_user_max: float = 1.7
    allow_small_subarrays: bool = False

    @property
    def M(self) -> int:
        return self.M_y * self.M_z

    def effective_delta(self) -> float:
        if self.delta is None:
            return DELTA_DEFAULTS[self.protocol]
        return float(self.delta)


def normalize(cfg: TrialConfig) -> TrialConfig:
    """Validated copy with the protocol default delta filled in.

    Raises ConfigurationError for anything a trial could not run with;
    called before block 1 of any run.
    """
    if cfg.protocol not in PROTOCOLS:
        raise ConfigurationError(f"unknown protocol {cfg.protocol!r}; "
                                 f"expected one of {PROTOCOLS}")
    for name in ("P_a", "P_na", "P_b"):
        p = getattr(cfg, name)
        if not 0.0 <= p <= 1.0:
            raise ConfigurationError(f"{name}={p} is not a probability")
    if cfg.K < 0:
        raise ConfigurationError("K must be nonnegative")
    if cfg.tau < 1:
        raise ConfigurationError("need at least one pilot")
    if cfg.n_blocks < 1 or cfg.n_trials < 1:
        raise ConfigurationError("n_blocks and n_trials must be positive")
    if cfg.sigma2 <= 0 or cfg.rho <= 0:
        raise ConfigurationError("powers must be positive")
    if not 0.0 <= cfg.varpi <= 1.0:
        raise ConfigurationError("varpi must lie in [0, 1]")
    if cfg.estimator not in ("genie", "noisy"):
        raise ConfigurationError(f"unknown estimator {cfg.estimator!r}")
    if cfg.bias_mode not in ("gain_scaled", "literal"):
        raise ConfigurationError(f"unknown bias_mode {cfg.bias_mode!r}")
    # geometry/partition feasibility (raises ConfigurationError)
    scn_cfg = scenario_config(cfg)
    from .scenario import make_partition
    make_partition(scn_cfg.geometry, cfg.B, cfg.allow_small_subarrays)
    return replace(cfg, delta=cfg.effective_delta())


def scenario_config(cfg: TrialConfig) -> ScenarioConfig:
    return ScenarioConfig(
        K=cfg.K, B=cfg.B, P_b=cfg.P_b, rho=cfg.rho,
        geometry=UraGeometry(M_y=cfg.M_y, M_z=cfg.M_z, d_m=cfg.d_m,
                             h_array=cfg.h_array),
        cell=CellLayout(width=cfg.cell_width, depth=cfg.cell_depth,
                        d_min=cfg.d_min, d_max=cfg.d_max,
                        h_min=cfg.h_user_min, h_max=cfg.h_user_max),
        shadow_mode=cfg.shadow_mode,
        allow_small_subarrays=cfg.allow_small_subarrays)


# ---------------------------------------------------------------------------
# Single-trial simulation
# ---------------------------------------------------------------------------

def _predraw(cfg: TrialConfig, trial_index: int, need_eta: bool):
    """Contention randomness for one trial, shared across CRN variants."""
    rng = stream(cfg.seed, trial_index, STREAM_PROTOCOL)
    u_attempt = rng.random((cfg.n_blocks, cfg.K))
    pilot_draw = rng.integers(0, cfg.tau, size=(cfg.n_blocks, cfg.K),
                              dtype=np.int64)
    if need_eta:
        eta = rng.standard_normal((cfg.n_blocks, cfg.K))
    else:
        eta = np.empty((0, 0))
    return u_attempt, pilot_draw, eta


def _decision_arrays(cfg: TrialConfig, scn: Scenario):
    """Per-user float inputs of the retransmission rule.

    Computed once per (scenario, variant) in NumPy and handed to either
    kernel unchanged, so backend choice cannot alter any decision.
    """
    visb = scn.visibility.visible
    beta = scn.fading.beta
    sum_beta_vis = (beta * visb).sum(axis=1)
    has_vis = visb.any(axis=1)
    lhs = scn.fading.rho * float(cfg.tau) * sum_beta_vis
    sqrt_mb = np.sqrt(scn.partition.M_b)
    delta = cfg.effective_delta()
    eps = np.zeros(cfg.K)
    if cfg.bias_mode == "literal":
        np.divide(delta, sqrt_mb * sum_beta_vis, out=eps, where=has_vis)
    else:
        eps[has_vis] = delta * sum_beta_vis[has_vis] / sqrt_mb
    noisy = cfg.estimator == "noisy" and cfg.noise_scale > 0
    if noisy:
        n_vis = np.maximum(1, visb.sum(axis=1))
        noise_sd = cfg.noise_scale * cfg.sigma2 / np.sqrt(scn.partition.M_b * n_vis)
    else:
        noise_sd = np.zeros(cfg.K)
    return lhs, eps, has_vis, noise_sd, noisy


def simulate_trial(cfg: TrialConfig, trial_index: int,
                   scenario: Scenario | None = None,
                   predrawn=None, backend: str | None = None) -> TrialTallies:
    """Run one trial's RA blocks and return its tallies."""
    scn = scenario if scenario is not None else build_scenario(
        scenario_config(cfg), cfg.seed, trial_index)
    lhs, eps, has_vis, noise_sd, noisy = _decision_arrays(cfg, scn)
    u_attempt, pilot_draw, eta = (predrawn if predrawn is not None
                                  else _predraw(cfg, trial_index, noisy))

    attempts = np.zeros(cfg.K, dtype=np.int64)
    in_episode = np.zeros(cfg.K, dtype=np.uint8)
    accepted_hist = np.zeros(MAX_ATTEMPTS + 1, dtype=np.int64)
    per_block_attempting = np.zeros(cfg.n_blocks, dtype=np.int64)
    per_block_accepted = np.zeros(cfg.n_blocks, dtype=np.int64)
    per_block_sum_rate = np.zeros(cfg.n_blocks, dtype=np.float64)

    kernel = backend_mod.get_backend(backend)
    vis_u8 = np.ascontiguousarray(scn.visibility.visible).view(np.uint8)
    dropped = kernel.run_blocks(
        PROTOCOL_CODES[cfg.protocol],
        np.ascontiguousarray(lhs), np.ascontiguousarray(eps),
        np.ascontiguousarray(has_vis).view(np.uint8),
        np.ascontiguousarray(noise_sd), int(noisy),
        np.ascontiguousarray(scn.fading.beta), vis_u8,
        np.ascontiguousarray(scn.fading.rho),
        float(cfg.sigma2), float(cfg.varpi), int(cfg.literal_eq3),
        float(cfg.P_a), float(cfg.P_na),
        u_attempt, pilot_draw, eta, int(cfg.tau),
        attempts, in_episode, accepted_hist,
        per_block_attempting, per_block_accepted, per_block_sum_rate)

    unfinished = np.zeros(MAX_ATTEMPTS + 1, dtype=np.int64)
    open_attempts = attempts[in_episode.view(bool)]
    if open_attempts.size:
        unfinished += np.bincount(open_attempts, minlength=MAX_ATTEMPTS + 1)
    return TrialTallies(accepted_by_attempts=accepted_hist, dropped=int(dropped),
                        unfinished_by_attempts=unfinished,
                        per_block_attempting=per_block_attempting,
                        per_block_accepted=per_block_accepted,
                        per_block_sum_rate=per_block_sum_rate)


run_trial = simulate_trial


def _check_crn_compatible(variants: list[TrialConfig]) -> None:
    keys = ("K", "B", "P_b", "rho", "seed", "n_blocks", "tau", "P_a", "P_na",
            "M_y", "M_z", "d_m", "h_array", "cell_width", "cell_depth",
            "d_min", "d_max", "h_user_min", "h_user_max", "shadow_mode")
    first = variants[0]
    for v in variants[1:]:
        for key in keys:
            if getattr(v, key) != getattr(first, key):
                raise ValueError(f"variants differ in {key}; cannot share a scenario")


def simulate_trial_variants(variants: list[TrialConfig], trial_index: int,
                            backend: str | None = None) -> list[TrialTallies]:
    """One trial under several protocol/delta variants, common randomness.

    The scenario and the contention draws are built once; only the
    decision bias, protocol code and estimator flags change per variant.
    """
    _check_crn_compatible(variants)
    base = variants[0]
    scn = build_scenario(scenario_config(base), base.seed, trial_index)
    need_eta = any(v.estimator == "noisy" and v.noise_scale > 0 for v in variants)
    predrawn = _predraw(base, trial_index, need_eta)
    return [simulate_trial(v, trial_index, scenario=scn, predrawn=predrawn,
                           backend=backend) for v in variants]


# ---------------------------------------------------------------------------
# Parallel trial execution
# ---------------------------------------------------------------------------

def resolve_workers(workers: int | None = None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("XLRA_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _variant_task(args):
    variants, trial_index, backend = args
    return simulate_trial_variants(variants, trial_index, backend)


def run_variants(variants: list[TrialConfig], workers: int | None = None,
                 backend: str | None = None) -> list[MetricsAccumulator]:
    """Accumulated metrics per variant over base.n_trials CRN trials.

    Trials are distributed over a process pool; accumulation happens in
    trial order in the parent, so results are identical for any worker
    count.
    """
    variants = [normalize(v) for v in variants]
    n_trials = variants[0].n_trials
    n_workers = min(resolve_workers(workers), n_trials)
    accs = [MetricsAccumulator() for _ in variants]
    tasks = [(variants, i, backend) for i in range(n_trials)]
    if n_workers <= 1:
        results = map(_variant_task, tasks)
        for tallies_list in results:
            for acc, tallies in zip(accs, tallies_list):
                acc.add_trial(tallies)
    else:
        chunk = max(1, n_trials // (n_workers * 4))
        with get_context().Pool(n_workers) as pool:
            for tallies_list in pool.imap(_variant_task, tasks, chunksize=chunk):
                for acc, tallies in zip(accs, tallies_list):
                    acc.add_trial(tallies)
    return accs


def run_trials(cfg: TrialConfig, workers: int | None = None,
               backend: str | None = None) -> MetricsAccumulator:
    """Accumulated metrics for one experiment cell."""
    return run_variants([cfg], workers=workers, backend=backend)[0]


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

STATUS_OK = "ok"
STATUS_UNDEFINED = "undefined_metric"
STATUS_CONFIG_ERROR = "config_error"


@dataclass(frozen=True)
class SweepSpec:
    """Declarative experiment grid over (protocol, K, B, delta)."""

    base: TrialConfig = field(default_factory=TrialConfig)
    protocols: tuple = (NVR_XL,)
    Ks: tuple = (1000,)
    Bs: tuple = (10,)
    deltas: tuple = (None,)  # None = per-protocol default

    def cells(self) -> list[TrialConfig]:
        out = []
        for protocol in self.protocols:
            for K in self.Ks:
                for B in self.Bs:
                    for delta in self.deltas:
                        out.append(replace(self.base, protocol=protocol,
                                           K=int(K), B=int(B), delta=delta))
        if not out:
            raise ConfigurationError("sweep grid is empty")
        return out


@dataclass
class CellResult:
    """One sweep cell: resolved config, metric summary, status."""

    config: TrialConfig
    summary: dict
    status: str
    error: str = ""


def run_cell(cfg: TrialConfig, workers: int | None = None,
             backend: str | None = None) -> CellResult:
    try:
        cfg = normalize(cfg)
    except ConfigurationError as exc:
        return CellResult(config=cfg, summary={}, status=STATUS_CONFIG_ERROR,
                          error=str(exc))
    acc = run_trials(cfg, workers=workers, backend=backend)
    summary = acc.summary()
    status = STATUS_OK
    if any(n == 0 for (_, _, n) in summary.values()):
        status = STATUS_UNDEFINED
    return CellResult(config=cfg, summary=summary, status=status)


def run_sweep(spec: SweepSpec, workers: int | None = None,
              backend: str | None = None) -> list[CellResult]:
    """All grid cells, in deterministic (protocol, K, B, delta) order.

    Per-cell configuration errors are recorded in the row status and do
    not abort the sweep.
    """
    return [run_cell(cfg, workers=workers, backend=backend)
            for cfg in spec.cells()]


# ---------------------------------------------------------------------------
# Exhaustive delta search
# ---------------------------------------------------------------------------

OBJECTIVE_SUM_RATE = "sum_rate"
OBJECTIVE_ATTEMPTS = "attempts"


@dataclass
class TuneResult:
    delta_star: float
    objective: str
    table: list  # (delta, mean, ci95, n) per grid point


def tune_delta(base: TrialConfig, deltas, objective: str = OBJECTIVE_SUM_RATE,
               workers: int | None = None,
               backend: str | None = None) -> TuneResult:
    """Grid-search delta with common random numbers across grid points.

    Maximizes mean sum-rate (or minimizes mean attempts with
    objective="attempts"); exact objective ties resolve toward the delta
    of smallest magnitude.
    """
    deltas = [float(d) for d in deltas]
    if not deltas:
        raise ConfigurationError("delta grid is empty")
    if objective not in (OBJECTIVE_SUM_RATE, OBJECTIVE_ATTEMPTS):
        raise ConfigurationError(f"unknown objective {objective!r}")
    base = normalize(base)
    variants = [replace(base, delta=d) for d in deltas]
    accs = run_variants(variants, workers=workers, backend=backend)
    metric = "sum_rate" if objective == OBJECTIVE_SUM_RATE else "avg_attempts"
    table = []
    for d, acc in zip(deltas, accs):
        mean, ci, n = acc.summary()[metric]
        table.append((d, mean, ci, n))
    sign = 1.0 if objective == OBJECTIVE_SUM_RATE else -1.0
    defined = [(d, m) for (d, m, _, n) in table if n > 0 and m is not None]
    if not defined:
        raise ConfigurationError("objective undefined on the whole grid")
    best_value = max(sign * m for (_, m) in defined)
    ties = [d for (d, m) in defined if sign * m == best_value]
    delta_star = min(ties, key=lambda d: (abs(d), d))
    return TuneResult(delta_star=delta_star, objective=objective, table=table)
