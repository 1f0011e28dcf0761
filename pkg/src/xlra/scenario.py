"""Physical-world generation for one Monte Carlo trial.

Builds the uniform rectangular array (URA), drops users into the cell,
draws large-scale fading per (user, antenna), aggregates it per subarray,
and samples the Bernoulli visibility map that says which subarrays can
hear which users.  Everything is a pure function of an explicit NumPy
random generator, so trials can run in parallel workers without shared
state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Urban-micro large-scale fading constants (linear-gain model, dB inputs).
PATHLOSS_EXPONENT = 3.8
REFERENCE_GAIN_DB = -34.53
SHADOW_STD_DB = 10.0

# Below this count a subarray loses the channel-hardening behaviour the
# protocol model relies on; configurations violating it are rejected
# unless explicitly overridden.
MIN_SUBARRAY_ANTENNAS = 50

# Rounds of batch rejection sampling before user placement gives up.
_PLACEMENT_ROUNDS = 200


class ConfigurationError(ValueError):
    """A scenario or trial configuration that cannot be realized."""


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UraGeometry:
    """Uniform rectangular array on the y-z plane.

    The first row starts at ``origin`` and runs along the y axis; rows are
    stacked upward from the mounting height.  Physical side lengths are
    derived (``Ly``, ``Lz``), never stored.
    """

    M_y: int = 100
    M_z: int = 5
    d_m: float = 1.0        # element spacing [m]
    h_array: float = 12.0   # mounting height of the lowest row [m]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.M_y <= 0 or self.M_z <= 0:
            raise ConfigurationError("antenna counts must be positive")
        if self.d_m <= 0:
            raise ConfigurationError("element spacing must be positive")
        if self.h_array < 0:
            raise ConfigurationError("array height must be nonnegative")

    @property
    def M(self) -> int:
        return self.M_y * self.M_z

    @property
    def Ly(self) -> float:
        return self.M_y * self.d_m

    @property
    def Lz(self) -> float:
        return self.M_z * self.d_m


def antenna_position(geom: UraGeometry, m_y: int, m_z: int) -> np.ndarray:
    """3D position [m] of element (m_y, m_z)."""
    if not (0 <= m_y < geom.M_y and 0 <= m_z < geom.M_z):
        raise ValueError(f"element index ({m_y}, {m_z}) out of range")
    ox, oy, oz = geom.origin
    return np.array([ox, oy + m_y * geom.d_m, oz + geom.h_array + m_z * geom.d_m])


def element_positions(geom: UraGeometry) -> np.ndarray:
    """All M element positions, shape (M, 3), in y-major order.

    Element m = m_y * M_z + m_z; this linear order is what the contiguous
    subarray partition slices.
    """
    m_y = np.repeat(np.arange(geom.M_y), geom.M_z)
    m_z = np.tile(np.arange(geom.M_z), geom.M_y)
    ox, oy, oz = geom.origin
    pos = np.empty((geom.M, 3))
    pos[:, 0] = ox
    pos[:, 1] = oy + m_y * geom.d_m
    pos[:, 2] = oz + geom.h_array + m_z * geom.d_m
    return pos


@dataclass(frozen=True)
class SubarrayPartition:
    """Partition of the M elements into B equal contiguous subarrays."""

    B: int
    M_b: int
    assignment: np.ndarray = field(repr=False)  # (M,) element -> subarray

    def __post_init__(self):
        if self.B * self.M_b != self.assignment.shape[0]:
            raise ConfigurationError("partition sizes do not cover the array")


def make_partition(geom: UraGeometry, B: int,
                   allow_small_subarrays: bool = False) -> SubarrayPartition:
    """Split the array into B contiguous blocks along the y-major order."""
    if B <= 0:
        raise ConfigurationError("B must be positive")
    if geom.M % B != 0:
        raise ConfigurationError(f"B={B} does not divide M={geom.M}")
    M_b = geom.M // B
    if M_b < MIN_SUBARRAY_ANTENNAS and not allow_small_subarrays:
        raise ConfigurationError(
            f"subarray size M_b={M_b} is below {MIN_SUBARRAY_ANTENNAS}; "
            "set allow_small_subarrays to override")
    assignment = np.repeat(np.arange(B, dtype=np.int64), M_b)
    return SubarrayPartition(B=B, M_b=M_b, assignment=assignment)


# ---------------------------------------------------------------------------
# Cell and user placement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CellLayout:
    """Rectangular cell footprint in front of the array.

    x in [0, width] is the boresight direction, y in [0, depth] runs along
    the array.  User heights are uniform in [h_min, h_max].  Sampled
    positions must keep their distance to the nearest array element within
    [d_min, d_max].
    """

    width: float = 200.0
    depth: float = 100.0
    d_min: float = 10.0
    d_max: float = 180.0
    h_min: float = 1.0
    h_max: float = 1.7

    def __post_init__(self):
        if not (0 < self.d_min < self.d_max):
            raise ConfigurationError("need 0 < d_min < d_max")
        if self.width <= 0 or self.depth <= 0:
            raise ConfigurationError("cell sides must be positive")
        if not (0 < self.h_min <= self.h_max):
            raise ConfigurationError("need 0 < h_min <= h_max")


def _min_distance_to_array(points: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """Per-point distance to the nearest array element, shape (N,)."""
    d2 = pairwise_sq_distances(points, elements)
    return np.sqrt(d2.min(axis=1))


def pairwise_sq_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between row sets, shape (len(a), len(b)).

    Uses the |a|^2 + |b|^2 - 2ab expansion so the K x M case runs as one
    matrix product; clipped at zero to absorb cancellation noise.
    """
    aa = np.einsum("ij,ij->i", a, a)
    bb = np.einsum("ij,ij->i", b, b)
    d2 = aa[:, None] + bb[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def place_users(cell: CellLayout, elements: np.ndarray, K: int,
                rng: np.random.Generator) -> np.ndarray:
    """Drop K users uniformly over the admissible cell volume, shape (K, 3).

    Positions are uniform over footprint x height and rejection-sampled
    until the nearest-element distance lands in [d_min, d_max].  Raises
    ConfigurationError if the acceptance rate is too low to fill K slots
    within the rejection budget.
    """
    if K < 0:
        raise ValueError("K must be nonnegative")
    out = np.empty((K, 3))
    filled = 0
    for _ in range(_PLACEMENT_ROUNDS):
        if filled == K:
            break
        n = max(K - filled, 64)
        cand = np.empty((n, 3))
        cand[:, 0] = rng.uniform(0.0, cell.width, n)
        cand[:, 1] = rng.uniform(0.0, cell.depth, n)
        cand[:, 2] = rng.uniform(cell.h_min, cell.h_max, n)
        r = _min_distance_to_array(cand, elements)
        ok = cand[(r >= cell.d_min) & (r <= cell.d_max)]
        take = min(len(ok), K - filled)
        out[filled:filled + take] = ok[:take]
        filled += take
    if filled < K:
        raise ConfigurationError(
            "user placement rejection budget exhausted; distance "
            f"constraints [{cell.d_min}, {cell.d_max}] m admit too little "
            "of the cell")
    return out


# ---------------------------------------------------------------------------
# Large-scale fading
# ---------------------------------------------------------------------------

def large_scale_fading(r, shadow_db, kappa: float = PATHLOSS_EXPONENT,
                       g_db: float = REFERENCE_GAIN_DB):
    """Linear power gain at distance r [m] with shadow fading in dB.

    10^(-kappa*log10(r) + (g + shadow)/10): a kappa*10 dB/decade slope
    anchored at g dB for r = 1 m.  Accepts scalars or arrays.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("distance must be positive")
    return 10.0 ** (-kappa * np.log10(r) + (g_db + np.asarray(shadow_db, dtype=float)) / 10.0)


def subarray_fading(per_antenna) -> float:
    """Average large-scale fading of one subarray: mean of per-antenna gains."""
    gains = np.asarray(per_antenna, dtype=float)
    if gains.size == 0:
        raise ValueError("subarray has no antennas")
    if np.any(gains <= 0):
        raise ValueError("per-antenna gains must be positive")
    return float(gains.mean())


@dataclass(frozen=True)
class FadingMap:
    """Subarray-level gains beta[k, b] and per-user transmit powers rho[k]."""

    beta: np.ndarray = field(repr=False)  # (K, B) linear power gains
    rho: np.ndarray = field(repr=False)   # (K,) transmit powers [W]

    def __post_init__(self):
        if not np.all(np.isfinite(self.beta)) or np.any(self.beta <= 0):
            raise ConfigurationError("fading entries must be finite and positive")
        if self.beta.shape[0] != self.rho.shape[0]:
            raise ConfigurationError("beta/rho user counts differ")


def build_fading_map(positions: np.ndarray, elements: np.ndarray,
                     partition: SubarrayPartition, rng: np.random.Generator,
                     rho: float = 1.0, shadow_mode: str = "per_antenna",
                     sigma_sf_db: float = SHADOW_STD_DB) -> FadingMap:
    """Per-(user, subarray) average fading from per-antenna draws.

    shadow_mode selects where the log-normal shadowing is drawn:
    "per_antenna" (default) gives each (user, antenna) pair its own term,
    "per_subarray" shares one term across a subarray's antennas.  The
    paper-facing quantity is always the per-subarray arithmetic mean of
    the per-antenna gains.
    """
    K = positions.shape[0]
    B, M_b = partition.B, partition.M_b
    r = np.sqrt(pairwise_sq_distances(positions, elements))  # (K, M)
    if shadow_mode == "per_antenna":
        shadow = rng.normal(0.0, sigma_sf_db, size=r.shape)
    elif shadow_mode == "per_subarray":
        shadow = np.repeat(rng.normal(0.0, sigma_sf_db, size=(K, B)), M_b, axis=1)
    else:
        raise ConfigurationError(f"unknown shadow_mode {shadow_mode!r}")
    beta_antenna = large_scale_fading(r, shadow)
    # assignment is contiguous blocks of M_b in the y-major element order,
    # so the per-subarray mean is a reshape away.
    beta = beta_antenna.reshape(K, B, M_b).mean(axis=2)
    return FadingMap(beta=beta, rho=np.full(K, float(rho)))


# ---------------------------------------------------------------------------
# Visibility regions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VisibilityMap:
    """Bernoulli truth table: visible[k, b] says SA b can hear user k."""

    visible: np.ndarray = field(repr=False)  # (K, B) bool
    P_b: float = 1.0

    def subarrays_of(self, k: int) -> np.ndarray:
        return np.nonzero(self.visible[k])[0]


def draw_visibility(K: int, B: int, P_b: float,
                    rng: np.random.Generator) -> VisibilityMap:
    """Independent Bernoulli(P_b) visibility per (user, subarray)."""
    if not 0.0 <= P_b <= 1.0:
        raise ValueError("P_b must be a probability")
    visible = rng.random((K, B)) < P_b
    return VisibilityMap(visible=visible, P_b=P_b)


def effective_uplink_gain(k: int, fading: FadingMap, vis: VisibilityMap,
                          tau: int) -> float:
    """Pilot-energy gain the decision rule compares: rho * tau * sum beta.

    The sum runs over the user's visible subarrays only; an empty
    visibility region yields 0.
    """
    mask = vis.visible[k]
    if not mask.any():
        return 0.0
    return float(fading.rho[k] * tau * fading.beta[k, mask].sum())


# ---------------------------------------------------------------------------
# Scenario bundle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to draw one trial's world."""

    K: int = 1000
    B: int = 10
    P_b: float = 0.5
    rho: float = 1.0
    geometry: UraGeometry = field(default_factory=UraGeometry)
    cell: CellLayout = field(default_factory=CellLayout)
    shadow_mode: str = "per_antenna"
    allow_small_subarrays: bool = False


@dataclass(frozen=True)
class Scenario:
    """One trial's frozen world: geometry, users, gains, visibility."""

    config: ScenarioConfig
    partition: SubarrayPartition
    positions: np.ndarray = field(repr=False)  # (K, 3)
    fading: FadingMap = field(repr=False)
    visibility: VisibilityMap = field(repr=False)

    @property
    def K(self) -> int:
        return self.positions.shape[0]

    @property
    def B(self) -> int:
        return self.partition.B


# Named child-stream indices: placement, shadowing and visibility draws
# come from independent streams so that e.g. changing B re-draws only the
# visibility map while user drops and shadowing stay identical (common
# random numbers across grid cells).
STREAM_PLACEMENT = 0
STREAM_SHADOWING = 1
STREAM_VISIBILITY = 2
STREAM_PROTOCOL = 3


def stream(master_seed: int, trial_index: int, which: int) -> np.random.Generator:
    """Independent, reproducible generator for one trial component."""
    return np.random.default_rng(
        np.random.SeedSequence((master_seed, trial_index, which)))


def build_scenario(cfg: ScenarioConfig, master_seed: int,
                   trial_index: int = 0) -> Scenario:
    """Draw one trial's world deterministically from (config, seed, trial)."""
    geom = cfg.geometry
    partition = make_partition(geom, cfg.B, cfg.allow_small_subarrays)
    elements = element_positions(geom)
    positions = place_users(cfg.cell, elements, cfg.K,
                            stream(master_seed, trial_index, STREAM_PLACEMENT))
    fading = build_fading_map(positions, elements, partition,
                              stream(master_seed, trial_index, STREAM_SHADOWING),
                              rho=cfg.rho, shadow_mode=cfg.shadow_mode)
    visibility = draw_visibility(cfg.K, cfg.B, cfg.P_b,
                                 stream(master_seed, trial_index, STREAM_VISIBILITY))
    return Scenario(config=cfg, partition=partition, positions=positions,
                    fading=fading, visibility=visibility)
