"""Synthetic paired coarse/fine watershed families.

Every watershed is a random in-tree of segments draining to one outlet;
the fine-scale twin subdivides each coarse segment into `split_factor`
chained sub-segments, so the two resolutions share topology up to
refinement. Water temperature follows a first-order relaxation toward a
fixed response to air temperature plus one-day-lagged advection from
upstream - and the mapping from characteristics to the per-segment
relaxation/advection rates is drawn once per family, so the same
physics holds across every watershed and scale. That shared dependence
is exactly the cross-task consistency a geo-aware model can learn, and
it gives the acceptance experiments a ground truth.

Only 10 of the 65 generated characteristics drive the process; the rest
are distractors, which keeps the masked-characteristics experiment
meaningful.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .dataset import TaskDataset
from .errors import DataError
from .stream_graph import UNCONNECTED, SegmentNetwork

N_CHARS = 65
N_INFORMATIVE = 10


@dataclass
class SynthConfig:
    n_watersheds: int = 4
    coarse_segments_min: int = 6
    coarse_segments_max: int = 10
    split_factor: int = 8          # fine mean length = coarse/split (~1.3 km at defaults)
    coarse_len_mean_km: float = 10.5
    days: int = 730
    start_date: str = "2000-01-01"
    obs_frac_coarse: float = 0.15  # fraction of (segment, day) cells observed
    obs_frac_fine: float = 0.03
    frac_unobs_segments_coarse: float = 0.0
    frac_unobs_segments_fine: float = 0.4
    seed: int = 0
    # weather process
    airtemp_mean: float = 12.0
    airtemp_amp: float = 10.0
    ar1_rho: float = 0.8
    ar1_std: float = 2.0
    segment_offset_std: float = 0.5
    # temperature process
    k_gain: float = 0.8
    advect_max: float = 0.5
    temp_noise_std: float = 0.3
    advection_lag_days: int = 1    # 2 stresses model misspecification

    def __post_init__(self):
        if self.split_factor < 2:
            raise DataError("split_factor must be >= 2")
        if self.coarse_len_mean_km <= 0:
            raise DataError("segment lengths must be positive")
        if self.days < 2:
            raise DataError("need at least 2 days")
        if self.advection_lag_days not in (1, 2):
            raise DataError("advection lag supports 1 or 2 days")


@dataclass
class ProcessParams:
    """Per-segment relaxation rate k and total advection weight a."""

    k: np.ndarray
    a: np.ndarray
    noise_std: float

    def __post_init__(self):
        if np.any(self.k < 0.05) or np.any(self.k > 0.95):
            raise DataError("relaxation rates must stay in [0.05, 0.95]")
        if np.any(self.k + self.a >= 1.0):
            raise DataError("stability violation: k_i + a_i >= 1")


@dataclass
class FamilyCoefs:
    """Characteristics -> process mapping, shared across a family."""

    w_k: np.ndarray
    w_a: np.ndarray


def _seed(config_seed, *path):
    return np.random.SeedSequence([int(config_seed), *[int(p) for p in path]])


def family_coefs(config):
    rng = np.random.default_rng(_seed(config.seed, 0xC0))
    return FamilyCoefs(w_k=rng.normal(size=N_INFORMATIVE),
                       w_a=rng.normal(size=N_INFORMATIVE))


def airtemp_response(air):
    """Equilibrium water temperature for a given air temperature (deg C, >= 0)."""
    return np.maximum(0.0, 0.8 * air + 2.0)


def _tree_distances(parent, lengths):
    """dist[i, j] = outlet-to-outlet stream distance when i is upstream of j."""
    n = len(parent)
    dist = np.full((n, n), UNCONNECTED)
    np.fill_diagonal(dist, 0.0)
    for i in range(n):
        d = 0.0
        j = parent[i]
        while j >= 0:
            d += lengths[j]
            dist[i, j] = d
            j = parent[j]
    return dist


def generate_network(config, widx, seed):
    """One watershed at both scales plus characteristics and tree metadata.

    Returns (coarse: SegmentNetwork, fine: SegmentNetwork, meta) where
    meta carries characteristics per scale, parent arrays, segment
    lengths, and the fine->coarse parent map used by refinement checks.
    """
    rng = np.random.default_rng(seed)
    n_c = int(rng.integers(config.coarse_segments_min, config.coarse_segments_max + 1))
    # random recursive in-tree; node 0 is the outlet
    parent_c = np.full(n_c, -1, dtype=np.int64)
    for i in range(1, n_c):
        parent_c[i] = rng.integers(0, i)
    len_c = rng.uniform(0.5, 1.5, size=n_c) * config.coarse_len_mean_km

    ws = f"w{widx}"
    ids_c = [f"{ws}c_s{i}" for i in range(n_c)]
    coarse = SegmentNetwork(ids_c, _tree_distances(parent_c, len_c), ws, "coarse")

    # fine twin: chain of `split` sub-segments per coarse segment,
    # indexed upstream (q=0) to downstream (q=split-1)
    m = config.split_factor
    n_f = n_c * m
    parent_f = np.full(n_f, -1, dtype=np.int64)
    len_f = np.zeros(n_f)
    fine_parent = np.zeros(n_f, dtype=np.int64)
    for i in range(n_c):
        for q in range(m):
            fi = i * m + q
            fine_parent[fi] = i
            len_f[fi] = len_c[i] / m
            if q < m - 1:
                parent_f[fi] = fi + 1
            elif parent_c[i] >= 0:
                parent_f[fi] = parent_c[i] * m
    ids_f = [f"{ws}f_s{i}_{q}" for i in range(n_c) for q in range(m)]
    fine = SegmentNetwork(ids_f, _tree_distances(parent_f, len_f), ws, "fine")

    mu = rng.normal(size=N_CHARS)
    c_coarse = mu + rng.normal(scale=0.5, size=(n_c, N_CHARS))
    c_fine = c_coarse[fine_parent] + rng.normal(scale=0.15, size=(n_f, N_CHARS))

    meta = {
        "c_coarse": c_coarse, "c_fine": c_fine,
        "parent_coarse": parent_c, "parent_fine": parent_f,
        "lengths_coarse": len_c, "lengths_fine": len_f,
        "fine_parent": fine_parent,
    }
    return coarse, fine, meta


def generate_weather(network, days, seed, config):
    """[n, T, 7] daily drivers; channel 0 is air temperature.

    The watershed-level series (seasonal sinusoid of period 365 days
    plus AR(1) noise) comes first out of the generator, so two networks
    seeded alike - the coarse/fine pair - share base weather exactly;
    per-segment offsets follow. Channels 1-3 are radiation, rain, and
    evapotranspiration analogs; channels 4-6 are nuisance noise.
    """
    if days < 2:
        raise DataError("need at least 2 days of weather")
    rng = np.random.default_rng(seed)
    n = network.n_segments
    t = np.arange(days, dtype=np.float64)

    mean_w = config.airtemp_mean + rng.normal()
    amp_w = config.airtemp_amp * rng.uniform(0.9, 1.1)
    seasonal = np.sin(2.0 * np.pi * t / 365.0 - np.pi / 2.0)
    e = np.zeros(days)
    if config.ar1_std > 0:
        innov = rng.normal(scale=config.ar1_std * np.sqrt(1 - config.ar1_rho ** 2),
                           size=days)
        e[0] = innov[0]
        for ti in range(1, days):
            e[ti] = config.ar1_rho * e[ti - 1] + innov[ti]
    base_air = mean_w + amp_w * seasonal + e

    x = np.zeros((n, days, 7))
    offs = rng.normal(scale=config.segment_offset_std, size=n) \
        if config.segment_offset_std > 0 else np.zeros(n)
    x[:, :, 0] = base_air + offs[:, None]
    nscale = config.ar1_std / 2.0
    x[:, :, 1] = np.maximum(
        0.0, 200.0 + 80.0 * seasonal + rng.normal(scale=10.0, size=(n, days)) * nscale)
    rain = rng.exponential(scale=3.0, size=(n, days))
    rain[rng.uniform(size=(n, days)) > 0.3] = 0.0
    x[:, :, 2] = rain
    x[:, :, 3] = np.maximum(0.0, 1.5 + 0.1 * base_air
                            + rng.normal(scale=0.2, size=(n, days)) * nscale)
    x[:, :, 4:7] = rng.normal(size=(n, days, 3))
    return x


def derive_process_params(chars, has_upstream, coefs, config):
    """Deterministic characteristics -> (k, a) mapping (family-wide)."""
    info = chars[:, :N_INFORMATIVE]
    zk = config.k_gain * (info @ coefs.w_k) / np.sqrt(N_INFORMATIVE)
    k = 0.05 + 0.9 / (1.0 + np.exp(-zk))
    za = (info @ coefs.w_a) / np.sqrt(N_INFORMATIVE)
    chi = config.advect_max / (1.0 + np.exp(-za))
    a = np.where(has_upstream, (1.0 - k) * chi, 0.0)
    return ProcessParams(k=k, a=a, noise_std=config.temp_noise_std)


def simulate_temperature(network, features, params, seed, lag_days=1):
    """Run the temperature recursion; returns y [n, T] in deg C."""
    n = network.n_segments
    T = features.shape[1]
    phi = airtemp_response(features[:, :, 0])
    rng = np.random.default_rng(seed)
    noise = rng.normal(scale=params.noise_std, size=(n, T)) \
        if params.noise_std > 0 else np.zeros((n, T))
    ups = network.direct_upstream()
    indptr = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        indptr[i + 1] = indptr[i] + len(ups[i])
    indices = np.array([j for lst in ups for j in lst], dtype=np.int64)
    if lag_days == 1:
        return kernels.simulate_temps(phi, params.k, params.a, indptr, indices, noise)
    # 2-day advection lag (stress-test variant): substitute y[:, t-2] by
    # running the kernel on a doubled step is not equivalent, so do it here.
    y = np.zeros((n, T))
    y[:, 0] = phi[:, 0]
    for t in range(1, T):
        tl = max(t - lag_days, 0)
        for i in range(n):
            lst = ups[i]
            up_mean = float(np.mean([y[j, tl] for j in lst])) if lst else 0.0
            y[i, t] = ((1.0 - params.k[i] - params.a[i]) * y[i, t - 1]
                       + params.k[i] * phi[i, t] + params.a[i] * up_mean
                       + noise[i, t])
    return y


def observation_mask(n, T, obs_frac, frac_unobs_segments, rng):
    """Exactly round(obs_frac*n*T) observed cells on the observed segments."""
    if not (0 < obs_frac <= 1):
        raise DataError(f"observation fraction {obs_frac} outside (0, 1]")
    n_unobs = int(np.floor(frac_unobs_segments * n))
    unobs = rng.choice(n, size=n_unobs, replace=False) if n_unobs else np.empty(0, int)
    observed_segments = np.setdiff1d(np.arange(n), unobs)
    n_keep = int(np.rint(obs_frac * n * T))
    pool = observed_segments.size * T
    if n_keep > pool:
        raise DataError(f"cannot place {n_keep} observations on {pool} cells")
    flat = rng.choice(pool, size=n_keep, replace=False)
    mask = np.zeros((n, T), dtype=bool)
    mask[observed_segments[flat // T], flat % T] = True
    return mask


def generate_family(config):
    """All tasks of a family: n_watersheds x {coarse, fine} TaskDatasets.

    Fully deterministic in config.seed; the coarse/fine pair of a
    watershed shares base weather and the whole family shares the
    characteristics -> process mapping.
    """
    coefs = family_coefs(config)
    tasks = []
    for widx in range(config.n_watersheds):
        coarse, fine, meta = generate_network(
            config, widx, _seed(config.seed, widx, 5))
        for scale, net, chars, parent in (
                ("coarse", coarse, meta["c_coarse"], meta["parent_coarse"]),
                ("fine", fine, meta["c_fine"], meta["parent_fine"])):
            x = generate_weather(net, config.days, _seed(config.seed, widx, 0), config)
            params = derive_process_params(chars, parent >= 0, coefs, config)
            y = simulate_temperature(net, x, params,
                                     _seed(config.seed, widx, 1 if scale == "coarse" else 2),
                                     lag_days=config.advection_lag_days)
            rng = np.random.default_rng(_seed(config.seed, widx, 3 if scale == "coarse" else 4))
            obs_frac = config.obs_frac_coarse if scale == "coarse" else config.obs_frac_fine
            f_unobs = (config.frac_unobs_segments_coarse if scale == "coarse"
                       else config.frac_unobs_segments_fine)
            mask = observation_mask(net.n_segments, config.days, obs_frac, f_unobs, rng)
            tasks.append(TaskDataset(
                task_id=f"w{widx}_{scale}", network=net, x=x,
                c=chars.copy(), c_mask=np.ones_like(chars, dtype=bool),
                y=y, y_mask=mask, start_date=config.start_date))
    return tasks
