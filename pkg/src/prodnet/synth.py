"""Synthetic panels with known ground truth.

Two generators are provided. Factor panels put a single common mode on top
of i.i.d. noise and test the cleaning step. GMRF panels draw Gaussian
samples whose precision matrix is a graph Laplacian plus a ridge, so the
graph is the ground truth for reconstruction.

Random streams are split per stage and noise is drawn time-major, so asking
for a longer panel with the same seed extends the earlier columns rather
than reshuffling them.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .errors import ContractError, DomainError, InsufficientDataError
from .netstats import (
    BlockScheme,
    Network,
    generate_sbm,
    read_edgelist_csv,
    read_partition_csv,
    write_edgelist_csv,
    write_partition_csv,
)
from .panel import GrowthPanel, read_growth_csv, write_growth_csv
from .seeding import derive_seed, rng_for
from .sgl import lap_op


@dataclass
class FactorModelSpec:
    """Common-mode model ``x_i(t) = xi_i(t) + sigma * u_i * v(t)``.

    Without ``loadings`` every series gets the full mode, ``sigma * v(t)``,
    and the population covariance is ``I + N sigma^2 u u^T`` with ``u``
    uniform. With explicit unit ``loadings`` the spike is ``sigma^2``.
    """

    n: int
    t: int
    sigma: float = 0.0
    loadings: np.ndarray = None
    mode: str = "gaussian_noise"
    frequency: float = 0.05
    phase: float = 0.0

    def __post_init__(self):
        if self.n < 1 or self.t < 1:
            raise DomainError("n and t must be positive")
        if self.sigma < 0:
            raise DomainError("sigma must be nonnegative")
        if self.mode not in ("gaussian_noise", "sine"):
            raise DomainError(f"unknown mode {self.mode!r}")
        if self.loadings is not None:
            u = np.asarray(self.loadings, dtype=float)
            if u.shape != (self.n,):
                raise ContractError("loadings must have length n")
            if abs(np.linalg.norm(u) - 1.0) > 1e-9:
                raise ContractError("loadings must have unit norm")
            self.loadings = u


def sigma_for_top_eigenvalue(n, top):
    """Common-mode strength for uniform exposure giving a top correlation eigenvalue ``top``.

    With every series loading fully on the mode the population correlation
    has top eigenvalue ``(1 + n s) / (1 + s)`` with ``s = sigma^2``.
    """
    if not 1 <= top < n:
        raise DomainError("top eigenvalue must lie in [1, n)")
    return float(np.sqrt((top - 1.0) / (n - top)))


def _mode_series(spec, rng):
    t = np.arange(spec.t)
    if spec.mode == "sine":
        return np.sqrt(2.0) * np.sin(2 * np.pi * spec.frequency * t + spec.phase)
    return rng.standard_normal(spec.t)


def gen_factor_panel(spec, seed):
    """Draw a fully observed factor panel; returns ``(panel, v)``."""
    xi = rng_for(seed, "factor", "noise").standard_normal((spec.t, spec.n)).T
    v = _mode_series(spec, rng_for(seed, "factor", "mode"))
    load = np.ones(spec.n) if spec.loadings is None else spec.loadings
    x = xi + spec.sigma * np.outer(load, v)
    ids = [f"f{k}" for k in range(spec.n)]
    return GrowthPanel(ids, np.arange(spec.t), x, rescaled=False), v


@dataclass
class PlantedInstance:
    network: Network
    panel: GrowthPanel
    eps: float
    sigma_common: float
    seed: int
    missing: str = "none"
    partition: list = None
    common_mode: np.ndarray = field(default=None, repr=False)

    @property
    def has_common_mode(self):
        return self.sigma_common > 0

    def precision(self):
        return lap_op(_weights(self.network), self.network.n) + self.eps * np.eye(self.network.n)

    def __eq__(self, other):
        if not isinstance(other, PlantedInstance):
            return NotImplemented
        return (
            self.network == other.network
            and self.panel == other.panel
            and self.eps == other.eps
            and self.sigma_common == other.sigma_common
            and self.seed == other.seed
            and self.missing == other.missing
            and self.partition == other.partition
        )


def _weights(net):
    w = np.zeros(net.n * (net.n - 1) // 2)
    if net.m:
        n = net.n
        a, b = net.edges[:, 0], net.edges[:, 1]
        w[a * n - a * (a + 1) // 2 + (b - a) - 1] = 1.0
    return w


def gen_gmrf_panel(net, t, eps, sigma_common=0.0, seed=0, df=None):
    """Sample ``t`` draws from a zero-mean Gaussian with precision ``L(net) + eps I``.

    A uniform common mode ``sigma_common * v(t)`` is added afterwards. With
    ``df`` the innovations are Student-t scaled to unit variance instead of
    Gaussian.
    """
    if eps <= 0:
        raise DomainError("eps must be positive (the Laplacian alone is singular)")
    if t < 1:
        raise DomainError("t must be at least 1")
    n = net.n
    theta = lap_op(_weights(net), n) + eps * np.eye(n)
    chol = linalg.cholesky(theta, lower=True)
    rng = rng_for(seed, "gmrf", "noise")
    if df is None:
        z = rng.standard_normal((t, n)).T
    else:
        if df <= 2:
            raise DomainError("Student-t innovations need df > 2")
        z = rng.standard_t(df, size=(t, n)).T * np.sqrt((df - 2.0) / df)
    x = linalg.solve_triangular(chol, z, trans="T", lower=True)
    v = rng_for(seed, "gmrf", "common").standard_normal(t)
    if sigma_common > 0:
        x = x + sigma_common * v[None, :]
    panel = GrowthPanel(list(net.node_ids), np.arange(t), x, rescaled=False)
    return PlantedInstance(net, panel, float(eps), float(sigma_common), int(seed), common_mode=v)


def planted_block_instance(sizes, p_in, p_out, t, eps=1.0, sigma_common=0.0, seed=0):
    """GMRF instance on a stochastic block network with equal in/out densities per block."""
    B = len(sizes)
    rho = np.full((B, B), float(p_out))
    rho[np.diag_indices(B)] = p_in
    width = len(str(max(B - 1, 0)))
    partition = [f"s{b:0{width}d}" for b, s in enumerate(sizes) for _ in range(s)]
    ids = tuple(f"f{k}" for k in range(sum(sizes)))
    net = generate_sbm(BlockScheme(partition, rho), derive_seed(seed, "planted"), ids)
    inst = gen_gmrf_panel(net, t, eps, sigma_common, seed)
    inst.partition = partition
    return inst


def apply_missingness(panel, pattern="none", p_miss=0.0, seed=0, min_obs=3, max_redraws=10):
    """Hide entries of a panel.

    ``random`` drops every entry independently with probability ``p_miss``;
    rows left with fewer than ``min_obs`` observations are redrawn.
    ``staggered_entry`` gives each firm a random first quarter and keeps
    everything after it.
    """
    if not 0 <= p_miss < 1:
        raise DomainError("p_miss must lie in [0, 1)")
    if pattern == "none":
        return panel
    N, T = panel.values.shape
    rng = rng_for(seed, "missing", pattern)
    if pattern == "random":
        mask = rng.random((N, T)) >= p_miss
        for _ in range(max_redraws):
            short = mask.sum(axis=1) < min_obs
            if not short.any():
                break
            mask[short] = rng.random((int(short.sum()), T)) >= p_miss
        short = np.flatnonzero(mask.sum(axis=1) < min_obs)
        if short.size:
            f = panel.firm_ids[short[0]]
            raise InsufficientDataError(
                f"firm {f!r} keeps fewer than {min_obs} observations after {max_redraws} redraws",
                firm=f,
            )
    elif pattern == "staggered_entry":
        if T < min_obs:
            raise InsufficientDataError(f"panel is shorter than {min_obs} quarters")
        start = rng.integers(0, T - min_obs + 1, size=N)
        mask = np.arange(T)[None, :] >= start[:, None]
    else:
        raise DomainError(f"unknown missingness pattern {pattern!r}")
    mask &= panel.mask
    values = np.where(mask, panel.values, np.nan)
    return GrowthPanel(panel.firm_ids, panel.timestamps, values, mask, panel.rescaled, panel.sector)


def write_instance(inst, directory):
    """Write ``panel.csv``, ``edges.csv``, ``params.json`` (and ``partition.csv``)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_growth_csv(inst.panel, d / "panel.csv")
    write_edgelist_csv(inst.network, d / "edges.csv")
    if inst.partition is not None:
        write_partition_csv(inst.network.node_ids, inst.partition, d / "partition.csv")
    params = {
        "n": inst.network.n,
        "t": inst.panel.n_times,
        "eps": inst.eps,
        "sigma_common": inst.sigma_common,
        "seed": inst.seed,
        "missing": inst.missing,
        "node_ids": list(inst.network.node_ids),
        "timestamps": [int(x) for x in inst.panel.timestamps],
        "no_common_mode": not inst.has_common_mode,
    }
    (d / "params.json").write_text(json.dumps(params, indent=2, sort_keys=True) + "\n")


def read_instance(directory):
    d = Path(directory)
    params = json.loads((d / "params.json").read_text())
    ids = params["node_ids"]
    panel = read_growth_csv(d / "panel.csv", firm_ids=ids, timestamps=params["timestamps"])
    net = read_edgelist_csv(d / "edges.csv", ids, drop_unknown=False)
    partition = None
    if (d / "partition.csv").exists():
        partition = read_partition_csv(d / "partition.csv", ids)
    return PlantedInstance(
        net,
        panel,
        params["eps"],
        params["sigma_common"],
        params["seed"],
        params["missing"],
        partition,
    )
