"""Correlation spectra of growth panels and removal of common modes.

Correlations are pairwise-complete: every pair of firms is correlated over
the quarters where both are observed, so panels with staggered entry and
gaps are handled without imputation. Such matrices need not be positive
semidefinite, and small negative eigenvalues are expected.
"""

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate

from .errors import ContractError, DomainError, NumericalError, ProdnetWarning
from .panel import GrowthPanel, rescale_loo
from .seeding import derive_seed

DEFAULT_MIN_OVERLAP = 8


@dataclass
class CorrMatrix:
    entries: np.ndarray
    overlap: np.ndarray
    lag: int = 0
    n_times: int = 0
    min_overlap: int = DEFAULT_MIN_OVERLAP
    firm_ids: list = None
    kind: str = "lag"

    @property
    def size(self):
        return self.entries.shape[0]

    @property
    def symmetric(self):
        return self.lag == 0


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    bulk_lo: float
    bulk_hi: float
    outlier_indices: list
    aspect_ratio: float
    flags: dict = field(default_factory=dict)
    surrogate_mean: np.ndarray = None

    @property
    def top_eigenvector(self):
        return self.eigenvectors[:, -1]

    def to_dict(self):
        out = {
            "eigenvalues": [float(x) for x in self.eigenvalues],
            "bulk_lo": float(self.bulk_lo),
            "bulk_hi": float(self.bulk_hi),
            "outlier_indices": [int(k) for k in self.outlier_indices],
            "aspect_ratio": float(self.aspect_ratio),
            "mp_edges": list(mp_edges(self.aspect_ratio)),
            "flags": dict(self.flags),
        }
        if self.surrogate_mean is not None:
            out["surrogate_mean"] = [float(x) for x in self.surrogate_mean]
        return out


def _pairwise_pearson(xa, ma, xb, mb, min_overlap):
    n = ma @ mb.T
    sx = xa @ mb.T
    sy = ma @ xb.T
    sxx = (xa * xa) @ mb.T
    syy = ma @ (xb * xb).T
    sxy = xa @ xb.T
    with np.errstate(divide="ignore", invalid="ignore"):
        cov = sxy - sx * sy / n
        vx = sxx - sx * sx / n
        vy = syy - sy * sy / n
        r = cov / np.sqrt(vx * vy)
    # relative floor guards pairs whose co-observed window is constant
    floor = 1e-12 * np.maximum(sxx, 1e-300)
    floor_y = 1e-12 * np.maximum(syy, 1e-300)
    valid = (n >= min_overlap) & (vx > floor) & (vy > floor_y)
    r = np.where(valid, np.clip(r, -1.0, 1.0), 0.0)
    return r, n.round().astype(np.int64)


def corr_matrix(g, tau=0, min_overlap=DEFAULT_MIN_OVERLAP):
    """Pairwise-complete correlation of ``g_i(t)`` with ``g_j(t + tau)``.

    Pairs co-observed on fewer than ``min_overlap`` quarters get 0.
    """
    if not g.rescaled:
        raise ContractError("corr_matrix expects a rescaled panel (see rescale_loo)")
    if min_overlap < 2:
        raise DomainError("min_overlap must be at least 2")
    tau = int(tau)
    x = g.filled()
    m = g.mask.astype(float)
    N, T = x.shape
    if abs(tau) >= T:
        entries = np.zeros((N, N))
        overlap = np.zeros((N, N), dtype=np.int64)
    else:
        if tau >= 0:
            a, b = slice(0, T - tau), slice(tau, T)
        else:
            a, b = slice(-tau, T), slice(0, T + tau)
        entries, overlap = _pairwise_pearson(x[:, a], m[:, a], x[:, b], m[:, b], min_overlap)
    if tau == 0:
        entries = 0.5 * (entries + entries.T)
        diag_ok = (np.diag(overlap) >= 2) & (np.diag(entries) != 0)
        entries[np.diag_indices(N)] = np.where(diag_ok, 1.0, 0.0)
    return CorrMatrix(entries, overlap, tau, T, min_overlap, list(g.firm_ids))


def mp_edges(aspect_ratio):
    """Edges ``(1 - sqrt(q))**2`` and ``(1 + sqrt(q))**2`` of the Marchenko-Pastur bulk.

    ``q = 0`` is accepted as the infinitely-long-series limit ``(1, 1)``.
    """
    q = float(aspect_ratio)
    if not np.isfinite(q) or q < 0:
        raise DomainError(f"aspect ratio must be nonnegative, got {aspect_ratio}")
    s = np.sqrt(q)
    return (1.0 - s) ** 2, (1.0 + s) ** 2


def mp_density(x, aspect_ratio):
    """Density of the continuous part of the Marchenko-Pastur law (unit variance)."""
    q = float(aspect_ratio)
    lo, hi = mp_edges(q)
    x = np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        d = np.sqrt(np.clip((hi - x) * (x - lo), 0.0, None)) / (2 * np.pi * q * x)
    return np.where((x > lo) & (x < hi), d, 0.0)


def mp_cdf(x, aspect_ratio):
    """Cumulative distribution of the Marchenko-Pastur law, including the atom at 0 when q > 1."""
    q = float(aspect_ratio)
    if q <= 0:
        raise DomainError("mp_cdf needs q > 0")
    lo, hi = mp_edges(q)
    atom = max(0.0, 1.0 - 1.0 / q)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(x)
    for k, xk in enumerate(x):
        base = atom if xk >= 0 else 0.0
        if xk <= lo:
            out[k] = base
        elif xk >= hi:
            out[k] = 1.0
        else:
            val, _ = integrate.quad(mp_density, lo, xk, args=(q,), limit=200)
            out[k] = base + val
    return out


def ks_distance_mp(eigenvalues, aspect_ratio):
    """Kolmogorov-Smirnov distance between an empirical spectrum and the MP law."""
    lam = np.sort(np.asarray(eigenvalues, dtype=float))
    n = lam.size
    F = mp_cdf(lam, aspect_ratio)
    upper = np.arange(1, n + 1) / n - F
    lower = F - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def _orient(vectors):
    sums = vectors.sum(axis=0)
    signs = np.where(sums < 0, -1.0, 1.0)
    return vectors * signs


def eigendecompose(C, bulk=None):
    """Full eigendecomposition of a lag-0 correlation matrix.

    Eigenvalues ascend. Each eigenvector is signed so its entries sum to a
    nonnegative number. ``bulk`` overrides the Marchenko-Pastur edges used to
    classify outliers.
    """
    if not C.symmetric:
        raise ContractError("eigendecompose needs a symmetric (lag 0) correlation matrix")
    a = np.asarray(C.entries, dtype=float)
    if not np.allclose(a, a.T, atol=1e-12, rtol=0):
        raise ContractError("correlation matrix is not symmetric")
    try:
        vals, vecs = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    q = C.size / C.n_times if C.n_times else 0.0
    lo, hi = mp_edges(q) if bulk is None else bulk
    outliers = [int(k) for k in np.flatnonzero((vals < lo) | (vals > hi))]
    return SpectrumReport(vals, _orient(vecs), float(lo), float(hi), outliers, q)


def surrogate_spectrum(g, n_sets, seed, source="empirical", min_overlap=DEFAULT_MIN_OVERLAP):
    """Spectra of panels redrawn i.i.d. on the mask of ``g``.

    Every observed entry is replaced by a draw from the pooled observed values
    (``empirical``) or from a standard normal (``gaussian``); missing entries
    stay missing. Each surrogate is rescaled and correlated exactly like real
    data. Returns one ascending eigenvalue array per set.
    """
    if n_sets < 1:
        raise DomainError("n_sets must be at least 1")
    if source not in ("empirical", "gaussian"):
        raise DomainError(f"unknown surrogate source {source!r}")
    pool = g.values[g.mask]
    n_obs = pool.size
    spectra = []
    for k in range(n_sets):
        rng = np.random.default_rng(derive_seed(seed, "surrogate", source, k))
        if source == "empirical":
            draws = rng.choice(pool, size=n_obs, replace=True)
        else:
            draws = rng.standard_normal(n_obs)
        values = np.full(g.values.shape, np.nan)
        values[g.mask] = draws
        sur = GrowthPanel(g.firm_ids, g.timestamps, values, g.mask, rescaled=False)
        C = corr_matrix(rescale_loo(sur), 0, min_overlap)
        spectra.append(np.linalg.eigvalsh(C.entries))
    return spectra


def surrogate_bulk(spectra, widen=3.0):
    """Benchmark edges from surrogate spectra.

    The edges are the extreme surrogate eigenvalues, pushed outward by
    ``widen`` standard deviations of the per-set extremes.
    """
    lows = np.array([s[0] for s in spectra])
    highs = np.array([s[-1] for s in spectra])
    sd_lo = lows.std(ddof=1) if len(spectra) > 1 else 0.0
    sd_hi = highs.std(ddof=1) if len(spectra) > 1 else 0.0
    return float(lows.min() - widen * sd_lo), float(highs.max() + widen * sd_hi)


def _check_unit(u, n):
    u = np.asarray(u, dtype=float)
    if u.shape != (n,):
        raise ContractError(f"mode vector must have length {n}")
    norm = np.linalg.norm(u)
    if norm == 0:
        raise DomainError("mode vector is zero")
    if abs(norm - 1.0) > 1e-9:
        raise ContractError(f"mode vector must have unit norm, got {norm}")
    return u


def extract_mode(g, u):
    """Time series of the projection of ``g`` onto ``u``.

    With missing data the projection at time t is normalised by the squared
    norm of ``u`` restricted to the firms observed at t, which reduces to
    ``u . g(t)`` for a complete panel. Times with no usable firm are ``nan``.
    """
    u = _check_unit(u, g.n_firms)
    num = u @ g.filled()
    den = (u * u) @ g.mask.astype(float)
    out = np.full(g.n_times, np.nan)
    ok = den > 1e-12
    out[ok] = num[ok] / den[ok]
    return out


def remove_mode(g, u):
    """Subtract ``u_i * v(t)`` from every observed entry, ``v`` the extracted mode."""
    u = _check_unit(u, g.n_firms)
    v = extract_mode(g, u)
    v0 = np.where(np.isnan(v), 0.0, v)
    y = g.filled() - np.outer(u, v0)
    return g.with_values(np.where(g.mask, y, np.nan))


def clean_market_mode(
    g,
    n_modes=1,
    min_overlap=DEFAULT_MIN_OVERLAP,
    n_surrogates=10,
    seed=0,
    source="empirical",
):
    """Remove the leading correlation mode(s) from a rescaled panel.

    Returns ``(cleaned, mode, report)``. ``mode`` is the extracted time series
    (an ``(n_modes, T)`` array when more than one mode is removed) and the
    report's bulk comes from ``n_surrogates`` surrogate panels. The flag
    ``top_mode_in_bulk`` marks a leading eigenvalue that the surrogate
    benchmark cannot tell apart from noise. The cleaned panel is rescaled
    again so its correlations keep a unit diagonal.
    """
    if not g.rescaled:
        raise ContractError("clean_market_mode expects a rescaled panel")
    if n_modes < 1 or n_modes >= g.n_firms:
        raise DomainError("n_modes must be between 1 and N - 1")
    C = corr_matrix(g, 0, min_overlap)
    surrogate_mean = None
    bulk = None
    if n_surrogates:
        spectra = surrogate_spectrum(g, n_surrogates, seed, source, min_overlap)
        bulk = surrogate_bulk(spectra)
        surrogate_mean = np.mean(spectra, axis=0)
    report = eigendecompose(C, bulk=bulk)
    report.surrogate_mean = surrogate_mean
    in_bulk = [k for k in range(n_modes) if report.eigenvalues[-1 - k] <= report.bulk_hi]
    report.flags["top_mode_in_bulk"] = 0 in in_bulk
    report.flags["modes_in_bulk"] = in_bulk
    report.flags["bulk_source"] = f"surrogate:{source}" if n_surrogates else "marchenko-pastur"
    if in_bulk:
        warnings.warn(
            f"removed mode(s) {in_bulk} are not separated from the noise bulk",
            ProdnetWarning,
            stacklevel=2,
        )
    cur = g
    modes = []
    for k in range(n_modes):
        u = report.eigenvectors[:, -1 - k]
        u = u / np.linalg.norm(u)
        modes.append(extract_mode(cur, u))
        cur = remove_mode(cur, u)
    cleaned = rescale_loo(cur)
    mode = modes[0] if n_modes == 1 else np.vstack(modes)
    return cleaned, mode, report


def sector_clean(g, sector_labels, loading="correlation"):
    """Subtract each firm's exposure to the summed growth of its sector.

    The exposure is the correlation between the firm and the sector sum on
    their co-observed quarters (``loading="regression"`` uses the least
    squares slope instead). Firms alone in their sector are returned
    unchanged with a warning.
    """
    if sector_labels is None or len(sector_labels) != g.n_firms:
        raise ContractError("every firm needs a sector label")
    if loading not in ("correlation", "regression"):
        raise DomainError(f"unknown loading {loading!r}")
    labels = np.asarray([str(s) for s in sector_labels])
    x = g.filled()
    out = x.copy()
    singletons = []
    for sec in sorted(set(labels)):
        rows = np.flatnonzero(labels == sec)
        if rows.size == 1:
            singletons.append(g.firm_ids[rows[0]])
            continue
        s = x[rows].sum(axis=0)
        for i in rows:
            obs = g.mask[i]
            if obs.sum() < 2:
                continue
            xi, si = x[i, obs], s[obs]
            xc, sc = xi - xi.mean(), si - si.mean()
            sxx, sss = xc @ xc, sc @ sc
            if sxx <= 0 or sss <= 0:
                k = 0.0
            elif loading == "correlation":
                k = (xc @ sc) / np.sqrt(sxx * sss)
            else:
                k = (xc @ sc) / sss
            out[i, obs] = xi - k * si
    if singletons:
        warnings.warn(
            f"firms alone in their sector left unchanged: {singletons}",
            ProdnetWarning,
            stacklevel=2,
        )
    return g.with_values(np.where(g.mask, out, np.nan))


def sym_lag_corr(g, min_overlap=DEFAULT_MIN_OVERLAP):
    """``C(0) + (C(1) + C(-1)) / 2`` for a rescaled panel."""
    c0 = corr_matrix(g, 0, min_overlap)
    cp = corr_matrix(g, 1, min_overlap)
    cm = corr_matrix(g, -1, min_overlap)
    entries = c0.entries + 0.5 * (cp.entries + cm.entries)
    entries = 0.5 * (entries + entries.T)
    return CorrMatrix(entries, c0.overlap, 0, c0.n_times, min_overlap, c0.firm_ids, "symmetrised")


def write_corr_csv(C, path, overlap_path=None):
    """Dense CSV with a ``firm_id`` header; overlaps go to a sidecar file."""
    ids = C.firm_ids or [str(k) for k in range(C.size)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["firm_id"] + list(ids))
        for f, row in zip(ids, C.entries):
            w.writerow([f] + [repr(float(x)) for x in row])
    if overlap_path is not None:
        with Path(overlap_path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["firm_id"] + list(ids))
            for f, row in zip(ids, C.overlap):
                w.writerow([f] + [str(int(x)) for x in row])


def read_corr_csv(path, overlap_path=None, lag=0, n_times=0):
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    ids = rows[0][1:]
    entries = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    if overlap_path is not None:
        with Path(overlap_path).open(newline="") as fh:
            orows = list(csv.reader(fh))
        overlap = np.array([[int(x) for x in r[1:]] for r in orows[1:]], dtype=np.int64)
    else:
        overlap = np.full(entries.shape, n_times, dtype=np.int64)
    return CorrMatrix(entries, overlap, lag, n_times, firm_ids=ids)


def write_spectrum_json(report, path):
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
