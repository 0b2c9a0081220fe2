"""Block-wise network reconstruction from a cleaned correlation matrix.

Firms are split by sector. Each sector's principal submatrix is solved on
its own with an Erdos-Renyi spectral target. Each pair of sectors is then
solved on the union of the two sectors with a two-block target, where only
the cross-sector weights are free and the within-sector weights stay at
their first-stage values. The regularisation strength of every subproblem
is tuned so the recovered edge density matches a prior guess.
"""

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import (
    CalibrationError,
    ContractError,
    DomainError,
    ParseError,
    ProdnetError,
    ReconstructionError,
)
from .netstats import BlockScheme, Network, generate_er, generate_sbm
from .seeding import derive_seed
from .sgl import (
    SolverConfig,
    SpectralTarget,
    adjacency_from_w,
    initial_weights,
    n_pairs,
    pair_arrays,
    solve_sgl,
    top_weight_edges,
)

logger = logging.getLogger(__name__)

SPECTRUM_FLOOR = 1e-9
DENSITY_BAND = 0.10
MAX_PROBES = 20
ZERO_THRESHOLD = 1e-8


def reconstruction_solver():
    """Solver settings used for reconstruction unless a plan overrides them.

    A weak spectral penalty lets the data term shape the support, and the
    fixed iteration budget keeps every calibration probe affordable.
    """
    return SolverConfig(alpha=0.0, beta=0.5, max_iter=300, tol=1e-6)


@dataclass
class ReconstructionPlan:
    partition: list
    target_density_diag: dict
    target_density_offdiag: dict
    spectra_samples: int = 1000
    solver: SolverConfig = field(default_factory=reconstruction_solver)
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        self.partition = [str(x) for x in self.partition]
        blocks = self.blocks
        diag = {str(k): float(v) for k, v in self.target_density_diag.items()}
        off = {}
        for key, v in self.target_density_offdiag.items():
            a, b = sorted(str(x) for x in key)
            off[(a, b)] = float(v)
        for b in blocks:
            if b not in diag:
                raise ContractError(f"no target density for sector {b!r}")
        for a, b in combinations(blocks, 2):
            if (a, b) not in off:
                raise ContractError(f"no target density for sector pair ({a!r}, {b!r})")
        for v in list(diag.values()) + list(off.values()):
            if not 0 <= v <= 1:
                raise DomainError("target densities must lie in [0, 1]")
        self.target_density_diag = diag
        self.target_density_offdiag = off

    @property
    def blocks(self):
        return sorted(set(self.partition))

    def members(self):
        labels = np.asarray(self.partition)
        return {b: np.flatnonzero(labels == b) for b in self.blocks}

    def implied_edges(self):
        """Expected edge count under the plan's densities."""
        sizes = {b: len(m) for b, m in self.members().items()}
        total = sum(self.target_density_diag[b] * s * (s - 1) / 2 for b, s in sizes.items())
        total += sum(v * sizes[a] * sizes[b] for (a, b), v in self.target_density_offdiag.items())
        return total

    @classmethod
    def from_network(cls, net, partition, **kwargs):
        """Plan whose densities are those of ``net`` (useful on planted instances)."""
        from .netstats import block_densities

        rho = block_densities(net, partition)
        blocks = sorted(set(str(x) for x in partition))
        diag = {b: rho[k, k] for k, b in enumerate(blocks)}
        off = {(a, b): rho[ka, kb] for (ka, a), (kb, b) in combinations(enumerate(blocks), 2)}
        return cls(partition, diag, off, **kwargs)


def _laplacian_spectra(nets, n):
    out = np.empty((len(nets), n))
    for k, net in enumerate(nets):
        L = np.zeros((n, n))
        if net.m:
            a, b = net.edges[:, 0], net.edges[:, 1]
            L[a, b] = -1.0
            L[b, a] = -1.0
            L[np.diag_indices(n)] = -L.sum(axis=1)
        out[k] = np.linalg.eigvalsh(L)
    return out


def average_laplacian_spectrum(draw, n, n_samples, seed):
    """Element-wise mean of sorted Laplacian spectra of ``n_samples`` random graphs."""
    if n_samples < 1:
        raise DomainError("n_samples must be at least 1")
    total = np.zeros(n)
    for k in range(n_samples):
        total += _laplacian_spectra([draw(derive_seed(seed, "spectrum", k))], n)[0]
    return total / n_samples


def _to_target(mean_spectrum):
    lam = np.maximum(np.sort(mean_spectrum)[1:], SPECTRUM_FLOOR)
    return SpectralTarget(lam)


def spectral_target_er(n, p, n_samples=1000, seed=0):
    if n < 2:
        raise DomainError("spectral target needs at least two nodes")
    return _to_target(average_laplacian_spectrum(lambda s: generate_er(n, p, s), n, n_samples, seed))


def spectral_target_block(sizes, densities, n_samples=1000, seed=0):
    sizes = [int(s) for s in sizes]
    n = sum(sizes)
    if n < 2:
        raise DomainError("spectral target needs at least two nodes")
    width = len(str(len(sizes)))
    partition = [f"{b:0{width}d}" for b, s in enumerate(sizes) for _ in range(s)]
    scheme = BlockScheme(partition, densities)
    return _to_target(average_laplacian_spectrum(lambda s: generate_sbm(scheme, s), n, n_samples, seed))


@dataclass
class Calibration:
    alpha: float
    network: Network
    w: np.ndarray
    density: float
    probes: list
    method: str = "bracketing"
    converged: bool = True


def _density(w, candidates, threshold):
    vals = w if candidates is None else w[candidates]
    return float(np.mean(vals > threshold)) if vals.size else 0.0


def calibrate_alpha(
    S_hat,
    target,
    density_goal,
    cfg=None,
    seed=0,
    w0=None,
    candidates=None,
    node_ids=None,
    undershoot="raise",
):
    """Tune the L1 strength so the recovered network has the requested density.

    Every probe solves from the same starting weights, so the density is a
    function of alpha alone. Alpha starts at 0 and grows (at least doubling)
    until the density falls below the goal; the bracket is then narrowed
    until the density is within 10% of the goal, for at most 20 probes. If the density does not
    fall monotonically with alpha, or the probes run out, the densest solve
    still at or above the goal is thresholded at the quantile giving exactly
    the goal (``method == "quantile"``). The same thresholding tops up a
    solve that is already too sparse at alpha 0, ranking pairs with zero
    weight by their starting weights; when even those cannot supply enough
    pairs a :class:`CalibrationError` is raised, unless ``undershoot`` is
    ``"accept"``: then every supported pair is kept and the result is
    flagged ``method == "undershoot"``. Both phases use secant steps rather
    than plain doubling and halving, since density falls smoothly with alpha
    and every probe is a full solve. ``candidates`` restricts both the
    density and the edge set to a boolean mask of weight positions.
    """
    if not 0 < density_goal < 1:
        raise DomainError("density_goal must lie in (0, 1)")
    if undershoot not in ("raise", "accept"):
        raise DomainError(f"undershoot must be 'raise' or 'accept', got {undershoot!r}")
    cfg = cfg or reconstruction_solver()
    S_hat = np.asarray(S_hat, dtype=float)
    p = S_hat.shape[0]
    if w0 is None:
        w0 = initial_weights(S_hat, target, cfg.init, seed)
    n_cand = n_pairs(p) if candidates is None else int(np.sum(candidates))
    goal_edges = int(round(density_goal * n_cand))
    lo_band, hi_band = density_goal * (1 - DENSITY_BAND), density_goal * (1 + DENSITY_BAND)
    probes = []
    solved = {}

    def probe(alpha):
        res = solve_sgl(S_hat, target, replace(cfg, alpha=float(alpha)), seed, w0=w0)
        d = _density(res.w, candidates, ZERO_THRESHOLD)
        probes.append({"alpha": float(alpha), "density": d, "converged": res.converged})
        solved[float(alpha)] = res
        logger.debug("alpha=%.6g density=%.6g", alpha, d)
        return d

    def finish(alpha, method="bracketing", n_edges=goal_edges):
        res = solved[float(alpha)]
        if method in ("quantile", "undershoot"):
            net = top_weight_edges(res.w, n_edges, candidates, node_ids, tiebreak=w0)
            keep = None
        else:
            keep = res.w > ZERO_THRESHOLD
            if candidates is not None:
                keep &= candidates
            i, j = pair_arrays(p)
            net = Network(p, np.column_stack([j[keep], i[keep]]), node_ids)
        d = net.m / n_cand if n_cand else 0.0
        return Calibration(float(alpha), net, res.w, d, probes, method, res.converged)

    def fallback():
        above = [(a, r) for a, r in solved.items() if _density(r.w, candidates, ZERO_THRESHOLD) >= density_goal]
        if not above:
            raise CalibrationError("no probe reached the density goal", probes)
        best = max(above, key=lambda ar: ar[0])[0]
        logger.info("alpha calibration fell back to quantile thresholding")
        return finish(best, "quantile")

    d0 = probe(0.0)
    if lo_band <= d0 <= hi_band:
        return finish(0.0)
    if d0 < lo_band:
        # raising alpha only sparsifies; top up from the alpha=0 solve, ranking
        # pairs the solver zeroed by their starting weights
        support = (solved[0.0].w > ZERO_THRESHOLD) | (w0 > ZERO_THRESHOLD)
        if candidates is not None:
            support &= candidates
        if int(support.sum()) < goal_edges:
            if undershoot == "accept":
                logger.warning(
                    "density %.4g at alpha=0 is below the goal %.4g; keeping the %d supported pairs",
                    d0,
                    density_goal,
                    int(support.sum()),
                )
                return finish(0.0, "undershoot", int(support.sum()))
            raise CalibrationError(
                f"density {d0:.4g} at alpha=0 is below the goal {density_goal:.4g} and the "
                "data rank too few pairs to reach it",
                probes,
            )
        logger.info("density at alpha=0 is below the goal; thresholding by quantile")
        return finish(0.0, "quantile")
    a_lo, d_lo = 0.0, d0
    a_hi = 0.1
    while True:
        if len(probes) >= MAX_PROBES:
            return fallback()
        d_hi = probe(a_hi)
        if lo_band <= d_hi <= hi_band:
            return finish(a_hi)
        if d_hi > d_lo:
            return fallback()
        if d_hi < lo_band:
            break
        # extrapolate the secant through the last two probes, overshooting a
        # little so the next probe is likely to bracket the goal
        slope = (d_lo - d_hi) / (a_hi - a_lo)
        a_lo, d_lo = a_hi, d_hi
        guess = a_hi + 1.2 * (d_hi - density_goal) / slope if slope > 0 else 2.0 * a_hi
        a_hi = min(max(guess, 2.0 * a_hi), 16.0 * a_hi)
    side = 0
    while len(probes) < MAX_PROBES:
        # false position on the bracket, with the Illinois halving of the
        # stale end, clipped away from the endpoints
        f_lo, f_hi = d_lo - density_goal, d_hi - density_goal
        if side == 1:
            f_hi *= 0.5
        elif side == -1:
            f_lo *= 0.5
        span = a_hi - a_lo
        mid = a_lo + span * f_lo / (f_lo - f_hi)
        mid = min(max(mid, a_lo + 0.05 * span), a_hi - 0.05 * span)
        d = probe(mid)
        if lo_band <= d <= hi_band:
            return finish(mid)
        if d > d_lo or d < d_hi:
            return fallback()
        if d > hi_band:
            a_lo, d_lo, side = mid, d, 1
        else:
            a_hi, d_hi, side = mid, d, -1
    return fallback()


def _block_report(cal, goal, size):
    return {
        "alpha": cal.alpha,
        "density": cal.density,
        "goal": goal,
        "method": cal.method,
        "converged": bool(cal.converged),
        "probes": len(cal.probes),
        "size": size,
    }


def _map(fn, items, n_jobs):
    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _run_guarded(fn, key):
    try:
        return key, fn(key), None
    except (ProdnetError, np.linalg.LinAlgError) as exc:
        return key, None, exc


def reconstruct_network(C_clean, plan):
    """Reconstruct the network behind a cleaned lag-0 correlation matrix.

    Returns ``(network, report)``. The report lists, per sector and per
    sector pair, the calibrated alpha, achieved and requested density,
    calibration method and solver convergence. If some subproblem fails a
    :class:`ReconstructionError` carries the blocks that succeeded.
    """
    if C_clean.lag != 0:
        raise ContractError("reconstruction needs a lag-0 correlation matrix")
    S = np.asarray(C_clean.entries, dtype=float)
    N = S.shape[0]
    if len(plan.partition) != N:
        raise ContractError("partition must label every firm")
    node_ids = tuple(C_clean.firm_ids) if C_clean.firm_ids else None
    members = plan.members()
    blocks = plan.blocks
    cfg = plan.solver
    started = time.perf_counter()

    def solve_diag(b):
        idx = members[b]
        goal = plan.target_density_diag[b]
        if idx.size < 2 or goal <= 0:
            return None
        if goal >= 1:
            w = np.ones(n_pairs(idx.size))
            return Calibration(0.0, adjacency_from_w(w, 0.5), w, 1.0, [], "complete")
        target = spectral_target_er(idx.size, goal, plan.spectra_samples, derive_seed(plan.seed, "target", b))
        sub = S[np.ix_(idx, idx)]
        return calibrate_alpha(sub, target, goal, cfg, derive_seed(plan.seed, "solve", b))

    diag_out = _map(lambda b: _run_guarded(solve_diag, b), blocks, plan.n_jobs)
    failures = {k: str(e) for k, _, e in diag_out if e is not None}
    diag = {k: r for k, r, e in diag_out if e is None}

    def solve_pair(pair):
        a, b = pair
        if a in failures or b in failures:
            raise CalibrationError("a sector in this pair failed")
        goal = plan.target_density_offdiag[pair]
        ia, ib = members[a], members[b]
        na, nb = ia.size, ib.size
        if goal <= 0 or na == 0 or nb == 0:
            return None
        idx = np.concatenate([ia, ib])
        p = idx.size
        rho = np.array(
            [[plan.target_density_diag[a], goal], [goal, plan.target_density_diag[b]]]
        )
        target = spectral_target_block(
            [na, nb], rho, plan.spectra_samples, derive_seed(plan.seed, "target", a, b)
        )
        sub = S[np.ix_(idx, idx)]
        seed = derive_seed(plan.seed, "solve", a, b)
        w0 = initial_weights(sub, target, cfg.init, seed)
        i, j = pair_arrays(p)
        cross = (j < na) & (i >= na)
        for start, size, res in ((0, na, diag.get(a)), (na, nb, diag.get(b))):
            inside = (j >= start) & (i < start + size)
            w0[inside] = 0.0 if res is None else res.w
        if goal >= 1:
            w = np.where(cross, 1.0, 0.0)
            net = adjacency_from_w(w, 0.5)
            return Calibration(0.0, net, w, 1.0, [], "complete")
        pair_cfg = replace(cfg, free_indices=cross)
        # a pair of sectors whose data link too few firms keeps the links it has
        return calibrate_alpha(
            sub, target, goal, pair_cfg, seed, w0=w0, candidates=cross, undershoot="accept"
        )

    pairs = list(combinations(blocks, 2))
    off_out = _map(lambda pr: _run_guarded(solve_pair, pr), pairs, plan.n_jobs)
    for k, _, e in off_out:
        if e is not None:
            failures[f"{k[0]}|{k[1]}"] = str(e)
    off = {k: r for k, r, e in off_out if e is None}

    edges = []
    report = {"diagonal": {}, "offdiagonal": {}}
    for b in blocks:
        res = diag.get(b)
        goal = plan.target_density_diag[b]
        if res is None:
            if b not in failures:
                report["diagonal"][b] = {"density": 0.0, "goal": goal, "method": "skipped"}
            continue
        idx = members[b]
        edges.append(idx[res.network.edges])
        report["diagonal"][b] = _block_report(res, goal, int(idx.size))
    for pair in pairs:
        res = off.get(pair)
        key = f"{pair[0]}|{pair[1]}"
        goal = plan.target_density_offdiag[pair]
        if res is None:
            if key not in failures:
                report["offdiagonal"][key] = {"density": 0.0, "goal": goal, "method": "skipped"}
            continue
        idx = np.concatenate([members[pair[0]], members[pair[1]]])
        edges.append(idx[res.network.edges])
        report["offdiagonal"][key] = _block_report(res, goal, int(idx.size))
    all_edges = np.vstack(edges) if edges else np.zeros((0, 2), dtype=np.int64)
    net = Network(N, all_edges, node_ids)
    report["n_edges"] = net.m
    report["implied_edges"] = plan.implied_edges()
    logger.info("reconstruction finished in %.1f s", time.perf_counter() - started)
    if failures:
        raise ReconstructionError(
            f"{len(failures)} block subproblem(s) failed: {sorted(failures)}",
            completed={"network": net, "report": report},
            failures=failures,
        )
    return net, report


def read_density_table(path, partition):
    """Read ``block_a,block_b,density`` rows; ``block_a == block_b`` for sector densities."""
    diag, off = {}, {}
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["block_a", "block_b", "density"]:
            raise ParseError("density table header must be block_a,block_b,density", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                a, b, v = row[0].strip(), row[1].strip(), float(row[2])
            except (IndexError, ValueError):
                raise ParseError("expected block_a,block_b,density", line=lineno) from None
            if a == b:
                diag[a] = v
            else:
                off[tuple(sorted((a, b)))] = v
    return diag, off


def write_density_table(plan, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block_a", "block_b", "density"])
        for b in plan.blocks:
            w.writerow([b, b, repr(plan.target_density_diag[b])])
        for (a, b), v in sorted(plan.target_density_offdiag.items()):
            w.writerow([a, b, repr(v)])
