"""Structured graph learning: Laplacian operators and a spectrally constrained solver.

A graph on ``p`` nodes is parameterised by a nonnegative weight vector ``w``
with one entry per unordered pair. Pairs ``(i, j)`` with ``j < i`` are
enumerated column by column through the strict lower triangle::

    k = j*p - j*(j+1)/2 + (i - j) - 1

The operator ``L`` maps ``w`` to the Laplacian with off-diagonal entries
``-w_k``; its adjoint ``L*`` maps a symmetric matrix ``Y`` to the vector of
``Y_ii + Y_jj - Y_ij - Y_ji``.

The solver minimises, over ``w >= 0`` and orthonormal ``U`` (p x p-1),

    tr(L(w) K) + beta/2 * ||L(w) - U diag(lam) U^T||_F^2

with ``K = S + alpha (2I - J)``. The first term equals
``tr(L(w) S) + alpha ||L(w)||_1`` for nonnegative weights. Updates alternate
a projected gradient step on ``w`` (step ``1/(2p)``) with an eigenvector
refresh of ``U``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError, NumericalError
from .netstats import Network
from .seeding import derive_seed


@dataclass(frozen=True)
class SpectralTarget:
    """Sorted positive eigenvalues imposed on the learned Laplacian (zero mode dropped)."""

    lambdas: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float).ravel()
        if lam.size and (np.any(lam <= 0) or np.any(np.diff(lam) < 0)):
            raise ContractError("target eigenvalues must be positive and ascending")
        object.__setattr__(self, "lambdas", lam)

    @property
    def p(self):
        return self.lambdas.size + 1


@dataclass
class SolverConfig:
    alpha: float = 0.0
    beta: float = 100.0
    max_iter: int = 5000
    tol: float = 1e-6
    free_indices: np.ndarray = None
    init: str = "pinv"

    def __post_init__(self):
        if self.alpha < 0:
            raise DomainError("alpha must be nonnegative")
        if self.beta <= 0:
            raise DomainError("beta must be positive")
        if self.max_iter < 1:
            raise DomainError("max_iter must be at least 1")
        if self.tol <= 0:
            raise DomainError("tol must be positive")
        if self.init not in ("pinv", "adjoint", "random"):
            raise DomainError(f"unknown init {self.init!r}")


@dataclass
class SolveResult:
    w: np.ndarray
    U: np.ndarray
    objective: list = field(default_factory=list)
    step: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    violations: list = field(default_factory=list)

    def __iter__(self):
        # allows ``w, U, trace = solve_sgl(...)``
        return iter((self.w, self.U, self))


def n_pairs(p):
    return p * (p - 1) // 2


def size_from_pairs(n):
    p = int(round((1 + np.sqrt(1 + 8 * n)) / 2))
    if n_pairs(p) != n:
        raise ContractError(f"{n} is not a valid weight-vector length")
    return p


def pair_index(i, j, p):
    """Position of the pair ``(i, j)``, ``0 <= j < i < p``, in the weight vector."""
    if not (0 <= j < i < p):
        raise DomainError(f"pair_index needs 0 <= j < i < p, got i={i}, j={j}, p={p}")
    return j * p - j * (j + 1) // 2 + (i - j) - 1


def pair_arrays(p):
    """Arrays ``(i, j)``, ``i > j``, listing every pair in weight-vector order."""
    j, i = np.triu_indices(p, 1)
    return i, j


def lap_op(w, p=None):
    w = np.asarray(w, dtype=float)
    if p is None:
        p = size_from_pairs(w.size)
    i, j = pair_arrays(p)
    M = np.zeros((p, p))
    M[i, j] = -w
    M[j, i] = -w
    M[np.diag_indices(p)] = -M.sum(axis=1)
    return M


def lap_adjoint(Y, check=True):
    Y = np.asarray(Y, dtype=float)
    if check and not np.allclose(Y, Y.T, atol=1e-9, rtol=0):
        raise ContractError("lap_adjoint needs a symmetric matrix")
    i, j = pair_arrays(Y.shape[0])
    d = np.diagonal(Y)
    return d[i] + d[j] - Y[i, j] - Y[j, i]


def grad_f(w, c, p=None):
    """Gradient of ``f(w) = 1/2 ||L(w)||_F^2 - c.w``, i.e. ``L*(L(w)) - c``."""
    w = np.asarray(w, dtype=float)
    if p is None:
        p = size_from_pairs(w.size)
    i, j = pair_arrays(p)
    deg = np.zeros(p)
    np.add.at(deg, i, w)
    np.add.at(deg, j, w)
    return deg[i] + deg[j] + 2.0 * w - np.asarray(c, dtype=float)


def build_K(S_hat, alpha):
    S_hat = np.asarray(S_hat, dtype=float)
    p = S_hat.shape[0]
    return S_hat + alpha * (2.0 * np.eye(p) - np.ones((p, p)))


def objective(w, U, lambdas, K, beta):
    Lw = lap_op(w, K.shape[0])
    R = Lw - (U * lambdas) @ U.T
    return float(
        -np.sum(np.log(lambdas)) + np.sum(Lw * K) + 0.5 * beta * np.sum(R * R)
    )


def initial_weights(S_hat, target, init="pinv", seed=0):
    """Starting weights scaled so that ``tr L(w)`` equals the target trace.

    ``pinv`` reads positive partial correlations off the pseudo-inverse of
    ``S_hat``; ``adjoint`` uses the positive part of ``L*(S_hat)`` as in
    the classical heuristic; ``random`` draws uniform weights.
    """
    p = S_hat.shape[0]
    i, j = pair_arrays(p)
    if init == "pinv":
        P = np.linalg.pinv(S_hat, hermitian=True)
        w = np.maximum(0.0, -P[i, j])
    elif init == "adjoint":
        w = np.maximum(0.0, lap_adjoint(S_hat, check=False))
    elif init == "random":
        w = np.random.default_rng(derive_seed(seed, "sgl-init")).random(n_pairs(p))
    else:
        raise DomainError(f"unknown init {init!r}")
    total = 0.5 * float(np.sum(target.lambdas))
    if not np.any(w > 0):
        w = np.ones(n_pairs(p))
    return w * (total / w.sum()) if w.size else w


def _free_mask(free_indices, size):
    if free_indices is None:
        return None
    arr = np.asarray(free_indices)
    if arr.dtype == bool:
        if arr.size != size:
            raise ContractError("boolean free_indices must cover every weight")
        return arr
    mask = np.zeros(size, dtype=bool)
    mask[arr.astype(np.int64)] = True
    return mask


def _top_vectors(Lw):
    try:
        _, V = np.linalg.eigh(Lw)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition of the Laplacian failed: {exc}") from exc
    return V[:, 1:]


def solve_sgl(S_hat, target, cfg=None, seed=0, w0=None):
    """Learn Laplacian weights from a covariance estimate under a spectral target.

    Returns a :class:`SolveResult` (which also unpacks as ``w, U, trace``).
    Iteration stops when the largest weight change falls below ``cfg.tol``.
    When ``max_iter`` runs out first, the iterate with the lowest objective is
    returned and ``converged`` is false. Weights outside
    ``cfg.free_indices`` keep their initial values.
    """
    cfg = cfg or SolverConfig()
    S_hat = np.asarray(S_hat, dtype=float)
    p = S_hat.shape[0]
    if S_hat.shape != (p, p) or not np.allclose(S_hat, S_hat.T, atol=1e-9, rtol=0):
        raise ContractError("S_hat must be a symmetric square matrix")
    if target.p != p:
        raise ContractError(f"target has {target.lambdas.size} eigenvalues, need {p - 1}")
    lam = target.lambdas
    K = build_K(S_hat, cfg.alpha)
    LsK = lap_adjoint(K, check=False)
    w = initial_weights(S_hat, target, cfg.init, seed) if w0 is None else np.array(w0, float)
    if w.size != n_pairs(p) or np.any(w < 0):
        raise ContractError("initial weights must be nonnegative with one entry per pair")
    free = _free_mask(cfg.free_indices, w.size)
    i, j = pair_arrays(p)
    step = 1.0 / (2.0 * p)

    Lw = lap_op(w, p)
    U = _top_vectors(Lw)
    result = SolveResult(w.copy(), U)
    best = objective(w, U, lam, K, cfg.beta)
    result.objective.append(best)
    prev = best
    for it in range(1, cfg.max_iter + 1):
        c = lap_adjoint((U * lam) @ U.T, check=False) - LsK / cfg.beta
        d = np.diagonal(Lw)
        grad = d[i] + d[j] + 2.0 * w - c
        w_new = np.maximum(w - step * grad, 0.0)
        if free is not None:
            w_new = np.where(free, w_new, w)
        dw = float(np.max(np.abs(w_new - w))) if w.size else 0.0
        w = w_new
        Lw = lap_op(w, p)
        U = _top_vectors(Lw)
        obj = objective(w, U, lam, K, cfg.beta)
        result.objective.append(obj)
        result.step.append(dw)
        if obj > prev + 1e-8 * max(1.0, abs(prev)):
            result.violations.append(it)
        prev = obj
        if obj <= best:
            best = obj
            result.w, result.U = w.copy(), U
        result.iterations = it
        if dw < cfg.tol:
            result.converged = True
            result.w, result.U = w.copy(), U
            break
    return result


def adjacency_from_w(w, threshold=1e-8, node_ids=None):
    """Edges at the pairs whose weight exceeds ``threshold``."""
    if threshold < 0:
        raise DomainError("threshold must be nonnegative")
    w = np.asarray(w, dtype=float)
    p = size_from_pairs(w.size)
    i, j = pair_arrays(p)
    keep = w > threshold
    return Network(p, np.column_stack([j[keep], i[keep]]), node_ids)


def top_weight_edges(w, n_edges, candidates=None, node_ids=None, tiebreak=None):
    """Network made of the ``n_edges`` heaviest pairs.

    Ties are broken by ``tiebreak`` (larger first) when given, then by
    position. ``candidates`` restricts the choice to a boolean mask of
    positions.
    """
    w = np.asarray(w, dtype=float)
    p = size_from_pairs(w.size)
    pos = np.arange(w.size) if candidates is None else np.flatnonzero(candidates)
    n_edges = int(min(max(n_edges, 0), pos.size))
    second = np.zeros(pos.size) if tiebreak is None else -np.asarray(tiebreak, float)[pos]
    order = pos[np.lexsort((np.arange(pos.size), second, -w[pos]))[:n_edges]]
    i, j = pair_arrays(p)
    return Network(p, np.column_stack([j[order], i[order]]), node_ids)
