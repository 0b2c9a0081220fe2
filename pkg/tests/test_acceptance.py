"""Exit criteria. Each test prints one PASS/FAIL line and then asserts it.

Run alone with ``pytest -m acceptance -v``.
"""

import hashlib
import time
import warnings

import numpy as np
import pytest

from prodnet.cli import main
from prodnet.errors import ProdnetWarning
from prodnet.evalx import benchmark_comparison
from prodnet.netstats import (
    Network,
    avg_corr_on_network,
    benchmark_avg_corr,
    benchmark_params,
    decode_upper,
    distance_decay,
    read_edgelist_csv,
    summary,
    write_edgelist_csv,
)
from prodnet.panel import GrowthPanel, rescale_loo
from prodnet.pipeline import ReconstructionPlan, reconstruct_network
from prodnet.sgl import (
    SolverConfig,
    SpectralTarget,
    grad_f,
    lap_adjoint,
    lap_op,
    n_pairs,
    solve_sgl,
)
from prodnet.spectral import (
    clean_market_mode,
    corr_matrix,
    eigendecompose,
    ks_distance_mp,
    mp_edges,
    surrogate_spectrum,
)
from prodnet.synth import (
    FactorModelSpec,
    gen_factor_panel,
    gen_gmrf_panel,
    planted_block_instance,
    sigma_for_top_eigenvalue,
)

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys):
    def say(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return say


# ---------------------------------------------------------------- 1


def test_criterion_1_toy_common_mode(verdict):
    start = time.perf_counter()
    n, t = 100, 200
    spec = FactorModelSpec(n, t, sigma=sigma_for_top_eigenvalue(n, 16.0), mode="sine", frequency=0.02)
    panel, v = gen_factor_panel(spec, seed=0)
    with warnings.catch_warnings():
        warnings.simplefilter("error", ProdnetWarning)
        _, mode, rep = clean_market_mode(rescale_loo(panel), n_surrogates=10, seed=0)
    r = abs(np.corrcoef(mode, v)[0, 1])
    elapsed = time.perf_counter() - start
    outside = not rep.flags["top_mode_in_bulk"] and rep.eigenvalues[-1] > rep.bulk_hi
    ok = r > 0.9 and outside and elapsed < 10
    verdict(
        1,
        ok,
        f"|corr(mode, sine)| = {r:.3f} (> 0.9), lambda_max = {rep.eigenvalues[-1]:.2f} "
        f"vs surrogate bulk edge {rep.bulk_hi:.2f}, {elapsed:.1f} s (< 10 s)",
    )


# ---------------------------------------------------------------- 2


def test_criterion_2_marchenko_pastur(verdict):
    start = time.perf_counter()
    n, t = 200, 800
    q = n / t
    x = np.random.default_rng(2024).standard_normal((n, t))
    g = GrowthPanel([f"f{k}" for k in range(n)], np.arange(t), x)
    lam = eigendecompose(corr_matrix(rescale_loo(g))).eigenvalues
    lo, hi = mp_edges(q)
    inside = float(np.mean((lam >= lo - 0.1) & (lam <= hi + 0.1)))
    sets = surrogate_spectrum(g, 10, seed=7, source="gaussian")
    ks = float(np.mean([ks_distance_mp(s, q) for s in sets]))
    elapsed = time.perf_counter() - start
    ok = inside >= 0.99 and ks < 0.05 and elapsed < 60
    verdict(
        2,
        ok,
        f"{100 * inside:.1f}% of eigenvalues in the widened MP band (>= 99%), "
        f"mean KS over 10 sets = {ks:.4f} (< 0.05), {elapsed:.1f} s (< 60 s)",
    )


# ---------------------------------------------------------------- 3 and 4


def common_mode_instance(seed):
    inst = planted_block_instance([100, 100, 100], 0.08, 0.01, 1000, eps=1.0, sigma_common=0.3, seed=seed)
    g = rescale_loo(inst.panel)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ProdnetWarning)
        cleaned, _, _ = clean_market_mode(g, n_surrogates=10, seed=seed)
    return inst, corr_matrix(g), corr_matrix(cleaned)


@pytest.fixture(scope="module")
def common_mode_runs():
    return [common_mode_instance(seed) for seed in range(5)]


def test_criterion_3_cleaning_raises_signal(verdict, common_mode_runs):
    passes, lines = 0, []
    for seed, (inst, raw, clean) in enumerate(common_mode_runs):
        params = benchmark_params(inst.network)["er"]
        stats = []
        for C in (raw, clean):
            true_mean = avg_corr_on_network(C, inst.network)[0]
            mean, std = benchmark_avg_corr(C, "er", params, 50, seed)
            stats.append((true_mean, mean, std))
        beats = all(tm > m + 3 * s for tm, m, s in stats)
        ratio = stats[1][1] / stats[0][1]
        ok = beats and ratio < 0.5
        passes += ok
        lines.append(
            f"seed {seed}: raw {stats[0][0]:.3f} vs ER {stats[0][1]:.3f}+-{stats[0][2]:.3f}, "
            f"cleaned {stats[1][0]:.3f} vs ER {stats[1][1]:.4f}+-{stats[1][2]:.4f}, ER ratio {ratio:.3f}"
        )
    verdict(3, passes >= 3, f"{passes}/5 seeds pass (majority needed); " + "; ".join(lines))


def test_criterion_4_distance_decay(verdict, common_mode_runs):
    ok_all, lines = True, []
    for seed, (inst, _, clean) in enumerate(common_mode_runs):
        d = distance_decay(clean, inst.network, 3)
        ok = None not in d and d[0] > d[1] > d[2]
        ok_all &= ok
        lines.append(f"seed {seed}: " + " > ".join(f"{x:.4f}" for x in d))
    verdict(4, ok_all, "cleaned D(1) > D(2) > D(3) in every seed; " + "; ".join(lines))


# ---------------------------------------------------------------- 5


def test_criterion_5_operator_algebra(verdict):
    start = time.perf_counter()
    r = np.random.default_rng(5)
    adj_err = 0.0
    for _ in range(1000):
        p = int(r.integers(3, 13))
        w = r.normal(size=n_pairs(p))
        Y = r.normal(size=(p, p))
        Y = (Y + Y.T) / 2
        adj_err = max(adj_err, abs(np.sum(lap_op(w) * Y) - w @ lap_adjoint(Y)))
    psd_min, row_max = np.inf, 0.0
    for _ in range(1000):
        p = int(r.integers(2, 13))
        L = lap_op(r.random(n_pairs(p)))
        psd_min = min(psd_min, np.linalg.eigvalsh(L).min())
        row_max = max(row_max, np.abs(L.sum(axis=1)).max())
    grad_err, h = 0.0, 1e-6
    for _ in range(100):
        w = r.random(n_pairs(8))
        c = r.normal(size=w.size)
        d = r.normal(size=w.size)
        f = lambda z: 0.5 * np.sum(lap_op(z) ** 2) - c @ z  # noqa: E731
        fd = (f(w + h * d) - f(w - h * d)) / (2 * h)
        an = grad_f(w, c) @ d
        grad_err = max(grad_err, abs(fd - an) / max(1.0, abs(an)))
    elapsed = time.perf_counter() - start
    ok = adj_err < 1e-10 and psd_min >= -1e-9 and row_max < 1e-9 and grad_err < 1e-5 and elapsed < 30
    verdict(
        5,
        ok,
        f"adjoint max error {adj_err:.1e} (< 1e-10), min Laplacian eigenvalue {psd_min:.1e}, "
        f"max row sum {row_max:.1e}, gradient relative error {grad_err:.1e} (< 1e-5), {elapsed:.1f} s (< 30 s)",
    )


# ---------------------------------------------------------------- 6


def net_laplacian(net):
    A = net.adjacency().toarray()
    return np.diag(A.sum(axis=1)) - A


def test_criterion_6_spectrum_fidelity(verdict):
    from prodnet.netstats import generate_er

    net = generate_er(12, 0.3, 1)
    spectrum = np.linalg.eigvalsh(net_laplacian(net))
    assert spectrum[1] > 1e-9, "the planted graph must be connected"
    target = SpectralTarget(spectrum[1:])
    inst = gen_gmrf_panel(net, 500, 1.0, seed=1)
    C = corr_matrix(rescale_loo(inst.panel)).entries
    errs = []
    for beta in (10, 100, 1000):
        res = solve_sgl(C, target, SolverConfig(alpha=0.0, beta=beta), seed=0)
        ev = np.linalg.eigvalsh(lap_op(res.w))[1:]
        errs.append(float(np.mean(np.abs(ev - target.lambdas))))
    two = solve_sgl(np.zeros((2, 2)), SpectralTarget([2.0]), SolverConfig(alpha=0.0)).w[0]
    ok = errs[0] > errs[1] > errs[2] and abs(two - 1) < 1e-3
    verdict(
        6,
        ok,
        "eigenvalue MAE at beta 10/100/1000 = " + " > ".join(f"{e:.2e}" for e in errs)
        + f", p=2 weight {two:.6f} (1 +- 1e-3)",
    )


# ---------------------------------------------------------------- 7


def reconstruction_run(seed):
    inst = planted_block_instance([100, 100, 100], 0.08, 0.01, 4000, eps=1.0, seed=seed)
    g = rescale_loo(inst.panel)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ProdnetWarning)
        cleaned, _, _ = clean_market_mode(g, n_surrogates=10, seed=seed)
    plan = ReconstructionPlan.from_network(inst.network, inst.partition, seed=seed)
    net, _ = reconstruct_network(corr_matrix(cleaned), plan)
    return benchmark_comparison(inst.network, net, inst.partition, n_draws=50, seed=seed)


@pytest.mark.slow
def test_criterion_7_reconstruction_dominance(verdict):
    start = time.perf_counter()
    reports = [reconstruction_run(seed) for seed in range(5)]
    elapsed = time.perf_counter() - start
    wins = {
        k: sum(r["exceeds"]["er"][k] and r["exceeds"]["sbm"][k] for r in reports)
        for k in ("tpr", "accuracy", "f1")
    }
    f1 = [r["pred"]["f1"] for r in reports]
    sbm_f1 = [r["sbm"]["f1"]["mean"] for r in reports]
    ok = all(v >= 4 for v in wins.values()) and elapsed < 600
    verdict(
        7,
        ok,
        f"seeds beating ER and SBM by > 2 std: tpr {wins['tpr']}/5, accuracy {wins['accuracy']}/5, "
        f"f1 {wins['f1']}/5 (>= 4 each); F1 {np.mean(f1):.3f} vs SBM {np.mean(sbm_f1):.3f}; "
        f"{elapsed:.0f} s (< 600 s)",
    )


# ---------------------------------------------------------------- 8


def digest(directory):
    h = hashlib.sha256()
    for p in sorted(directory.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(directory)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def config(path, body):
    path.write_text(body)
    return str(path)


def test_criterion_8_determinism(verdict, tmp_path):
    synth = (
        "[run]\nseed = 21\n[synth]\nsizes = 15, 15\np_in = 0.3\np_out = 0.03\nt = 400\n"
        "sigma_common = 0.4\nmissing = random\np_miss = 0.05\n[output]\ndirectory = {out}\n"
    )
    run = (
        "[run]\nseed = 21\n[data]\npanel = bundle_a/panel.csv\nedgelist = bundle_a/edges.csv\n"
        "partition = bundle_a/partition.csv\ntruth = bundle_a/edges.csv\n"
        "prediction = bundle_a/edges.csv\n[clean]\nsurrogates = 4\n[netcorr]\ntaus = 0, 1\n"
        "[benchmark]\nn_draws = 10\n[plan]\ndensities = bundle_a/densities.csv\n"
        "spectra_samples = 40\nn_jobs = 2\n[output]\ndirectory = {out}\n"
    )
    results = {}
    for command in ("synth", "clean", "netcorr", "reconstruct", "eval", "all"):
        hashes = []
        for rep in ("a", "b"):
            if command == "synth":
                body = synth.format(out=f"bundle_{rep}")
                out = tmp_path / f"bundle_{rep}"
            else:
                out = tmp_path / f"{command}_{rep}"
                body = run.format(out=out.name)
            code = main([command, "--config", config(tmp_path / f"{command}_{rep}.ini", body)])
            hashes.append((code, digest(out)))
        results[command] = hashes[0] == hashes[1] and hashes[0][0] == 0
    ok = all(results.values())
    verdict(8, ok, "byte-identical reruns: " + ", ".join(f"{k} {'yes' if v else 'no'}" for k, v in results.items()))


# ---------------------------------------------------------------- 9


def test_criterion_9_table_one_density(verdict, tmp_path):
    n, m = 16401, 178911
    rng = np.random.default_rng(9)
    k = np.sort(rng.choice(n * (n - 1) // 2, size=m, replace=False))
    i, j = decode_upper(k, n)
    ids = tuple(f"n{x}" for x in range(n))
    write_edgelist_csv(Network(n, np.column_stack([i, j]), ids), tmp_path / "edges.csv")
    net = read_edgelist_csv(tmp_path / "edges.csv", ids)
    s = summary(net)
    hand = 178911 / (16401 * 16400)
    two_sig = float(f"{s['density_ordered']:.2g}")
    ok = net.m == m and two_sig == float(f"{hand:.2g}") == 6.7e-4
    verdict(
        9,
        ok,
        f"ordered-pair density {s['density_ordered']:.4e} -> {two_sig:.1e}; hand computation "
        f"{hand:.4e} -> {hand:.1e}; unordered density {s['density']:.4e}",
    )

