"""Command-line front end.

Every subcommand reads one INI file (``--config``) and writes CSV/JSON files
under ``[output] directory``. Relative paths in the file are resolved against
the directory holding the config file. Exit codes: 0 success, 2 data or
configuration error, 3 numerical failure, 4 partial reconstruction.
"""

import argparse
import configparser
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericalError, ReconstructionError
from .evalx import benchmark_comparison, write_metrics_csv
from .netstats import (
    benchmark_avg_corr,
    benchmark_params,
    avg_corr_on_network,
    distance_classes,
    distance_decay,
    read_edgelist_csv,
    read_partition_csv,
    summary,
    write_edgelist_csv,
)
from .panel import growth_rates, load_sales_csv, read_growth_csv, rescale_loo, write_growth_csv
from .pipeline import (
    ReconstructionPlan,
    read_density_table,
    reconstruct_network,
    reconstruction_solver,
    write_density_table,
)
from .seeding import derive_seed
from .sgl import SolverConfig
from .spectral import (
    clean_market_mode,
    corr_matrix,
    mp_edges,
    sector_clean,
    surrogate_spectrum,
)
from .synth import apply_missingness, planted_block_instance, write_instance

logger = logging.getLogger("prodnet")

EXIT_OK, EXIT_DATA, EXIT_NUMERIC, EXIT_PARTIAL = 0, 2, 3, 4

PATH_KEYS = {
    "data": ("sales", "panel", "cleaned_panel", "edgelist", "partition", "truth", "prediction"),
    "plan": ("partition", "densities"),
}


class RunConfig:
    """Parsed configuration with typed accessors and path resolution."""

    def __init__(self, path):
        self.path = Path(path)
        if not self.path.is_file():
            raise ConfigError(f"config file {self.path} not found")
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            parser.read(self.path)
        except configparser.Error as exc:
            raise ConfigError(f"{self.path}: {exc}") from None
        self.parser = parser
        self.base = self.path.resolve().parent
        if not parser.has_option("run", "seed"):
            raise ConfigError("[run] seed is required", section="run")
        self.seed = self.get_int("run", "seed")
        for section, keys in PATH_KEYS.items():
            for key in keys:
                if parser.has_option(section, key):
                    p = self.path_of(section, key)
                    if not p.exists():
                        raise ConfigError(f"[{section}] {key}: {p} does not exist", section=section)

    def has(self, section, key=None):
        if key is None:
            return self.parser.has_section(section)
        return self.parser.has_option(section, key)

    def require(self, section):
        if not self.parser.has_section(section):
            raise ConfigError(f"missing [{section}] section", section=section)

    def get(self, section, key, default=None):
        if self.parser.has_option(section, key):
            return self.parser.get(section, key).strip()
        return default

    def _typed(self, section, key, default, cast):
        raw = self.get(section, key)
        if raw is None:
            if default is None:
                raise ConfigError(f"[{section}] {key} is required", section=section)
            return default
        try:
            return cast(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}", section=section) from None

    def get_int(self, section, key, default=None):
        return self._typed(section, key, default, int)

    def get_float(self, section, key, default=None):
        return self._typed(section, key, default, float)

    def get_bool(self, section, key, default=False):
        raw = self.get(section, key)
        if raw is None:
            return default
        val = raw.lower()
        if val in ("1", "true", "yes", "on"):
            return True
        if val in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{section}] {key}: expected a boolean, got {raw!r}", section=section)

    def get_list(self, section, key, default=(), cast=str):
        raw = self.get(section, key)
        if raw is None:
            return list(default)
        try:
            return [cast(x.strip()) for x in raw.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}", section=section) from None

    def path_of(self, section, key):
        raw = self.get(section, key)
        if raw is None:
            raise ConfigError(f"[{section}] {key} is required", section=section)
        p = Path(raw)
        return p if p.is_absolute() else self.base / p

    def output_dir(self):
        d = self.path_of("output", "directory") if self.has("output", "directory") else self.base / "out"
        d.mkdir(parents=True, exist_ok=True)
        return d

    def solver(self, base=None):
        base = base or reconstruction_solver()
        return SolverConfig(
            alpha=self.get_float("solver", "alpha", base.alpha),
            beta=self.get_float("solver", "beta", base.beta),
            max_iter=self.get_int("solver", "max_iter", base.max_iter),
            tol=self.get_float("solver", "tol", base.tol),
            init=self.get("solver", "init", base.init),
        )


def _write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _fmt(x):
    return "" if x is None else repr(float(x))


def _load_rescaled(cfg):
    """The rescaled growth panel named by ``[data]``: a sales file or a growth panel."""
    if cfg.has("data", "sales"):
        sales = load_sales_csv(cfg.path_of("data", "sales"), cfg.get_int("data", "min_years", 8))
        g = growth_rates(sales, cfg.get_int("data", "horizon", 4))
    elif cfg.has("data", "panel"):
        g = read_growth_csv(cfg.path_of("data", "panel"))
    else:
        raise ConfigError("[data] needs either sales or panel", section="data")
    return rescale_loo(g)


def _clean(cfg, g):
    """Apply the ``[clean]`` settings to a rescaled panel."""
    cleaned, mode, report = clean_market_mode(
        g,
        n_modes=cfg.get_int("clean", "modes_to_remove", 1),
        min_overlap=cfg.get_int("clean", "min_overlap", 8),
        n_surrogates=cfg.get_int("clean", "surrogates", 10),
        seed=derive_seed(cfg.seed, "clean"),
        source=cfg.get("clean", "surrogate_source", "empirical"),
    )
    if cfg.get_bool("clean", "sector_clean", False):
        if not cfg.has("data", "partition"):
            raise ConfigError("[clean] sector_clean needs [data] partition", section="clean")
        labels = read_partition_csv(cfg.path_of("data", "partition"), cleaned.firm_ids)
        cleaned = rescale_loo(sector_clean(cleaned, labels))
    return cleaned, mode, report


def _cleaned_panel(cfg, g):
    if cfg.has("data", "cleaned_panel"):
        return read_growth_csv(
            cfg.path_of("data", "cleaned_panel"),
            firm_ids=g.firm_ids,
            timestamps=g.timestamps,
            rescaled=True,
        )
    return _clean(cfg, g)[0]


def cmd_clean(cfg):
    out = cfg.output_dir()
    g = _load_rescaled(cfg)
    cleaned, mode, report = _clean(cfg, g)
    write_growth_csv(g, out / "rescaled.csv")
    write_growth_csv(cleaned, out / "cleaned.csv")
    modes = np.atleast_2d(mode)
    with (out / "mode.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quarter"] + [f"mode_{k + 1}" for k in range(modes.shape[0])])
        for t, q in enumerate(g.timestamps):
            w.writerow([int(q)] + [_fmt(None if np.isnan(v) else v) for v in modes[:, t]])
    spec = report.to_dict()
    n_sets = cfg.get_int("clean", "surrogates", 10)
    overlay = {}
    if n_sets:
        for source in ("empirical", "gaussian"):
            sets = surrogate_spectrum(
                g, n_sets, derive_seed(cfg.seed, "clean"), source, cfg.get_int("clean", "min_overlap", 8)
            )
            overlay[source] = [float(x) for x in np.mean(sets, axis=0)]
    spec["surrogate_overlay"] = overlay
    spec["mp_edges"] = list(mp_edges(report.aspect_ratio))
    _write_json(spec, out / "spectrum.json")
    return [out / n for n in ("rescaled.csv", "cleaned.csv", "mode.csv", "spectrum.json")]


def cmd_netcorr(cfg):
    out = cfg.output_dir()
    g = _load_rescaled(cfg)
    cleaned = _cleaned_panel(cfg, g)
    if not cfg.has("data", "edgelist"):
        raise ConfigError("[data] edgelist is required", section="data")
    net = read_edgelist_csv(cfg.path_of("data", "edgelist"), g.firm_ids)
    taus = cfg.get_list("netcorr", "taus", [0], int)
    k_max = cfg.get_int("netcorr", "k_max", 3)
    min_overlap = cfg.get_int("clean", "min_overlap", 8)
    n_draws = cfg.get_int("benchmark", "n_draws", 50)
    models = cfg.get_list("benchmark", "models", ["er", "sbm", "config"])
    partition = None
    if cfg.has("data", "partition"):
        partition = read_partition_csv(cfg.path_of("data", "partition"), g.firm_ids)
    elif "sbm" in models:
        raise ConfigError("the sbm benchmark needs [data] partition", section="benchmark")
    params = benchmark_params(net, partition)
    classes = distance_classes(net, k_max)
    rows, decay = [], []
    result = {"summary": summary(net), "taus": taus, "models": models, "correlation": {}}
    for label, panel in (("raw", g), ("cleaned", cleaned)):
        result["correlation"][label] = {}
        for tau in taus:
            C = corr_matrix(panel, tau, min_overlap)
            mean, count = avg_corr_on_network(C, net)
            entry = {"network": {"mean": mean, "count": count}}
            rows.append([label, tau, "network", _fmt(mean), "", count])
            for model in models:
                seed = derive_seed(cfg.seed, "netcorr", label, tau, model)
                bm, bs = benchmark_avg_corr(C, model, params[model], n_draws, seed)
                entry[model] = {"mean": bm, "std": bs}
                rows.append([label, tau, model, _fmt(bm), _fmt(bs), n_draws])
            result["correlation"][label][str(tau)] = entry
        C0 = corr_matrix(panel, 0, min_overlap)
        d = distance_decay(C0, net, k_max, classes)
        result.setdefault("decay", {})[label] = d
        for k, v in enumerate(d, start=1):
            decay.append([label, k, _fmt(v), int(classes[k - 1].shape[0])])
    with (out / "netcorr.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["panel", "tau", "model", "mean", "std", "count"])
        w.writerows(rows)
    with (out / "decay.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["panel", "k", "mean_corr", "n_pairs"])
        w.writerows(decay)
    _write_json(result, out / "netcorr.json")
    return [out / "netcorr.csv", out / "decay.csv", out / "netcorr.json"]


def _plan(cfg, firm_ids):
    cfg.require("plan")
    if not cfg.has("plan", "densities"):
        raise ConfigError("[plan] densities is required", section="plan")
    part_path = cfg.path_of("plan", "partition") if cfg.has("plan", "partition") else None
    if part_path is None:
        if not cfg.has("data", "partition"):
            raise ConfigError("[plan] partition is required", section="plan")
        part_path = cfg.path_of("data", "partition")
    partition = read_partition_csv(part_path, firm_ids)
    diag, off = read_density_table(cfg.path_of("plan", "densities"), partition)
    return ReconstructionPlan(
        partition,
        diag,
        off,
        spectra_samples=cfg.get_int("plan", "spectra_samples", 1000),
        solver=cfg.solver(),
        seed=derive_seed(cfg.seed, "reconstruct"),
        n_jobs=cfg.get_int("plan", "n_jobs", 1),
    )


def _evaluate(cfg, truth_path, pred, partition, out):
    truth = read_edgelist_csv(truth_path, pred.node_ids)
    report = benchmark_comparison(
        truth, pred, partition, cfg.get_int("benchmark", "n_draws", 50), derive_seed(cfg.seed, "eval")
    )
    _write_json(report, out / "evaluation.json")
    write_metrics_csv(report, out / "metrics.csv")
    return [out / "evaluation.json", out / "metrics.csv"]


def cmd_reconstruct(cfg):
    out = cfg.output_dir()
    g = _load_rescaled(cfg)
    plan = _plan(cfg, g.firm_ids)
    cleaned = _cleaned_panel(cfg, g)
    C = corr_matrix(cleaned, 0, cfg.get_int("clean", "min_overlap", 8))
    started = time.perf_counter()
    try:
        net, report = reconstruct_network(C, plan)
    except ReconstructionError as exc:
        write_edgelist_csv(exc.completed["network"], out / "edges_partial.csv")
        _write_json(
            {"report": exc.completed["report"], "failures": exc.failures},
            out / "reconstruction_partial.json",
        )
        raise
    logger.info("reconstruct: %.1f s wall time", time.perf_counter() - started)
    write_edgelist_csv(net, out / "edges.csv")
    write_density_table(plan, out / "plan_densities.csv")
    _write_json(report, out / "reconstruction.json")
    files = [out / "edges.csv", out / "reconstruction.json"]
    if cfg.has("data", "truth"):
        files += _evaluate(cfg, cfg.path_of("data", "truth"), net, plan.partition, out)
    return files


def cmd_eval(cfg):
    out = cfg.output_dir()
    for key in ("truth", "prediction", "partition"):
        if not cfg.has("data", key):
            raise ConfigError(f"[data] {key} is required", section="data")
    ids = []
    with cfg.path_of("data", "partition").open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        ids = [row[0].strip() for row in reader if row]
    partition = read_partition_csv(cfg.path_of("data", "partition"), ids)
    pred = read_edgelist_csv(cfg.path_of("data", "prediction"), ids, drop_unknown=False)
    return _evaluate(cfg, cfg.path_of("data", "truth"), pred, partition, out)


def cmd_synth(cfg):
    out = cfg.output_dir()
    cfg.require("synth")
    sizes = cfg.get_list("synth", "sizes", [100, 100, 100], int)
    if not sizes or min(sizes) < 1:
        raise ConfigError("[synth] sizes must list positive block sizes", section="synth")
    seed = derive_seed(cfg.seed, "synth")
    inst = planted_block_instance(
        sizes,
        cfg.get_float("synth", "p_in", 0.08),
        cfg.get_float("synth", "p_out", 0.01),
        cfg.get_int("synth", "t", 1000),
        cfg.get_float("synth", "eps", 1.0),
        cfg.get_float("synth", "sigma_common", 0.0),
        seed,
    )
    missing = cfg.get("synth", "missing", "none")
    if missing != "none":
        inst.panel = apply_missingness(
            inst.panel, missing, cfg.get_float("synth", "p_miss", 0.0), seed
        )
        inst.missing = missing
    write_instance(inst, out)
    plan = ReconstructionPlan.from_network(inst.network, inst.partition)
    write_density_table(plan, out / "densities.csv")
    return [out / n for n in ("panel.csv", "edges.csv", "partition.csv", "params.json", "densities.csv")]


def cmd_all(cfg):
    files = cmd_clean(cfg)
    if cfg.has("data", "edgelist"):
        files += cmd_netcorr(cfg)
    if cfg.has("plan"):
        files += cmd_reconstruct(cfg)
    return files


COMMANDS = {
    "clean": cmd_clean,
    "netcorr": cmd_netcorr,
    "reconstruct": cmd_reconstruct,
    "synth": cmd_synth,
    "eval": cmd_eval,
    "all": cmd_all,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="prodnet",
        description="Clean firm growth panels and reconstruct production networks.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", "-c", required=True, help="INI run configuration")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    stage = args.command
    try:
        cfg = RunConfig(args.config)
        for path in COMMANDS[stage](cfg):
            logger.info("wrote %s", path)
    except ReconstructionError as exc:
        print(f"prodnet {stage}: partial reconstruction: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    except NumericalError as exc:
        print(f"prodnet {stage}: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"prodnet {stage}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
