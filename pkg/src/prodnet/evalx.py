"""Link-prediction scores and random benchmarks for reconstructed networks."""

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError
from .netstats import BlockScheme, block_densities, generate_er, generate_sbm, summary
from .seeding import derive_seed

METRICS = ("tpr", "accuracy", "f1")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


def _keys(net):
    return net.edges[:, 0].astype(np.int64) * net.n + net.edges[:, 1]


def confusion(true_net, pred_net):
    """Pair-level confusion counts; an edge is the positive class."""
    if true_net.n != pred_net.n or true_net.node_ids != pred_net.node_ids:
        raise ContractError("networks must share the same node set")
    n = true_net.n
    tp = int(np.intersect1d(_keys(true_net), _keys(pred_net), assume_unique=True).size)
    fp = pred_net.m - tp
    fn = true_net.m - tp
    tn = n * (n - 1) // 2 - tp - fp - fn
    return ConfusionCounts(tp, fp, tn, fn)


def _ratio(num, den):
    return num / den if den else None


def metrics(c):
    """TPR, accuracy, F1 and precision; ``None`` wherever the denominator is zero."""
    return {
        "tpr": _ratio(c.tp, c.tp + c.fn),
        "accuracy": _ratio(c.tp + c.tn, c.total),
        "f1": _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
        "precision": _ratio(c.tp, c.tp + c.fp),
    }


def _summarise(draws):
    out = {}
    for name in METRICS:
        vals = np.array([d[name] for d in draws if d[name] is not None], dtype=float)
        if vals.size == 0:
            out[name] = {"mean": None, "std": None}
        else:
            std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
            out[name] = {"mean": float(vals.mean()), "std": std}
    return out


def benchmark_comparison(true_net, pred_net, partition, n_draws=50, seed=0):
    """Score ``pred_net`` against random guesses that know the true densities.

    The ER benchmark matches the overall edge density of ``true_net`` and the
    block benchmark matches its within- and between-sector densities. For
    each metric the report says whether the prediction beats each
    benchmark's mean by more than two benchmark standard deviations.
    """
    if len(partition) != true_net.n:
        raise ContractError("partition must label every node")
    pred = metrics(confusion(true_net, pred_net))
    p = summary(true_net)["density"]
    scheme = BlockScheme(partition, block_densities(true_net, partition))
    ids = true_net.node_ids
    draws = {"er": [], "sbm": []}
    for d in range(n_draws):
        er = generate_er(true_net.n, p, derive_seed(seed, "eval", "er", d), ids)
        sbm = generate_sbm(scheme, derive_seed(seed, "eval", "sbm", d), ids)
        draws["er"].append(metrics(confusion(true_net, er)))
        draws["sbm"].append(metrics(confusion(true_net, sbm)))
    report = {"pred": {k: pred[k] for k in METRICS}, "n_draws": n_draws, "exceeds": {}}
    for model, ds in draws.items():
        stats = _summarise(ds)
        report[model] = stats
        report["exceeds"][model] = {
            k: bool(
                pred[k] is not None
                and stats[k]["mean"] is not None
                and pred[k] > stats[k]["mean"] + 2 * stats[k]["std"]
            )
            for k in METRICS
        }
    report["confusion"] = asdict(confusion(true_net, pred_net))
    return report


def write_metrics_csv(report, path):
    """One row per (method, metric): ``method,metric,value,std``."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "metric", "value", "std"])
        for k in METRICS:
            v = report["pred"][k]
            w.writerow(["reconstructed", k, "" if v is None else repr(v), ""])
        for model in ("er", "sbm"):
            for k in METRICS:
                s = report[model][k]
                w.writerow(
                    [
                        model,
                        k,
                        "" if s["mean"] is None else repr(s["mean"]),
                        "" if s["std"] is None else repr(s["std"]),
                    ]
                )
