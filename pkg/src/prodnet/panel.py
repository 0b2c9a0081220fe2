"""Sales panels, growth rates and leave-one-out rescaling.

Missing observations are carried by an explicit boolean mask. The value
arrays hold ``nan`` wherever the mask is false so that accidental use of a
missing entry poisons the result instead of silently reading a zero.
"""

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateSeriesError,
    DomainError,
    DuplicateKeyError,
    EmptyPanelError,
    InsufficientDataError,
    ParseError,
)

logger = logging.getLogger(__name__)

QUARTERS_PER_YEAR = 4


@dataclass
class SalesPanel:
    """Quarterly sales, one row per firm. Missing entries are ``nan``."""

    firm_ids: list
    timestamps: np.ndarray
    values: np.ndarray
    sector: list = None
    country: list = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        if self.values.shape != (len(self.firm_ids), len(self.timestamps)):
            raise ValueError("values shape does not match firm_ids x timestamps")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        observed = self.values[~np.isnan(self.values)]
        if np.any(observed <= 0):
            raise DomainError("sales must be positive where observed")

    @property
    def mask(self):
        return ~np.isnan(self.values)


@dataclass
class GrowthPanel:
    """An N x T panel of growth rates with its observation mask."""

    firm_ids: list
    timestamps: np.ndarray
    values: np.ndarray
    mask: np.ndarray = None
    rescaled: bool = False
    sector: list = field(default=None, repr=False)

    def __post_init__(self):
        self.firm_ids = list(self.firm_ids)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        values = np.array(self.values, dtype=float)
        if self.mask is None:
            mask = ~np.isnan(values)
        else:
            mask = np.array(self.mask, dtype=bool)
        if values.shape != (len(self.firm_ids), len(self.timestamps)):
            raise ValueError("values shape does not match firm_ids x timestamps")
        if mask.shape != values.shape:
            raise ValueError("mask shape does not match values")
        if not np.all(np.isfinite(values[mask])):
            raise ValueError("observed entries must be finite")
        values[~mask] = np.nan
        self.values = values
        self.mask = mask

    @property
    def n_firms(self):
        return self.values.shape[0]

    @property
    def n_times(self):
        return self.values.shape[1]

    def filled(self, fill=0.0):
        """Values with missing entries replaced by ``fill``."""
        return np.where(self.mask, self.values, fill)

    def with_values(self, values, rescaled=None):
        return replace(
            self,
            values=values,
            mask=self.mask.copy(),
            rescaled=self.rescaled if rescaled is None else rescaled,
        )

    def subset(self, rows):
        rows = np.asarray(rows, dtype=int)
        sector = None if self.sector is None else [self.sector[i] for i in rows]
        return GrowthPanel(
            [self.firm_ids[i] for i in rows],
            self.timestamps.copy(),
            self.values[rows],
            self.mask[rows],
            self.rescaled,
            sector,
        )

    def __eq__(self, other):
        if not isinstance(other, GrowthPanel):
            return NotImplemented
        return (
            self.firm_ids == other.firm_ids
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.values[self.mask], other.values[other.mask])
            and self.rescaled == other.rescaled
        )


def load_sales_csv(path, min_years=8):
    """Read a long-format sales file ``firm_id,quarter,sales[,sector][,country]``.

    Firms with fewer than ``4 * min_years`` observed quarters are dropped. An
    empty ``sales`` cell is read as a missing observation.
    """
    path = Path(path)
    records = {}
    order = []
    sector = {}
    country = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("missing header row", line=1) from None
        if header[:3] != ["firm_id", "quarter", "sales"] or not set(header[3:]) <= {"sector", "country"}:
            raise ParseError(
                "header must be firm_id,quarter,sales[,sector][,country]", line=1
            )
        col = {name: k for k, name in enumerate(header)}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            firm = row[0].strip()
            if not firm:
                raise ParseError("empty firm_id", line=lineno)
            try:
                quarter = int(row[1])
            except ValueError:
                raise ParseError(f"quarter {row[1]!r} is not an integer", line=lineno) from None
            raw = row[2].strip()
            if raw == "":
                value = np.nan
            else:
                try:
                    value = float(raw)
                except ValueError:
                    raise ParseError(f"sales {raw!r} is not a number", line=lineno) from None
                if not np.isfinite(value) or value <= 0:
                    raise ParseError(f"nonpositive or non-finite sales {raw!r}", line=lineno)
            if firm not in records:
                records[firm] = {}
                order.append(firm)
            if quarter in records[firm]:
                raise DuplicateKeyError(
                    f"line {lineno}: duplicate row for firm {firm!r}, quarter {quarter}"
                )
            records[firm][quarter] = value
            for name, store in (("sector", sector), ("country", country)):
                if name in col:
                    label = row[col[name]].strip()
                    if store.setdefault(firm, label) != label:
                        raise ParseError(f"firm {firm!r} has conflicting {name} labels", line=lineno)

    min_obs = QUARTERS_PER_YEAR * min_years
    kept = [f for f in order if sum(np.isfinite(v) for v in records[f].values()) >= min_obs]
    dropped = len(order) - len(kept)
    if dropped:
        logger.info("dropped %d firms with fewer than %d observed quarters", dropped, min_obs)
    if not kept:
        raise EmptyPanelError(f"{path}: no firm has at least {min_obs} observed quarters")

    quarters = [q for f in kept for q, v in records[f].items() if np.isfinite(v)]
    timestamps = np.arange(min(quarters), max(quarters) + 1)
    values = np.full((len(kept), len(timestamps)), np.nan)
    for i, firm in enumerate(kept):
        for q, v in records[firm].items():
            if timestamps[0] <= q <= timestamps[-1]:
                values[i, q - timestamps[0]] = v
    return SalesPanel(
        kept,
        timestamps,
        values,
        sector=[sector[f] for f in kept] if "sector" in col else None,
        country=[country[f] for f in kept] if "country" in col else None,
    )


def growth_rates(sales, horizon=4):
    """Log growth of sales over ``horizon`` quarters.

    Column ``t`` of the output holds ``log(s(t + horizon) / s(t))`` and is
    missing unless both endpoints are observed.
    """
    if horizon < 1:
        raise DomainError("horizon must be at least 1")
    T = len(sales.timestamps)
    if horizon >= T:
        raise EmptyPanelError(f"horizon {horizon} leaves no growth observations for T={T}")
    column = {int(q): k for k, q in enumerate(sales.timestamps)}
    out_ts = sales.timestamps[: T - horizon]
    values = np.full((len(sales.firm_ids), len(out_ts)), np.nan)
    for k, q in enumerate(out_ts):
        later = column.get(int(q) + horizon)
        if later is None:
            continue
        with np.errstate(invalid="ignore"):
            values[:, k] = np.log(sales.values[:, later] / sales.values[:, k])
    return GrowthPanel(sales.firm_ids, out_ts, values, rescaled=False, sector=sales.sector)


def rescale_loo(g, recenter=True):
    """Leave-one-out standardisation of every row.

    Each observation is centred on the row mean and divided by the standard
    deviation (unbiased) of the row with that observation removed, so a
    single large value cannot shrink itself. With ``recenter`` the rescaled
    row is shifted to exact zero mean afterwards; the per-time denominators
    otherwise leave a small offset.
    """
    mask = g.mask
    n = mask.sum(axis=1)
    short = np.flatnonzero(n < 3)
    if short.size:
        i = short[0]
        raise InsufficientDataError(
            f"firm {g.firm_ids[i]!r} has {n[i]} observations; leave-one-out rescaling needs 3",
            firm=g.firm_ids[i],
        )
    x = g.filled()
    mean = x.sum(axis=1) / n
    y = np.where(mask, x - mean[:, None], 0.0)
    ss = (y**2).sum(axis=1)
    nn = n[:, None].astype(float)
    # sum of squares of the n-1 remaining points about their own mean
    ss_loo = ss[:, None] - y**2 * nn / (nn - 1.0)
    scale = np.maximum(np.abs(x).max(axis=1), 1.0)[:, None]
    tiny = nn * (1e-12 * scale) ** 2
    bad = mask & (ss_loo <= tiny)
    if bad.any():
        i, t = np.argwhere(bad)[0]
        raise DegenerateSeriesError(
            f"firm {g.firm_ids[i]!r} has zero leave-one-out variance at quarter {g.timestamps[t]}",
            firm=g.firm_ids[i],
        )
    var_loo = np.where(mask, ss_loo, 1.0) / (nn - 2.0)
    out = np.where(mask, y / np.sqrt(var_loo), 0.0)
    if recenter:
        out = np.where(mask, out - (out.sum(axis=1) / n)[:, None], 0.0)
    return g.with_values(np.where(mask, out, np.nan), rescaled=True)


def write_growth_csv(g, path):
    """Write ``firm_id,quarter,value`` rows; missing entries are omitted."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["firm_id", "quarter", "value"])
        for i, firm in enumerate(g.firm_ids):
            for t in np.flatnonzero(g.mask[i]):
                w.writerow([firm, int(g.timestamps[t]), repr(float(g.values[i, t]))])


def read_growth_csv(path, firm_ids=None, timestamps=None, rescaled=False):
    """Inverse of :func:`write_growth_csv`.

    Without explicit ``firm_ids`` the firms appear in file order; without
    ``timestamps`` the quarters span the observed range contiguously.
    """
    rows = []
    seen = {}
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["firm_id", "quarter", "value"]:
            raise ParseError("header must be firm_id,quarter,value", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError("expected 3 fields", line=lineno)
            try:
                q, v = int(row[1]), float(row[2])
            except ValueError:
                raise ParseError("malformed quarter or value", line=lineno) from None
            key = (row[0], q)
            if key in seen:
                raise DuplicateKeyError(f"line {lineno}: duplicate row for {key}")
            seen[key] = v
            rows.append(key)
    if firm_ids is None:
        firm_ids = list(dict.fromkeys(f for f, _ in rows))
    if not firm_ids:
        raise EmptyPanelError(f"{path}: no observations")
    if timestamps is None:
        qs = [q for _, q in rows]
        timestamps = np.arange(min(qs), max(qs) + 1)
    timestamps = np.asarray(timestamps, dtype=np.int64)
    frow = {f: k for k, f in enumerate(firm_ids)}
    tcol = {int(q): k for k, q in enumerate(timestamps)}
    values = np.full((len(firm_ids), len(timestamps)), np.nan)
    for (f, q), v in seen.items():
        if f not in frow or q not in tcol:
            raise ParseError(f"observation for unknown firm/quarter {(f, q)}")
        values[frow[f], tcol[q]] = v
    return GrowthPanel(list(firm_ids), timestamps, values, rescaled=rescaled)
