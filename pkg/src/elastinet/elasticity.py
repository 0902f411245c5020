"""Counterfactual arc elasticities and forecast-accuracy metrics.

An item's elasticity is read off two counterfactual demand predictions at
prices p and p + dp:  E = (y(p+dp) - y(p)) / y(p) * p / dp.  Because the
demand model is monotone non-increasing in price by construction, every
valid entry satisfies E <= 0.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDemandError, DomainError, MetricError

DEMAND_FLOOR = 1e-6  # baseline demand below this is flagged, not divided by
DEFAULT_DP_FRACTION = -0.05


def arc_elasticity(y_base: float, y_pert: float, p: float, dp: float) -> float:
    """Arc elasticity from demand at p (y_base) and at p+dp (y_pert)."""
    if p <= 0:
        raise DomainError(f"base price must be positive, got {p}")
    if dp == 0:
        raise DomainError("price delta must be non-zero")
    if p + dp <= 0:
        raise DomainError(f"perturbed price must be positive, got {p + dp}")
    if y_base <= DEMAND_FLOOR:
        raise DegenerateDemandError(f"baseline demand {y_base} is at or below the floor {DEMAND_FLOOR}")
    return (y_pert - y_base) / y_base * p / dp


@dataclass(frozen=True)
class ElasticityQuery:
    item_id: str
    p: float | None = None  # None -> the inference row's lead price
    dp: float | None = None  # None -> DEFAULT_DP_FRACTION * p


@dataclass
class ElasticityEntry:
    item_id: str
    p: float | None
    dp: float | None
    y_base: float | None
    y_pert: float | None
    elasticity: float | None
    status: str  # "ok" or a skip/failure reason


@dataclass
class ElasticityReport:
    entries: list[ElasticityEntry] = field(default_factory=list)

    def valid_entries(self) -> list[ElasticityEntry]:
        return [e for e in self.entries if e.status == "ok"]

    def elasticities(self) -> dict[str, float]:
        return {e.item_id: e.elasticity for e in self.valid_entries()}

    def summary(self) -> dict:
        valid = self.valid_entries()
        out = {
            "items": len(self.entries),
            "valid": len(valid),
            "skipped": len(self.entries) - len(valid),
        }
        if valid:
            vals = np.array([e.elasticity for e in valid])
            out["mean_elasticity"] = float(vals.mean())
            out["min_elasticity"] = float(vals.min())
            out["max_elasticity"] = float(vals.max())
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["item_id", "p", "dp", "y_base", "y_pert", "elasticity", "status"])
            for e in self.entries:
                writer.writerow(
                    [
                        e.item_id,
                        "" if e.p is None else repr(e.p),
                        "" if e.dp is None else repr(e.dp),
                        "" if e.y_base is None else repr(e.y_base),
                        "" if e.y_pert is None else repr(e.y_pert),
                        "" if e.elasticity is None else repr(e.elasticity),
                        e.status,
                    ]
                )

    def write_summary_json(self, path, extra: dict | None = None) -> None:
        payload = self.summary()
        if extra:
            payload.update(extra)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def evaluate_elasticities(model, inference_pairs, queries=None, dp_fraction=DEFAULT_DP_FRACTION) -> ElasticityReport:
    """Two counterfactual predictions per item, then the arc quotient.

    Per-item failures become flagged entries; the batch never aborts. The
    report is ordered by item_id.
    """
    by_item = {p.item_id: p for p in inference_pairs}
    if queries is None:
        queries = [ElasticityQuery(item_id) for item_id in sorted(by_item)]

    report = ElasticityReport()
    resolved = []
    for q in sorted(queries, key=lambda q: q.item_id):
        row = by_item.get(q.item_id)
        if row is None:
            report.entries.append(
                ElasticityEntry(q.item_id, q.p, q.dp, None, None, None, "item absent from inference set")
            )
            continue
        p = q.p if q.p is not None else row.lead_price
        dp = q.dp if q.dp is not None else dp_fraction * p
        if p <= 0 or dp == 0 or p + dp <= 0:
            report.entries.append(
                ElasticityEntry(q.item_id, p, dp, None, None, None, f"invalid query (p={p}, dp={dp})")
            )
            continue
        resolved.append((row, p, dp))

    if resolved:
        rows = [r for r, _, _ in resolved]
        base_prices = np.array([p for _, p, _ in resolved])
        pert_prices = np.array([p + dp for _, p, dp in resolved])
        y_base = model.predict_batch(rows, base_prices)
        y_pert = model.predict_batch(rows, pert_prices)
        for (row, p, dp), yb, yp in zip(resolved, y_base, y_pert):
            try:
                e = arc_elasticity(float(yb), float(yp), p, dp)
                entry = ElasticityEntry(row.item_id, p, dp, float(yb), float(yp), e, "ok")
            except DegenerateDemandError as exc:
                entry = ElasticityEntry(row.item_id, p, dp, float(yb), float(yp), None, str(exc))
            report.entries.append(entry)

    report.entries.sort(key=lambda e: e.item_id)
    return report


def wmape(actuals, predictions, printed_variant: bool = False) -> float:
    """Demand-weighted MAPE, in percent: sum|y - yhat| / sum y * 100.

    ``printed_variant`` switches to sum(y*|y - yhat|)/sum(y), a weighted
    absolute error rather than a percentage.
    """
    y = np.asarray(actuals, dtype=np.float64)
    yhat = np.asarray(predictions, dtype=np.float64)
    if y.shape != yhat.shape or y.size == 0:
        raise MetricError(f"wmape needs equal-length non-empty inputs, got {y.shape} vs {yhat.shape}")
    denom = y.sum()
    if denom <= 0:
        raise MetricError(f"wmape undefined: total actual demand is {denom}")
    err = np.abs(y - yhat)
    if printed_variant:
        return float((y * err).sum() / denom)
    return float(err.sum() / denom * 100.0)


def mae_elasticity(truth, predicted) -> tuple[float, int]:
    """Mean |e - e_hat| over the key intersection; returns (mae, coverage)."""
    common = sorted(set(truth) & set(predicted))
    if not common:
        raise MetricError("no items in common between truth and predictions")
    errs = [abs(truth[k] - predicted[k]) for k in common]
    return float(np.mean(errs)), len(common)


def loglog_baseline(pairs) -> tuple[dict, list[tuple[str, str]]]:
    """Per-item OLS slope of log(units+1) on log(price) over its pairs.

    Items with fewer than 3 pairs or no price variation are skipped with a
    reason. The slope is the baseline elasticity estimate.
    """
    by_item: dict[str, list] = {}
    for p in pairs:
        by_item.setdefault(p.item_id, []).append(p)

    slopes: dict[str, float] = {}
    skipped: list[tuple[str, str]] = []
    for item_id in sorted(by_item):
        rows = by_item[item_id]
        if len(rows) < 3:
            skipped.append((item_id, f"only {len(rows)} pairs; need at least 3"))
            continue
        x = np.log(np.array([r.lead_price for r in rows], dtype=np.float64))
        y = np.log(np.array([r.target for r in rows], dtype=np.float64) + 1.0)
        if np.ptp(x) < 1e-12:
            skipped.append((item_id, "no price variation"))
            continue
        xc = x - x.mean()
        slopes[item_id] = float((xc @ (y - y.mean())) / (xc @ xc))
    return slopes, skipped
