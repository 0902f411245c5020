"""Monthly transaction ingestion, lead/lag pair construction, and splits.

A pair joins one historical (lag) month with one future (lead) month of the
same item. Valid pairs have a month gap of 1..12 and positive inventory in
both months; the target is the lead month's units sold. The out-of-time
split holds out every pair whose lead month falls in the last three calendar
months of the data span; the remainder is shuffled into an 80/20
train/validation split.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, IntegrityError, ParseError

MIN_MONTH_GAP = 1
MAX_MONTH_GAP = 12
OUT_OF_TIME_MONTHS = 3

MONOTONE_DIRECTIONS = {"lead_price": -1, "price_change_pct": -1}


# ---------------------------------------------------------------------------
# calendar months encoded as YYYYMM integers


def validate_ym(ym: int) -> int:
    ym = int(ym)
    month = ym % 100
    if ym < 100 or not 1 <= month <= 12:
        raise DomainError(f"invalid year-month {ym}; expected YYYYMM with month 1..12")
    return ym


def ym_index(ym: int) -> int:
    """Months since year 0, for whole-month gap arithmetic."""
    return (ym // 100) * 12 + (ym % 100 - 1)


def ym_from_index(idx: int) -> int:
    return (idx // 12) * 100 + idx % 12 + 1


def ym_add(ym: int, months: int) -> int:
    return ym_from_index(ym_index(ym) + months)


def month_gap(lag: int, lead: int) -> int:
    return ym_index(lead) - ym_index(lag)


def month_of_year(ym: int) -> int:
    return ym % 100


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class TransactionMonth:
    """One item's aggregated transaction record for one calendar month."""

    item_id: str
    year_month: int
    price: float
    units_sold: int
    inventory: int
    oos_days: int
    rating_count: int
    days_launched: int
    competitor_price: float | None
    substitute_available: bool
    event_flags: frozenset[str]
    brand: str
    size: str
    category: str
    subcategory: str


TRANSACTIONS_COLUMNS = [
    "item_id",
    "year_month",
    "price",
    "units_sold",
    "inventory",
    "oos_days",
    "rating_count",
    "days_launched",
    "competitor_price",
    "substitute_available",
    "event_flags",
    "brand",
    "size",
    "category",
    "subcategory",
]


@dataclass(frozen=True)
class PairExample:
    """One lead/lag cross-join row; target is the lead month's units sold."""

    item_id: str
    lag_month: int
    lead_month: int
    month_gap: int
    lag_price: float
    lead_price: float
    price_change_pct: float
    lag_units: int
    target: int | None
    lag_inventory: int
    lead_inventory: int
    lag_oos_days: int
    lead_oos_days: int
    lag_rating_count: int
    lead_rating_count: int
    lag_days_launched: int
    lead_days_launched: int
    lag_competitor_price: float | None
    lead_competitor_price: float | None
    lag_substitute_available: bool
    lead_substitute_available: bool
    lag_events: frozenset[str]
    lead_events: frozenset[str]
    brand: str
    size: str
    category: str
    subcategory: str


# ---------------------------------------------------------------------------
# ingestion


def _parse_row(row: dict[str, str], line_no: int) -> TransactionMonth:
    def fail(msg: str):
        raise ParseError(f"line {line_no}: {msg}")

    try:
        ym = validate_ym(int(row["year_month"]))
    except (ValueError, DomainError):
        fail(f"bad year_month {row['year_month']!r}")
    try:
        price = float(row["price"])
    except ValueError:
        fail(f"bad price {row['price']!r}")
    if price <= 0:
        fail(f"price must be positive, got {price}")

    counts = {}
    for name in ("units_sold", "inventory", "oos_days", "rating_count", "days_launched"):
        try:
            counts[name] = int(row[name])
        except ValueError:
            fail(f"bad {name} {row[name]!r}")
        if counts[name] < 0:
            fail(f"{name} must be non-negative, got {counts[name]}")
    if counts["oos_days"] > 31:
        fail(f"oos_days must be 0..31, got {counts['oos_days']}")

    comp_raw = row["competitor_price"].strip()
    if comp_raw == "":
        comp = None
    else:
        try:
            comp = float(comp_raw)
        except ValueError:
            fail(f"bad competitor_price {comp_raw!r}")
        if comp <= 0:
            fail(f"competitor_price must be positive when present, got {comp}")

    sub_raw = row["substitute_available"].strip().lower()
    if sub_raw not in ("true", "false"):
        fail(f"substitute_available must be true/false, got {row['substitute_available']!r}")

    events = frozenset(e for e in row["event_flags"].split("|") if e)

    return TransactionMonth(
        item_id=row["item_id"],
        year_month=ym,
        price=price,
        units_sold=counts["units_sold"],
        inventory=counts["inventory"],
        oos_days=counts["oos_days"],
        rating_count=counts["rating_count"],
        days_launched=counts["days_launched"],
        competitor_price=comp,
        substitute_available=sub_raw == "true",
        event_flags=events,
        brand=row["brand"],
        size=row["size"],
        category=row["category"],
        subcategory=row["subcategory"],
    )


def ingest(path) -> list[TransactionMonth]:
    """Parse and validate a transactions CSV (columns as TRANSACTIONS_COLUMNS)."""
    records: list[TransactionMonth] = []
    seen: set[tuple[str, int]] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty transactions file") from None
        if header != TRANSACTIONS_COLUMNS:
            raise ParseError(f"unexpected header {header}; expected {TRANSACTIONS_COLUMNS}")
        for line_no, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != len(TRANSACTIONS_COLUMNS):
                raise ParseError(f"line {line_no}: expected {len(TRANSACTIONS_COLUMNS)} fields, got {len(raw)}")
            rec = _parse_row(dict(zip(TRANSACTIONS_COLUMNS, raw)), line_no)
            key = (rec.item_id, rec.year_month)
            if key in seen:
                raise IntegrityError(f"duplicate record for item {rec.item_id!r} month {rec.year_month}")
            seen.add(key)
            records.append(rec)
    return records


def write_transactions(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRANSACTIONS_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.item_id,
                    r.year_month,
                    repr(r.price),
                    r.units_sold,
                    r.inventory,
                    r.oos_days,
                    r.rating_count,
                    r.days_launched,
                    "" if r.competitor_price is None else repr(r.competitor_price),
                    "true" if r.substitute_available else "false",
                    "|".join(sorted(r.event_flags)),
                    r.brand,
                    r.size,
                    r.category,
                    r.subcategory,
                ]
            )


# ---------------------------------------------------------------------------
# pair construction


def price_change_pct(lag_price: float, lead_price: float) -> float:
    if lag_price <= 0:
        raise DomainError(f"lag price must be positive, got {lag_price}")
    return (lead_price - lag_price) / lag_price


def _make_pair(lag: TransactionMonth, lead: TransactionMonth) -> PairExample:
    return PairExample(
        item_id=lag.item_id,
        lag_month=lag.year_month,
        lead_month=lead.year_month,
        month_gap=month_gap(lag.year_month, lead.year_month),
        lag_price=lag.price,
        lead_price=lead.price,
        price_change_pct=price_change_pct(lag.price, lead.price),
        lag_units=lag.units_sold,
        target=lead.units_sold,
        lag_inventory=lag.inventory,
        lead_inventory=lead.inventory,
        lag_oos_days=lag.oos_days,
        lead_oos_days=lead.oos_days,
        lag_rating_count=lag.rating_count,
        lead_rating_count=lead.rating_count,
        lag_days_launched=lag.days_launched,
        lead_days_launched=lead.days_launched,
        lag_competitor_price=lag.competitor_price,
        lead_competitor_price=lead.competitor_price,
        lag_substitute_available=lag.substitute_available,
        lead_substitute_available=lead.substitute_available,
        lag_events=lag.event_flags,
        lead_events=lead.event_flags,
        brand=lag.brand,
        size=lag.size,
        category=lag.category,
        subcategory=lag.subcategory,
    )


def build_pairs(records) -> list[PairExample]:
    """Cross-join every item's months into valid (lag, lead) pairs.

    A pair is valid when the gap is 1..12 whole months and inventory is
    positive in both months. Output is sorted by (item_id, lag, lead).
    """
    by_item: dict[str, list[TransactionMonth]] = {}
    for rec in records:
        by_item.setdefault(rec.item_id, []).append(rec)

    pairs: list[PairExample] = []
    for item_id in sorted(by_item):
        months = sorted(by_item[item_id], key=lambda r: r.year_month)
        for i, lag in enumerate(months):
            if lag.inventory <= 0:
                continue
            for lead in months[i + 1 :]:
                gap = month_gap(lag.year_month, lead.year_month)
                if gap > MAX_MONTH_GAP:
                    break  # months sorted, later leads only grow the gap
                if gap < MIN_MONTH_GAP or lead.inventory <= 0:
                    continue
                pairs.append(_make_pair(lag, lead))
    return pairs


# ---------------------------------------------------------------------------
# feature naming: the view of a PairExample the model consumes

CATEGORICAL_FEATURES = [
    "item_id",
    "brand",
    "size",
    "category",
    "subcategory",
    "lag_month_of_year",
    "lead_month_of_year",
]

_BASE_CONTINUOUS = [
    "lag_price",
    "lag_units",
    "lag_inventory",
    "lead_inventory",
    "lag_oos_days",
    "lead_oos_days",
    "lag_rating_count",
    "lead_rating_count",
    "lag_days_launched",
    "lead_days_launched",
    "lag_competitor_price",
    "lag_competitor_price_present",
    "lead_competitor_price",
    "lead_competitor_price_present",
    "lag_substitute_available",
    "lead_substitute_available",
    "month_gap",
]

MONOTONE_FEATURES = ["lead_price", "price_change_pct"]


@dataclass(frozen=True)
class FeatureNames:
    categorical: tuple[str, ...]
    continuous: tuple[str, ...]
    monotone: tuple[str, ...]
    event_names: tuple[str, ...]

    def schema_hash(self) -> str:
        payload = json.dumps(
            {
                "categorical": list(self.categorical),
                "continuous": list(self.continuous),
                "monotone": {name: MONOTONE_DIRECTIONS[name] for name in self.monotone},
                "events": list(self.event_names),
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()


def feature_names(event_names) -> FeatureNames:
    events = tuple(sorted(event_names))
    continuous = list(_BASE_CONTINUOUS)
    for e in events:
        continuous.append(f"lag_event_{e}")
        continuous.append(f"lead_event_{e}")
    return FeatureNames(
        categorical=tuple(CATEGORICAL_FEATURES),
        continuous=tuple(continuous),
        monotone=tuple(MONOTONE_FEATURES),
        event_names=events,
    )


def pair_cat_value(pair: PairExample, name: str) -> str:
    if name == "lag_month_of_year":
        return str(month_of_year(pair.lag_month))
    if name == "lead_month_of_year":
        return str(month_of_year(pair.lead_month))
    return getattr(pair, name)


def pair_value(pair: PairExample, name: str) -> float:
    """Numeric value of a continuous or monotone feature."""
    if name.startswith("lag_event_"):
        return 1.0 if name[len("lag_event_") :] in pair.lag_events else 0.0
    if name.startswith("lead_event_"):
        return 1.0 if name[len("lead_event_") :] in pair.lead_events else 0.0
    if name == "lag_competitor_price":
        return 0.0 if pair.lag_competitor_price is None else pair.lag_competitor_price
    if name == "lead_competitor_price":
        return 0.0 if pair.lead_competitor_price is None else pair.lead_competitor_price
    if name == "lag_competitor_price_present":
        return 0.0 if pair.lag_competitor_price is None else 1.0
    if name == "lead_competitor_price_present":
        return 0.0 if pair.lead_competitor_price is None else 1.0
    if name in ("lag_substitute_available", "lead_substitute_available"):
        return 1.0 if getattr(pair, name) else 0.0
    return float(getattr(pair, name))


# ---------------------------------------------------------------------------
# splits


@dataclass
class DatasetSplit:
    train: list[PairExample]
    validation: list[PairExample]
    out_of_time: list[PairExample]
    schema_hash: str
    names: FeatureNames
    manifest: dict = field(default_factory=dict)

    def all_pairs(self) -> list[PairExample]:
        return self.train + self.validation + self.out_of_time


_PAIR_SORT_KEY = lambda p: (p.item_id, p.lag_month, p.lead_month)  # noqa: E731

CARRY_FORWARD_POLICY = {
    "lead_price": "query (initialized to lag price)",
    "price_change_pct": "computed from effective lead price",
    "lead_month_of_year": "computed from calendar",
    "lead_inventory": "carried forward from lag month",
    "lead_oos_days": "carried forward from lag month",
    "lead_rating_count": "carried forward from lag month",
    "lead_days_launched": "carried forward from lag month",
    "lead_competitor_price": "carried forward from lag month",
    "lead_substitute_available": "carried forward from lag month",
    "lead_events": "carried forward from lag month",
}


def split(pairs, seed: int, by_item: bool = False) -> DatasetSplit:
    """Chronological out-of-time holdout plus a seeded 80/20 shuffle split."""
    if not pairs:
        raise ConfigError("no pairs to split")
    first = min(p.lag_month for p in pairs)
    last = max(p.lead_month for p in pairs)
    if month_gap(first, last) + 1 < OUT_OF_TIME_MONTHS + 1:
        raise ConfigError(
            f"data spans {month_gap(first, last) + 1} months; need at least {OUT_OF_TIME_MONTHS + 1}"
        )
    boundary = ym_add(last, -(OUT_OF_TIME_MONTHS - 1))  # first out-of-time month

    ots = sorted((p for p in pairs if p.lead_month >= boundary), key=_PAIR_SORT_KEY)
    rest = sorted((p for p in pairs if p.lead_month < boundary), key=_PAIR_SORT_KEY)

    rng = np.random.default_rng(seed)
    if by_item:
        items = sorted({p.item_id for p in rest})
        perm = rng.permutation(len(items))
        n_train = (len(items) * 4) // 5
        train_items = {items[i] for i in perm[:n_train]}
        train = [p for p in rest if p.item_id in train_items]
        val = [p for p in rest if p.item_id not in train_items]
    else:
        perm = rng.permutation(len(rest))
        n_train = (len(rest) * 4) // 5
        train_idx = set(int(i) for i in perm[:n_train])
        train = [p for i, p in enumerate(rest) if i in train_idx]
        val = [p for i, p in enumerate(rest) if i not in train_idx]

    events = sorted({e for p in pairs for e in p.lag_events | p.lead_events})
    names = feature_names(events)
    manifest = {
        "seed": seed,
        "boundary_month": boundary,
        "split_mode": "item" if by_item else "pair",
        "row_counts": {"train": len(train), "validation": len(val), "out_of_time": len(ots)},
        "carry_forward_policy": CARRY_FORWARD_POLICY,
    }
    return DatasetSplit(
        train=train,
        validation=val,
        out_of_time=ots,
        schema_hash=names.schema_hash(),
        names=names,
        manifest=manifest,
    )


# ---------------------------------------------------------------------------
# inference set


def build_inference_set(records, as_of_month: int) -> tuple[list[PairExample], list[tuple[str, str]]]:
    """One lead = lag+1 row per item valid at as_of_month; unknown lead
    covariates are carried forward from the lag month, lead price starts at
    the lag price (price change 0) pending a counterfactual override."""
    validate_ym(as_of_month)
    by_item: dict[str, TransactionMonth] = {}
    items_seen: set[str] = set()
    for rec in records:
        items_seen.add(rec.item_id)
        if rec.year_month == as_of_month:
            by_item[rec.item_id] = rec

    rows: list[PairExample] = []
    skipped: list[tuple[str, str]] = []
    for item_id in sorted(items_seen):
        rec = by_item.get(item_id)
        if rec is None:
            skipped.append((item_id, f"no record for month {as_of_month}"))
            continue
        if rec.inventory <= 0:
            skipped.append((item_id, f"inventory is 0 in month {as_of_month}"))
            continue
        lead_month = ym_add(as_of_month, 1)
        rows.append(
            PairExample(
                item_id=item_id,
                lag_month=as_of_month,
                lead_month=lead_month,
                month_gap=1,
                lag_price=rec.price,
                lead_price=rec.price,
                price_change_pct=0.0,
                lag_units=rec.units_sold,
                target=None,
                lag_inventory=rec.inventory,
                lead_inventory=rec.inventory,
                lag_oos_days=rec.oos_days,
                lead_oos_days=rec.oos_days,
                lag_rating_count=rec.rating_count,
                lead_rating_count=rec.rating_count,
                lag_days_launched=rec.days_launched,
                lead_days_launched=rec.days_launched,
                lag_competitor_price=rec.competitor_price,
                lead_competitor_price=rec.competitor_price,
                lag_substitute_available=rec.substitute_available,
                lead_substitute_available=rec.substitute_available,
                lag_events=rec.event_flags,
                lead_events=rec.event_flags,
                brand=rec.brand,
                size=rec.size,
                category=rec.category,
                subcategory=rec.subcategory,
            )
        )
    return rows, skipped


# ---------------------------------------------------------------------------
# dataset serialization (pairs CSV + manifest JSON)

_PAIR_COLUMNS = [
    "item_id",
    "lag_month",
    "lead_month",
    "month_gap",
    "lag_price",
    "lead_price",
    "price_change_pct",
    "lag_units",
    "target",
    "lag_inventory",
    "lead_inventory",
    "lag_oos_days",
    "lead_oos_days",
    "lag_rating_count",
    "lead_rating_count",
    "lag_days_launched",
    "lead_days_launched",
    "lag_competitor_price",
    "lead_competitor_price",
    "lag_substitute_available",
    "lead_substitute_available",
    "lag_events",
    "lead_events",
    "brand",
    "size",
    "category",
    "subcategory",
    "split",
]


def _pair_row(p: PairExample, split_name: str) -> list:
    return [
        p.item_id,
        p.lag_month,
        p.lead_month,
        p.month_gap,
        repr(p.lag_price),
        repr(p.lead_price),
        repr(p.price_change_pct),
        p.lag_units,
        "" if p.target is None else p.target,
        p.lag_inventory,
        p.lead_inventory,
        p.lag_oos_days,
        p.lead_oos_days,
        p.lag_rating_count,
        p.lead_rating_count,
        p.lag_days_launched,
        p.lead_days_launched,
        "" if p.lag_competitor_price is None else repr(p.lag_competitor_price),
        "" if p.lead_competitor_price is None else repr(p.lead_competitor_price),
        "true" if p.lag_substitute_available else "false",
        "true" if p.lead_substitute_available else "false",
        "|".join(sorted(p.lag_events)),
        "|".join(sorted(p.lead_events)),
        p.brand,
        p.size,
        p.category,
        p.subcategory,
        split_name,
    ]


def save_dataset(ds: DatasetSplit, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "pairs.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_PAIR_COLUMNS)
        for name, pairs in (("train", ds.train), ("validation", ds.validation), ("out_of_time", ds.out_of_time)):
            for p in pairs:
                writer.writerow(_pair_row(p, name))
    manifest = dict(ds.manifest)
    manifest["schema_hash"] = ds.schema_hash
    manifest["feature_list"] = {
        "categorical": list(ds.names.categorical),
        "continuous": list(ds.names.continuous),
        "monotone": {name: MONOTONE_DIRECTIONS[name] for name in ds.names.monotone},
    }
    manifest["event_names"] = list(ds.names.event_names)
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(in_dir) -> DatasetSplit:
    src = Path(in_dir)
    with open(src / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    names = feature_names(manifest["event_names"])
    buckets: dict[str, list[PairExample]] = {"train": [], "validation": [], "out_of_time": []}
    with open(src / "pairs.csv", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            pair = PairExample(
                item_id=row["item_id"],
                lag_month=int(row["lag_month"]),
                lead_month=int(row["lead_month"]),
                month_gap=int(row["month_gap"]),
                lag_price=float(row["lag_price"]),
                lead_price=float(row["lead_price"]),
                price_change_pct=float(row["price_change_pct"]),
                lag_units=int(row["lag_units"]),
                target=None if row["target"] == "" else int(row["target"]),
                lag_inventory=int(row["lag_inventory"]),
                lead_inventory=int(row["lead_inventory"]),
                lag_oos_days=int(row["lag_oos_days"]),
                lead_oos_days=int(row["lead_oos_days"]),
                lag_rating_count=int(row["lag_rating_count"]),
                lead_rating_count=int(row["lead_rating_count"]),
                lag_days_launched=int(row["lag_days_launched"]),
                lead_days_launched=int(row["lead_days_launched"]),
                lag_competitor_price=None if row["lag_competitor_price"] == "" else float(row["lag_competitor_price"]),
                lead_competitor_price=None
                if row["lead_competitor_price"] == ""
                else float(row["lead_competitor_price"]),
                lag_substitute_available=row["lag_substitute_available"] == "true",
                lead_substitute_available=row["lead_substitute_available"] == "true",
                lag_events=frozenset(e for e in row["lag_events"].split("|") if e),
                lead_events=frozenset(e for e in row["lead_events"].split("|") if e),
                brand=row["brand"],
                size=row["size"],
                category=row["category"],
                subcategory=row["subcategory"],
            )
            buckets[row["split"]].append(pair)
    return DatasetSplit(
        train=buckets["train"],
        validation=buckets["validation"],
        out_of_time=buckets["out_of_time"],
        schema_hash=manifest["schema_hash"],
        names=names,
        manifest={k: v for k, v in manifest.items() if k not in ("schema_hash", "feature_list", "event_names")},
    )


def with_override_price(pair: PairExample, new_lead_price: float) -> PairExample:
    """Counterfactual copy: lead price replaced, price change recomputed."""
    if new_lead_price <= 0:
        raise DomainError(f"override lead price must be positive, got {new_lead_price}")
    return replace(
        pair,
        lead_price=new_lead_price,
        price_change_pct=price_change_pct(pair.lag_price, new_lead_price),
    )
