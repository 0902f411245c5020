"""Synthetic transaction worlds with known per-item elasticity.

The demand law is a power law D = A * p^epsilon * season(month) * exp(eta),
eta ~ Normal(0, sigma^2), with prices following a positive random walk. A
"kinked" variant switches to a steeper exponent above the item's base price,
giving non-constant elasticity while keeping the arc elasticity in closed
form. Every generated file round-trips through the ingestion pipeline.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import TransactionMonth, month_of_year, ym_add
from .errors import ConfigError, DomainError

BRAND_POOL = [f"brand_{i:02d}" for i in range(10)]
SIZE_POOL = ["XS", "S", "M", "L", "XL"]
CATEGORY_POOL = [f"cat_{i}" for i in range(8)]
SUBCATS_PER_CATEGORY = 3

# calendar month -> (extra demand multiplier, event flag); independent of the
# smooth seasonal sinusoid so the flags carry real signal
EVENT_CALENDAR = {7: (1.15, "summer_sale"), 11: (1.25, "holiday"), 12: (1.25, "holiday")}


@dataclass
class SyntheticWorld:
    n_items: int = 200
    n_months: int = 27
    start_month: int = 202301
    seed: int = 0
    base_demand_range: tuple[float, float] = (800.0, 1200.0)
    base_price_range: tuple[float, float] = (8.0, 40.0)
    epsilon_range: tuple[float, float] = (-3.0, -0.5)
    price_volatility: float = 0.2
    price_reversion: float = 0.3  # AR(1) pull toward the base price, in log space
    season_amplitude: float = 0.15
    noise_sigma: float = 0.1
    oos_rate: float = 0.1  # fraction of item-months with nonzero out-of-stock days
    competitor_presence: float = 0.8  # fraction of item-months with a competitor price
    events_enabled: bool = True
    kinked: bool = False
    kink_drop_range: tuple[float, float] = (0.8, 1.5)
    stockout_rate: float = 0.0
    fixed_prices: tuple[float, ...] | None = None  # overrides the walk for every item

    def __post_init__(self):
        lo, hi = self.epsilon_range
        if lo >= 0 or hi >= 0 or lo > hi:
            raise ConfigError(f"epsilon range must be negative with lo <= hi, got {self.epsilon_range}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise sigma must be non-negative, got {self.noise_sigma}")
        if self.n_items < 1 or self.n_months < 1:
            raise ConfigError("need at least one item and one month")
        if not 0 <= self.stockout_rate < 1:
            raise ConfigError(f"stockout rate must be in [0, 1), got {self.stockout_rate}")
        if self.fixed_prices is not None and len(self.fixed_prices) != self.n_months:
            raise ConfigError("fixed_prices must list one price per month")

    def season_multiplier(self, moy: int) -> tuple[float, frozenset]:
        mult = 1.0 + self.season_amplitude * np.sin(2.0 * np.pi * (moy - 1) / 12.0)
        flags = frozenset()
        if self.events_enabled and moy in EVENT_CALENDAR:
            lift, flag = EVENT_CALENDAR[moy]
            mult *= lift
            flags = frozenset({flag})
        return float(mult), flags


@dataclass(frozen=True)
class ItemTruth:
    """Ground-truth demand law parameters for one item."""

    item_id: str
    epsilon: float  # exponent at/below the base price
    epsilon_hi: float | None  # exponent above the base price (kinked worlds)
    coeff: float  # A in D = A * p^epsilon (at/below base price)
    base_price: float

    def expected_units(self, price: float, season_mult: float = 1.0) -> float:
        """Noiseless demand law, piecewise for kinked items."""
        if price <= 0:
            raise DomainError(f"price must be positive, got {price}")
        if self.epsilon_hi is None or price <= self.base_price:
            return self.coeff * price**self.epsilon * season_mult
        # continuity at the base price fixes the upper-segment coefficient
        coeff_hi = self.coeff * self.base_price ** (self.epsilon - self.epsilon_hi)
        return coeff_hi * price**self.epsilon_hi * season_mult

    def arc_elasticity(self, p: float, dp: float) -> float:
        """True arc elasticity of this law at (p, p+dp); season cancels."""
        y0 = self.expected_units(p)
        y1 = self.expected_units(p + dp)
        return (y1 - y0) / y0 * p / dp


def true_arc_elasticity(epsilon: float, p: float, dp: float) -> float:
    """Arc elasticity of a pure power law: ((p+dp)^e - p^e)/p^e * p/dp."""
    if p <= 0:
        raise DomainError(f"base price must be positive, got {p}")
    if dp == 0:
        raise DomainError("price delta must be non-zero")
    if p + dp <= 0:
        raise DomainError(f"perturbed price must be positive, got {p + dp}")
    return ((p + dp) ** epsilon - p**epsilon) / p**epsilon * p / dp


def generate(world: SyntheticWorld) -> tuple[list[TransactionMonth], list[ItemTruth]]:
    """Emit monthly records and the per-item truth table, reproducibly."""
    rng = np.random.default_rng(world.seed)
    months = [ym_add(world.start_month, k) for k in range(world.n_months)]

    records: list[TransactionMonth] = []
    truths: list[ItemTruth] = []
    for i in range(world.n_items):
        item_id = f"item_{i:04d}"
        base_units = rng.uniform(*world.base_demand_range)
        base_price = rng.uniform(*world.base_price_range)
        epsilon = rng.uniform(*world.epsilon_range)
        epsilon_hi = None
        if world.kinked:
            epsilon_hi = epsilon - rng.uniform(*world.kink_drop_range)
        coeff = base_units * base_price ** (-epsilon)
        truth = ItemTruth(item_id, epsilon, epsilon_hi, coeff, base_price)
        truths.append(truth)

        if world.fixed_prices is not None:
            prices = np.asarray(world.fixed_prices, dtype=np.float64)
        else:
            # random walk in log price, optionally mean-reverting toward the
            # base price so items keep revisiting the same price band
            steps = rng.normal(0.0, world.price_volatility, size=world.n_months)
            phi = 1.0 - world.price_reversion
            x = np.empty(world.n_months)
            level = 0.0
            for k in range(world.n_months):
                level = phi * level + steps[k]
                x[k] = level
            prices = base_price * np.exp(x)
            prices = np.clip(prices, 0.3 * base_price, 3.0 * base_price)

        noise = (
            np.exp(rng.normal(0.0, world.noise_sigma, size=world.n_months))
            if world.noise_sigma > 0
            else np.ones(world.n_months)
        )
        stockouts = rng.random(world.n_months) < world.stockout_rate

        brand = BRAND_POOL[int(rng.integers(len(BRAND_POOL)))]
        category = CATEGORY_POOL[int(rng.integers(len(CATEGORY_POOL)))]
        subcategory = f"{category}_sub{int(rng.integers(SUBCATS_PER_CATEGORY))}"
        size = SIZE_POOL[int(rng.integers(len(SIZE_POOL)))]
        substitute = bool(rng.random() < 0.5)
        rating = int(rng.integers(0, 500))
        launched = int(rng.integers(30, 1000))

        for k, ym in enumerate(months):
            mult, flags = world.season_multiplier(month_of_year(ym))
            price = float(prices[k])
            units = int(np.round(truth.expected_units(price, mult) * noise[k]))
            units = max(units, 0)
            # stock level scales with the item's typical demand, not with the
            # month's realized units (which would leak the target), and never
            # hits zero unless a stockout is injected
            inventory = 0 if stockouts[k] else max(int(np.round(base_units * rng.uniform(1.5, 3.0))), 10)
            oos = int(rng.integers(1, 6)) if rng.random() < world.oos_rate else 0
            # competitors track the item's stable market price level, not the
            # month-to-month own-price walk
            comp = (
                float(base_price * rng.uniform(0.85, 1.15))
                if rng.random() < world.competitor_presence
                else None
            )
            records.append(
                TransactionMonth(
                    item_id=item_id,
                    year_month=ym,
                    price=price,
                    units_sold=units,
                    inventory=inventory,
                    oos_days=oos,
                    rating_count=rating,
                    days_launched=launched + 30 * k,
                    competitor_price=comp,
                    substitute_available=substitute,
                    event_flags=flags,
                    brand=brand,
                    size=size,
                    category=category,
                    subcategory=subcategory,
                )
            )
            rating += int(round(units * 0.02))
    return records, truths


TRUTH_COLUMNS = ["item_id", "epsilon", "epsilon_hi", "coeff", "base_price"]


def write_truth(truths, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRUTH_COLUMNS)
        for t in truths:
            writer.writerow(
                [
                    t.item_id,
                    repr(t.epsilon),
                    "" if t.epsilon_hi is None else repr(t.epsilon_hi),
                    repr(t.coeff),
                    repr(t.base_price),
                ]
            )


def read_truth(path) -> list[ItemTruth]:
    truths = []
    with open(Path(path), newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            truths.append(
                ItemTruth(
                    item_id=row["item_id"],
                    epsilon=float(row["epsilon"]),
                    epsilon_hi=None if row["epsilon_hi"] == "" else float(row["epsilon_hi"]),
                    coeff=float(row["coeff"]),
                    base_price=float(row["base_price"]),
                )
            )
    return truths
