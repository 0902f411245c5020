import numpy as np
import pytest

from elastinet import data as dt
from elastinet.errors import ConfigError, DomainError
from elastinet.synth import ItemTruth, SyntheticWorld, generate, read_truth, true_arc_elasticity, write_truth


class TestTrueArcElasticity:
    def test_power_law_value(self):
        # ((10.1^-2 - 10^-2) / 10^-2) * (10 / 0.1)
        expected = ((10.1**-2 - 10**-2) / 10**-2) * 100
        got = true_arc_elasticity(-2.0, 10.0, 0.1)
        assert got == pytest.approx(expected)
        assert got == pytest.approx(-1.9704, abs=1e-3)

    def test_limit_is_point_elasticity(self):
        for dp in (1.0, 0.1, 0.01, 0.001):
            arc = true_arc_elasticity(-1.0, 10.0, dp)
            assert abs(arc - (-1.0)) < abs(true_arc_elasticity(-1.0, 10.0, dp * 10) - (-1.0)) + 1e-12
        assert true_arc_elasticity(-1.0, 10.0, 1e-6) == pytest.approx(-1.0, abs=1e-6)

    def test_half_price_unit_elasticity(self):
        # dp = -p/2, eps = -1: ((0.5^-1 - 1)/1) * (-2) = -2
        assert true_arc_elasticity(-1.0, 10.0, -5.0) == pytest.approx(-2.0)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            true_arc_elasticity(-1.0, 0.0, 1.0)
        with pytest.raises(DomainError):
            true_arc_elasticity(-1.0, 10.0, 0.0)
        with pytest.raises(DomainError):
            true_arc_elasticity(-1.0, 10.0, -10.0)

    def test_independent_of_coefficient(self):
        t1 = ItemTruth("a", -1.7, None, 100.0, 10.0)
        t2 = ItemTruth("b", -1.7, None, 9999.0, 10.0)
        assert t1.arc_elasticity(12.0, -0.6) == pytest.approx(t2.arc_elasticity(12.0, -0.6))
        assert t1.arc_elasticity(12.0, -0.6) == pytest.approx(true_arc_elasticity(-1.7, 12.0, -0.6))


class TestWorldValidation:
    def test_non_negative_epsilon_rejected(self):
        with pytest.raises(ConfigError):
            SyntheticWorld(epsilon_range=(-1.0, 0.5))

    def test_negative_sigma_rejected(self):
        with pytest.raises(ConfigError):
            SyntheticWorld(noise_sigma=-0.1)

    def test_fixed_prices_length_checked(self):
        with pytest.raises(ConfigError):
            SyntheticWorld(n_months=5, fixed_prices=(10.0, 10.0))


def noiseless_world(**kw):
    base = dict(
        n_items=1,
        n_months=6,
        seed=3,
        noise_sigma=0.0,
        season_amplitude=0.0,
        events_enabled=False,
        base_demand_range=(10.0, 10.0),
        base_price_range=(10.0, 10.0),
        epsilon_range=(-2.0, -2.0),
    )
    base.update(kw)
    return SyntheticWorld(**base)


class TestGenerate:
    def test_noiseless_law_is_exact(self):
        world = noiseless_world(fixed_prices=(10.0, 8.0, 12.0, 10.0, 9.0, 11.0))
        records, (truth,) = generate(world)
        # base demand 10 at base price 10 with eps -2 -> coeff 1000, units = round(1000 * p^-2)
        assert truth.coeff == pytest.approx(1000.0)
        for rec in records:
            assert rec.units_sold == round(truth.coeff * rec.price**-2.0)

    def test_same_seed_identical_output(self):
        w = SyntheticWorld(n_items=5, n_months=8, seed=11)
        assert generate(w) == generate(w)

    def test_unit_elasticity_halves_units_when_price_doubles(self):
        world = noiseless_world(
            epsilon_range=(-1.0, -1.0),
            base_demand_range=(800.0, 800.0),
            fixed_prices=(10.0, 20.0, 40.0, 80.0, 160.0, 320.0),
        )
        records, _ = generate(world)
        units = [r.units_sold for r in records]
        for a, b in zip(units, units[1:]):
            assert b * 2 == a

    def test_realized_arc_matches_oracle_within_rounding(self):
        world = noiseless_world(
            base_demand_range=(100000.0, 100000.0),
            fixed_prices=(10.0, 10.5, 9.0, 11.0, 10.0, 9.5),
        )
        records, (truth,) = generate(world)
        for lag, lead in zip(records, records[1:]):
            dp = lead.price - lag.price
            realized = (lead.units_sold - lag.units_sold) / lag.units_sold * lag.price / dp
            expected = truth.arc_elasticity(lag.price, dp)
            assert realized == pytest.approx(expected, abs=1e-3)  # count rounding only

    def test_generated_files_pass_ingest_and_build_pairs(self, tmp_path):
        world = SyntheticWorld(n_items=8, n_months=10, seed=5)
        records, _ = generate(world)
        f = tmp_path / "t.csv"
        dt.write_transactions(records, f)
        loaded = dt.ingest(f)
        assert loaded == records
        pairs = dt.build_pairs(loaded)
        assert pairs  # every record has positive inventory by default

    def test_stockout_injection_zeroes_inventory_and_excludes_pairs(self):
        world = SyntheticWorld(n_items=10, n_months=12, seed=7, stockout_rate=0.3)
        records, _ = generate(world)
        zeroed = [r for r in records if r.inventory == 0]
        assert zeroed
        pairs = dt.build_pairs(records)
        bad = {(r.item_id, r.year_month) for r in zeroed}
        for p in pairs:
            assert (p.item_id, p.lag_month) not in bad
            assert (p.item_id, p.lead_month) not in bad

    def test_kinked_law_continuous_at_base_price(self):
        truth = ItemTruth("a", -1.0, -2.5, 50.0, 20.0)
        below = truth.expected_units(20.0 - 1e-9)
        above = truth.expected_units(20.0 + 1e-9)
        assert below == pytest.approx(above, rel=1e-6)
        # steeper above the kink
        arc_below = truth.arc_elasticity(15.0, -0.75)
        arc_above = truth.arc_elasticity(30.0, -1.5)
        assert arc_above < arc_below

    def test_truth_round_trip(self, tmp_path):
        world = SyntheticWorld(n_items=6, n_months=5, seed=2, kinked=True)
        _, truths = generate(world)
        f = tmp_path / "truth.csv"
        write_truth(truths, f)
        assert read_truth(f) == truths
