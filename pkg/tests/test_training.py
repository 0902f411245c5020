import json

import numpy as np
import pytest

from elastinet import data as dt
from elastinet.errors import ConfigError, NumericError
from elastinet.gradcheck import gradcheck
from elastinet.model import ArchConfig
from elastinet.tensor import Parameter, Tensor, mse_loss, sum_sq
from elastinet.training import Adam, TrainConfig, fit_stats, prepare_model, train

from conftest import SMALL_ARCH


class TestFitStats:
    def test_population_std(self, small_split):
        stats = fit_stats(small_split.train, ("lag_units",), ())
        col = np.array([p.lag_units for p in small_split.train], dtype=float)
        assert stats.means["lag_units"] == pytest.approx(col.mean())
        assert stats.stds["lag_units"] == pytest.approx(col.std())  # ddof=0

    def test_simple_values(self):
        import dataclasses

        base = dt.build_pairs(
            [
                dt.TransactionMonth("a", 202301, 1.0, 1, 10, 0, 0, 0, None, False, frozenset(), "b", "s", "c", "sc"),
                dt.TransactionMonth("a", 202302, 1.0, 2, 10, 0, 0, 0, None, False, frozenset(), "b", "s", "c", "sc"),
            ]
        )[0]
        pairs = [dataclasses.replace(base, lag_units=v, target=v) for v in (1, 2, 3)]
        stats = fit_stats(pairs, ("lag_units",), ())
        assert stats.means["lag_units"] == pytest.approx(2.0)
        assert stats.stds["lag_units"] == pytest.approx(np.sqrt(2.0 / 3.0))  # ~0.8165

    def test_constant_feature_floored(self, small_split):
        stats = fit_stats(small_split.train, ("month_gap",), ())
        import dataclasses

        pairs = [dataclasses.replace(p, month_gap=3) for p in small_split.train[:5]]
        stats = fit_stats(pairs, ("month_gap",), ())
        assert stats.stds["month_gap"] == 1e-8
        standardized = stats.standardize(np.full((5, 1), 3.0), ["month_gap"])
        assert np.all(standardized == 0.0)

    def test_empty_split_rejected(self):
        with pytest.raises(ConfigError):
            fit_stats([], ("a",), ())

    def test_stats_not_touched_by_validation_or_ots(self, small_split):
        stats = fit_stats(small_split.train, ("lag_units",), ("lead_price",))
        digest_before = stats.digest()
        # standardizing other splits must not mutate the fitted stats
        for pairs in (small_split.validation, small_split.out_of_time):
            col = np.array([[dt.pair_value(p, "lag_units")] for p in pairs])
            stats.standardize(col, ["lag_units"])
        assert stats.digest() == digest_before


class TestAdam:
    def test_first_step_hand_computation(self):
        p = Parameter([[1.0]], name="p")
        cfg = TrainConfig(learning_rate=0.01)
        opt = Adam([p], cfg)
        p.grad[...] = 1.0
        opt.step()
        # bias-corrected first step: delta = -lr * g / (|g| + eps) ~ -lr
        assert p.data[0, 0] == pytest.approx(1.0 - 0.01, abs=1e-9)

    def test_zero_gradient_leaves_parameter_unchanged(self):
        p = Parameter([[2.5, -1.0]], name="p")
        before = p.data.copy()
        opt = Adam([p], TrainConfig())
        for _ in range(10):
            p.zero_grad()
            opt.step()
        assert np.array_equal(p.data, before)

    def test_equal_gradients_evolve_identically(self):
        rng = np.random.default_rng(0)
        a = Parameter([[1.0]], name="a")
        b = Parameter([[1.0]], name="b")
        opt = Adam([a, b], TrainConfig())
        for _ in range(20):
            g = rng.normal()
            a.grad[...] = g
            b.grad[...] = g
            opt.step()
        assert np.array_equal(a.data, b.data)

    def test_moment_state_persists_per_parameter(self):
        p = Parameter([[0.0]], name="p")
        opt = Adam([p], TrainConfig(learning_rate=0.1))
        p.grad[...] = 1.0
        opt.step()
        first = p.data[0, 0]
        p.zero_grad()  # no gradient this step; momentum keeps moving the value
        opt.step()
        assert p.data[0, 0] != first


class TestTrainLoop:
    def test_zero_learning_rate_is_identity(self, small_split):
        model = prepare_model(small_split, SMALL_ARCH, seed=3)
        before = [p.data.copy() for p in model.parameters()]
        report = train(model, small_split, TrainConfig(epochs=2, learning_rate=0.0, seed=3))
        for p, b in zip(model.parameters(), before):
            assert np.array_equal(p.data, b)
        assert report.val_losses[0] == report.val_losses[1]

    def test_loss_decreases_on_noiseless_world(self):
        from elastinet.synth import SyntheticWorld, generate

        world = SyntheticWorld(n_items=12, n_months=16, seed=21, noise_sigma=0.0, season_amplitude=0.0)
        records, _ = generate(world)
        split_ = dt.split(dt.build_pairs(records), seed=21)
        model = prepare_model(split_, SMALL_ARCH, seed=21)
        report = train(model, split_, TrainConfig(epochs=5, seed=21))
        for a, b in zip(report.train_losses, report.train_losses[1:]):
            assert b < a  # strictly decreasing over the first 5 epochs

    def test_same_seed_identical_report(self, small_split):
        reports = []
        for _ in range(2):
            model = prepare_model(small_split, SMALL_ARCH, seed=9)
            reports.append(train(model, small_split, TrainConfig(epochs=3, seed=9)))
        assert reports[0].train_losses == reports[1].train_losses
        assert reports[0].val_losses == reports[1].val_losses
        assert reports[0].final_param_norms == reports[1].final_param_norms

    def test_losses_recorded_every_epoch_and_finite(self, trained_model):
        _, report = trained_model
        assert len(report.train_losses) == 6 and len(report.val_losses) == 6
        assert all(np.isfinite(v) for v in report.train_losses + report.val_losses)
        assert report.wall_time_seconds > 0

    def test_report_json_excludes_timing_by_default(self, trained_model):
        _, report = trained_model
        payload = report.to_json_dict()
        assert "wall_time_seconds" not in json.dumps(payload)
        assert len(payload["epochs"]) == 6
        assert "wall_time_seconds" in report.to_json_dict(include_timing=True)

    @pytest.mark.filterwarnings("ignore:invalid value encountered")
    def test_nan_loss_aborts_with_diagnostic(self, small_split):
        model = prepare_model(small_split, SMALL_ARCH, seed=4)
        model.head_w.data[...] = np.inf
        with pytest.raises(NumericError, match="epoch 1"):
            train(model, small_split, TrainConfig(epochs=1, seed=4))

    def test_monotonicity_preserved_at_every_checkpoint(self, small_split):
        model = prepare_model(small_split, SMALL_ARCH, seed=5)
        rng = np.random.default_rng(5)
        rows = [small_split.validation[int(i)] for i in rng.integers(0, len(small_split.validation), 10)]
        base = np.array([r.lead_price for r in rows])

        def probe(epoch, m):
            prev = None
            for frac in np.linspace(0.6, 1.4, 20):
                y = m.predict_batch(rows, base * frac)
                if prev is not None:
                    assert np.all(y <= prev), f"monotonicity violated at epoch {epoch}"
                prev = y

        train(model, small_split, TrainConfig(epochs=3, seed=5), epoch_callback=probe)

    def test_l2_term_gradient_matches_finite_differences(self, small_split):
        model = prepare_model(small_split, SMALL_ARCH, seed=6)
        from elastinet.training import _encode

        cat, cont, mono, target = _encode(model, small_split.train[:16])
        tgt = Tensor(target)
        decay = 1e-3

        def loss_fn():
            loss = mse_loss(model.forward(cat, cont, mono), tgt)
            for w in model.decayed_parameters():
                loss = loss + decay * sum_sq(w)
            return loss

        report = gradcheck(
            loss_fn,
            model.parameters(),
            probes_per_param=3,
            seed=6,
            probe_filter=lambda p, r, c: not p.name.endswith(".w") or abs(p.data[r, c]) > 1e-3,
        )
        assert report.max_rel_error < 1e-5

    def test_decay_excludes_embeddings_and_biases(self, untrained_model):
        decayed = {p.name for p in untrained_model.decayed_parameters()}
        assert all(name.endswith(".w") for name in decayed)
        assert not any(name.startswith("emb.") for name in decayed)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(epochs=0)
        with pytest.raises(ConfigError):
            TrainConfig(l2_decay=-1.0)
