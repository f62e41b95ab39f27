import dataclasses
import math

import numpy as np
import pytest
from scipy import integrate

import oracles
from conftest import make_dp, make_record, make_state
from recurjoint.model import (
    Dataset,
    ParticipantRecord,
    PiecewiseConstantHazard,
    PowerLawHazard,
    cumulative_baseline_hazard,
    participant_log_likelihood,
    recurrent_log_intensity,
    recurrent_log_survival,
    terminal_log_density,
    terminal_log_hazard,
    terminal_log_survival,
    total_log_likelihood,
)


class TestRecordValidation:
    def test_rejects_unsorted_times(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            make_record(times=(0.5, 0.3))

    def test_rejects_time_beyond_followup(self):
        with pytest.raises(ValueError, match="followup_time"):
            make_record(followup=1.0, times=(0.5, 1.2))

    def test_rejects_bad_indicator(self):
        with pytest.raises(ValueError, match="event_indicator"):
            make_record(delta=2)

    def test_dataset_dimension_check(self):
        a = make_record()
        b = make_record(x=(0.0, 0.0), cluster=0, participant=1)
        with pytest.raises(ValueError, match="dimensions"):
            Dataset(records=(a, b), num_clusters=1)

    def test_empty_dataset_needs_dims(self):
        with pytest.raises(ValueError, match="dimensions"):
            Dataset(records=(), num_clusters=0)
        ds = Dataset(records=(), num_clusters=0, dim_x=3, dim_z=3, dim_u=4)
        assert len(ds) == 0


class TestCumulativeBaselineHazard:
    def test_piecewise_forced_arithmetic(self):
        base = PiecewiseConstantHazard(np.array([0.0, 1.0, 2.0]), np.array([2.0, 2.3]))
        assert cumulative_baseline_hazard(1.5, base) == pytest.approx(2.0 * 1 + 2.3 * 0.5, abs=1e-15)

    def test_zero_time_is_zero(self):
        base = PiecewiseConstantHazard(np.array([0.0, 1.0]), np.array([3.0]))
        assert cumulative_baseline_hazard(0.0, base) == 0.0
        assert cumulative_baseline_hazard(0.0, PowerLawHazard(1.5)) == 0.0

    def test_power_law_value(self):
        assert cumulative_baseline_hazard(4.0, PowerLawHazard(1.5)) == pytest.approx(8.0, abs=1e-12)

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError, match="nonnegative"):
            cumulative_baseline_hazard(-0.1, PowerLawHazard(1.0))

    def test_extends_last_level(self):
        base = PiecewiseConstantHazard(np.array([0.0, 1.0, 2.0]), np.array([2.0, 2.3]))
        assert cumulative_baseline_hazard(3.0, base) == pytest.approx(2.0 + 2.3 + 2.3, abs=1e-12)

    def test_finite_difference_recovers_level(self, rng):
        grid = np.array([0.0, 0.5, 1.1, 2.0, 2.8, 3.5])
        levels = np.array([2.0, 2.3, 2.1, 2.4, 1.7])
        base = PiecewiseConstantHazard(grid, levels)
        h = 1e-7
        for _ in range(100):
            t = float(rng.uniform(0.01, 4.5))
            while np.any(np.abs(grid - t) < 1e-3):
                t = float(rng.uniform(0.01, 4.5))
            deriv = (cumulative_baseline_hazard(t + h, base)
                     - cumulative_baseline_hazard(t - h, base)) / (2 * h)
            assert deriv == pytest.approx(base.level_at(t), abs=1e-6)

    def test_monotone_nondecreasing(self, rng):
        base = PiecewiseConstantHazard(np.array([0.0, 1.0, 2.0]), np.array([2.0, 2.3]))
        ts = np.sort(rng.uniform(0, 5, size=200))
        values = [cumulative_baseline_hazard(t, base) for t in ts]
        assert np.all(np.diff(values) >= 0)


class TestRecurrentProcess:
    def test_intensity_identity_modifiers(self):
        base = PiecewiseConstantHazard(np.array([0.0, 1.0]), np.array([2.0]))
        state = make_state(baseline=base)
        rec = make_record()
        assert recurrent_log_intensity(0.5, rec, state) == pytest.approx(math.log(2.0), abs=1e-15)

    def test_intensity_composition(self):
        state = make_state(gamma=(math.e,), beta=(1.0, 0.0, 0.0), mu_atoms=(-1.0,))
        rec = make_record(x=(1.0, 0.0, 0.0))
        assert recurrent_log_intensity(0.5, rec, state) == pytest.approx(1.0, abs=1e-12)

    def test_intensity_random_oracle(self, rng):
        grid = np.array([0.0, 0.4, 1.0])
        levels = np.array([2.0, 2.3])
        base = PiecewiseConstantHazard(grid, levels)
        for _ in range(25):
            x = rng.normal(0, 1, 3)
            gamma = float(rng.uniform(0.2, 3.0))
            mu = float(rng.normal(0, 0.5))
            t = float(rng.uniform(0.01, 0.99))
            state = make_state(beta=(0.4, 0.3, 0.2), gamma=(gamma,), mu_atoms=(mu,), baseline=base)
            rec = make_record(x=x)
            expected = math.log(oracles.recurrent_intensity(
                t, gamma, [0.4, 0.3, 0.2], x, mu,
                {"variant": "piecewise", "grid": grid, "levels": levels}))
            assert recurrent_log_intensity(t, rec, state) == pytest.approx(expected, abs=1e-12)

    def test_intensity_rejects_unsusceptible(self):
        state = make_state(unsusceptible=(1,))
        with pytest.raises(ValueError, match="unsusceptible"):
            recurrent_log_intensity(0.5, make_record(), state)

    def test_survival_unit_case(self):
        state = make_state()
        assert recurrent_log_survival(make_record(followup=1.0), state) == pytest.approx(-1.0, abs=1e-15)

    def test_survival_unsusceptible_branch_is_one(self):
        state = make_state(unsusceptible=(1,))
        assert recurrent_log_survival(make_record(), state) == 0.0

    def test_survival_compositional_oracle(self, rng):
        base = PiecewiseConstantHazard(np.array([0.0, 0.7, 1.8]), np.array([1.4, 0.9]))
        for _ in range(25):
            gamma = float(rng.uniform(0.2, 3.0))
            mu = float(rng.normal(0, 0.5))
            x = rng.normal(0, 1, 3)
            followup = float(rng.uniform(0.1, 2.5))
            state = make_state(beta=(0.4, 0.3, 0.2), gamma=(gamma,), mu_atoms=(mu,), baseline=base)
            rec = make_record(followup=followup, x=x)
            expected = (-gamma * math.exp(float(np.dot((0.4, 0.3, 0.2), x)) + mu)
                        * cumulative_baseline_hazard(followup, base))
            assert recurrent_log_survival(rec, state) == pytest.approx(expected, abs=1e-12)


class TestTerminalProcess:
    def test_standard_exponential(self):
        state = make_state()
        assert terminal_log_survival(1.0, make_record(), state) == pytest.approx(-1.0, abs=1e-15)

    def test_xi1_zero_removes_frailty(self):
        rec = make_record()
        a = make_state(gamma=(0.5,), xi1=0.0)
        b = make_state(gamma=(2.7,), xi1=0.0)
        assert terminal_log_survival(1.7, rec, a) == terminal_log_survival(1.7, rec, b)

    def test_survival_formula_oracle(self, rng):
        for _ in range(25):
            z = rng.normal(0, 1, 3)
            gamma = float(rng.uniform(0.2, 3.0))
            mu = float(rng.normal(0, 0.5))
            t = float(rng.uniform(0.05, 3.0))
            state = make_state(alpha=(0.2, 0.3, 0.4), alpha0=0.15, xi1=0.1, xi2=-0.5,
                               gamma=(gamma,), mu_atoms=(mu,), kappa_atoms=(2.2,))
            rec = make_record(z=z)
            expected = math.log(oracles.terminal_survival(
                t, 2.2, gamma, 0.15, [0.2, 0.3, 0.4], z, 0.1, -0.5, mu))
            assert terminal_log_survival(t, rec, state) == pytest.approx(expected, abs=1e-12)

    def test_rejects_nonpositive_time(self):
        state = make_state()
        with pytest.raises(ValueError, match="positive"):
            terminal_log_survival(0.0, make_record(), state)
        with pytest.raises(ValueError, match="positive"):
            terminal_log_density(-1.0, make_record(), state)

    def test_survival_tends_to_one_and_decreases(self):
        state = make_state(alpha=(0.2, 0.3, 0.4), alpha0=0.15, xi1=0.1, xi2=-0.5,
                           gamma=(1.4,), mu_atoms=(0.3,), kappa_atoms=(2.2,))
        rec = make_record(z=(0.1, -0.2, 0.05))
        assert abs(terminal_log_survival(1e-9, rec, state)) < 1e-6
        ts = np.linspace(0.01, 5.0, 200)
        values = [terminal_log_survival(t, rec, state) for t in ts]
        assert np.all(np.diff(values) < 0)

    def test_density_exp1_at_one(self):
        state = make_state()
        assert terminal_log_density(1.0, make_record(), state) == pytest.approx(-1.0, abs=1e-15)

    def test_density_integrates_to_one_at_truth(self):
        state = make_state(alpha=(0.2, 0.3, 0.4), alpha0=0.15, xi1=0.1, xi2=-0.5,
                           gamma=(1.3,), mu_atoms=(0.2,), kappa_atoms=(2.2,))
        rec = make_record(z=(0.05, -0.1, 0.08))
        total, err = integrate.quad(
            lambda t: math.exp(terminal_log_density(t, rec, state)), 0.0, 200.0)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_density_integrates_to_one_random_draws(self, rng):
        for _ in range(10):
            state = make_state(alpha=tuple(rng.normal(0, 0.3, 3)),
                               alpha0=float(rng.normal(0, 0.3)),
                               xi1=float(rng.normal(0, 0.2)), xi2=float(rng.normal(0, 0.2)),
                               gamma=(float(rng.uniform(0.3, 2.0)),),
                               mu_atoms=(float(rng.normal(0, 0.4)),),
                               kappa_atoms=(float(rng.uniform(0.6, 8.2)),))
            rec = make_record(z=rng.normal(0, 0.3, 3))
            total, _ = integrate.quad(
                lambda t: math.exp(terminal_log_density(t, rec, state)), 0.0, np.inf, limit=200)
            assert total == pytest.approx(1.0, abs=1e-6)

    def test_density_is_hazard_times_survival(self, rng):
        state = make_state(alpha=(0.2, 0.3, 0.4), alpha0=0.15, xi1=0.1, xi2=-0.5,
                           gamma=(0.8,), mu_atoms=(-0.2,), kappa_atoms=(3.3,))
        rec = make_record(z=(0.1, 0.2, -0.1))
        for _ in range(20):
            t = float(rng.uniform(0.05, 4.0))
            combined = (terminal_log_hazard(t, rec, state)
                        + terminal_log_survival(t, rec, state))
            assert terminal_log_density(t, rec, state) == pytest.approx(combined, abs=1e-12)


def _random_tiny_instance(rng):
    grid = np.array([0.0, 0.5, 1.2])
    levels = np.asarray(rng.uniform(0.5, 3.0, 2))
    base = PiecewiseConstantHazard(grid, levels)
    followup = float(rng.uniform(0.2, 2.0))
    n_events = int(rng.integers(0, 4))
    times = np.sort(rng.uniform(0.01, followup, n_events)) if n_events else np.empty(0)
    delta = int(rng.integers(0, 2))
    d_flag = int(rng.integers(0, 2)) if n_events == 0 else 0
    x = rng.normal(0, 0.5, 3)
    z = rng.normal(0, 0.5, 3)
    rec = make_record(followup=followup, delta=delta, times=times, x=x, z=z)
    params = {
        "beta": rng.normal(0, 0.4, 3), "alpha": rng.normal(0, 0.4, 3),
        "alpha0": float(rng.normal(0, 0.3)), "xi1": float(rng.normal(0, 0.2)),
        "xi2": float(rng.normal(0, 0.2)), "gamma": float(rng.uniform(0.3, 2.5)),
        "mu": float(rng.normal(0, 0.4)), "kappa": float(rng.uniform(0.5, 6.0)),
        "d_flag": d_flag,
        "baseline": {"variant": "piecewise", "grid": grid, "levels": levels},
    }
    state = make_state(beta=params["beta"], alpha=params["alpha"], alpha0=params["alpha0"],
                       xi1=params["xi1"], xi2=params["xi2"], gamma=(params["gamma"],),
                       unsusceptible=(d_flag,), mu_atoms=(params["mu"],),
                       kappa_atoms=(params["kappa"],), baseline=base)
    return rec, state, params


class TestParticipantLikelihood:
    def test_forced_arithmetic_survivor(self):
        state = make_state()
        rec = make_record(followup=1.0, delta=0)
        assert participant_log_likelihood(rec, state) == pytest.approx(-2.0, abs=1e-15)

    def test_unsusceptible_keeps_terminal_factor(self):
        state = make_state(unsusceptible=(1,))
        rec = make_record(followup=1.0, delta=1)
        assert participant_log_likelihood(rec, state) == pytest.approx(-1.0, abs=1e-15)

    def test_literal_mode_drops_unsusceptible_contribution(self):
        state = make_state(unsusceptible=(1,))
        rec = make_record(followup=1.0, delta=1)
        assert participant_log_likelihood(rec, state, "literal") == 0.0

    def test_rejects_unsusceptible_with_events(self):
        state = make_state(unsusceptible=(1,))
        rec = make_record(times=(0.4,))
        with pytest.raises(ValueError, match="unsusceptible"):
            participant_log_likelihood(rec, state)

    def test_against_brute_force_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            rec, state, params = _random_tiny_instance(rng)
            record_tuple = (rec.followup_time, rec.event_indicator,
                            list(rec.recurrent_times), rec.covariates_x, rec.covariates_z)
            for mode in ("corrected", "literal"):
                expected = math.log(oracles.participant_likelihood(record_tuple, params, mode))
                got = participant_log_likelihood(rec, state, mode)
                assert got == pytest.approx(expected, abs=1e-10)

    def test_order_normalized_times(self, rng):
        times = rng.uniform(0.05, 0.9, 5)
        rec = make_record(times=np.sort(times))
        rec2 = make_record(times=np.sort(times[::-1]))
        state = make_state(beta=(0.2, 0.1, -0.1), gamma=(1.3,))
        assert participant_log_likelihood(rec, state) == participant_log_likelihood(rec2, state)


class TestTotalLikelihood:
    def test_empty_dataset(self):
        ds = Dataset(records=(), num_clusters=0, dim_x=3, dim_z=3, dim_u=4)
        state = make_state(n=0, j=0, gamma=(), tau2=(), unsusceptible=(),
                           mu_assign=np.empty(0, dtype=int), kappa_assign=np.empty(0, dtype=int))
        assert total_log_likelihood(ds, state) == 0.0

    def test_two_identical_records_double(self):
        a = make_record(followup=0.8, delta=1, times=(0.2, 0.5), participant=0)
        b = make_record(followup=0.8, delta=1, times=(0.2, 0.5), participant=1)
        ds = Dataset(records=(a, b), num_clusters=1)
        state = make_state(n=2, beta=(0.3, 0.1, 0.0), gamma=(1.2, 1.2),
                           kappa_atoms=(1.7,), kappa_assign=(0, 0))
        single = participant_log_likelihood(a, state, record_position=0)
        assert total_log_likelihood(ds, state) == single + single

    def test_sum_matches_per_record_oracle(self):
        rng = np.random.default_rng(13)
        records, gammas, kappas, dflags = [], [], [], []
        for i in range(30):
            rec, _, params = _random_tiny_instance(rng)
            rec = dataclasses.replace(rec, participant_index=i)
            records.append(rec)
            gammas.append(params["gamma"])
            kappas.append(params["kappa"])
            dflags.append(params["d_flag"])
        ds = Dataset(records=tuple(records), num_clusters=1)
        grid = np.array([0.0, 0.5, 1.2])
        levels = np.array([1.1, 2.2])
        base = PiecewiseConstantHazard(grid, levels)
        state = make_state(n=30, beta=(0.4, 0.3, 0.2), alpha=(0.2, 0.3, 0.4), alpha0=0.15,
                           xi1=0.1, xi2=-0.5, gamma=gammas, unsusceptible=dflags,
                           mu_atoms=(0.25,), kappa_atoms=kappas,
                           kappa_assign=np.arange(30), baseline=base)
        expected = 0.0
        for i, rec in enumerate(records):
            params = {"beta": state.beta, "alpha": state.alpha, "alpha0": 0.15, "xi1": 0.1,
                      "xi2": -0.5, "gamma": gammas[i], "mu": 0.25, "kappa": kappas[i],
                      "d_flag": dflags[i],
                      "baseline": {"variant": "piecewise", "grid": grid, "levels": levels}}
            record_tuple = (rec.followup_time, rec.event_indicator,
                            list(rec.recurrent_times), rec.covariates_x, rec.covariates_z)
            expected += math.log(oracles.participant_likelihood(record_tuple, params))
        assert total_log_likelihood(ds, state) == pytest.approx(expected, abs=1e-9)

    def test_dimension_mismatch_rejected(self):
        ds = Dataset(records=(make_record(),), num_clusters=1)
        state = make_state(n=2, gamma=(1.0, 1.0), kappa_assign=(0, 0))
        with pytest.raises(ValueError, match="dimensions"):
            total_log_likelihood(ds, state)

    def test_factorization_without_shared_effects(self):
        rng = np.random.default_rng(3)
        records = [make_record(followup=float(rng.uniform(0.5, 1.5)),
                               delta=int(rng.integers(0, 2)),
                               times=np.sort(rng.uniform(0.05, 0.45, rng.integers(0, 3))),
                               x=rng.normal(0, 0.3, 3), z=rng.normal(0, 0.3, 3),
                               participant=i)
                   for i in range(12)]
        ds = Dataset(records=tuple(records), num_clusters=1)

        def state_with(beta, alpha, alpha0, kappa):
            return make_state(n=12, beta=beta, alpha=alpha, alpha0=alpha0, xi1=0.0, xi2=0.0,
                              gamma=np.full(12, 1.1), mu_atoms=(0.0,),
                              kappa_atoms=(kappa,), kappa_assign=np.zeros(12, dtype=int))

        beta_a, beta_b = (0.4, 0.3, 0.2), (-0.1, 0.6, 0.0)
        term_a, term_b = ((0.2, 0.3, 0.4), 0.15, 2.2), ((0.0, -0.2, 0.1), -0.3, 1.1)
        # with xi1 = xi2 = 0 and mu = 0 the likelihood factorizes, so the
        # terminal-block difference cannot depend on the recurrent block
        diff_1 = (total_log_likelihood(ds, state_with(beta_a, *term_a))
                  - total_log_likelihood(ds, state_with(beta_a, *term_b)))
        diff_2 = (total_log_likelihood(ds, state_with(beta_b, *term_a))
                  - total_log_likelihood(ds, state_with(beta_b, *term_b)))
        assert diff_1 == pytest.approx(diff_2, abs=1e-9)
