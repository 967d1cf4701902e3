"""Switched-system simulation tests: exactness, superposition, noise, RNG."""

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from rslsgrid import detect
from rslsgrid.rsls import (LtiSubsystem, ProbingSignal, RslsBank, RslsError,
                           ScheduleParams, measurement_noise, sample_switching,
                           simulate)


def scalar_bank(a=-1.0, b=1.0, c=1.0):
    sub = LtiSubsystem(index=1, A=np.array([[a]]), B1=np.array([[b]]),
                       C=np.array([[c]]))
    return RslsBank(subsystems=(sub,), p=np.array([1.0]))


class TestSampling:
    def test_single_mode(self):
        assert np.all(sample_switching([1.0], 5, seed=0) == 1)

    def test_empirical_frequency_binomial_bound(self):
        p = np.array([0.9, 0.06, 0.03, 0.01])
        K = 10_000
        seq = sample_switching(p, K, seed=123)
        freq = np.mean(seq == 1)
        bound = 3.0 * np.sqrt(0.9 * 0.1 / K)
        assert abs(freq - 0.9) <= bound

    def test_deterministic_under_seed(self):
        a = sample_switching([0.5, 0.5], 100, seed=7)
        b = sample_switching([0.5, 0.5], 100, seed=7)
        assert np.array_equal(a, b)

    def test_rejects_bad_probabilities(self):
        with pytest.raises(RslsError):
            sample_switching([0.5, 0.4], 10, seed=0)


class TestSimulate:
    def test_zero_state_zero_input_stays_zero(self):
        bank = scalar_bank()
        sched = ScheduleParams(tau=1.0, tau0=0.2, ts=0.05)
        tr = simulate(bank, [1, 1], np.zeros(1), ProbingSignal(kind="zero"), sched)
        assert np.max(np.abs(tr.y)) == 0.0

    def test_scalar_decay_closed_form(self):
        bank = scalar_bank(a=-1.0)
        sched = ScheduleParams(tau=1.0, tau0=0.2, ts=0.01)
        tr = simulate(bank, [1, 1, 1], np.array([1.0]), ProbingSignal(kind="zero"), sched)
        assert np.max(np.abs(tr.x[:, 0] - np.exp(-tr.t))) < 1e-10

    def test_superposition(self, bank5_derived, sched5, probe01):
        x0 = np.array([0.7, -0.2, 0.4, 0.1])
        modes = [1, 2, 1]
        both = simulate(bank5_derived, modes, x0, probe01, sched5)
        state_only = simulate(bank5_derived, modes, x0, ProbingSignal(kind="zero"), sched5)
        input_only = simulate(bank5_derived, modes, np.zeros(4), probe01, sched5)
        err = np.max(np.abs(both.y - state_only.y - input_only.y))
        assert err < 1e-9

    def test_window_matches_offline_superposition_oracle(self, bank5_derived,
                                                         sched5, probe01):
        # y on the first window = transfer-function input response (computed
        # by the closed-form frequency route) + free response C e^{At} x0
        x0 = np.array([2.0, -1.0, 1.0, 2.0])
        tr = simulate(bank5_derived, [1], x0, probe01, sched5)
        sub = bank5_derived[1]
        yin = detect.precompute_input_responses(bank5_derived, probe01, sched5)[0]
        from rslsgrid.matnum import expm
        tgrid = np.arange(sched5.n0 + 1) * sched5.ts
        free = np.array([sub.C @ expm(sub.A, tk) @ x0 for tk in tgrid])
        window = tr.y[:sched5.n0 + 1]
        assert np.max(np.abs(window - (yin + free))) < 1e-8

    def test_step_size_independence(self, bank5_derived, probe01):
        x0 = np.array([1.0, 0.0, -1.0, 0.5])
        s1 = ScheduleParams(tau=0.5, tau0=0.1, ts=0.01)
        s2 = ScheduleParams(tau=0.5, tau0=0.1, ts=0.005)
        t1 = simulate(bank5_derived, [1], x0, probe01, s1)
        t2 = simulate(bank5_derived, [1], x0, probe01, s2)
        assert np.max(np.abs(t1.y[:, 0] - t2.y[::2, 0])) < 1e-10

    def test_single_mode_matches_independent_integrator(self, probe01):
        A = np.array([[0.0, 1.0], [-2.0, -0.3]])
        sub = LtiSubsystem(index=1, A=A, B1=np.array([[0.0], [1.0]]),
                           C=np.array([[1.0, 0.0]]))
        bank = RslsBank(subsystems=(sub,), p=np.array([1.0]))
        sched = ScheduleParams(tau=1.0, tau0=0.4, ts=0.02)
        x0 = np.array([0.3, -0.1])
        tr = simulate(bank, [1], x0, probe01, sched)

        def rhs(t, x):
            u = probe01.amplitude * np.sin(probe01.omega * t) if t <= sched.tau0 else 0.0
            return A @ x + np.array([0.0, u])

        sol = solve_ivp(rhs, (0.0, sched.tau), x0, t_eval=tr.t,
                        rtol=1e-12, atol=1e-13, max_step=0.01)
        assert np.max(np.abs(sol.y[0] - tr.x[:, 0])) < 1e-8

    def test_state_continuous_across_switches(self, bank5_derived, sched5, probe01):
        tr = simulate(bank5_derived, [1, 4, 2], np.array([1.0, 0, 0, 0]), probe01, sched5)
        per = sched5.samples_per_segment
        jumps = np.linalg.norm(np.diff(tr.x, axis=0), axis=1)
        # no sample-to-sample jump wildly larger than its neighbors at k*tau
        assert np.all(jumps[per - 1:per + 1] < 10 * np.median(jumps) + 1e-12)

    def test_noise_bound_and_determinism(self, bank5_derived, sched5, probe01):
        x0 = np.zeros(4)
        tr1 = simulate(bank5_derived, [1], x0, probe01, sched5, noise_sigma=0.005, seed=9)
        tr2 = simulate(bank5_derived, [1], x0, probe01, sched5, noise_sigma=0.005, seed=9)
        dev = np.abs(tr1.y_noisy - tr1.y)
        assert np.max(dev) <= 0.005 / 2 + 1e-15
        assert np.max(dev) > 0.0
        assert np.array_equal(tr1.y_noisy, tr2.y_noisy)

    def test_constant_load_disturbance_closed_form(self):
        # x' = -x + d with D1 = [[1]], zeta = 0.5: x(t) -> 0.5 (1 - e^-t)
        sub = LtiSubsystem(index=1, A=np.array([[-1.0]]), B1=np.array([[1.0]]),
                           C=np.array([[1.0]]), D1=np.array([[1.0]]))
        bank = RslsBank(subsystems=(sub,), p=np.array([1.0]))
        sched = ScheduleParams(tau=2.0, tau0=0.5, ts=0.01)
        tr = simulate(bank, [1], np.zeros(1), ProbingSignal(kind="zero"), sched,
                      zeta=lambda t: np.array([0.5]))
        want = 0.5 * (1.0 - np.exp(-tr.t))
        assert np.max(np.abs(tr.x[:, 0] - want)) < 1e-8

    def test_dimension_mismatch_rejected(self, bank5_derived, sched5, probe01):
        with pytest.raises(RslsError):
            simulate(bank5_derived, [1], np.zeros(3), probe01, sched5)


class TestTypes:
    def test_schedule_validation(self):
        with pytest.raises(RslsError):
            ScheduleParams(tau=1.0, tau0=1.5, ts=0.1)
        with pytest.raises(RslsError):
            ScheduleParams(tau=1.0, tau0=0.25, ts=0.11)  # non-integer window
        s = ScheduleParams(tau=2.5, tau0=0.05, ts=0.001)
        assert s.n0 == 50 and s.n_rest == 2450

    def test_bank_probability_validation(self):
        sub = LtiSubsystem(index=1, A=np.eye(2) * -1, B1=np.ones((2, 1)),
                           C=np.ones((1, 2)))
        with pytest.raises(RslsError):
            RslsBank(subsystems=(sub, sub), p=np.array([0.5, 0.5 - 1e-6]))
        with pytest.raises(RslsError):
            RslsBank(subsystems=(sub,), p=np.array([1.0 + 1e-6]))

    def test_transfer_evaluator(self):
        sub = LtiSubsystem(index=1, A=np.array([[-2.0]]), B1=np.array([[3.0]]),
                           C=np.array([[1.0]]))
        s = 1j
        want = 3.0 / (s + 2.0)
        assert abs(sub.transfer(s)[0] - want) < 1e-14

    def test_probing_signal_validation(self):
        with pytest.raises(RslsError):
            ProbingSignal(kind="sine", amplitude=0.0)
        with pytest.raises(RslsError):
            ProbingSignal(kind="wavelet")
        assert ProbingSignal(kind="step", amplitude=1.0).laplace_poles() == [(0j, 1)]

    def test_noise_block_is_counter_deterministic(self):
        a = measurement_noise(5, 10, 2, 0.01)
        b = measurement_noise(5, 10, 2, 0.01)
        assert np.array_equal(a, b)
        assert a.shape == (10, 2)
        assert np.max(np.abs(a)) <= 0.005
