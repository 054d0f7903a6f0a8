"""
Unit tests for the single-index model and the two-stage parametric learner.
"""
import math
import os
import unittest

import numpy as np

from src.spectral.links import parse_link
from src.learners.single_index import (
    SingleIndexInstance, SphericalState, ParametricConfig, make_instance, sample_batch,
    spherical_gradient_samples, empirical_spherical_gradient, population_spherical_gradient,
    population_flow, run_algorithm1, weak_recovery_floor, default_step2_rate,
)
from src.utils.errors import ConfigurationError, PreconditionError, UnsupportedLinkError
from src.utils.helpers import make_rng, load_config

SLOW = os.environ.get('LAB_SLOW_TESTS') == '1'


def direction_with_overlap(wstar, m, seed):
    """Unit vector with prescribed overlap m against wstar."""
    v = make_rng(seed).standard_normal(wstar.shape[0])
    v -= (v @ wstar) * wstar
    v /= np.linalg.norm(v)
    return m * wstar + math.sqrt(1 - m ** 2) * v


class TestSampling(unittest.TestCase):
    """Test cases for instances and batch sampling."""

    def test_noise_free_linear_labels(self):
        """Test that noise-free linear labels equal <w*, x>."""
        inst = make_instance(8, 'linear', seed=1, shifted=False, noise_sigma=0.0)
        inputs, labels = sample_batch(inst, 50, False, seed=2)
        np.testing.assert_array_equal(labels, inputs @ inst.signal_wstar)

    def test_shifted_mean(self):
        """Test that shifted inputs concentrate around alpha."""
        d, n = 10, 20000
        inst = make_instance(d, 'relu', seed=3)
        inputs, _ = sample_batch(inst, n, True, seed=4)
        self.assertLessEqual(np.linalg.norm(inputs.mean(axis=0) - inst.shift_alpha), 4 * math.sqrt(d / n))

    def test_h3_label(self):
        """Test the H_3 label at x = (2, 0, 0, 0)."""
        inst = SingleIndexInstance(4, np.eye(4)[0], np.zeros(4), parse_link('hermite:3'), 0.0)
        x = np.array([2.0, 0.0, 0.0, 0.0])
        self.assertAlmostEqual(float(inst.link(x @ inst.signal_wstar)), 2 / math.sqrt(6), places=12)

    def test_paired_batches(self):
        """Test that shifted and unshifted batches share their centered draws."""
        inst = make_instance(6, 'relu', seed=5)
        shifted, _ = sample_batch(inst, 30, True, seed=9)
        plain, _ = sample_batch(inst, 30, False, seed=9)
        np.testing.assert_allclose(shifted - inst.shift_alpha, plain, atol=1e-12)

    def test_invalid_instance(self):
        """Test that a non-unit signal is rejected."""
        with self.assertRaises(PreconditionError):
            SingleIndexInstance(3, np.ones(3), np.zeros(3), parse_link('relu'))
        with self.assertRaises(ConfigurationError):
            ParametricConfig(n_step1=0, n_step2=1)
        with self.assertRaises(ConfigurationError):
            ParametricConfig(n_step1=1, n_step2=1, step1_sign_policy='sideways')


class TestSphericalGradients(unittest.TestCase):
    """Test cases for empirical and population spherical gradients."""

    def test_zero_at_truth(self):
        """Test that the gradient vanishes at theta = w* with the true shift."""
        inst = make_instance(12, 'hermite:3', seed=11, noise_sigma=0.0)
        inputs, labels = sample_batch(inst, 500, True, seed=12)
        state = SphericalState(inst.signal_wstar.copy())
        g = empirical_spherical_gradient(state, inst, inputs - inst.shift_alpha, labels, inst.mu_star)
        self.assertLessEqual(np.linalg.norm(g), 1e-10)

    def test_single_sample_linear(self):
        """Test the single-sample formula for the linear link."""
        inst = make_instance(5, 'linear', seed=13, shifted=False, noise_sigma=0.0)
        theta = direction_with_overlap(inst.signal_wstar, 0.2, 14)
        x = make_rng(15).standard_normal(5)
        y = 0.7
        g = empirical_spherical_gradient(SphericalState(theta), inst, x[None, :], np.array([y]), 0.0)
        u = x @ theta
        expected = 2 * (u - y) * (x - u * theta)
        np.testing.assert_allclose(g, expected, atol=1e-12)

    def test_tangency(self):
        """Test that gradients are orthogonal to theta."""
        inst = make_instance(20, 'sigmoid', seed=16)
        theta = direction_with_overlap(inst.signal_wstar, 0.1, 17)
        inputs, labels = sample_batch(inst, 300, True, seed=18)
        state = SphericalState(theta)
        g = empirical_spherical_gradient(state, inst, inputs - inst.shift_alpha, labels, theta @ inst.shift_alpha)
        self.assertLessEqual(abs(g @ theta), 1e-10 * np.linalg.norm(g))
        p = population_spherical_gradient(state, inst, 0.3, inst.mu_star)
        self.assertLessEqual(abs(p @ theta), 1e-10 * max(np.linalg.norm(p), 1e-300))

    def test_link_without_derivative(self):
        """Test that a link lacking a derivative is rejected."""
        inst = make_instance(4, 'relu', seed=19)
        bare = SingleIndexInstance(4, inst.signal_wstar, inst.shift_alpha,
                                   parse_link('relu').__class__(eval=np.abs, lipschitz_L=1.0, label='abs'))
        with self.assertRaises(UnsupportedLinkError):
            spherical_gradient_samples(SphericalState(inst.signal_wstar), bare, np.ones((1, 4)), np.ones(1), 0.0)

    def test_single_sample_keeps_factor_two(self):
        """Test one linear-link sample: 2 (u - y) times the tangent part of x."""
        inst = SingleIndexInstance(4, np.eye(4)[0], np.zeros(4), parse_link('linear'), 0.0)
        x = np.array([[1.0, 2.0, 0.0, 0.0]])
        g = spherical_gradient_samples(SphericalState(np.eye(4)[0]), inst, x, np.zeros(1), 0.0)
        np.testing.assert_allclose(g, [[0.0, 4.0, 0.0, 0.0]], atol=1e-12)

    def test_population_h2_example(self):
        """Test the single k = 2 term for H_2 at m = 0.5."""
        inst = make_instance(10, 'hermite:2', seed=20, shifted=False)
        theta = direction_with_overlap(inst.signal_wstar, 0.5, 21)
        g = population_spherical_gradient(SphericalState(theta), inst, 0.0, 0.0)
        grad_m = inst.signal_wstar - 0.5 * theta
        np.testing.assert_allclose(g, -2.0 * grad_m, atol=1e-8)
        L = inst.link.lipschitz_L
        self.assertLessEqual(np.linalg.norm(g), 2 * L ** 2 * np.linalg.norm(grad_m))

    def test_population_zero_at_equator(self):
        """Test that the population gradient vanishes at m = 0 without a first-order term."""
        inst = make_instance(10, 'hermite:3', seed=22, shifted=False)
        theta = direction_with_overlap(inst.signal_wstar, 0.0, 23)
        g = population_spherical_gradient(SphericalState(theta), inst, 0.0, 0.0)
        self.assertLessEqual(np.linalg.norm(g), 1e-12)

    def test_unbiasedness(self):
        """Test the mean empirical gradient against the population gradient within five standard errors."""
        d, n = 16, 100000
        for offset, name in enumerate(('hermite:2', 'hermite:3')):
            inst = make_instance(d, name, seed=30 + offset)
            theta = direction_with_overlap(inst.signal_wstar, 0.4, 40 + offset)
            state = SphericalState(theta)
            mu = float(theta @ inst.shift_alpha)
            inputs, labels = sample_batch(inst, n, True, seed=50 + offset)
            centered = inputs - inst.shift_alpha

            samples = spherical_gradient_samples(state, inst, centered, labels, mu)
            mean = empirical_spherical_gradient(state, inst, centered, labels, mu)
            std_error = samples.std(axis=0, ddof=1) / math.sqrt(n)
            population = population_spherical_gradient(state, inst, mu, inst.mu_star)
            self.assertTrue(np.all(np.abs(mean - population) <= 5 * std_error + 1e-12), msg=name)

    def test_monotone_gain_at_warm_start(self):
        """Test that m increases along the H_2 population flow from m = 0.3."""
        inst = make_instance(12, 'hermite:2', seed=60, shifted=False)
        theta = direction_with_overlap(inst.signal_wstar, 0.3, 61)
        _, trace = population_flow(SphericalState(theta), inst, 0.0, 0.0, rate=0.01, steps=100)
        self.assertTrue(np.all(np.diff(trace) >= 0))
        self.assertGreater(trace[-1], trace[0])


class TestAlgorithm1(unittest.TestCase):
    """Test cases for the two-stage learner."""

    def test_linear_recovery(self):
        """Test that the linear link is recovered to |m| >= 0.99."""
        inst = make_instance(16, 'linear', seed=70, noise_sigma=0.0)
        run = run_algorithm1(inst, ParametricConfig(n_step1=200, n_step2=6000,
                                                    eta_step2=math.log(16) ** -1.5 / 16 ** 2, seed=71))
        self.assertGreaterEqual(abs(run.overlap_trace[-1]), 0.99)
        self.assertAlmostEqual(np.linalg.norm(run.theta), 1.0, delta=1e-12)
        self.assertEqual(len(run.overlap_trace), 6000 + 2)

    def test_default_rates(self):
        """Test the step-two default rate and that the shipped config leaves both rates to their defaults."""
        for d in (16, 64, 1000):
            self.assertAlmostEqual(default_step2_rate(d), math.log(d) ** -1.5, places=15)
        cfg = ParametricConfig.from_config(load_config('config/config.yaml'), 64)
        self.assertIsNone(cfg.eta_step1)
        self.assertIsNone(cfg.eta_step2)
        self.assertEqual(cfg.n_step1, math.ceil(64 * math.log(64) ** 2))

    def test_initial_overlap_near_equator(self):
        """Test |m(theta_0)| <= d^(-1/4) in at least 95% of seeds."""
        d = 64
        inst = make_instance(d, 'hermite:3', seed=80)
        cfg = dict(n_step1=10, n_step2=1, eta_step1=0.1)
        hits = [abs(run_algorithm1(inst, ParametricConfig(seed=s, **cfg)).overlap_trace[0]) <= d ** -0.25
                for s in range(40)]
        self.assertGreaterEqual(np.mean(hits), 0.95)

    def test_deterministic(self):
        """Test that a run repeats bit-for-bit under the same seed."""
        inst = make_instance(10, 'hermite:2', seed=90)
        cfg = ParametricConfig(n_step1=100, n_step2=300, eta_step1=1.0, seed=91)
        first, second = run_algorithm1(inst, cfg), run_algorithm1(inst, cfg)
        np.testing.assert_array_equal(first.overlap_trace, second.overlap_trace)

    def test_sign_policies(self):
        """Test that fixed sign policies are honoured."""
        inst = make_instance(10, 'hermite:2', seed=92)
        for sign in ('plus', 'minus'):
            cfg = ParametricConfig(n_step1=50, n_step2=1, eta_step1=0.5, seed=93, step1_sign_policy=sign)
            self.assertEqual(run_algorithm1(inst, cfg).sign, sign)

    def test_weak_recovery_floor(self):
        """Test the first-step floor formula."""
        value = weak_recovery_floor(0.5, 1.0, math.e ** 4)
        expected = 2 / math.sqrt(90) * 0.5 * math.sqrt(0.5 / 90) - 102 / 2
        self.assertAlmostEqual(value, expected, places=12)

    def test_shift_advantage_after_step1(self):
        """Test that a random shift raises the median first-step overlap for H_3 in d = 64."""
        d = 64
        n_step1 = math.ceil(d * math.log(d) ** 2)
        shifted_m, control_m = [], []
        for seed in range(60):
            cfg = ParametricConfig(n_step1=n_step1, n_step2=1, eta_step1=10.0, seed=seed)
            shifted_m.append(abs(run_algorithm1(make_instance(d, 'hermite:3', seed, True), cfg).step1_overlap))
            control_m.append(abs(run_algorithm1(make_instance(d, 'hermite:3', seed, False), cfg).step1_overlap))
        self.assertGreater(np.median(shifted_m), np.median(control_m))

    @unittest.skipUnless(SLOW, "set LAB_SLOW_TESTS=1 to run the full shift-advantage comparison")
    def test_shift_advantage_full_runs(self):
        """Test that at least 7 of 20 shifted H_3 runs end with m >= 0.8."""
        d = 64
        n_step1 = math.ceil(d * math.log(d) ** 2)
        finals = []
        for seed in range(20):
            cfg = ParametricConfig(n_step1=n_step1, n_step2=150000, eta_step1=10.0,
                                   eta_step2=math.log(d) ** -1.5 / d ** 2, seed=seed)
            finals.append(run_algorithm1(make_instance(d, 'hermite:3', seed, True), cfg).overlap_trace[-1])
        self.assertGreaterEqual(sum(m >= 0.8 for m in finals), 7)


if __name__ == '__main__':
    unittest.main()
