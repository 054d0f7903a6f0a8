"""
Unit tests for the Boolean Fourier module.
"""
import math
import itertools
import unittest

import numpy as np

from src.boolean.fourier import (
    BooleanJunta, ProductShift, sign_patterns, sample_shifted, chi_basis, pattern_weights,
    fourier_coefficient_exact, standard_spectrum, shifted_spectrum, character_matrix, shifted_second_moment,
    subset_mask, influence, first_order_shifted_closed_form, degree_one_values, prop31_sweep,
    prop31_pair_closed_form, decay_slope, degree_one_variance_bound,
)
from src.utils.errors import ConfigurationError, DegenerateShiftError, PreconditionError
from src.utils.helpers import make_rng


def monomial(d, support):
    return BooleanJunta.from_function(d, support, lambda p: float(np.prod(p)))


def random_junta(d, k, rng):
    support = sorted(rng.choice(d, size=k, replace=False).tolist())
    return BooleanJunta(d, support, rng.standard_normal(2 ** k))


class TestJunta(unittest.TestCase):
    """Test cases for juntas and their truth tables."""

    def test_pattern_order(self):
        """Test lexicographic sign order with the first coordinate most significant."""
        np.testing.assert_array_equal(sign_patterns(2), [[-1, -1], [-1, 1], [1, -1], [1, 1]])
        f = BooleanJunta.from_dict({'d': 3, 'support': [0, 2], 'table': [5.0, 6.0, 7.0, 8.0]})
        x = np.array([[-1.0, 1.0, -1.0], [-1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [1.0, 1.0, 1.0]])
        np.testing.assert_array_equal(f(x), [5.0, 6.0, 7.0, 8.0])

    def test_evaluation_reads_support_only(self):
        """Test that evaluation ignores coordinates outside the support."""
        f = monomial(5, [1, 3])
        x = sample_shifted(ProductShift.zero(5), 64, seed=1)
        scrambled = x.copy()
        scrambled[:, [0, 2, 4]] *= -1
        np.testing.assert_array_equal(f(x), x[:, 1] * x[:, 3])
        np.testing.assert_array_equal(f(scrambled), f(x))

    def test_parseval(self):
        """Test Parseval for the stored standard coefficients."""
        f = random_junta(10, 5, make_rng(2))
        self.assertTrue(f.check_parseval())

    def test_json_format(self):
        """Test the {d, support, table} format."""
        f = BooleanJunta.from_json('{"d": 6, "support": [0, 4], "table": [1, -1, -1, 1]}')
        self.assertEqual(f.support_T, (0, 4))
        again = BooleanJunta.from_json(f.to_json())
        np.testing.assert_array_equal(again.truth_table, f.truth_table)
        with self.assertRaises(ConfigurationError):
            BooleanJunta.from_json('{"d": 6, "support": [0]}')

    def test_invalid_junta(self):
        """Test that malformed juntas are rejected."""
        with self.assertRaises(PreconditionError):
            BooleanJunta(4, (2, 1), np.zeros(4))
        with self.assertRaises(PreconditionError):
            BooleanJunta(4, (0, 1), np.zeros(3))
        with self.assertRaises(PreconditionError):
            BooleanJunta(4, (0,), np.array([2.0, -2.0]), bound_R=1.0)


class TestShiftedMeasure(unittest.TestCase):
    """Test cases for the product measure and its characters."""

    def test_uniform_means(self):
        """Test coordinate means at mu = 0."""
        n = 20000
        x = sample_shifted(ProductShift.zero(8), n, seed=3)
        self.assertTrue(np.all(np.abs(x.mean(axis=0)) <= 4 / math.sqrt(n)))

    def test_shifted_means(self):
        """Test that coordinate means follow mu."""
        n = 20000
        shift = ProductShift.uniform(8, 0.75, make_rng(4))
        x = sample_shifted(shift, n, seed=5)
        self.assertTrue(np.all(np.abs(x.mean(axis=0) - shift.mu) <= 4 / math.sqrt(n)))

    def test_degenerate_column(self):
        """Test that a shift of 1 - 1e-9 fixes the column at +1."""
        mu = np.zeros(3)
        mu[1] = 1 - 1e-9
        x = sample_shifted(ProductShift(mu), 1000, seed=6)
        self.assertTrue(np.all(x[:, 1] == 1.0))

    def test_shift_bounds(self):
        """Test the eta bound of a shift."""
        with self.assertRaises(PreconditionError):
            ProductShift(np.array([0.5, 0.8]), eta_bound=0.75)
        with self.assertRaises(PreconditionError):
            ProductShift(np.array([0.1]), eta_bound=0.9)
        with self.assertRaises(PreconditionError):
            ProductShift(np.array([1.5]))

    def test_character_values(self):
        """Test character values on single points."""
        shift = ProductShift(np.array([0.5, 0.0, 0.0]))
        self.assertEqual(chi_basis([], shift, np.array([1.0, 1.0, -1.0])), 1.0)
        self.assertEqual(chi_basis([1], shift, np.array([1.0, 1.0, -1.0])), 1.0)
        self.assertAlmostEqual(chi_basis([0], shift, np.array([-1.0, 1.0, 1.0])), -1.7320508075688772, places=12)

    def test_degenerate_character(self):
        """Test that characters on degenerate coordinates are rejected."""
        shift = ProductShift(np.array([1.0, 0.0]))
        with self.assertRaises(DegenerateShiftError):
            chi_basis([0], shift, np.array([1.0, 1.0]))
        with self.assertRaises(DegenerateShiftError):
            fourier_coefficient_exact(monomial(2, [0, 1]), [0], shift)

    def test_orthonormality(self):
        """Test exact orthonormality of characters on a 4-element support."""
        for mu in itertools.product([-0.5, 0.0, 0.5], repeat=4):
            chi = character_matrix(np.array(mu))
            gram = chi.T @ (pattern_weights(np.array(mu))[:, None] * chi)
            np.testing.assert_allclose(gram, np.eye(16), atol=1e-12)


class TestCoefficients(unittest.TestCase):
    """Test cases for shifted Fourier coefficients."""

    def test_uniform_shift_matches_standard(self):
        """Test that mu = 0 gives the standard coefficients."""
        f = random_junta(7, 3, make_rng(7))
        zero = ProductShift.zero(7)
        for r in range(4):
            for S in itertools.combinations(f.support_T, r):
                self.assertAlmostEqual(fourier_coefficient_exact(f, S, zero), f.coefficients[subset_mask(f, S)],
                                       places=12)

    def test_pair_coefficient(self):
        """Test f = x_0 x_1 at S = {0} against mu_1 sqrt(1 - mu_0^2)."""
        f = monomial(3, [0, 1])
        shift = ProductShift(np.array([0.3, -0.6, 0.2]))
        expected = -0.6 * math.sqrt(1 - 0.09)
        self.assertAlmostEqual(fourier_coefficient_exact(f, [0], shift), expected, places=12)
        self.assertAlmostEqual(first_order_shifted_closed_form(f, 0, shift).value, expected, places=12)

    def test_off_support_coefficient(self):
        """Test that sets leaving the support have zero coefficient."""
        f = monomial(5, [0, 1])
        shift = ProductShift(np.full(5, 0.4))
        self.assertEqual(fourier_coefficient_exact(f, [0, 3], shift), 0.0)

    def test_closed_form_examples(self):
        """Test the closed form on single monomials."""
        shift = ProductShift(np.array([0.2, 0.5, -0.7, 0.1]))
        self.assertAlmostEqual(first_order_shifted_closed_form(monomial(4, [0]), 0, shift).value,
                               math.sqrt(1 - 0.04), places=12)
        self.assertAlmostEqual(first_order_shifted_closed_form(monomial(4, [0, 1, 2]), 0, shift).value,
                               0.5 * -0.7 * math.sqrt(1 - 0.04), places=12)
        zero = first_order_shifted_closed_form(monomial(4, [0, 1]), 0, ProductShift.zero(4))
        self.assertEqual(zero.value, 0.0)
        off = first_order_shifted_closed_form(monomial(4, [0, 1]), 3, shift)
        self.assertTrue(off.structural_zero)
        self.assertEqual(off.value, 0.0)

    def test_closed_form_agreement(self):
        """Test the closed form against enumeration on random juntas and shifts."""
        rng = make_rng(8)
        for _ in range(100):
            k = int(rng.integers(1, 6))
            f = random_junta(9, k, rng)
            shift = ProductShift.uniform(9, 0.75, rng)
            for j in f.support_T:
                closed = first_order_shifted_closed_form(f, j, shift).value
                self.assertAlmostEqual(closed, fourier_coefficient_exact(f, [j], shift), delta=1e-12)

    def test_shifted_spectrum_and_parseval(self):
        """Test the tensor transform against enumeration, with Parseval and reconstruction."""
        rng = make_rng(9)
        f = random_junta(8, 4, rng)
        shift = ProductShift.uniform(8, 0.75, rng)
        spectrum = shifted_spectrum(f, shift)
        for r in range(5):
            for S in itertools.combinations(f.support_T, r):
                self.assertAlmostEqual(spectrum[subset_mask(f, S)], fourier_coefficient_exact(f, S, shift), delta=1e-12)
        self.assertAlmostEqual(np.sum(spectrum ** 2), shifted_second_moment(f, shift), delta=1e-12)
        chi = character_matrix(shift.mu[list(f.support_T)])
        np.testing.assert_allclose(chi @ spectrum, f.truth_table, atol=1e-10)

    def test_standard_spectrum_is_walsh(self):
        """Test the butterfly transform on a parity and a majority."""
        parity = monomial(4, [0, 1, 2])
        expected = np.zeros(8)
        expected[0b111] = 1.0
        np.testing.assert_allclose(standard_spectrum(parity), expected, atol=1e-15)
        majority = BooleanJunta.from_function(3, [0, 1, 2], lambda p: float(np.sign(np.sum(p))))
        spectrum = standard_spectrum(majority)
        for mask in (0b100, 0b010, 0b001):
            self.assertAlmostEqual(spectrum[mask], 0.5, places=14)
        self.assertAlmostEqual(spectrum[0b111], -0.5, places=14)


class TestInfluence(unittest.TestCase):
    """Test cases for Boolean influence."""

    def test_examples(self):
        """Test influence examples."""
        self.assertAlmostEqual(influence(monomial(4, [0, 1, 2]), 0), 1.0, places=14)
        self.assertEqual(influence(monomial(4, [0, 1, 2]), 3), 0.0)
        f = BooleanJunta.from_function(3, [0, 1], lambda p: (p[0] + p[1]) / math.sqrt(2))
        self.assertAlmostEqual(influence(f, 0), 0.5, places=14)


class TestSmallBallSweep(unittest.TestCase):
    """Test cases for the degree-one small-ball sweep."""

    def setUp(self):
        self.epsilons = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5]

    def test_dictator_never_small(self):
        """Test that f = x_0 never falls below the threshold."""
        table = prop31_sweep(monomial(6, [0]), 0.75, self.epsilons, 5000, seed=10)
        self.assertTrue(np.all(table['estimate'] == 0.0))
        self.assertEqual(list(table.columns[:4]), ['j', 'epsilon', 'estimate', 'std_error'])

    def test_monotone_in_epsilon(self):
        """Test that estimates shrink with epsilon."""
        f = random_junta(10, 3, make_rng(11))
        table = prop31_sweep(f, 0.5, self.epsilons, 20000, seed=12)
        for _, rows in table.groupby('j'):
            self.assertTrue(np.all(np.diff(rows.sort_values('epsilon')['estimate'].to_numpy()) >= 0))

    def test_pair_decay(self):
        """Test f = x_0 x_1 against its one-dimensional integral and the decay slope."""
        eta = 0.75
        table = prop31_sweep(monomial(5, [0, 1]), eta, self.epsilons, 200000, seed=13)
        rows = table[table['j'] == 0]
        for epsilon, estimate, se in zip(rows['epsilon'], rows['estimate'], rows['std_error']):
            exact = prop31_pair_closed_form(eta, epsilon)
            self.assertLessEqual(abs(estimate - exact), 5 * max(se, 1e-4))
        self.assertGreaterEqual(decay_slope(table, 0), 0.4)

    def test_sweep_deterministic(self):
        """Test that sweeps repeat under the same seed."""
        f = monomial(5, [0, 1, 2])
        first = prop31_sweep(f, 0.5, self.epsilons, 5000, seed=14)
        second = prop31_sweep(f, 0.5, self.epsilons, 5000, seed=14)
        self.assertTrue(first.equals(second))

    def test_invalid_eta(self):
        """Test that eta outside (0, 3/4] is rejected."""
        with self.assertRaises(ConfigurationError):
            prop31_sweep(monomial(3, [0]), 0.9, self.epsilons, 10, seed=0)

    def test_variance_lower_bound(self):
        """Test the degree-one second-moment bound by Monte Carlo."""
        f = random_junta(8, 3, make_rng(15))
        eta = 0.75
        support_mu = make_rng(16).uniform(-eta, eta, size=(200000, f.k))
        for position, j in enumerate(f.support_T):
            values = degree_one_values(f, j, support_mu)
            moment = np.mean((1 - support_mu[:, position] ** 2) * values ** 2)
            self.assertGreaterEqual(moment, 0.97 * degree_one_variance_bound(f, j, eta))


if __name__ == '__main__':
    unittest.main()
