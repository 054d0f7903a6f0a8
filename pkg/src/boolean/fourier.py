"""
Fourier-Walsh analysis of Boolean juntas under shifted product measures.

Sign patterns on a support of size k are enumerated in the order of
itertools.product([-1, 1], repeat=k): pattern index bit (k-1-j) is set when
support coordinate j equals +1. Subsets of the support are bitmasks with the
same bit layout. All coefficient computations are exact enumerations.
"""
import json
import math
import logging
import itertools
from functools import lru_cache, reduce
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import quad

from ..utils.errors import ConfigurationError, DegenerateShiftError, PreconditionError
from ..utils.helpers import make_rng, spawn_seeds

logger = logging.getLogger(__name__)

MAX_SUPPORT = 20
DEGENERATE_MARGIN = 1e-9
MAX_ETA = 0.75
PARSEVAL_TOLERANCE = 1e-12

# Shift draws per chunk in sweeps
_SWEEP_CHUNK = 4096


@lru_cache(maxsize=None)
def sign_patterns(k):
    """
    All 2^k sign patterns in lexicographic order.

    Args:
        k (int): Support size

    Returns:
        numpy.ndarray: 2^k x k matrix of +-1 (read-only)
    """
    patterns = np.array(list(itertools.product([-1.0, 1.0], repeat=k)), dtype=float).reshape(2 ** k, k)
    patterns.flags.writeable = False
    return patterns


@dataclass
class BooleanJunta:
    """Function of d signs that only reads the coordinates in support_T."""
    dimension_d: int
    support_T: Tuple[int, ...]
    truth_table: np.ndarray
    bound_R: Optional[float] = None
    coefficients: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.support_T = tuple(int(i) for i in self.support_T)
        self.truth_table = np.asarray(self.truth_table, dtype=float)
        k = len(self.support_T)
        if k > MAX_SUPPORT:
            raise ConfigurationError(f"support size {k} exceeds the cap {MAX_SUPPORT}")
        if list(self.support_T) != sorted(set(self.support_T)):
            raise PreconditionError(f"support must be sorted and distinct, got {self.support_T}")
        if self.support_T and not (0 <= self.support_T[0] and self.support_T[-1] < self.dimension_d):
            raise PreconditionError(f"support {self.support_T} outside 0..{self.dimension_d - 1}")
        if self.truth_table.shape != (2 ** k,):
            raise PreconditionError(f"truth table must have 2^{k} = {2 ** k} entries, got {self.truth_table.size}")
        peak = float(np.max(np.abs(self.truth_table)))
        if self.bound_R is None:
            self.bound_R = peak
        elif peak > self.bound_R:
            raise PreconditionError(f"max |f| = {peak} exceeds the bound R = {self.bound_R}")
        self.coefficients = standard_spectrum(self)

    @property
    def k(self):
        return len(self.support_T)

    def position(self, j):
        """Index of coordinate j within the support, or None."""
        try:
            return self.support_T.index(int(j))
        except ValueError:
            return None

    def pattern_index(self, x):
        """Row indices into the truth table for n x d sign inputs."""
        support_values = np.atleast_2d(x)[:, list(self.support_T)]
        bits = (support_values > 0).astype(np.int64)
        return bits @ (1 << np.arange(self.k - 1, -1, -1, dtype=np.int64))

    def __call__(self, x):
        return self.truth_table[self.pattern_index(x)]

    def check_parseval(self, tol=PARSEVAL_TOLERANCE):
        return abs(float(np.sum(self.coefficients ** 2)) - float(np.mean(self.truth_table ** 2))) <= tol

    @classmethod
    def from_function(cls, d, support, fn):
        """
        Tabulate a callable on the support patterns.

        Args:
            d (int): Dimension
            support (sequence): Support coordinates
            fn (callable): Maps the k support signs of one pattern to a value

        Returns:
            BooleanJunta: The junta
        """
        support = tuple(sorted(support))
        table = [float(fn(p)) for p in sign_patterns(len(support))]
        return cls(d, support, np.array(table))

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(int(data['d']), tuple(data['support']), np.asarray(data['table'], dtype=float), data.get('bound'))
        except KeyError as e:
            raise ConfigurationError(f"junta specification is missing {e}") from e

    @classmethod
    def from_json(cls, text):
        """Parse the `{d, support, table}` format."""
        return cls.from_dict(json.loads(text))

    def to_dict(self):
        return {'d': self.dimension_d, 'support': list(self.support_T), 'table': self.truth_table.tolist()}

    def to_json(self):
        return json.dumps(self.to_dict())


@dataclass(frozen=True, eq=False)
class ProductShift:
    """
    Shift vector of a Rademacher product measure.

    Entries may reach +-1 (degenerate coordinates); operations that divide by
    sqrt(1 - mu_i^2) reject such coordinates when they are queried.
    """
    mu: np.ndarray
    eta_bound: Optional[float] = None

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        object.__setattr__(self, 'mu', mu)
        if mu.ndim != 1:
            raise PreconditionError("shift must be a vector")
        if np.any(np.abs(mu) > 1.0):
            raise PreconditionError("shift entries must lie in [-1, 1]")
        if self.eta_bound is not None:
            if not 0.0 <= self.eta_bound <= MAX_ETA:
                raise PreconditionError(f"eta_bound must lie in [0, {MAX_ETA}], got {self.eta_bound}")
            if mu.size and np.max(np.abs(mu)) > self.eta_bound:
                raise PreconditionError(f"max |mu| = {np.max(np.abs(mu)):.4g} exceeds eta_bound {self.eta_bound}")

    @property
    def d(self):
        return self.mu.shape[0]

    @classmethod
    def uniform(cls, d, eta, rng):
        """Draw mu ~ Unif[-eta, eta]^d."""
        return cls(rng.uniform(-eta, eta, size=d), eta_bound=eta)

    @classmethod
    def zero(cls, d):
        return cls(np.zeros(d), eta_bound=0.0)


class ClosedFormValue(NamedTuple):
    value: float
    structural_zero: bool


def _check_nondegenerate(mu_values, coordinates):
    mu_values = np.asarray(mu_values, dtype=float)
    bad = np.abs(mu_values) >= 1.0 - DEGENERATE_MARGIN
    if np.any(bad):
        offending = [c for c, flag in zip(coordinates, np.atleast_1d(bad)) if flag]
        raise DegenerateShiftError(f"shift too close to +-1 on coordinates {offending}")


def sample_shifted(shift, n, seed):
    """
    Draw n inputs from the product measure with P(x_i = 1) = (mu_i + 1)/2.

    Args:
        shift (ProductShift): Shift
        n (int): Number of samples
        seed (int): Seed

    Returns:
        numpy.ndarray: n x d matrix of +-1
    """
    rng = make_rng(seed)
    return np.where(rng.random((n, shift.d)) < (shift.mu + 1.0) / 2.0, 1.0, -1.0)


def chi_basis(S, shift, x):
    """
    Orthonormal character prod_{i in S} (x_i - mu_i) / sqrt(1 - mu_i^2).

    Args:
        S (iterable): Coordinates
        shift (ProductShift): Shift
        x (numpy.ndarray): Sign vector, or n x d matrix of sign vectors

    Returns:
        float or numpy.ndarray: Character values
    """
    S = sorted(set(int(i) for i in S))
    x = np.asarray(x, dtype=float)
    if not S:
        return 1.0 if x.ndim == 1 else np.ones(x.shape[0])
    mu = shift.mu[S]
    _check_nondegenerate(mu, S)
    factors = (x[..., S] - mu) / np.sqrt(1.0 - mu ** 2)
    value = np.prod(factors, axis=-1)
    return float(value) if x.ndim == 1 else value


def pattern_weights(support_mu):
    """Probability of each support pattern under the product measure."""
    support_mu = np.asarray(support_mu, dtype=float)
    return np.prod((1.0 + sign_patterns(support_mu.size) * support_mu) / 2.0, axis=1)


def fourier_coefficient_exact(f, S, shift):
    """
    Shifted Fourier coefficient E[f chi_{S,mu}] by exact enumeration.

    Args:
        f (BooleanJunta): Function
        S (iterable): Coordinates
        shift (ProductShift): Shift

    Returns:
        float: The coefficient
    """
    S = sorted(set(int(i) for i in S))
    _check_nondegenerate(shift.mu[S], S)
    if any(f.position(i) is None for i in S):
        return 0.0
    support = list(f.support_T)
    mu_T = shift.mu[support]
    patterns = sign_patterns(f.k)
    columns = [f.position(i) for i in S]
    factors = (patterns[:, columns] - mu_T[columns]) / np.sqrt(1.0 - mu_T[columns] ** 2)
    chi = np.prod(factors, axis=1)
    return float(np.sum(pattern_weights(mu_T) * f.truth_table * chi))


def _axis_transform(table, k, matrices):
    values = np.asarray(table, dtype=float).reshape((2,) * k) if k else np.asarray(table, dtype=float)
    for axis, matrix in enumerate(matrices):
        values = np.moveaxis(np.tensordot(matrix, values, axes=([1], [axis])), 0, axis)
    return values.reshape(-1)


def _coefficient_matrix(mu):
    sigma = math.sqrt(1.0 - mu * mu)
    return np.array([[(1.0 - mu) / 2.0, (1.0 + mu) / 2.0],
                     [-sigma / 2.0, sigma / 2.0]])


def standard_spectrum(f):
    """
    All 2^k coefficients under the uniform measure, by a butterfly
    Walsh-Hadamard transform.

    Args:
        f (BooleanJunta): Function

    Returns:
        numpy.ndarray: Coefficients indexed by subset bitmask
    """
    return _axis_transform(f.truth_table, f.k, [_coefficient_matrix(0.0)] * f.k)


def shifted_spectrum(f, shift):
    """
    All 2^k shifted coefficients through one 2 x 2 transform per support axis.

    Args:
        f (BooleanJunta): Function
        shift (ProductShift): Shift

    Returns:
        numpy.ndarray: Coefficients indexed by subset bitmask
    """
    mu_T = shift.mu[list(f.support_T)]
    _check_nondegenerate(mu_T, f.support_T)
    return _axis_transform(f.truth_table, f.k, [_coefficient_matrix(m) for m in mu_T])


def character_matrix(support_mu):
    """
    Values of every character on every pattern.

    Args:
        support_mu (numpy.ndarray): Shift restricted to the support

    Returns:
        numpy.ndarray: 2^k x 2^k matrix, rows patterns, columns subset masks
    """
    support_mu = np.asarray(support_mu, dtype=float)
    _check_nondegenerate(support_mu, range(support_mu.size))
    blocks = []
    for m in support_mu:
        sigma = math.sqrt(1.0 - m * m)
        blocks.append(np.array([[1.0, (-1.0 - m) / sigma], [1.0, (1.0 - m) / sigma]]))
    return reduce(np.kron, blocks, np.ones((1, 1)))


def shifted_second_moment(f, shift):
    return float(np.sum(pattern_weights(shift.mu[list(f.support_T)]) * f.truth_table ** 2))


def subset_mask(f, S):
    """Bitmask of a subset of the support."""
    mask = 0
    for i in S:
        position = f.position(i)
        if position is None:
            raise PreconditionError(f"coordinate {i} is outside the support {f.support_T}")
        mask |= 1 << (f.k - 1 - position)
    return mask


def _masks_containing(f, position):
    bit = 1 << (f.k - 1 - position)
    masks = np.arange(2 ** f.k)
    return masks[(masks & bit) != 0]


def influence(f, j):
    """
    Boolean influence sum_{S containing j} f_hat(S)^2.

    Args:
        f (BooleanJunta): Function
        j (int): Coordinate

    Returns:
        float: Influence, 0 off the support
    """
    position = f.position(j)
    if position is None:
        return 0.0
    return float(np.sum(f.coefficients[_masks_containing(f, position)] ** 2))


def degree_one_values(f, j, support_mu):
    """
    Closed-form f_hat_mu({j}) for a batch of support shifts.

    Args:
        f (BooleanJunta): Function
        j (int): Support coordinate
        support_mu (numpy.ndarray): m x k shifts on the support

    Returns:
        numpy.ndarray: m values sqrt(1 - mu_j^2) sum_{S containing j} f_hat(S) prod_{i in S \\ j} mu_i
    """
    position = f.position(j)
    support_mu = np.atleast_2d(np.asarray(support_mu, dtype=float))
    total = np.zeros(support_mu.shape[0])
    for mask in _masks_containing(f, position):
        coefficient = f.coefficients[mask]
        if coefficient == 0.0:
            continue
        others = [p for p in range(f.k) if p != position and mask & (1 << (f.k - 1 - p))]
        total += coefficient * np.prod(support_mu[:, others], axis=1)
    return np.sqrt(1.0 - support_mu[:, position] ** 2) * total


def first_order_shifted_closed_form(f, j, shift):
    """
    Degree-one shifted coefficient from the uniform-measure spectrum.

    Args:
        f (BooleanJunta): Function
        j (int): Coordinate
        shift (ProductShift): Shift

    Returns:
        ClosedFormValue: Value, and whether j lies off the support
    """
    if f.position(j) is None:
        return ClosedFormValue(0.0, True)
    _check_nondegenerate(shift.mu[[j]], [j])
    value = degree_one_values(f, j, shift.mu[list(f.support_T)][None, :])[0]
    return ClosedFormValue(float(value), False)


def prop31_sweep(f, eta, epsilon_grid, n_mu, seed):
    """
    Monte-Carlo small-ball probabilities of the degree-one shifted coefficients.

    For mu ~ Unif[-eta, eta]^d and each support coordinate j, estimates
    P(|f_hat_mu({j})| < epsilon eta^(k-1) sqrt(Inf_j)) on the grid.

    Args:
        f (BooleanJunta): Function
        eta (float): Shift range, in (0, 3/4]
        epsilon_grid (sequence): Values of epsilon
        n_mu (int): Number of shift draws
        seed (int): Seed

    Returns:
        pandas.DataFrame: Columns j, epsilon, estimate, std_error, threshold
    """
    if not 0.0 < eta <= MAX_ETA:
        raise ConfigurationError(f"eta must lie in (0, {MAX_ETA}], got {eta}")
    if n_mu < 1:
        raise ConfigurationError(f"n_mu must be >= 1, got {n_mu}")
    epsilons = np.sort(np.asarray(epsilon_grid, dtype=float))
    counts = {j: np.zeros(epsilons.size) for j in f.support_T}
    thresholds = {j: epsilons * eta ** (f.k - 1) * math.sqrt(influence(f, j)) for j in f.support_T}

    n_chunks = math.ceil(n_mu / _SWEEP_CHUNK)
    remaining = n_mu
    for chunk_seed in spawn_seeds(seed, n_chunks):
        size = min(_SWEEP_CHUNK, remaining)
        remaining -= size
        # Only the support coordinates of mu enter the coefficient
        support_mu = make_rng(chunk_seed).uniform(-eta, eta, size=(size, f.k))
        for j in f.support_T:
            magnitude = np.abs(degree_one_values(f, j, support_mu))
            counts[j] += np.sum(magnitude[:, None] < thresholds[j][None, :], axis=0)

    rows = []
    for j in f.support_T:
        estimates = counts[j] / n_mu
        for epsilon, p, threshold in zip(epsilons, estimates, thresholds[j]):
            rows.append({'j': j, 'epsilon': epsilon, 'estimate': p,
                         'std_error': math.sqrt(p * (1.0 - p) / n_mu), 'threshold': threshold})
    logger.info(f"prop31 sweep: k={f.k}, eta={eta}, {len(epsilons)} epsilons, {n_mu} shift draws")
    return pd.DataFrame(rows, columns=['j', 'epsilon', 'estimate', 'std_error', 'threshold'])


def prop31_pair_closed_form(eta, epsilon):
    """
    Exact small-ball probability for f = x_a x_b at coordinate a.

    Args:
        eta (float): Shift range
        epsilon (float): Relative threshold

    Returns:
        float: (1/eta) int_0^eta min(1, epsilon / sqrt(1 - u^2)) du
    """
    value, _ = quad(lambda u: min(1.0, epsilon / math.sqrt(1.0 - u * u)), 0.0, eta, limit=200)
    return value / eta


def decay_slope(table, j):
    """
    Log-log slope of the sweep estimates against epsilon for coordinate j.

    Args:
        table (pandas.DataFrame): Output of prop31_sweep
        j (int): Coordinate

    Returns:
        float: Fitted slope, NaN with fewer than two positive estimates
    """
    rows = table[(table['j'] == j) & (table['estimate'] > 0)]
    if len(rows) < 2:
        return float('nan')
    slope, _ = np.polyfit(np.log(rows['epsilon']), np.log(rows['estimate']), 1)
    return float(slope)


def degree_one_variance_bound(f, j, eta):
    """Lower bound Inf_j (eta^2/3)^(k-1) (1 - 2 eta^2/3 + eta^4/5) on E[(1 - mu_j^2) f_hat_mu({j})^2]."""
    return influence(f, j) * (eta ** 2 / 3.0) ** (f.k - 1) * (1.0 - 2.0 * eta ** 2 / 3.0 + eta ** 4 / 5.0)
