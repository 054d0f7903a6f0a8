"""
Hermite spectral analysis for the Shift Learning Lab.

Gaussian expectations are computed by quadrature. Smooth links use a
Gauss-Hermite rule directly; links with kinks are integrated piecewise with
Gauss-Legendre nodes on [-12, 12], split at the shifted kinks and weighted by
the Gaussian density.
"""
import math
import logging
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import pandas as pd
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.stats import norm

from .links import LinkFunction, Nonlinearity, hermite_values
from ..utils.errors import ConfigurationError, NumericalConsistencyWarning
from ..utils.helpers import make_rng

logger = logging.getLogger(__name__)

DEFAULT_ORDER = 64
MIN_ORDER = 2
MAX_ORDER = 256
ZERO_TOLERANCE = 1e-9
STEIN_TOLERANCE = 1e-4

# Gaussian mass beyond this radius is below 1e-32
TRUNCATION_RADIUS = 12.0

_CHUNK = 4096
_SMALL_BALL_STREAM = 11


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes and weights for integration against the standard Gaussian measure."""
    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def expect(self, values):
        """Weighted sum of function values at the nodes."""
        return float(np.dot(self.weights, values))


@dataclass(frozen=True, eq=False)
class HermiteSpectrum:
    """Coefficients f_mu(0..K) of a (possibly shifted) link."""
    coeffs: np.ndarray
    truncation_K: int
    shift_mu: float

    def __getitem__(self, k):
        return float(self.coeffs[k])

    @property
    def energy(self):
        """Sum of squared coefficients of order >= 1."""
        return float(np.sum(self.coeffs[1:] ** 2))

    def check_parseval(self, tol=1e-6):
        return self.energy <= 1.0 + tol


def hermite_eval(k, x):
    """
    Normalized Hermite polynomial H_k(x).

    Args:
        k (int): Order, at most 60
        x (float or numpy.ndarray): Point(s)

    Returns:
        float or numpy.ndarray: H_k(x)
    """
    values = hermite_values(k, x)
    return float(values) if np.ndim(values) == 0 else values


@lru_cache(maxsize=None)
def gauss_hermite_rule(order=DEFAULT_ORDER):
    """
    Gauss-Hermite rule normalized to the standard Gaussian density.

    Args:
        order (int): Number of nodes, 2..256

    Returns:
        QuadratureRule: Rule whose weights sum to one
    """
    if not isinstance(order, (int, np.integer)) or not MIN_ORDER <= order <= MAX_ORDER:
        raise ConfigurationError(f"quadrature order must be an integer in [{MIN_ORDER}, {MAX_ORDER}], got {order}")
    nodes, weights = hermegauss(int(order))
    weights = weights / weights.sum()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes=nodes, weights=weights, order=int(order))


@lru_cache(maxsize=None)
def _legendre(order):
    x, w = leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gaussian_expectation(integrand, mus, rule, kinks=()):
    """
    E_z[integrand(z, mu)] for z ~ N(0,1), vectorized over mu.

    Args:
        integrand (callable): Function of (z, mu) broadcasting over 2-D arrays
        mus (float or numpy.ndarray): Shift values
        rule (QuadratureRule): Base rule; its order is reused per piece for kinked integrands
        kinks (sequence): Kink locations of the unshifted link; in z they sit at kink - mu

    Returns:
        numpy.ndarray: One expectation per mu
    """
    mus = np.atleast_1d(np.asarray(mus, dtype=float))
    out = np.empty(mus.shape[0])
    for start in range(0, mus.shape[0], _CHUNK):
        block = mus[start:start + _CHUNK]
        if kinks:
            out[start:start + _CHUNK] = _piecewise_expectation(integrand, block, rule.order, kinks)
        else:
            z = rule.nodes[None, :]
            out[start:start + _CHUNK] = integrand(z, block[:, None]) @ rule.weights
    return out


def _piecewise_expectation(integrand, mus, order, kinks):
    x, w = _legendre(order)
    cuts = np.clip(np.asarray(kinks, dtype=float)[None, :] - mus[:, None], -TRUNCATION_RADIUS, TRUNCATION_RADIUS)
    edges = np.concatenate([
        np.full((mus.shape[0], 1), -TRUNCATION_RADIUS),
        np.sort(cuts, axis=1),
        np.full((mus.shape[0], 1), TRUNCATION_RADIUS),
    ], axis=1)

    total = np.zeros(mus.shape[0])
    for p in range(edges.shape[1] - 1):
        lo, hi = edges[:, p:p + 1], edges[:, p + 1:p + 2]
        half = (hi - lo) / 2.0
        z = lo + half * (x[None, :] + 1.0)
        total += np.sum(half * w[None, :] * norm.pdf(z) * integrand(z, mus[:, None]), axis=1)
    return total


def _check_order(k, rule):
    if rule.order < 2 * k + 8:
        raise ConfigurationError(f"coefficient of order {k} needs a rule of order >= {2 * k + 8}, got {rule.order}")


def hermite_coefficient(f, k, mu, rule):
    """
    Shifted Hermite coefficient f_mu(k) = E[f(z + mu) H_k(z)].

    Args:
        f (LinkFunction): Link
        k (int): Order
        mu (float): Shift
        rule (QuadratureRule): Quadrature rule of order >= 2k + 8

    Returns:
        float: The coefficient up to quadrature error
    """
    _check_order(k, rule)
    value = gaussian_expectation(lambda z, m: f(z + m) * hermite_values(k, z), mu, rule, f.breakpoints)
    return float(value[0])


def hermite_spectrum(f, K, mu=0.0, rule=None):
    """
    Coefficients of f_mu up to order K.

    Args:
        f (LinkFunction): Link
        K (int): Truncation order
        mu (float): Shift
        rule (QuadratureRule, optional): Defaults to the smallest admissible rule of order >= 64

    Returns:
        HermiteSpectrum: Coefficients 0..K
    """
    if rule is None:
        rule = gauss_hermite_rule(max(DEFAULT_ORDER, 2 * K + 8))
    _check_order(K, rule)
    coeffs = np.array([hermite_coefficient(f, k, mu, rule) for k in range(K + 1)])
    return HermiteSpectrum(coeffs=coeffs, truncation_K=int(K), shift_mu=float(mu))


def shift_operator(K, mu):
    """
    Matrix of <H_j(. + mu), H_k> for 0 <= k, j <= K.

    The entry for j >= k is sqrt(j!/k!) mu^(j-k) / (j-k)!; entries with j < k vanish.

    Args:
        K (int): Truncation order
        mu (float): Shift

    Returns:
        numpy.ndarray: (K+1) x (K+1) upper-triangular matrix
    """
    matrix = np.zeros((K + 1, K + 1))
    for k in range(K + 1):
        for j in range(k, K + 1):
            log_scale = 0.5 * (math.lgamma(j + 1) - math.lgamma(k + 1)) - math.lgamma(j - k + 1)
            matrix[k, j] = math.exp(log_scale) * mu ** (j - k)
    return matrix


def first_coefficient_values(f, mus, rule):
    """
    F_1(mu) = E[f(z + mu) z] for an array of shifts.

    Args:
        f (LinkFunction): Link
        mus (numpy.ndarray): Shifts
        rule (QuadratureRule): Quadrature rule

    Returns:
        numpy.ndarray: F_1 at each shift
    """
    return gaussian_expectation(lambda z, m: f(z + m) * z, mus, rule, f.breakpoints)


def stein_discrepancy(f, mu, rule):
    """
    |E[f(z + mu) z] - E[f'(z + mu)]| for a link with a derivative.

    Args:
        f (LinkFunction): Link with derivative
        mu (float): Shift
        rule (QuadratureRule): Quadrature rule

    Returns:
        tuple: (E[f(z+mu) z], E[f'(z+mu)], absolute discrepancy)
    """
    direct = float(first_coefficient_values(f, mu, rule)[0])
    stein = float(gaussian_expectation(lambda z, m: f.grad(z + m), mu, rule, f.breakpoints)[0])
    return direct, stein, abs(direct - stein)


def first_coefficient_map(f, mu, rule):
    """
    The shifted first Hermite coefficient F_1(mu).

    When f has a derivative the Stein route E[f'(z + mu)] is computed as well;
    on disagreement above 1e-4 the quadrature order is doubled once, and a
    NumericalConsistencyWarning is raised if the routes still disagree.

    Args:
        f (LinkFunction): Link
        mu (float): Shift
        rule (QuadratureRule): Quadrature rule

    Returns:
        float: F_1(mu) from the direct route
    """
    if not f.has_derivative:
        return float(first_coefficient_values(f, mu, rule)[0])

    direct, stein, gap = stein_discrepancy(f, mu, rule)
    if gap > STEIN_TOLERANCE and 2 * rule.order <= MAX_ORDER:
        logger.debug(f"Stein routes for {f.label} at mu={mu} differ by {gap:.3e}; doubling order to {2 * rule.order}")
        direct, stein, gap = stein_discrepancy(f, mu, gauss_hermite_rule(2 * rule.order))

    if gap > STEIN_TOLERANCE:
        message = f"Stein routes for {f.label} at mu={mu} disagree by {gap:.3e}"
        logger.warning(message)
        warnings.warn(message, NumericalConsistencyWarning, stacklevel=2)
    else:
        logger.debug(f"F_1({mu}) for {f.label} = {direct:.10g} (Stein gap {gap:.2e})")
    return direct


def information_exponent(f, rule, K=10, tol=ZERO_TOLERANCE):
    """
    Smallest k in 1..K with |f(k)| > tol.

    Args:
        f (LinkFunction): Link
        rule (QuadratureRule): Quadrature rule of order >= 2K + 8
        K (int): Largest order inspected
        tol (float): Coefficients at or below this magnitude count as zero

    Returns:
        int or None: The information exponent, or None when every coefficient up to K vanishes
    """
    if tol <= 0:
        raise ConfigurationError(f"zero tolerance must be positive, got {tol}")
    for k in range(1, K + 1):
        if abs(hermite_coefficient(f, k, 0.0, rule)) > tol:
            return k
    logger.info(f"No nonzero Hermite coefficient of {f.label} up to order {K}")
    return None


def normalize_link(f, rule):
    """
    Rescale a link to zero mean and unit second moment under N(0,1).

    Args:
        f (LinkFunction): Link
        rule (QuadratureRule): Quadrature rule

    Returns:
        LinkFunction: (f - E f) / sd(f)
    """
    mean = float(gaussian_expectation(lambda z, m: f(z + m), 0.0, rule, f.breakpoints)[0])
    second = float(gaussian_expectation(lambda z, m: f(z + m) ** 2, 0.0, rule, f.breakpoints)[0])
    scale = math.sqrt(max(second - mean ** 2, 0.0))
    if scale == 0.0:
        raise ConfigurationError(f"link {f.label} is constant under the Gaussian measure")

    base_eval, base_derivative = f.eval, f.derivative
    derivative = None if base_derivative is None else (lambda x: base_derivative(x) / scale)
    witness = None
    if f.nonlinearity is not None:
        w = f.nonlinearity
        witness = Nonlinearity(epsilon=w.epsilon / scale, delta=w.delta, c=w.c)
    return LinkFunction(
        eval=lambda x: (base_eval(x) - mean) / scale,
        derivative=derivative,
        lipschitz_L=f.lipschitz_L / scale,
        label=f"normalized({f.label})",
        nonlinearity=witness,
        breakpoints=f.breakpoints,
    )


def _sample_first_coefficients(f, n_samples, seed, rule):
    if n_samples < 100:
        raise ConfigurationError(f"small-ball estimation needs at least 100 samples, got {n_samples}")
    mus = make_rng(seed, _SMALL_BALL_STREAM).standard_normal(n_samples)
    return first_coefficient_values(f, mus, rule)


def small_ball_probability(f, lam, n_samples, seed, rule):
    """
    Monte-Carlo estimate of P(|F_1(mu)| <= lambda) for mu ~ N(0,1).

    Args:
        f (LinkFunction): Link
        lam (float): Radius lambda > 0
        n_samples (int): Number of shift draws, at least 100
        seed (int): Seed
        rule (QuadratureRule): Quadrature rule

    Returns:
        tuple: (estimate, binomial standard error)
    """
    curve = small_ball_curve(f, [lam], n_samples, seed, rule)
    row = curve.iloc[0]
    return float(row['estimate']), float(row['std_error'])


def small_ball_curve(f, lambdas, n_samples, seed, rule):
    """
    Small-ball estimates for several radii from one set of shift draws.

    Args:
        f (LinkFunction): Link
        lambdas (sequence): Radii
        n_samples (int): Number of shift draws
        seed (int): Seed
        rule (QuadratureRule): Quadrature rule

    Returns:
        pandas.DataFrame: Columns lambda, estimate, std_error, n_samples, seed
    """
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(lambdas <= 0):
        raise ConfigurationError("small-ball radii must be positive")
    magnitudes = np.abs(_sample_first_coefficients(f, n_samples, seed, rule))

    estimates = np.array([np.mean(magnitudes <= lam) for lam in lambdas])
    std_errors = np.sqrt(estimates * (1.0 - estimates) / n_samples)
    if np.any(lambdas < 1e-4):
        logger.warning(f"small-ball radii below 1e-4 are unreliable at {n_samples} samples")
    return pd.DataFrame({
        'lambda': lambdas,
        'estimate': estimates,
        'std_error': std_errors,
        'n_samples': n_samples,
        'seed': seed,
    })


def small_ball_closed_form(f, lam):
    """
    Exact P(|F_1(mu)| <= lambda) where a closed form is known.

    Args:
        f (LinkFunction or str): Link or link name
        lam (float): Radius

    Returns:
        float or None: The probability, or None without an oracle
    """
    label = f if isinstance(f, str) else f.label
    if label in ('linear', 'hermite:1'):
        return 1.0 if lam >= 1.0 else 0.0
    if label == 'hermite:2':
        # F_1(mu) = sqrt(2) mu
        return float(2.0 * norm.cdf(lam / math.sqrt(2.0)) - 1.0)
    if label == 'hermite:3':
        # F_1(mu) = sqrt(3/2) mu^2
        return float(2.0 * norm.cdf(math.sqrt(lam / math.sqrt(1.5))) - 1.0)
    if label == 'relu':
        # F_1(mu) = Phi(mu) is uniform on (0, 1)
        return float(min(lam, 1.0))
    return None


def shift_variance(f, rule, outer_order=DEFAULT_ORDER):
    """
    Var_{mu ~ N(0,1)} F_1(mu) by nested quadrature.

    Args:
        f (LinkFunction): Link
        rule (QuadratureRule): Inner rule
        outer_order (int): Order of the rule over mu

    Returns:
        float: The variance
    """
    outer = gauss_hermite_rule(outer_order)
    values = first_coefficient_values(f, outer.nodes, rule)
    mean = outer.expect(values)
    return outer.expect(values ** 2) - mean ** 2


def variance_lower_bound(f):
    """
    epsilon^2 delta^2 / 1000 from the link's nonlinearity witness.

    Args:
        f (LinkFunction): Link with a witness

    Returns:
        float or None: The bound, or None without a witness
    """
    if f.nonlinearity is None:
        return None
    return f.nonlinearity.epsilon ** 2 * f.nonlinearity.delta ** 2 / 1000.0


def empirical_lipschitz_ratio(f, mus, rule):
    """
    Largest difference quotient of mu -> F_1(mu) on a grid.

    Args:
        f (LinkFunction): Link
        mus (sequence): Grid of shifts
        rule (QuadratureRule): Quadrature rule

    Returns:
        float: max |F_1(b) - F_1(a)| / |b - a| over consecutive grid points
    """
    mus = np.sort(np.asarray(mus, dtype=float))
    values = first_coefficient_values(f, mus, rule)
    return float(np.max(np.abs(np.diff(values)) / np.diff(mus)))


def fit_small_ball_exponent(lambdas, estimates):
    """
    Least-squares fit of log P against log(1/lambda)^(2/3).

    Only radii below one with a positive estimate enter the fit.

    Args:
        lambdas (sequence): Radii
        estimates (sequence): Estimated probabilities

    Returns:
        dict: slope, intercept and the number of points used
    """
    lambdas = np.asarray(lambdas, dtype=float)
    estimates = np.asarray(estimates, dtype=float)
    mask = (lambdas < 1.0) & (estimates > 0.0)
    if mask.sum() < 2:
        return {'slope': float('nan'), 'intercept': float('nan'), 'n_points': int(mask.sum())}
    x = np.log(1.0 / lambdas[mask]) ** (2.0 / 3.0)
    slope, intercept = np.polyfit(x, np.log(estimates[mask]), 1)
    return {'slope': float(slope), 'intercept': float(intercept), 'n_points': int(mask.sum())}
