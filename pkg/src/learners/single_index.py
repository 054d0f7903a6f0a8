"""
Shifted Gaussian single-index models and the two-stage parametric learner.

Stage one takes a single batched spherical gradient step on shifted data with
the link shifted by mu = <theta_0, alpha>. Stage two runs online spherical SGD
on unshifted data.
"""
import math
import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from ..spectral.links import LinkFunction, parse_link
from ..spectral.hermite import gauss_hermite_rule, hermite_spectrum, first_coefficient_map
from ..utils.errors import ConfigurationError, PreconditionError, UnsupportedLinkError
from ..utils.helpers import make_rng, spawn_seeds, random_unit_vector

logger = logging.getLogger(__name__)

SIGN_POLICIES = ('plus', 'minus', 'best-of-both')
DEFAULT_SPECTRUM_K = 12
UNIT_TOLERANCE = 1e-12

# Online samples are generated in chunks of this many rows
_STEP2_CHUNK = 8192


@dataclass
class SingleIndexInstance:
    """Model y = f(<w*, x>) + noise with x ~ N(alpha, I_d)."""
    dimension_d: int
    signal_wstar: np.ndarray
    shift_alpha: np.ndarray
    link: LinkFunction
    noise_sigma: float = 0.1

    def __post_init__(self):
        self.signal_wstar = np.asarray(self.signal_wstar, dtype=float)
        self.shift_alpha = np.asarray(self.shift_alpha, dtype=float)
        if self.signal_wstar.shape != (self.dimension_d,) or self.shift_alpha.shape != (self.dimension_d,):
            raise PreconditionError(f"signal and shift must be vectors of length {self.dimension_d}")
        if abs(np.linalg.norm(self.signal_wstar) - 1.0) > UNIT_TOLERANCE:
            raise PreconditionError("signal_wstar must have unit norm")
        if self.noise_sigma < 0:
            raise PreconditionError(f"noise_sigma must be nonnegative, got {self.noise_sigma}")

    @property
    def mu_star(self):
        """The shift <w*, alpha> seen by the link."""
        return float(self.signal_wstar @ self.shift_alpha)

    def with_shift(self, alpha):
        return SingleIndexInstance(self.dimension_d, self.signal_wstar, alpha, self.link, self.noise_sigma)


@dataclass
class SphericalState:
    """Unit-norm parameter theta and its step counter."""
    theta: np.ndarray
    step_index: int = 0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if abs(np.linalg.norm(self.theta) - 1.0) > UNIT_TOLERANCE:
            raise PreconditionError("theta must have unit norm")

    def overlap(self, wstar):
        return float(self.theta @ wstar)


@dataclass
class ParametricConfig:
    """
    Settings of the two-stage learner.

    A missing eta_step1 selects the rate sqrt(f_mu(1) f_mu*(1) / (90 L^6));
    a missing eta_step2 selects the online rate log(d)^(-3/2).
    """
    n_step1: int
    n_step2: int
    eta_step1: Optional[float] = None
    eta_step2: Optional[float] = None
    seed: int = 0
    step1_sign_policy: str = 'best-of-both'
    holdout_size: Optional[int] = None
    quadrature_order: int = 64

    def __post_init__(self):
        if self.n_step1 < 1 or self.n_step2 < 1:
            raise ConfigurationError(f"n_step1 and n_step2 must be >= 1, got {self.n_step1}, {self.n_step2}")
        if self.step1_sign_policy not in SIGN_POLICIES:
            raise ConfigurationError(f"unknown sign policy {self.step1_sign_policy!r}; expected one of {SIGN_POLICIES}")
        for name in ('eta_step1', 'eta_step2'):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ConfigurationError(f"{name} must be positive, got {value}")

    @classmethod
    def from_config(cls, config, d, **overrides):
        """
        Build a config from the `parametric` section, with per-run overrides.

        Args:
            config (dict): Application configuration
            d (int): Dimension, used for the n_step1 = ceil(d ln^2 d) default
            **overrides: Explicit field values

        Returns:
            ParametricConfig: The settings
        """
        section = dict(config.get('parametric', {}))
        section.update({k: v for k, v in overrides.items() if v is not None})
        n_step1 = section.get('n_step1') or math.ceil(d * math.log(d) ** 2)
        return cls(
            n_step1=int(n_step1),
            n_step2=int(section.get('n_step2') or n_step1),
            eta_step1=section.get('eta_step1'),
            eta_step2=section.get('eta_step2'),
            seed=int(section.get('seed', 0)),
            step1_sign_policy=section.get('step1_sign_policy', 'best-of-both'),
            holdout_size=section.get('holdout_size'),
            quadrature_order=int(section.get('quadrature_order', 64)),
        )


class ParametricRun(NamedTuple):
    """Outcome of one run of the two-stage learner."""
    theta: np.ndarray
    overlap_trace: np.ndarray
    step1_overlap: float
    sign: str
    eta_step1: float
    floor: float


def make_instance(d, link, seed, shifted=True, noise_sigma=0.1):
    """
    Draw w* uniformly on the sphere and alpha ~ N(0, I_d).

    The shift is drawn in both cases and zeroed for unshifted instances, so
    paired instances share w*.

    Args:
        d (int): Dimension
        link (LinkFunction or str): Link or link name
        seed (int): Seed
        shifted (bool): Keep the drawn shift
        noise_sigma (float): Label noise level

    Returns:
        SingleIndexInstance: The instance
    """
    rng = make_rng(seed)
    wstar = random_unit_vector(d, rng)
    alpha = rng.standard_normal(d)
    if not shifted:
        alpha = np.zeros(d)
    return SingleIndexInstance(d, wstar, alpha, parse_link(link), noise_sigma)


def sample_batch(inst, n, shifted, seed):
    """
    Draw inputs and noisy labels.

    The centered draws and the noise do not depend on `shifted`, so the
    same seed gives paired shifted and unshifted batches.

    Args:
        inst (SingleIndexInstance): Model
        n (int): Number of samples
        shifted (bool): Draw from N(alpha, I_d) instead of N(0, I_d)
        seed (int): Seed

    Returns:
        tuple: (inputs n x d, labels n)
    """
    if n < 1:
        raise ConfigurationError(f"batch size must be >= 1, got {n}")
    rng = make_rng(seed)
    centered = rng.standard_normal((n, inst.dimension_d))
    noise = rng.standard_normal(n) * inst.noise_sigma
    inputs = centered + inst.shift_alpha if shifted else centered
    labels = inst.link(inputs @ inst.signal_wstar) + noise
    return inputs, labels


def spherical_gradient_samples(state, inst, inputs, labels, mu_guess):
    """
    Per-sample spherical gradients 2 f'_mu(u)(f_mu(u) - y)(I - theta theta^T) x.

    These are gradients of the unhalved squared loss (f_mu(u) - y)^2, so the
    factor 2 is kept: a single sample gives twice the value of the
    half-squared-loss convention.

    Args:
        state (SphericalState): Current direction
        inst (SingleIndexInstance): Model (supplies the link)
        inputs (numpy.ndarray): Centered inputs x - alpha
        labels (numpy.ndarray): Labels
        mu_guess (float): Shift applied to the link

    Returns:
        numpy.ndarray: n x d matrix of tangent vectors
    """
    if not inst.link.has_derivative:
        raise UnsupportedLinkError(f"link {inst.link.label} has no derivative")
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    labels = np.atleast_1d(np.asarray(labels, dtype=float))
    if inputs.shape[0] == 0:
        raise ConfigurationError("gradient needs at least one sample")
    theta = state.theta
    u = inputs @ theta
    weight = 2.0 * inst.link.grad(u + mu_guess) * (inst.link(u + mu_guess) - labels)
    return weight[:, None] * (inputs - u[:, None] * theta[None, :])


def _project(vector, theta):
    return vector - (vector @ theta) * theta


def empirical_spherical_gradient(state, inst, inputs, labels, mu_guess):
    """
    Spherical gradient of the batch loss (1/n) sum (f_mu(<theta, x>) - y)^2.

    Args:
        state (SphericalState): Current direction
        inst (SingleIndexInstance): Model
        inputs (numpy.ndarray): Centered inputs x - alpha
        labels (numpy.ndarray): Labels
        mu_guess (float): Shift applied to the link, normally <theta, alpha>

    Returns:
        numpy.ndarray: Tangent vector at theta
    """
    samples = spherical_gradient_samples(state, inst, inputs, labels, mu_guess)
    return _project(samples.mean(axis=0), state.theta)


def population_spherical_gradient(state, inst, mu, mu_star, spectrum_K=DEFAULT_SPECTRUM_K):
    """
    Closed-form population gradient -2 (sum_k k f_mu(k) f_mu*(k) m^(k-1)) (w* - m theta).

    Args:
        state (SphericalState): Current direction
        inst (SingleIndexInstance): Model
        mu (float): Shift of the fitted link
        mu_star (float): Shift of the true link
        spectrum_K (int): Hermite truncation

    Returns:
        numpy.ndarray: Tangent vector at theta
    """
    drift = _overlap_drift(inst.link, mu, mu_star, spectrum_K)
    m = state.overlap(inst.signal_wstar)
    return -2.0 * drift(m) * (inst.signal_wstar - m * state.theta)


def _overlap_drift(link, mu, mu_star, spectrum_K):
    fitted = hermite_spectrum(link, spectrum_K, mu).coeffs
    target = hermite_spectrum(link, spectrum_K, mu_star).coeffs
    weights = np.arange(spectrum_K + 1) * fitted * target

    def drift(m):
        return float(sum(weights[k] * m ** (k - 1) for k in range(1, spectrum_K + 1)))

    return drift


def population_flow(state, inst, mu, mu_star, rate, steps, spectrum_K=DEFAULT_SPECTRUM_K):
    """
    Deterministic spherical steps along the population gradient.

    Args:
        state (SphericalState): Starting direction
        inst (SingleIndexInstance): Model
        mu (float): Shift of the fitted link
        mu_star (float): Shift of the true link
        rate (float): Step size
        steps (int): Number of steps
        spectrum_K (int): Hermite truncation

    Returns:
        tuple: (final SphericalState, overlap trace of length steps + 1)
    """
    drift = _overlap_drift(inst.link, mu, mu_star, spectrum_K)
    wstar = inst.signal_wstar
    theta = state.theta.copy()
    trace = [float(theta @ wstar)]
    for _ in range(steps):
        m = float(theta @ wstar)
        gradient = -2.0 * drift(m) * (wstar - m * theta)
        theta = theta - rate * gradient
        theta /= np.linalg.norm(theta)
        trace.append(float(theta @ wstar))
    return SphericalState(theta, state.step_index + steps), np.array(trace)


def step1_rate(inst, mu, rule=None):
    """
    Rate sqrt(f_mu(1) f_mu*(1) / (90 L^6)) for the batched first step.

    Args:
        inst (SingleIndexInstance): Model
        mu (float): Shift of the fitted link
        rule (QuadratureRule, optional): Quadrature rule

    Returns:
        float: Step size (zero when the first coefficients vanish)
    """
    rule = rule or gauss_hermite_rule(64)
    product = first_coefficient_map(inst.link, mu, rule) * first_coefficient_map(inst.link, inst.mu_star, rule)
    return math.sqrt(abs(product) / (90.0 * inst.link.lipschitz_L ** 6))


def default_step2_rate(d):
    """Online rate log(d)^(-3/2) of the second step."""
    return math.log(d) ** -1.5


def weak_recovery_floor(c1, L, d):
    """
    Lower bound on m(theta_1) after the first step.

    Args:
        c1 (float): f_mu(1) f_mu*(1)
        L (float): Lipschitz constant
        d (int): Dimension

    Returns:
        float: (2/sqrt(90)) c1 sqrt(c1 / (90 L^6)) - 102 L^4 / sqrt(log d)
    """
    c1 = abs(c1)
    return 2.0 / math.sqrt(90.0) * c1 * math.sqrt(c1 / (90.0 * L ** 6)) - 102.0 * L ** 4 / math.sqrt(math.log(d))


def _holdout_loss(theta, inst, inputs, labels):
    return float(np.mean((inst.link(inputs @ theta) - labels) ** 2))


def run_algorithm1(inst, cfg):
    """
    Two-stage spherical SGD.

    Args:
        inst (SingleIndexInstance): Model, with its shift alpha
        cfg (ParametricConfig): Settings

    Returns:
        ParametricRun: Final direction, overlap trace m(theta_0), m(theta_1), ... and step-one diagnostics
    """
    d = inst.dimension_d
    wstar, alpha = inst.signal_wstar, inst.shift_alpha
    rule = gauss_hermite_rule(cfg.quadrature_order)
    init_seed, step1_seed, holdout_seed, step2_seed = spawn_seeds(cfg.seed, 4)

    theta = random_unit_vector(d, make_rng(init_seed))
    trace = [float(theta @ wstar)]
    if abs(trace[0]) > d ** -0.25:
        logger.warning(f"initial overlap {trace[0]:.3f} exceeds d^(-1/4) = {d ** -0.25:.3f}")

    # Step 1: one batched step on shifted data, mu frozen at <theta_0, alpha>
    mu_guess = float(theta @ alpha)
    inputs, labels = sample_batch(inst, cfg.n_step1, True, step1_seed)
    direction = empirical_spherical_gradient(SphericalState(theta), inst, inputs - alpha, labels, mu_guess)

    c1 = first_coefficient_map(inst.link, mu_guess, rule) * first_coefficient_map(inst.link, inst.mu_star, rule)
    eta = cfg.eta_step1 if cfg.eta_step1 is not None else step1_rate(inst, mu_guess, rule)
    floor = weak_recovery_floor(c1, inst.link.lipschitz_L, d)

    candidates = {'plus': theta + eta * direction, 'minus': theta - eta * direction}
    candidates = {sign: v / np.linalg.norm(v) for sign, v in candidates.items()}
    if cfg.step1_sign_policy == 'best-of-both':
        holdout_inputs, holdout_labels = sample_batch(inst, cfg.holdout_size or cfg.n_step1, True, holdout_seed)
        sign = min(('minus', 'plus'), key=lambda s: _holdout_loss(candidates[s], inst, holdout_inputs, holdout_labels))
    else:
        sign = cfg.step1_sign_policy
    theta = candidates[sign]
    step1_overlap = float(theta @ wstar)
    trace.append(step1_overlap)
    logger.debug(f"step 1: eta={eta:.4g}, sign={sign}, m={step1_overlap:.4f}, floor={floor:.4g}")

    # Step 2: online SGD on unshifted data with the unshifted link
    rate = cfg.eta_step2 if cfg.eta_step2 is not None else default_step2_rate(d)
    link = inst.link
    n_chunks = math.ceil(cfg.n_step2 / _STEP2_CHUNK)
    remaining = cfg.n_step2
    for chunk_seed in spawn_seeds(step2_seed, n_chunks):
        size = min(_STEP2_CHUNK, remaining)
        remaining -= size
        xs, ys = sample_batch(inst, size, False, chunk_seed)
        for x, y in zip(xs, ys):
            u = float(x @ theta)
            weight = 2.0 * float(link.grad(u)) * (float(link(u)) - y)
            theta = theta - rate * weight * (x - u * theta)
            theta /= np.linalg.norm(theta)
            trace.append(float(theta @ wstar))

    logger.info(f"parametric run seed={cfg.seed} d={d} link={link.label}: m1={step1_overlap:.3f}, final m={trace[-1]:.3f}")
    return ParametricRun(theta, np.array(trace), step1_overlap, sign, float(eta), float(floor))
