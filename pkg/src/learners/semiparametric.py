"""
Shared-direction ReLU network and its gradient flow for the Shift Learning Lab.

The network N(x) = (1/sqrt(K)) sum_i c_i relu(s_i <theta, x> + tau_i) is
trained by explicit-Euler steps of the regularized empirical loss. On shifted
inputs the biases follow the direction so that s_i <theta, alpha> + tau_i never
changes.
"""
import math
import logging
from dataclasses import dataclass, replace

import numpy as np

from .single_index import SingleIndexInstance, sample_batch
from ..utils.errors import ConfigurationError, PreconditionError
from ..utils.helpers import make_rng, spawn_seeds, random_unit_vector

logger = logging.getLogger(__name__)

MIN_WIDTH = 8
UNIT_TOLERANCE = 1e-12


@dataclass
class SharedDirectionNet:
    """Two-layer ReLU network whose units share one direction."""
    width_K: int
    second_layer_c: np.ndarray
    biases_tau: np.ndarray
    signs_s: np.ndarray
    direction_theta: np.ndarray

    def __post_init__(self):
        self.second_layer_c = np.asarray(self.second_layer_c, dtype=float)
        self.biases_tau = np.asarray(self.biases_tau, dtype=float)
        self.signs_s = np.asarray(self.signs_s, dtype=float)
        self.direction_theta = np.asarray(self.direction_theta, dtype=float)
        for name in ('second_layer_c', 'biases_tau', 'signs_s'):
            if getattr(self, name).shape != (self.width_K,):
                raise PreconditionError(f"{name} must have length {self.width_K}")
        if not np.all(np.abs(self.signs_s) == 1.0):
            raise PreconditionError("signs_s entries must be exactly +1 or -1")
        if abs(np.linalg.norm(self.direction_theta) - 1.0) > UNIT_TOLERANCE:
            raise PreconditionError("direction_theta must have unit norm")

    def coupled_bias(self, alpha):
        """The conserved quantity s_i <theta, alpha> + tau_i."""
        return self.signs_s * (self.direction_theta @ alpha) + self.biases_tau


@dataclass
class FlowConfig:
    reg_beta: float = 1e-3
    freeze_time_Tprime: float = 5.0
    horizon_T: float = 60.0
    dt: float = 0.05
    sparsity_K0: int = 4
    init_radius_rho: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.reg_beta < 0 or self.freeze_time_Tprime < 0:
            raise ConfigurationError("reg_beta and freeze_time_Tprime must be nonnegative")
        if not 0 < self.dt < self.horizon_T:
            raise ConfigurationError(f"need 0 < dt < horizon_T, got dt={self.dt}, horizon_T={self.horizon_T}")
        if self.sparsity_K0 < 1 or self.init_radius_rho <= 0:
            raise ConfigurationError("sparsity_K0 must be >= 1 and init_radius_rho positive")

    @property
    def n_steps(self):
        return int(round(self.horizon_T / self.dt))

    @classmethod
    def from_config(cls, config, **overrides):
        """
        Build a flow config from the `semiparametric` section.

        Args:
            config (dict): Application configuration
            **overrides: Explicit field values

        Returns:
            FlowConfig: The settings
        """
        section = dict(config.get('semiparametric', {}))
        section.update({k: v for k, v in overrides.items() if v is not None})
        names = ('reg_beta', 'freeze_time_Tprime', 'horizon_T', 'dt', 'sparsity_K0', 'init_radius_rho', 'seed')
        return cls(**{name: section[name] for name in names if name in section})


def default_width(n, d):
    """Width ceil(sqrt(n / d^2)), floored at 8."""
    return max(MIN_WIDTH, math.ceil(math.sqrt(n / d ** 2)))


def init_network(d, K, cfg, alpha):
    """
    Draw the initial network.

    The random draws do not depend on alpha, so shifted and unshifted
    networks built from one seed share s, the standard biases, theta_0 and c_0.

    Args:
        d (int): Input dimension
        K (int): Width
        cfg (FlowConfig): Settings (seed, K_0, rho)
        alpha (numpy.ndarray): Input shift

    Returns:
        SharedDirectionNet: Network with tau_0 = tau_tilde - s <theta_0, alpha>
    """
    if cfg.sparsity_K0 > K:
        raise ConfigurationError(f"sparsity_K0={cfg.sparsity_K0} exceeds width {K}")
    alpha = np.asarray(alpha, dtype=float)
    rng = make_rng(cfg.seed)
    signs = 2.0 * rng.integers(0, 2, size=K) - 1.0
    standard_biases = rng.standard_normal(K)
    theta = random_unit_vector(d, rng)
    support = rng.choice(K, size=cfg.sparsity_K0, replace=False)
    c = np.zeros(K)
    c[support] = cfg.init_radius_rho * random_unit_vector(cfg.sparsity_K0, rng)
    tau = standard_biases - signs * (theta @ alpha)
    logger.debug(f"initialized network K={K}, d={d}, K0={cfg.sparsity_K0}, rho={cfg.init_radius_rho}")
    return SharedDirectionNet(K, c, tau, signs, theta)


def _features(net, inputs):
    pre = np.outer(inputs @ net.direction_theta, net.signs_s) + net.biases_tau[None, :]
    return pre, np.maximum(pre, 0.0) / math.sqrt(net.width_K)


def predict(net, inputs):
    """
    Network output on raw inputs.

    Args:
        net (SharedDirectionNet): Network
        inputs (numpy.ndarray): n x d inputs

    Returns:
        numpy.ndarray: n outputs
    """
    _, phi = _features(net, np.atleast_2d(inputs))
    return phi @ net.second_layer_c


def empirical_loss(net, inputs, labels, beta):
    residual = predict(net, inputs) - labels
    return float(np.mean(residual ** 2) + beta * np.linalg.norm(net.second_layer_c))


def loss_gradients(net, inputs, labels, alpha, beta):
    """
    Loss and gradients of (1/n) sum (N(x) - y)^2 + beta ||c||.

    The theta gradient is the ambient derivative along the coupled path
    tau(theta) = tau - s <theta - theta_now, alpha>, so it sees the centered
    inputs x - alpha. ReLU'(0) is taken as 0.

    Args:
        net (SharedDirectionNet): Network
        inputs (numpy.ndarray): n x d raw inputs
        labels (numpy.ndarray): n labels
        alpha (numpy.ndarray): Input shift
        beta (float): Regularization weight

    Returns:
        tuple: (loss, grad_c, grad_theta)
    """
    inputs = np.atleast_2d(inputs)
    n = inputs.shape[0]
    pre, phi = _features(net, inputs)
    c = net.second_layer_c
    residual = phi @ c - labels

    norm_c = np.linalg.norm(c)
    loss = float(np.mean(residual ** 2) + beta * norm_c)
    grad_c = 2.0 / n * (phi.T @ residual)
    if norm_c > 0:
        grad_c = grad_c + beta * c / norm_c

    active = (pre > 0).astype(float)
    unit_weight = c * net.signs_s / math.sqrt(net.width_K)
    slope = active @ unit_weight
    grad_theta = 2.0 / n * ((residual * slope) @ (inputs - alpha))
    return loss, grad_c, grad_theta


def with_direction(net, theta, alpha):
    """
    Move the network to a new direction, carrying the biases along.

    Args:
        net (SharedDirectionNet): Network
        theta (numpy.ndarray): New unit direction
        alpha (numpy.ndarray): Input shift

    Returns:
        SharedDirectionNet: Network with s <theta, alpha> + tau unchanged
    """
    tau = net.biases_tau + net.signs_s * (net.direction_theta @ alpha) - net.signs_s * (theta @ alpha)
    return replace(net, direction_theta=theta, biases_tau=tau)


def flow_step(net, batch, cfg, t, alpha):
    """
    One explicit-Euler step of the coupled gradient flow.

    Args:
        net (SharedDirectionNet): Current network
        batch (tuple): (inputs, labels) drawn from N(alpha, I_d)
        cfg (FlowConfig): Settings
        t (float): Current time; c moves only once t >= T'
        alpha (numpy.ndarray): Input shift

    Returns:
        SharedDirectionNet: Updated network
    """
    inputs, labels = batch
    _, grad_c, grad_theta = loss_gradients(net, inputs, labels, alpha, cfg.reg_beta)
    theta = net.direction_theta
    spherical = grad_theta - (grad_theta @ theta) * theta
    new_theta = theta - cfg.dt * spherical
    new_theta /= np.linalg.norm(new_theta)

    moved = with_direction(net, new_theta, alpha)
    if t >= cfg.freeze_time_Tprime:
        moved = replace(moved, second_layer_c=net.second_layer_c - cfg.dt * grad_c)
    return moved


def run_algorithm2(inst, K, cfg, n):
    """
    Full-batch coupled gradient flow on n shifted samples.

    Args:
        inst (SingleIndexInstance): Model with its shift
        K (int): Width
        cfg (FlowConfig): Settings
        n (int): Number of samples, drawn once

    Returns:
        tuple: (final direction, trained network, overlap trace of length n_steps + 1)
    """
    alpha = inst.shift_alpha
    _, data_seed = spawn_seeds(cfg.seed, 2)
    batch = sample_batch(inst, n, True, data_seed)
    net = init_network(inst.dimension_d, K, cfg, alpha)

    trace = [float(net.direction_theta @ inst.signal_wstar)]
    for step in range(cfg.n_steps):
        net = flow_step(net, batch, cfg, step * cfg.dt, alpha)
        trace.append(float(net.direction_theta @ inst.signal_wstar))

    logger.info(f"semiparametric run seed={cfg.seed} d={inst.dimension_d} n={n} K={K}: final m={trace[-1]:.3f}")
    return net.direction_theta.copy(), net, np.array(trace)


def unshifted_control(inst):
    """The unshifted instance whose link is f shifted by mu*."""
    d = inst.dimension_d
    return SingleIndexInstance(d, inst.signal_wstar, np.zeros(d), inst.link.shifted(inst.mu_star), inst.noise_sigma)


def fit_output_weights(net, inputs, labels):
    """
    Least-squares second layer for the current direction and biases.

    Args:
        net (SharedDirectionNet): Network
        inputs (numpy.ndarray): n x d raw inputs
        labels (numpy.ndarray): n labels

    Returns:
        SharedDirectionNet: Network with refitted c
    """
    _, phi = _features(net, np.atleast_2d(inputs))
    c, *_ = np.linalg.lstsq(phi, labels, rcond=None)
    return replace(net, second_layer_c=c)


def holdout_mse(net, inst, n, seed):
    """Mean squared error against noise-free targets on fresh shifted inputs."""
    inputs, _ = sample_batch(inst, n, True, seed)
    return float(np.mean((predict(net, inputs) - inst.link(inputs @ inst.signal_wstar)) ** 2))


def stability_check(inst, K, cfg, n):
    """
    Compare a run against the same run with the step halved.

    Args:
        inst (SingleIndexInstance): Model
        K (int): Width
        cfg (FlowConfig): Settings
        n (int): Number of samples

    Returns:
        dict: Final overlaps at dt and dt/2 and their gap
    """
    _, _, coarse = run_algorithm2(inst, K, cfg, n)
    _, _, fine = run_algorithm2(inst, K, replace(cfg, dt=cfg.dt / 2), n)
    gap = abs(coarse[-1] - fine[-1])
    if gap > 0.05:
        logger.warning(f"dt={cfg.dt} looks unstable: overlap gap {gap:.3f} against dt/2")
    return {'dt': cfg.dt, 'overlap_dt': float(coarse[-1]), 'overlap_half_dt': float(fine[-1]), 'gap': float(gap)}
