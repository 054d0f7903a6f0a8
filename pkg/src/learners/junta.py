"""
Two-layer ReLU learners for Boolean juntas under shifted product measures.

The layerwise pipeline takes one covariance-loss step on the first layer from
the zero-weight initialization, resamples the biases, then trains the second
layer by clipped SGD. Joint mini-batch SGD on the squared loss is provided for
the epochs-to-threshold experiments.
"""
import math
import logging
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np
import pandas as pd
from scipy.linalg import solve_triangular

from ..boolean.fourier import (
    BooleanJunta, sample_shifted, sign_patterns, pattern_weights, first_order_shifted_closed_form,
)
from ..utils.errors import ConfigurationError, DegenerateShiftError, InsufficientWidthError, PreconditionError
from ..utils.helpers import make_rng, spawn_seeds

logger = logging.getLogger(__name__)

LOSSES = ('squared', 'covariance')
CENTERINGS = ('batch', 'population')
AVERAGINGS = ('uniform', 'suffix')
SEPARATION_TOLERANCE = 1e-12

# Rows per chunk when accumulating large first-layer batches
_BATCH_CHUNK = 65536


@dataclass
class TwoLayerNet:
    """N(x) = sum_i a_i relu(<w_i, x> + b_i)."""
    width_N: int
    first_layer_W: np.ndarray
    second_layer_a: np.ndarray
    biases_b: np.ndarray

    def __post_init__(self):
        self.first_layer_W = np.asarray(self.first_layer_W, dtype=float)
        self.second_layer_a = np.asarray(self.second_layer_a, dtype=float)
        self.biases_b = np.asarray(self.biases_b, dtype=float)
        if self.first_layer_W.ndim != 2 or self.first_layer_W.shape[0] != self.width_N:
            raise PreconditionError(f"first_layer_W must have {self.width_N} rows")
        if self.second_layer_a.shape != (self.width_N,) or self.biases_b.shape != (self.width_N,):
            raise PreconditionError(f"second_layer_a and biases_b must have length {self.width_N}")
        for name in ('first_layer_W', 'second_layer_a', 'biases_b'):
            if not np.all(np.isfinite(getattr(self, name))):
                raise PreconditionError(f"{name} has non-finite entries")

    @property
    def d(self):
        return self.first_layer_W.shape[1]

    def preactivations(self, inputs):
        return np.atleast_2d(inputs) @ self.first_layer_W.T + self.biases_b

    def hidden(self, inputs):
        return np.maximum(self.preactivations(inputs), 0.0)

    def forward(self, inputs):
        return self.hidden(inputs) @ self.second_layer_a

    __call__ = forward


@dataclass
class LayerwiseConfig:
    """
    Settings of the layerwise pipeline.

    Missing grad_bound_A defaults to 10 kappa R sqrt(N); missing ball_radius_B2
    to 1 / (target_epsilon eta^(k+1)); missing second_rate_xi to B2 / (A sqrt(T)).
    """
    batch_B: int = 20000
    first_rate_gamma: float = 4.0
    second_rate_xi: Optional[float] = None
    init_kappa: float = 1.0
    bias_range_L: float = 5.0
    second_steps_T: int = 5000
    grad_bound_A: Optional[float] = None
    ball_radius_B2: Optional[float] = None
    seed: int = 0
    second_batch: int = 64
    averaging: str = 'uniform'
    centering: str = 'batch'
    target_epsilon: float = 0.1

    def __post_init__(self):
        if self.bias_range_L < self.init_kappa:
            raise ConfigurationError(f"bias_range_L={self.bias_range_L} must be >= init_kappa={self.init_kappa}")
        for name in ('first_rate_gamma', 'init_kappa', 'bias_range_L', 'target_epsilon'):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        for name in ('second_rate_xi', 'grad_bound_A', 'ball_radius_B2'):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ConfigurationError(f"{name} must be positive, got {value}")
        if self.batch_B < 1 or self.second_steps_T < 1 or self.second_batch < 1:
            raise ConfigurationError("batch_B, second_steps_T and second_batch must be >= 1")
        if self.averaging not in AVERAGINGS:
            raise ConfigurationError(f"unknown averaging {self.averaging!r}; expected one of {AVERAGINGS}")
        if self.centering not in CENTERINGS:
            raise ConfigurationError(f"unknown centering {self.centering!r}; expected one of {CENTERINGS}")

    @classmethod
    def from_config(cls, config, **overrides):
        section = dict(config.get('junta', {}).get('layerwise', {}))
        section.update({k: v for k, v in overrides.items() if v is not None})
        known = cls.__dataclass_fields__
        unknown = set(section) - set(known) - {'width', 'd', 'eta', 'test_size', 'target', 'loss'}
        if unknown:
            raise ConfigurationError(f"unknown layerwise settings: {sorted(unknown)}")
        return cls(**{k: v for k, v in section.items() if k in known})

    def grad_bound(self, R, N):
        return self.grad_bound_A if self.grad_bound_A is not None else 10.0 * self.init_kappa * R * math.sqrt(N)

    def ball_radius(self, eta, k):
        if self.ball_radius_B2 is not None:
            return self.ball_radius_B2
        return default_ball_radius(self.target_epsilon, eta, k)


def default_ball_radius(epsilon, eta, k):
    """Second-layer radius 1 / (epsilon eta^(k+1)), infinite when eta = 0."""
    if eta <= 0:
        return math.inf
    return 1.0 / (epsilon * eta ** (k + 1))


def init_layerwise(d, N, kappa):
    """Zero first layer with a = b = kappa, so every unit is active and identical."""
    return TwoLayerNet(N, np.zeros((N, d)), np.full(N, float(kappa)), np.full(N, float(kappa)))


def init_joint(d, N, rng):
    """
    Centered uniform first layer with scale 1/sqrt(d) and a zero readout.

    Args:
        d (int): Input dimension
        N (int): Width
        rng (numpy.random.Generator): Generator

    Returns:
        TwoLayerNet: Network whose initial output is identically zero
    """
    scale = 1.0 / math.sqrt(d)
    W = rng.uniform(-scale, scale, size=(N, d))
    b = rng.uniform(-scale, scale, size=N)
    return TwoLayerNet(N, W, np.zeros(N), b)


def covariance_loss(fvals, preds, f_mean, pred_mean):
    """
    Batch covariance loss -mean((f - f_mean)(pred - pred_mean)).

    Args:
        fvals (numpy.ndarray): Target values
        preds (numpy.ndarray): Predictions
        f_mean (float): Target mean
        pred_mean (float): Prediction mean

    Returns:
        float: Loss
    """
    return float(-np.mean((np.asarray(fvals) - f_mean) * (np.asarray(preds) - pred_mean)))


class Gradients(NamedTuple):
    loss: float
    grad_W: np.ndarray
    grad_a: np.ndarray
    grad_b: np.ndarray


def _backprop(net, inputs, weights):
    # weights[n] = dLoss / dN(x_n)
    z = net.preactivations(inputs)
    phi = np.maximum(z, 0.0)
    gate = (z > 0).astype(float) * net.second_layer_a[None, :]
    upstream = weights[:, None] * gate
    return upstream.T @ inputs, phi.T @ weights, upstream.sum(axis=0)


def squared_gradients(net, inputs, fvals):
    """
    Loss mean((N(x) - f)^2) and its gradients.

    Args:
        net (TwoLayerNet): Network
        inputs (numpy.ndarray): n x d inputs
        fvals (numpy.ndarray): Targets

    Returns:
        Gradients: Loss and gradients for W, a, b (ReLU'(0) = 0)
    """
    inputs = np.atleast_2d(inputs)
    residual = net.forward(inputs) - fvals
    n = inputs.shape[0]
    grad_W, grad_a, grad_b = _backprop(net, inputs, 2.0 / n * residual)
    return Gradients(float(np.mean(residual ** 2)), grad_W, grad_a, grad_b)


def covariance_gradients(net, inputs, fvals, f_mean=None, pred_mean=None):
    """
    Covariance loss and its gradients, the means held fixed.

    With batch means (the default) the gradient equals the derivative of the
    batch-centered loss because the centered targets sum to zero.

    Args:
        net (TwoLayerNet): Network
        inputs (numpy.ndarray): n x d inputs
        fvals (numpy.ndarray): Targets
        f_mean (float, optional): Target mean, batch mean when omitted
        pred_mean (float, optional): Prediction mean, batch mean when omitted

    Returns:
        Gradients: Loss and gradients for W, a, b
    """
    inputs = np.atleast_2d(inputs)
    fvals = np.asarray(fvals, dtype=float)
    preds = net.forward(inputs)
    f_mean = float(np.mean(fvals)) if f_mean is None else f_mean
    pred_mean = float(np.mean(preds)) if pred_mean is None else pred_mean
    n = inputs.shape[0]
    grad_W, grad_a, grad_b = _backprop(net, inputs, -(fvals - f_mean) / n)
    return Gradients(covariance_loss(fvals, preds, f_mean, pred_mean), grad_W, grad_a, grad_b)


def first_layer_population_gradient(f, shift, j, kappa):
    """
    Population first-layer descent direction kappa f_hat_mu({j}) sqrt(1 - mu_j^2) at initialization.

    Args:
        f (BooleanJunta): Target
        shift (ProductShift): Shift
        j (int): Coordinate
        kappa (float): Initialization scale

    Returns:
        float: alpha_j, zero off the support
    """
    closed = first_order_shifted_closed_form(f, j, shift)
    if closed.structural_zero:
        return 0.0
    return kappa * closed.value * math.sqrt(1.0 - shift.mu[j] ** 2)


def population_alphas(f, shift, kappa):
    return np.array([first_layer_population_gradient(f, shift, j, kappa) for j in f.support_T])


def _check_prescribed_init(net, kappa):
    if (np.any(net.first_layer_W != 0.0) or np.any(net.second_layer_a != kappa)
            or np.any(net.biases_b != kappa)):
        raise PreconditionError("first_layer_step needs the initialization W = 0, a = b = kappa")


def first_layer_covariance(f, shift, B, seed, centering='batch'):
    """
    Empirical covariance of f(x) with each coordinate x_j on a batch of size B.

    Args:
        f (BooleanJunta): Target
        shift (ProductShift): Shift
        B (int): Batch size, accumulated in chunks
        seed (int): Seed
        centering (str): `batch` for batch means, `population` for exact E f

    Returns:
        numpy.ndarray: d-vector (1/B) sum (f(x) - f_mean) x_j
    """
    n_chunks = math.ceil(B / _BATCH_CHUNK)
    total_f, weighted, column_sums = 0.0, np.zeros(shift.d), np.zeros(shift.d)
    remaining = B
    for chunk_seed in spawn_seeds(seed, n_chunks):
        size = min(_BATCH_CHUNK, remaining)
        remaining -= size
        x = sample_shifted(shift, size, chunk_seed)
        fx = f(x)
        total_f += float(fx.sum())
        weighted += fx @ x
        column_sums += x.sum(axis=0)
    if centering == 'population':
        f_mean = float(np.sum(pattern_weights(shift.mu[list(f.support_T)]) * f.truth_table))
    else:
        f_mean = total_f / B
    return (weighted - f_mean * column_sums) / B


def first_layer_step(net, f, shift, cfg, seeds=None):
    """
    One covariance-loss SGD step on W from the prescribed initialization, then
    bias resampling b_i ~ Unif[-L, L].

    At the initialization every unit is active with a_i = kappa, so the
    gradient row is -kappa cov(f, x) for every unit.

    Args:
        net (TwoLayerNet): Network at W = 0, a = b = kappa
        f (BooleanJunta): Target
        shift (ProductShift): Shift
        cfg (LayerwiseConfig): Settings
        seeds (tuple, optional): (batch seed, bias seed), derived from cfg.seed when omitted

    Returns:
        TwoLayerNet: Network with w_i = gamma kappa cov(f, x) and fresh biases
    """
    kappa = cfg.init_kappa
    _check_prescribed_init(net, kappa)
    batch_seed, bias_seed = seeds if seeds is not None else spawn_seeds(cfg.seed, 2)
    covariance = first_layer_covariance(f, shift, cfg.batch_B, batch_seed, cfg.centering)
    gradient_row = -kappa * covariance
    W = np.tile(-cfg.first_rate_gamma * gradient_row, (net.width_N, 1))
    b = make_rng(bias_seed).uniform(-cfg.bias_range_L, cfg.bias_range_L, size=net.width_N)
    logger.debug(f"first layer step: B={cfg.batch_B}, gamma={cfg.first_rate_gamma}, "
                 f"support weights={W[0, list(f.support_T)]}")
    return replace(net, first_layer_W=W, biases_b=b)


class ClippedSGDResult(NamedTuple):
    average: np.ndarray
    last: np.ndarray
    losses: np.ndarray


def clipped_sgd(sample_gradient, dim, radius, grad_bound, steps, rate=None, averaging='uniform'):
    """
    Projected SGD with gradient-norm clipping, started at zero.

    Args:
        sample_gradient (callable): (a, step) -> (loss, stochastic gradient)
        dim (int): Parameter dimension
        radius (float): Projection radius of the parameter ball
        grad_bound (float): Clipping threshold A
        steps (int): Number of steps T
        rate (float, optional): Step size, radius / (A sqrt(T)) when omitted
        averaging (str): `uniform` over all iterates, `suffix` over the second half

    Returns:
        ClippedSGDResult: Average iterate, last iterate and per-step losses
    """
    if averaging not in AVERAGINGS:
        raise ConfigurationError(f"unknown averaging {averaging!r}")
    if rate is None:
        if not math.isfinite(radius):
            raise ConfigurationError("an unbounded ball needs an explicit rate")
        rate = radius / (grad_bound * math.sqrt(steps))
    start = steps // 2 if averaging == 'suffix' else 0

    a = np.zeros(dim)
    total = np.zeros(dim)
    losses = np.empty(steps)
    for step in range(steps):
        if step >= start:
            total += a
        loss, gradient = sample_gradient(a, step)
        losses[step] = loss
        norm = np.linalg.norm(gradient)
        if norm > grad_bound:
            gradient = gradient * (grad_bound / norm)
        a = a - rate * gradient
        size = np.linalg.norm(a)
        if size > radius:
            a *= radius / size
    return ClippedSGDResult(total / (steps - start), a, losses)


class SecondLayerFit(NamedTuple):
    net: TwoLayerNet
    loss_trace: np.ndarray
    last_net: TwoLayerNet


def second_layer_train(net, f, shift, cfg, loss='squared', seed=None):
    """
    Train the second layer by clipped SGD with the first layer frozen.

    Args:
        net (TwoLayerNet): Network after the first-layer step
        f (BooleanJunta): Target
        shift (ProductShift): Shift
        cfg (LayerwiseConfig): Settings
        loss (str): `squared` or `covariance`
        seed (int, optional): Seed of the online batches

    Returns:
        SecondLayerFit: Average-iterate network, loss trace and last-iterate network
    """
    if loss not in LOSSES:
        raise ConfigurationError(f"unknown loss {loss!r}; expected one of {LOSSES}")
    seed = spawn_seeds(cfg.seed, 3)[2] if seed is None else seed
    rng = make_rng(seed)
    eta = float(np.max(np.abs(shift.mu))) if shift.d else 0.0
    radius = cfg.ball_radius(eta, f.k)
    A = cfg.grad_bound(f.bound_R, net.width_N)
    batch = cfg.second_batch

    def sample_gradient(a, step):
        uniforms = rng.random((batch, shift.d))
        x = np.where(uniforms < (shift.mu + 1.0) / 2.0, 1.0, -1.0)
        phi = net.hidden(x)
        fx = f(x)
        preds = phi @ a
        if loss == 'squared':
            residual = preds - fx
            return float(np.mean(residual ** 2)), 2.0 / batch * (phi.T @ residual)
        centered = fx - fx.mean()
        value = covariance_loss(fx, preds, fx.mean(), preds.mean())
        return value, -(phi - phi.mean(axis=0)).T @ centered / batch

    result = clipped_sgd(sample_gradient, net.width_N, radius, A, cfg.second_steps_T,
                         rate=cfg.second_rate_xi, averaging=cfg.averaging)
    logger.debug(f"second layer: T={cfg.second_steps_T}, radius={radius:.4g}, A={A:.4g}, "
                 f"final batch loss={result.losses[-1]:.4g}")
    return SecondLayerFit(replace(net, second_layer_a=result.average), result.losses,
                          replace(net, second_layer_a=result.last))


@dataclass
class ExactRepresentation:
    """Pool indices and weights that reproduce a junta on every support pattern."""
    indices: np.ndarray
    a_star: np.ndarray
    patterns: np.ndarray
    v_values: np.ndarray
    max_weight: float


def separation_margin(alphas):
    """
    Smallest gap min_{s != t} |sum_j alpha_j (s_j - t_j)|.

    Args:
        alphas (numpy.ndarray): k-vector

    Returns:
        float: The margin
    """
    alphas = np.asarray(alphas, dtype=float)
    values = np.sort(sign_patterns(alphas.size) @ alphas)
    return float(np.min(np.diff(values))) if values.size > 1 else math.inf


def represent_exact(f, alphas, gamma, biases, bias_range_L):
    """
    Exact second-layer weights on units relu(v - b) with v = gamma <alpha, s>.

    The pool entries are kink locations b. For the sorted projection values
    v_1 < ... < v_m and v_0 = -L, the pool entry nearest the midpoint of each
    gap (v_{l-1}, v_l) is selected, and the lower-triangular system
    M a = F with M[n, l] = relu(v_n - b_l) is solved.

    Args:
        f (BooleanJunta): Target
        alphas (numpy.ndarray): k-vector of first-layer directions on the support
        gamma (float): First-layer rate
        biases (numpy.ndarray): Pool of kink locations
        bias_range_L (float): Lower end v_0 = -L

    Returns:
        ExactRepresentation: Selected pool indices (one per gap) and weights
    """
    alphas = np.asarray(alphas, dtype=float)
    biases = np.asarray(biases, dtype=float)
    patterns = sign_patterns(f.k)
    values = gamma * (patterns @ alphas)
    order = np.argsort(values, kind='stable')
    v_sorted = values[order]
    if np.any(np.diff(v_sorted) <= SEPARATION_TOLERANCE):
        raise DegenerateShiftError("projection values of two sign patterns coincide")

    edges = np.concatenate([[-bias_range_L], v_sorted])
    indices = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        inside = np.flatnonzero((biases > lo) & (biases < hi))
        if inside.size == 0:
            raise InsufficientWidthError(f"no unit kink in the gap ({lo:.6g}, {hi:.6g})")
        midpoint = (lo + hi) / 2.0
        indices.append(int(inside[np.argmin(np.abs(biases[inside] - midpoint))]))
    indices = np.array(indices)

    M = np.maximum(v_sorted[:, None] - biases[indices][None, :], 0.0)
    a_star = solve_triangular(M, f.truth_table[order], lower=True)
    max_weight = float(np.max(np.abs(a_star)))
    logger.debug(f"exact representation with {len(indices)} units, max |a*| = {max_weight:.4g}")
    return ExactRepresentation(indices, a_star, patterns[order], v_sorted, max_weight)


def test_error(net, f, shift, n, seed):
    """Mean squared error of the network on n fresh shifted samples."""
    x = sample_shifted(shift, n, seed)
    return float(np.mean((net.forward(x) - f(x)) ** 2))


class LayerwiseRun(NamedTuple):
    net: TwoLayerNet
    last_net: TwoLayerNet
    alphas: np.ndarray
    separation: float
    test_mse: float
    test_mse_last: float
    loss_trace: np.ndarray


def run_layerwise(f, shift, cfg, N, test_size=10000, loss='squared'):
    """
    The full layerwise pipeline from initialization to a trained second layer.

    Args:
        f (BooleanJunta): Target
        shift (ProductShift): Shift
        cfg (LayerwiseConfig): Settings
        N (int): Width
        test_size (int): Fresh samples for the test error
        loss (str): Second-phase loss

    Returns:
        LayerwiseRun: Networks, population alphas, separation margin and test errors
    """
    batch_seed, bias_seed, second_seed, test_seed = spawn_seeds(cfg.seed, 4)
    net = init_layerwise(shift.d, N, cfg.init_kappa)
    net = first_layer_step(net, f, shift, cfg, seeds=(batch_seed, bias_seed))
    fit = second_layer_train(net, f, shift, cfg, loss=loss, seed=second_seed)
    alphas = population_alphas(f, shift, cfg.init_kappa)
    run = LayerwiseRun(
        net=fit.net,
        last_net=fit.last_net,
        alphas=alphas,
        separation=separation_margin(alphas),
        test_mse=test_error(fit.net, f, shift, test_size, test_seed),
        test_mse_last=test_error(fit.last_net, f, shift, test_size, test_seed),
        loss_trace=fit.loss_trace,
    )
    logger.info(f"layerwise run seed={cfg.seed} N={N} d={shift.d}: test MSE {run.test_mse:.4g} "
                f"(last iterate {run.test_mse_last:.4g}), separation {run.separation:.3g}")
    return run


def joint_sgd_train(net, f, shift, batch, rate, epochs, seed, batches_per_epoch=100, test_size=10000,
                    stop_below=None):
    """
    Online mini-batch SGD on the squared loss with every weight and bias trained.

    Args:
        net (TwoLayerNet): Starting network
        f (BooleanJunta): Target
        shift (ProductShift): Shift
        batch (int): Mini-batch size
        rate (float): Step size
        epochs (int): Maximum number of epochs
        seed (int): Seed
        batches_per_epoch (int): Fresh mini-batches per epoch
        test_size (int): Fresh test samples drawn after every epoch
        stop_below (float, optional): Stop once the test error falls below this value

    Returns:
        tuple: (trained TwoLayerNet, DataFrame with columns epoch, test_error).
        A run whose weights stop being finite ends with a test error of inf
        and returns the last finite network.
    """
    if batch < 1 or epochs < 1 or rate <= 0:
        raise ConfigurationError("batch and epochs must be >= 1 and rate positive")
    current = TwoLayerNet(net.width_N, net.first_layer_W.copy(), net.second_layer_a.copy(), net.biases_b.copy())
    rows = []
    for epoch, epoch_seed in enumerate(spawn_seeds(seed, epochs), start=1):
        train_seed, test_seed = spawn_seeds(epoch_seed, 2)
        x_all = sample_shifted(shift, batch * batches_per_epoch, train_seed)
        f_all = f(x_all)
        diverged = False
        with np.errstate(over='ignore', invalid='ignore'):
            for start in range(0, x_all.shape[0], batch):
                grads = squared_gradients(current, x_all[start:start + batch], f_all[start:start + batch])
                W = current.first_layer_W - rate * grads.grad_W
                a = current.second_layer_a - rate * grads.grad_a
                b = current.biases_b - rate * grads.grad_b
                if not (np.all(np.isfinite(W)) and np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
                    diverged = True
                    break
                current = TwoLayerNet(current.width_N, W, a, b)
            error = math.inf if diverged else test_error(current, f, shift, test_size, test_seed)
        rows.append({'epoch': epoch, 'test_error': error})
        if diverged:
            logger.warning(f"joint SGD diverged in epoch {epoch} at rate {rate}")
            break
        logger.debug(f"joint SGD epoch {epoch}: test error {error:.4g}")
        if stop_below is not None and error < stop_below:
            break
    return current, pd.DataFrame(rows, columns=['epoch', 'test_error'])


def figure1_target(d):
    """f(x) = x_1 + x_1 x_2 x_3 + x_1 ... x_6 on coordinates 0..5."""
    return BooleanJunta.from_function(d, range(6), lambda s: s[0] + s[0] * s[1] * s[2] + float(np.prod(s)))
